use proptest::prelude::*;

use halp::netspec::toy_network;
use halp::partition::{plan_partition, transfer_sizes_oracle, SplitRatios};
use halp::reliability::{implied_slack, reliability_closed_form, DeadlineSpec, OffloadModel};
use halp::rows::RowRange;

fn range() -> impl Strategy<Value = RowRange> {
    (1usize..40, 0usize..20).prop_map(|(start, len)| {
        if len == 0 {
            RowRange::empty_at(start)
        } else {
            RowRange::new(start, start + len - 1)
        }
    })
}

fn rows_of(r: &RowRange) -> Vec<usize> {
    if r.is_empty() {
        Vec::new()
    } else {
        r.iter().collect()
    }
}

proptest! {
    #[test]
    fn minus_is_set_difference(a in range(), b in range()) {
        let got: Vec<usize> = a.minus(&b).iter().flat_map(rows_of).collect();
        let want: Vec<usize> = rows_of(&a).into_iter().filter(|&r| !b.contains(r)).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn hull_contains_both(a in range(), b in range()) {
        let h = a.hull(&b);
        prop_assert!(h.contains_range(&a) && h.contains_range(&b));
    }

    #[test]
    fn intersect_is_set_intersection(a in range(), b in range()) {
        let got = a.intersect(&b).map(|r| rows_of(&r)).unwrap_or_default();
        let want: Vec<usize> = rows_of(&a).into_iter().filter(|&r| b.contains(r)).collect();
        prop_assert_eq!(got, want);
    }

    /// Any split that rounds to valid bands yields a plan covering every
    /// output row exactly once, with exchanges the oracle can size.
    #[test]
    fn random_splits_plan_cleanly(seed in 0u64..500, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let net = toy_network(seed);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let ratios = SplitRatios::uniform(&net, [lo, hi - lo, 1.0 - hi]).unwrap();
        let plan = plan_partition(&net, &ratios).unwrap();
        plan.verify_coverage(&net).unwrap();
        let transfers = transfer_sizes_oracle(&plan, &net).unwrap();
        prop_assert!(transfers.total_bytes() >= 0);
    }

    #[test]
    fn reliability_grows_with_deadline(
        rate in 1e6f64..1e9,
        bits in 1e5f64..1e7,
        sigma in 0.0f64..0.05,
        t_inf in 0.0f64..0.1,
        d1 in 1e-3f64..0.5,
        extra in 0.0f64..0.5,
    ) {
        let model = OffloadModel::new(rate, bits, sigma).unwrap();
        let p1 = reliability_closed_form(&model, &DeadlineSpec::new(d1, t_inf).unwrap());
        let p2 = reliability_closed_form(&model, &DeadlineSpec::new(d1 + extra, t_inf).unwrap());
        prop_assert!((0.0..=1.0).contains(&p1));
        prop_assert!(p2 >= p1);
    }

    /// The slack recovered from a reliability reproduces that reliability.
    #[test]
    fn implied_slack_round_trips(z in -5e-3f64..5e-3, sigma in 1e-4f64..2e-2) {
        let model = OffloadModel::new(1e8, 1e6, sigma).unwrap();
        let spec = DeadlineSpec::new(model.mean() + 0.02 + z, 0.02).unwrap();
        let p = reliability_closed_form(&model, &spec);
        if let Some(back) = implied_slack(p, sigma) {
            prop_assert!((back - z).abs() < 1e-6, "{} vs {}", back, z);
        }
    }
}
