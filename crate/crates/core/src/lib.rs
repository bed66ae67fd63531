//! Row-band partitioning of CNN inference across a host and two secondary
//! edge servers, with a pipelined schedule model, a bit-exact partitioned
//! forward pass to check plans against, and deadline reliability under
//! fluctuating offload rates.
//!
//! ```
//! use halp::netspec::NetworkSpec;
//! use halp::partition::{plan_partition, SplitRatios};
//!
//! let vgg = NetworkSpec::vgg16();
//! let plan = plan_partition(&vgg, &SplitRatios::balanced(&vgg).unwrap()).unwrap();
//! assert_eq!(plan.layers.len(), 18);
//! ```

pub mod fixtures;
pub mod netspec;
pub mod partition;
pub mod reliability;
pub mod rows;
pub mod scheduler;
pub mod tensor;

// The guide's snippets run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/receptive-fields.md")]
    mod receptive_fields {}
    #[doc = include_str!("../../../book/src/partitioning.md")]
    mod partitioning {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/scheduling.md")]
    mod scheduling {}
    #[doc = include_str!("../../../book/src/reliability.md")]
    mod reliability {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
