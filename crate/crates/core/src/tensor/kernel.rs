use super::{ConvWeights, DenseWeights, MissingRowPolicy, Tensor3, TensorError};
use crate::netspec::{output_dim, LayerKind, LayerSpec};
use crate::rows::RowRange;

/// Computes output rows `out_rows` of one spatial layer. `fetch` returns
/// input row `r` (1-based) or `None` if the caller does not hold it; on a
/// missing row the policy decides between zeros and `Err(row)`.
pub(crate) fn layer_rows<'a>(
    layer: &LayerSpec,
    weights: Option<&ConvWeights>,
    (in_h, in_w): (usize, usize),
    out_rows: RowRange,
    fetch: impl Fn(usize) -> Option<&'a [f32]>,
    policy: MissingRowPolicy,
) -> Result<Vec<f32>, usize> {
    let out_w = (in_w + 2 * layer.p - layer.k) / layer.s + 1;
    let c_in = layer.c_in;
    let c_out = layer.c_out;
    let zeros = vec![0.0f32; in_w * c_in];
    let mut out = Vec::with_capacity(out_rows.len() * out_w * c_out);
    let mut acc = vec![0.0f32; c_out];
    let mut window: Vec<Option<&[f32]>> = Vec::with_capacity(layer.k);

    for o in out_rows.iter() {
        window.clear();
        let (lo, _) = layer.window(o);
        for kh in 0..layer.k as i64 {
            let r = lo + kh;
            if r < 1 || r > in_h as i64 {
                window.push(None);
                continue;
            }
            match fetch(r as usize) {
                Some(row) => window.push(Some(row)),
                None if policy == MissingRowPolicy::ZeroFill => window.push(Some(&zeros)),
                None => return Err(r as usize),
            }
        }

        for x in 0..out_w {
            let x0 = (layer.s * x) as i64 - layer.p as i64;
            match layer.kind {
                LayerKind::Conv => {
                    let w = weights.expect("conv layer has weights");
                    acc.fill(0.0);
                    for (kh, row) in window.iter().enumerate() {
                        let Some(row) = row else { continue };
                        for kw in 0..layer.k {
                            let col = x0 + kw as i64;
                            if col < 0 || col >= in_w as i64 {
                                continue;
                            }
                            let pixel = &row[col as usize * c_in..][..c_in];
                            for (ci, &v) in pixel.iter().enumerate() {
                                let taps = &w.kernel[((kh * layer.k + kw) * c_in + ci) * c_out..][..c_out];
                                for (a, &t) in acc.iter_mut().zip(taps) {
                                    *a += v * t;
                                }
                            }
                        }
                    }
                    for (a, &b) in acc.iter().zip(&w.bias) {
                        let v = a + b;
                        out.push(if layer.relu { v.max(0.0) } else { v });
                    }
                }
                LayerKind::Maxpool => {
                    acc.fill(f32::NEG_INFINITY);
                    for row in window.iter().flatten() {
                        for kw in 0..layer.k {
                            let col = x0 + kw as i64;
                            if col < 0 || col >= in_w as i64 {
                                continue;
                            }
                            let pixel = &row[col as usize * c_in..][..c_in];
                            for (a, &v) in acc.iter_mut().zip(pixel) {
                                *a = a.max(v);
                            }
                        }
                    }
                    out.extend(acc.iter().map(|&v| if layer.relu { v.max(0.0) } else { v }));
                }
                LayerKind::Fc => unreachable!("fc layers are not row-partitioned"),
            }
        }
    }
    Ok(out)
}

fn check_input(input: &Tensor3, layer: &LayerSpec) -> Result<(usize, usize), TensorError> {
    let shape = |reason: String| TensorError::Shape { layer: 0, reason };
    if input.channels != layer.c_in {
        return Err(shape(format!("input has {} channels, layer expects {}", input.channels, layer.c_in)));
    }
    let out_h = output_dim(input.height, layer)?;
    let out_w = output_dim(input.width, layer)?;
    Ok((out_h, out_w))
}

fn spatial_forward(input: &Tensor3, layer: &LayerSpec, weights: Option<&ConvWeights>) -> Result<Tensor3, TensorError> {
    let (out_h, out_w) = check_input(input, layer)?;
    let data = layer_rows(
        layer,
        weights,
        (input.height, input.width),
        RowRange::new(1, out_h),
        |r| Some(input.row(r)),
        MissingRowPolicy::Error,
    )
    .expect("a whole tensor holds every row");
    Tensor3::from_vec(out_h, out_w, layer.c_out, data)
}

/// Zero-padded direct convolution, plus bias and the layer's optional ReLU.
pub fn conv_forward(input: &Tensor3, layer: &LayerSpec, weights: &ConvWeights) -> Result<Tensor3, TensorError> {
    if layer.kind != LayerKind::Conv {
        return Err(TensorError::Shape { layer: 0, reason: format!("expected a conv layer, got {}", layer.kind) });
    }
    weights.check(layer, 0)?;
    spatial_forward(input, layer, Some(weights))
}

/// Max-pooling; padding positions never win.
pub fn maxpool_forward(input: &Tensor3, layer: &LayerSpec) -> Result<Tensor3, TensorError> {
    if layer.kind != LayerKind::Maxpool {
        return Err(TensorError::Shape { layer: 0, reason: format!("expected a maxpool layer, got {}", layer.kind) });
    }
    spatial_forward(input, layer, None)
}

/// `y = xW + b` over a flattened input, with the layer's optional ReLU.
pub fn dense_forward(input: &[f32], layer: &LayerSpec, weights: &DenseWeights) -> Result<Vec<f32>, TensorError> {
    weights.check(layer, 0)?;
    if input.len() != layer.c_in {
        return Err(TensorError::Shape {
            layer: 0,
            reason: format!("{} features for a layer taking {}", input.len(), layer.c_in),
        });
    }
    let mut acc = vec![0.0f32; layer.c_out];
    for (i, &v) in input.iter().enumerate() {
        let row = &weights.matrix[i * layer.c_out..][..layer.c_out];
        for (a, &w) in acc.iter_mut().zip(row) {
            *a += v * w;
        }
    }
    Ok(acc
        .iter()
        .zip(&weights.bias)
        .map(|(a, b)| {
            let v = a + b;
            if layer.relu {
                v.max(0.0)
            } else {
                v
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_conv() {
        let layer = LayerSpec::conv(1, 1, 0, 1, 1).without_relu();
        let w = ConvWeights { kernel: vec![-2.5], bias: vec![0.75] };
        let out = conv_forward(&Tensor3::from_vec(1, 1, 1, vec![3.0]).unwrap(), &layer, &w).unwrap();
        assert_eq!(out.data, vec![3.0 * -2.5 + 0.75]);
    }

    #[test]
    fn all_ones_3x3() {
        let layer = LayerSpec::conv(3, 1, 0, 1, 1);
        let w = ConvWeights { kernel: vec![1.0; 9], bias: vec![0.0] };
        let out = conv_forward(&Tensor3::from_vec(3, 3, 1, vec![1.0; 9]).unwrap(), &layer, &w).unwrap();
        assert_eq!((out.height, out.width), (1, 1));
        assert_eq!(out.data, vec![9.0]);
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let layer = LayerSpec::conv(3, 1, 1, 2, 2).without_relu();
        let mut kernel = vec![0.0; 9 * 2 * 2];
        for c in 0..2 {
            kernel[((3 + 1) * 2 + c) * 2 + c] = 1.0; // (kh=1, kw=1, ci=c, oc=c)
        }
        let w = ConvWeights { kernel, bias: vec![0.0; 2] };
        let mut input = Tensor3::random(5, 6, 2, 3);
        input.data.iter_mut().for_each(|v| *v -= 0.5);
        let out = conv_forward(&input, &layer, &w).unwrap();
        assert!(out.bitwise_eq(&input));
    }

    #[test]
    fn output_dims_follow_netspec() {
        for (k, s, p, h) in [(3, 2, 1, 9), (2, 2, 0, 7), (5, 1, 2, 5), (1, 2, 0, 8)] {
            let layer = LayerSpec::conv(k, s, p, 1, 1);
            let w = ConvWeights { kernel: vec![1.0; k * k], bias: vec![0.0] };
            let out = conv_forward(&Tensor3::zeros(h, h, 1), &layer, &w).unwrap();
            assert_eq!(out.height, output_dim(h, &layer).unwrap());
        }
    }

    #[test]
    fn maxpool_ignores_padding() {
        let layer = LayerSpec::maxpool(3, 2, 1, 1);
        let input = Tensor3::from_vec(2, 2, 1, vec![-4.0, -3.0, -2.0, -1.0]).unwrap();
        let out = maxpool_forward(&input, &layer).unwrap();
        assert_eq!(out.data, vec![-1.0]);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let layer = LayerSpec::conv(1, 1, 0, 2, 1);
        let w = ConvWeights { kernel: vec![1.0; 2], bias: vec![0.0] };
        assert!(matches!(conv_forward(&Tensor3::zeros(2, 2, 3), &layer, &w), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn dense_layer() {
        let layer = LayerSpec::fc(2, 2, false);
        let w = DenseWeights { matrix: vec![1.0, 2.0, 3.0, 4.0], bias: vec![0.5, -0.5] };
        assert_eq!(dense_forward(&[1.0, 1.0], &layer, &w).unwrap(), vec![4.5, 5.5]);
    }
}
