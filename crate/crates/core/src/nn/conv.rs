//! 3×3 convolution, stride 1, one pixel of zero padding.
//!
//! Implemented as im2col followed by a matrix product: the filter bank is
//! an `out_ch × (in_ch·9)` matrix and the column buffer is
//! `(in_ch·9) × (h·w)`.

use super::{check_len, FeatureMap, NnError, Scalar};

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    in_shape: (usize, usize, usize),
    out_channels: usize,
}

fn im2col<T: Scalar>(input: &FeatureMap<T>) -> Vec<T> {
    let (c_in, h, w) = input.shape();
    let src = input.data();
    let mut cols = Vec::with_capacity(c_in * 9 * h * w);
    let zero = std::iter::repeat(T::zero());
    for plane in src.chunks_exact(h * w) {
        for dy in 0..3 {
            for dx in 0..3 {
                // Output pixel (y, x) reads input (y + dy - 1, x + dx - 1).
                let x0 = if dx == 0 { 1.min(w) } else { 0 };
                let x1 = if dx == 2 { w.saturating_sub(1) } else { w };
                for y in 0..h {
                    let sy = (y + dy).wrapping_sub(1);
                    if sy >= h || x0 >= x1 {
                        cols.extend(zero.clone().take(w));
                        continue;
                    }
                    cols.extend(zero.clone().take(x0));
                    cols.extend_from_slice(&plane[sy * w + x0 + dx - 1..sy * w + x1 + dx - 1]);
                    cols.extend(zero.clone().take(w - x1));
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], (c_in, h, w): (usize, usize, usize)) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); c_in * hw];
    for c in 0..c_in {
        let plane = &mut out[c * hw..(c + 1) * hw];
        for dy in 0..3 {
            for dx in 0..3 {
                let row = &cols[((c * 9) + dy * 3 + dx) * hw..][..hw];
                let y0 = if dy == 0 { 1 } else { 0 };
                let y1 = if dy == 2 { h - 1 } else { h };
                let x0 = if dx == 0 { 1 } else { 0 };
                let x1 = if dx == 2 { w.saturating_sub(1) } else { w };
                if x0 >= x1 {
                    continue;
                }
                for y in y0..y1 {
                    let sy = y + dy - 1;
                    let src = &row[y * w + x0..y * w + x1];
                    let dst = &mut plane[sy * w + x0 + dx - 1..sy * w + x1 + dx - 1];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
    out
}

/// `weights` has layout `(out_ch, in_ch, 3, 3)`; `biases` has `out_ch`
/// entries. Spatial size is preserved.
pub fn conv3x3_forward<T: Scalar>(
    input: &FeatureMap<T>,
    weights: &[T],
    biases: &[T],
) -> Result<(FeatureMap<T>, ConvCache<T>), NnError> {
    let (c_in, h, w) = input.shape();
    let c_out = biases.len();
    if c_out == 0 || weights.len() % (9 * c_out) != 0 {
        return Err(NnError::DimensionMismatch {
            expected: 9 * c_out.max(1) * c_in,
            actual: weights.len(),
        });
    }
    let expected_in = weights.len() / (9 * c_out);
    if expected_in != c_in {
        return Err(NnError::ChannelMismatch {
            expected: expected_in,
            actual: c_in,
        });
    }
    let hw = h * w;
    let k = c_in * 9;
    let cols = im2col(input);
    let mut out = Vec::with_capacity(c_out * hw);
    for &b in biases {
        out.extend(std::iter::repeat(b).take(hw));
    }
    T::gemm(
        c_out,
        k,
        hw,
        T::one(),
        weights,
        (k, 1),
        &cols,
        (hw, 1),
        T::one(),
        &mut out,
        (hw, 1),
    );
    let out = FeatureMap::new(c_out, h, w, out)?;
    debug_assert!(out.is_finite(), "conv3x3 produced a non-finite value");
    Ok((
        out,
        ConvCache {
            cols,
            in_shape: (c_in, h, w),
            out_channels: c_out,
        },
    ))
}

/// Returns `(grad_input, grad_weights, grad_biases)`. The input gradient is
/// skipped when `need_input_grad` is false (first layer of a network).
#[allow(clippy::type_complexity)]
pub fn conv3x3_backward<T: Scalar>(
    grad_output: &[T],
    cache: &ConvCache<T>,
    weights: &[T],
    need_input_grad: bool,
) -> Result<(Option<Vec<T>>, Vec<T>, Vec<T>), NnError> {
    let (c_in, h, w) = cache.in_shape;
    let c_out = cache.out_channels;
    let hw = h * w;
    let k = c_in * 9;
    check_len(c_out * hw, grad_output.len())?;
    check_len(c_out * k, weights.len())?;

    let grad_b: Vec<T> = grad_output
        .chunks_exact(hw)
        .map(|plane| plane.iter().copied().sum())
        .collect();

    // dW = dY (c_out × hw) · colsᵀ (hw × k)
    let grad_w = T::gemm_new(c_out, hw, k, T::one(), grad_output, (hw, 1), &cache.cols, (1, hw));

    let grad_in = if need_input_grad {
        // dcols = Wᵀ (k × c_out) · dY (c_out × hw)
        let dcols = T::gemm_new(k, c_out, hw, T::one(), weights, (1, k), grad_output, (hw, 1));
        Some(col2im(&dcols, cache.in_shape))
    } else {
        None
    };
    Ok((grad_in, grad_w, grad_b))
}
