//! 2×2/stride-2 max pooling and spatial pyramid max pooling.

use super::{check_len, FeatureMap, NnError, Scalar};

/// Index of the winning input cell for every pooled output.
#[derive(Debug, Clone)]
pub struct ArgmaxCache {
    argmax: Vec<usize>,
    input_len: usize,
}

impl ArgmaxCache {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

fn scatter<T: Scalar>(grad_output: &[T], cache: &ArgmaxCache) -> Result<Vec<T>, NnError> {
    check_len(cache.argmax.len(), grad_output.len())?;
    let mut grad = vec![T::zero(); cache.input_len];
    for (&i, &g) in cache.argmax.iter().zip(grad_output) {
        grad[i] += g;
    }
    Ok(grad)
}

/// Trailing odd rows/columns are dropped.
pub fn maxpool2_forward<T: Scalar>(
    input: &FeatureMap<T>,
) -> Result<(FeatureMap<T>, ArgmaxCache), NnError> {
    let (c, h, w) = input.shape();
    if h < 2 || w < 2 {
        return Err(NnError::TooSmall {
            height: h,
            width: w,
            min: 2,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        FeatureMap::new(c, oh, ow, out)?,
        ArgmaxCache {
            argmax,
            input_len: src.len(),
        },
    ))
}

pub fn maxpool2_backward<T: Scalar>(grad_output: &[T], cache: &ArgmaxCache) -> Result<Vec<T>, NnError> {
    scatter(grad_output, cache)
}

/// Length of the pyramid-pooled vector for `channels` feature maps.
pub fn spp_output_len(channels: usize, levels: &[usize]) -> usize {
    channels * levels.iter().map(|l| l * l).sum::<usize>()
}

/// Bin `i` of `levels` bins over `size` cells spans
/// `[floor(i·size/levels), ceil((i+1)·size/levels))`.
fn bin(i: usize, levels: usize, size: usize) -> (usize, usize) {
    (i * size / levels, ((i + 1) * size).div_ceil(levels))
}

/// Output order: level, then bin (row-major), then channel.
pub fn spp_forward<T: Scalar>(
    input: &FeatureMap<T>,
    levels: &[usize],
) -> Result<(Vec<T>, ArgmaxCache), NnError> {
    if levels.is_empty() || levels.contains(&0) {
        return Err(NnError::InvalidLevels);
    }
    let (c, h, w) = input.shape();
    let max_level = *levels.iter().max().expect("non-empty");
    if h < max_level || w < max_level {
        return Err(NnError::TooSmall {
            height: h,
            width: w,
            min: max_level,
        });
    }
    let src = input.data();
    let len = spp_output_len(c, levels);
    let mut out = Vec::with_capacity(len);
    let mut argmax = Vec::with_capacity(len);
    for &level in levels {
        for by in 0..level {
            let (y0, y1) = bin(by, level, h);
            for bx in 0..level {
                let (x0, x1) = bin(bx, level, w);
                for ch in 0..c {
                    let base = ch * h * w;
                    let mut best = base + y0 * w + x0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let idx = base + y * w + x;
                            if src[idx] > src[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((
        out,
        ArgmaxCache {
            argmax,
            input_len: src.len(),
        },
    ))
}

pub fn spp_backward<T: Scalar>(grad_output: &[T], cache: &ArgmaxCache) -> Result<Vec<T>, NnError> {
    scatter(grad_output, cache)
}
