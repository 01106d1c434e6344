//! Random affine augmentation and class balancing.
//!
//! A transform is drawn by jittering three reference points given in
//! relative image coordinates: each of the six coordinate values is
//! multiplied by an independent uniform factor, and the affine map taking
//! the reference points to the jittered ones is solved for exactly.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nn::FeatureMap;

/// Reference triangle in relative (x, y) coordinates.
pub const BASE_POINTS: [(f64, f64); 3] = [(0.5, 0.3), (0.3, 0.6), (0.6, 0.6)];
/// Default limits of the per-coordinate scale factor.
pub const DEFAULT_FACTOR_RANGE: (f64, f64) = (0.8, 1.1);

const MAX_ATTEMPTS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("could not draw a non-degenerate transform in {0} attempts")]
    Degenerate(usize),
    #[error("transform is not invertible (det {0:e})")]
    NotInvertible(f64),
    #[error("invalid factor range [{0}, {1}]")]
    InvalidRange(f64, f64),
    #[error("nothing to augment")]
    NoClasses,
    #[error("target {target} is below the {originals} original samples")]
    TargetTooSmall { target: usize, originals: usize },
    #[error("class {class:?} has {originals} originals but a quota of only {quota}")]
    QuotaBelowOriginals {
        class: String,
        originals: usize,
        quota: usize,
    },
}

/// 2×3 matrix mapping source coordinates to destination coordinates:
/// `x' = m[0][0]·x + m[0][1]·y + m[0][2]`, `y' = m[1][0]·x + m[1][1]·y + m[1][2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub m: [[f64; 3]; 2],
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    };

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            m: [[1.0, 0.0, dx], [0.0, 1.0, dy]],
        }
    }

    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let m = &self.m;
        (m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2])
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }

    pub fn inverse(&self) -> Result<Self, AugmentError> {
        let det = self.det();
        if !det.is_finite() || det.abs() <= 1e-9 {
            return Err(AugmentError::NotInvertible(det));
        }
        let [[a, b, c], [d, e, f]] = self.m;
        let (ia, ib, id, ie) = (e / det, -b / det, -d / det, a / det);
        Ok(Self {
            m: [[ia, ib, -(ia * c + ib * f)], [id, ie, -(id * c + ie * f)]],
        })
    }

    /// The same map expressed in pixel coordinates of a `width`×`height`
    /// image, given a map in relative coordinates.
    pub fn to_pixels(&self, width: usize, height: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        let [[a, b, c], [d, e, f]] = self.m;
        Self {
            m: [[a, b * w / h, c * w], [d * h / w, e, f * h]],
        }
    }
}

/// Unique affine map sending `src[i]` to `dst[i]`, or `None` when either
/// triangle is degenerate.
pub fn affine_from_points(src: [(f64, f64); 3], dst: [(f64, f64); 3]) -> Option<AffineTransform> {
    let area = |p: [(f64, f64); 3]| (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (p[1].1 - p[0].1);
    let det = area(src);
    if det.abs() < 1e-12 || area(dst).abs() < 1e-12 {
        return None;
    }
    // Cramer's rule on [x y 1]·[a b c]ᵀ = target, once per output coordinate.
    let solve = |t: [f64; 3]| -> [f64; 3] {
        let rows = src.map(|(x, y)| [x, y, 1.0]);
        let det3 = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det3(rows);
        let mut out = [0.0; 3];
        for (col, o) in out.iter_mut().enumerate() {
            let mut m = rows;
            for r in 0..3 {
                m[r][col] = t[r];
            }
            *o = det3(m) / d;
        }
        out
    };
    let xs = solve([dst[0].0, dst[1].0, dst[2].0]);
    let ys = solve([dst[0].1, dst[1].1, dst[2].1]);
    Some(AffineTransform { m: [xs, ys] })
}

/// Transform whose destination points are the base points with their six
/// coordinate values multiplied by `factors` (x₀, y₀, x₁, y₁, x₂, y₂).
pub fn affine_from_factors(factors: [f64; 6]) -> Option<AffineTransform> {
    let dst = [0, 1, 2].map(|i| (BASE_POINTS[i].0 * factors[2 * i], BASE_POINTS[i].1 * factors[2 * i + 1]));
    affine_from_points(BASE_POINTS, dst)
}

/// Draws a transform with factors uniform on [0.8, 1.1].
pub fn sample_affine<R: Rng + ?Sized>(rng: &mut R) -> Result<AffineTransform, AugmentError> {
    sample_affine_in(rng, DEFAULT_FACTOR_RANGE)
}

/// Draws a transform with factors uniform on `[low, high]`; degenerate
/// draws are retried up to ten times.
pub fn sample_affine_in<R: Rng + ?Sized>(rng: &mut R, (low, high): (f64, f64)) -> Result<AffineTransform, AugmentError> {
    if !(low.is_finite() && high.is_finite() && 0.0 < low && low <= high) {
        return Err(AugmentError::InvalidRange(low, high));
    }
    for _ in 0..MAX_ATTEMPTS {
        let factors: [f64; 6] = std::array::from_fn(|_| if low == high { low } else { rng.gen_range(low..=high) });
        if let Some(t) = affine_from_factors(factors) {
            if t.inverse().is_ok() {
                return Ok(t);
            }
        }
    }
    Err(AugmentError::Degenerate(MAX_ATTEMPTS))
}

/// Warps every channel by `transform` (relative coordinates) using inverse
/// mapping and bilinear interpolation. Reads outside the source are
/// background (0); the canvas size is unchanged.
pub fn warp_image(image: &FeatureMap<f32>, transform: &AffineTransform) -> Result<FeatureMap<f32>, AugmentError> {
    let (c, h, w) = image.shape();
    let inv = transform.to_pixels(w, h).inverse()?;
    let src = image.data();
    let mut out = FeatureMap::zeros(c, h, w);
    let at = |ch: usize, y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            src[(ch * h + y as usize) * w + x as usize] as f64
        }
    };
    for py in 0..h {
        for px in 0..w {
            let (sx, sy) = inv.apply((px as f64, py as f64));
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let mut v = 0.0;
                for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                    for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                        let weight = wx * wy;
                        if weight != 0.0 {
                            v += weight * at(ch, y0 + dy, x0 + dx);
                        }
                    }
                }
                out.set(ch, py, px, v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Ok(out)
}

/// One image of a balanced training set.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub class: String,
    /// Index of the source image within its class.
    pub source: usize,
    pub image: FeatureMap<f32>,
    /// `false` for the unmodified originals.
    pub warped: bool,
}

/// Per-class output counts: `target / classes` each, with the remainder
/// going to the lexicographically first classes.
pub fn class_quotas(classes: usize, target_total: usize) -> Vec<usize> {
    (0..classes)
        .map(|i| target_total / classes + usize::from(i < target_total % classes))
        .collect()
}

/// Builds exactly `target_total` samples with per-class counts differing by
/// at most one. Each class contributes its originals first, then warped
/// copies of uniformly drawn originals. Output sample `i` uses its own
/// random stream derived from `seed`, so the result is independent of
/// evaluation order.
pub fn balance_augment(
    classes: &BTreeMap<String, Vec<FeatureMap<f32>>>,
    target_total: usize,
    factor_range: (f64, f64),
    seed: u64,
) -> Result<Vec<AugmentedSample>, AugmentError> {
    let non_empty: Vec<(&String, &Vec<FeatureMap<f32>>)> = classes.iter().filter(|(_, v)| !v.is_empty()).collect();
    if non_empty.is_empty() {
        return Err(AugmentError::NoClasses);
    }
    let originals: usize = non_empty.iter().map(|(_, v)| v.len()).sum();
    if target_total < originals {
        return Err(AugmentError::TargetTooSmall {
            target: target_total,
            originals,
        });
    }
    let quotas = class_quotas(non_empty.len(), target_total);
    for ((name, images), &quota) in non_empty.iter().zip(&quotas) {
        if images.len() > quota {
            return Err(AugmentError::QuotaBelowOriginals {
                class: (*name).clone(),
                originals: images.len(),
                quota,
            });
        }
    }

    let mut out = Vec::with_capacity(target_total);
    for ((name, images), &quota) in non_empty.iter().zip(&quotas) {
        for (i, img) in images.iter().enumerate() {
            out.push(AugmentedSample {
                class: (*name).clone(),
                source: i,
                image: img.clone(),
                warped: false,
            });
        }
        for _ in images.len()..quota {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(out.len() as u64);
            let source = rng.gen_range(0..images.len());
            let t = sample_affine_in(&mut rng, factor_range)?;
            out.push(AugmentedSample {
                class: (*name).clone(),
                source,
                image: warp_image(&images[source], &t)?,
                warped: true,
            });
        }
    }
    Ok(out)
}
