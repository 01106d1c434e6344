//! Central finite-difference gradient checking (double precision).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Central differences `(f(x+εeᵢ) − f(x−εeᵢ)) / 2ε` for every coordinate.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Max relative error between `analytic` and the central-difference
/// gradient of `f` at `x`.
pub fn gradient_check(f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], eps: f64) -> f64 {
    max_relative_error(analytic, &numeric_gradient(f, x, eps))
}

/// Layer menu for [`check_layer`].
#[derive(Debug, Clone)]
pub enum CheckedLayer {
    Conv3x3 { out_channels: usize },
    Relu,
    MaxPool2,
    Spp { levels: Vec<usize> },
    FullyConnected { out: usize },
    Sigmoid,
    Softmax,
}

/// Output of one layer as a flat vector, given input and parameters.
fn run(layer: &CheckedLayer, shape: (usize, usize, usize), x: &[f64], w: &[f64], b: &[f64]) -> (Vec<f64>, LayerCache<f64>) {
    let (c, h, wd) = shape;
    let map = || FeatureMap::new(c, h, wd, x.to_vec()).expect("valid check shape");
    match layer {
        CheckedLayer::Conv3x3 { .. } => {
            let (y, cache) = conv3x3_forward(&map(), w, b).expect("conv");
            (y.into_data(), LayerCache::Conv(cache))
        }
        CheckedLayer::Relu => {
            let (y, cache) = relu_forward(&map());
            (y.into_data(), LayerCache::Relu(cache))
        }
        CheckedLayer::MaxPool2 => {
            let (y, cache) = maxpool2_forward(&map()).expect("maxpool");
            (y.into_data(), LayerCache::MaxPool(cache))
        }
        CheckedLayer::Spp { levels } => {
            let (y, cache) = spp_forward(&map(), levels).expect("spp");
            (y, LayerCache::Spp(cache))
        }
        CheckedLayer::FullyConnected { .. } => {
            let (y, cache) = fc_forward(x, w, b).expect("fc");
            (y, LayerCache::Fc(cache))
        }
        CheckedLayer::Sigmoid => {
            let (y, cache) = sigmoid_forward(x);
            (y, LayerCache::Sigmoid(cache))
        }
        CheckedLayer::Softmax => {
            let (y, cache) = softmax_forward(x);
            (y, LayerCache::Softmax(cache))
        }
    }
}

fn kind_of(layer: &CheckedLayer) -> LayerKind {
    match layer {
        CheckedLayer::Conv3x3 { .. } => LayerKind::Conv3x3,
        CheckedLayer::Relu => LayerKind::Relu,
        CheckedLayer::MaxPool2 => LayerKind::MaxPool2,
        CheckedLayer::Spp { .. } => LayerKind::Spp,
        CheckedLayer::FullyConnected { .. } => LayerKind::FullyConnected,
        CheckedLayer::Sigmoid => LayerKind::Sigmoid,
        CheckedLayer::Softmax => LayerKind::Softmax,
    }
}

/// Checks input and parameter gradients of one layer on random data.
///
/// The scalar objective is `Σ rᵢ·yᵢ` for a fixed random projection `r`, so
/// the analytic gradient is the layer's backward pass applied to `r`.
/// Inputs are kept at least `10·eps` away from zero so ReLU kinks are never
/// straddled. Returns the maximum relative error over all checked
/// coordinates.
pub fn check_layer(layer: CheckedLayer, input_shape: (usize, usize, usize), eps: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = input_shape;
    let n_in = c * h * w;
    let margin = 10.0 * eps;
    let x: Vec<f64> = (0..n_in)
        .map(|_| {
            let mag = rng.gen_range(margin.max(0.05)..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let (n_w, n_b) = match layer {
        CheckedLayer::Conv3x3 { out_channels } => (out_channels * c * 9, out_channels),
        CheckedLayer::FullyConnected { out } => (out * n_in, out),
        _ => (0, 0),
    };
    let wts: Vec<f64> = (0..n_w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let bias: Vec<f64> = (0..n_b).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let (y, cache) = run(&layer, input_shape, &x, &wts, &bias);
    let r: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dot = |v: &[f64]| v.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
    let params = if n_w > 0 { Some(wts.as_slice()) } else { None };
    let grads = layer_backward(kind_of(&layer), &r, &cache, params).expect("backward");

    let mut err = gradient_check(|xp| dot(&run(&layer, input_shape, xp, &wts, &bias).0), &x, &grads.input, eps);
    if let Some(gw) = &grads.weights {
        err = err.max(gradient_check(|wp| dot(&run(&layer, input_shape, &x, wp, &bias).0), &wts, gw, eps));
    }
    if let Some(gb) = &grads.biases {
        err = err.max(gradient_check(|bp| dot(&run(&layer, input_shape, &x, &wts, bp).0), &bias, gb, eps));
    }
    err
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1e-10, 0.0), 1e-10 / 1e-8);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn numeric_gradient_of_quadratic() {
        let g = numeric_gradient(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }
}
