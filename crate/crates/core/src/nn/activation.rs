use super::{check_len, FeatureMap, NnError, Scalar};

#[derive(Debug, Clone)]
pub struct ReluCache {
    active: Vec<bool>,
}

pub fn relu_forward<T: Scalar>(input: &FeatureMap<T>) -> (FeatureMap<T>, ReluCache) {
    let (c, h, w) = input.shape();
    let (out, active) = relu_slice(input.data());
    (
        FeatureMap::new(c, h, w, out).expect("shape preserved"),
        ReluCache { active },
    )
}

/// ReLU on a flat vector.
pub fn relu_flat<T: Scalar>(input: &[T]) -> (Vec<T>, ReluCache) {
    let (out, active) = relu_slice(input);
    (out, ReluCache { active })
}

fn relu_slice<T: Scalar>(input: &[T]) -> (Vec<T>, Vec<bool>) {
    let active: Vec<bool> = input.iter().map(|&v| v > T::zero()).collect();
    let out = input
        .iter()
        .zip(&active)
        .map(|(&v, &a)| if a { v } else { T::zero() })
        .collect();
    (out, active)
}

/// Gradient passes where the input was strictly positive; it is zero at 0.
pub fn relu_backward<T: Scalar>(grad_output: &[T], cache: &ReluCache) -> Result<Vec<T>, NnError> {
    check_len(cache.active.len(), grad_output.len())?;
    Ok(grad_output
        .iter()
        .zip(&cache.active)
        .map(|(&g, &a)| if a { g } else { T::zero() })
        .collect())
}

/// Logistic function, evaluated on the side of zero that cannot overflow and
/// kept strictly inside `(0, 1)`.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    let y = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let half_eps = T::epsilon() / (T::one() + T::one());
    y.max(T::min_positive_value()).min(T::one() - half_eps)
}

#[derive(Debug, Clone)]
pub struct SigmoidCache<T> {
    output: Vec<T>,
}

pub fn sigmoid_forward<T: Scalar>(input: &[T]) -> (Vec<T>, SigmoidCache<T>) {
    let output: Vec<T> = input.iter().map(|&x| sigmoid(x)).collect();
    (output.clone(), SigmoidCache { output })
}

pub fn sigmoid_backward<T: Scalar>(grad_output: &[T], cache: &SigmoidCache<T>) -> Result<Vec<T>, NnError> {
    check_len(cache.output.len(), grad_output.len())?;
    Ok(grad_output
        .iter()
        .zip(&cache.output)
        .map(|(&g, &y)| g * y * (T::one() - y))
        .collect())
}

#[derive(Debug, Clone)]
pub struct SoftmaxCache<T> {
    output: Vec<T>,
}

pub fn softmax_forward<T: Scalar>(input: &[T]) -> (Vec<T>, SoftmaxCache<T>) {
    let max = input.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = input.iter().map(|&o| (o - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let output: Vec<T> = exps.into_iter().map(|e| e / total).collect();
    (output.clone(), SoftmaxCache { output })
}

pub fn softmax_backward<T: Scalar>(grad_output: &[T], cache: &SoftmaxCache<T>) -> Result<Vec<T>, NnError> {
    let y = &cache.output;
    check_len(y.len(), grad_output.len())?;
    let dot: T = grad_output.iter().zip(y).map(|(&g, &p)| g * p).sum();
    Ok(grad_output
        .iter()
        .zip(y)
        .map(|(&g, &p)| p * (g - dot))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{self, CheckedLayer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_values() {
        let x = FeatureMap::<f64>::new(1, 1, 3, vec![-3.0, 0.0, 2.0]).unwrap();
        let (y, cache) = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu_backward(&[5.0, 5.0, 5.0], &cache).unwrap(), vec![0.0, 0.0, 5.0]);
        let x = FeatureMap::<f64>::new(1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(relu_forward(&x).0, x);
    }

    #[test]
    fn relu_gradient_away_from_kink() {
        let err = gradcheck::check_layer(CheckedLayer::Relu, (2, 3, 4), 1e-6, 13);
        assert!(err < 1e-6, "relu max relative error {err}");
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let x: f64 = rng.gen_range(-30.0..30.0);
            assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() < 1e-15);
        }
        let tiny = sigmoid(-1000.0f64);
        assert!(tiny.is_finite() && tiny > 0.0 && tiny <= 1e-300);
        let big = sigmoid(1000.0f64);
        assert!(big < 1.0 && big > 0.999);
        assert!(sigmoid(-200.0f32) > 0.0);
    }

    #[test]
    fn sigmoid_gradient() {
        let err = gradcheck::check_layer(CheckedLayer::Sigmoid, (6, 1, 1), 1e-5, 14);
        assert!(err < 1e-6, "sigmoid max relative error {err}");
    }

    #[test]
    fn softmax_values() {
        assert_eq!(softmax_forward(&[0.0f64, 0.0]).0, vec![0.5, 0.5]);
        for c in [-50.0f64, 0.0, 3.0, 700.0] {
            let (y, _) = softmax_forward(&[c, c, c]);
            assert!(y.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let x: Vec<f64> = (0..rng.gen_range(1..20)).map(|_| rng.gen_range(-40.0..40.0)).collect();
            let (y, _) = softmax_forward(&x);
            assert!(y.iter().all(|&v| v >= 0.0));
            assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let err = gradcheck::check_layer(CheckedLayer::Softmax, (5, 1, 1), 1e-5, 15);
        assert!(err < 1e-6, "softmax max relative error {err}");
    }
}
