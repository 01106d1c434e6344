//! Cross-entropy losses. Both are averaged over the `n` output units.

use crate::nn::{sigmoid, Scalar};

use super::TrainError;

const CLAMP: f64 = 1e-12;

/// Diagnostic binary cross-entropy on probabilities (clamped to
/// `[1e-12, 1 − 1e-12]` before the logarithms). The gradient returned is
/// the fused one with respect to the pre-sigmoid output: `(ŷ − y)/n`.
pub fn bce_loss<T: Scalar>(y: &[T], y_hat: &[T]) -> Result<(f64, Vec<T>), TrainError> {
    check(y.len(), y_hat.len())?;
    let n = y.len() as f64;
    let mut loss = 0.0;
    for (&t, &p) in y.iter().zip(y_hat) {
        let (t, p) = (t.as_f64(), p.as_f64().clamp(CLAMP, 1.0 - CLAMP));
        loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    let inv_n = T::from_f64(1.0 / n);
    let grad = y.iter().zip(y_hat).map(|(&t, &p)| (p - t) * inv_n).collect();
    Ok((loss / n, grad))
}

/// Sigmoid + binary cross-entropy fused on the logits `o`. The loss uses
/// `max(o,0) − o·y + ln(1 + e^{−|o|})`, which needs no clamping; the
/// gradient is `(σ(o) − y)/n`.
pub fn bce_with_logits<T: Scalar>(y: &[T], logits: &[T]) -> Result<(f64, Vec<T>), TrainError> {
    check(y.len(), logits.len())?;
    let n = y.len() as f64;
    let mut loss = 0.0;
    let inv_n = T::from_f64(1.0 / n);
    let mut grad = Vec::with_capacity(y.len());
    for (&t, &o) in y.iter().zip(logits) {
        let (tf, of) = (t.as_f64(), o.as_f64());
        loss += of.max(0.0) - of * tf + (-of.abs()).exp().ln_1p();
        grad.push((sigmoid(o) - t) * inv_n);
    }
    Ok((loss / n, grad))
}

/// Softmax followed by the averaged binary cross-entropy against the
/// one-hot vector of `class_index`. Returns the loss and its gradient with
/// respect to the logits.
pub fn softmax_xent_loss<T: Scalar>(class_index: usize, logits: &[T]) -> Result<(f64, Vec<T>), TrainError> {
    let n = logits.len();
    if class_index >= n {
        return Err(TrainError::ClassOutOfRange { class_index, classes: n });
    }
    let o: Vec<f64> = logits.iter().map(|v| v.as_f64()).collect();
    let max = o.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = o.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    let p: Vec<f64> = e.iter().map(|&v| v / z).collect();
    // Mass outside unit i, `Σ_{j≠i} e_j`, summed directly where p_i is large
    // so that 1 − p_i does not cancel.
    let rest = |i: usize| -> f64 {
        if p[i] < 0.5 {
            z - e[i]
        } else {
            e.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum()
        }
    };
    let ln_z = z.ln();
    let nf = n as f64;
    let mut loss = 0.0;
    // s = Σ_i p_i · ∂l/∂p_i
    let mut weighted = vec![0.0; n];
    for i in 0..n {
        if i == class_index {
            loss -= o[i] - max - ln_z;
            weighted[i] = -1.0 / nf;
        } else {
            let r = rest(i);
            loss -= r.ln() - ln_z;
            let one_minus = (r / z).max(f64::MIN_POSITIVE);
            weighted[i] = p[i] / (nf * one_minus);
        }
    }
    let s: f64 = weighted.iter().sum();
    let grad = (0..n).map(|k| T::from_f64(weighted[k] - p[k] * s)).collect();
    Ok((loss / nf, grad))
}

fn check(expected: usize, actual: usize) -> Result<(), TrainError> {
    if expected != actual || expected == 0 {
        return Err(TrainError::LengthMismatch { expected, actual });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{gradient_check, relative_error};
    use crate::nn::softmax_forward;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Unfused reference: sigmoid then the clamped loss.
    fn unfused(y: &[f64], o: &[f64]) -> f64 {
        let p: Vec<f64> = o.iter().map(|&v| sigmoid(v)).collect();
        bce_loss(y, &p).unwrap().0
    }

    /// Eq. (3) applied literally to softmax probabilities.
    fn softmax_reference(class: usize, o: &[f64]) -> f64 {
        let (p, _) = softmax_forward(o);
        let n = o.len() as f64;
        -p.iter()
            .enumerate()
            .map(|(i, &pi)| if i == class { pi.ln() } else { (1.0 - pi).ln() })
            .sum::<f64>()
            / n
    }

    #[test]
    fn bce_values() {
        let (l, _) = bce_loss(&[1.0f64], &[0.5]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let y = [1.0, 0.0, 1.0, 0.0];
        let y_hat = [1.0 - 1e-9, 1e-9, 1.0 - 1e-9, 1e-9];
        assert!(bce_loss(&y, &y_hat).unwrap().0 < 1e-8);
        let (l, g) = bce_with_logits(&[1.0f64], &[0.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(g, vec![-0.5]);
        assert!(matches!(bce_loss(&[1.0f64], &[0.5, 0.5]), Err(TrainError::LengthMismatch { .. })));
    }

    #[test]
    fn fused_gradient_is_closed_form_and_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let o: Vec<f64> = (0..12).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let y: Vec<f64> = (0..12).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let (loss, g) = bce_with_logits(&y, &o).unwrap();
        assert!((loss - unfused(&y, &o)).abs() < 1e-12);
        for i in 0..12 {
            assert!((g[i] - (sigmoid(o[i]) - y[i]) / 12.0).abs() < 1e-15);
        }
        let err = gradient_check(|x| unfused(&y, x), &o, &g, 1e-6);
        assert!(err < 1e-6, "{err}");
        let (_, g2) = bce_loss(&y, &o.iter().map(|&v| sigmoid(v)).collect::<Vec<_>>()).unwrap();
        assert!(max_abs_diff(&g, &g2) < 1e-15);
    }

    #[test]
    fn fused_loss_is_stable_for_large_logits() {
        let (l, g) = bce_with_logits(&[1.0f64, 0.0], &[800.0, -800.0]).unwrap();
        assert!(l.is_finite() && l < 1e-300);
        assert!(g.iter().all(|v| v.is_finite()));
        let (l, _) = bce_with_logits(&[0.0f64], &[800.0]).unwrap();
        assert!((l - 800.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_uniform_value() {
        let expected = 0.25 * (4f64.ln() + 3.0 * (4.0f64 / 3.0).ln());
        let (l, _) = softmax_xent_loss(2, &[0.7f64; 4]).unwrap();
        assert!((l - expected).abs() < 1e-12);
        assert!((expected - 0.562336).abs() < 1e-6);
        assert!(matches!(
            softmax_xent_loss(4, &[0.0f64; 4]),
            Err(TrainError::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn softmax_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for trial in 0..20 {
            let n = rng.gen_range(2..9);
            let o: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let c = trial % n;
            let (l, g) = softmax_xent_loss(c, &o).unwrap();
            assert!(relative_error(l, softmax_reference(c, &o)) < 1e-12);
            let err = gradient_check(|x| softmax_reference(c, x), &o, &g, 1e-6);
            assert!(err < 1e-6, "trial {trial}: {err}");
        }
    }

    #[test]
    fn softmax_loss_is_stable_for_confident_outputs() {
        let (l, g) = softmax_xent_loss(0, &[0.0f64, 60.0, -5.0]).unwrap();
        assert!(l.is_finite() && g.iter().all(|v| v.is_finite()));
        let (l, _) = softmax_xent_loss(1, &[0.0f64, 60.0, -5.0]).unwrap();
        assert!(l < 1e-20);
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}
