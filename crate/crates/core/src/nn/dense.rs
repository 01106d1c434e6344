use rand::Rng;

use super::{check_len, NnError, Scalar};

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
pub struct FcCache<T> {
    input: Vec<T>,
    batch: usize,
    out_len: usize,
}

/// `out = W·x + b` with `W` stored row-major as `(out, in)`.
pub fn fc_forward<T: Scalar>(input: &[T], weights: &[T], biases: &[T]) -> Result<(Vec<T>, FcCache<T>), NnError> {
    fc_forward_batch(input, 1, weights, biases)
}

/// [`fc_forward`] applied to each of the `batch` rows of `input`.
pub fn fc_forward_batch<T: Scalar>(
    input: &[T],
    batch: usize,
    weights: &[T],
    biases: &[T],
) -> Result<(Vec<T>, FcCache<T>), NnError> {
    let n_out = biases.len();
    if batch == 0 || input.len() % batch != 0 {
        return Err(NnError::DimensionMismatch {
            expected: batch.max(1),
            actual: input.len(),
        });
    }
    let n_in = input.len() / batch;
    check_len(n_out * n_in, weights.len())?;
    let mut out = Vec::with_capacity(batch * n_out);
    for _ in 0..batch {
        out.extend_from_slice(biases);
    }
    // Y (batch × out) += X (batch × in) · Wᵀ (in × out)
    T::gemm(batch, n_in, n_out, T::one(), input, (n_in, 1), weights, (1, n_in), T::one(), &mut out, (n_out, 1));
    debug_assert!(out.iter().all(|v| v.is_finite()), "fc produced a non-finite value");
    Ok((
        out,
        FcCache {
            input: input.to_vec(),
            batch,
            out_len: n_out,
        },
    ))
}

/// Returns `(grad_input, grad_weights, grad_biases)`; parameter gradients
/// are summed over the batch rows.
#[allow(clippy::type_complexity)]
pub fn fc_backward<T: Scalar>(
    grad_output: &[T],
    cache: &FcCache<T>,
    weights: &[T],
) -> Result<(Vec<T>, Vec<T>, Vec<T>), NnError> {
    let batch = cache.batch;
    let n_in = cache.input.len() / batch;
    let n_out = cache.out_len;
    check_len(batch * n_out, grad_output.len())?;
    check_len(n_out * n_in, weights.len())?;
    // dW (out × in) = Gᵀ (out × batch) · X (batch × in)
    let grad_w = T::gemm_new(n_out, batch, n_in, T::one(), grad_output, (1, n_out), &cache.input, (n_in, 1));
    // dX (batch × in) = G (batch × out) · W (out × in)
    let grad_in = T::gemm_new(batch, n_out, n_in, T::one(), grad_output, (n_out, 1), weights, (n_in, 1));
    let mut grad_b = vec![T::zero(); n_out];
    for row in grad_output.chunks_exact(n_out) {
        grad_b.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
    }
    Ok((grad_in, grad_w, grad_b))
}

/// Per-element multiplier applied in the forward pass (`0` or `1/(1-p)`).
#[derive(Debug, Clone)]
pub struct DropoutCache<T> {
    scale: Option<Vec<T>>,
    len: usize,
}

/// Inverted dropout: in training each element is zeroed with probability
/// `p` and survivors are scaled by `1/(1-p)`; inference is the identity.
pub fn dropout_forward<T: Scalar, R: Rng + ?Sized>(
    input: &[T],
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<T>, DropoutCache<T>), NnError> {
    dropout_forward_batch(input, p, mode, &mut [rng])
}

/// [`dropout_forward`] on equal-length rows, row `i` drawing from `rngs[i]`.
pub fn dropout_forward_batch<T: Scalar, R: Rng + ?Sized>(
    input: &[T],
    p: f64,
    mode: Mode,
    rngs: &mut [&mut R],
) -> Result<(Vec<T>, DropoutCache<T>), NnError> {
    if !(0.0..1.0).contains(&p) {
        return Err(NnError::InvalidProbability(p));
    }
    if rngs.is_empty() || input.len() % rngs.len() != 0 {
        return Err(NnError::DimensionMismatch {
            expected: rngs.len().max(1),
            actual: input.len(),
        });
    }
    if mode == Mode::Infer || p == 0.0 {
        return Ok((
            input.to_vec(),
            DropoutCache {
                scale: None,
                len: input.len(),
            },
        ));
    }
    let keep = T::from_f64(1.0 / (1.0 - p));
    let row = input.len() / rngs.len();
    let mut scale = Vec::with_capacity(input.len());
    for rng in rngs.iter_mut() {
        scale.extend((0..row).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }));
    }
    let out = input.iter().zip(&scale).map(|(&x, &s)| x * s).collect();
    Ok((
        out,
        DropoutCache {
            scale: Some(scale),
            len: input.len(),
        },
    ))
}

pub fn dropout_backward<T: Scalar>(grad_output: &[T], cache: &DropoutCache<T>) -> Result<Vec<T>, NnError> {
    check_len(cache.len, grad_output.len())?;
    Ok(match &cache.scale {
        None => grad_output.to_vec(),
        Some(scale) => grad_output.iter().zip(scale).map(|(&g, &s)| g * s).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{self, CheckedLayer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_bias_only() {
        let x = [1.5f64, -2.0, 0.25];
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(fc_forward(&x, &eye, &[0.0; 3]).unwrap().0, x.to_vec());
        let w = [0.3; 6];
        assert_eq!(fc_forward(&[0.0; 3], &w, &[4.0, -1.0]).unwrap().0, vec![4.0, -1.0]);
    }

    #[test]
    fn matches_dot_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (y, _) = fc_forward(&x, &w, &b).unwrap();
        for o in 0..3 {
            let mut acc = b[o];
            for i in 0..4 {
                acc += w[o * 4 + i] * x[i];
            }
            assert!((y[o] - acc).abs() < 1e-12);
        }
        assert!(matches!(
            fc_forward(&x[..3], &w, &b),
            Err(NnError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn batched_fc_matches_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (batch, n_in, n_out) = (3, 5, 4);
        let x: Vec<f64> = (0..batch * n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n_in * n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..batch * n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (y, cache) = fc_forward_batch(&x, batch, &w, &b).unwrap();
        let (gi, gw, gb) = fc_backward(&g, &cache, &w).unwrap();
        let mut sw = vec![0.0; w.len()];
        let mut sb = vec![0.0; n_out];
        for r in 0..batch {
            let (yr, cr) = fc_forward(&x[r * n_in..][..n_in], &w, &b).unwrap();
            let (gir, gwr, gbr) = fc_backward(&g[r * n_out..][..n_out], &cr, &w).unwrap();
            for (a, e) in y[r * n_out..][..n_out].iter().zip(&yr).chain(gi[r * n_in..][..n_in].iter().zip(&gir)) {
                assert!((a - e).abs() < 1e-12);
            }
            sw.iter_mut().zip(&gwr).for_each(|(a, v)| *a += v);
            sb.iter_mut().zip(&gbr).for_each(|(a, v)| *a += v);
        }
        for (a, e) in gw.iter().zip(&sw).chain(gb.iter().zip(&sb)) {
            assert!((a - e).abs() < 1e-12);
        }
        assert!(fc_forward_batch(&x[..7], batch, &w, &b).is_err());
    }

    #[test]
    fn batched_dropout_uses_one_stream_per_row() {
        let x = vec![1.0f32; 40];
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(2);
        let (y, _) = dropout_forward_batch(&x, 0.5, Mode::Train, &mut [&mut a, &mut b]).unwrap();
        let y0 = dropout_forward(&x[..20], 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().0;
        let y1 = dropout_forward(&x[..20], 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(2)).unwrap().0;
        assert_eq!(y, [y0, y1].concat());
    }

    #[test]
    fn fc_gradient_is_exact() {
        let err = gradcheck::check_layer(CheckedLayer::FullyConnected { out: 3 }, (4, 1, 1), 1e-4, 12);
        assert!(err < 1e-9, "fc max relative error {err}");
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = vec![1.0f32, 2.0, 3.0];
        assert_eq!(dropout_forward(&x, 0.5, Mode::Infer, &mut rng).unwrap().0, x);
        assert_eq!(dropout_forward(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
        assert!(dropout_forward(&x, 1.0, Mode::Train, &mut rng).is_err());
        assert!(dropout_forward(&x, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = vec![1.0f64; 100_000];
        let (y, cache) = dropout_forward(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!(y.iter().all(|&v| v == 0.0 || v == 2.0));
        let g = dropout_backward(&x, &cache).unwrap();
        assert_eq!(g, y);
    }

    #[test]
    fn dropout_is_deterministic_per_seed() {
        let x = vec![1.0f32; 64];
        let a = dropout_forward(&x, 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(3)).unwrap().0;
        let b = dropout_forward(&x, 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(3)).unwrap().0;
        assert_eq!(a, b);
    }
}
