//! Losses, SGD with momentum, the step learning-rate schedule, and the
//! training loop shared by the PHOCNet and the softmax baseline.

mod config;
mod loss;

pub use config::{LossNormalization, TrainConfig, TrainMode};
pub use loss::{bce_loss, bce_with_logits, softmax_xent_loss};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{Gradients, Head, ModelError, NetworkModel};
use crate::nn::{FeatureMap, Mode};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("class index {class_index} out of range for {classes} classes")]
    ClassOutOfRange { class_index: usize, classes: usize },
    #[error("parameter and gradient shapes differ ({params} vs {grads})")]
    ShapeMismatch { params: usize, grads: usize },
    #[error("iteration {iteration} outside [0, {total})")]
    IterationOutOfRange { iteration: u64, total: u64 },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss became non-finite at iteration {0}")]
    NonFiniteLoss(u64),
    #[error("{head:?} head cannot be trained on {target} targets")]
    TargetMismatch { head: Head, target: &'static str },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// What the network should output for a training image.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Binary attribute vector for the sigmoid head.
    Attributes(Vec<f32>),
    /// Class index for the softmax head.
    Class(usize),
}

#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: FeatureMap<f32>,
    pub target: Target,
}

/// One SGD update of a parameter blob:
/// `v ← momentum·v − lr·(g + weight_decay·p)`, `p ← p + v`.
pub fn sgd_step(
    params: &mut [f32],
    grads: &[f32],
    velocity: &mut [f32],
    lr: f32,
    momentum: f32,
    weight_decay: f32,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(TrainError::ShapeMismatch {
            params: params.len(),
            grads: grads.len().min(velocity.len()),
        });
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * (g + weight_decay * *p);
        *p += *v;
    }
    Ok(())
}

/// Learning rate at a 0-indexed iteration: the base rate, divided by the
/// drop factor from `lr_drop_iteration` on.
pub fn lr_at(iteration: u64, config: &TrainConfig) -> Result<f64, TrainError> {
    if iteration >= config.total_iterations {
        return Err(TrainError::IterationOutOfRange {
            iteration,
            total: config.total_iterations,
        });
    }
    Ok(if iteration < config.lr_drop_iteration {
        config.base_lr
    } else {
        config.base_lr / config.lr_drop_factor
    })
}

/// One logged point of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub iteration: u64,
    /// Mean batch loss over the iterations since the previous record.
    pub loss: f64,
    pub lr: f64,
    pub elapsed_seconds: f64,
    /// Value returned by the observer at this point, if any.
    pub eval: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn last_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("iteration\tloss\tlr\telapsed_seconds\n");
        for r in &self.records {
            let _ = writeln!(out, "{}\t{:.8}\t{:e}\t{:.3}", r.iteration, r.loss, r.lr, r.elapsed_seconds);
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Hook called on the training thread at every logged iteration. The
/// returned value, if any, is stored with the log record.
pub trait TrainObserver {
    fn on_log(&mut self, _record: &LogRecord, _model: &NetworkModel<f32>) -> Option<f64> {
        None
    }
}

impl TrainObserver for () {}

impl<F: FnMut(&LogRecord, &NetworkModel<f32>) -> Option<f64>> TrainObserver for F {
    fn on_log(&mut self, record: &LogRecord, model: &NetworkModel<f32>) -> Option<f64> {
        self(record, model)
    }
}

/// Loss of every sample in a batch and the gradient with respect to the
/// logits, one row per sample, scaled for the configured normalization.
fn batch_loss(
    model: &NetworkModel<f32>,
    targets: &[&Target],
    logits: &[f32],
    norm: LossNormalization,
) -> Result<(f64, Vec<f32>), TrainError> {
    let n = model.label_dim();
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (target, row) in targets.iter().zip(logits.chunks_exact(n)) {
        let (loss, grad) = match (target, model.head()) {
            (Target::Attributes(y), Head::Sigmoid) => bce_with_logits(y, row)?,
            (Target::Class(c), Head::Softmax) => softmax_xent_loss(*c, row)?,
            (Target::Attributes(_), head) => return Err(TrainError::TargetMismatch { head, target: "attribute" }),
            (Target::Class(_), head) => return Err(TrainError::TargetMismatch { head, target: "class" }),
        };
        total += loss;
        match norm {
            LossNormalization::Mean => grads.extend(grad),
            LossNormalization::Sum => grads.extend(grad.iter().map(|g| g * n as f32)),
        }
    }
    Ok((total, grads))
}

/// Seed of the dropout stream for one sample slot of one iteration.
fn dropout_rng(seed: u64, iteration: u64, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5DEE_CE66_D1CE_4E5B);
    rng.set_stream(iteration.wrapping_mul(1 << 16).wrapping_add(slot as u64));
    rng
}

/// Runs `config.total_iterations` SGD steps. Batches are drawn by cycling
/// through a seeded shuffle of the samples, reshuffled every pass.
///
/// The result depends only on (samples, initial model, config); with more
/// than one thread the per-sample gradients are still summed in batch order.
pub fn train(
    samples: &[TrainSample],
    mut model: NetworkModel<f32>,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(NetworkModel<f32>, TrainLog), TrainError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| TrainError::InvalidConfig(e.to_string()))?,
        )
    } else {
        None
    };

    let start = Instant::now();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut shuffle_rng);
    let mut cursor = 0;
    let mut log = TrainLog::default();
    let mut window_loss = 0.0;
    let mut window_len = 0u32;
    let first = model.metadata.iteration;

    for iteration in 0..config.total_iterations {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        let images: Vec<&FeatureMap<f32>> = batch.iter().map(|&i| &samples[i].image).collect();
        let targets: Vec<&Target> = batch.iter().map(|&i| &samples[i].target).collect();
        let mut rngs: Vec<ChaCha8Rng> = (0..batch.len()).map(|slot| dropout_rng(config.seed, iteration, slot)).collect();
        let mut rng_refs: Vec<&mut ChaCha8Rng> = rngs.iter_mut().collect();
        let mut step = || -> Result<(f64, Gradients<f32>), TrainError> {
            let (_, cache) = model.forward_batch(&images, Mode::Train, &mut rng_refs)?;
            let (loss, grad) = batch_loss(&model, &targets, cache.logits(), config.loss_normalization)?;
            Ok((loss, model.backward(&cache, &grad)?))
        };
        let (loss, mut total) = match &pool {
            Some(pool) => pool.install(step)?,
            None => step()?,
        };
        let inv = 1.0 / config.batch_size as f64;
        let loss = loss * inv;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss(iteration));
        }
        total.scale(inv as f32);

        let lr_f64 = lr_at(iteration, config)?;
        let lr = lr_f64 as f32;
        let (momentum, wd) = (config.momentum as f32, config.weight_decay as f32);
        for (layer, (gw, gb)) in model.params.iter_mut().zip(&total.layers) {
            sgd_step(&mut layer.weights.data, gw, &mut layer.weight_velocity.data, lr, momentum, wd)?;
            sgd_step(&mut layer.biases.data, gb, &mut layer.bias_velocity.data, lr, momentum, 0.0)?;
        }
        model.metadata.iteration = first + iteration + 1;

        window_loss += loss;
        window_len += 1;
        let last = iteration + 1 == config.total_iterations;
        if iteration % config.log_every == 0 || last {
            let mut record = LogRecord {
                iteration,
                loss: window_loss / window_len as f64,
                lr: lr_f64,
                elapsed_seconds: start.elapsed().as_secs_f64(),
                eval: None,
            };
            record.eval = observer.on_log(&record, &model);
            log::debug!("iteration {iteration}: loss {:.6} lr {:e}", record.loss, record.lr);
            log.records.push(record);
            window_loss = 0.0;
            window_len = 0;
        }
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_network, init_params, ArchitectureSpec};
    use rand::Rng;

    #[test]
    fn sgd_degenerate_cases() {
        let mut p = vec![1.0f32, -2.0];
        let mut v = vec![0.0f32; 2];
        sgd_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        sgd_step(&mut p, &[3.0, 5.0], &mut v, 0.0, 0.9, 0.5).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);

        let mut p = vec![1.0f32, -2.0];
        let mut v = vec![0.0f32; 2];
        sgd_step(&mut p, &[0.5, 1.0], &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p, vec![1.0 - 0.05, -2.0 - 0.1]);
        assert!(sgd_step(&mut p, &[0.0], &mut v, 0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn momentum_unrolls() {
        let (lr, m, g) = (0.1f32, 0.9f32, 2.0f32);
        let mut p = vec![0.0f32];
        let mut v = vec![0.0f32];
        sgd_step(&mut p, &[g], &mut v, lr, m, 0.0).unwrap();
        sgd_step(&mut p, &[g], &mut v, lr, m, 0.0).unwrap();
        assert!((p[0] - (-lr * g * (2.0 + m))).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut p = vec![2.0f32];
        let mut v = vec![0.0f32];
        sgd_step(&mut p, &[0.0], &mut v, 0.5, 0.0, 0.1).unwrap();
        assert!((p[0] - 1.9).abs() < 1e-6);
    }

    #[test]
    fn schedule_boundaries() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c).unwrap(), 1e-4);
        assert_eq!(lr_at(69_999, &c).unwrap(), 1e-4);
        assert!((lr_at(70_000, &c).unwrap() - 1e-5).abs() < 1e-20);
        assert!((lr_at(79_999, &c).unwrap() - 1e-5).abs() < 1e-20);
        assert!(lr_at(80_000, &c).is_err());
        let s = TrainConfig::softmax_preset();
        assert_eq!(lr_at(249_999, &s).unwrap(), 1e-4);
        assert!((lr_at(250_000, &s).unwrap() - 1e-5).abs() < 1e-20);
    }

    fn toy_samples(n: usize, dim: usize, seed: u64) -> Vec<TrainSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| TrainSample {
                image: FeatureMap::from_fn(1, 16, 16 + 2 * (i % 3), |_, _, _| rng.gen_range(0.0..1.0)),
                target: Target::Attributes((0..dim).map(|j| ((i + j) % 3 == 0) as u8 as f32).collect()),
            })
            .collect()
    }

    fn toy_model(dim: usize) -> NetworkModel<f32> {
        let mut m = build_network(&ArchitectureSpec::phocnet_mini(Head::Sigmoid), dim).unwrap();
        init_params(&mut m, &mut ChaCha8Rng::seed_from_u64(1));
        m
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            total_iterations: 6,
            lr_drop_iteration: 4,
            batch_size: 3,
            log_every: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic_and_logs() {
        let samples = toy_samples(5, 8, 3);
        let config = quick_config();
        let (a, log_a) = train(&samples, toy_model(8), &config, &mut ()).unwrap();
        let (b, log_b) = train(&samples, toy_model(8), &config, &mut ()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.metadata.iteration, 6);
        let iters: Vec<u64> = log_a.records.iter().map(|r| r.iteration).collect();
        assert_eq!(iters, vec![0, 2, 4, 5]);
        for r in &log_a.records {
            assert_eq!(r.lr, lr_at(r.iteration, &config).unwrap());
        }
        assert_eq!(
            log_a.records.iter().map(|r| r.loss).collect::<Vec<_>>(),
            log_b.records.iter().map(|r| r.loss).collect::<Vec<_>>()
        );
        assert!(log_a.to_tsv().starts_with("iteration\tloss\tlr\telapsed_seconds\n"));
    }

    #[test]
    fn threaded_training_matches_sequential() {
        let samples = toy_samples(4, 6, 4);
        let config = quick_config();
        let (a, _) = train(&samples, toy_model(6), &config, &mut ()).unwrap();
        let threaded = TrainConfig { threads: 3, ..config };
        let (b, _) = train(&samples, toy_model(6), &threaded, &mut ()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_errors() {
        let config = quick_config();
        assert!(matches!(
            train(&[], toy_model(4), &config, &mut ()),
            Err(TrainError::EmptyDataset)
        ));
        let wrong = vec![TrainSample {
            image: FeatureMap::zeros(1, 16, 16),
            target: Target::Class(0),
        }];
        assert!(matches!(
            train(&wrong, toy_model(4), &config, &mut ()),
            Err(TrainError::TargetMismatch { .. })
        ));
    }

    #[test]
    fn observer_values_are_recorded() {
        let samples = toy_samples(3, 4, 5);
        let mut calls = 0;
        let mut obs = |r: &LogRecord, _: &NetworkModel<f32>| {
            calls += 1;
            Some(r.iteration as f64)
        };
        let (_, log) = train(&samples, toy_model(4), &quick_config(), &mut obs).unwrap();
        assert_eq!(calls, 4);
        assert_eq!(log.records[1].eval, Some(2.0));
    }
}
