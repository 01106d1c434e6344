//! The PHOCNet and its softmax baseline: layer assembly, initialization,
//! full forward/backward passes over variable-size images, and the binary
//! model format.

mod io;
mod spec;

pub use io::{load_model, model_from_bytes, model_to_bytes, save_model, FORMAT_VERSION, MAGIC};
pub use spec::{ArchitectureSpec, Head, LayerSpec};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{self, FeatureMap, LayerCache, Mode, NnError, Scalar};
use crate::phoc::PhocConfigRecord;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("unknown architecture preset {0:?}")]
    UnknownPreset(String),
    #[error("label dimension must be positive")]
    ZeroLabelDim,
    #[error("input image {height}x{width} is below the minimum {min}x{min}")]
    ImageTooSmall {
        height: usize,
        width: usize,
        min: usize,
    },
    #[error("input must have a single channel, got {0}")]
    NotGrayscale(usize),
    #[error("backward needs a cache from a training-mode forward pass")]
    ModeMismatch,
    #[error("cache does not belong to this network")]
    StaleCache,
    #[error(transparent)]
    Kernel(#[from] NnError),
    #[error("bad magic: not a model file")]
    BadMagic,
    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model file truncated")]
    Truncated,
    #[error("shape inconsistency: {0}")]
    ShapeMismatch(String),
    #[error("malformed model metadata: {0}")]
    BadMetadata(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Parameter-owning layer kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Conv,
    Fc,
}

/// A shaped array of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Blob<T> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    fn cast<U: Scalar>(&self) -> Blob<U> {
        Blob {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Weights and biases of one conv/FC layer plus their momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayer<T> {
    pub kind: ParamKind,
    pub weights: Blob<T>,
    pub biases: Blob<T>,
    pub weight_velocity: Blob<T>,
    pub bias_velocity: Blob<T>,
}

impl<T: Scalar> ParamLayer<T> {
    fn new(kind: ParamKind, weight_shape: Vec<usize>, out: usize) -> Self {
        Self {
            kind,
            weights: Blob::zeros(weight_shape.clone()),
            biases: Blob::zeros(vec![out]),
            weight_velocity: Blob::zeros(weight_shape),
            bias_velocity: Blob::zeros(vec![out]),
        }
    }

    /// Input connections per output unit.
    pub fn fan_in(&self) -> usize {
        self.weights.shape[1..].iter().product()
    }
}

/// Information carried alongside the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    /// Label space of a PHOC model.
    #[serde(default)]
    pub phoc: Option<PhocConfigRecord>,
    #[serde(default)]
    pub phoc_digest: Option<String>,
    /// Class names of a softmax model, indexed by output unit.
    #[serde(default)]
    pub classes: Vec<String>,
    #[serde(default)]
    pub iteration: u64,
}

#[derive(Debug, Clone, PartialEq)]
enum Step {
    Conv(usize),
    Relu,
    MaxPool,
    Spp(Vec<usize>),
    Fc(usize),
    Dropout(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel<T = f32> {
    spec: ArchitectureSpec,
    label_dim: usize,
    steps: Vec<Step>,
    pub params: Vec<ParamLayer<T>>,
    pub metadata: ModelMetadata,
}

/// Per-layer gradients, shaped like [`NetworkModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &NetworkModel<T>) -> Self {
        Self {
            layers: model
                .params
                .iter()
                .map(|p| (vec![T::zero(); p.weights.data.len()], vec![T::zero(); p.biases.data.len()]))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, &o)| *a += o);
            b.iter_mut().zip(ob).for_each(|(a, &o)| *a += o);
        }
    }

    pub fn scale(&mut self, factor: T) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= factor);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b).all(|v| *v == T::zero()))
    }
}

/// Everything backward needs from one forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    mode: Mode,
    batch: usize,
    /// Per-sample caches of the layers up to and including pyramid pooling.
    spatial: Vec<Vec<LayerCache<T>>>,
    /// Caches of the flat layers, each covering the whole batch.
    dense: Vec<LayerCache<T>>,
    heads: Vec<LayerCache<T>>,
    logits: Vec<T>,
}

impl<T> ForwardCache<T> {
    /// Network output before the head non-linearity, one row per sample.
    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// Per-sample work of a batch is spread over threads only when called from
/// inside a rayon pool with more than one thread.
fn parallel() -> bool {
    rayon::current_thread_index().is_some() && rayon::current_num_threads() > 1
}

/// Allocates (zeroed) parameter blobs for `spec` with an output layer of
/// width `label_dim`.
pub fn build_network<T: Scalar>(spec: &ArchitectureSpec, label_dim: usize) -> Result<NetworkModel<T>, ModelError> {
    spec.validate()?;
    if label_dim == 0 {
        return Err(ModelError::ZeroLabelDim);
    }
    let mut steps = Vec::new();
    let mut params = Vec::new();
    let mut channels = 1;
    let mut flat = 0;
    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv { out_channels } => {
                steps.push(Step::Conv(params.len()));
                steps.push(Step::Relu);
                params.push(ParamLayer::new(ParamKind::Conv, vec![*out_channels, channels, 3, 3], *out_channels));
                channels = *out_channels;
            }
            LayerSpec::MaxPool => steps.push(Step::MaxPool),
            LayerSpec::Spp { levels } => {
                steps.push(Step::Spp(levels.clone()));
                flat = nn::spp_output_len(channels, levels);
            }
            LayerSpec::Fc { out } => {
                steps.push(Step::Fc(params.len()));
                steps.push(Step::Relu);
                params.push(ParamLayer::new(ParamKind::Fc, vec![*out, flat], *out));
                flat = *out;
            }
            LayerSpec::Dropout { p } => steps.push(Step::Dropout(*p)),
        }
    }
    steps.push(Step::Fc(params.len()));
    params.push(ParamLayer::new(ParamKind::Fc, vec![label_dim, flat], label_dim));
    Ok(NetworkModel {
        spec: spec.clone(),
        label_dim,
        steps,
        params,
        metadata: ModelMetadata::default(),
    })
}

/// Uniform `[−√(6/n), √(6/n)]` weights (variance `2/n`, `n` = fan-in) and
/// zero biases. Momentum buffers are reset.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(model: &mut NetworkModel<T>, rng: &mut R) {
    for layer in &mut model.params {
        let limit = (6.0 / layer.fan_in() as f64).sqrt();
        for w in &mut layer.weights.data {
            *w = T::from_f64(rng.gen_range(-limit..limit));
        }
        layer.biases.data.fill(T::zero());
        layer.weight_velocity.data.fill(T::zero());
        layer.bias_velocity.data.fill(T::zero());
    }
}

impl<T: Scalar> NetworkModel<T> {
    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn label_dim(&self) -> usize {
        self.label_dim
    }

    pub fn head(&self) -> Head {
        self.spec.head
    }

    pub fn min_input_size(&self) -> usize {
        self.spec.min_input_size()
    }

    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .map(|p| p.weights.data.len() + p.biases.data.len())
            .sum()
    }

    /// Same network in another precision.
    pub fn cast<U: Scalar>(&self) -> NetworkModel<U> {
        NetworkModel {
            spec: self.spec.clone(),
            label_dim: self.label_dim,
            steps: self.steps.clone(),
            params: self
                .params
                .iter()
                .map(|p| ParamLayer {
                    kind: p.kind,
                    weights: p.weights.cast(),
                    biases: p.biases.cast(),
                    weight_velocity: p.weight_velocity.cast(),
                    bias_velocity: p.bias_velocity.cast(),
                })
                .collect(),
            metadata: self.metadata.clone(),
        }
    }

    /// Forward pass with inputs below the minimum size zero-padded up to it.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        image: &FeatureMap<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<T>, ForwardCache<T>), ModelError> {
        self.forward_batch(&[image], mode, &mut [rng])
    }

    /// Forward pass that rejects inputs below the minimum size.
    pub fn forward_strict<R: Rng + ?Sized>(
        &self,
        image: &FeatureMap<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<T>, ForwardCache<T>), ModelError> {
        self.check_input(image)?;
        self.run_batch(&[image], mode, &mut [rng])
    }

    /// Forward pass over several images at once; sample `i` draws its
    /// dropout masks from `rngs[i]`. Outputs are concatenated row-wise.
    /// Small images are zero-padded as in [`NetworkModel::forward`].
    pub fn forward_batch<R: Rng + ?Sized>(
        &self,
        images: &[&FeatureMap<T>],
        mode: Mode,
        rngs: &mut [&mut R],
    ) -> Result<(Vec<T>, ForwardCache<T>), ModelError> {
        let min = self.min_input_size();
        let padded: Vec<Option<FeatureMap<T>>> = images
            .iter()
            .map(|im| (im.height() < min || im.width() < min).then(|| im.pad_to(min, min)))
            .collect();
        let inputs: Vec<&FeatureMap<T>> = images
            .iter()
            .zip(&padded)
            .map(|(im, p)| p.as_ref().unwrap_or(im))
            .collect();
        for im in &inputs {
            self.check_input(im)?;
        }
        self.run_batch(&inputs, mode, rngs)
    }

    fn check_input(&self, image: &FeatureMap<T>) -> Result<(), ModelError> {
        if image.channels() != 1 {
            return Err(ModelError::NotGrayscale(image.channels()));
        }
        let min = self.min_input_size();
        if image.height() < min || image.width() < min {
            return Err(ModelError::ImageTooSmall {
                height: image.height(),
                width: image.width(),
                min,
            });
        }
        Ok(())
    }

    /// Index of the first step after pyramid pooling.
    fn dense_start(&self) -> usize {
        self.steps
            .iter()
            .position(|s| matches!(s, Step::Spp(_)))
            .expect("validated architecture has a pyramid pooling layer")
            + 1
    }

    fn forward_spatial(&self, image: &FeatureMap<T>) -> Result<(Vec<T>, Vec<LayerCache<T>>), ModelError> {
        let mut caches = Vec::with_capacity(self.dense_start());
        let mut map = image.clone();
        for step in &self.steps[..self.dense_start()] {
            match step {
                Step::Conv(i) => {
                    let p = &self.params[*i];
                    let (y, c) = nn::conv3x3_forward(&map, &p.weights.data, &p.biases.data)?;
                    map = y;
                    caches.push(LayerCache::Conv(c));
                }
                Step::Relu => {
                    let (y, c) = nn::relu_forward(&map);
                    map = y;
                    caches.push(LayerCache::Relu(c));
                }
                Step::MaxPool => {
                    let (y, c) = nn::maxpool2_forward(&map)?;
                    map = y;
                    caches.push(LayerCache::MaxPool(c));
                }
                Step::Spp(levels) => {
                    let (y, c) = nn::spp_forward(&map, levels)?;
                    caches.push(LayerCache::Spp(c));
                    return Ok((y, caches));
                }
                Step::Fc(_) | Step::Dropout(_) => unreachable!("flat layer before pyramid pooling"),
            }
        }
        unreachable!("spatial stage ends with pyramid pooling")
    }

    fn run_batch<R: Rng + ?Sized>(
        &self,
        images: &[&FeatureMap<T>],
        mode: Mode,
        rngs: &mut [&mut R],
    ) -> Result<(Vec<T>, ForwardCache<T>), ModelError> {
        let batch = images.len();
        if batch == 0 || rngs.len() != batch {
            return Err(NnError::DimensionMismatch {
                expected: batch.max(1),
                actual: rngs.len(),
            }
            .into());
        }
        let per_sample: Vec<Result<(Vec<T>, Vec<LayerCache<T>>), ModelError>> = if parallel() {
            images.par_iter().map(|im| self.forward_spatial(im)).collect()
        } else {
            images.iter().map(|im| self.forward_spatial(im)).collect()
        };
        let mut flat = Vec::new();
        let mut spatial = Vec::with_capacity(batch);
        for r in per_sample {
            let (y, c) = r?;
            flat.extend(y);
            spatial.push(c);
        }

        let mut dense = Vec::with_capacity(self.steps.len() - self.dense_start());
        for step in &self.steps[self.dense_start()..] {
            let (y, c) = match step {
                Step::Fc(i) => {
                    let p = &self.params[*i];
                    let (y, c) = nn::fc_forward_batch(&flat, batch, &p.weights.data, &p.biases.data)?;
                    (y, LayerCache::Fc(c))
                }
                Step::Relu => {
                    let (y, c) = nn::relu_flat(&flat);
                    (y, LayerCache::Relu(c))
                }
                Step::Dropout(p) => {
                    let (y, c) = nn::dropout_forward_batch(&flat, *p, mode, rngs)?;
                    (y, LayerCache::Dropout(c))
                }
                Step::Conv(_) | Step::MaxPool | Step::Spp(_) => unreachable!("spatial layer after pyramid pooling"),
            };
            flat = y;
            dense.push(c);
        }

        let mut output = Vec::with_capacity(flat.len());
        let mut heads = Vec::with_capacity(batch);
        for row in flat.chunks_exact(self.label_dim) {
            let (y, c) = match self.spec.head {
                Head::Sigmoid => {
                    let (y, c) = nn::sigmoid_forward(row);
                    (y, LayerCache::Sigmoid(c))
                }
                Head::Softmax => {
                    let (y, c) = nn::softmax_forward(row);
                    (y, LayerCache::Softmax(c))
                }
            };
            output.extend(y);
            heads.push(c);
        }
        Ok((
            output,
            ForwardCache {
                mode,
                batch,
                spatial,
                dense,
                heads,
                logits: flat,
            },
        ))
    }

    /// Inference-mode output (no dropout).
    pub fn predict(&self, image: &FeatureMap<T>) -> Result<Vec<T>, ModelError> {
        let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
        Ok(self.forward(image, Mode::Infer, &mut no_rng)?.0)
    }

    /// Parameter gradients, summed over the batch, given the loss gradient
    /// with respect to the pre-head output (the fused sigmoid/softmax
    /// cross-entropy form), one row per sample.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &[T]) -> Result<Gradients<T>, ModelError> {
        if cache.mode != Mode::Train {
            return Err(ModelError::ModeMismatch);
        }
        let ds = self.dense_start();
        if cache.dense.len() != self.steps.len() - ds || cache.spatial.iter().any(|c| c.len() != ds) {
            return Err(ModelError::StaleCache);
        }
        nn::check_len(cache.batch * self.label_dim, grad_logits.len())?;
        let mut layers: Vec<Option<(Vec<T>, Vec<T>)>> = vec![None; self.params.len()];
        let mut grad = grad_logits.to_vec();
        for (step, c) in self.steps[ds..].iter().zip(&cache.dense).rev() {
            grad = match (step, c) {
                (Step::Fc(i), LayerCache::Fc(fc)) => {
                    let (gi, gw, gb) = nn::fc_backward(&grad, fc, &self.params[*i].weights.data)?;
                    layers[*i] = Some((gw, gb));
                    gi
                }
                (Step::Relu, LayerCache::Relu(r)) => nn::relu_backward(&grad, r)?,
                (Step::Dropout(_), LayerCache::Dropout(d)) => nn::dropout_backward(&grad, d)?,
                _ => return Err(ModelError::StaleCache),
            };
        }

        let row = grad.len() / cache.batch;
        let per_sample: Vec<Result<Vec<(usize, Vec<T>, Vec<T>)>, ModelError>> = if parallel() {
            cache
                .spatial
                .par_iter()
                .zip(grad.par_chunks(row))
                .map(|(caches, g)| self.backward_spatial(caches, g))
                .collect()
        } else {
            cache
                .spatial
                .iter()
                .zip(grad.chunks(row))
                .map(|(caches, g)| self.backward_spatial(caches, g))
                .collect()
        };
        for r in per_sample {
            for (i, gw, gb) in r? {
                match &mut layers[i] {
                    Some((w, b)) => {
                        w.iter_mut().zip(&gw).for_each(|(a, &v)| *a += v);
                        b.iter_mut().zip(&gb).for_each(|(a, &v)| *a += v);
                    }
                    empty => *empty = Some((gw, gb)),
                }
            }
        }
        Ok(Gradients {
            layers: layers
                .into_iter()
                .zip(&self.params)
                .map(|(g, p)| g.unwrap_or_else(|| (vec![T::zero(); p.weights.data.len()], vec![T::zero(); p.biases.data.len()])))
                .collect(),
        })
    }

    #[allow(clippy::type_complexity)]
    fn backward_spatial(&self, caches: &[LayerCache<T>], grad_flat: &[T]) -> Result<Vec<(usize, Vec<T>, Vec<T>)>, ModelError> {
        let mut out = Vec::new();
        let mut grad = grad_flat.to_vec();
        for (idx, (step, c)) in self.steps.iter().zip(caches).enumerate().rev() {
            grad = match (step, c) {
                (Step::Conv(i), LayerCache::Conv(cc)) => {
                    let (gi, gw, gb) = nn::conv3x3_backward(&grad, cc, &self.params[*i].weights.data, idx > 0)?;
                    out.push((*i, gw, gb));
                    match gi {
                        Some(g) => g,
                        None => break,
                    }
                }
                (Step::Relu, LayerCache::Relu(r)) => nn::relu_backward(&grad, r)?,
                (Step::MaxPool, LayerCache::MaxPool(m)) => nn::maxpool2_backward(&grad, m)?,
                (Step::Spp(_), LayerCache::Spp(s)) => nn::spp_backward(&grad, s)?,
                _ => return Err(ModelError::StaleCache),
            };
        }
        Ok(out)
    }

    /// Parameter gradients given the loss gradient with respect to the head
    /// output.
    pub fn backward_through_head(&self, cache: &ForwardCache<T>, grad_output: &[T]) -> Result<Gradients<T>, ModelError> {
        nn::check_len(cache.batch * self.label_dim, grad_output.len())?;
        let mut grad_logits = Vec::with_capacity(grad_output.len());
        for (head, g) in cache.heads.iter().zip(grad_output.chunks_exact(self.label_dim)) {
            grad_logits.extend(match head {
                LayerCache::Sigmoid(c) => nn::sigmoid_backward(g, c)?,
                LayerCache::Softmax(c) => nn::softmax_backward(g, c)?,
                _ => return Err(ModelError::StaleCache),
            });
        }
        self.backward(cache, &grad_logits)
    }
}
