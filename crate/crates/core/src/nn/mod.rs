//! Feature maps and the forward/backward kernels of every layer the
//! network uses. Each `*_forward` returns its output together with a cache
//! that the matching backward pass consumes.

mod activation;
mod conv;
mod dense;
pub mod gradcheck;
mod pool;
mod scalar;

pub use activation::{
    relu_backward, relu_flat, relu_forward, sigmoid, sigmoid_backward, sigmoid_forward, softmax_backward,
    softmax_forward, ReluCache, SigmoidCache, SoftmaxCache,
};
pub use conv::{conv3x3_backward, conv3x3_forward, ConvCache};
pub use dense::{
    dropout_backward, dropout_forward, dropout_forward_batch, fc_backward, fc_forward, fc_forward_batch, DropoutCache,
    FcCache, Mode,
};
pub use pool::{
    maxpool2_backward, maxpool2_forward, spp_backward, spp_forward, spp_output_len, ArgmaxCache,
};
pub use scalar::Scalar;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("expected {expected} input channels, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("feature map {height}x{width} is smaller than the required {min}x{min}")]
    TooSmall {
        height: usize,
        width: usize,
        min: usize,
    },
    #[error("invalid shape {0}x{1}x{2}")]
    InvalidShape(usize, usize, usize),
    #[error("dropout probability {0} outside [0, 1)")]
    InvalidProbability(f64),
    #[error("pyramid levels must be non-empty and positive")]
    InvalidLevels,
    #[error("cache from a {cached:?} layer passed to {requested:?} backward")]
    CacheMismatch {
        requested: LayerKind,
        cached: LayerKind,
    },
    #[error("layer {0:?} has parameters but none were supplied")]
    MissingParameters(LayerKind),
}

/// Rank-3 array `(channels, height, width)`, row-major within a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self, NnError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(NnError::InvalidShape(channels, height, width));
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(NnError::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::new(
            channels,
            height,
            width,
            vec![T::zero(); channels * height * width],
        )
        .expect("zeros with a non-empty shape")
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data).expect("from_fn with a non-empty shape")
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMap<U> {
        FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Zero-pads symmetrically (extra row/column at the bottom/right) so
    /// both spatial dims reach at least `min_height`×`min_width`.
    pub fn pad_to(&self, min_height: usize, min_width: usize) -> Self {
        let h = self.height.max(min_height);
        let w = self.width.max(min_width);
        if h == self.height && w == self.width {
            return self.clone();
        }
        let top = (h - self.height) / 2;
        let left = (w - self.width) / 2;
        let mut out = Self::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for y in 0..self.height {
                let src = (c * self.height + y) * self.width;
                let dst = (c * h + y + top) * w + left;
                out.data[dst..dst + self.width].copy_from_slice(&self.data[src..src + self.width]);
            }
        }
        out
    }
}

/// Kernel kinds with a backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv3x3,
    Relu,
    MaxPool2,
    Spp,
    FullyConnected,
    Dropout,
    Sigmoid,
    Softmax,
}

/// Forward-pass intermediates of one layer invocation.
#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    Conv(ConvCache<T>),
    Relu(ReluCache),
    MaxPool(ArgmaxCache),
    Spp(ArgmaxCache),
    Fc(FcCache<T>),
    Dropout(DropoutCache<T>),
    Sigmoid(SigmoidCache<T>),
    Softmax(SoftmaxCache<T>),
}

impl<T> LayerCache<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerCache::Conv(_) => LayerKind::Conv3x3,
            LayerCache::Relu(_) => LayerKind::Relu,
            LayerCache::MaxPool(_) => LayerKind::MaxPool2,
            LayerCache::Spp(_) => LayerKind::Spp,
            LayerCache::Fc(_) => LayerKind::FullyConnected,
            LayerCache::Dropout(_) => LayerKind::Dropout,
            LayerCache::Sigmoid(_) => LayerKind::Sigmoid,
            LayerCache::Softmax(_) => LayerKind::Softmax,
        }
    }
}

/// Gradients produced by a backward pass. Parameter gradients are present
/// only for layers that own parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub input: Vec<T>,
    pub weights: Option<Vec<T>>,
    pub biases: Option<Vec<T>>,
}

/// Dispatches the backward pass of `kind` using a cache from the matching
/// forward call. `weights` is required for conv and fully connected layers.
pub fn layer_backward<T: Scalar>(
    kind: LayerKind,
    grad_output: &[T],
    cache: &LayerCache<T>,
    weights: Option<&[T]>,
) -> Result<LayerGrads<T>, NnError> {
    if cache.kind() != kind {
        return Err(NnError::CacheMismatch {
            requested: kind,
            cached: cache.kind(),
        });
    }
    let plain = |input| LayerGrads {
        input,
        weights: None,
        biases: None,
    };
    Ok(match cache {
        LayerCache::Conv(c) => {
            let w = weights.ok_or(NnError::MissingParameters(kind))?;
            let (gi, gw, gb) = conv3x3_backward(grad_output, c, w, true)?;
            LayerGrads {
                input: gi.expect("input gradient requested"),
                weights: Some(gw),
                biases: Some(gb),
            }
        }
        LayerCache::Fc(c) => {
            let w = weights.ok_or(NnError::MissingParameters(kind))?;
            let (gi, gw, gb) = fc_backward(grad_output, c, w)?;
            LayerGrads {
                input: gi,
                weights: Some(gw),
                biases: Some(gb),
            }
        }
        LayerCache::Relu(c) => plain(relu_backward(grad_output, c)?),
        LayerCache::MaxPool(c) => plain(maxpool2_backward(grad_output, c)?),
        LayerCache::Spp(c) => plain(spp_backward(grad_output, c)?),
        LayerCache::Dropout(c) => plain(dropout_backward(grad_output, c)?),
        LayerCache::Sigmoid(c) => plain(sigmoid_backward(grad_output, c)?),
        LayerCache::Softmax(c) => plain(softmax_backward(grad_output, c)?),
    })
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<(), NnError> {
    if expected != actual {
        return Err(NnError::DimensionMismatch { expected, actual });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_map_shape_checks() {
        assert!(FeatureMap::<f32>::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(FeatureMap::<f32>::new(0, 2, 2, vec![]).is_err());
        let m = FeatureMap::<f64>::from_fn(2, 2, 3, |c, y, x| (c * 100 + y * 10 + x) as f64);
        assert_eq!(m.get(1, 1, 2), 112.0);
        assert_eq!(m.data()[6], 100.0);
    }

    #[test]
    fn padding_is_centered() {
        let m = FeatureMap::<f64>::new(1, 1, 2, vec![1.0, 2.0]).unwrap();
        let p = m.pad_to(3, 4);
        assert_eq!(p.shape(), (1, 3, 4));
        assert_eq!(
            p.data(),
            &[0., 0., 0., 0., 0., 1., 2., 0., 0., 0., 0., 0.]
        );
        assert_eq!(m.pad_to(1, 1), m);
    }

    #[test]
    fn mismatched_cache_is_rejected() {
        let x = FeatureMap::<f64>::new(1, 1, 3, vec![-1.0, 0.0, 1.0]).unwrap();
        let (_, cache) = relu_forward(&x);
        let err = layer_backward(LayerKind::Spp, &[1.0; 3], &LayerCache::Relu(cache), None);
        assert_eq!(
            err.unwrap_err(),
            NnError::CacheMismatch {
                requested: LayerKind::Spp,
                cached: LayerKind::Relu
            }
        );
    }

    #[test]
    fn fc_backward_with_zero_gradient() {
        let w = vec![0.5f64, -1.0, 2.0, 0.25, 1.0, 3.0];
        let (_, cache) = fc_forward(&[1.0, 2.0, 3.0], &w, &[0.1, 0.2]).unwrap();
        let g = layer_backward(LayerKind::FullyConnected, &[0.0, 0.0], &LayerCache::Fc(cache), Some(&w))
            .unwrap();
        assert!(g.input.iter().all(|&v| v == 0.0));
        assert!(g.weights.unwrap().iter().all(|&v| v == 0.0));
        assert!(g.biases.unwrap().iter().all(|&v| v == 0.0));
    }
}
