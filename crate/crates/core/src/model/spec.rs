use serde::{Deserialize, Serialize};

use super::ModelError;

/// One hidden layer of the architecture. ReLU follows every convolution and
/// every hidden fully connected layer; the output layer and head are added
/// by [`super::build_network`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { out_channels: usize },
    MaxPool,
    Spp { levels: Vec<usize> },
    Fc { out: usize },
    Dropout { p: f64 },
}

/// Output non-linearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Independent per-attribute probabilities (PHOC prediction).
    Sigmoid,
    /// A distribution over word classes (baseline).
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub layers: Vec<LayerSpec>,
    pub head: Head,
}

impl ArchitectureSpec {
    /// VGG-style ladder: 64×2, pool, 128×2, pool, 256×6, 512×3, SPP{1,2,4},
    /// two 4096-wide FC layers with dropout.
    pub fn phocnet_full(head: Head) -> Self {
        use LayerSpec::*;
        let mut layers = vec![];
        layers.extend([Conv { out_channels: 64 }, Conv { out_channels: 64 }, MaxPool]);
        layers.extend([Conv { out_channels: 128 }, Conv { out_channels: 128 }, MaxPool]);
        layers.extend(std::iter::repeat(Conv { out_channels: 256 }).take(6));
        layers.extend(std::iter::repeat(Conv { out_channels: 512 }).take(3));
        layers.push(Spp { levels: vec![1, 2, 4] });
        layers.extend([Fc { out: 4096 }, Dropout { p: 0.5 }, Fc { out: 4096 }, Dropout { p: 0.5 }]);
        Self { layers, head }
    }

    /// Small variant for desk-scale experiments.
    pub fn phocnet_mini(head: Head) -> Self {
        use LayerSpec::*;
        Self {
            layers: vec![
                Conv { out_channels: 16 },
                Conv { out_channels: 16 },
                MaxPool,
                Conv { out_channels: 32 },
                Conv { out_channels: 32 },
                MaxPool,
                Conv { out_channels: 48 },
                Conv { out_channels: 48 },
                Spp { levels: vec![1, 2, 4] },
                Fc { out: 512 },
                Dropout { p: 0.5 },
            ],
            head,
        }
    }

    pub fn preset(name: &str, head: Head) -> Result<Self, ModelError> {
        match name {
            "phocnet-full" => Ok(Self::phocnet_full(head)),
            "phocnet-mini" => Ok(Self::phocnet_mini(head)),
            other => Err(ModelError::UnknownPreset(other.to_owned())),
        }
    }

    /// Same architecture with every dropout probability replaced by `p`.
    pub fn with_dropout(mut self, p: f64) -> Self {
        for layer in &mut self.layers {
            if let LayerSpec::Dropout { p: q } = layer {
                *q = p;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |msg: &str| Err(ModelError::InvalidSpec(msg.to_owned()));
        let spp_positions: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Spp { .. }))
            .map(|(i, _)| i)
            .collect();
        let spp = match spp_positions.as_slice() {
            [i] => *i,
            [] => return invalid("architecture needs a spatial pyramid pooling layer"),
            _ => return invalid("architecture has more than one spatial pyramid pooling layer"),
        };
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv { out_channels: 0 } => return invalid("convolution with zero filters"),
                LayerSpec::Fc { out: 0 } => return invalid("fully connected layer with zero width"),
                LayerSpec::Conv { .. } | LayerSpec::MaxPool if i > spp => {
                    return invalid("spatial layer after the pyramid pooling layer")
                }
                LayerSpec::Fc { .. } | LayerSpec::Dropout { .. } if i < spp => {
                    return invalid("flat layer before the pyramid pooling layer")
                }
                LayerSpec::Spp { levels } if levels.is_empty() || levels.contains(&0) => {
                    return invalid("pyramid levels must be non-empty and positive")
                }
                LayerSpec::Dropout { p } if !(0.0..1.0).contains(p) => {
                    return invalid("dropout probability outside [0, 1)")
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn pool_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::MaxPool)).count()
    }

    pub fn spp_levels(&self) -> &[usize] {
        self.layers
            .iter()
            .find_map(|l| match l {
                LayerSpec::Spp { levels } => Some(levels.as_slice()),
                _ => None,
            })
            .unwrap_or(&[])
    }

    /// Smallest input height/width for which every pooling stage and the
    /// pyramid's finest level still have at least one cell per bin.
    pub fn min_input_size(&self) -> usize {
        let finest = self.spp_levels().iter().copied().max().unwrap_or(1);
        (finest << self.pool_count()).max(1 << self.pool_count())
    }
}
