use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a weight-noise ratio is turned into a standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    /// sigma = ratio * std(weight tensor)
    #[default]
    Relative,
    /// sigma = ratio
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    /// 3x3 convolution, stride 1, zero padding 1.
    Conv3x3 { in_channels: usize, out_channels: usize },
    Relu,
    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    MaxPool2,
    Flatten,
    /// Inverted dropout with drop probability `ratio`.
    Dropout { ratio: f64 },
    /// Perturbs the weights of the next dense/conv layer during training.
    WeightNoise { ratio: f64, scale: NoiseScale },
    /// Marks the logits; the loss is softmax cross-entropy.
    SoftmaxXentHead { classes: usize },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv3x3 { .. } => "conv3x3",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2 => "maxpool2",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::WeightNoise { .. } => "weight_noise",
            LayerSpec::SoftmaxXentHead { .. } => "softmax_xent_head",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv3x3 { .. })
    }

    /// Per-sample output shape for a per-sample input shape.
    pub(crate) fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |what: String| Error::Config(format!("layer {index} ({}): {what}", self.name()));
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if input.len() != 1 || input[0] != inputs {
                    return Err(bad(format!("expects [{inputs}] input, got {input:?}")));
                }
                if outputs == 0 {
                    return Err(bad("outputs must be positive".into()));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv3x3 { in_channels, out_channels } => {
                if input.len() != 3 || input[0] != in_channels {
                    return Err(bad(format!(
                        "expects [{in_channels}, H, W] input, got {input:?}"
                    )));
                }
                if out_channels == 0 {
                    return Err(bad("out_channels must be positive".into()));
                }
                Ok(vec![out_channels, input[1], input[2]])
            }
            LayerSpec::MaxPool2 => {
                if input.len() != 3 || input[1] < 2 || input[2] < 2 {
                    return Err(bad(format!("expects [C, H>=2, W>=2] input, got {input:?}")));
                }
                Ok(vec![input[0], input[1] / 2, input[2] / 2])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Dropout { ratio } => {
                if !(0.0..1.0).contains(&ratio) {
                    return Err(bad(format!("ratio {ratio} outside [0, 1)")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::WeightNoise { ratio, .. } => {
                if !(ratio >= 0.0 && ratio.is_finite()) {
                    return Err(bad(format!("ratio {ratio} must be finite and >= 0")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::SoftmaxXentHead { classes } => {
                if input.len() != 1 || input[0] != classes {
                    return Err(bad(format!("expects [{classes}] logits, got {input:?}")));
                }
                Ok(input.to_vec())
            }
        }
    }
}
