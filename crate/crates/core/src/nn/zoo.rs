//! Desk-scale architectures. Each hidden block is
//! `[dense|conv3x3] -> relu -> dropout(d) -> weight_noise(n)`, so the noise
//! of one block perturbs the weights of the next parametric layer.

use serde::{Deserialize, Serialize};

use super::layer::{LayerSpec, NoiseScale};
use super::model::Model;
use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Fully connected network with the given hidden widths.
    Mlp { hidden: Vec<usize> },
    /// Two conv blocks, 2x2 max pooling, then a dense classifier.
    SmallCnn { channels: [usize; 2] },
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::Mlp {
            hidden: vec![256, 128],
        }
    }
}

/// Dropout and weight-noise settings shared by every block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    pub dropout: f64,
    pub noise: f64,
    pub noise_scale: NoiseScale,
}

impl Regularization {
    pub const NONE: Regularization = Regularization {
        dropout: 0.0,
        noise: 0.0,
        noise_scale: NoiseScale::Relative,
    };
}

fn block_tail(layers: &mut Vec<LayerSpec>, reg: Regularization) {
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::Dropout { ratio: reg.dropout });
    layers.push(LayerSpec::WeightNoise {
        ratio: reg.noise,
        scale: reg.noise_scale,
    });
}

impl Architecture {
    pub fn layers(&self, input_shape: &[usize], classes: usize, reg: Regularization) -> Result<Vec<LayerSpec>> {
        let mut layers = Vec::new();
        match self {
            Architecture::Mlp { hidden } => {
                let mut width: usize = input_shape.iter().product();
                if input_shape.len() > 1 {
                    layers.push(LayerSpec::Flatten);
                }
                for &h in hidden {
                    layers.push(LayerSpec::Dense { inputs: width, outputs: h });
                    block_tail(&mut layers, reg);
                    width = h;
                }
                layers.push(LayerSpec::Dense {
                    inputs: width,
                    outputs: classes,
                });
            }
            Architecture::SmallCnn { channels } => {
                let (c, h, w) = match *input_shape {
                    [h, w] => (1, h, w),
                    [c, h, w] => (c, h, w),
                    _ => {
                        return Err(Error::Config(format!(
                            "small_cnn needs [H, W] or [C, H, W] inputs, got {input_shape:?}"
                        )))
                    }
                };
                layers.push(LayerSpec::Conv3x3 {
                    in_channels: c,
                    out_channels: channels[0],
                });
                block_tail(&mut layers, reg);
                layers.push(LayerSpec::Conv3x3 {
                    in_channels: channels[0],
                    out_channels: channels[1],
                });
                block_tail(&mut layers, reg);
                layers.push(LayerSpec::MaxPool2);
                layers.push(LayerSpec::Flatten);
                layers.push(LayerSpec::Dense {
                    inputs: channels[1] * (h / 2) * (w / 2),
                    outputs: classes,
                });
            }
        }
        layers.push(LayerSpec::SoftmaxXentHead { classes });
        Ok(layers)
    }

    /// Per-sample input shape the model expects for a dataset sample shape.
    pub fn model_input_shape(&self, sample_shape: &[usize]) -> Vec<usize> {
        match (self, sample_shape) {
            (Architecture::SmallCnn { .. }, [h, w]) => vec![1, *h, *w],
            _ => sample_shape.to_vec(),
        }
    }

    pub fn build(&self, sample_shape: &[usize], classes: usize, reg: Regularization, rng: &mut Rng) -> Result<Model> {
        let input = self.model_input_shape(sample_shape);
        let layers = self.layers(sample_shape, classes, reg)?;
        Model::new(&input, layers, rng)
    }
}
