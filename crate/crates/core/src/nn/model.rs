use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::layer::{LayerSpec, NoiseScale};
use super::linalg::gemm;
use super::params::{bias_name, weight_name, Params};
use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

/// A feed-forward network: an ordered list of layers plus their parameters.
#[derive(Debug, Clone)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// Per-sample output shape of every layer.
    shapes: Vec<Vec<usize>>,
    params: Params,
    mode: Mode,
}

/// Random draws realised by one training forward pass: the dropout scale
/// vectors and the weight perturbations, keyed by layer index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Realization {
    dropout: BTreeMap<usize, Vec<f64>>,
    noise: BTreeMap<usize, Vec<f64>>,
}

impl Realization {
    pub fn dropout_scale(&self, layer: usize) -> Option<&[f64]> {
        self.dropout.get(&layer).map(Vec::as_slice)
    }

    /// Perturbation added to the weights of parametric layer `layer`.
    pub fn weight_noise(&self, layer: usize) -> Option<&[f64]> {
        self.noise.get(&layer).map(Vec::as_slice)
    }
}

/// Activations recorded during a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    inputs: Vec<Tensor>,
    effective_weights: BTreeMap<usize, Tensor>,
    pool_argmax: BTreeMap<usize, Vec<usize>>,
    realization: Realization,
}

impl Cache {
    pub fn realization(&self) -> &Realization {
        &self.realization
    }

    /// Sign pattern of every ReLU input and the winner of every pooling
    /// window. Two passes with equal signatures lie on the same linear piece.
    pub fn kink_signature(&self, model: &Model) -> Vec<usize> {
        let mut sig = Vec::new();
        for (i, layer) in model.layers.iter().enumerate() {
            match layer {
                LayerSpec::Relu => sig.extend(self.inputs[i].data().iter().map(|&v| (v > 0.0) as usize)),
                LayerSpec::MaxPool2 => sig.extend_from_slice(&self.pool_argmax[&i]),
                _ => {}
            }
        }
        sig
    }
}

enum Draws<'a> {
    Sample(&'a mut Rng),
    Replay(&'a Realization),
    Off,
}

impl Model {
    /// Builds a model and draws He-normal weights (biases start at zero).
    pub fn new(input_shape: &[usize], layers: Vec<LayerSpec>, rng: &mut Rng) -> Result<Self> {
        let shapes = Self::validate(input_shape, &layers)?;
        let mut params = Params::default();
        for (i, layer) in layers.iter().enumerate() {
            let (wshape, fan_in, bias_len) = match *layer {
                LayerSpec::Dense { inputs, outputs } => (vec![outputs, inputs], inputs, outputs),
                LayerSpec::Conv3x3 {
                    in_channels,
                    out_channels,
                } => (vec![out_channels, in_channels, 3, 3], in_channels * 9, out_channels),
                _ => continue,
            };
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .map_err(|e| Error::Config(format!("layer {i}: {e}")))?;
            let n: usize = wshape.iter().product();
            let w: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
            params.insert(weight_name(i), Tensor::new(wshape, w)?);
            params.insert(bias_name(i), Tensor::zeros(&[bias_len]));
        }
        Ok(Model {
            input_shape: input_shape.to_vec(),
            layers,
            shapes,
            params,
            mode: Mode::Training,
        })
    }

    /// Builds a model around existing parameters, checking names and shapes.
    pub fn with_params(input_shape: &[usize], layers: Vec<LayerSpec>, params: Params) -> Result<Self> {
        let mut rng = crate::seed::stream(0, &[]);
        let mut model = Self::new(input_shape, layers, &mut rng)?;
        model.set_params(params)?;
        Ok(model)
    }

    fn validate(input_shape: &[usize], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Config(format!("invalid input shape {input_shape:?}")));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut cur = input_shape.to_vec();
        let mut noise_pending = false;
        for (i, layer) in layers.iter().enumerate() {
            cur = layer.output_shape(i, &cur)?;
            shapes.push(cur.clone());
            match layer {
                LayerSpec::WeightNoise { .. } => noise_pending = true,
                l if l.has_params() => noise_pending = false,
                LayerSpec::SoftmaxXentHead { .. } if i + 1 != layers.len() => {
                    return Err(Error::Config(format!(
                        "layer {i}: softmax_xent_head must be the last layer"
                    )));
                }
                _ => {}
            }
        }
        if noise_pending {
            return Err(Error::Config(
                "weight_noise layer has no following dense/conv layer".into(),
            ));
        }
        match layers.last() {
            Some(LayerSpec::SoftmaxXentHead { .. }) => Ok(shapes),
            _ => Err(Error::Config("model must end with softmax_xent_head".into())),
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().map(|s| s[0]).unwrap_or(0)
    }

    /// Per-sample output shape of layer `index`.
    pub fn layer_output_shape(&self, index: usize) -> &[usize] {
        &self.shapes[index]
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Params) -> Result<()> {
        if !self.params.same_layout(&params) {
            return Err(Error::Config(
                "parameter names or shapes do not match the model".into(),
            ));
        }
        self.params = params;
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Names of the dense/conv weight tensors (never biases).
    pub fn maskable(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.has_params())
            .map(|(i, _)| weight_name(i))
            .collect()
    }

    /// Training-mode forward pass drawing fresh dropout masks and noise.
    /// In inference mode `rng` is not touched.
    pub fn forward(&self, batch: &Tensor, rng: &mut Rng) -> Result<(Tensor, Cache)> {
        self.run(batch, Draws::Sample(rng), true)
    }

    /// Forward pass that reuses the draws of an earlier pass.
    pub fn forward_replay(&self, batch: &Tensor, draws: &Realization) -> Result<(Tensor, Cache)> {
        self.run(batch, Draws::Replay(draws), true)
    }

    /// Logits with dropout and noise disabled, whatever the current mode.
    pub fn infer(&self, batch: &Tensor) -> Result<Tensor> {
        self.run(batch, Draws::Off, false).map(|(logits, _)| logits)
    }

    /// Input of the last parametric layer (the penultimate representation),
    /// computed without regularisation.
    pub fn infer_features(&self, batch: &Tensor) -> Result<Tensor> {
        let last = self
            .layers
            .iter()
            .rposition(LayerSpec::has_params)
            .ok_or_else(|| Error::Config("model has no parametric layer".into()))?;
        let (_, mut cache) = self.run(batch, Draws::Off, true)?;
        let feats = cache.inputs.swap_remove(last);
        let rows = feats.rows();
        let width = feats.row_len();
        feats.reshape(vec![rows, width])
    }

    fn run(&self, batch: &Tensor, mut draws: Draws<'_>, keep: bool) -> Result<(Tensor, Cache)> {
        if batch.shape().len() != self.input_shape.len() + 1 || batch.shape()[1..] != self.input_shape[..] {
            return Err(Error::Config(format!(
                "batch shape {:?} does not match model input {:?}",
                batch.shape(),
                self.input_shape
            )));
        }
        let regularize = self.mode == Mode::Training && !matches!(draws, Draws::Off);
        let b = batch.rows();
        let mut cache = Cache {
            inputs: Vec::new(),
            effective_weights: BTreeMap::new(),
            pool_argmax: BTreeMap::new(),
            realization: Realization::default(),
        };
        let mut x = batch.clone();
        let mut pending_noise: Option<(f64, NoiseScale)> = None;
        let mut in_shape = self.input_shape.clone();

        for (i, layer) in self.layers.iter().enumerate() {
            let out_shape = &self.shapes[i];
            let mut full = vec![b];
            full.extend_from_slice(out_shape);
            let y = match *layer {
                LayerSpec::Dense { inputs, outputs } => {
                    let w = self.noisy_weight(i, pending_noise.take(), regularize, &mut draws, &mut cache)?;
                    let bias = self.params.expect(&bias_name(i));
                    let mut out = vec![0.0; b * outputs];
                    gemm(b, inputs, outputs, x.data(), false, w.data(), true, &mut out, false);
                    for row in out.chunks_mut(outputs) {
                        for (o, bv) in row.iter_mut().zip(bias.data()) {
                            *o += bv;
                        }
                    }
                    if keep {
                        cache.effective_weights.insert(i, w);
                    }
                    Tensor::new(full, out)?
                }
                LayerSpec::Conv3x3 {
                    in_channels,
                    out_channels,
                } => {
                    let w = self.noisy_weight(i, pending_noise.take(), regularize, &mut draws, &mut cache)?;
                    let bias = self.params.expect(&bias_name(i));
                    let (h, wd) = (in_shape[1], in_shape[2]);
                    let hw = h * wd;
                    let k = in_channels * 9;
                    let mut col = vec![0.0; k * hw];
                    let mut out = vec![0.0; b * out_channels * hw];
                    for (s, o) in out.chunks_mut(out_channels * hw).enumerate() {
                        im2col(x.row(s), in_channels, h, wd, &mut col);
                        gemm(out_channels, k, hw, w.data(), false, &col, false, o, false);
                        for (c, plane) in o.chunks_mut(hw).enumerate() {
                            let bv = bias.data()[c];
                            plane.iter_mut().for_each(|v| *v += bv);
                        }
                    }
                    if keep {
                        cache.effective_weights.insert(i, w);
                    }
                    Tensor::new(full, out)?
                }
                LayerSpec::Relu => {
                    let out = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                    Tensor::new(full, out)?
                }
                LayerSpec::MaxPool2 => {
                    let (c, h, wd) = (in_shape[0], in_shape[1], in_shape[2]);
                    let (oh, ow) = (h / 2, wd / 2);
                    let mut out = Vec::with_capacity(b * c * oh * ow);
                    let mut arg = Vec::with_capacity(b * c * oh * ow);
                    for s in 0..b {
                        let sample = x.row(s);
                        for ch in 0..c {
                            let base = ch * h * wd;
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let mut best = base + 2 * oy * wd + 2 * ox;
                                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                        let idx = base + (2 * oy + dy) * wd + 2 * ox + dx;
                                        if sample[idx] > sample[best] {
                                            best = idx;
                                        }
                                    }
                                    out.push(sample[best]);
                                    arg.push(best);
                                }
                            }
                        }
                    }
                    if keep {
                        cache.pool_argmax.insert(i, arg);
                    }
                    Tensor::new(full, out)?
                }
                LayerSpec::Flatten | LayerSpec::SoftmaxXentHead { .. } => x.clone().reshape(full)?,
                LayerSpec::Dropout { ratio } => {
                    if regularize && ratio > 0.0 {
                        let scale = match &mut draws {
                            Draws::Sample(rng) => {
                                let keep_scale = 1.0 / (1.0 - ratio);
                                (0..x.len())
                                    .map(|_| if rng.random::<f64>() < ratio { 0.0 } else { keep_scale })
                                    .collect::<Vec<_>>()
                            }
                            Draws::Replay(r) => r
                                .dropout_scale(i)
                                .filter(|s| s.len() == x.len())
                                .ok_or_else(|| Error::Input(format!("no recorded dropout draws for layer {i}")))?
                                .to_vec(),
                            Draws::Off => unreachable!(),
                        };
                        let out = x.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
                        cache.realization.dropout.insert(i, scale);
                        Tensor::new(full, out)?
                    } else {
                        x.clone()
                    }
                }
                LayerSpec::WeightNoise { ratio, scale } => {
                    pending_noise = Some((ratio, scale));
                    x.clone()
                }
            };
            if !y.is_finite() {
                return Err(Error::Numerical {
                    layer: i,
                    kind: layer.name(),
                });
            }
            if keep {
                cache.inputs.push(std::mem::replace(&mut x, y));
            } else {
                x = y;
            }
            in_shape = out_shape.clone();
        }
        Ok((x, cache))
    }

    fn noisy_weight(
        &self,
        layer: usize,
        noise: Option<(f64, NoiseScale)>,
        regularize: bool,
        draws: &mut Draws<'_>,
        cache: &mut Cache,
    ) -> Result<Tensor> {
        let w = self.params.expect(&weight_name(layer));
        let (ratio, scale) = match noise {
            Some((r, s)) if regularize && r > 0.0 => (r, s),
            _ => return Ok(w.clone()),
        };
        let eps: Vec<f64> = match draws {
            Draws::Sample(rng) => {
                let sigma = match scale {
                    NoiseScale::Relative => ratio * w.std(),
                    NoiseScale::Absolute => ratio,
                };
                (0..w.len())
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut **rng);
                        sigma * z
                    })
                    .collect()
            }
            Draws::Replay(r) => r
                .weight_noise(layer)
                .filter(|e| e.len() == w.len())
                .ok_or_else(|| Error::Input(format!("no recorded noise draws for layer {layer}")))?
                .to_vec(),
            Draws::Off => unreachable!(),
        };
        let data = w.data().iter().zip(&eps).map(|(a, e)| a + e).collect();
        cache.realization.noise.insert(layer, eps);
        Tensor::new(w.shape().to_vec(), data)
    }

    /// Gradients of a scalar objective with respect to every parameter,
    /// given its gradient with respect to the logits.
    pub fn backward(&self, cache: &Cache, dlogits: Tensor) -> Result<Params> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Input("cache does not belong to this model".into()));
        }
        let b = dlogits.rows();
        let mut grads = Params::default();
        let mut dy = dlogits;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            let mut in_full = vec![b];
            in_full.extend_from_slice(&x.shape()[1..]);
            let dx = match *layer {
                LayerSpec::Dense { inputs, outputs } => {
                    let w = &cache.effective_weights[&i];
                    let mut dw = vec![0.0; outputs * inputs];
                    gemm(outputs, b, inputs, dy.data(), true, x.data(), false, &mut dw, false);
                    let mut db = vec![0.0; outputs];
                    for row in dy.data().chunks(outputs) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    let mut dxv = vec![0.0; b * inputs];
                    gemm(b, outputs, inputs, dy.data(), false, w.data(), false, &mut dxv, false);
                    grads.insert(weight_name(i), Tensor::new(vec![outputs, inputs], dw)?);
                    grads.insert(bias_name(i), Tensor::new(vec![outputs], db)?);
                    Tensor::new(in_full, dxv)?
                }
                LayerSpec::Conv3x3 {
                    in_channels,
                    out_channels,
                } => {
                    let w = &cache.effective_weights[&i];
                    let (h, wd) = (x.shape()[2], x.shape()[3]);
                    let hw = h * wd;
                    let k = in_channels * 9;
                    let mut col = vec![0.0; k * hw];
                    let mut dcol = vec![0.0; k * hw];
                    let mut dw = vec![0.0; out_channels * k];
                    let mut db = vec![0.0; out_channels];
                    let mut dxv = vec![0.0; b * in_channels * hw];
                    for s in 0..b {
                        let dys = dy.row(s);
                        im2col(x.row(s), in_channels, h, wd, &mut col);
                        gemm(out_channels, hw, k, dys, false, &col, true, &mut dw, true);
                        for (c, plane) in dys.chunks(hw).enumerate() {
                            db[c] += plane.iter().sum::<f64>();
                        }
                        gemm(k, out_channels, hw, w.data(), true, dys, false, &mut dcol, false);
                        col2im(&dcol, in_channels, h, wd, &mut dxv[s * in_channels * hw..(s + 1) * in_channels * hw]);
                    }
                    grads.insert(weight_name(i), Tensor::new(vec![out_channels, in_channels, 3, 3], dw)?);
                    grads.insert(bias_name(i), Tensor::new(vec![out_channels], db)?);
                    Tensor::new(in_full, dxv)?
                }
                LayerSpec::Relu => {
                    let d = dy
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    Tensor::new(in_full, d)?
                }
                LayerSpec::MaxPool2 => {
                    let per_in = x.row_len();
                    let per_out = dy.row_len();
                    let arg = &cache.pool_argmax[&i];
                    let mut d = vec![0.0; b * per_in];
                    for s in 0..b {
                        for j in 0..per_out {
                            d[s * per_in + arg[s * per_out + j]] += dy.data()[s * per_out + j];
                        }
                    }
                    Tensor::new(in_full, d)?
                }
                LayerSpec::Dropout { .. } => match cache.realization.dropout_scale(i) {
                    Some(scale) => {
                        let d = dy.data().iter().zip(scale).map(|(g, s)| g * s).collect();
                        Tensor::new(in_full, d)?
                    }
                    None => dy.reshape(in_full)?,
                },
                LayerSpec::Flatten | LayerSpec::WeightNoise { .. } | LayerSpec::SoftmaxXentHead { .. } => {
                    dy.reshape(in_full)?
                }
            };
            dy = dx;
        }
        Ok(grads)
    }
}

/// Unfolds a `[c, h, w]` sample into a `[c*9, h*w]` patch matrix (zero padding 1).
fn im2col(x: &[f64], c: usize, h: usize, w: usize, col: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ch * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    for xo in 0..w {
                        let sx = xo as isize + kx as isize - 1;
                        row[y * w + xo] = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                            x[ch * hw + sy as usize * w + sx as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the sample.
fn col2im(col: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    dx.fill(0.0);
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ch * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xo in 0..w {
                        let sx = xo as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dx[ch * hw + sy as usize * w + sx as usize] += row[y * w + xo];
                        }
                    }
                }
            }
        }
    }
}
