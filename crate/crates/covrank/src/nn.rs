//! Minimal numeric core: row-major double-precision arrays, a small
//! convolutional network (valid conv, ReLU, 2x2 max-pool, fully connected)
//! with a hand-derived backward pass, softmax cross-entropy, and SGD.

use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CovrankError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NdArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NdArray {
    pub fn zeros(shape: &[usize]) -> NdArray {
        let n: usize = shape.iter().product();
        NdArray { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<NdArray> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(CovrankError::Shape(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(NdArray { shape: shape.to_vec(), data })
    }

    pub fn assert_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().any(|x| !x.is_finite()) {
            return Err(CovrankError::Diverged(format!(
                "{context}: non-finite value in array of shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Offset of a multi-index, row-major.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, &x) in idx.iter().enumerate() {
            debug_assert!(x < self.shape[i]);
            off = off * self.shape[i] + x;
        }
        off
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    /// Per-tensor standardization to zero mean, unit variance. Degenerate
    /// (constant) tensors map to all zeros.
    pub fn standardized(&self) -> NdArray {
        let n = self.data.len() as f64;
        let mean = self.data.iter().sum::<f64>() / n;
        let var = self.data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-8);
        NdArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| (x - mean) / std).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcLayer {
    /// out x in.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl FcLayer {
    pub fn new_seeded(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> FcLayer {
        let scale = (1.0 / inp.max(1) as f64).sqrt();
        FcLayer {
            weights: (0..out)
                .map(|_| (0..inp).map(|_| rng.gen_range(-scale..scale)).collect())
                .collect(),
            bias: vec![0.0; out],
        }
    }

    /// Fixed averaging layer: every output coordinate is the mean over the
    /// input width. Used where a deterministic untrained reduction is wanted.
    pub fn averaging(out: usize, inp: usize) -> FcLayer {
        FcLayer {
            weights: vec![vec![1.0 / inp as f64; inp]; out],
            bias: vec![0.0; out],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Returns (dL/dx, dL/dW, dL/db) given the input and dL/dy.
    fn backward(&self, x: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![vec![0.0; x.len()]; self.weights.len()];
        for (o, row) in self.weights.iter().enumerate() {
            for i in 0..x.len() {
                dx[i] += row[i] * dy[o];
                dw[o][i] = x[i] * dy[o];
            }
        }
        (dx, dw, dy.to_vec())
    }
}

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(1e-300).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvNetConfig {
    /// Input shape (channels, height, width).
    pub input: (usize, usize, usize),
    /// Filter count.
    pub k: usize,
    /// Filter spatial size (h, w).
    pub filter: (usize, usize),
    /// Output (embedding) length.
    pub out_len: usize,
    /// Attach a 2-class head after the embedding layer.
    pub with_head: bool,
    pub seed: u64,
}

/// conv -> ReLU -> 2x2 max-pool -> fc to `out_len`, optionally followed by a
/// 2-class head. Pooling windows are clipped at the boundary so odd extents
/// keep their trailing row/column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvNet {
    pub config: ConvNetConfig,
    /// k filters of shape (c, h, w), flattened row-major per filter.
    pub filters: Vec<Vec<f64>>,
    pub filter_bias: Vec<f64>,
    pub fc: FcLayer,
    pub head: Option<FcLayer>,
}

fn conv_out_dims(cfg: &ConvNetConfig) -> Result<(usize, usize)> {
    let (_, ih, iw) = cfg.input;
    let (fh, fw) = cfg.filter;
    if ih < fh || iw < fw {
        return Err(CovrankError::Shape(format!(
            "input {ih}x{iw} smaller than filter {fh}x{fw}"
        )));
    }
    Ok((ih - fh + 1, iw - fw + 1))
}

fn pool_out_dims(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(2), w.div_ceil(2))
}

impl ConvNet {
    pub fn new(config: ConvNetConfig) -> Result<ConvNet> {
        let (c, _, _) = config.input;
        let (fh, fw) = config.filter;
        let (oh, ow) = conv_out_dims(&config)?;
        let (ph, pw) = pool_out_dims(oh, ow);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let fan_in = (c * fh * fw) as f64;
        let scale = (1.0 / fan_in).sqrt();
        let filters = (0..config.k)
            .map(|_| (0..c * fh * fw).map(|_| rng.gen_range(-scale..scale)).collect())
            .collect();
        let filter_bias = vec![0.0; config.k];
        let fc = FcLayer::new_seeded(config.out_len, config.k * ph * pw, &mut rng);
        let head = if config.with_head {
            Some(FcLayer::new_seeded(2, config.out_len, &mut rng))
        } else {
            None
        };
        Ok(ConvNet { config, filters, filter_bias, fc, head })
    }

    pub fn conv_shape(&self) -> (usize, usize, usize) {
        let (oh, ow) = conv_out_dims(&self.config).expect("validated at construction");
        (self.config.k, oh, ow)
    }

    /// Flattened parameter vector: filters, filter bias, fc, head.
    pub fn get_params(&self) -> Vec<f64> {
        let mut p = Vec::new();
        for f in &self.filters {
            p.extend_from_slice(f);
        }
        p.extend_from_slice(&self.filter_bias);
        for layer in std::iter::once(&self.fc).chain(self.head.iter()) {
            for row in &layer.weights {
                p.extend_from_slice(row);
            }
            p.extend_from_slice(&layer.bias);
        }
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let mut it = params.iter();
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = it.by_ref().take(n).cloned().collect();
            if v.len() != n {
                return Err(CovrankError::Shape("parameter vector too short".to_string()));
            }
            Ok(v)
        };
        for f in &mut self.filters {
            let n = f.len();
            *f = take(n)?;
        }
        let n = self.filter_bias.len();
        self.filter_bias = take(n)?;
        for layer in std::iter::once(&mut self.fc).chain(self.head.iter_mut()) {
            for row in &mut layer.weights {
                let n = row.len();
                *row = take(n)?;
            }
            let n = layer.bias.len();
            layer.bias = take(n)?;
        }
        if it.next().is_some() {
            return Err(CovrankError::Shape("parameter vector too long".to_string()));
        }
        Ok(())
    }

    fn check_input(&self, x: &NdArray) -> Result<()> {
        let (c, h, w) = self.config.input;
        if x.shape != [c, h, w] {
            return Err(CovrankError::Shape(format!(
                "input shape {:?}, net expects [{c}, {h}, {w}]",
                x.shape
            )));
        }
        Ok(())
    }

    /// Forward pass keeping every intermediate needed by backward.
    pub fn forward(&self, x: &NdArray) -> Result<ForwardPass> {
        self.check_input(x)?;
        let xs = x.standardized();
        let (c, _, iw) = self.config.input;
        let (fh, fw) = self.config.filter;
        let (oh, ow) = conv_out_dims(&self.config)?;
        let (ph, pw) = pool_out_dims(oh, ow);
        let k = self.config.k;

        // Valid cross-correlation plus bias.
        let mut conv = NdArray::zeros(&[k, oh, ow]);
        for f in 0..k {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = self.filter_bias[f];
                    for ch in 0..c {
                        for fy in 0..fh {
                            for fx in 0..fw {
                                let xi = (ch * self.config.input.1 + oy + fy) * iw + ox + fx;
                                acc += xs.data[xi] * self.filters[f][(ch * fh + fy) * fw + fx];
                            }
                        }
                    }
                    conv.data[(f * oh + oy) * ow + ox] = acc;
                }
            }
        }
        let relu = NdArray {
            shape: conv.shape.clone(),
            data: conv.data.iter().map(|&v| v.max(0.0)).collect(),
        };

        // 2x2 max-pool, stride 2, boundary windows clipped. First max wins.
        let mut pooled = NdArray::zeros(&[k, ph, pw]);
        let mut argmax = vec![0usize; k * ph * pw];
        for f in 0..k {
            for py in 0..ph {
                for px in 0..pw {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for dy in 0..2.min(oh - py * 2) {
                        for dx in 0..2.min(ow - px * 2) {
                            let idx = (f * oh + py * 2 + dy) * ow + px * 2 + dx;
                            if relu.data[idx] > best {
                                best = relu.data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let pidx = (f * ph + py) * pw + px;
                    pooled.data[pidx] = best;
                    argmax[pidx] = best_idx;
                }
            }
        }

        let embedding = self.fc.forward(&pooled.data);
        let logits = self.head.as_ref().map(|h| h.forward(&embedding));
        Ok(ForwardPass { x_std: xs, conv, relu, pooled, argmax, embedding, logits })
    }

    /// Embedding vector (length `out_len`) for an input.
    pub fn embed(&self, x: &NdArray) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.embedding)
    }

    /// Post-ReLU conv outputs, one (oh, ow) map per filter.
    pub fn feature_maps(&self, x: &NdArray) -> Result<Vec<NdArray>> {
        let fp = self.forward(x)?;
        let (k, oh, ow) = self.conv_shape();
        Ok((0..k)
            .map(|f| NdArray {
                shape: vec![oh, ow],
                data: fp.relu.data[f * oh * ow..(f + 1) * oh * ow].to_vec(),
            })
            .collect())
    }

    /// Faulty-class probability; requires a head.
    pub fn classify(&self, x: &NdArray) -> Result<Vec<f64>> {
        let fp = self.forward(x)?;
        let logits = fp.logits.ok_or_else(|| {
            CovrankError::Config("classify requires a net with a 2-class head".to_string())
        })?;
        Ok(softmax(&logits))
    }

    /// Gradients of `weight * cross_entropy(softmax(logits), label)` with
    /// respect to every parameter, flattened in `get_params` order.
    pub fn backward(&self, x: &NdArray, label: usize, weight: f64) -> Result<(f64, Vec<f64>)> {
        let fp = self.forward(x)?;
        let logits = fp.logits.as_ref().ok_or_else(|| {
            CovrankError::Config("backward requires a net with a 2-class head".to_string())
        })?;
        let probs = softmax(logits);
        let loss = weight * cross_entropy(&probs, label);
        if !loss.is_finite() {
            return Err(CovrankError::Diverged(format!("non-finite loss {loss}")));
        }

        // d loss / d logits for softmax cross-entropy.
        let mut dlogits: Vec<f64> = probs.clone();
        dlogits[label] -= 1.0;
        for d in &mut dlogits {
            *d *= weight;
        }

        let head = self.head.as_ref().expect("logits imply head");
        let (dembed, dhead_w, dhead_b) = head.backward(&fp.embedding, &dlogits);
        let (dpool, dfc_w, dfc_b) = self.fc.backward(&fp.pooled.data, &dembed);

        // Pool backward: route each pooled gradient to its argmax cell, then
        // through ReLU's gate into the conv outputs.
        let (k, oh, ow) = self.conv_shape();
        let mut dconv = vec![0.0; k * oh * ow];
        for (pidx, &src) in fp.argmax.iter().enumerate() {
            if fp.conv.data[src] > 0.0 {
                dconv[src] += dpool[pidx];
            }
        }

        // Conv backward into filter weights and biases.
        let (c, ih, iw) = self.config.input;
        let (fh, fw) = self.config.filter;
        let _ = ih;
        let mut dfilters = vec![vec![0.0; c * fh * fw]; k];
        let mut dfbias = vec![0.0; k];
        for f in 0..k {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = dconv[(f * oh + oy) * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    dfbias[f] += g;
                    for ch in 0..c {
                        for fy in 0..fh {
                            for fx in 0..fw {
                                let xi = (ch * self.config.input.1 + oy + fy) * iw + ox + fx;
                                dfilters[f][(ch * fh + fy) * fw + fx] += g * fp.x_std.data[xi];
                            }
                        }
                    }
                }
            }
        }

        let mut grads = Vec::new();
        for f in &dfilters {
            grads.extend_from_slice(f);
        }
        grads.extend_from_slice(&dfbias);
        for row in &dfc_w {
            grads.extend_from_slice(row);
        }
        grads.extend_from_slice(&dfc_b);
        for row in &dhead_w {
            grads.extend_from_slice(row);
        }
        grads.extend_from_slice(&dhead_b);
        Ok((loss, grads))
    }
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub x_std: NdArray,
    pub conv: NdArray,
    pub relu: NdArray,
    pub pooled: NdArray,
    pub argmax: Vec<usize>,
    pub embedding: Vec<f64>,
    pub logits: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Per-class loss weights; `None` computes inverse-frequency weights.
    pub class_weights: Option<[f64; 2]>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 100, batch: 32, lr: 0.003, class_weights: None, seed: 0 }
    }
}

/// Inverse-frequency class weights normalized to mean 1.
pub fn inverse_frequency_weights(labels: &[usize]) -> [f64; 2] {
    let n1 = labels.iter().filter(|&&l| l == 1).count();
    let n0 = labels.len() - n1;
    if n0 == 0 || n1 == 0 {
        return [1.0, 1.0];
    }
    let total = labels.len() as f64;
    let w0 = total / (2.0 * n0 as f64);
    let w1 = total / (2.0 * n1 as f64);
    [w0, w1]
}

/// Mini-batch SGD with a fixed per-seed shuffle stream. Gradients inside a
/// batch are reduced in dataset order, so the result is deterministic.
pub fn train(
    net: &mut ConvNet,
    dataset: &[(NdArray, usize)],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(CovrankError::EmptyCorpus("empty training set".to_string()));
    }
    let weights = config.class_weights.unwrap_or_else(|| {
        let labels: Vec<usize> = dataset.iter().map(|(_, l)| *l).collect();
        inverse_frequency_weights(&labels)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch.max(1)) {
            let mut grads: Option<Vec<f64>> = None;
            let mut batch_loss = 0.0;
            for &i in batch {
                let (x, label) = &dataset[i];
                let (loss, g) = net.backward(x, *label, weights[*label])?;
                batch_loss += loss;
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                }
            }
            epoch_loss += batch_loss;
            if let Some(g) = grads {
                let scale = config.lr / batch.len() as f64;
                let mut params = net.get_params();
                for (p, gi) in params.iter_mut().zip(&g) {
                    *p -= scale * gi;
                }
                net.set_params(&params)?;
            }
        }
        let mean = epoch_loss / dataset.len() as f64;
        if !mean.is_finite() {
            return Err(CovrankError::Diverged(format!(
                "epoch {epoch}: mean loss {mean} (lr {}, batch {})",
                config.lr, config.batch
            )));
        }
        trace.push(mean);
    }
    Ok(trace)
}

/// Dense contraction along the leading "mutant" axis: (m, k, n, d) -> (m, n, d)
/// or (k, n, d) -> (n, d). The layer must have output width 1 and input
/// width k.
pub fn fc_reduce_4d(x: &NdArray, layer: &FcLayer) -> Result<NdArray> {
    let (lead, k, n, d) = match x.shape.as_slice() {
        [m, k, n, d] => (Some(*m), *k, *n, *d),
        [k, n, d] => (None, *k, *n, *d),
        other => {
            return Err(CovrankError::Shape(format!(
                "fc_reduce_4d expects 3-D or 4-D input, got {other:?}"
            )))
        }
    };
    if layer.out_dim() != 1 || layer.in_dim() != k {
        return Err(CovrankError::Shape(format!(
            "reducer is {}x{}, need 1x{k}",
            layer.out_dim(),
            layer.in_dim()
        )));
    }
    let m = lead.unwrap_or(1);
    let mut out = NdArray::zeros(&[m, n, d]);
    for mi in 0..m {
        for ni in 0..n {
            for di in 0..d {
                let mut acc = layer.bias[0];
                for ki in 0..k {
                    acc += layer.weights[0][ki] * x.data[((mi * k + ki) * n + ni) * d + di];
                }
                out.data[(mi * n + ni) * d + di] = acc;
            }
        }
    }
    if lead.is_none() {
        out.shape = vec![n, d];
    }
    Ok(out)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"CRNN";
const CHECKPOINT_VERSION: u32 = 1;

/// Binary checkpoint (magic, version, parameter count, little-endian doubles)
/// plus a JSON sidecar `<path>.meta.json` holding the net config.
pub fn save_checkpoint(net: &ConvNet, path: &Path) -> Result<()> {
    let params = net.get_params();
    let mut f = std::fs::File::create(path).map_err(|e| CovrankError::io(path.display().to_string(), e))?;
    f.write_all(CHECKPOINT_MAGIC).map_err(|e| CovrankError::io(path.display().to_string(), e))?;
    f.write_all(&CHECKPOINT_VERSION.to_le_bytes())
        .map_err(|e| CovrankError::io(path.display().to_string(), e))?;
    f.write_all(&(params.len() as u64).to_le_bytes())
        .map_err(|e| CovrankError::io(path.display().to_string(), e))?;
    for p in &params {
        f.write_all(&p.to_le_bytes()).map_err(|e| CovrankError::io(path.display().to_string(), e))?;
    }
    let sidecar = path.with_extension("meta.json");
    let json = serde_json::to_string_pretty(&net.config)?;
    std::fs::write(&sidecar, json + "\n").map_err(|e| CovrankError::io(sidecar.display().to_string(), e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ConvNet> {
    let sidecar = path.with_extension("meta.json");
    let json = std::fs::read_to_string(&sidecar).map_err(|e| CovrankError::io(sidecar.display().to_string(), e))?;
    let config: ConvNetConfig = serde_json::from_str(&json)?;
    let mut net = ConvNet::new(config)?;

    let mut f = std::fs::File::open(path).map_err(|e| CovrankError::io(path.display().to_string(), e))?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic).map_err(|e| CovrankError::io(path.display().to_string(), e))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CovrankError::Config(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let mut buf4 = [0u8; 4];
    f.read_exact(&mut buf4).map_err(|e| CovrankError::io(path.display().to_string(), e))?;
    let version = u32::from_le_bytes(buf4);
    if version != CHECKPOINT_VERSION {
        return Err(CovrankError::Config(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let mut buf8 = [0u8; 8];
    f.read_exact(&mut buf8).map_err(|e| CovrankError::io(path.display().to_string(), e))?;
    let count = u64::from_le_bytes(buf8) as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        f.read_exact(&mut buf8).map_err(|e| CovrankError::io(path.display().to_string(), e))?;
        params.push(f64::from_le_bytes(buf8));
    }
    net.set_params(&params)?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ConvNetConfig {
        ConvNetConfig {
            input: (2, 6, 6),
            k: 3,
            filter: (3, 3),
            out_len: 4,
            with_head: true,
            seed: 1,
        }
    }

    fn rand_input(shape: &[usize], seed: u64) -> NdArray {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        NdArray {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        }
    }

    /// Convolution via an unoptimized quadruple loop on raw indices.
    fn conv_oracle(x: &NdArray, net: &ConvNet) -> NdArray {
        let (c, _, _) = net.config.input;
        let (fh, fw) = net.config.filter;
        let (k, oh, ow) = net.conv_shape();
        let mut out = NdArray::zeros(&[k, oh, ow]);
        for f in 0..k {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = net.filter_bias[f];
                    for ch in 0..c {
                        for fy in 0..fh {
                            for fx in 0..fw {
                                acc += x.at(&[ch, oy + fy, ox + fx])
                                    * net.filters[f][(ch * fh + fy) * fw + fx];
                            }
                        }
                    }
                    out.data[(f * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn ones_filter_over_ones_input_gives_nine() {
        let cfg = ConvNetConfig {
            input: (1, 3, 3),
            k: 1,
            filter: (3, 3),
            out_len: 1,
            with_head: false,
            seed: 0,
        };
        let mut net = ConvNet::new(cfg).unwrap();
        net.filters[0] = vec![1.0; 9];
        net.filter_bias[0] = 0.0;
        // Bypass standardization by probing the conv arithmetic directly.
        let x = NdArray::from_vec(&[1, 3, 3], vec![1.0; 9]).unwrap();
        let out = conv_oracle(&x, &net);
        assert_eq!(out.data, vec![9.0]);
    }

    #[test]
    fn single_entry_filter_shifts_input_window() {
        let cfg = ConvNetConfig {
            input: (1, 4, 4),
            k: 1,
            filter: (2, 2),
            out_len: 1,
            with_head: false,
            seed: 0,
        };
        let mut net = ConvNet::new(cfg).unwrap();
        net.filters[0] = vec![1.0, 0.0, 0.0, 0.0];
        net.filter_bias[0] = 0.0;
        let x = rand_input(&[1, 4, 4], 3);
        let out = conv_oracle(&x, &net);
        for oy in 0..3 {
            for ox in 0..3 {
                assert_eq!(out.data[oy * 3 + ox], x.at(&[0, oy, ox]));
            }
        }
    }

    #[test]
    fn forward_conv_matches_oracle() {
        let cfg = ConvNetConfig {
            input: (2, 8, 8),
            k: 4,
            filter: (3, 3),
            out_len: 4,
            with_head: false,
            seed: 7,
        };
        let net = ConvNet::new(cfg).unwrap();
        let x = rand_input(&[2, 8, 8], 11);
        let fp = net.forward(&x).unwrap();
        // The oracle sees the standardized input the net consumes.
        let expect = conv_oracle(&x.standardized(), &net);
        for (a, b) in fp.conv.data.iter().zip(&expect.data) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = ConvNet::new(small_cfg()).unwrap();
        let x = rand_input(&[2, 6, 6], 5);
        let label = 1;
        let weight = 1.3;
        let (_, grads) = net.backward(&x, label, weight).unwrap();
        let params = net.get_params();
        let eps = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut checked = 0;
        let mut coords: Vec<usize> = (0..params.len()).collect();
        coords.shuffle(&mut rng);
        for &ci in coords.iter().take(120) {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut pp = params.clone();
            pp[ci] += eps;
            plus.set_params(&pp).unwrap();
            pp[ci] -= 2.0 * eps;
            minus.set_params(&pp).unwrap();
            let (lp, _) = plus.backward(&x, label, weight).unwrap();
            let (lm, _) = minus.backward(&x, label, weight).unwrap();
            let numeric = (lp - lm) / (2.0 * eps);
            let analytic = grads[ci];
            let denom = numeric.abs().max(analytic.abs());
            // Absolute guard for coordinates whose gradient is zero (dead
            // ReLU units, unselected pool cells).
            if denom < 1e-8 {
                continue;
            }
            let rel = (numeric - analytic).abs() / denom;
            assert!(rel < 1e-4, "param {ci}: analytic {analytic} vs numeric {numeric}");
            checked += 1;
        }
        assert!(checked >= 100, "only {checked} nonzero coordinates checked");
    }

    #[test]
    fn zero_input_zero_weights_give_zero_conv_gradients() {
        let mut net = ConvNet::new(small_cfg()).unwrap();
        for f in &mut net.filters {
            f.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = NdArray::zeros(&[2, 6, 6]);
        let (_, grads) = net.backward(&x, 0, 1.0).unwrap();
        let conv_params: usize = net.filters.iter().map(|f| f.len()).sum();
        assert!(grads[..conv_params].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn duplicated_example_doubles_batch_gradient() {
        let net = ConvNet::new(small_cfg()).unwrap();
        let x = rand_input(&[2, 6, 6], 21);
        let (l1, g1) = net.backward(&x, 1, 1.0).unwrap();
        // Two backward passes summed, as `train` accumulates them.
        let summed: Vec<f64> = g1.iter().map(|g| 2.0 * g).collect();
        let (l2a, g2a) = net.backward(&x, 1, 1.0).unwrap();
        let (l2b, g2b) = net.backward(&x, 1, 1.0).unwrap();
        assert_eq!(l2a + l2b, 2.0 * l1);
        let acc: Vec<f64> = g2a.iter().zip(&g2b).map(|(a, b)| a + b).collect();
        assert_eq!(acc, summed);
    }

    #[test]
    fn softmax_basics() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[1000.0, 0.0]);
        assert!(p[0] > 1.0 - 1e-12 && p[1] < 1e-12);
        assert!(p.iter().all(|x| x.is_finite()));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let p = softmax(&v);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = v.iter().map(|x| x + 3.7).collect();
            for (a, b) in p.iter().zip(softmax(&shifted)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fc_reduce_identity_and_shapes() {
        let layer = FcLayer { weights: vec![vec![1.0]], bias: vec![0.0] };
        let x = rand_input(&[1, 3, 2], 4);
        let out = fc_reduce_4d(&x, &layer).unwrap();
        assert_eq!(out.shape, vec![3, 2]);
        assert_eq!(out.data, x.data);

        let x4 = rand_input(&[2, 1, 3, 2], 5);
        let out4 = fc_reduce_4d(&x4, &layer).unwrap();
        assert_eq!(out4.shape, vec![2, 3, 2]);
        assert_eq!(out4.data, x4.data);
    }

    #[test]
    fn fc_reduce_matches_loop_oracle() {
        let layer = FcLayer { weights: vec![vec![0.5, -1.0, 2.0]], bias: vec![0.25] };
        let x = rand_input(&[2, 3, 4, 2], 6);
        let out = fc_reduce_4d(&x, &layer).unwrap();
        for m in 0..2 {
            for n in 0..4 {
                for d in 0..2 {
                    let mut acc = 0.25;
                    for k in 0..3 {
                        acc += layer.weights[0][k] * x.at(&[m, k, n, d]);
                    }
                    assert!((out.at(&[m, n, d]) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn fc_reduce_width_mismatch_rejected() {
        let layer = FcLayer { weights: vec![vec![1.0, 1.0]], bias: vec![0.0] };
        let x = NdArray::zeros(&[3, 2, 2]);
        assert!(fc_reduce_4d(&x, &layer).is_err());
    }

    /// Separable toy set: vertical stripe (class 1) vs horizontal stripe
    /// (class 0), with per-sample noise.
    fn stripe_dataset(n_per_class: usize, seed: u64) -> Vec<(NdArray, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for i in 0..n_per_class * 2 {
            let label = i % 2;
            let mut data = vec![0.0; 36];
            for y in 0..6 {
                for x in 0..6 {
                    let stripe = if label == 1 { x == 2 } else { y == 2 };
                    data[y * 6 + x] =
                        if stripe { 1.0 } else { 0.0 } + rng.gen_range(-0.1..0.1);
                }
            }
            out.push((NdArray::from_vec(&[1, 6, 6], data).unwrap(), label));
        }
        out
    }

    fn toy_net(seed: u64) -> ConvNet {
        ConvNet::new(ConvNetConfig {
            input: (1, 6, 6),
            k: 4,
            filter: (3, 3),
            out_len: 8,
            with_head: true,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn separable_toy_set_reaches_99_percent() {
        for seed in 0..5u64 {
            let data = stripe_dataset(20, seed + 50);
            let mut net = toy_net(seed);
            let cfg = TrainConfig {
                epochs: 200,
                batch: 8,
                lr: 0.05,
                class_weights: None,
                seed,
            };
            train(&mut net, &data, &cfg).unwrap();
            let correct = data
                .iter()
                .filter(|(x, l)| {
                    let p = net.classify(x).unwrap();
                    (p[1] > 0.5) == (*l == 1)
                })
                .count();
            let acc = correct as f64 / data.len() as f64;
            assert!(acc >= 0.99, "seed {seed}: accuracy {acc}");
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let data = stripe_dataset(4, 1);
        let mut net = toy_net(0);
        let before = net.get_params();
        let cfg = TrainConfig { epochs: 3, lr: 0.0, ..Default::default() };
        train(&mut net, &data, &cfg).unwrap();
        assert_eq!(net.get_params(), before);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let data = stripe_dataset(6, 2);
        let cfg = TrainConfig { epochs: 5, batch: 4, lr: 0.01, class_weights: None, seed: 9 };
        let mut a = toy_net(3);
        let trace_a = train(&mut a, &data, &cfg).unwrap();
        let mut b = toy_net(3);
        let trace_b = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(trace_a, trace_b);
        assert_eq!(a.get_params(), b.get_params());
    }

    #[test]
    fn smoothed_loss_decreases_on_separable_set() {
        let data = stripe_dataset(10, 4);
        let mut net = toy_net(1);
        let cfg = TrainConfig { epochs: 60, batch: 8, lr: 0.05, class_weights: None, seed: 0 };
        let trace = train(&mut net, &data, &cfg).unwrap();
        let head: f64 = trace[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = trace[trace.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "loss did not decrease: {head} -> {tail}");
    }

    #[test]
    fn feature_maps_shape_and_nonnegativity() {
        let net = ConvNet::new(small_cfg()).unwrap();
        let x = rand_input(&[2, 6, 6], 30);
        let maps = net.feature_maps(&x).unwrap();
        assert_eq!(maps.len(), 3);
        for m in &maps {
            assert_eq!(m.shape, vec![4, 4]);
            assert!(m.data.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn feature_maps_distinguish_ordered_from_shuffled_input() {
        let net = ConvNet::new(ConvNetConfig {
            input: (1, 6, 6),
            k: 2,
            filter: (3, 3),
            out_len: 4,
            with_head: false,
            seed: 4,
        })
        .unwrap();
        // Block-structured "ordered" fixture vs a shuffled copy of it.
        let mut ordered = vec![0.0; 36];
        for y in 0..6 {
            for x in 0..3 {
                ordered[y * 6 + x] = 1.0;
            }
        }
        let mut shuffled = ordered.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        shuffled.shuffle(&mut rng);
        let a = net
            .feature_maps(&NdArray::from_vec(&[1, 6, 6], ordered).unwrap())
            .unwrap();
        let b = net
            .feature_maps(&NdArray::from_vec(&[1, 6, 6], shuffled).unwrap())
            .unwrap();
        assert_ne!(a[0].data, b[0].data);
    }

    #[test]
    fn inverse_frequency_weighting() {
        let w = inverse_frequency_weights(&[0, 0, 0, 1]);
        assert!((w[0] - 4.0 / 6.0).abs() < 1e-12);
        assert!((w[1] - 2.0).abs() < 1e-12);
        assert_eq!(inverse_frequency_weights(&[0, 0]), [1.0, 1.0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let mut net = toy_net(6);
        let data = stripe_dataset(4, 7);
        let cfg = TrainConfig { epochs: 2, batch: 4, lr: 0.01, class_weights: None, seed: 0 };
        train(&mut net, &data, &cfg).unwrap();
        save_checkpoint(&net, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, net);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        std::fs::write(
            path.with_extension("meta.json"),
            serde_json::to_string(&small_cfg()).unwrap(),
        )
        .unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn undersized_input_rejected() {
        let cfg = ConvNetConfig {
            input: (1, 2, 2),
            k: 1,
            filter: (3, 3),
            out_len: 1,
            with_head: false,
            seed: 0,
        };
        assert!(ConvNet::new(cfg).is_err());
    }
}
