use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;

use super::dot;
use crate::error::{Error, Result};

/// Variance floor applied before every square root.
pub const VAR_FLOOR: f64 = 1e-10;

/// Row-major `T x C` frame-level encoder outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    data: Vec<f64>,
    channels: usize,
}

impl FrameFeatures {
    pub fn new(data: Vec<f64>, channels: usize) -> Result<Self> {
        if channels == 0 || data.is_empty() || !data.len().is_multiple_of(channels) {
            return Err(Error::Shape(format!("{} values with {channels} channels", data.len())));
        }
        Ok(Self { data, channels })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.concat(), c)
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Weighted mean and standard deviation of the channels in `cols`, written
/// as `[mean.., std..]` into `out`.
fn weighted_stats(h: &FrameFeatures, weights: &[f64], cols: Range<usize>, out: &mut [f64]) {
    let width = cols.len();
    let (mean, std) = out.split_at_mut(width);
    mean.fill(0.0);
    std.fill(0.0);
    for (t, &a) in weights.iter().enumerate() {
        for (m, x) in mean.iter_mut().zip(&h.row(t)[cols.clone()]) {
            *m += a * x;
        }
    }
    for (t, &a) in weights.iter().enumerate() {
        for ((v, m), x) in std.iter_mut().zip(mean.iter()).zip(&h.row(t)[cols.clone()]) {
            let d = x - m;
            *v += a * d * d;
        }
    }
    for v in std.iter_mut() {
        *v = v.max(VAR_FLOOR).sqrt();
    }
}

/// Backward of [`weighted_stats`]: accumulates into `grad_h` (full `T x C`)
/// and `grad_w` (per frame).
fn weighted_stats_backward(
    h: &FrameFeatures,
    weights: &[f64],
    cols: Range<usize>,
    stats: &[f64],
    grad_out: &[f64],
    grad_h: &mut [f64],
    grad_w: &mut [f64],
) {
    let width = cols.len();
    let (mean, std) = stats.split_at(width);
    let (g_mean, g_std) = grad_out.split_at(width);
    // clamped variances pass no gradient
    let g_var: Vec<f64> = std
        .iter()
        .zip(g_std)
        .map(|(&s, &g)| if s * s > VAR_FLOOR { g / (2.0 * s) } else { 0.0 })
        .collect();
    let c = h.channels();
    for (t, &a) in weights.iter().enumerate() {
        let x = &h.row(t)[cols.clone()];
        let gh = &mut grad_h[t * c + cols.start..t * c + cols.end];
        let mut gw = 0.0;
        for j in 0..width {
            let d = x[j] - mean[j];
            gh[j] += a * (g_mean[j] + 2.0 * g_var[j] * d);
            gw += g_mean[j] * x[j] + g_var[j] * d * d;
        }
        grad_w[t] += gw;
    }
}

/// Global statistics pooling: per-channel mean then per-channel population
/// standard deviation, `2C` values.
pub fn gsp(h: &FrameFeatures) -> Vec<f64> {
    let t = h.frames();
    let weights = vec![1.0 / t as f64; t];
    let mut out = vec![0.0; 2 * h.channels()];
    weighted_stats(h, &weights, 0..h.channels(), &mut out);
    out
}

pub fn gsp_backward(h: &FrameFeatures, grad_out: &[f64]) -> Vec<f64> {
    let t = h.frames();
    let weights = vec![1.0 / t as f64; t];
    let stats = gsp(h);
    let mut grad_h = vec![0.0; h.as_slice().len()];
    let mut grad_w = vec![0.0; t];
    weighted_stats_backward(h, &weights, 0..h.channels(), &stats, grad_out, &mut grad_h, &mut grad_w);
    grad_h
}

/// Scoring vectors for multi-query multi-head attention pooling: one
/// vector of length `C / heads` per (query, head).
#[derive(Debug, Clone, PartialEq)]
pub struct MqmhaParams {
    pub queries: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub vectors: Vec<f64>,
}

impl MqmhaParams {
    pub fn zeros(queries: usize, heads: usize, channels: usize) -> Result<Self> {
        if queries == 0 || heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::InvalidHeadSplit { channels, heads });
        }
        let head_dim = channels / heads;
        Ok(Self { queries, heads, head_dim, vectors: vec![0.0; queries * heads * head_dim] })
    }

    pub fn random<R: Rng + ?Sized>(
        queries: usize,
        heads: usize,
        channels: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(queries, heads, channels)?;
        for v in &mut p.vectors {
            *v = std * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(p)
    }

    pub fn channels(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn out_dim(&self) -> usize {
        2 * self.channels() * self.queries
    }

    fn vector(&self, q: usize, i: usize) -> &[f64] {
        let o = (q * self.heads + i) * self.head_dim;
        &self.vectors[o..o + self.head_dim]
    }
}

/// Attention weights per (query, head), kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MqmhaCache {
    pub attention: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

pub fn mqmha(h: &FrameFeatures, params: &MqmhaParams) -> Result<Vec<f64>> {
    mqmha_forward(h, params).map(|c| c.output)
}

/// For each (query, head): softmax over time of the head's channels
/// projected on the scoring vector, then the attention-weighted mean and
/// standard deviation of those channels. Blocks are laid out query-major.
pub fn mqmha_forward(h: &FrameFeatures, params: &MqmhaParams) -> Result<MqmhaCache> {
    let c = h.channels();
    if params.heads == 0 || !c.is_multiple_of(params.heads) {
        return Err(Error::InvalidHeadSplit { channels: c, heads: params.heads });
    }
    if params.channels() != c {
        return Err(Error::Shape(format!(
            "pooling expects {} channels, frames have {c}",
            params.channels()
        )));
    }
    let t = h.frames();
    let hd = params.head_dim;
    let mut output = vec![0.0; params.out_dim()];
    let mut attention = Vec::with_capacity(params.queries * params.heads);
    for q in 0..params.queries {
        for i in 0..params.heads {
            let cols = i * hd..(i + 1) * hd;
            let v = params.vector(q, i);
            let scores: Vec<f64> = (0..t).map(|s| dot(&h.row(s)[cols.clone()], v)).collect();
            let a = softmax(&scores);
            let block = (q * params.heads + i) * 2 * hd;
            weighted_stats(h, &a, cols, &mut output[block..block + 2 * hd]);
            attention.push(a);
        }
    }
    Ok(MqmhaCache { attention, output })
}

/// Returns `(grad_h, grad_vectors)`.
pub fn mqmha_backward(
    h: &FrameFeatures,
    params: &MqmhaParams,
    cache: &MqmhaCache,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let t = h.frames();
    let c = h.channels();
    let hd = params.head_dim;
    let mut grad_h = vec![0.0; t * c];
    let mut grad_v = vec![0.0; params.vectors.len()];
    let mut grad_a = vec![0.0; t];
    for q in 0..params.queries {
        for i in 0..params.heads {
            let idx = q * params.heads + i;
            let cols = i * hd..(i + 1) * hd;
            let block = idx * 2 * hd..(idx + 1) * 2 * hd;
            let a = &cache.attention[idx];
            grad_a.fill(0.0);
            weighted_stats_backward(
                h,
                a,
                cols.clone(),
                &cache.output[block.clone()],
                &grad_out[block],
                &mut grad_h,
                &mut grad_a,
            );
            let avg: f64 = dot(a, &grad_a);
            let v = params.vector(q, i);
            let gv = &mut grad_v[idx * hd..(idx + 1) * hd];
            for s in 0..t {
                let g_score = a[s] * (grad_a[s] - avg);
                let x = &h.row(s)[cols.clone()];
                let gh = &mut grad_h[s * c + cols.start..s * c + cols.end];
                for j in 0..hd {
                    gh[j] += g_score * v[j];
                    gv[j] += g_score * x[j];
                }
            }
        }
    }
    (grad_h, grad_v)
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.iter().map(|v| v / sum).collect()
}

/// Either pooling layer behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Pooling {
    Gsp,
    Mqmha(MqmhaParams),
}

impl Pooling {
    pub fn out_dim(&self, channels: usize) -> usize {
        match self {
            Pooling::Gsp => 2 * channels,
            Pooling::Mqmha(p) => p.out_dim(),
        }
    }

    pub fn forward(&self, h: &FrameFeatures) -> Result<(Vec<f64>, Option<MqmhaCache>)> {
        match self {
            Pooling::Gsp => Ok((gsp(h), None)),
            Pooling::Mqmha(p) => {
                let cache = mqmha_forward(h, p)?;
                Ok((cache.output.clone(), Some(cache)))
            }
        }
    }

    /// Returns the frame gradient and, for attention pooling, the
    /// scoring-vector gradient.
    pub fn backward(
        &self,
        h: &FrameFeatures,
        cache: Option<&MqmhaCache>,
        grad_out: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        match (self, cache) {
            (Pooling::Gsp, _) => (gsp_backward(h, grad_out), Vec::new()),
            (Pooling::Mqmha(p), Some(c)) => mqmha_backward(h, p, c, grad_out),
            (Pooling::Mqmha(p), None) => {
                let c = mqmha_forward(h, p).expect("shapes were validated in forward");
                mqmha_backward(h, p, &c, grad_out)
            }
        }
    }
}
