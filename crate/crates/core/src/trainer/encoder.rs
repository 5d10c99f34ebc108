//! Small dense frame encoder followed by pooling and the speaker head.
//!
//! Per frame: `f = W2 tanh(W1 x + b1) + b2`; the frames are pooled into the
//! utterance embedding, which the head turns into class cosines.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;
use crate::modelmath::{
    subcenter_backward, subcenter_forward, FrameFeatures, MarginLoss, MqmhaParams, Pooling, SpeakerHead,
};

/// Head with `n_base + n_reserved` unit-norm random classes; the last
/// `n_reserved` are marked reserved.
pub fn build_head<R: Rng + ?Sized>(
    n_base: usize,
    n_reserved: usize,
    sub_centers: usize,
    dim: usize,
    rng: &mut R,
) -> Result<SpeakerHead> {
    if dim == 0 {
        return Err(Error::InvalidDim);
    }
    let mut mask = vec![false; n_base];
    mask.resize(n_base + n_reserved, true);
    SpeakerHead::random(n_base + n_reserved, sub_centers, dim, mask, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderShape {
    pub input_dim: usize,
    pub hidden: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub shape: EncoderShape,
    /// `hidden x input_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `channels x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub pooling: Pooling,
    pub head: SpeakerHead,
}

/// Gradient with the same layout as [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub pooling: Vec<f64>,
    pub head: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(p: &EncoderParams) -> Self {
        Self {
            w1: vec![0.0; p.w1.len()],
            b1: vec![0.0; p.b1.len()],
            w2: vec![0.0; p.w2.len()],
            b2: vec![0.0; p.b2.len()],
            pooling: vec![0.0; p.pooling_vectors().len()],
            head: vec![0.0; p.head.weights().len()],
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.pooling, &self.head].iter().flat_map(|v| v.iter().copied()).collect()
    }

    fn scale(&mut self, s: f64) {
        for t in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.pooling, &mut self.head] {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Pooling choice when creating a fresh encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolingKind {
    Gsp,
    Mqmha { queries: usize, heads: usize },
}

impl EncoderParams {
    /// Gaussian weights scaled by fan-in, zero biases.
    pub fn random<R: Rng + ?Sized>(
        shape: EncoderShape,
        pooling: PoolingKind,
        head: SpeakerHead,
        rng: &mut R,
    ) -> Result<Self> {
        let EncoderShape { input_dim, hidden, channels } = shape;
        if input_dim == 0 || hidden == 0 || channels == 0 {
            return Err(Error::InvalidDim);
        }
        let mut gauss = |n: usize, fan_in: usize| -> Vec<f64> {
            let s = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let w1 = gauss(hidden * input_dim, input_dim);
        let w2 = gauss(channels * hidden, hidden);
        let pooling = match pooling {
            PoolingKind::Gsp => Pooling::Gsp,
            PoolingKind::Mqmha { queries, heads } => {
                let mut p = MqmhaParams::zeros(queries, heads, channels)?;
                p.vectors = gauss(p.vectors.len(), p.head_dim);
                Pooling::Mqmha(p)
            }
        };
        let params = Self { shape, w1, b1: vec![0.0; hidden], w2, b2: vec![0.0; channels], pooling, head };
        params.check()?;
        Ok(params)
    }

    pub fn embedding_dim(&self) -> usize {
        self.pooling.out_dim(self.shape.channels)
    }

    pub fn check(&self) -> Result<()> {
        let s = self.shape;
        if self.w1.len() != s.hidden * s.input_dim
            || self.b1.len() != s.hidden
            || self.w2.len() != s.channels * s.hidden
            || self.b2.len() != s.channels
        {
            return Err(Error::Shape("encoder tensors do not match the declared shape".into()));
        }
        if let Pooling::Mqmha(p) = &self.pooling {
            if p.channels() != s.channels {
                return Err(Error::Shape("pooling channels differ from encoder channels".into()));
            }
        }
        if self.head.dim() != self.embedding_dim() {
            return Err(Error::Shape(format!(
                "head expects {}-dim embeddings, encoder makes {}",
                self.head.dim(),
                self.embedding_dim()
            )));
        }
        if !self.flat().iter().all(|v| v.is_finite()) {
            return Err(Error::Shape("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn pooling_vectors(&self) -> &[f64] {
        match &self.pooling {
            Pooling::Gsp => &[],
            Pooling::Mqmha(p) => &p.vectors,
        }
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        let pool: &mut [f64] = match &mut self.pooling {
            Pooling::Gsp => &mut [],
            Pooling::Mqmha(p) => &mut p.vectors,
        };
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, pool, self.head.weights_mut()]
    }

    /// All trainable values in a fixed order, matching [`Gradients::flat`].
    pub fn flat(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2, self.pooling_vectors(), self.head.weights()]
            .iter()
            .flat_map(|v| v.iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut rest = values;
        for t in self.tensors_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.copy_from_slice(head);
            rest = tail;
        }
        assert!(rest.is_empty(), "flat parameter vector is too long");
    }

    /// Visits every (parameter, gradient) tensor pair.
    pub(crate) fn zip_grads(&mut self, g: &Gradients, mut f: impl FnMut(usize, &mut [f64], &[f64])) {
        let grads: [&[f64]; 6] = [&g.w1, &g.b1, &g.w2, &g.b2, &g.pooling, &g.head];
        for (i, (p, gr)) in self.tensors_mut().into_iter().zip(grads).enumerate() {
            f(i, p, gr);
        }
    }

    fn frames(&self, x: &FeatureMatrix) -> Result<(Vec<f64>, FrameFeatures)> {
        let EncoderShape { input_dim, hidden, channels } = self.shape;
        if x.dim() != input_dim {
            return Err(Error::Shape(format!("features have {} dims, encoder expects {input_dim}", x.dim())));
        }
        let t = x.num_frames();
        if t == 0 {
            return Err(Error::Shape("no frames".into()));
        }
        let mut h1 = vec![0.0; t * hidden];
        let mut f = vec![0.0; t * channels];
        for (s, row) in x.rows().enumerate() {
            let h = &mut h1[s * hidden..(s + 1) * hidden];
            for (j, hj) in h.iter_mut().enumerate() {
                let w = &self.w1[j * input_dim..(j + 1) * input_dim];
                *hj = (self.b1[j] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>()).tanh();
            }
            let out = &mut f[s * channels..(s + 1) * channels];
            for (c, o) in out.iter_mut().enumerate() {
                let w = &self.w2[c * hidden..(c + 1) * hidden];
                *o = self.b2[c] + w.iter().zip(h.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok((h1, FrameFeatures::new(f, channels)?))
    }

    /// Utterance embedding: encoder then pooling, no head.
    pub fn embed(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        let (_, f) = self.frames(x)?;
        Ok(self.pooling.forward(&f)?.0)
    }

    /// Class cosines for one utterance.
    pub fn cosines(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(subcenter_forward(&self.embed(x)?, &self.head)?.cosines)
    }

    /// Loss of one labeled utterance, gradient accumulated into `grads`.
    pub fn sample_loss_grad(
        &self,
        x: &FeatureMatrix,
        label: usize,
        loss: MarginLoss,
        margin: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let EncoderShape { input_dim, hidden, channels } = self.shape;
        let (h1, f) = self.frames(x)?;
        let (emb, cache) = self.pooling.forward(&f)?;
        let sub = subcenter_forward(&emb, &self.head)?;
        let (value, g_cos) = loss.compute(&sub.cosines, label, self.head.scale, margin);
        let g_emb = subcenter_backward(&emb, &self.head, &sub, &g_cos, &mut grads.head);
        let (g_f, g_pool) = self.pooling.backward(&f, cache.as_ref(), &g_emb);
        for (a, b) in grads.pooling.iter_mut().zip(&g_pool) {
            *a += b;
        }
        let mut g_h = vec![0.0; hidden];
        for (s, row) in x.rows().enumerate() {
            let gf = &g_f[s * channels..(s + 1) * channels];
            let h = &h1[s * hidden..(s + 1) * hidden];
            g_h.fill(0.0);
            for (c, &g) in gf.iter().enumerate() {
                grads.b2[c] += g;
                let w = &self.w2[c * hidden..(c + 1) * hidden];
                let gw = &mut grads.w2[c * hidden..(c + 1) * hidden];
                for j in 0..hidden {
                    gw[j] += g * h[j];
                    g_h[j] += g * w[j];
                }
            }
            for j in 0..hidden {
                let ga = g_h[j] * (1.0 - h[j] * h[j]);
                grads.b1[j] += ga;
                let gw = &mut grads.w1[j * input_dim..(j + 1) * input_dim];
                for (g, xv) in gw.iter_mut().zip(row) {
                    *g += ga * xv;
                }
            }
        }
        Ok(value)
    }

    /// Mean loss over a batch and its gradient.
    pub fn batch_loss_grad(
        &self,
        batch: &[(&FeatureMatrix, usize)],
        loss: MarginLoss,
        margin: f64,
    ) -> Result<(f64, Gradients)> {
        let mut grads = Gradients::zeros_like(self);
        let mut total = 0.0;
        for &(x, label) in batch {
            total += self.sample_loss_grad(x, label, loss, margin, &mut grads)?;
        }
        let n = batch.len().max(1) as f64;
        grads.scale(1.0 / n);
        Ok((total / n, grads))
    }

    /// Mean loss only; used for validation and gradient checks.
    pub fn batch_loss(&self, batch: &[(&FeatureMatrix, usize)], loss: MarginLoss, margin: f64) -> Result<f64> {
        let mut total = 0.0;
        for &(x, label) in batch {
            let cos = self.cosines(x)?;
            total += loss.compute(&cos, label, self.head.scale, margin).0;
        }
        Ok(total / batch.len().max(1) as f64)
    }
}

pub fn embed(params: &EncoderParams, features: &FeatureMatrix) -> Result<Vec<f64>> {
    params.embed(features)
}

/// Embeds every utterance independently; output order follows the input.
pub fn embed_batch(params: &EncoderParams, features: &[&FeatureMatrix]) -> Result<Vec<Vec<f64>>> {
    features.par_iter().map(|f| params.embed(f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn toy(pooling: PoolingKind, s: u64) -> EncoderParams {
        let mut rng = seed::substream(s, "toy");
        let shape = EncoderShape { input_dim: 5, hidden: 6, channels: 4 };
        let edim = match pooling {
            PoolingKind::Gsp => 8,
            PoolingKind::Mqmha { queries, .. } => 8 * queries,
        };
        let head = build_head(3, 1, 2, edim, &mut rng).unwrap();
        EncoderParams::random(shape, pooling, head, &mut rng).unwrap()
    }

    fn feats(t: usize, s: u64) -> FeatureMatrix {
        let mut rng = seed::substream(s, "feats");
        FeatureMatrix::new((0..t * 5).map(|_| rng.random_range(-1.0..1.0)).collect(), 5, 0.01).unwrap()
    }

    #[test]
    fn head_accounting() {
        let mut rng = seed::substream(0, "h");
        let h = build_head(40, 10, 1, 8, &mut rng).unwrap();
        assert_eq!(h.num_classes(), 50);
        assert!((0..40).all(|j| !h.is_reserved(j)) && (40..50).all(|j| h.is_reserved(j)));
        assert_eq!(build_head(5, 0, 1, 8, &mut rng).unwrap().num_reserved(), 0);
        assert!(matches!(build_head(5, 1, 1, 0, &mut rng), Err(Error::InvalidDim)));
    }

    #[test]
    fn embed_is_deterministic_and_checks_shape() {
        let p = toy(PoolingKind::Gsp, 1);
        let x = feats(7, 2);
        assert_eq!(p.embed(&x).unwrap(), p.embed(&x).unwrap());
        let wrong = FeatureMatrix::new(vec![0.0; 12], 4, 0.01).unwrap();
        assert!(matches!(p.embed(&wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_encoder_embeds_bias() {
        let mut p = toy(PoolingKind::Gsp, 3);
        p.w1.fill(0.0);
        p.w2.fill(0.0);
        p.b2 = vec![0.5, -1.0, 2.0, 0.0];
        let e = p.embed(&feats(9, 4)).unwrap();
        for (a, b) in e[..4].iter().zip([0.5, -1.0, 2.0, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(e[4..].iter().all(|&s| s == crate::modelmath::VAR_FLOOR.sqrt()));
    }

    #[test]
    fn batch_embedding_has_no_cross_talk() {
        let p = toy(PoolingKind::Mqmha { queries: 2, heads: 2 }, 5);
        let xs: Vec<FeatureMatrix> = (0..4).map(|i| feats(3 + i, 10 + i as u64)).collect();
        let refs: Vec<&FeatureMatrix> = xs.iter().collect();
        let batch = embed_batch(&p, &refs).unwrap();
        for (x, e) in xs.iter().zip(&batch) {
            assert_eq!(&p.embed(x).unwrap(), e);
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut p = toy(PoolingKind::Mqmha { queries: 1, heads: 2 }, 6);
        let mut v = p.flat();
        v.iter_mut().for_each(|x| *x += 1.0);
        p.set_flat(&v);
        assert_eq!(p.flat(), v);
        assert_eq!(Gradients::zeros_like(&p).flat().len(), v.len());
    }
}
