use rand::Rng;
use rand_distr::StandardNormal;

use super::{dot, norm};
use crate::error::{Error, Result};

/// Classification head: `K` sub-center weight vectors of length `E` for
/// each of `J` classes, plus the mask of classes that have no positive
/// samples in the current stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerHead {
    classes: usize,
    sub_centers: usize,
    dim: usize,
    weights: Vec<f64>,
    reserved: Vec<bool>,
    pub scale: f64,
    pub margin: f64,
}

impl SpeakerHead {
    pub fn new(
        classes: usize,
        sub_centers: usize,
        dim: usize,
        weights: Vec<f64>,
        reserved: Vec<bool>,
        scale: f64,
        margin: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDim);
        }
        if sub_centers == 0 {
            return Err(Error::InvalidConfig("at least one sub-center per class".into()));
        }
        if weights.len() != classes * sub_centers * dim || reserved.len() != classes {
            return Err(Error::Shape("head weights do not match J x K x E".into()));
        }
        if !(scale > 0.0) || !(margin >= 0.0) {
            return Err(Error::InvalidConfig("scale must be > 0 and margin >= 0".into()));
        }
        let head = Self { classes, sub_centers, dim, weights, reserved, scale, margin };
        if (0..classes * sub_centers).any(|r| norm(head.flat_row(r)) == 0.0) {
            return Err(Error::DegenerateEmbedding);
        }
        Ok(head)
    }

    /// Unit-norm Gaussian-direction rows.
    pub fn random<R: Rng + ?Sized>(
        classes: usize,
        sub_centers: usize,
        dim: usize,
        reserved: Vec<bool>,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDim);
        }
        let mut weights = Vec::with_capacity(classes * sub_centers * dim);
        for _ in 0..classes * sub_centers {
            weights.extend(random_unit(dim, rng));
        }
        Self::new(classes, sub_centers, dim, weights, reserved, 30.0, 0.0)
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn sub_centers(&self) -> usize {
        self.sub_centers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_reserved(&self, class: usize) -> bool {
        self.reserved[class]
    }

    pub fn reserved_mask(&self) -> &[bool] {
        &self.reserved
    }

    pub fn set_reserved_mask(&mut self, mask: Vec<bool>) {
        assert_eq!(mask.len(), self.classes);
        self.reserved = mask;
    }

    pub fn num_reserved(&self) -> usize {
        self.reserved.iter().filter(|&&r| r).count()
    }

    pub fn center(&self, class: usize, k: usize) -> &[f64] {
        self.flat_row(class * self.sub_centers + k)
    }

    pub fn center_mut(&mut self, class: usize, k: usize) -> &mut [f64] {
        let o = (class * self.sub_centers + k) * self.dim;
        &mut self.weights[o..o + self.dim]
    }

    /// All sub-center rows of one class, `K * E` values.
    pub fn class_block(&self, class: usize) -> &[f64] {
        let w = self.sub_centers * self.dim;
        &self.weights[class * w..(class + 1) * w]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn flat_row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.dim..(r + 1) * self.dim]
    }
}

pub(crate) fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Per-class cosines and the sub-center that produced each.
#[derive(Debug, Clone, PartialEq)]
pub struct SubcenterOutput {
    pub cosines: Vec<f64>,
    pub best: Vec<usize>,
    x_norm: f64,
}

pub fn subcenter_cosine(x: &[f64], head: &SpeakerHead) -> Result<Vec<f64>> {
    subcenter_forward(x, head).map(|o| o.cosines)
}

/// `cos θ_j = max_k <x/|x|, W_jk/|W_jk|>`; ties go to the lowest `k`.
pub fn subcenter_forward(x: &[f64], head: &SpeakerHead) -> Result<SubcenterOutput> {
    if x.len() != head.dim {
        return Err(Error::Shape(format!("embedding has {} dims, head expects {}", x.len(), head.dim)));
    }
    let x_norm = norm(x);
    if x_norm == 0.0 || !x_norm.is_finite() {
        return Err(Error::DegenerateEmbedding);
    }
    let mut cosines = Vec::with_capacity(head.classes);
    let mut best = Vec::with_capacity(head.classes);
    for j in 0..head.classes {
        let mut top = (f64::NEG_INFINITY, 0);
        for k in 0..head.sub_centers {
            let w = head.center(j, k);
            let c = (dot(x, w) / (x_norm * norm(w))).clamp(-1.0, 1.0);
            if c > top.0 {
                top = (c, k);
            }
        }
        cosines.push(top.0);
        best.push(top.1);
    }
    Ok(SubcenterOutput { cosines, best, x_norm })
}

/// Gradient of the cosines w.r.t. the embedding; head-weight gradients are
/// accumulated into `grad_w` (same layout as the head weights). Only the
/// winning sub-center of each class receives gradient.
pub fn subcenter_backward(
    x: &[f64],
    head: &SpeakerHead,
    fwd: &SubcenterOutput,
    grad_cos: &[f64],
    grad_w: &mut [f64],
) -> Vec<f64> {
    let e = head.dim;
    let mut grad_x = vec![0.0; e];
    for j in 0..head.classes {
        let g = grad_cos[j];
        if g == 0.0 {
            continue;
        }
        let k = fwd.best[j];
        let w = head.center(j, k);
        let w_norm = norm(w);
        let c = fwd.cosines[j];
        let o = (j * head.sub_centers + k) * e;
        for i in 0..e {
            let xh = x[i] / fwd.x_norm;
            let wh = w[i] / w_norm;
            grad_x[i] += g * (wh - c * xh) / fwd.x_norm;
            grad_w[o + i] += g * (xh - c * wh) / w_norm;
        }
    }
    grad_x
}
