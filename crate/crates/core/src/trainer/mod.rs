//! Three-stage training on synthetic speakers: pre-training with reserved
//! target classes, fine-tuning on source plus target, and a short
//! large-margin pass on the target alone.

mod encoder;
mod experiment;
mod params;
pub mod synthetic;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

pub use encoder::{build_head, embed, embed_batch, EncoderParams, EncoderShape, Gradients, PoolingKind};
pub use experiment::{ArmResult, TransferExperiment};
pub use params::{read_params, write_params};
pub use synthetic::{Dataset, Domain, Sample, Split, SynthSpeaker, SyntheticConfig, SyntheticSpeakerSet};

use crate::error::{Error, Result};
use crate::frontend::{chunk, FeatureMatrix};
use crate::modelmath::{margin_at, MarginCurve, MarginLoss, MarginSchedule};

/// Learning rates of the full-scale recipe; toy runs multiply both by
/// [`TrainConfig::lr_scale`].
pub const BASE_LR_STAGE1: f64 = 0.08;
pub const BASE_LR_STAGE2: f64 = 2e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// Relative improvement needed to count as better.
    pub threshold: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self { factor: 0.1, patience: 2, min_lr: 1e-6, threshold: 1e-4 }
    }
}

/// Reduce-on-plateau over a metric where lower is better.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    cfg: PlateauConfig,
    lr: f64,
    best: f64,
    bad: usize,
    reductions: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, cfg: PlateauConfig) -> Self {
        Self { cfg, lr, best: f64::INFINITY, bad: 0, reductions: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn reductions(&self) -> usize {
        self.reductions
    }

    /// Feeds one validation result and returns the lr to use next.
    pub fn step(&mut self, metric: f64) -> f64 {
        if metric < self.best * (1.0 - self.cfg.threshold.copysign(self.best)) {
            self.best = metric;
            self.bad = 0;
        } else {
            self.bad += 1;
        }
        if self.bad > self.cfg.patience {
            let next = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
            if next < self.lr {
                self.lr = next;
                self.reductions += 1;
            }
            self.bad = 0;
        }
        self.lr
    }
}

/// SGD with classical momentum and weight decay added to the gradient.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Option<Vec<Vec<f64>>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, buffers: None }
    }

    pub fn step(&mut self, params: &mut EncoderParams, grads: &Gradients, lr: f64) {
        let (mu, wd) = (self.momentum, self.weight_decay);
        let fresh = self.buffers.is_none();
        let bufs = self.buffers.get_or_insert_with(|| {
            let g = grads;
            [&g.w1, &g.b1, &g.w2, &g.b2, &g.pooling, &g.head].iter().map(|t| vec![0.0; t.len()]).collect()
        });
        params.zip_grads(grads, |i, p, g| {
            let buf = &mut bufs[i];
            for ((w, &gw), b) in p.iter_mut().zip(g).zip(buf.iter_mut()) {
                let d = gw + wd * *w;
                *b = if fresh { d } else { mu * *b + d };
                *w -= lr * *b;
            }
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
    LargeMargin,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::Pretrain => 1,
            Stage::Finetune => 2,
            Stage::LargeMargin => 3,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Stage::Pretrain),
            2 => Ok(Stage::Finetune),
            3 => Ok(Stage::LargeMargin),
            _ => Err(Error::InvalidConfig(format!("stage must be 1, 2 or 3, got {n}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub plateau: PlateauConfig,
    pub chunk_len: usize,
    /// `total_steps` is replaced by the run length, so the first update uses
    /// the start margin and the last one the end margin.
    pub margin: MarginSchedule,
    pub loss: MarginLoss,
    pub epochs: usize,
    /// Iterations between validations; `None` means once per epoch.
    pub val_period: Option<usize>,
}

impl TrainConfig {
    fn base(stage: Stage, lr: f64) -> Self {
        Self {
            stage,
            lr,
            momentum: 0.9,
            weight_decay: 1e-3,
            batch: 32,
            plateau: PlateauConfig::default(),
            chunk_len: 200,
            margin: MarginSchedule::constant(0.2),
            loss: MarginLoss::Am,
            epochs: 10,
            val_period: None,
        }
    }

    /// AM-Softmax with the margin rising linearly from 0 to 0.2.
    pub fn stage1(lr_scale: f64) -> Self {
        let mut c = Self::base(Stage::Pretrain, BASE_LR_STAGE1 * lr_scale);
        c.margin = MarginSchedule { start_m: 0.0, end_m: 0.2, curve: MarginCurve::Linear, total_steps: 1 };
        c
    }

    /// Same as stage 1 apart from the learning rate; margin held at 0.2.
    pub fn stage2(lr_scale: f64) -> Self {
        Self::base(Stage::Finetune, BASE_LR_STAGE2 * lr_scale)
    }

    /// One epoch of AAM-Softmax on 400-frame chunks, margin 0.2 to 0.5.
    pub fn stage3(lr_scale: f64) -> Self {
        let mut c = Self::base(Stage::LargeMargin, BASE_LR_STAGE2 * lr_scale);
        c.chunk_len = 400;
        c.loss = MarginLoss::Aam;
        c.margin = MarginSchedule { start_m: 0.2, end_m: 0.5, curve: MarginCurve::Exponential, total_steps: 1 };
        c.epochs = 1;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be > 0, got {}", self.lr)));
        }
        let p = &self.plateau;
        if !(p.factor > 0.0 && p.factor < 1.0) {
            return Err(Error::InvalidConfig(format!("plateau factor must be in (0, 1), got {}", p.factor)));
        }
        if !(p.min_lr >= 0.0) || !(p.threshold >= 0.0) {
            return Err(Error::InvalidConfig("plateau min_lr and threshold must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("momentum must be in [0, 1) and weight decay >= 0".into()));
        }
        if self.batch == 0 || self.chunk_len == 0 || self.val_period == Some(0) {
            return Err(Error::InvalidConfig("batch, chunk_len and val_period must be >= 1".into()));
        }
        self.margin.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub margin: f64,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub stage: Stage,
    pub steps: usize,
    pub log: Vec<LogRow>,
    pub before: Validation,
    pub after: Validation,
    pub final_lr: f64,
    pub lr_reductions: usize,
    /// Mean loss of the last update, `NaN` when nothing ran.
    pub final_loss: f64,
    pub first_margin: Option<f64>,
    pub last_margin: Option<f64>,
    /// Frames per training chunk as fed to the encoder.
    pub chunk_frames: Option<usize>,
}

pub fn write_train_log<W: Write>(mut w: W, rows: &[LogRow]) -> std::io::Result<()> {
    writeln!(w, "step,lr,margin,loss,val_acc")?;
    for r in rows {
        writeln!(w, "{},{:e},{:.6},{:.6},{:.6}", r.step, r.lr, r.margin, r.loss, r.val_acc)?;
    }
    Ok(())
}

fn eval_chunk(x: &FeatureMatrix, len: usize) -> FeatureMatrix {
    if x.num_frames() >= len {
        FeatureMatrix::new(x.as_slice()[..len * x.dim()].to_vec(), x.dim(), x.frame_shift).unwrap()
    } else {
        let rows: Vec<Vec<f64>> = (0..len).map(|i| x.row(i % x.num_frames()).to_vec()).collect();
        FeatureMatrix::from_rows(&rows, x.frame_shift).unwrap()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Margin-free loss and top-1 accuracy over all head classes, using the
/// first `chunk_len` frames of every utterance.
pub fn validate(params: &EncoderParams, data: &Dataset, loss: MarginLoss, chunk_len: usize) -> Result<Validation> {
    use rayon::prelude::*;
    if data.is_empty() {
        return Ok(Validation { loss: f64::NAN, accuracy: f64::NAN });
    }
    let per: Vec<(f64, bool)> = data
        .samples
        .par_iter()
        .map(|s| {
            let cos = params.cosines(&eval_chunk(&s.features, chunk_len))?;
            let l = loss.compute(&cos, s.label, params.head.scale, 0.0).0;
            Ok((l, argmax(&cos) == s.label))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    Ok(Validation {
        loss: per.iter().map(|p| p.0).sum::<f64>() / n,
        accuracy: per.iter().filter(|p| p.1).count() as f64 / n,
    })
}

fn check_labels(params: &EncoderParams, data: &Dataset, stage: Stage) -> Result<()> {
    let j = params.head.num_classes();
    if data.num_classes != j {
        return Err(Error::Shape(format!("data has {} classes, head has {j}", data.num_classes)));
    }
    for s in &data.samples {
        if s.label >= j {
            return Err(Error::Shape(format!("label {} out of range for {j} classes", s.label)));
        }
        if stage == Stage::Pretrain && params.head.is_reserved(s.label) {
            return Err(Error::LabelLeak(s.label));
        }
    }
    Ok(())
}

/// Generic loop shared by all stages.
pub fn train_stage<R: Rng + ?Sized>(
    params: &mut EncoderParams,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    cfg.validate()?;
    params.check()?;
    check_labels(params, train, cfg.stage)?;
    let per_epoch = train.len().div_ceil(cfg.batch);
    let total = per_epoch * cfg.epochs;
    let sched = MarginSchedule { total_steps: total.saturating_sub(1).max(1), ..cfg.margin };
    let val_period = cfg.val_period.unwrap_or(per_epoch.max(1));
    let before = validate(params, val, cfg.loss, cfg.chunk_len)?;

    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut plateau = PlateauScheduler::new(cfg.lr, cfg.plateau);
    let mut log = Vec::new();
    let (mut step, mut window_loss, mut window_n) = (0usize, 0.0, 0usize);
    let (mut first_margin, mut last_margin, mut final_loss) = (None, None, f64::NAN);
    let mut chunk_frames = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(cfg.batch) {
            let chunks: Vec<(FeatureMatrix, usize)> = idx
                .iter()
                .map(|&i| {
                    let s = &train.samples[i];
                    if cfg.stage == Stage::Pretrain && params.head.is_reserved(s.label) {
                        return Err(Error::LabelLeak(s.label));
                    }
                    Ok((chunk(&s.features, cfg.chunk_len, rng)?, s.label))
                })
                .collect::<Result<_>>()?;
            let batch: Vec<(&FeatureMatrix, usize)> = chunks.iter().map(|(x, l)| (x, *l)).collect();
            chunk_frames.get_or_insert(batch[0].0.num_frames());
            let margin = margin_at(step, &sched)?;
            first_margin.get_or_insert(margin);
            last_margin = Some(margin);
            let (loss, grads) = params.batch_loss_grad(&batch, cfg.loss, margin)?;
            opt.step(params, &grads, plateau.lr());
            if !params.flat().iter().all(|v| v.is_finite()) {
                return Err(Error::Shape(format!("non-finite parameters after step {step}")));
            }
            step += 1;
            final_loss = loss;
            window_loss += loss;
            window_n += 1;
            if step % val_period == 0 {
                let v = validate(params, val, cfg.loss, cfg.chunk_len)?;
                let lr = plateau.lr();
                let monitor = if v.loss.is_nan() { window_loss / window_n as f64 } else { v.loss };
                plateau.step(monitor);
                log.push(LogRow { step, lr, margin, loss: window_loss / window_n as f64, val_acc: v.accuracy });
                log::debug!("stage {} step {step}: loss {:.4} val_acc {:.4}", cfg.stage.number(), window_loss / window_n as f64, v.accuracy);
                window_loss = 0.0;
                window_n = 0;
            }
        }
    }
    let after = validate(params, val, cfg.loss, cfg.chunk_len)?;
    Ok(TrainReport {
        stage: cfg.stage,
        steps: step,
        log,
        before,
        after,
        final_lr: plateau.lr(),
        lr_reductions: plateau.reductions(),
        final_loss,
        first_margin,
        last_margin,
        chunk_frames,
    })
}

/// Stage 1: source speakers only. Reserved classes act purely as negatives.
pub fn pretrain_stage1<R: Rng + ?Sized>(
    mut params: EncoderParams,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(EncoderParams, TrainReport)> {
    check_labels(&params, train, Stage::Pretrain)?;
    let cfg = TrainConfig { stage: Stage::Pretrain, ..cfg.clone() };
    let report = train_stage(&mut params, train, val, &cfg, rng)?;
    Ok((params, report))
}

/// Builds the stage-2 model: the encoder is copied, head row `j` is copied
/// from stage-1 class `mapping[j]` or drawn fresh when `None`. Classes left
/// unmapped (the speed-perturbed source copies) are dropped.
pub fn transfer_to_stage2<R: Rng + ?Sized>(
    stage1: &EncoderParams,
    mapping: &[Option<usize>],
    rng: &mut R,
) -> Result<EncoderParams> {
    let old = &stage1.head;
    let (k, e) = (old.sub_centers(), old.dim());
    if let Some(&bad) = mapping.iter().flatten().find(|&&j| j >= old.num_classes()) {
        return Err(Error::BadMapping(bad));
    }
    let mut weights = Vec::with_capacity(mapping.len() * k * e);
    for m in mapping {
        match m {
            Some(j) => weights.extend_from_slice(old.class_block(*j)),
            None => {
                for _ in 0..k {
                    weights.extend(crate::modelmath::random_unit(e, rng));
                }
            }
        }
    }
    let head = crate::modelmath::SpeakerHead::new(
        mapping.len(),
        k,
        e,
        weights,
        vec![false; mapping.len()],
        old.scale,
        old.margin,
    )?;
    Ok(EncoderParams { head, ..stage1.clone() })
}

/// Stage 2: source (no speed copies) plus target speakers at the small lr.
pub fn finetune_stage2<R: Rng + ?Sized>(
    mut params: EncoderParams,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(EncoderParams, TrainReport)> {
    let cfg = TrainConfig { stage: Stage::Finetune, ..cfg.clone() };
    let report = train_stage(&mut params, train, val, &cfg, rng)?;
    Ok((params, report))
}

/// Stage 3: exactly one epoch over the target data; the report keeps the
/// validation result from before and after.
pub fn lmft_stage3<R: Rng + ?Sized>(
    mut params: EncoderParams,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(EncoderParams, TrainReport)> {
    let cfg = TrainConfig { stage: Stage::LargeMargin, epochs: 1, ..cfg.clone() };
    let report = train_stage(&mut params, train, val, &cfg, rng)?;
    Ok((params, report))
}
