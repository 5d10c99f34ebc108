//! Synthetic speakers standing in for a large close-talk corpus (source) and
//! a small far-field corpus (target).
//!
//! Every speaker owns a random center and each speed variant shifts it by a
//! small per-variant offset, so the variants act as distinct but related
//! classes. Frames are `center + utterance offset + frame noise`; target
//! frames additionally pass through a fixed rotation and bias.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::augment::SpeedVariant;
use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_source: usize,
    pub n_target: usize,
    pub dim: usize,
    /// Frames per utterance.
    pub frames: usize,
    /// Utterances per (speaker, variant) in each split.
    pub train_utts: usize,
    pub val_utts: usize,
    /// Validation utterances per target speaker; kept separate so the
    /// transfer metric can be measured on a larger set.
    pub target_val_utts: usize,
    pub eval_utts: usize,
    pub center_std: f64,
    pub variant_std: f64,
    pub utt_std: f64,
    pub frame_std: f64,
    /// 0 keeps the identity; larger values rotate further from it.
    pub shift_rotation: f64,
    pub shift_bias: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_source: 40,
            n_target: 10,
            dim: 24,
            frames: 240,
            train_utts: 6,
            val_utts: 2,
            target_val_utts: 10,
            eval_utts: 4,
            center_std: 1.0,
            variant_std: 0.35,
            utt_std: 0.3,
            frame_std: 1.0,
            shift_rotation: 0.5,
            shift_bias: 0.5,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_source == 0 || self.dim == 0 || self.frames == 0 || self.train_utts == 0 {
            return Err(Error::InvalidConfig("synthetic set needs speakers, dims, frames and utterances".into()));
        }
        let stds = [self.center_std, self.variant_std, self.utt_std, self.frame_std, self.shift_rotation, self.shift_bias];
        if stds.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig("synthetic spreads must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Eval,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSpeaker {
    pub name: String,
    pub domain: Domain,
    /// One center per [`SpeedVariant`], in `SpeedVariant::ALL` order.
    pub centers: [Vec<f64>; 3],
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub speaker: String,
    pub label: usize,
    pub features: FeatureMatrix,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Class layout of the stage-1 head: `3 * n_source` base classes (variant
/// major, as produced by speed expansion) then `3 * n_target` reserved ones.
pub fn stage1_class(n_source: usize, n_target: usize, domain: Domain, index: usize, v: SpeedVariant) -> usize {
    let vi = variant_index(v);
    match domain {
        Domain::Source => vi * n_source + index,
        Domain::Target => 3 * n_source + vi * n_target + index,
    }
}

/// Stage-2 layout: original-speed source speakers, then every target
/// (speaker, variant) in the same order the reserved block uses.
pub fn stage2_class(n_source: usize, n_target: usize, domain: Domain, index: usize, v: SpeedVariant) -> Option<usize> {
    match domain {
        Domain::Source => (v == SpeedVariant::Original).then_some(index),
        Domain::Target => Some(n_source + variant_index(v) * n_target + index),
    }
}

/// Stage-2 to stage-1 mapping. With `reserved` the target classes reuse the
/// reserved rows; without, they start fresh.
pub fn stage2_mapping(n_source: usize, n_target: usize, reserved: bool) -> Vec<Option<usize>> {
    let mut m: Vec<Option<usize>> = (0..n_source).map(Some).collect();
    for t in 0..3 * n_target {
        m.push(reserved.then_some(3 * n_source + t));
    }
    m
}

fn variant_index(v: SpeedVariant) -> usize {
    SpeedVariant::ALL.iter().position(|&x| x == v).unwrap()
}

#[derive(Debug, Clone)]
pub struct SyntheticSpeakerSet {
    cfg: SyntheticConfig,
    seed: u64,
    source: Vec<SynthSpeaker>,
    target: Vec<SynthSpeaker>,
    /// `dim x dim` orthogonal matrix, row-major.
    rotation: Vec<f64>,
    bias: Vec<f64>,
}

fn gauss<R: Rng + ?Sized>(n: usize, std: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Gram-Schmidt on the rows of `I + a * G`.
fn near_identity_rotation<R: Rng + ?Sized>(d: usize, a: f64, rng: &mut R) -> Vec<f64> {
    let g = gauss(d * d, 1.0, rng);
    let mut m: Vec<f64> = (0..d * d).map(|i| a * g[i] + if i / d == i % d { 1.0 } else { 0.0 }).collect();
    for r in 0..d {
        for p in 0..r {
            let dot: f64 = (0..d).map(|c| m[r * d + c] * m[p * d + c]).sum();
            for c in 0..d {
                m[r * d + c] -= dot * m[p * d + c];
            }
        }
        let n = (0..d).map(|c| m[r * d + c].powi(2)).sum::<f64>().sqrt();
        for c in 0..d {
            m[r * d + c] /= n;
        }
    }
    m
}

impl SyntheticSpeakerSet {
    pub fn new(cfg: SyntheticConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let make = |domain: Domain, n: usize, tag: &str| -> Vec<SynthSpeaker> {
            (0..n)
                .map(|i| {
                    let name = format!("{tag}{i:04}");
                    let mut rng = seed::derive(seed, &["synth-speaker", &name]);
                    let base = gauss(cfg.dim, cfg.center_std, &mut rng);
                    let centers = std::array::from_fn(|v| {
                        if v == 0 {
                            base.clone()
                        } else {
                            let off = gauss(cfg.dim, cfg.variant_std, &mut rng);
                            base.iter().zip(off).map(|(a, b)| a + b).collect()
                        }
                    });
                    SynthSpeaker { name, domain, centers }
                })
                .collect()
        };
        let mut rng = seed::substream(seed, "synth-shift");
        let rotation = near_identity_rotation(cfg.dim, cfg.shift_rotation, &mut rng);
        let bias = gauss(cfg.dim, cfg.shift_bias, &mut rng);
        Ok(Self {
            source: make(Domain::Source, cfg.n_source, "src"),
            target: make(Domain::Target, cfg.n_target, "tgt"),
            cfg,
            seed,
            rotation,
            bias,
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.cfg
    }

    pub fn source(&self) -> &[SynthSpeaker] {
        &self.source
    }

    pub fn target(&self) -> &[SynthSpeaker] {
        &self.target
    }

    pub fn speakers(&self, domain: Domain) -> &[SynthSpeaker] {
        match domain {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }

    /// Utterance id, e.g. `sp0.9-tgt0003-val-001`.
    pub fn utterance_id(speaker: &SynthSpeaker, v: SpeedVariant, split: Split, idx: usize) -> String {
        format!("{}-{}-{idx:03}", v.label(&speaker.name), split.name())
    }

    /// Deterministic in (seed, speaker, variant, split, index) alone.
    pub fn utterance(&self, speaker: &SynthSpeaker, v: SpeedVariant, split: Split, idx: usize) -> FeatureMatrix {
        let id = Self::utterance_id(speaker, v, split, idx);
        let mut rng = seed::derive(self.seed, &["synth-utt", &id]);
        let d = self.cfg.dim;
        let center = &speaker.centers[variant_index(v)];
        let utt = gauss(d, self.cfg.utt_std, &mut rng);
        let mut data = Vec::with_capacity(self.cfg.frames * d);
        let mut frame = vec![0.0; d];
        for _ in 0..self.cfg.frames {
            for i in 0..d {
                frame[i] = center[i] + utt[i] + self.cfg.frame_std * rng.sample::<f64, _>(StandardNormal);
            }
            if speaker.domain == Domain::Target {
                for r in 0..d {
                    let row = &self.rotation[r * d..(r + 1) * d];
                    data.push(self.bias[r] + row.iter().zip(&frame).map(|(a, b)| a * b).sum::<f64>());
                }
            } else {
                data.extend_from_slice(&frame);
            }
        }
        FeatureMatrix::new(data, d, 0.01).expect("frames > 0")
    }

    fn count(&self, domain: Domain, split: Split) -> usize {
        match split {
            Split::Train => self.cfg.train_utts,
            Split::Val if domain == Domain::Target => self.cfg.target_val_utts,
            Split::Val => self.cfg.val_utts,
            Split::Eval => self.cfg.eval_utts,
        }
    }

    fn collect(
        &self,
        split: Split,
        num_classes: usize,
        pick: impl Fn(&SynthSpeaker, usize, SpeedVariant) -> Option<usize>,
    ) -> Dataset {
        let mut samples = Vec::new();
        for domain in [Domain::Source, Domain::Target] {
            for (i, spk) in self.speakers(domain).iter().enumerate() {
                for v in SpeedVariant::ALL {
                    let Some(label) = pick(spk, i, v) else { continue };
                    for u in 0..self.count(domain, split) {
                        samples.push(Sample {
                            id: Self::utterance_id(spk, v, split, u),
                            speaker: spk.name.clone(),
                            label,
                            features: self.utterance(spk, v, split, u),
                        });
                    }
                }
            }
        }
        Dataset { samples, num_classes }
    }

    /// Source speakers with all three speed variants, labeled in the stage-1
    /// layout. The class count includes the reserved block when `reserved`.
    pub fn stage1_data(&self, split: Split, reserved: bool) -> Dataset {
        let (ns, nt) = (self.cfg.n_source, self.cfg.n_target);
        let classes = 3 * ns + if reserved { 3 * nt } else { 0 };
        self.collect(split, classes, |s, i, v| {
            (s.domain == Domain::Source).then(|| stage1_class(ns, nt, Domain::Source, i, v))
        })
    }

    /// Original-speed source speakers plus every target (speaker, variant).
    pub fn stage2_data(&self, split: Split) -> Dataset {
        let (ns, nt) = (self.cfg.n_source, self.cfg.n_target);
        self.collect(split, ns + 3 * nt, |s, i, v| stage2_class(ns, nt, s.domain, i, v))
    }

    /// Target speakers only, speed-perturbed copies removed; stage-2 labels.
    pub fn stage3_data(&self, split: Split) -> Dataset {
        let (ns, nt) = (self.cfg.n_source, self.cfg.n_target);
        self.collect(split, ns + 3 * nt, |s, i, v| {
            (s.domain == Domain::Target && v == SpeedVariant::Original)
                .then(|| stage2_class(ns, nt, Domain::Target, i, v).unwrap())
        })
    }

    /// Original-speed target utterances of `split`, labeled in the stage-2
    /// layout; the validation set of the transfer experiment.
    pub fn target_data(&self, split: Split) -> Dataset {
        self.stage3_data(split)
    }
}
