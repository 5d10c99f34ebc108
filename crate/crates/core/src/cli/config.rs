//! `[section]` / `key = value` configuration. Keys before the first section
//! belong to the global section. `#` starts a comment. Unknown sections and
//! keys are rejected, naming the offending key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::AugmentRecipe;
use crate::backend::FusionConfig;
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::metrics::DcfParams;
use crate::trainer::{PoolingKind, Stage, SyntheticConfig, TrainConfig};

const SCHEMA: &[(&str, &[&str])] = &[
    ("", &["seed", "out_dir"]),
    ("pipeline", &["stages"]),
    (
        "frontend",
        &[
            "sample_rate", "window_len", "hop_len", "n_fft", "n_mels", "preemph", "low_freq", "high_freq",
            "log_floor", "remove_dc", "cmn",
        ],
    ),
    ("data", &["manifest"]),
    ("augment", &["manifest", "rir_dir", "noise_dir", "music_dir", "speech_dir", "recipes", "speed"]),
    (
        "synthetic",
        &[
            "n_source", "n_target", "dim", "frames", "train_utts", "val_utts", "target_val_utts", "eval_utts",
            "center_std", "variant_std", "utt_std", "frame_std", "shift_rotation", "shift_bias",
        ],
    ),
    ("model", &["hidden", "channels", "pooling", "queries", "heads", "sub_centers", "scale"]),
    (
        "train",
        &[
            "lr_scale", "momentum", "weight_decay", "batch", "chunk_len", "plateau_factor", "patience", "min_lr",
            "threshold", "val_period", "stage1_epochs", "stage2_epochs", "stage3_chunk_len", "reserved",
            "embed_stage",
        ],
    ),
    ("backend", &["sub_mean", "mean_size", "as_norm", "top_k"]),
    ("fuse", &["inputs", "weights", "max_iter", "tol"]),
    ("metrics", &["p_tar", "c_miss", "c_fa", "scores"]),
];

/// Raw parsed document: section -> key -> (value, line).
#[derive(Debug, Clone, Default)]
pub struct ConfigDoc {
    sections: BTreeMap<String, BTreeMap<String, (String, usize)>>,
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Self::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::config(format!("line {}", n + 1), "unterminated section header"))?
                    .trim();
                if !SCHEMA.iter().any(|(s, _)| *s == name) || name.is_empty() {
                    return Err(Error::config(name, "unknown section"));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", n + 1), "expected `key = value`"))?;
            let key = key.trim();
            let known = SCHEMA.iter().find(|(s, _)| *s == section).map(|(_, k)| *k).unwrap_or(&[]);
            if !known.contains(&key) {
                return Err(Error::config(qualified(&section, key), "unknown key"));
            }
            let entry = doc.sections.entry(section.clone()).or_default();
            if entry.insert(key.to_string(), (value.trim().to_string(), n + 1)).is_some() {
                return Err(Error::config(qualified(&section, key), "key given twice"));
            }
        }
        Ok(doc)
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|(v, _)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::config(qualified(section, key), format!("cannot parse {v:?}: {e}"))),
        }
    }

    pub fn or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    pub fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.raw(section, key) else { return Ok(None) };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<T>().map_err(|e| Error::config(qualified(section, key), format!("cannot parse {s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSettings {
    pub manifest: Option<PathBuf>,
    pub rir_dir: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
    pub music_dir: Option<PathBuf>,
    pub speech_dir: Option<PathBuf>,
    pub recipes: Vec<AugmentRecipe>,
    pub speed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub hidden: usize,
    pub channels: usize,
    pub pooling: PoolingKind,
    pub sub_centers: usize,
    pub scale: f64,
}

impl ModelSettings {
    pub fn embedding_dim(&self) -> usize {
        match self.pooling {
            PoolingKind::Gsp => 2 * self.channels,
            PoolingKind::Mqmha { queries, .. } => 2 * self.channels * queries,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub stage3: TrainConfig,
    /// Reserve target classes during stage 1.
    pub reserved: bool,
    /// Which stage's parameters the embed stage uses.
    pub embed_stage: Stage,
}

impl TrainSettings {
    pub fn for_stage(&self, stage: Stage) -> &TrainConfig {
        match stage {
            Stage::Pretrain => &self.stage1,
            Stage::Finetune => &self.stage2,
            Stage::LargeMargin => &self.stage3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendSettings {
    pub sub_mean: bool,
    /// Embeddings sampled for the domain mean; all when `None`.
    pub mean_size: Option<usize>,
    pub as_norm: bool,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseSettings {
    pub inputs: Vec<PathBuf>,
    /// Fixed weights; fitted on the trial labels when absent.
    pub weights: Option<Vec<f64>>,
    pub fit: FusionConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub stages: Option<Vec<String>>,
    pub frontend: FrontendConfig,
    pub cmn: bool,
    pub data_manifest: Option<PathBuf>,
    pub augment: AugmentSettings,
    pub synthetic: SyntheticConfig,
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub backend: BackendSettings,
    pub fuse: FuseSettings,
    pub dcf: DcfParams,
    /// Score file evaluated by the eval stage, relative to the output dir.
    pub eval_scores: PathBuf,
}

fn recipe(name: &str) -> Result<AugmentRecipe> {
    Ok(match name {
        "reverb" => AugmentRecipe::reverb(),
        "music" => AugmentRecipe::music(),
        "noise" => AugmentRecipe::noise(),
        "babble" => AugmentRecipe::babble(),
        other => return Err(Error::config("augment.recipes", format!("unknown recipe {other:?}"))),
    })
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_doc(&ConfigDoc::parse(&text)?, &base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        Self::from_doc(&ConfigDoc::parse(text)?, base_dir)
    }

    /// Relative paths in the document are taken relative to `base_dir`.
    pub fn from_doc(doc: &ConfigDoc, base_dir: &Path) -> Result<Self> {
        let path = |s: &str, k: &str| -> Option<PathBuf> { doc.raw(s, k).map(|v| base_dir.join(v)) };

        let d = FrontendConfig::default();
        let frontend = FrontendConfig {
            sample_rate: doc.or("frontend", "sample_rate", d.sample_rate)?,
            window_len: doc.or("frontend", "window_len", d.window_len)?,
            hop_len: doc.or("frontend", "hop_len", d.hop_len)?,
            n_fft: doc.or("frontend", "n_fft", d.n_fft)?,
            n_mels: doc.or("frontend", "n_mels", d.n_mels)?,
            preemph: doc.or("frontend", "preemph", d.preemph)?,
            low_freq: doc.or("frontend", "low_freq", d.low_freq)?,
            high_freq: doc.or("frontend", "high_freq", d.high_freq)?,
            log_floor: doc.or("frontend", "log_floor", d.log_floor)?,
            remove_dc: doc.or("frontend", "remove_dc", d.remove_dc)?,
        };
        frontend.validate().map_err(|e| Error::config("frontend", e.to_string()))?;

        let recipes = match doc.list::<String>("augment", "recipes")? {
            Some(names) => names.iter().map(|n| recipe(n)).collect::<Result<_>>()?,
            None => AugmentRecipe::corruption_set(),
        };
        let augment = AugmentSettings {
            manifest: path("augment", "manifest"),
            rir_dir: path("augment", "rir_dir"),
            noise_dir: path("augment", "noise_dir"),
            music_dir: path("augment", "music_dir"),
            speech_dir: path("augment", "speech_dir"),
            recipes,
            speed: doc.or("augment", "speed", true)?,
        };

        let s = SyntheticConfig::default();
        let synthetic = SyntheticConfig {
            n_source: doc.or("synthetic", "n_source", s.n_source)?,
            n_target: doc.or("synthetic", "n_target", s.n_target)?,
            dim: doc.or("synthetic", "dim", s.dim)?,
            frames: doc.or("synthetic", "frames", s.frames)?,
            train_utts: doc.or("synthetic", "train_utts", s.train_utts)?,
            val_utts: doc.or("synthetic", "val_utts", s.val_utts)?,
            target_val_utts: doc.or("synthetic", "target_val_utts", s.target_val_utts)?,
            eval_utts: doc.or("synthetic", "eval_utts", s.eval_utts)?,
            center_std: doc.or("synthetic", "center_std", s.center_std)?,
            variant_std: doc.or("synthetic", "variant_std", s.variant_std)?,
            utt_std: doc.or("synthetic", "utt_std", s.utt_std)?,
            frame_std: doc.or("synthetic", "frame_std", s.frame_std)?,
            shift_rotation: doc.or("synthetic", "shift_rotation", s.shift_rotation)?,
            shift_bias: doc.or("synthetic", "shift_bias", s.shift_bias)?,
        };
        synthetic.validate().map_err(|e| Error::config("synthetic", e.to_string()))?;

        let pooling = match doc.or("model", "pooling", "gsp".to_string())?.as_str() {
            "gsp" => PoolingKind::Gsp,
            "mqmha" => PoolingKind::Mqmha { queries: doc.or("model", "queries", 1)?, heads: doc.or("model", "heads", 1)? },
            other => return Err(Error::config("model.pooling", format!("expected gsp or mqmha, got {other:?}"))),
        };
        let model = ModelSettings {
            hidden: doc.or("model", "hidden", 32)?,
            channels: doc.or("model", "channels", 16)?,
            pooling,
            sub_centers: doc.or("model", "sub_centers", 1)?,
            scale: doc.or("model", "scale", 30.0)?,
        };
        if model.hidden == 0 || model.channels == 0 || model.sub_centers == 0 || !(model.scale > 0.0) {
            return Err(Error::config("model", "hidden, channels, sub_centers and scale must be positive"));
        }

        let lr_scale: f64 = doc.or("train", "lr_scale", 1.0)?;
        let mut stages = [TrainConfig::stage1(lr_scale), TrainConfig::stage2(lr_scale), TrainConfig::stage3(lr_scale)];
        let names = ["train.stage1", "train.stage2", "train.stage3"];
        for c in &mut stages {
            c.momentum = doc.or("train", "momentum", c.momentum)?;
            c.weight_decay = doc.or("train", "weight_decay", c.weight_decay)?;
            c.batch = doc.or("train", "batch", c.batch)?;
            c.plateau.factor = doc.or("train", "plateau_factor", c.plateau.factor)?;
            c.plateau.patience = doc.or("train", "patience", c.plateau.patience)?;
            c.plateau.min_lr = doc.or("train", "min_lr", c.plateau.min_lr)?;
            c.plateau.threshold = doc.or("train", "threshold", c.plateau.threshold)?;
            c.val_period = doc.get("train", "val_period")?;
        }
        let chunk = doc.or("train", "chunk_len", stages[0].chunk_len)?;
        stages[0].chunk_len = chunk;
        stages[1].chunk_len = chunk;
        stages[2].chunk_len = doc.or("train", "stage3_chunk_len", stages[2].chunk_len)?;
        stages[0].epochs = doc.or("train", "stage1_epochs", stages[0].epochs)?;
        stages[1].epochs = doc.or("train", "stage2_epochs", stages[1].epochs)?;
        for (c, name) in stages.iter().zip(names) {
            c.validate().map_err(|e| Error::config(name, e.to_string()))?;
        }
        let [stage1, stage2, stage3] = stages;
        let embed_stage = Stage::from_number(doc.or("train", "embed_stage", 2u8)?)
            .map_err(|e| Error::config("train.embed_stage", e.to_string()))?;
        let train = TrainSettings { stage1, stage2, stage3, reserved: doc.or("train", "reserved", true)?, embed_stage };

        let backend = BackendSettings {
            sub_mean: doc.or("backend", "sub_mean", true)?,
            mean_size: doc.get("backend", "mean_size")?,
            as_norm: doc.or("backend", "as_norm", true)?,
            top_k: doc.or("backend", "top_k", 300)?,
        };
        let fd = FusionConfig::default();
        let fuse = FuseSettings {
            inputs: doc.list::<String>("fuse", "inputs")?.unwrap_or_default().iter().map(PathBuf::from).collect(),
            weights: doc.list("fuse", "weights")?,
            fit: FusionConfig { max_iter: doc.or("fuse", "max_iter", fd.max_iter)?, tol: doc.or("fuse", "tol", fd.tol)? },
        };
        let dd = DcfParams::default();
        let dcf = DcfParams {
            p_tar: doc.or("metrics", "p_tar", dd.p_tar)?,
            c_miss: doc.or("metrics", "c_miss", dd.c_miss)?,
            c_fa: doc.or("metrics", "c_fa", dd.c_fa)?,
        };
        dcf.validate().map_err(|e| Error::config("metrics", e.to_string()))?;

        Ok(Self {
            seed: doc.or("", "seed", 0)?,
            out_dir: path("", "out_dir").unwrap_or_else(|| base_dir.join("out")),
            stages: doc.list("pipeline", "stages")?,
            frontend,
            cmn: doc.or("frontend", "cmn", true)?,
            data_manifest: path("data", "manifest"),
            augment,
            synthetic,
            model,
            train,
            backend,
            fuse,
            dcf,
            eval_scores: PathBuf::from(doc.or("metrics", "scores", "scores.txt".to_string())?),
        })
    }
}
