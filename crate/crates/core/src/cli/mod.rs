//! Command-line front end. Exit codes: 0 success, 2 configuration error,
//! 3 data error.

pub mod config;
pub mod pipeline;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{ConfigDoc, PipelineConfig};
pub use pipeline::{
    atomic_write, configured_stages, evaluate, run_pipeline, sha256_file, EvalResult, PipelineReport, PipelineStage,
};

use crate::augment::AugmentRecipe;
use crate::augment::AugmentSources;
use crate::backend::{
    domain_mean, fit_fusion, fuse, read_embeddings, read_scores, read_trials, score_trials, FusionModel,
    ScoringOptions,
};
use crate::error::{Error, Result};
use crate::frontend::{read_feature_archive, FrontendConfig};
use crate::metrics::DcfParams;
use crate::seed;
use crate::trainer::{read_params, write_params, write_train_log, Stage};
use pipeline::*;

#[derive(Debug, Parser)]
#[command(name = "svkit", version, about = "Speaker verification toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Pipeline configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory; relative output paths resolve against it.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Log-mel features for every utterance of a manifest.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_cmn: bool,
    },
    /// Speed copies and random corruptions of a manifest.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        rir_dir: Option<PathBuf>,
        #[arg(long)]
        noise_dir: Option<PathBuf>,
        #[arg(long)]
        music_dir: Option<PathBuf>,
        #[arg(long)]
        speech_dir: Option<PathBuf>,
        #[arg(long)]
        no_speed: bool,
    },
    /// One training stage on the configured synthetic speakers.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
        #[arg(long)]
        out: PathBuf,
        /// Parameters of the previous stage (stages 2 and 3).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Training log CSV; defaults next to the parameters.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Utterance embeddings from a feature archive.
    Embed {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cosine scoring with optional Sub-Mean and AS-Norm.
    Score {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Embedding file whose average is the domain mean.
        #[arg(long, conflicts_with = "compute_mean")]
        sub_mean: Option<PathBuf>,
        /// Sample this many embeddings for the domain mean.
        #[arg(long)]
        compute_mean: Option<usize>,
        /// Embeddings to sample the mean from; defaults to --embeddings.
        #[arg(long, requires = "compute_mean")]
        mean_from: Option<PathBuf>,
        #[arg(long, requires = "cohort")]
        as_norm: bool,
        #[arg(long)]
        cohort: Option<PathBuf>,
        /// `utt speaker` lines; picks one cohort utterance per speaker.
        #[arg(long)]
        cohort_utt2spk: Option<PathBuf>,
        #[arg(long, default_value_t = 300)]
        top_k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Logistic-regression fusion weights from labeled dev scores.
    FitFusion {
        /// Trial list with labels.
        #[arg(long)]
        dev_labels: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Weighted-average fusion of aligned score files.
    Fuse {
        #[arg(long, value_delimiter = ',', conflicts_with = "model", required_unless_present = "model")]
        weights: Option<Vec<f64>>,
        /// Model written by fit-fusion.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// EER and minDCF of a score file.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        p_tar: f64,
        #[arg(long, default_value_t = 1.0)]
        c_miss: f64,
        #[arg(long, default_value_t = 1.0)]
        c_fa: f64,
        /// Write the DET operating points as CSV.
        #[arg(long)]
        det: Option<PathBuf>,
    },
    /// Several stages from one config.
    Pipeline {
        /// Comma-separated stages; defaults to the config or the synthetic recipe.
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<String>>,
    },
}

impl Common {
    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.out_dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn load_config(&self) -> Result<Option<PipelineConfig>> {
        let Some(path) = &self.config else { return Ok(None) };
        let mut cfg = PipelineConfig::from_file(path)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        Ok(Some(cfg))
    }

    fn require_config(&self, what: &str) -> Result<PipelineConfig> {
        self.load_config()?.ok_or_else(|| Error::config("--config", format!("required by {what}")))
    }
}

/// Runs one parsed command line; the text it returns goes to stdout.
pub fn run(cli: &Cli) -> Result<String> {
    let c = &cli.common;
    if let Some(n) = c.jobs {
        // fails only when a pool already exists, e.g. on a second call
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match &cli.command {
        Command::Featurize { manifest, out, no_cmn } => {
            let (fcfg, cmn) = match c.load_config()? {
                Some(cfg) => (cfg.frontend, cfg.cmn && !no_cmn),
                None => (FrontendConfig::default(), !no_cmn),
            };
            let entries = read_manifest(manifest)?;
            let feats = featurize_entries(&entries, &fcfg, cmn)?;
            let out = c.resolve(out);
            write_features(&out, fcfg.feature_dim(), &feats)?;
            Ok(format!("wrote {} utterances to {}\n", feats.len(), out.display()))
        }
        Command::Augment { manifest, rir_dir, noise_dir, music_dir, speech_dir, no_speed } => {
            let out_dir = c.out_dir.clone().ok_or_else(|| Error::config("--out-dir", "required by augment"))?;
            let mut sources = AugmentSources::default();
            let mut recipes = Vec::new();
            for (dir, recipe) in [
                (rir_dir, AugmentRecipe::reverb()),
                (music_dir, AugmentRecipe::music()),
                (noise_dir, AugmentRecipe::noise()),
                (speech_dir, AugmentRecipe::babble()),
            ] {
                let Some(dir) = dir else { continue };
                let pool = load_wav_dir(dir)?;
                if pool.is_empty() {
                    return Err(Error::config(dir.display().to_string(), "no .wav files"));
                }
                match recipe.kind {
                    crate::augment::AugmentKind::Reverb => sources.rirs = pool,
                    crate::augment::AugmentKind::Music => sources.music = pool,
                    crate::augment::AugmentKind::NoiseIntervals => sources.noises = pool,
                    _ => sources.speech = pool,
                }
                recipes.push(recipe);
            }
            let entries = read_manifest(manifest)?;
            let s = c.seed.unwrap_or(0);
            let (out, classes) = augment_entries(&entries, &sources, &recipes, !no_speed, s, &out_dir.join("wav"))?;
            write_manifest(&out_dir.join("manifest.txt"), &out)?;
            atomic_write(&out_dir.join("classes.txt"), (classes.join("\n") + "\n").as_bytes())?;
            Ok(format!("{} utterances, {} classes\n", out.len(), classes.len()))
        }
        Command::Train { stage, out, init, log } => {
            let cfg = c.require_config("train")?;
            let stage = Stage::from_number(*stage)?;
            let init = init.as_ref().map(|p| read_params(p)).transpose()?;
            let (params, report) = train_synthetic(&cfg, stage, init, cfg.seed)?;
            let out = c.resolve(out);
            pipeline::atomic_write_with(&out, |b| write_params(b, &params))?;
            let log = log.as_ref().map(|l| c.resolve(l)).unwrap_or_else(|| out.with_extension("log.csv"));
            pipeline::atomic_write_with(&log, |b| write_train_log(b, &report.log).map_err(|e| Error::io(&log, e)))?;
            Ok(format!(
                "stage {}: {} steps, final loss {:.6}, val acc {:.4} -> {:.4}\n",
                stage.number(),
                report.steps,
                report.final_loss,
                report.before.accuracy,
                report.after.accuracy
            ))
        }
        Command::Embed { params, features, out } => {
            let params = read_params(params)?;
            let (_, feats) = read_feature_archive(features)?;
            let store = embed_features(&params, &feats)?;
            write_store(&c.resolve(out), &store)?;
            Ok(format!("{} embeddings of dim {}\n", store.len(), store.dim()))
        }
        Command::Score { trials, embeddings, sub_mean, compute_mean, mean_from, as_norm, cohort, cohort_utt2spk, top_k, out } => {
            let store = read_embeddings(embeddings)?;
            let trials = read_trials(trials)?;
            let s = c.seed.unwrap_or(0);
            let mut opts = ScoringOptions::default();
            if let Some(m) = sub_mean {
                let m = read_embeddings(m)?;
                opts.sub_mean = Some(domain_mean(&m, m.len(), &mut seed::substream(s, "backend-mean"))?);
            } else if let Some(n) = compute_mean {
                let src = match mean_from {
                    Some(p) => read_embeddings(p)?,
                    None => store.clone(),
                };
                opts.sub_mean = Some(domain_mean(&src, *n, &mut seed::substream(s, "backend-mean"))?);
            }
            if *as_norm {
                let cohort = cohort.as_ref().expect("clap requires --cohort");
                opts.as_norm = Some((load_cohort(cohort, cohort_utt2spk.as_deref(), s)?, *top_k));
            }
            let scores = score_trials(&trials, &store, &opts)?;
            write_score_file(&c.resolve(out), &scores)?;
            Ok(format!("scored {} trials\n", scores.len()))
        }
        Command::FitFusion { dev_labels, inputs, out } => {
            let trials = read_trials(dev_labels)?;
            let mut dev = inputs.iter().map(|p| read_scores(p)).collect::<Result<Vec<_>>>()?;
            for d in &mut dev {
                d.attach_labels(&trials)?;
            }
            let fit = c.load_config()?.map(|cfg| cfg.fuse.fit).unwrap_or_default();
            let model = fit_fusion(&dev, &fit)?;
            write_fusion_model(&c.resolve(out), &model)?;
            Ok(format!("weights {:?} bias {}\n", model.weights, model.bias))
        }
        Command::Fuse { weights, model, inputs, out } => {
            let model = match (weights, model) {
                (Some(w), _) => FusionModel { weights: w.clone(), bias: 0.0 },
                (None, Some(p)) => read_fusion_model(p)?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            let systems = inputs.iter().map(|p| read_scores(p)).collect::<Result<Vec<_>>>()?;
            let fused = fuse(&systems, &model)?;
            write_score_file(&c.resolve(out), &fused)?;
            Ok(format!("fused {} systems over {} trials\n", systems.len(), fused.len()))
        }
        Command::Eval { scores, trials, p_tar, c_miss, c_fa, det } => {
            let dcf = DcfParams { p_tar: *p_tar, c_miss: *c_miss, c_fa: *c_fa };
            dcf.validate()?;
            let r = evaluate(&read_scores(scores)?, &read_trials(trials)?, &dcf)?;
            if let Some(det) = det {
                let det = c.resolve(det);
                pipeline::atomic_write_with(&det, |b| {
                    crate::metrics::write_det_csv(b, &r.points).map_err(|e| Error::io(&det, e))
                })?;
            }
            Ok(format!("{r}\n"))
        }
        Command::Pipeline { stages } => {
            let cfg = c.require_config("pipeline")?;
            let stages = match stages {
                Some(names) => names
                    .iter()
                    .filter(|n| !n.trim().is_empty())
                    .map(|n| PipelineStage::parse(n))
                    .collect::<Result<Vec<_>>>()?,
                None => configured_stages(&cfg)?,
            };
            let report = run_pipeline(&cfg, &stages)?;
            let mut text = String::new();
            for (name, hash) in &report.produced {
                text.push_str(&format!("{hash}  {name}\n"));
            }
            if let Some(r) = &report.eval {
                text.push_str(&format!("{r}\n"));
            }
            Ok(text)
        }
    }
}

/// Parses `args`, runs, prints, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

