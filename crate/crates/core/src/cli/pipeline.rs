//! Pipeline stages. Each stage reads the artifacts of earlier stages from
//! the output directory, writes its own atomically and records their hashes
//! in `manifest.txt`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use crate::augment::{augment_random, expand_speakers, speed_perturb, AugmentRecipe, AugmentSources, SpeedVariant};
use crate::backend::{
    build_cohort, domain_mean, fit_fusion, fuse, read_embeddings, read_scores, read_trials, read_utt2spk,
    score_trials, write_embedding_archive, write_scores, Cohort, EmbeddingStore, FusionModel, ScoringOptions,
    TrialScoreSet,
};
use crate::error::{Error, Result};
use crate::frontend::{
    cmn, read_feature_archive, read_wav, write_feature_archive, write_wav, Fbank, FeatureMatrix, FrontendConfig,
    Waveform,
};
use crate::metrics::{det_sweep, eer_from_points, min_dcf_from_points, write_det_csv, DcfParams, DetOperatingPoint};
use crate::seed;
use crate::trainer::synthetic::stage2_mapping;
use crate::trainer::{
    build_head, embed_batch, finetune_stage2, lmft_stage3, pretrain_stage1, read_params, transfer_to_stage2,
    write_params, write_train_log, EncoderParams, EncoderShape, Split, Stage, SyntheticSpeakerSet, TrainReport,
};

/// Writes through a temporary file in the same directory, then renames.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn atomic_write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    atomic_write(path, &buf)
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utt: String,
    pub wav: PathBuf,
    pub speaker: Option<String>,
}

/// `utt wav [speaker]` lines; relative wav paths resolve against the
/// manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            [] => {}
            [utt, wav] | [utt, wav, _] => out.push(ManifestEntry {
                utt: utt.to_string(),
                wav: base.join(wav),
                speaker: f.get(2).map(|s| s.to_string()),
            }),
            _ => return Err(Error::format(path, format!("line {}: expected `utt wav [speaker]`", n + 1))),
        }
    }
    Ok(out)
}

/// Every `.wav` in `dir`, sorted by file name.
pub fn load_wav_dir(dir: &Path) -> Result<Vec<Waveform>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_wav(p)).collect()
}

/// Log-mel features for every manifest entry, in manifest order.
pub fn featurize_entries(
    entries: &[ManifestEntry],
    cfg: &FrontendConfig,
    apply_cmn: bool,
) -> Result<Vec<(String, FeatureMatrix)>> {
    let fbank = Fbank::new(cfg.clone())?;
    entries
        .par_iter()
        .map(|e| {
            let f = fbank.compute(&read_wav(&e.wav)?)?;
            Ok((e.utt.clone(), if apply_cmn { cmn(&f) } else { f }))
        })
        .collect()
}

pub fn write_features(path: &Path, dim: usize, feats: &[(String, FeatureMatrix)]) -> Result<()> {
    atomic_write_with(path, |b| write_feature_archive(b, dim, feats).map_err(io_at(path)))
}

/// Speed copies (when enabled) of every entry, then one random corruption
/// per resulting utterance. Writes the audio into `out_dir` and returns the
/// new manifest and the expanded class labels.
pub fn augment_entries(
    entries: &[ManifestEntry],
    sources: &AugmentSources,
    recipes: &[AugmentRecipe],
    speed: bool,
    global_seed: u64,
    out_dir: &Path,
) -> Result<(Vec<ManifestEntry>, Vec<String>)> {
    let mut speakers: Vec<String> = entries.iter().filter_map(|e| e.speaker.clone()).collect();
    speakers.sort();
    speakers.dedup();
    if speakers.is_empty() {
        return Err(Error::InvalidConfig("augmentation needs speaker labels in the manifest".into()));
    }
    let labels = expand_speakers(&speakers)?;
    let variants: &[SpeedVariant] = if speed { &SpeedVariant::ALL } else { &SpeedVariant::ALL[..1] };
    let produced: Vec<Vec<(ManifestEntry, Waveform)>> = entries
        .par_iter()
        .map(|e| {
            let spk = e.speaker.clone().ok_or_else(|| Error::InvalidConfig(format!("{} has no speaker", e.utt)))?;
            let wave = read_wav(&e.wav)?;
            let mut out = Vec::new();
            for &v in variants {
                let w = if v == SpeedVariant::Original { wave.clone() } else { speed_perturb(&wave, v.factor())? };
                let utt = v.label(&e.utt);
                let spk_v = v.label(&spk);
                let mut rng = seed::derive(global_seed, &["augment", &utt]);
                let (aug, used) = augment_random(&w, recipes, sources, &mut rng)?;
                if let Some(r) = used {
                    let id = format!("{utt}-{}", r.kind.name());
                    out.push((ManifestEntry { wav: out_dir.join(format!("{id}.wav")), utt: id, speaker: Some(spk_v.clone()) }, aug));
                }
                if v != SpeedVariant::Original {
                    out.push((ManifestEntry { wav: out_dir.join(format!("{utt}.wav")), utt, speaker: Some(spk_v) }, w));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = entries.to_vec();
    for (entry, wave) in produced.into_iter().flatten() {
        let tmp = entry.wav.with_extension("wav.tmp");
        write_wav(&tmp, &wave)?;
        std::fs::rename(&tmp, &entry.wav).map_err(|e| Error::io(&entry.wav, e))?;
        manifest.push(entry);
    }
    Ok((manifest, labels.labels()))
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    atomic_write_with(path, |b| {
        for e in entries {
            write!(b, "{} {}", e.utt, e.wav.display()).map_err(io_at(path))?;
            if let Some(s) = &e.speaker {
                write!(b, " {s}").map_err(io_at(path))?;
            }
            writeln!(b).map_err(io_at(path))?;
        }
        Ok(())
    })
}

/// Parameters for `stage`, trained on the configured synthetic speakers.
/// Stages 2 and 3 start from `init`.
pub fn train_synthetic(
    cfg: &PipelineConfig,
    stage: Stage,
    init: Option<EncoderParams>,
    seed_value: u64,
) -> Result<(EncoderParams, TrainReport)> {
    let set = SyntheticSpeakerSet::new(cfg.synthetic.clone(), seed_value)?;
    let (ns, nt) = (cfg.synthetic.n_source, cfg.synthetic.n_target);
    let tc = cfg.train.for_stage(stage);
    let mut rng = seed::derive(seed_value, &["train", &format!("stage{}", stage.number())]);
    match (stage, init) {
        (Stage::Pretrain, _) => {
            let reserved = cfg.train.reserved;
            let m = &cfg.model;
            let n_res = if reserved { 3 * nt } else { 0 };
            let mut init_rng = seed::derive(seed_value, &["train", "init"]);
            let mut head = build_head(3 * ns, n_res, m.sub_centers, m.embedding_dim(), &mut init_rng)?;
            head.scale = m.scale;
            let shape = EncoderShape { input_dim: cfg.synthetic.dim, hidden: m.hidden, channels: m.channels };
            let params = EncoderParams::random(shape, m.pooling, head, &mut init_rng)?;
            pretrain_stage1(params, &set.stage1_data(Split::Train, reserved), &set.stage1_data(Split::Val, reserved), tc, &mut rng)
        }
        (_, None) => Err(Error::StageDependencyMissing(format!("stage {} needs initial parameters", stage.number()))),
        (Stage::Finetune, Some(p1)) => {
            let reserved = match p1.head.num_classes() {
                j if j == 3 * ns + 3 * nt && p1.head.num_reserved() == 3 * nt => true,
                j if j == 3 * ns => false,
                j => return Err(Error::Shape(format!("stage-1 head has {j} classes, config implies {}", 3 * ns))),
            };
            let mut fresh = seed::derive(seed_value, &["train", "fresh-rows"]);
            let p2 = transfer_to_stage2(&p1, &stage2_mapping(ns, nt, reserved), &mut fresh)?;
            finetune_stage2(p2, &set.stage2_data(Split::Train), &set.target_data(Split::Val), tc, &mut rng)
        }
        (Stage::LargeMargin, Some(p2)) => {
            lmft_stage3(p2, &set.stage3_data(Split::Train), &set.target_data(Split::Val), tc, &mut rng)
        }
    }
}

pub fn embed_features(params: &EncoderParams, feats: &[(String, FeatureMatrix)]) -> Result<EmbeddingStore> {
    let refs: Vec<&FeatureMatrix> = feats.iter().map(|(_, f)| f).collect();
    let vectors = embed_batch(params, &refs)?;
    EmbeddingStore::from_pairs(params.embedding_dim(), feats.iter().map(|(id, _)| id.clone()).zip(vectors))
}

pub fn write_store(path: &Path, store: &EmbeddingStore) -> Result<()> {
    atomic_write_with(path, |b| write_embedding_archive(b, store).map_err(io_at(path)))
}

pub fn write_score_file(path: &Path, scores: &TrialScoreSet) -> Result<()> {
    atomic_write_with(path, |b| write_scores(b, scores).map_err(io_at(path)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub dcf_threshold: f64,
    pub points: Vec<DetOperatingPoint>,
}

impl fmt::Display for EvalResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "EER(%) {} threshold {}", 100.0 * self.eer, self.eer_threshold)?;
        write!(f, "minDCF {} threshold {}", self.min_dcf, self.dcf_threshold)
    }
}

/// Scores joined with the trial labels, then EER and minDCF.
pub fn evaluate(scores: &TrialScoreSet, trials: &[crate::backend::Trial], dcf: &DcfParams) -> Result<EvalResult> {
    let mut labeled = scores.clone();
    labeled.attach_labels(trials)?;
    let points = det_sweep(&labeled.labeled()?)?;
    let (eer, eer_threshold) = eer_from_points(&points);
    let (min_dcf, dcf_threshold) = min_dcf_from_points(&points, dcf);
    Ok(EvalResult { eer, eer_threshold, min_dcf, dcf_threshold, points })
}

pub fn write_fusion_model(path: &Path, m: &FusionModel) -> Result<()> {
    let w: Vec<String> = m.weights.iter().map(|w| w.to_string()).collect();
    atomic_write(path, format!("weights {}\nbias {}\n", w.join(","), m.bias).as_bytes())
}

pub fn read_fusion_model(path: &Path) -> Result<FusionModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = || Error::format(path, "expected `weights w1,w2,...` and `bias b` lines");
    let mut weights = None;
    let mut bias = 0.0;
    for line in text.lines() {
        match line.split_once(' ') {
            Some(("weights", v)) => {
                weights = Some(v.split(',').map(|x| x.trim().parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|_| bad())?)
            }
            Some(("bias", v)) => bias = v.trim().parse().map_err(|_| bad())?,
            _ if line.trim().is_empty() => {}
            _ => return Err(bad()),
        }
    }
    Ok(FusionModel { weights: weights.ok_or_else(bad)?, bias })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineStage {
    Synthesize,
    Featurize,
    Augment,
    Train1,
    Train2,
    Train3,
    Embed,
    Score,
    Fuse,
    Eval,
}

impl PipelineStage {
    pub const ALL: [PipelineStage; 10] = [
        Self::Synthesize,
        Self::Featurize,
        Self::Augment,
        Self::Train1,
        Self::Train2,
        Self::Train3,
        Self::Embed,
        Self::Score,
        Self::Fuse,
        Self::Eval,
    ];

    /// synthesize, train1, train2, embed, score, eval
    pub const SYNTHETIC_RECIPE: [PipelineStage; 6] =
        [Self::Synthesize, Self::Train1, Self::Train2, Self::Embed, Self::Score, Self::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Self::Synthesize => "synthesize",
            Self::Featurize => "featurize",
            Self::Augment => "augment",
            Self::Train1 => "train1",
            Self::Train2 => "train2",
            Self::Train3 => "train3",
            Self::Embed => "embed",
            Self::Score => "score",
            Self::Fuse => "fuse",
            Self::Eval => "eval",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::config("pipeline.stages", format!("unknown stage {name:?}")))
    }
}

/// What a pipeline run produced.
#[derive(Debug, Clone, Default)]
pub struct PipelineReport {
    /// Output-relative path and SHA-256 of every file written, in order.
    pub produced: Vec<(String, String)>,
    pub eval: Option<EvalResult>,
    pub train: Vec<TrainReport>,
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    out: &'a Path,
    report: PipelineReport,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn need(&self, stage: PipelineStage, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::StageDependencyMissing(format!("{} needs {}", stage.name(), p.display())))
        }
    }

    fn produced(&mut self, name: &str) -> Result<()> {
        let hash = sha256_file(&self.path(name))?;
        self.report.produced.push((name.to_string(), hash));
        Ok(())
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        atomic_write(&self.path(name), bytes)?;
        self.produced(name)
    }

    fn synthesize(&mut self) -> Result<()> {
        let set = SyntheticSpeakerSet::new(self.cfg.synthetic.clone(), self.cfg.seed)?;
        let dim = self.cfg.synthetic.dim;
        let orig = SpeedVariant::Original;
        let collect = |speakers: &[crate::trainer::SynthSpeaker], split: Split, n: usize| {
            let mut feats = Vec::new();
            let mut utt2spk = String::new();
            for s in speakers {
                for u in 0..n {
                    let id = SyntheticSpeakerSet::utterance_id(s, orig, split, u);
                    utt2spk.push_str(&format!("{id} {}\n", s.name));
                    feats.push((id, set.utterance(s, orig, split, u)));
                }
            }
            (feats, utt2spk)
        };
        let c = &self.cfg.synthetic;
        let (eval, eval_spk) = collect(set.target(), Split::Eval, c.eval_utts);
        let (cohort, cohort_spk) = collect(set.source(), Split::Eval, c.eval_utts.max(1));
        let (domain, _) = collect(set.target(), Split::Train, c.train_utts);
        let mut trials = String::new();
        let spk_of: Vec<&str> = eval_spk.lines().map(|l| l.split(' ').nth(1).unwrap()).collect();
        for i in 0..eval.len() {
            for j in i + 1..eval.len() {
                trials.push_str(&format!("{} {} {}\n", eval[i].0, eval[j].0, u8::from(spk_of[i] == spk_of[j])));
            }
        }
        for (name, feats) in [("eval.ark", &eval), ("cohort.ark", &cohort), ("domain.ark", &domain)] {
            write_features(&self.path(name), dim, feats)?;
            self.produced(name)?;
        }
        self.write_bytes("eval.utt2spk", eval_spk.as_bytes())?;
        self.write_bytes("cohort.utt2spk", cohort_spk.as_bytes())?;
        self.write_bytes("trials.txt", trials.as_bytes())
    }

    fn featurize(&mut self) -> Result<()> {
        let manifest = self.cfg.data_manifest.as_ref().ok_or_else(|| Error::config("data.manifest", "required by the featurize stage"))?;
        let feats = featurize_entries(&read_manifest(manifest)?, &self.cfg.frontend, self.cfg.cmn)?;
        write_features(&self.path("features.ark"), self.cfg.frontend.feature_dim(), &feats)?;
        self.produced("features.ark")
    }

    fn augment(&mut self) -> Result<()> {
        let a = &self.cfg.augment;
        let manifest = a.manifest.as_ref().ok_or_else(|| Error::config("augment.manifest", "required by the augment stage"))?;
        let mut sources = AugmentSources::default();
        for r in &a.recipes {
            let (key, dir, pool) = match r.kind {
                crate::augment::AugmentKind::Reverb => ("augment.rir_dir", &a.rir_dir, &mut sources.rirs),
                crate::augment::AugmentKind::Music => ("augment.music_dir", &a.music_dir, &mut sources.music),
                crate::augment::AugmentKind::NoiseIntervals => ("augment.noise_dir", &a.noise_dir, &mut sources.noises),
                crate::augment::AugmentKind::Babble => ("augment.speech_dir", &a.speech_dir, &mut sources.speech),
                crate::augment::AugmentKind::Speed => continue,
            };
            if pool.is_empty() {
                let dir = dir.as_ref().ok_or_else(|| Error::config(key, format!("required by the {} recipe", r.kind.name())))?;
                *pool = load_wav_dir(dir)?;
                if pool.is_empty() {
                    return Err(Error::config(key, format!("{} holds no .wav files", dir.display())));
                }
            }
        }
        let entries = read_manifest(manifest)?;
        let (out, classes) = augment_entries(&entries, &sources, &a.recipes, a.speed, self.cfg.seed, &self.path("augmented"))?;
        for e in &out[entries.len()..] {
            let rel = e.wav.strip_prefix(self.out).unwrap_or(&e.wav).to_string_lossy().into_owned();
            self.produced(&rel)?;
        }
        write_manifest(&self.path("augmented_manifest.txt"), &out)?;
        self.produced("augmented_manifest.txt")?;
        self.write_bytes("classes.txt", (classes.join("\n") + "\n").as_bytes())
    }

    fn train(&mut self, stage: Stage, pstage: PipelineStage) -> Result<()> {
        let init = match stage {
            Stage::Pretrain => None,
            Stage::Finetune => Some(read_params(&self.need(pstage, "params_stage1.bin")?)?),
            Stage::LargeMargin => Some(read_params(&self.need(pstage, "params_stage2.bin")?)?),
        };
        let (params, report) = train_synthetic(self.cfg, stage, init, self.cfg.seed)?;
        let n = stage.number();
        let name = format!("params_stage{n}.bin");
        atomic_write_with(&self.path(&name), |b| write_params(b, &params))?;
        self.produced(&name)?;
        let log = format!("train{n}_log.csv");
        atomic_write_with(&self.path(&log), |b| write_train_log(b, &report.log).map_err(io_at(&self.path(&log))))?;
        self.produced(&log)?;
        log::info!(
            "stage {n}: {} steps, val acc {:.4} -> {:.4}",
            report.steps,
            report.before.accuracy,
            report.after.accuracy
        );
        self.report.train.push(report);
        Ok(())
    }

    fn embed(&mut self) -> Result<()> {
        let s = PipelineStage::Embed;
        let pname = format!("params_stage{}.bin", self.cfg.train.embed_stage.number());
        let params = read_params(&self.need(s, &pname)?)?;
        let b = &self.cfg.backend;
        let mut sets = vec![("eval.ark", "eval.emb")];
        if b.as_norm {
            sets.push(("cohort.ark", "cohort.emb"));
        }
        if b.sub_mean {
            sets.push(("domain.ark", "domain.emb"));
        }
        for (src, dst) in sets {
            let (_, feats) = read_feature_archive(&self.need(s, src)?)?;
            let store = embed_features(&params, &feats)?;
            write_store(&self.path(dst), &store)?;
            self.produced(dst)?;
        }
        Ok(())
    }

    fn score(&mut self) -> Result<()> {
        let s = PipelineStage::Score;
        let store = read_embeddings(&self.need(s, "eval.emb")?)?;
        let trials = read_trials(&self.need(s, "trials.txt")?)?;
        let b = &self.cfg.backend;
        let mut opts = ScoringOptions::default();
        if b.sub_mean {
            let domain = read_embeddings(&self.need(s, "domain.emb")?)?;
            let n = b.mean_size.unwrap_or(domain.len());
            opts.sub_mean = Some(domain_mean(&domain, n, &mut seed::substream(self.cfg.seed, "backend-mean"))?);
        }
        if b.as_norm {
            let utt2spk = read_utt2spk(&self.need(s, "cohort.utt2spk")?)?;
            let cstore = read_embeddings(&self.need(s, "cohort.emb")?)?.with_speakers(utt2spk);
            let cohort = build_cohort(&cstore, &mut seed::substream(self.cfg.seed, "cohort"))?;
            opts.as_norm = Some((cohort, b.top_k));
        }
        let scores = score_trials(&trials, &store, &opts)?;
        write_score_file(&self.path("scores.txt"), &scores)?;
        self.produced("scores.txt")
    }

    fn fuse(&mut self) -> Result<()> {
        let s = PipelineStage::Fuse;
        let f = &self.cfg.fuse;
        if f.inputs.is_empty() {
            return Err(Error::config("fuse.inputs", "required by the fuse stage"));
        }
        let systems = f
            .inputs
            .iter()
            .map(|p| read_scores(&self.need(s, &p.to_string_lossy())?))
            .collect::<Result<Vec<_>>>()?;
        let model = match &f.weights {
            Some(w) => FusionModel { weights: w.clone(), bias: 0.0 },
            None => {
                let trials = read_trials(&self.need(s, "trials.txt")?)?;
                let mut dev = systems.clone();
                for d in &mut dev {
                    d.attach_labels(&trials)?;
                }
                let m = fit_fusion(&dev, &f.fit)?;
                write_fusion_model(&self.path("fusion.txt"), &m)?;
                self.produced("fusion.txt")?;
                m
            }
        };
        let fused = fuse(&systems, &model)?;
        write_score_file(&self.path("fused_scores.txt"), &fused)?;
        self.produced("fused_scores.txt")
    }

    fn eval(&mut self) -> Result<()> {
        let s = PipelineStage::Eval;
        let scores = read_scores(&self.need(s, &self.cfg.eval_scores.to_string_lossy())?)?;
        let trials = read_trials(&self.need(s, "trials.txt")?)?;
        let r = evaluate(&scores, &trials, &self.cfg.dcf)?;
        self.write_bytes("metrics.txt", format!("{r}\n").as_bytes())?;
        let det = self.path("det.csv");
        atomic_write_with(&det, |b| write_det_csv(b, &r.points).map_err(io_at(&det)))?;
        self.produced("det.csv")?;
        self.report.eval = Some(r);
        Ok(())
    }
}

fn update_manifest(out: &Path, produced: &[(String, String)]) -> Result<()> {
    let path = out.join("manifest.txt");
    let mut entries: BTreeMap<String, String> = BTreeMap::new();
    if let Ok(text) = std::fs::read_to_string(&path) {
        for line in text.lines() {
            if let Some((hash, name)) = line.split_once("  ") {
                entries.insert(name.to_string(), hash.to_string());
            }
        }
    }
    for (name, hash) in produced {
        entries.insert(name.clone(), hash.clone());
    }
    let body: String = entries.iter().map(|(n, h)| format!("{h}  {n}\n")).collect();
    atomic_write(&path, body.as_bytes())
}

/// Runs `stages` in the given order. An empty list does nothing.
pub fn run_pipeline(cfg: &PipelineConfig, stages: &[PipelineStage]) -> Result<PipelineReport> {
    if stages.is_empty() {
        return Ok(PipelineReport::default());
    }
    let out = cfg.out_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut run = Run { cfg, out, report: PipelineReport::default() };
    for &stage in stages {
        log::info!("running stage {}", stage.name());
        match stage {
            PipelineStage::Synthesize => run.synthesize(),
            PipelineStage::Featurize => run.featurize(),
            PipelineStage::Augment => run.augment(),
            PipelineStage::Train1 => run.train(Stage::Pretrain, stage),
            PipelineStage::Train2 => run.train(Stage::Finetune, stage),
            PipelineStage::Train3 => run.train(Stage::LargeMargin, stage),
            PipelineStage::Embed => run.embed(),
            PipelineStage::Score => run.score(),
            PipelineStage::Fuse => run.fuse(),
            PipelineStage::Eval => run.eval(),
        }?;
        update_manifest(out, &run.report.produced)?;
    }
    Ok(run.report)
}

/// The stage list from the config, or the synthetic recipe when unset.
pub fn configured_stages(cfg: &PipelineConfig) -> Result<Vec<PipelineStage>> {
    match &cfg.stages {
        Some(names) => names.iter().map(|n| PipelineStage::parse(n)).collect(),
        None => Ok(PipelineStage::SYNTHETIC_RECIPE.to_vec()),
    }
}

/// Cohort from an embedding file: one random utterance per speaker when a
/// grouping is given, otherwise every vector is a center.
pub fn load_cohort(path: &Path, utt2spk: Option<&Path>, rng_seed: u64) -> Result<Cohort> {
    let store = read_embeddings(path)?;
    match utt2spk {
        Some(u) => build_cohort(&store.with_speakers(read_utt2spk(u)?), &mut seed::substream(rng_seed, "cohort")),
        None => Cohort::from_store(&store),
    }
}
