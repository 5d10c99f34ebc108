//! Trial scoring: cosine similarity, domain-mean subtraction, adaptive
//! score normalization against a speaker-center cohort, and score fusion.

mod fusion;
mod store;
mod trials;

pub use fusion::{fit_fusion, fuse, FusionConfig, FusionModel};
pub use store::{
    read_embeddings, read_utt2spk, write_embedding_archive, write_embedding_text, EmbeddingStore,
    EMBEDDING_MAGIC,
};
pub use trials::{parse_trials, read_scores, read_trials, write_scores, Trial, TrialScore, TrialScoreSet};

use std::collections::{BTreeMap, HashMap};

use log::warn;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Floor below which a cohort's score spread counts as degenerate.
pub const COHORT_STD_FLOOR: f64 = 1e-8;

pub fn cosine_score(e: &[f64], t: &[f64]) -> Result<f64> {
    if e.len() != t.len() {
        return Err(Error::Shape(format!("{} vs {} dims", e.len(), t.len())));
    }
    let (mut dot, mut ee, mut tt) = (0.0, 0.0, 0.0);
    for (a, b) in e.iter().zip(t) {
        dot += a * b;
        ee += a * a;
        tt += b * b;
    }
    if ee == 0.0 || tt == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    Ok((dot / (ee.sqrt() * tt.sqrt())).clamp(-1.0, 1.0))
}

/// Mean of `sample_size` embeddings drawn without replacement (all of them
/// when the store is smaller).
pub fn domain_mean<R: Rng + ?Sized>(store: &EmbeddingStore, sample_size: usize, rng: &mut R) -> Result<Vec<f64>> {
    if store.is_empty() {
        return Err(Error::NoEmbeddings);
    }
    let mut picked: Vec<usize> = if sample_size >= store.len() {
        if sample_size > store.len() {
            warn!("asked for {sample_size} embeddings for the domain mean, using all {}", store.len());
        }
        (0..store.len()).collect()
    } else {
        sample(rng, store.len(), sample_size.max(1)).into_vec()
    };
    picked.sort_unstable();
    let mut mean = vec![0.0; store.dim()];
    for &i in &picked {
        for (m, v) in mean.iter_mut().zip(store.vector(i)) {
            *m += v;
        }
    }
    let n = picked.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

fn subtract(v: &[f64], mean: &[f64]) -> Vec<f64> {
    v.iter().zip(mean).map(|(a, b)| a - b).collect()
}

/// Cosine between the two embeddings after removing the domain mean.
pub fn sub_mean_score(e: &[f64], t: &[f64], mean: &[f64]) -> Result<f64> {
    cosine_score(&subtract(e, mean), &subtract(t, mean)).map_err(|err| match err {
        Error::DegenerateEmbedding => Error::EqualsDomainMean,
        other => other,
    })
}

/// Reference embeddings for score normalization, one per speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub centers: Vec<Vec<f64>>,
    /// Id of the utterance each center came from.
    pub ids: Vec<String>,
}

impl Cohort {
    pub fn from_store(store: &EmbeddingStore) -> Result<Self> {
        let c = Self {
            centers: store.iter().map(|(_, v)| v.to_vec()).collect(),
            ids: store.ids().to_vec(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty() {
            return Err(Error::NoEmbeddings);
        }
        for c in &self.centers {
            if c.iter().any(|v| !v.is_finite()) || c.iter().all(|&v| v == 0.0) {
                return Err(Error::DegenerateEmbedding);
            }
        }
        Ok(())
    }

    fn shifted(&self, mean: &[f64]) -> Self {
        Self { centers: self.centers.iter().map(|c| subtract(c, mean)).collect(), ids: self.ids.clone() }
    }
}

/// One randomly chosen utterance per speaker, speakers in sorted order.
pub fn build_cohort<R: Rng + ?Sized>(store: &EmbeddingStore, rng: &mut R) -> Result<Cohort> {
    let utt2spk = store
        .speakers()
        .ok_or_else(|| Error::InvalidConfig("cohort construction needs a speaker grouping".into()))?;
    let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for spk in utt2spk.values() {
        by_speaker.entry(spk.as_str()).or_default();
    }
    for (i, id) in store.ids().iter().enumerate() {
        if let Some(spk) = utt2spk.get(id) {
            by_speaker.get_mut(spk.as_str()).expect("speaker inserted above").push(i);
        }
    }
    let mut cohort = Cohort { centers: Vec::new(), ids: Vec::new() };
    for (spk, utts) in by_speaker {
        if utts.is_empty() {
            warn!("speaker {spk} has no embeddings, left out of the cohort");
            continue;
        }
        let i = utts[rng.random_range(0..utts.len())];
        cohort.centers.push(store.vector(i).to_vec());
        cohort.ids.push(store.ids()[i].clone());
    }
    cohort.validate()?;
    Ok(cohort)
}

/// Mean and population standard deviation of the `top_k` highest cosine
/// scores of `x` against the cohort.
pub fn cohort_stats(x: &[f64], cohort: &Cohort, top_k: usize) -> Result<(f64, f64)> {
    if top_k < 2 {
        return Err(Error::InvalidConfig("AS-Norm top_k must be at least 2".into()));
    }
    if cohort.len() < top_k {
        return Err(Error::CohortTooSmall { size: cohort.len(), top_k });
    }
    let mut scores = cohort.centers.iter().map(|c| cosine_score(x, c)).collect::<Result<Vec<_>>>()?;
    scores.sort_unstable_by(|a, b| b.total_cmp(a));
    let top = &scores[..top_k];
    let mean = top.iter().sum::<f64>() / top_k as f64;
    let var = top.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / top_k as f64;
    let std = var.sqrt();
    if std < COHORT_STD_FLOOR {
        return Err(Error::DegenerateCohort);
    }
    Ok((mean, std))
}

/// Symmetric adaptive normalization:
/// `((raw - mu_e) / sigma_e + (raw - mu_t) / sigma_t) / 2`.
pub fn as_norm(raw: f64, e: &[f64], t: &[f64], cohort: &Cohort, top_k: usize) -> Result<f64> {
    let (me, se) = cohort_stats(e, cohort, top_k)?;
    let (mt, st) = cohort_stats(t, cohort, top_k)?;
    Ok(as_norm_from_stats(raw, (me, se), (mt, st)))
}

pub fn as_norm_from_stats(raw: f64, enroll: (f64, f64), test: (f64, f64)) -> f64 {
    0.5 * ((raw - enroll.0) / enroll.1 + (raw - test.0) / test.1)
}

#[derive(Debug, Clone, Default)]
pub struct ScoringOptions {
    /// Domain mean removed from every embedding before scoring.
    pub sub_mean: Option<Vec<f64>>,
    /// Cohort and top-k for adaptive normalization, applied after sub-mean.
    pub as_norm: Option<(Cohort, usize)>,
}

/// Scores a trial list; any id missing from the store fails the whole run.
pub fn score_trials(trials: &[Trial], store: &EmbeddingStore, opts: &ScoringOptions) -> Result<TrialScoreSet> {
    for t in trials {
        store.require(&t.enroll)?;
        store.require(&t.test)?;
    }
    let prepared = |id: &str| -> Vec<f64> {
        let v = store.get(id).expect("ids checked above");
        match &opts.sub_mean {
            Some(m) => subtract(v, m),
            None => v.to_vec(),
        }
    };
    let stats: HashMap<&str, (f64, f64)> = match &opts.as_norm {
        Some((cohort, top_k)) => {
            let cohort = match &opts.sub_mean {
                Some(m) => cohort.shifted(m),
                None => cohort.clone(),
            };
            let mut ids: Vec<&str> = trials.iter().flat_map(|t| [t.enroll.as_str(), t.test.as_str()]).collect();
            ids.sort_unstable();
            ids.dedup();
            ids.par_iter()
                .map(|&id| cohort_stats(&prepared(id), &cohort, *top_k).map(|s| (id, s)))
                .collect::<Result<_>>()?
        }
        None => HashMap::new(),
    };
    let records = trials
        .par_iter()
        .map(|t| {
            let (e, v) = (prepared(&t.enroll), prepared(&t.test));
            let raw = cosine_score(&e, &v).map_err(|err| match (&opts.sub_mean, err) {
                (Some(_), Error::DegenerateEmbedding) => Error::EqualsDomainMean,
                (_, other) => other,
            })?;
            let score = if opts.as_norm.is_some() {
                as_norm_from_stats(raw, stats[t.enroll.as_str()], stats[t.test.as_str()])
            } else {
                raw
            };
            Ok(TrialScore { enroll: t.enroll.clone(), test: t.test.clone(), score, label: t.label })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialScoreSet { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn cosine_hand_cases() {
        assert_eq!(cosine_score(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_score(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap() - 8.0 / 9.0).abs() < 1e-15);
        assert!(matches!(cosine_score(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::DegenerateEmbedding)));
    }

    #[test]
    fn sub_mean_hand_cases() {
        assert_eq!(sub_mean_score(&[2.0, 1.0], &[1.0, 2.0], &[1.0, 1.0]).unwrap(), 0.0);
        let m = [0.3, -0.2];
        let v = [1.0, 4.0];
        let e: Vec<f64> = m.iter().zip(&v).map(|(a, b)| a + b).collect();
        assert!((sub_mean_score(&e, &e, &m).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(sub_mean_score(&m, &e, &m), Err(Error::EqualsDomainMean)));
    }

    #[test]
    fn domain_mean_cases() {
        let mut rng = seed::substream(1, "mean");
        let one = EmbeddingStore::from_pairs(2, [("a".into(), vec![1.5, -2.0])]).unwrap();
        assert_eq!(domain_mean(&one, 10, &mut rng).unwrap(), vec![1.5, -2.0]);
        let pm = EmbeddingStore::from_pairs(2, [("a".into(), vec![1.5, -2.0]), ("b".into(), vec![-1.5, 2.0])])
            .unwrap();
        assert_eq!(domain_mean(&pm, 2, &mut rng).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(domain_mean(&EmbeddingStore::new(2), 1, &mut rng), Err(Error::NoEmbeddings)));

        let many = EmbeddingStore::from_pairs(
            1,
            (0..50).map(|i| (format!("u{i}"), vec![i as f64])),
        )
        .unwrap();
        let a = domain_mean(&many, 10, &mut seed::substream(4, "mean")).unwrap();
        let b = domain_mean(&many, 10, &mut seed::substream(4, "mean")).unwrap();
        assert_eq!(a, b);
    }

    fn grouped_store() -> EmbeddingStore {
        let mut rng = seed::substream(2, "store");
        let mut pairs = Vec::new();
        let mut utt2spk = HashMap::new();
        for s in 0..5 {
            for u in 0..3 {
                let id = format!("s{s}-u{u}");
                pairs.push((id.clone(), (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()));
                utt2spk.insert(id, format!("s{s}"));
            }
        }
        utt2spk.insert("ghost-u0".into(), "ghost".into());
        EmbeddingStore::from_pairs(4, pairs).unwrap().with_speakers(utt2spk)
    }

    #[test]
    fn cohort_has_one_center_per_speaker() {
        let store = grouped_store();
        let c = build_cohort(&store, &mut seed::substream(3, "cohort")).unwrap();
        assert_eq!(c.len(), 5);
        for (k, id) in c.ids.iter().enumerate() {
            assert!(id.starts_with(&format!("s{k}-")));
            assert_eq!(c.centers[k], store.get(id).unwrap());
        }
        assert_eq!(c, build_cohort(&store, &mut seed::substream(3, "cohort")).unwrap());
        assert!(build_cohort(&EmbeddingStore::new(4), &mut seed::substream(3, "c")).is_err());
    }

    #[test]
    fn as_norm_guards() {
        let c = Cohort { centers: vec![vec![1.0, 0.0], vec![0.0, 1.0]], ids: vec!["a".into(), "b".into()] };
        assert!(matches!(
            as_norm(0.5, &[1.0, 1.0], &[1.0, 0.0], &c, 3),
            Err(Error::CohortTooSmall { size: 2, top_k: 3 })
        ));
        // x at 45 degrees scores both centers equally
        assert!(matches!(as_norm(0.5, &[1.0, 1.0], &[1.0, 0.0], &c, 2), Err(Error::DegenerateCohort)));
    }

    #[test]
    fn as_norm_centered_case_is_zero() {
        let c = Cohort {
            centers: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]],
            ids: vec!["a".into(), "b".into(), "c".into()],
        };
        let x = [1.0, 0.0];
        let (mu, _) = cohort_stats(&x, &c, 2).unwrap();
        assert_eq!(as_norm(mu, &x, &x, &c, 2).unwrap(), 0.0);
    }

    #[test]
    fn scoring_fails_fast_on_unknown_ids() {
        let store = grouped_store();
        let trials = vec![Trial { enroll: "s0-u0".into(), test: "nope".into(), label: None }];
        assert!(matches!(
            score_trials(&trials, &store, &ScoringOptions::default()),
            Err(Error::UnknownId(id)) if id == "nope"
        ));
    }

    #[test]
    fn score_trials_composes_sub_mean_and_as_norm() {
        let store = grouped_store();
        let cohort = build_cohort(&store, &mut seed::substream(5, "cohort")).unwrap();
        let mean = domain_mean(&store, 15, &mut seed::substream(5, "mean")).unwrap();
        let trials = vec![
            Trial { enroll: "s0-u0".into(), test: "s0-u1".into(), label: Some(true) },
            Trial { enroll: "s1-u0".into(), test: "s2-u2".into(), label: Some(false) },
        ];
        let opts = ScoringOptions { sub_mean: Some(mean.clone()), as_norm: Some((cohort.clone(), 3)) };
        let got = score_trials(&trials, &store, &opts).unwrap();
        let shifted = cohort.shifted(&mean);
        for (t, r) in trials.iter().zip(&got.records) {
            let e = subtract(store.get(&t.enroll).unwrap(), &mean);
            let v = subtract(store.get(&t.test).unwrap(), &mean);
            let raw = sub_mean_score(store.get(&t.enroll).unwrap(), store.get(&t.test).unwrap(), &mean).unwrap();
            assert_eq!(r.score, as_norm(raw, &e, &v, &shifted, 3).unwrap());
            assert_eq!(r.label, t.label);
        }
    }
}
