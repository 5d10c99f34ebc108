//! Cosine, Sub-Mean and AS-Norm scoring of a shifted embedding domain, then
//! logistic fusion of the three systems.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use svkit::backend::{
    build_cohort, domain_mean, fit_fusion, fuse, score_trials, EmbeddingStore, FusionConfig, ScoringOptions, Trial,
};
use svkit::metrics::eer;
use svkit::seed;

fn main() -> svkit::Result<()> {
    let mut rng = seed::substream(9, "example");
    let dim = 16;
    let mut gauss = |n: usize, sd: f64| -> Vec<f64> { (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect() };
    let offset = gauss(dim, 1.5);
    let mut pairs = Vec::new();
    let mut utt2spk = HashMap::new();
    for s in 0..20 {
        let center = gauss(dim, 1.0);
        for u in 0..4 {
            let noise = gauss(dim, 0.8);
            let v = (0..dim).map(|i| center[i] + noise[i] + offset[i]).collect();
            let id = format!("spk{s:02}-{u}");
            utt2spk.insert(id.clone(), format!("spk{s:02}"));
            pairs.push((id, v));
        }
    }
    let store = EmbeddingStore::from_pairs(dim, pairs)?.with_speakers(utt2spk.clone());
    let ids = store.ids().to_vec();
    let trials: Vec<Trial> = ids
        .iter()
        .enumerate()
        .flat_map(|(i, a)| ids[i + 1..].iter().map(move |b| (a, b)))
        .map(|(a, b)| Trial { enroll: a.clone(), test: b.clone(), label: Some(utt2spk[a] == utt2spk[b]) })
        .collect();

    let mean = domain_mean(&store, 40, &mut seed::substream(9, "backend-mean"))?;
    let cohort = build_cohort(&store, &mut seed::substream(9, "cohort"))?;
    let systems = [
        ("cosine", ScoringOptions::default()),
        ("sub-mean", ScoringOptions { sub_mean: Some(mean.clone()), as_norm: None }),
        ("sub-mean + AS-Norm", ScoringOptions { sub_mean: Some(mean), as_norm: Some((cohort, 10)) }),
    ];
    let mut scored = Vec::new();
    for (name, opts) in &systems {
        let s = score_trials(&trials, &store, opts)?;
        println!("{name:<20} EER {:.2}%", 100.0 * eer(&s.labeled()?)?.0);
        scored.push(s);
    }
    let model = fit_fusion(&scored, &FusionConfig::default())?;
    let fused = fuse(&scored, &model)?;
    println!("fusion weights {:?}: EER {:.2}%", model.weights, 100.0 * eer(&fused.labeled()?)?.0);
    Ok(())
}
