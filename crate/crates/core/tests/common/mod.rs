//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod gradcheck;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `(threshold, p_miss, p_fa)` by direct counting at every candidate
/// threshold; accept when `score >= threshold`.
pub fn brute_sweep(trials: &[(f64, bool)]) -> Vec<(f64, f64, f64)> {
    let mut ths = vec![f64::NEG_INFINITY];
    for &(s, _) in trials {
        if !ths.contains(&s) {
            ths.push(s);
        }
    }
    ths.push(f64::INFINITY);
    ths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nt = trials.iter().filter(|t| t.1).count() as f64;
    let nn = trials.iter().filter(|t| !t.1).count() as f64;
    ths.into_iter()
        .map(|th| {
            let accept = |s: f64| th != f64::INFINITY && s >= th;
            let miss = trials.iter().filter(|t| t.1 && !accept(t.0)).count() as f64;
            let fa = trials.iter().filter(|t| !t.1 && accept(t.0)).count() as f64;
            (th, miss / nt, fa / nn)
        })
        .collect()
}

/// EER rate: the first point with `p_miss >= p_fa`, linearly interpolated
/// against its predecessor unless it sits exactly on the diagonal.
pub fn brute_eer(trials: &[(f64, bool)]) -> f64 {
    let pts = brute_sweep(trials);
    for i in 0..pts.len() {
        let (_, pm, pf) = pts[i];
        if pm - pf >= 0.0 {
            if pm - pf == 0.0 || i == 0 {
                return pm;
            }
            let (_, pm0, pf0) = pts[i - 1];
            let (d0, d1) = (pm0 - pf0, pm - pf);
            let a = -d0 / (d1 - d0);
            return pm0 + a * (pm - pm0);
        }
    }
    unreachable!("reject-all point has p_miss = 1")
}

pub fn brute_min_dcf(trials: &[(f64, bool)], p_tar: f64, c_miss: f64, c_fa: f64) -> f64 {
    let norm = (p_tar * c_miss).min((1.0 - p_tar) * c_fa);
    brute_sweep(trials)
        .into_iter()
        .map(|(_, pm, pf)| (p_tar * c_miss * pm + (1.0 - p_tar) * c_fa * pf) / norm)
        .fold(f64::INFINITY, f64::min)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Sort every cohort score, keep the top `k`, take population moments.
pub fn as_norm_oracle(e: &[f64], t: &[f64], cohort: &[Vec<f64>], k: usize) -> f64 {
    let stats = |x: &[f64]| {
        let mut s: Vec<f64> = cohort.iter().map(|c| cosine(x, c)).collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let top = &s[..k];
        let mu = top.iter().sum::<f64>() / k as f64;
        let var = top.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / k as f64;
        (mu, var.sqrt())
    };
    let raw = cosine(e, t);
    let (me, se) = stats(e);
    let (mt, st) = stats(t);
    0.5 * ((raw - me) / se + (raw - mt) / st)
}

pub fn gaussian_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

pub fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Labeled score sets: for each size 2..=12, a few random score vectors
/// (coarsely quantized so ties occur) under every label pattern that has
/// both classes.
pub fn metric_cases(seed: u64, vectors_per_size: usize) -> Vec<Vec<(f64, bool)>> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for n in 2..=12usize {
        for v in 0..vectors_per_size {
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    let s: f64 = r.random_range(-1.0..1.0);
                    if v % 2 == 0 { (s * 4.0).round() / 4.0 } else { s }
                })
                .collect();
            for mask in 1u32..(1 << n) - 1 {
                out.push(scores.iter().enumerate().map(|(i, &s)| (s, mask >> i & 1 == 1)).collect());
            }
        }
    }
    out
}

/// Bin with the largest magnitude in a naive DFT of `x`.
pub fn dft_peak_bin(x: &[f64], n_bins: usize) -> usize {
    let n = x.len() as f64;
    (0..n_bins)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * k as f64 * i as f64 / n;
                re += v * a.cos();
                im += v * a.sin();
            }
            (k, re * re + im * im)
        })
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap()
        .0
}

/// SNR of `mixed` against the clean signal, undoing any clipping rescale.
pub fn measured_snr_db(clean: &[f64], mixed: &[f64], rescale: f64) -> f64 {
    let noise: Vec<f64> = mixed.iter().zip(clean).map(|(m, c)| m / rescale - c).collect();
    10.0 * (power(clean) / power(&noise)).log10()
}

pub fn tone(freq: f64, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin()).collect()
}
