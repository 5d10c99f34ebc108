mod common;

use rand::Rng;
use svkit::frontend::{
    chunk, cmn, logmel_fbank, read_feature_archive, read_wav, write_feature_archive, write_wav, Fbank,
    FrontendConfig, Waveform,
};

/// Reference log-mel frame: naive DFT and a filterbank built from the
/// triangle definition on the mel axis.
fn oracle_frame(samples: &[f64], cfg: &FrontendConfig) -> Vec<f64> {
    let mel = |hz: f64| 1127.0 * (1.0 + hz / 700.0).ln();
    let n = cfg.window_len;
    let mean = samples.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = samples.iter().map(|v| v - mean).collect();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let emph: Vec<f64> = (0..n)
        .map(|i| x[i] - cfg.preemph * if i == 0 { x[0] } else { x[i - 1] })
        .collect();
    let win: Vec<f64> = (0..n)
        .map(|i| emph[i] * (0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()))
        .collect();
    let bins = cfg.n_fft / 2 + 1;
    let power: Vec<f64> = (0..bins)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in win.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * i) as f64 / cfg.n_fft as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            re * re + im * im
        })
        .collect();
    let (lo, hi) = (mel(cfg.low_freq), mel(cfg.high_freq));
    let step = (hi - lo) / (cfg.n_mels + 1) as f64;
    let mut out: Vec<f64> = (0..cfg.n_mels)
        .map(|m| {
            let (l, c, r) = (lo + m as f64 * step, lo + (m + 1) as f64 * step, lo + (m + 2) as f64 * step);
            let e: f64 = (0..bins)
                .map(|k| {
                    let f = mel(k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64);
                    let w = if f > l && f <= c {
                        (f - l) / (c - l)
                    } else if f > c && f < r {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    };
                    w * power[k]
                })
                .sum();
            e.max(cfg.log_floor).ln()
        })
        .collect();
    out.push(energy.max(cfg.log_floor).ln());
    out
}

#[test]
fn matches_naive_dft_oracle() {
    let cfg = FrontendConfig::default();
    let mut r = common::rng(31);
    let samples: Vec<f64> = (0..2000).map(|i| 0.3 * (i as f64 * 0.07).sin() + r.random_range(-0.2..0.2)).collect();
    let feats = logmel_fbank(&Waveform::new(samples.clone(), 16_000).unwrap(), &cfg).unwrap();
    assert_eq!(feats.dim(), 81);
    assert_eq!(feats.num_frames(), (2000 - 400) / 160 + 1);
    for t in [0, 3, feats.num_frames() - 1] {
        let want = oracle_frame(&samples[t * 160..t * 160 + 400], &cfg);
        for (j, (&a, &b)) in feats.row(t).iter().zip(&want).enumerate() {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0), "frame {t} col {j}: {a} vs {b}");
        }
    }
}

#[test]
fn tone_peaks_in_the_nearest_filter() {
    let cfg = FrontendConfig::default();
    let fb = Fbank::new(cfg.clone()).unwrap();
    for hz in [300.0, 1000.0, 2500.0, 6000.0] {
        let feats = fb.compute(&Waveform::new(common::tone(hz, 4000, 0.5), 16_000).unwrap()).unwrap();
        let row = feats.row(5);
        let argmax = (0..cfg.n_mels).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        let nearest = (0..cfg.n_mels)
            .min_by(|&a, &b| (fb.mel_bank().center_hz(a) - hz).abs().total_cmp(&(fb.mel_bank().center_hz(b) - hz).abs()))
            .unwrap();
        assert!(argmax.abs_diff(nearest) <= 1, "{hz} Hz: {argmax} vs {nearest}");
    }
}

#[test]
fn silence_hits_the_floor_and_short_audio_fails() {
    let cfg = FrontendConfig::default();
    let feats = logmel_fbank(&Waveform::new(vec![0.0; 800], 16_000).unwrap(), &cfg).unwrap();
    assert!(feats.as_slice().iter().all(|&v| v == cfg.log_floor.ln()));
    assert!(logmel_fbank(&Waveform::new(vec![0.1; 399], 16_000).unwrap(), &cfg).is_err());
    assert!(logmel_fbank(&Waveform::new(vec![0.1; 800], 8000).unwrap(), &cfg).is_err());
}

#[test]
fn cmn_and_chunking() {
    let mut r = common::rng(32);
    let samples: Vec<f64> = (0..6000).map(|_| r.random_range(-0.5..0.5)).collect();
    let feats = logmel_fbank(&Waveform::new(samples, 16_000).unwrap(), &FrontendConfig::default()).unwrap();
    let normed = cmn(&feats);
    assert!(normed.column_means().iter().all(|m| m.abs() < 1e-10));

    let c = chunk(&feats, 10, &mut common::rng(0)).unwrap();
    assert_eq!(c.num_frames(), 10);
    let start = (0..feats.num_frames()).find(|&s| feats.row(s) == c.row(0)).unwrap();
    for i in 0..10 {
        assert_eq!(c.row(i), feats.row(start + i));
    }
    let t = feats.num_frames();
    let tiled = chunk(&feats, 2 * t + 3, &mut common::rng(0)).unwrap();
    for i in 0..tiled.num_frames() {
        assert_eq!(tiled.row(i), feats.row(i % t));
    }
    assert!(chunk(&feats, 0, &mut common::rng(0)).is_err());
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let w = Waveform::new(common::tone(440.0, 1600, 0.4), 16_000).unwrap();
    let p = dir.path().join("a.wav");
    write_wav(&p, &w).unwrap();
    let back = read_wav(&p).unwrap();
    assert_eq!(back.len(), w.len());
    assert!(back.samples.iter().zip(&w.samples).all(|(a, b)| (a - b).abs() <= 1.0 / 32768.0));

    let feats = logmel_fbank(&w, &FrontendConfig::default()).unwrap();
    let ark = dir.path().join("f.ark");
    write_feature_archive(std::fs::File::create(&ark).unwrap(), 81, &[("u1".into(), feats.clone())]).unwrap();
    let (dim, items) = read_feature_archive(&ark).unwrap();
    assert_eq!((dim, items.len(), items[0].0.as_str()), (81, 1, "u1"));
    for (a, b) in items[0].1.as_slice().iter().zip(feats.as_slice()) {
        assert_eq!(*a, *b as f32 as f64);
    }
    std::fs::write(&ark, b"FFKX\x01\0\0\0").unwrap();
    assert!(read_feature_archive(&ark).is_err());
}
