//! Log-mel filterbank frontend: framing, per-frame energy, cepstral mean
//! normalization and fixed-length chunking.

pub(crate) mod archive;
mod wav;

pub use archive::{read_feature_archive, write_feature_archive, FEATURE_MAGIC};
pub use wav::{read_wav, write_wav};

use std::sync::Arc;

use rand::Rng;
use rustfft::{num_complex::Complex, Fft, FftPlanner};

use crate::error::{Error, Result};

/// Mono audio at a fixed sample rate. Samples are nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, &s| m.max(s.abs()))
    }
}

pub(crate) fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Row-major `T x dim` matrix of frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    dim: usize,
    /// Seconds between consecutive frames.
    pub frame_shift: f64,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, dim: usize, frame_shift: f64) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { data, dim, frame_shift })
    }

    pub fn from_rows(rows: &[Vec<f64>], frame_shift: f64) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.concat(), dim, frame_shift)
    }

    pub fn num_frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column_means(&self) -> Vec<f64> {
        let t = self.num_frames().max(1) as f64;
        let mut means = vec![0.0; self.dim];
        for row in self.rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= t);
        means
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    /// Analysis window in samples (25 ms at 16 kHz).
    pub window_len: usize,
    /// Frame shift in samples (10 ms at 16 kHz).
    pub hop_len: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub preemph: f64,
    pub low_freq: f64,
    pub high_freq: f64,
    pub log_floor: f64,
    pub remove_dc: bool,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window_len: 400,
            hop_len: 160,
            n_fft: 512,
            n_mels: 80,
            preemph: 0.97,
            low_freq: 20.0,
            high_freq: 7600.0,
            log_floor: 1e-10,
            remove_dc: true,
        }
    }
}

impl FrontendConfig {
    /// Mel bins plus the trailing log-energy column.
    pub fn feature_dim(&self) -> usize {
        self.n_mels + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.sample_rate != 16_000 {
            return bad("sample rate must be 16000 Hz");
        }
        if self.window_len == 0 || self.hop_len == 0 || self.n_mels == 0 {
            return bad("window, hop and mel count must be positive");
        }
        if self.n_fft < self.window_len {
            return bad("FFT size smaller than the window");
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(0.0 <= self.low_freq && self.low_freq < self.high_freq && self.high_freq <= nyquist) {
            return bad("mel frequency range must satisfy 0 <= low < high <= nyquist");
        }
        if self.log_floor <= 0.0 {
            return bad("log floor must be positive");
        }
        Ok(())
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        if num_samples < self.window_len {
            0
        } else {
            (num_samples - self.window_len) / self.hop_len + 1
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters laid out evenly on the mel scale.
#[derive(Debug, Clone)]
pub struct MelBank {
    /// Per filter: first FFT bin with nonzero weight and the weights from there.
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
}

impl MelBank {
    pub fn new(cfg: &FrontendConfig) -> Self {
        let mel_lo = hz_to_mel(cfg.low_freq);
        let mel_hi = hz_to_mel(cfg.high_freq);
        let delta = (mel_hi - mel_lo) / (cfg.n_mels + 1) as f64;
        let n_bins = cfg.n_fft / 2 + 1;
        let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
        let mut filters = Vec::with_capacity(cfg.n_mels);
        let mut centers_hz = Vec::with_capacity(cfg.n_mels);
        for m in 0..cfg.n_mels {
            let left = mel_lo + m as f64 * delta;
            let center = left + delta;
            let right = center + delta;
            centers_hz.push(mel_to_hz(center));
            let mut first = None;
            let mut weights = Vec::new();
            for bin in 0..n_bins {
                let mel = hz_to_mel(bin as f64 * bin_hz);
                let w = if mel > left && mel <= center {
                    (mel - left) / (center - left)
                } else if mel > center && mel < right {
                    (right - mel) / (right - center)
                } else {
                    0.0
                };
                if w > 0.0 {
                    let start = *first.get_or_insert(bin);
                    weights.resize(bin - start, 0.0);
                    weights.push(w);
                }
            }
            filters.push((first.unwrap_or(0), weights));
        }
        Self { filters, centers_hz }
    }

    pub fn center_hz(&self, m: usize) -> f64 {
        self.centers_hz[m]
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Weight of filter `m` at FFT bin `bin`.
    pub fn weight(&self, m: usize, bin: usize) -> f64 {
        let (start, w) = &self.filters[m];
        bin.checked_sub(*start).and_then(|i| w.get(i)).copied().unwrap_or(0.0)
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for ((start, w), o) in self.filters.iter().zip(out.iter_mut()) {
            *o = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Reusable extractor; holds the FFT plan, window and filterbank.
pub struct Fbank {
    cfg: FrontendConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    bank: MelBank,
}

impl Fbank {
    pub fn new(cfg: FrontendConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        let window = hamming(cfg.window_len);
        let bank = MelBank::new(&cfg);
        Ok(Self { cfg, fft, window, bank })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    pub fn mel_bank(&self) -> &MelBank {
        &self.bank
    }

    /// Log-mel energies in columns `0..n_mels`, log frame energy in the last column.
    pub fn compute(&self, wave: &Waveform) -> Result<FeatureMatrix> {
        let cfg = &self.cfg;
        if wave.sample_rate != cfg.sample_rate {
            return Err(Error::InvalidConfig(format!(
                "expected {} Hz audio, got {} Hz",
                cfg.sample_rate, wave.sample_rate
            )));
        }
        if wave.len() < cfg.window_len {
            return Err(Error::AudioTooShort { samples: wave.len(), window: cfg.window_len });
        }
        let n_frames = cfg.num_frames(wave.len());
        let dim = cfg.feature_dim();
        let n_bins = cfg.n_fft / 2 + 1;
        let mut out = vec![0.0; n_frames * dim];
        let mut frame = vec![0.0; cfg.window_len];
        let mut spectrum = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut power = vec![0.0; n_bins];
        for (t, row) in out.chunks_exact_mut(dim).enumerate() {
            let start = t * cfg.hop_len;
            frame.copy_from_slice(&wave.samples[start..start + cfg.window_len]);
            let energy = preprocess_frame(&mut frame, cfg, &self.window);
            for (c, &v) in spectrum.iter_mut().zip(frame.iter()) {
                *c = Complex::new(v, 0.0);
            }
            spectrum[cfg.window_len..].fill(Complex::new(0.0, 0.0));
            self.fft.process(&mut spectrum);
            for (p, c) in power.iter_mut().zip(&spectrum) {
                *p = c.norm_sqr();
            }
            let (mels, last) = row.split_at_mut(cfg.n_mels);
            self.bank.apply(&power, mels);
            for v in mels.iter_mut() {
                *v = v.max(cfg.log_floor).ln();
            }
            last[0] = energy.max(cfg.log_floor).ln();
        }
        FeatureMatrix::new(out, dim, cfg.hop_len as f64 / cfg.sample_rate as f64)
    }
}

/// DC removal, raw energy, pre-emphasis and windowing, in place. Returns
/// the frame energy measured before pre-emphasis.
pub(crate) fn preprocess_frame(frame: &mut [f64], cfg: &FrontendConfig, window: &[f64]) -> f64 {
    if cfg.remove_dc {
        let mean = frame.iter().sum::<f64>() / frame.len() as f64;
        frame.iter_mut().for_each(|v| *v -= mean);
    }
    let energy = frame.iter().map(|v| v * v).sum();
    if cfg.preemph != 0.0 {
        for i in (1..frame.len()).rev() {
            frame[i] -= cfg.preemph * frame[i - 1];
        }
        frame[0] -= cfg.preemph * frame[0];
    }
    for (v, w) in frame.iter_mut().zip(window) {
        *v *= w;
    }
    energy
}

pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
        .collect()
}

pub fn logmel_fbank(wave: &Waveform, cfg: &FrontendConfig) -> Result<FeatureMatrix> {
    Fbank::new(cfg.clone())?.compute(wave)
}

/// Subtract each column's mean over time.
pub fn cmn(features: &FeatureMatrix) -> FeatureMatrix {
    let means = features.column_means();
    let mut data = features.data.clone();
    for row in data.chunks_exact_mut(features.dim) {
        for (v, m) in row.iter_mut().zip(&means) {
            *v -= m;
        }
    }
    FeatureMatrix { data, dim: features.dim, frame_shift: features.frame_shift }
}

/// Exactly `chunk_len` frames: a uniformly placed window when the input is
/// long enough, otherwise the input tiled end to end.
pub fn chunk<R: Rng + ?Sized>(
    features: &FeatureMatrix,
    chunk_len: usize,
    rng: &mut R,
) -> Result<FeatureMatrix> {
    if chunk_len == 0 {
        return Err(Error::InvalidConfig("chunk length must be at least 1".into()));
    }
    let t = features.num_frames();
    if t == 0 {
        return Err(Error::Shape("cannot chunk an empty feature matrix".into()));
    }
    let dim = features.dim;
    let data = if t >= chunk_len {
        let start = rng.random_range(0..=t - chunk_len);
        features.data[start * dim..(start + chunk_len) * dim].to_vec()
    } else {
        (0..chunk_len).flat_map(|i| features.row(i % t).iter().copied()).collect()
    };
    Ok(FeatureMatrix { data, dim, frame_shift: features.frame_shift })
}
