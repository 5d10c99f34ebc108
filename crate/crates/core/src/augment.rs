//! Waveform corruption recipes (reverberation, music, interval noise,
//! babble), speed perturbation, and the speaker-label expansion that
//! speed perturbation implies.

use std::collections::HashMap;

use log::warn;
use rand::Rng;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::frontend::{mean_power, Waveform};

/// Requested SNRs above this are treated as this value.
pub const MAX_SNR_DB: f64 = 100.0;

/// Full linear convolution, `x.len() + h.len() - 1` samples.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    if x.len().min(h.len()) <= 64 {
        let mut y = vec![0.0; out_len];
        for (i, &a) in x.iter().enumerate() {
            for (j, &b) in h.iter().enumerate() {
                y[i + j] += a * b;
            }
        }
        return y;
    }
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| {
        let mut buf: Vec<Complex<f64>> = v.iter().map(|&r| Complex::new(r, 0.0)).collect();
        buf.resize(n, Complex::new(0.0, 0.0));
        buf
    };
    let mut a = pad(x);
    let mut b = pad(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a[..out_len].iter().map(|c| c.re / n as f64).collect()
}

/// Output loudness policy for [`apply_rir_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RirGain {
    /// Rescale so the peak magnitude equals the input's.
    #[default]
    MatchPeak,
    /// Rescale so the mean power equals the input's.
    MatchEnergy,
    /// Leave the convolution output as is.
    Raw,
}

pub fn apply_rir(wave: &Waveform, rir: &Waveform) -> Result<Waveform> {
    apply_rir_with(wave, rir, RirGain::MatchPeak)
}

/// Convolves with a room impulse response and truncates to the input length.
pub fn apply_rir_with(wave: &Waveform, rir: &Waveform, gain: RirGain) -> Result<Waveform> {
    if wave.sample_rate != rir.sample_rate {
        return Err(Error::RateMismatch(wave.sample_rate, rir.sample_rate));
    }
    if rir.is_empty() {
        return Err(Error::InvalidConfig("empty impulse response".into()));
    }
    let mut out = convolve(&wave.samples, &rir.samples);
    out.truncate(wave.len());
    let scale = match gain {
        RirGain::MatchPeak => ratio(wave.peak(), peak(&out)),
        RirGain::MatchEnergy => ratio(wave.power(), mean_power(&out)).sqrt(),
        RirGain::Raw => 1.0,
    };
    out.iter_mut().for_each(|v| *v *= scale);
    Waveform::new(out, wave.sample_rate)
}

fn peak(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        1.0
    }
}

/// Tiles a short clip, or cuts a randomly placed window out of a long one,
/// so the result has exactly `len` samples.
pub fn fit_length<R: Rng + ?Sized>(clip: &[f64], len: usize, rng: &mut R) -> Vec<f64> {
    assert!(!clip.is_empty(), "cannot fit an empty clip");
    if clip.len() > len {
        let start = rng.random_range(0..=clip.len() - len);
        clip[start..start + len].to_vec()
    } else {
        clip.iter().copied().cycle().take(len).collect()
    }
}

/// Gain applied to the interferer and the global rescale applied afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mix {
    pub gain: f64,
    pub rescale: f64,
}

fn snr_gain(signal_power: f64, interferer_power: f64, snr_db: f64) -> f64 {
    let snr_db = snr_db.min(MAX_SNR_DB);
    (signal_power / (interferer_power * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// If any sample exceeds unit magnitude, scale the whole signal down.
fn rescale_if_clipping(x: &mut [f64]) -> f64 {
    let p = peak(x);
    if p > 1.0 {
        let s = 1.0 / p;
        x.iter_mut().for_each(|v| *v *= s);
        s
    } else {
        1.0
    }
}

pub fn mix_at_snr<R: Rng + ?Sized>(
    wave: &Waveform,
    interferer: &Waveform,
    snr_db: f64,
    rng: &mut R,
) -> Result<Waveform> {
    mix_at_snr_detailed(wave, interferer, snr_db, rng).map(|(w, _)| w)
}

/// Adds `interferer` (tiled or trimmed to length) so that the mixture has
/// the requested SNR against the original signal.
pub fn mix_at_snr_detailed<R: Rng + ?Sized>(
    wave: &Waveform,
    interferer: &Waveform,
    snr_db: f64,
    rng: &mut R,
) -> Result<(Waveform, Mix)> {
    if wave.sample_rate != interferer.sample_rate {
        return Err(Error::RateMismatch(wave.sample_rate, interferer.sample_rate));
    }
    if wave.is_empty() || interferer.is_empty() {
        return Err(Error::InvalidConfig("mixing needs nonempty audio".into()));
    }
    let noise = fit_length(&interferer.samples, wave.len(), rng);
    let p_noise = mean_power(&noise);
    if p_noise == 0.0 {
        return Err(Error::SilentInterferer);
    }
    let gain = snr_gain(wave.power(), p_noise, snr_db);
    let mut out: Vec<f64> = wave.samples.iter().zip(&noise).map(|(s, n)| s + gain * n).collect();
    let rescale = rescale_if_clipping(&mut out);
    Ok((Waveform::new(out, wave.sample_rate)?, Mix { gain, rescale }))
}

/// Whether interval noise draws one SNR for the whole recording or a fresh
/// one per interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SnrDraw {
    #[default]
    PerInterval,
    PerRecording,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalNoiseConfig {
    pub snr_range_db: (f64, f64),
    pub interval_s: f64,
    pub draw: SnrDraw,
}

impl Default for IntervalNoiseConfig {
    fn default() -> Self {
        Self { snr_range_db: (0.0, 15.0), interval_s: 1.0, draw: SnrDraw::PerInterval }
    }
}

/// One noise clip mixed into one segment of the recording.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePlacement {
    pub offset: usize,
    pub len: usize,
    pub source: usize,
    pub snr_db: f64,
    pub gain: f64,
}

pub fn add_interval_noise<R: Rng + ?Sized>(
    wave: &Waveform,
    noises: &[Waveform],
    cfg: &IntervalNoiseConfig,
    rng: &mut R,
) -> Result<Waveform> {
    add_interval_noise_detailed(wave, noises, cfg, rng).map(|(w, _)| w)
}

/// Mixes a randomly chosen noise clip into every `interval_s` segment of
/// the input; SNR is measured against that segment alone.
pub fn add_interval_noise_detailed<R: Rng + ?Sized>(
    wave: &Waveform,
    noises: &[Waveform],
    cfg: &IntervalNoiseConfig,
    rng: &mut R,
) -> Result<(Waveform, Vec<NoisePlacement>)> {
    if noises.is_empty() {
        return Err(Error::NoNoiseSources);
    }
    let (lo, hi) = cfg.snr_range_db;
    if lo > hi || cfg.interval_s <= 0.0 {
        return Err(Error::InvalidConfig("bad interval-noise settings".into()));
    }
    for n in noises {
        if n.sample_rate != wave.sample_rate {
            return Err(Error::RateMismatch(wave.sample_rate, n.sample_rate));
        }
        if mean_power(&n.samples) == 0.0 {
            return Err(Error::SilentInterferer);
        }
    }
    let step = ((cfg.interval_s * wave.sample_rate as f64).round() as usize).max(1);
    let mut out = wave.samples.clone();
    let mut placements = Vec::new();
    let recording_snr = rng.random_range(lo..=hi);
    for offset in (0..wave.len()).step_by(step) {
        let len = step.min(wave.len() - offset);
        let source = rng.random_range(0..noises.len());
        let snr_db = match cfg.draw {
            SnrDraw::PerInterval => rng.random_range(lo..=hi),
            SnrDraw::PerRecording => recording_snr,
        };
        let noise = fit_length(&noises[source].samples, len, rng);
        let segment = &mut out[offset..offset + len];
        let gain = snr_gain(mean_power(segment), mean_power(&noise), snr_db);
        for (s, n) in segment.iter_mut().zip(&noise) {
            *s += gain * n;
        }
        placements.push(NoisePlacement { offset, len, source, snr_db, gain });
    }
    rescale_if_clipping(&mut out);
    Ok((Waveform::new(out, wave.sample_rate)?, placements))
}

const SINC_ZEROS: f64 = 16.0;

/// Resamples by `1 / factor` so both tempo and pitch change, like the
/// `speed` effect of common audio tools.
pub fn speed_perturb(wave: &Waveform, factor: f64) -> Result<Waveform> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::InvalidFactor(factor));
    }
    if factor == 1.0 {
        return Ok(wave.clone());
    }
    if factor != 0.9 && factor != 1.1 {
        warn!("speed factor {factor} is outside the usual {{0.9, 1.1}}");
    }
    let n = wave.len();
    let out_len = (n as f64 / factor).round() as usize;
    // low-pass at the lower of the two Nyquist rates
    let cutoff = (1.0 / factor).min(1.0);
    let half_width = SINC_ZEROS / cutoff;
    let x = &wave.samples;
    let out = (0..out_len)
        .map(|i| {
            let t = i as f64 * factor;
            let lo = ((t - half_width).ceil().max(0.0)) as usize;
            let hi = ((t + half_width).floor() as usize).min(n.saturating_sub(1));
            (lo..=hi)
                .map(|k| {
                    let d = t - k as f64;
                    let w = 0.5 + 0.5 * (std::f64::consts::PI * d / half_width).cos();
                    x[k] * cutoff * sinc(cutoff * d) * w
                })
                .sum()
        })
        .collect();
    Waveform::new(out, wave.sample_rate)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpeedVariant {
    Original,
    Slow,
    Fast,
}

impl SpeedVariant {
    pub const ALL: [SpeedVariant; 3] = [SpeedVariant::Original, SpeedVariant::Slow, SpeedVariant::Fast];

    pub fn factor(self) -> f64 {
        match self {
            SpeedVariant::Original => 1.0,
            SpeedVariant::Slow => 0.9,
            SpeedVariant::Fast => 1.1,
        }
    }

    /// Speaker label of the perturbed copy, e.g. `sp0.9-spk01`.
    pub fn label(self, speaker: &str) -> String {
        match self {
            SpeedVariant::Original => speaker.to_string(),
            v => format!("sp{}-{speaker}", v.factor()),
        }
    }
}

/// Class indices for every (speaker, speed variant) pair: all original
/// speakers first, then the 0.9 copies, then the 1.1 copies.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerLabelMap {
    speakers: Vec<String>,
    index: HashMap<String, usize>,
}

impl SpeakerLabelMap {
    pub fn base_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn num_classes(&self) -> usize {
        3 * self.speakers.len()
    }

    pub fn class(&self, speaker: &str, variant: SpeedVariant) -> Option<usize> {
        let block = SpeedVariant::ALL.iter().position(|&v| v == variant)?;
        self.index.get(speaker).map(|&i| block * self.speakers.len() + i)
    }

    /// `(speaker, variant)` for a class index.
    pub fn speaker_of(&self, class: usize) -> Option<(&str, SpeedVariant)> {
        let n = self.speakers.len();
        let variant = *SpeedVariant::ALL.get(class / n.max(1))?;
        Some((self.speakers[class % n].as_str(), variant))
    }

    /// Expanded labels in class order.
    pub fn labels(&self) -> Vec<String> {
        (0..self.num_classes())
            .map(|c| {
                let (s, v) = self.speaker_of(c).unwrap();
                v.label(s)
            })
            .collect()
    }
}

pub fn expand_speakers<S: AsRef<str>>(base: &[S]) -> Result<SpeakerLabelMap> {
    if base.is_empty() {
        return Err(Error::InvalidConfig("no speakers to expand".into()));
    }
    let mut index = HashMap::with_capacity(base.len());
    let mut speakers = Vec::with_capacity(base.len());
    for s in base {
        let s = s.as_ref().to_string();
        if index.insert(s.clone(), speakers.len()).is_some() {
            return Err(Error::DuplicateSpeaker(s));
        }
        speakers.push(s);
    }
    Ok(SpeakerLabelMap { speakers, index })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AugmentKind {
    Reverb,
    Music,
    NoiseIntervals,
    Babble,
    Speed,
}

impl AugmentKind {
    pub fn name(self) -> &'static str {
        match self {
            AugmentKind::Reverb => "reverb",
            AugmentKind::Music => "music",
            AugmentKind::NoiseIntervals => "noise",
            AugmentKind::Babble => "babble",
            AugmentKind::Speed => "speed",
        }
    }
}

/// One corruption recipe with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentRecipe {
    pub kind: AugmentKind,
    pub snr_range_db: (f64, f64),
    pub speed_factor: f64,
    pub interval_s: f64,
    /// Inclusive talker-count range for babble.
    pub talkers: (usize, usize),
    pub rir_gain: RirGain,
}

impl AugmentRecipe {
    fn base(kind: AugmentKind, snr_range_db: (f64, f64)) -> Self {
        Self {
            kind,
            snr_range_db,
            speed_factor: 1.0,
            interval_s: 1.0,
            talkers: (3, 7),
            rir_gain: RirGain::MatchPeak,
        }
    }

    pub fn reverb() -> Self {
        Self::base(AugmentKind::Reverb, (0.0, 0.0))
    }

    pub fn music() -> Self {
        Self::base(AugmentKind::Music, (5.0, 15.0))
    }

    pub fn noise() -> Self {
        Self::base(AugmentKind::NoiseIntervals, (0.0, 15.0))
    }

    pub fn babble() -> Self {
        Self::base(AugmentKind::Babble, (13.0, 20.0))
    }

    pub fn speed(factor: f64) -> Self {
        Self { speed_factor: factor, ..Self::base(AugmentKind::Speed, (0.0, 0.0)) }
    }

    /// Reverb, music, interval noise and babble with their default SNR ranges.
    pub fn corruption_set() -> Vec<Self> {
        vec![Self::reverb(), Self::music(), Self::noise(), Self::babble()]
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.snr_range_db;
        if !(lo <= hi) {
            return Err(Error::InvalidConfig(format!("{}: snr range {lo}..{hi}", self.kind.name())));
        }
        if !(self.speed_factor > 0.0) {
            return Err(Error::InvalidFactor(self.speed_factor));
        }
        if self.interval_s <= 0.0 || self.talkers.0 == 0 || self.talkers.0 > self.talkers.1 {
            return Err(Error::InvalidConfig(format!("{}: bad parameters", self.kind.name())));
        }
        Ok(())
    }

    fn draw_snr<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.snr_range_db;
        rng.random_range(lo..=hi)
    }

    pub fn apply<R: Rng + ?Sized>(
        &self,
        wave: &Waveform,
        sources: &AugmentSources,
        rng: &mut R,
    ) -> Result<Waveform> {
        self.validate()?;
        let pick = |pool: &'_ [Waveform], rng: &mut R| -> Result<usize> {
            if pool.is_empty() {
                Err(Error::InvalidConfig(format!("no source audio for {}", self.kind.name())))
            } else {
                Ok(rng.random_range(0..pool.len()))
            }
        };
        match self.kind {
            AugmentKind::Reverb => {
                let i = pick(&sources.rirs, rng)?;
                apply_rir_with(wave, &sources.rirs[i], self.rir_gain)
            }
            AugmentKind::Music => {
                let i = pick(&sources.music, rng)?;
                let snr = self.draw_snr(rng);
                mix_at_snr(wave, &sources.music[i], snr, rng)
            }
            AugmentKind::NoiseIntervals => {
                let cfg = IntervalNoiseConfig {
                    snr_range_db: self.snr_range_db,
                    interval_s: self.interval_s,
                    draw: SnrDraw::PerInterval,
                };
                add_interval_noise(wave, &sources.noises, &cfg, rng)
            }
            AugmentKind::Babble => {
                pick(&sources.speech, rng)?;
                let talkers = rng.random_range(self.talkers.0..=self.talkers.1);
                let mut babble = vec![0.0; wave.len()];
                for _ in 0..talkers {
                    let clip = &sources.speech[rng.random_range(0..sources.speech.len())];
                    if clip.sample_rate != wave.sample_rate {
                        return Err(Error::RateMismatch(wave.sample_rate, clip.sample_rate));
                    }
                    for (b, v) in babble.iter_mut().zip(fit_length(&clip.samples, wave.len(), rng)) {
                        *b += v;
                    }
                }
                let snr = self.draw_snr(rng);
                mix_at_snr(wave, &Waveform::new(babble, wave.sample_rate)?, snr, rng)
            }
            AugmentKind::Speed => speed_perturb(wave, self.speed_factor),
        }
    }
}

/// Pools of corrupting audio: impulse responses, noise, music and speech.
#[derive(Debug, Clone, Default)]
pub struct AugmentSources {
    pub rirs: Vec<Waveform>,
    pub noises: Vec<Waveform>,
    pub music: Vec<Waveform>,
    pub speech: Vec<Waveform>,
}

/// Picks uniformly among "leave clean" and each recipe, then applies the
/// choice. Returns the recipe used, `None` for clean.
pub fn augment_random<'a, R: Rng + ?Sized>(
    wave: &Waveform,
    recipes: &'a [AugmentRecipe],
    sources: &AugmentSources,
    rng: &mut R,
) -> Result<(Waveform, Option<&'a AugmentRecipe>)> {
    let choice = rng.random_range(0..=recipes.len());
    if choice == 0 {
        return Ok((wave.clone(), None));
    }
    let recipe = &recipes[choice - 1];
    Ok((recipe.apply(wave, sources, rng)?, Some(recipe)))
}
