//! Noise mixing at a target SNR, interval noise, speed perturbation and the
//! speaker-label expansion that goes with it.

use rand::Rng;
use svkit::augment::{add_interval_noise_detailed, expand_speakers, mix_at_snr_detailed, speed_perturb, IntervalNoiseConfig};
use svkit::frontend::Waveform;
use svkit::seed;

fn snr_db(clean: &[f64], mixed: &[f64], rescale: f64) -> f64 {
    let p = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>();
    let noise = p(&mut mixed.iter().zip(clean).map(|(m, c)| m / rescale - c));
    10.0 * (p(&mut clean.iter().copied()) / noise).log10()
}

fn main() -> svkit::Result<()> {
    let mut rng = seed::substream(3, "example");
    let speech = Waveform::new(
        (0..48_000).map(|i| 0.3 * (i as f64 * 0.05).sin() * (i as f64 * 0.0007).cos()).collect(),
        16_000,
    )?;
    let noise = Waveform::new((0..10_000).map(|_| rng.random_range(-0.2..0.2)).collect(), 16_000)?;

    for target in [0.0, 5.0, 15.0] {
        let (mixed, mix) = mix_at_snr_detailed(&speech, &noise, target, &mut rng)?;
        let got = snr_db(&speech.samples, &mixed.samples, mix.rescale);
        println!("requested {target:>4} dB, measured {got:.6} dB (error {:.1e})", (got - target).abs());
    }

    let (_, placed) = add_interval_noise_detailed(&speech, std::slice::from_ref(&noise), &IntervalNoiseConfig::default(), &mut rng)?;
    for p in &placed {
        println!("noise at {:.1} s for {:.1} s at {:.2} dB", p.offset as f64 / 16e3, p.len as f64 / 16e3, p.snr_db);
    }

    for f in [0.9, 1.1] {
        let out = speed_perturb(&speech, f)?;
        println!("speed {f}: {} -> {} samples", speech.len(), out.len());
    }

    let labels = expand_speakers(&["id10001", "id10002"])?;
    println!("classes after speed perturbation: {:?}", labels.labels());
    Ok(())
}
