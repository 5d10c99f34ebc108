//! Log-mel features for a two-tone test signal.

use svkit::frontend::{chunk, cmn, Fbank, FrontendConfig, Waveform};
use svkit::seed;

fn main() -> svkit::Result<()> {
    let sr = 16_000.0;
    // one second of 440 Hz followed by one second of 2 kHz
    let samples = (0..32_000)
        .map(|i| {
            let f = if i < 16_000 { 440.0 } else { 2000.0 };
            0.4 * (2.0 * std::f64::consts::PI * f * i as f64 / sr).sin()
        })
        .collect();
    let wave = Waveform::new(samples, 16_000)?;

    let fbank = Fbank::new(FrontendConfig::default())?;
    let feats = fbank.compute(&wave)?;
    println!("{} frames x {} dims ({} mel + energy)", feats.num_frames(), feats.dim(), feats.dim() - 1);

    for t in [10, feats.num_frames() - 10] {
        let row = &feats.row(t)[..80];
        let m = (0..80).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        println!("frame {t}: loudest filter {m} centred at {:.0} Hz", fbank.mel_bank().center_hz(m));
    }

    let normed = cmn(&feats);
    let worst = normed.column_means().iter().fold(0.0f64, |a, m| a.max(m.abs()));
    println!("after CMN the largest column mean is {worst:.2e}");

    let c = chunk(&normed, 200, &mut seed::substream(1, "chunk"))?;
    println!("training chunk: {} frames", c.num_frames());
    Ok(())
}
