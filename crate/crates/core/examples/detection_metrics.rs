//! EER and minDCF of a score file, with the DET operating points.
//! Defaults to the bundled six-trial fixture.

use std::path::PathBuf;

use svkit::backend::{read_scores, read_trials};
use svkit::metrics::{det_sweep, eer, min_dcf, DcfParams};

fn main() -> svkit::Result<()> {
    let fixture = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/eval6");
    let mut args = std::env::args().skip(1).map(PathBuf::from);
    let scores_path = args.next().unwrap_or_else(|| fixture.join("scores.txt"));
    let trials_path = args.next().unwrap_or_else(|| fixture.join("trials.txt"));

    let mut scores = read_scores(&scores_path)?;
    scores.attach_labels(&read_trials(&trials_path)?)?;
    let trials = scores.labeled()?;

    println!("{:>10} {:>8} {:>8}", "threshold", "p_miss", "p_fa");
    for p in det_sweep(&trials)? {
        println!("{:>10.4} {:>8.4} {:>8.4}", p.threshold, p.p_miss, p.p_fa);
    }
    let (e, t) = eer(&trials)?;
    println!("EER {:.4}% at threshold {t:.4}", 100.0 * e);
    for p_tar in [0.01, 0.05] {
        let params = DcfParams { p_tar, ..DcfParams::default() };
        let (d, t) = min_dcf(&trials, &params)?;
        println!("minDCF(p_tar={p_tar}) {d:.4} at threshold {t}");
    }
    Ok(())
}
