//! Sub-center cosine logits with AM- and AAM-Softmax, and the margin ramps
//! used by the three training stages.

use svkit::modelmath::{aam_softmax_loss, am_softmax_loss, margin_at, subcenter_forward, MarginCurve, MarginSchedule, SpeakerHead};
use svkit::seed;

fn main() -> svkit::Result<()> {
    let head = SpeakerHead::random(4, 3, 8, vec![false; 4], &mut seed::substream(5, "head"))?;
    let mut x = head.center(2, 1).to_vec();
    x[0] += 0.3;
    let out = subcenter_forward(&x, &head)?;
    for (j, (c, k)) in out.cosines.iter().zip(&out.best).enumerate() {
        println!("class {j}: cos {c:+.3} via sub-center {k}");
    }

    for m in [0.0, 0.2, 0.5] {
        let (am, _) = am_softmax_loss(&out.cosines, 2, 30.0, m);
        let (aam, _) = aam_softmax_loss(&out.cosines, 2, 30.0, m);
        println!("margin {m}: AM loss {am:.4}, AAM loss {aam:.4}");
    }

    let ramps = [
        MarginSchedule { start_m: 0.0, end_m: 0.2, curve: MarginCurve::Linear, total_steps: 10 },
        MarginSchedule { start_m: 0.2, end_m: 0.5, curve: MarginCurve::Exponential, total_steps: 10 },
    ];
    for s in &ramps {
        let steps: Vec<String> = (0..=10).step_by(2).map(|i| format!("{:.3}", margin_at(i, s).unwrap())).collect();
        println!("{:?}: {}", s.curve, steps.join(" "));
    }
    Ok(())
}
