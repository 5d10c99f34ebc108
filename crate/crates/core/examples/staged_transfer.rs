//! Reserved-row versus fresh-row initialization of the target-speaker
//! classes after pre-training. Pass seeds as arguments (default: 0).

use svkit::trainer::TransferExperiment;

fn main() -> svkit::Result<()> {
    let seeds: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("seed")).collect();
    let seeds = if seeds.is_empty() { vec![0] } else { seeds };
    let exp = TransferExperiment::default();
    println!(
        "{} source + {} target speakers, stage-1 lr {}, stage-2 lr {:e}",
        exp.data.n_source, exp.data.n_target, exp.stage1.lr, exp.stage2.lr
    );
    let mut wins = 0;
    for &s in &seeds {
        let (reserved, fresh) = exp.run_pair(s)?;
        if reserved.target_val_acc > fresh.target_val_acc {
            wins += 1;
        }
        println!(
            "seed {s}: target accuracy reserved {:.3}, fresh {:.3} (stage 1 val acc {:.3}, {} stage-2 steps)",
            reserved.target_val_acc, fresh.target_val_acc, reserved.stage1.after.accuracy, reserved.stage2.steps
        );
    }
    println!("reserved init wins {wins}/{}", seeds.len());
    Ok(())
}
