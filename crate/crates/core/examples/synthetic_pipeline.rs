//! The bundled synthetic recipe end to end: synthesize, two training
//! stages, embed, score and evaluate. Output goes to a temporary directory
//! unless one is given.

use std::path::{Path, PathBuf};

use svkit::cli::{configured_stages, run_pipeline, PipelineConfig};

fn main() -> svkit::Result<()> {
    let conf = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/synthetic.conf");
    let mut cfg = PipelineConfig::from_file(&conf)?;
    let tmp = tempfile::tempdir().expect("temp dir");
    cfg.out_dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());

    let report = run_pipeline(&cfg, &configured_stages(&cfg)?)?;
    for t in &report.train {
        println!(
            "stage {}: {} steps, val acc {:.3} -> {:.3}, final lr {:e}",
            t.stage.number(),
            t.steps,
            t.before.accuracy,
            t.after.accuracy,
            t.final_lr
        );
    }
    for (name, hash) in &report.produced {
        println!("{}  {name}", &hash[..16]);
    }
    if let Some(e) = &report.eval {
        println!("{e}");
    }
    Ok(())
}
