//! Every stage from synthetic audio to integer-core evaluation and plots,
//! driven by one manifest.
//!
//! ```text
//! cargo run --release --example full_pipeline [output dir] [pipeline.toml]
//! ```
//!
//! Without a manifest the defaults are used at a reduced size.

use std::path::PathBuf;

use xylo_snn::pipeline::{run_pipeline, PipelineManifest};

fn main() -> xylo_snn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("xylo-pipeline"));
    let manifest = match args.next() {
        Some(path) => PipelineManifest::load(path)?,
        None => {
            let mut m = PipelineManifest::default();
            m.dataset.n_train = 160;
            m.dataset.n_test = 80;
            m.train.epochs = 12;
            m
        }
    };
    std::fs::create_dir_all(&out).map_err(|e| xylo_snn::Error::Runtime(e.to_string()))?;
    manifest.save(out.join("pipeline.toml"))?;

    let run = run_pipeline(&manifest, &out)?;
    println!("loss {:.4} -> {:.4}", run.loss_curve[0], run.loss_curve.last().unwrap());
    println!(
        "accuracy: float {:.1}%, int {:.1}%, agreement {:.1}%",
        run.float_report.accuracy * 100.0,
        run.int_report.accuracy * 100.0,
        run.agreement * 100.0
    );
    for path in &run.outputs {
        println!("  {}", path.display());
    }
    Ok(())
}
