//! Evaluate a trained network and its quantized configuration on the
//! synthetic test split: accuracy, latency and synaptic operations.
//!
//! ```text
//! cargo run --release --example evaluate_model network.toml config.toml dataset/manifest.toml
//! ```
//!
//! The inputs are what `train_pyramid`, `map_and_quantize` and
//! `xylo-snn synth` produce.

use std::path::PathBuf;

use xylo_snn::dataset::Split;
use xylo_snn::frontend::FilterBankSpec;
use xylo_snn::harness::{evaluate, EvalReport, Model};
use xylo_snn::network::NetworkSpec;
use xylo_snn::pipeline::encode_split;
use xylo_snn::xylo::HardwareConfig;

fn show(r: &EvalReport) {
    println!("{} backend: accuracy {:.1}% over {} segments", r.backend, r.accuracy * 100.0, r.n_segments);
    println!("  per class {:.2?}", r.per_class_accuracy);
    println!("  confusion (last column: no output) {:?}", r.confusion);
    if let Some(m) = r.median_latency_ms {
        println!("  median latency {m:.1} ms");
    }
    println!(
        "  synops/step mean {:.1}, max {} (input {}, recurrent {}, output {})",
        r.synops.mean_per_step, r.synops.max_per_step, r.synops.input, r.synops.recurrent, r.synops.output
    );
    println!("  events/step {:.3?}", r.spikes_per_step);
}

fn main() -> xylo_snn::Result<()> {
    let args: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    let [network, config, dataset] = args.as_slice() else {
        eprintln!("usage: evaluate_model <network.toml> <config.toml> <dataset manifest>");
        std::process::exit(2);
    };
    let net = NetworkSpec::load(network)?;
    let cfg = HardwareConfig::load(config)?;
    let test = encode_split(dataset, &FilterBankSpec::default(), Split::Test)?;

    let float = evaluate(Model::Float(&net), &test.segments)?;
    let int = evaluate(Model::Int(&cfg), &test.segments)?;
    show(&float);
    show(&int);
    println!("decision agreement {:.1}%", float.agreement(&int)? * 100.0);
    Ok(())
}
