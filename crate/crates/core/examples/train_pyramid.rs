//! Train the pyramid network on a small synthetic dataset and calibrate its
//! readout thresholds.
//!
//! ```text
//! cargo run --release --example train_pyramid [epochs] [segments per split]
//! ```

use std::time::Instant;

use xylo_snn::dataset::{generate_synthetic_dataset, Split, SyntheticDatasetSpec};
use xylo_snn::frontend::{design_filterbank, FilterBankSpec};
use xylo_snn::harness::{evaluate, Model};
use xylo_snn::network::{build_pyramid_net, PyramidConfig};
use xylo_snn::trainer::{calibrate_readout_thresholds, train, Checkpoint, LabeledRaster, TrainConfig};

fn main() -> xylo_snn::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("numeric argument"));
    let epochs = args.next().unwrap_or(10);
    let n = args.next().unwrap_or(120);

    let spec = SyntheticDatasetSpec {
        n_train: n,
        n_test: n / 2,
        ..Default::default()
    };
    let bank = design_filterbank(&FilterBankSpec::default())?;
    let mut train_set = Vec::new();
    let mut test_set = Vec::new();
    for seg in generate_synthetic_dataset(&spec)? {
        let item = LabeledRaster {
            raster: bank.encode(&seg.audio)?,
            label: seg.label,
        };
        match seg.split {
            Split::Train => train_set.push(item),
            Split::Test => test_set.push(item),
        }
    }

    let net = build_pyramid_net(&PyramidConfig::default())?;
    let start = Instant::now();
    let outcome = train(&net, &train_set, &TrainConfig { epochs, ..Default::default() })?;
    println!("trained {epochs} epochs in {:.1?}", start.elapsed());
    for (e, loss) in outcome.loss_curve.iter().enumerate() {
        println!("  epoch {:>3}  loss {loss:.4}", e + 1);
    }

    let calibration = calibrate_readout_thresholds(&outcome.net, &train_set)?;
    println!("readout thresholds {:.3?} via {:?}", calibration.thresholds, calibration.rules);
    let mut trained = outcome.net.clone();
    calibration.apply(&mut trained)?;

    let report = evaluate(Model::Float(&trained), &test_set)?;
    println!("test accuracy {:.1}% on {} segments", report.accuracy * 100.0, report.n_segments);

    let dir = std::env::temp_dir();
    Checkpoint::new(&outcome).save(dir.join("pyramid-checkpoint.toml"))?;
    trained.save(dir.join("pyramid-network.toml"))?;
    println!("saved checkpoint and network under {}", dir.display());
    Ok(())
}
