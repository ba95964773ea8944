use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xylo_snn::harness::{evaluate, Model};
use xylo_snn::network::{build_pyramid_net, NetworkSpec, PyramidConfig};
use xylo_snn::raster::EventRaster;
use xylo_snn::trainer::{
    calibrate_readout_thresholds, readout_peaks, train, train_from, Adam, LabeledRaster, ThresholdRule, TrainConfig,
};

/// Class `k` is carried by input channel `k` alone.
fn one_hot_set(n: usize, channels: usize, steps: usize, seed: u64) -> Vec<LabeledRaster> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % channels;
            let mut raster = EventRaster::zeros(steps, channels, 1e-3);
            for t in 0..steps {
                if rng.gen_bool(0.4) {
                    raster.set(t, label, rng.gen_range(1..=6));
                }
            }
            LabeledRaster { raster, label }
        })
        .collect()
}

fn toy_pyramid(seed: u64) -> NetworkSpec {
    build_pyramid_net(&PyramidConfig {
        n_channels: 2,
        n_hidden_per_layer: 8,
        n_layers: 2,
        n_classes: 2,
        seed,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn separable_toy_set_is_learned_within_fifty_epochs() {
    let data = one_hot_set(40, 2, 120, 1);
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 8,
        ..Default::default()
    };
    let mut net = toy_pyramid(0);
    let mut optimizer = Adam::new(cfg.adam, &net);
    let mut best = 0.0;
    let mut epochs = 0;
    while epochs < 50 {
        let outcome = train_from(net, optimizer, &data, &cfg).unwrap();
        epochs += cfg.epochs;
        net = outcome.net;
        optimizer = outcome.optimizer;
        let mut calibrated = net.clone();
        calibrate_readout_thresholds(&net, &data).unwrap().apply(&mut calibrated).unwrap();
        best = evaluate(Model::Float(&calibrated), &data).unwrap().accuracy;
        if best >= 0.95 {
            break;
        }
    }
    assert!(best >= 0.95, "train accuracy {best} after {epochs} epochs");
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let data = one_hot_set(24, 2, 60, 2);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 5,
        seed: 3,
        ..Default::default()
    };
    let a = train(&toy_pyramid(4), &data, &cfg).unwrap();
    let b = train(&toy_pyramid(4), &data, &cfg).unwrap();
    assert_eq!(a.net, b.net);
    assert_eq!(a.loss_curve, b.loss_curve);
    let c = train(&toy_pyramid(4), &data, &TrainConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.net, c.net);
}

#[test]
fn training_does_not_touch_its_inputs() {
    let data = one_hot_set(8, 2, 40, 5);
    let before = data.clone();
    let net = toy_pyramid(1);
    let net_before = net.clone();
    train(&net, &data, &TrainConfig { epochs: 1, ..Default::default() }).unwrap();
    assert_eq!(net, net_before);
    assert!(data.iter().zip(&before).all(|(a, b)| a.raster == b.raster && a.label == b.label));
}

#[test]
fn calibrated_thresholds_separate_disjoint_peaks() {
    let data = one_hot_set(40, 2, 120, 6);
    let net = train(&toy_pyramid(2), &data, &TrainConfig { epochs: 30, batch_size: 8, ..Default::default() })
        .unwrap()
        .net;
    let cal = calibrate_readout_thresholds(&net, &data).unwrap();
    let peaks: Vec<Vec<f64>> = data.iter().map(|s| readout_peaks(&net, &s.raster).unwrap()).collect();
    let mut checked = 0;
    for (c, &theta) in cal.thresholds.iter().enumerate() {
        let target: Vec<f64> = data.iter().zip(&peaks).filter(|(s, _)| s.label == c).map(|(_, p)| p[c]).collect();
        let other: Vec<f64> = data.iter().zip(&peaks).filter(|(s, _)| s.label != c).map(|(_, p)| p[c]).collect();
        let disjoint = other.iter().cloned().fold(f64::NEG_INFINITY, f64::max) < target.iter().cloned().fold(f64::INFINITY, f64::min);
        if disjoint {
            assert!(matches!(cal.rules[c], ThresholdRule::Quantile | ThresholdRule::Extremes));
            assert!(target.iter().all(|&p| p >= theta), "readout {c}");
            assert!(other.iter().all(|&p| p < theta), "readout {c}");
            checked += 1;
        }
    }
    assert!(checked > 0, "no readout had disjoint peaks; the check would be vacuous");
}
