mod common;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use xylo_snn::mapper::{extract_graph, map, HardwareLimits, MappedSpec};
use xylo_snn::network::{build_pyramid_net, simulate_float, NetworkSpec, PyramidConfig, WeightInit};

fn active_pyramid(seed: u64) -> NetworkSpec {
    let mut net = build_pyramid_net(&PyramidConfig {
        init: WeightInit::FanIn,
        seed,
        ..Default::default()
    })
    .unwrap();
    net.readout_mut().lif.threshold.fill(0.5);
    net
}

fn mapped(net: &NetworkSpec) -> MappedSpec {
    map(&extract_graph(net).unwrap(), &HardwareLimits::default()).unwrap()
}

#[test]
fn placed_network_reproduces_layered_spikes_after_pipeline_delay() {
    for seed in 0..4 {
        let net = active_pyramid(seed);
        let spec = mapped(&net);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let input = common::random_raster(&mut rng, 300, net.input_dim);
        let layered = simulate_float(&net, &input, true).unwrap();
        let traces = layered.traces.unwrap();
        let (out, placed) = spec.simulate_float(&input, true).unwrap();
        let [hidden, _] = placed.unwrap();
        let steps = input.timesteps();

        for id in spec.ids.iter().filter(|id| !id.readout) {
            let depth = id.layer;
            let src = &traces[id.layer];
            for t in 0..steps - depth {
                let want = src.spikes_at(t)[id.index];
                let got = hidden.spikes[(t + depth) * spec.n_hidden() + id.hw_id];
                assert_eq!(want.to_bits(), got.to_bits(), "layer {} neuron {} step {t}", id.layer, id.index);
            }
            for t in 0..depth {
                assert_eq!(hidden.spikes[t * spec.n_hidden() + id.hw_id], 0.0);
            }
        }
        let delay = spec.readout_delay();
        for t in 0..steps - delay {
            assert_eq!(layered.output.row(t), out.row(t + delay), "readout step {t}");
        }
        for (l, tr) in traces.iter().enumerate() {
            assert!(tr.spikes.iter().sum::<f64>() > 0.0, "layer {l} is silent, the comparison would be vacuous");
        }
    }
}

#[test]
fn recurrent_matrix_is_zero_outside_declared_blocks() {
    let net = active_pyramid(3);
    let spec = mapped(&net);
    let layer_of: Vec<usize> = {
        let mut v = vec![0; spec.n_hidden()];
        for id in spec.ids.iter().filter(|id| !id.readout) {
            v[id.hw_id] = id.layer;
        }
        v
    };
    for r in 0..spec.n_hidden() {
        for c in 0..spec.n_hidden() {
            if layer_of[c] != layer_of[r] + 1 {
                assert_eq!(spec.w_rec.get(r, c), 0.0, "w_rec[{r}][{c}]");
            }
        }
    }
    let last = spec.hidden_layer_sizes.len() - 1;
    for c in 0..spec.n_hidden() {
        if layer_of[c] != 0 {
            assert!((0..spec.n_input()).all(|r| spec.w_in.get(r, c) == 0.0));
        }
    }
    for r in 0..spec.n_hidden() {
        if layer_of[r] != last {
            assert!((0..spec.n_readout()).all(|c| spec.w_out.get(r, c) == 0.0));
        }
    }
}

#[test]
fn neuron_ids_are_a_bijection() {
    let net = active_pyramid(0);
    let spec = mapped(&net);
    let hidden: Vec<_> = spec.ids.iter().filter(|id| !id.readout).collect();
    let readout: Vec<_> = spec.ids.iter().filter(|id| id.readout).collect();
    assert_eq!(hidden.len(), spec.n_hidden());
    assert_eq!(readout.len(), spec.n_readout());
    let hw: BTreeSet<usize> = hidden.iter().map(|id| id.hw_id).collect();
    assert_eq!(hw, (0..spec.n_hidden()).collect());
    let slots: BTreeSet<usize> = readout.iter().map(|id| id.hw_id).collect();
    assert_eq!(slots, (0..spec.n_readout()).collect());
    let sources: BTreeSet<(usize, usize)> = spec.ids.iter().map(|id| (id.layer, id.index)).collect();
    assert_eq!(sources.len(), spec.ids.len());
    for (l, layer) in net.layers.iter().enumerate() {
        for i in 0..layer.out_dim() {
            assert!(sources.contains(&(l, i)));
        }
    }
}

#[test]
fn mapping_does_not_touch_its_input() {
    let net = active_pyramid(1);
    let before = net.clone();
    let _ = mapped(&net);
    assert_eq!(net, before);
}
