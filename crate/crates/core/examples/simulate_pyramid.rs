//! Run the untrained pyramid network on a random event raster and report
//! how active each layer is.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xylo_snn::network::{build_pyramid_net, simulate_float, PyramidConfig};
use xylo_snn::raster::EventRaster;

fn main() -> xylo_snn::Result<()> {
    let mut net = build_pyramid_net(&PyramidConfig::default())?;
    net.readout_mut().lif.threshold.fill(0.05);
    for (k, layer) in net.hidden_layers().iter().enumerate() {
        let mut taus: Vec<u32> = layer.lif.tau_syn.iter().map(|t| (t * 1e3).round() as u32).collect();
        taus.dedup();
        println!("hidden layer {}: {} neurons, tau_syn {taus:?} ms", k + 1, layer.out_dim());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let steps = 500;
    let mut input = EventRaster::zeros(steps, net.input_dim, net.dt());
    for t in 0..steps {
        for c in 0..net.input_dim {
            if rng.gen_bool(0.5) {
                input.set(t, c, rng.gen_range(4..=15));
            }
        }
    }

    let sim = simulate_float(&net, &input, true)?;
    for (k, trace) in sim.traces.unwrap().iter().enumerate() {
        let spikes: f64 = trace.spikes.iter().sum();
        let peak = trace.v_mem.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!("layer {}: {:.3} spikes/step, peak V_mem {peak:.3}", k + 1, spikes / steps as f64);
    }
    println!("readout events per class: {:?}", sim.output.channel_totals());
    Ok(())
}
