//! Run the bit-exact integer core next to the placed float model and compare
//! their readout decisions step by step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xylo_snn::harness::classify_segment;
use xylo_snn::network::{build_pyramid_net, PyramidConfig, WeightInit};
use xylo_snn::pipeline::{map_stage, quantize_stage};
use xylo_snn::raster::EventRaster;
use xylo_snn::xylo::{bitshift_decay, simulate_int};
use xylo_snn::mapper::HardwareLimits;

fn main() -> xylo_snn::Result<()> {
    println!("decay of 1000 with dash 3: {:?}", (0..6).scan(1000i16, |v, _| {
        *v = bitshift_decay(*v, 3);
        Some(*v)
    }).collect::<Vec<_>>());

    let mut net = build_pyramid_net(&PyramidConfig {
        init: WeightInit::FanIn,
        ..Default::default()
    })?;
    net.readout_mut().lif.threshold.fill(1.0);
    let mapped = map_stage(&net, &HardwareLimits::default())?;
    let config = quantize_stage(&mapped)?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let steps = 400;
    let mut input = EventRaster::zeros(steps, mapped.n_input(), mapped.dt);
    for t in 0..steps {
        for c in 0..mapped.n_input() {
            if rng.gen_bool(0.15) {
                input.set(t, c, rng.gen_range(1..=4));
            }
        }
    }

    let (float_out, _) = mapped.simulate_float(&input, false)?;
    let int = simulate_int(&config, &input, true)?;
    let trace = int.trace.as_ref().unwrap();
    let hidden_events: u64 = trace.hidden_spikes.iter().map(|&s| u64::from(s)).sum();
    println!("integer core: {hidden_events} hidden events, readout totals {:?}", int.output.channel_totals());
    println!("float model:  readout totals {:?}", float_out.channel_totals());
    println!(
        "decisions: float {:?}, int {:?}",
        classify_segment(&float_out),
        classify_segment(&int.output)
    );
    let readout_v: Vec<i16> = int.readout.iter().map(|s| s.v_mem).collect();
    println!("final readout V_mem {readout_v:?}");
    Ok(())
}
