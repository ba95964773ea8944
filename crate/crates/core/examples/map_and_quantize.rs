//! Place a network onto the core, show what the design-rule check rejects,
//! and quantize the result.
//!
//! ```text
//! cargo run --example map_and_quantize [network.toml]
//! ```

use xylo_snn::lif::LifParams;
use xylo_snn::mapper::{drc_check, extract_graph, HardwareLimits};
use xylo_snn::matrix::Matrix;
use xylo_snn::network::{build_pyramid_net, Layer, NetworkSpec, PyramidConfig};
use xylo_snn::pipeline::{map_stage, quantize_stage};

fn main() -> xylo_snn::Result<()> {
    let net = match std::env::args().nth(1) {
        Some(path) => NetworkSpec::load(path)?,
        None => {
            let mut net = build_pyramid_net(&PyramidConfig::default())?;
            net.readout_mut().lif.threshold.fill(0.02);
            net
        }
    };
    let limits = HardwareLimits::default();

    let mapped = map_stage(&net, &limits)?;
    println!(
        "mapped: {} inputs -> {} hidden -> {} readout, readout lags {} step(s)",
        mapped.n_input(),
        mapped.n_hidden(),
        mapped.n_readout(),
        mapped.readout_delay()
    );
    let sizes = &mapped.hidden_layer_sizes;
    let mut offset = 0;
    for pair in sizes.windows(2) {
        println!("  w_rec block rows {}..{} -> cols {}..{}", offset, offset + pair[0], offset + pair[0], offset + pair[0] + pair[1]);
        offset += pair[0];
    }

    let config = quantize_stage(&mapped)?;
    println!("quantized: {} hidden neurons, readout thresholds {:?}", config.n_hidden(), config.spec.readout.iter().map(|n| n.threshold).collect::<Vec<_>>());
    let dashes: Vec<u8> = config.spec.hidden.iter().map(|n| n.dash_syn).collect();
    println!("  hidden dash_syn {:?}", dashes);
    let path = std::env::temp_dir().join("xylo-config.toml");
    config.save(&path)?;
    println!("  wrote {}", path.display());

    let wide = NetworkSpec::new(
        20,
        vec![
            Layer {
                weights: Matrix::from_fn(20, 40, |r, c| if r == c % 20 { 0.5 } else { 0.0 }),
                lif: LifParams::uniform(40, 4e-3, 2e-3, 1.0, 1e-3),
            },
            Layer {
                weights: Matrix::from_fn(40, 12, |_, _| 0.1),
                lif: LifParams::uniform(12, 16e-3, 2e-3, 1.0, 1e-3),
            },
        ],
    )?;
    println!("a 20-input, 12-output network breaks these rules:");
    for v in drc_check(&extract_graph(&wide)?, &limits) {
        println!("  {v}");
    }
    Ok(())
}
