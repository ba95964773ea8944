//! Encode audio into a 16-channel event raster.
//!
//! ```text
//! cargo run --example encode_audio [recording.wav]
//! ```
//!
//! Without an argument, one clip of each synthetic class is encoded.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use xylo_snn::dataset::{synthesize, SyntheticDatasetSpec};
use xylo_snn::frontend::{design_filterbank, read_wav, FilterBankSpec};
use xylo_snn::raster::EventRaster;

fn summary(name: &str, raster: &EventRaster) {
    let seconds = raster.timesteps() as f64 * raster.dt();
    let rates: Vec<String> = raster
        .channel_totals()
        .iter()
        .map(|&n| format!("{:5.0}", n as f64 / seconds))
        .collect();
    println!("{name:>10} | {} | peak {}", rates.join(" "), raster.max_count());
}

fn main() -> xylo_snn::Result<()> {
    let spec = FilterBankSpec::default();
    let bank = design_filterbank(&spec)?;
    let centres: Vec<String> = bank.centers.iter().map(|f| format!("{f:5.0}")).collect();
    println!("{:>10} | {}", "centre Hz", centres.join(" "));

    if let Some(path) = std::env::args().nth(1) {
        let (audio, rate) = read_wav(&path)?;
        let bank = design_filterbank(&FilterBankSpec {
            sample_rate: rate,
            ..spec
        })?;
        summary("input", &bank.encode(&audio)?);
        return Ok(());
    }

    let data = SyntheticDatasetSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for recipe in &data.classes {
        let audio = synthesize(&data, recipe, &mut rng);
        summary(&recipe.name, &bank.encode(&audio)?);
    }
    println!("(events per second per channel)");
    Ok(())
}
