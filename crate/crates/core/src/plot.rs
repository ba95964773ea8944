//! SVG figures: the latency distribution and per-class readout traces.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::harness::median;
use crate::network::{simulate_float, NetworkSpec};
use crate::trainer::LabeledRaster;

const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

fn plot_err(path: &Path) -> impl Fn(String) -> Error + '_ {
    move |msg| Error::Format {
        path: path.into(),
        msg,
    }
}

/// Histogram of classification latencies with the median marked.
pub fn latency_histogram(latencies_ms: &[f64], segment_ms: f64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let err = plot_err(path);
    let bin = (segment_ms / 50.0).max(1.0);
    let n_bins = (segment_ms / bin).ceil() as usize;
    let mut counts = vec![0u32; n_bins.max(1)];
    for &l in latencies_ms {
        let b = ((l / bin).floor() as usize).min(counts.len() - 1);
        counts[b] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0).max(1);

    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let caption = match median(latencies_ms) {
        Some(m) => format!("Latency to first correct event (median {m:.0} ms, n = {})", latencies_ms.len()),
        None => "Latency to first correct event (no correct classifications)".to_string(),
    };
    let mut chart = ChartBuilder::on(&root)
        .caption(caption, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0f64..segment_ms, 0u32..top + top / 10 + 1)
        .map_err(|e| err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc("latency (ms)")
        .y_desc("segments")
        .disable_x_mesh()
        .draw()
        .map_err(|e| err(e.to_string()))?;
    chart
        .draw_series(counts.iter().enumerate().filter(|(_, c)| **c > 0).map(|(i, &c)| {
            let x0 = i as f64 * bin;
            Rectangle::new([(x0, 0), (x0 + bin, c)], PALETTE[0].filled())
        }))
        .map_err(|e| err(e.to_string()))?;
    if let Some(m) = median(latencies_ms) {
        chart
            .draw_series(LineSeries::new([(m, 0), (m, top)], PALETTE[3].stroke_width(2)))
            .map_err(|e| err(e.to_string()))?;
    }
    root.present().map_err(|e| err(e.to_string()))
}

/// One panel per example segment: readout membrane potentials over time,
/// each readout's threshold as a dashed line in the same colour.
pub fn class_traces(
    net: &NetworkSpec,
    examples: &[LabeledRaster],
    class_names: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let err = plot_err(path);
    if examples.is_empty() {
        return Err(Error::invalid("no example segments to plot"));
    }
    let classes = net.output_dim();
    let thresholds = &net.readout().lif.threshold;
    let mut traces = Vec::with_capacity(examples.len());
    for ex in examples {
        let out = simulate_float(net, &ex.raster, true)?;
        traces.push(out.traces.unwrap().pop().unwrap());
    }
    let root = SVGBackend::new(path, (900, 220 * examples.len() as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let panels = root.split_evenly((examples.len(), 1));
    for ((panel, ex), trace) in panels.iter().zip(examples).zip(&traces) {
        let steps = ex.raster.timesteps();
        let dt_ms = ex.raster.dt() * 1e3;
        let finite_th = thresholds.iter().copied().filter(|t| t.is_finite());
        let (mut lo, mut hi) = (0.0f64, finite_th.fold(0.0f64, f64::max));
        for &v in &trace.v_mem {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let pad = 0.05 * (hi - lo).max(1e-6);
        let name = class_names.get(ex.label).cloned().unwrap_or_else(|| format!("class {}", ex.label));
        let mut chart = ChartBuilder::on(panel)
            .caption(format!("Segment of class {name}"), ("sans-serif", 16))
            .margin(8)
            .x_label_area_size(32)
            .y_label_area_size(50)
            .build_cartesian_2d(0f64..steps as f64 * dt_ms, (lo - pad)..(hi + pad))
            .map_err(|e| err(e.to_string()))?;
        chart
            .configure_mesh()
            .x_desc("time (ms)")
            .y_desc("V_mem")
            .draw()
            .map_err(|e| err(e.to_string()))?;
        for c in 0..classes {
            let color = PALETTE[c % PALETTE.len()];
            let label = class_names.get(c).cloned().unwrap_or_else(|| format!("class {c}"));
            chart
                .draw_series(LineSeries::new(
                    (0..steps).map(|t| (t as f64 * dt_ms, trace.v_mem[t * classes + c])),
                    color.stroke_width(if c == ex.label { 2 } else { 1 }),
                ))
                .map_err(|e| err(e.to_string()))?
                .label(label)
                .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color));
            let th = thresholds[c];
            if th.is_finite() {
                let end = steps as f64 * dt_ms;
                chart
                    .draw_series(DashedLineSeries::new([(0.0, th), (end, th)], 6, 4, color.into()))
                    .map_err(|e| err(e.to_string()))?;
            }
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| err(e.to_string()))?;
    }
    root.present().map_err(|e| err(e.to_string()))
}
