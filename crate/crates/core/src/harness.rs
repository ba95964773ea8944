//! Segment-level evaluation: class decisions, latency, and synaptic
//! operation counts as a dynamic-energy proxy.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::network::{simulate_float, NetworkSpec};
use crate::quantizer::IntMatrix;
use crate::raster::EventRaster;
use crate::trainer::LabeledRaster;
use crate::xylo::{simulate_int, HardwareConfig};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Column with the most output events. Ties go to the column that fired
/// first, then to the lowest index. `None` when the raster is silent.
pub fn classify_segment(output: &EventRaster) -> Option<usize> {
    let totals = output.channel_totals();
    let best = *totals.iter().max()?;
    if best == 0 {
        return None;
    }
    (0..totals.len())
        .filter(|&c| totals[c] == best)
        .min_by_key(|&c| (output.first_event(c).unwrap_or(usize::MAX), c))
}

/// Time from segment onset to the end of the first step in which the
/// labelled column fires, in milliseconds.
pub fn measure_latency(output: &EventRaster, label: usize) -> Option<f64> {
    if label >= output.channels() {
        return None;
    }
    output
        .first_event(label)
        .map(|t| (t + 1) as f64 * output.dt() * 1e3)
}

/// Synaptic updates, split by the weight stage that carried them.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynopCounts {
    pub input: u64,
    pub recurrent: u64,
    pub output: u64,
    /// All stages, per step of the segment.
    pub per_step: Vec<u64>,
}

impl SynopCounts {
    pub fn total(&self) -> u64 {
        self.input + self.recurrent + self.output
    }

    fn add_step(&mut self, t: usize, stage: Stage, n: u64) {
        match stage {
            Stage::Input => self.input += n,
            Stage::Recurrent => self.recurrent += n,
            Stage::Output => self.output += n,
        }
        self.per_step[t] += n;
    }
}

#[derive(Clone, Copy)]
enum Stage {
    Input,
    Recurrent,
    Output,
}

/// `Σ spikes × nonzero targets` for one source population at one step.
fn stage_synops<T: Copy + Into<u64>>(spikes: &[T], fanout: &[u64]) -> u64 {
    spikes.iter().zip(fanout).map(|(&s, &f)| s.into() * f).sum()
}

fn int_fanout(m: &IntMatrix) -> Vec<u64> {
    (0..m.rows()).map(|r| m.row_nnz(r) as u64).collect()
}

/// Synops of one segment on the integer core. Each source spike counts once
/// per nonzero weight it crosses, attributed to the step it was emitted in.
pub fn count_synops(config: &HardwareConfig, input: &EventRaster) -> Result<SynopCounts> {
    let sim = simulate_int(config, input, true)?;
    Ok(int_synops(config, input, sim.trace.as_ref().unwrap().hidden_spikes.as_slice()))
}

fn int_synops(config: &HardwareConfig, input: &EventRaster, hidden_spikes: &[u8]) -> SynopCounts {
    let s = &config.spec;
    let (fin, frec, fout) = (int_fanout(&s.w_in), int_fanout(&s.w_rec), int_fanout(&s.w_out));
    let h = s.n_hidden();
    let mut c = SynopCounts {
        per_step: vec![0; input.timesteps()],
        ..Default::default()
    };
    for t in 0..input.timesteps() {
        c.add_step(t, Stage::Input, stage_synops(input.row(t), &fin));
        let spk = &hidden_spikes[t * h..(t + 1) * h];
        c.add_step(t, Stage::Recurrent, stage_synops(spk, &frec));
        c.add_step(t, Stage::Output, stage_synops(spk, &fout));
    }
    c
}

/// Synops of the layered float model: the first layer is the input stage,
/// the last the output stage, everything between is hidden to hidden.
pub fn count_synops_float(net: &NetworkSpec, input: &EventRaster) -> Result<SynopCounts> {
    let sim = simulate_float(net, input, true)?;
    Ok(float_synops(net, input, sim.traces.as_ref().unwrap()))
}

fn float_synops(net: &NetworkSpec, input: &EventRaster, traces: &[crate::network::LayerTrace]) -> SynopCounts {
    let fanouts: Vec<Vec<u64>> = net
        .layers
        .iter()
        .map(|l| (0..l.weights.rows()).map(|r| l.weights.row_nnz(r) as u64).collect())
        .collect();
    let last = net.layers.len() - 1;
    let mut c = SynopCounts {
        per_step: vec![0; input.timesteps()],
        ..Default::default()
    };
    for t in 0..input.timesteps() {
        c.add_step(t, Stage::Input, stage_synops(input.row(t), &fanouts[0]));
        for l in 1..=last {
            let stage = if l == last { Stage::Output } else { Stage::Recurrent };
            let spikes: Vec<u64> = traces[l - 1].spikes_at(t).iter().map(|&s| s as u64).collect();
            c.add_step(t, stage, stage_synops(&spikes, &fanouts[l]));
        }
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// Layered float model.
    Float,
    /// Bit-exact integer core.
    Int,
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Float => "float",
            Backend::Int => "int",
        })
    }
}

/// A model that can be evaluated on event rasters.
#[derive(Clone, Copy, Debug)]
pub enum Model<'a> {
    Float(&'a NetworkSpec),
    Int(&'a HardwareConfig),
}

impl Model<'_> {
    pub fn backend(&self) -> Backend {
        match self {
            Model::Float(_) => Backend::Float,
            Model::Int(_) => Backend::Int,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Model::Float(n) => n.output_dim(),
            Model::Int(c) => c.n_readout(),
        }
    }

    /// Output raster, synops and per-population spike totals of one segment.
    pub fn run(&self, input: &EventRaster) -> Result<SegmentResult> {
        match self {
            Model::Float(net) => {
                let sim = simulate_float(net, input, true)?;
                let traces = sim.traces.as_ref().unwrap();
                let synops = float_synops(net, input, traces);
                let mut spikes = vec![("input".to_string(), input.total())];
                for (l, tr) in traces.iter().enumerate() {
                    let name = if l + 1 == traces.len() {
                        "readout".to_string()
                    } else {
                        format!("hidden-{}", l + 1)
                    };
                    spikes.push((name, tr.spikes.iter().map(|&s| s as u64).sum()));
                }
                Ok(SegmentResult {
                    output: sim.output,
                    synops,
                    spikes,
                })
            }
            Model::Int(cfg) => {
                let sim = simulate_int(cfg, input, true)?;
                let tr = sim.trace.as_ref().unwrap();
                let synops = int_synops(cfg, input, &tr.hidden_spikes);
                let spikes = vec![
                    ("input".to_string(), input.total()),
                    ("hidden".to_string(), tr.hidden_spikes.iter().map(|&s| u64::from(s)).sum()),
                    ("readout".to_string(), sim.output.total()),
                ];
                Ok(SegmentResult {
                    output: sim.output,
                    synops,
                    spikes,
                })
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SegmentResult {
    pub output: EventRaster,
    pub synops: SynopCounts,
    /// Total events per population.
    pub spikes: Vec<(String, u64)>,
}

/// Synop totals over a dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynopSummary {
    pub input: u64,
    pub recurrent: u64,
    pub output: u64,
    pub total: u64,
    pub mean_per_step: f64,
    pub max_per_step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub backend: Backend,
    pub n_segments: usize,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// `classes × (classes + 1)`: row = true class, column = prediction, the
    /// last column counts segments with no output events.
    pub confusion: Vec<Vec<u64>>,
    /// Per-segment decision, `-1` for no prediction.
    pub predictions: Vec<i64>,
    pub labels: Vec<usize>,
    /// Latency of every correctly classified segment, milliseconds.
    pub latencies_ms: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_latency_ms: Option<f64>,
    pub synops: SynopSummary,
    /// Mean events per step of each population.
    pub spikes_per_step: BTreeMap<String, f64>,
}

/// Median by the usual convention: mean of the two central values for even
/// counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

pub fn evaluate(model: Model<'_>, data: &[LabeledRaster]) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let n = model.n_classes();
    if let Some(s) = data.iter().find(|s| s.label >= n) {
        return Err(Error::invalid(format!("label {} out of range for {n} classes", s.label)));
    }
    let results: Vec<SegmentResult> = data.par_iter().map(|s| model.run(&s.raster)).collect::<Result<_>>()?;

    let mut confusion = vec![vec![0u64; n + 1]; n];
    let mut predictions = Vec::with_capacity(data.len());
    let mut latencies = Vec::new();
    let mut synops = SynopSummary::default();
    let mut spike_totals: BTreeMap<String, u64> = BTreeMap::new();
    let mut steps = 0usize;
    for (s, r) in data.iter().zip(&results) {
        let pred = classify_segment(&r.output);
        confusion[s.label][pred.unwrap_or(n)] += 1;
        predictions.push(pred.map_or(-1, |p| p as i64));
        if pred == Some(s.label) {
            if let Some(ms) = measure_latency(&r.output, s.label) {
                latencies.push(ms);
            }
        }
        synops.input += r.synops.input;
        synops.recurrent += r.synops.recurrent;
        synops.output += r.synops.output;
        synops.max_per_step = synops.max_per_step.max(r.synops.per_step.iter().copied().max().unwrap_or(0));
        for (name, count) in &r.spikes {
            *spike_totals.entry(name.clone()).or_default() += count;
        }
        steps += s.raster.timesteps();
    }
    synops.total = synops.input + synops.recurrent + synops.output;
    synops.mean_per_step = synops.total as f64 / steps.max(1) as f64;
    let correct: u64 = (0..n).map(|c| confusion[c][c]).sum();
    let per_class_accuracy = (0..n)
        .map(|c| {
            let row: u64 = confusion[c].iter().sum();
            if row == 0 {
                0.0
            } else {
                confusion[c][c] as f64 / row as f64
            }
        })
        .collect();
    Ok(EvalReport {
        version: REPORT_SCHEMA_VERSION,
        backend: model.backend(),
        n_segments: data.len(),
        accuracy: correct as f64 / data.len() as f64,
        per_class_accuracy,
        confusion,
        predictions,
        labels: data.iter().map(|s| s.label).collect(),
        median_latency_ms: median(&latencies),
        latencies_ms: latencies,
        synops,
        spikes_per_step: spike_totals
            .into_iter()
            .map(|(k, v)| (k, v as f64 / steps.max(1) as f64))
            .collect(),
    })
}

impl EvalReport {
    /// Fraction of segments on which two reports made the same decision.
    pub fn agreement(&self, other: &EvalReport) -> Result<f64> {
        check_len("segments in compared report", self.predictions.len(), other.predictions.len())?;
        let same = self
            .predictions
            .iter()
            .zip(&other.predictions)
            .filter(|(a, b)| a == b)
            .count();
        Ok(same as f64 / self.predictions.len().max(1) as f64)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Runtime(format!("serializing report: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let r: EvalReport = toml::from_str(text).map_err(|e| Error::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        if r.version != REPORT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: r.version,
                expected: REPORT_SCHEMA_VERSION,
            });
        }
        Ok(r)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse { msg, .. } => Error::Format {
                path: path.into(),
                msg,
            },
            other => other,
        })
    }
}
