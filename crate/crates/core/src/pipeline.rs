//! Stage functions shared by the command-line tool, and the manifest that
//! runs them all from one file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{generate_synthetic_dataset, load_split, write_dataset, DatasetManifest, Split, SyntheticDatasetSpec};
use crate::error::{Error, Result};
use crate::frontend::{design_filterbank, FilterBankSpec};
use crate::harness::{evaluate, EvalReport, Model};
use crate::mapper::{extract_graph, map, HardwareLimits, MappedSpec};
use crate::network::{build_pyramid_net, LayerTrace, NetworkSpec, PyramidConfig};
use crate::plot;
use crate::quantizer::channel_quantize;
use crate::trainer::{calibrate_readout_thresholds, train, Calibration, Checkpoint, LabeledRaster, TrainConfig};
use crate::xylo::{HardwareConfig, IntTrace};

pub const PIPELINE_SCHEMA_VERSION: u32 = 1;

/// Output locations of every stage. Relative paths resolve against the
/// directory holding the pipeline manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelinePaths {
    pub dataset_dir: PathBuf,
    pub checkpoint: PathBuf,
    /// Trained network with calibrated readout thresholds.
    pub network: PathBuf,
    pub mapped: PathBuf,
    pub config: PathBuf,
    pub float_report: PathBuf,
    pub int_report: PathBuf,
    pub plots_dir: PathBuf,
}

impl Default for PipelinePaths {
    fn default() -> Self {
        Self {
            dataset_dir: "dataset".into(),
            checkpoint: "checkpoint.toml".into(),
            network: "network.toml".into(),
            mapped: "mapped.toml".into(),
            config: "config.toml".into(),
            float_report: "eval-float.toml".into(),
            int_report: "eval-int.toml".into(),
            plots_dir: "plots".into(),
        }
    }
}

impl PipelinePaths {
    fn all(&self) -> [(&'static str, &PathBuf); 8] {
        [
            ("dataset_dir", &self.dataset_dir),
            ("checkpoint", &self.checkpoint),
            ("network", &self.network),
            ("mapped", &self.mapped),
            ("config", &self.config),
            ("float_report", &self.float_report),
            ("int_report", &self.int_report),
            ("plots_dir", &self.plots_dir),
        ]
    }

    pub fn resolved(&self, base: &Path) -> Self {
        let r = |p: &PathBuf| base.join(p);
        Self {
            dataset_dir: r(&self.dataset_dir),
            checkpoint: r(&self.checkpoint),
            network: r(&self.network),
            mapped: r(&self.mapped),
            config: r(&self.config),
            float_report: r(&self.float_report),
            int_report: r(&self.int_report),
            plots_dir: r(&self.plots_dir),
        }
    }

    pub fn dataset_manifest(&self) -> PathBuf {
        self.dataset_dir.join("manifest.toml")
    }
}

/// Everything needed to reproduce a run. The top-level `seed` overrides the
/// seeds of the dataset, the initial weights and the batch shuffle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineManifest {
    pub version: u32,
    pub seed: u64,
    #[serde(default)]
    pub paths: PipelinePaths,
    #[serde(default)]
    pub dataset: SyntheticDatasetSpec,
    #[serde(default)]
    pub frontend: FilterBankSpec,
    #[serde(default)]
    pub model: PyramidConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Default for PipelineManifest {
    fn default() -> Self {
        Self {
            version: PIPELINE_SCHEMA_VERSION,
            seed: 0,
            paths: PipelinePaths::default(),
            dataset: SyntheticDatasetSpec::default(),
            frontend: FilterBankSpec::default(),
            model: PyramidConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineManifest {
    /// Copies `seed` into every seeded stage.
    pub fn seeded(mut self) -> Self {
        self.dataset.seed = self.seed;
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        self
    }

    /// Checks stage parameters against each other and the output paths for
    /// emptiness and collisions, before anything is written.
    pub fn validate(&self) -> Result<()> {
        if self.version != PIPELINE_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.version,
                expected: PIPELINE_SCHEMA_VERSION,
            });
        }
        let paths = self.paths.all();
        for (i, (name, p)) in paths.iter().enumerate() {
            if p.as_os_str().is_empty() {
                return Err(Error::invalid(format!("paths.{name} is empty")));
            }
            if let Some((other, _)) = paths[..i].iter().find(|(_, q)| q == p) {
                return Err(Error::invalid(format!("paths.{name} and paths.{other} are both {}", p.display())));
            }
        }
        self.dataset.validate()?;
        self.frontend.validate()?;
        self.train.loss.validate()?;
        self.train.surrogate.validate()?;
        check_compatible(&self.dataset, &self.frontend, &self.model)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Runtime(format!("serializing pipeline manifest: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: PipelineManifest = toml::from_str(text).map_err(|e| Error::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
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

fn check_compatible(dataset: &SyntheticDatasetSpec, frontend: &FilterBankSpec, model: &PyramidConfig) -> Result<()> {
    if dataset.sample_rate != frontend.sample_rate {
        return Err(Error::invalid(format!(
            "dataset sample rate {} Hz differs from the front end's {} Hz",
            dataset.sample_rate, frontend.sample_rate
        )));
    }
    if model.n_channels != frontend.n_channels {
        return Err(Error::invalid(format!(
            "model expects {} input channels, front end produces {}",
            model.n_channels, frontend.n_channels
        )));
    }
    if model.n_classes != dataset.classes.len() {
        return Err(Error::invalid(format!(
            "model has {} readouts for {} dataset classes",
            model.n_classes,
            dataset.classes.len()
        )));
    }
    if (model.dt - frontend.bin_dt).abs() > 1e-12 {
        return Err(Error::invalid(format!(
            "model step {} s differs from the front-end bin width {} s",
            model.dt, frontend.bin_dt
        )));
    }
    Ok(())
}

/// Fails with a validation error naming `what` when `path` is missing.
pub fn require_file(what: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} {} does not exist", path.display())))
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

/// Generates the synthetic dataset and writes it under `dir`. Returns the
/// dataset manifest path.
pub fn synth_stage(spec: &SyntheticDatasetSpec, dir: &Path) -> Result<PathBuf> {
    spec.validate()?;
    let segments = generate_synthetic_dataset(spec)?;
    let path = write_dataset(spec, &segments, dir)?;
    info!("wrote {} segments to {}", segments.len(), dir.display());
    Ok(path)
}

/// An encoded split together with the dataset's class names.
#[derive(Clone, Debug)]
pub struct EncodedSplit {
    pub classes: Vec<String>,
    pub segments: Vec<LabeledRaster>,
}

/// Reads one split of a dataset and encodes every segment.
pub fn encode_split(manifest_path: &Path, frontend: &FilterBankSpec, split: Split) -> Result<EncodedSplit> {
    require_file("dataset manifest", manifest_path)?;
    let manifest = DatasetManifest::load(manifest_path)?;
    if manifest.sample_rate != frontend.sample_rate {
        return Err(Error::invalid(format!(
            "dataset is sampled at {} Hz but the front end expects {} Hz",
            manifest.sample_rate, frontend.sample_rate
        )));
    }
    let bank = design_filterbank(frontend)?;
    let audio = load_split(&manifest, manifest_path, split)?;
    if audio.is_empty() {
        return Err(Error::invalid(format!("dataset has no {} segments", split.as_str())));
    }
    let segments = audio
        .par_iter()
        .map(|(a, label)| {
            Ok(LabeledRaster {
                raster: bank.encode(a)?,
                label: *label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodedSplit {
        classes: manifest.classes,
        segments,
    })
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub checkpoint: Checkpoint,
    pub calibration: Calibration,
    /// The trained network with calibrated readout thresholds.
    pub network: NetworkSpec,
}

/// Builds the pyramid, trains it and calibrates the readout thresholds on
/// the training set.
pub fn train_stage(train_set: &[LabeledRaster], model: &PyramidConfig, cfg: &TrainConfig) -> Result<Trained> {
    let net = build_pyramid_net(model)?;
    let outcome = train(&net, train_set, cfg)?;
    if let (Some(first), Some(last)) = (outcome.loss_curve.first(), outcome.loss_curve.last()) {
        info!("training loss {first:.4} -> {last:.4} over {} epochs", outcome.loss_curve.len());
    }
    let calibration = calibrate_readout_thresholds(&outcome.net, train_set)?;
    if calibration.warnings() > 0 {
        warn!(
            "{} readout threshold(s) fell back to a weak rule: {:?}",
            calibration.warnings(),
            calibration.rules
        );
    }
    let mut network = outcome.net.clone();
    calibration.apply(&mut network)?;
    Ok(Trained {
        checkpoint: Checkpoint::new(&outcome),
        calibration,
        network,
    })
}

/// Extracts the layer graph, runs the design-rule check and places it.
pub fn map_stage(net: &NetworkSpec, limits: &HardwareLimits) -> Result<MappedSpec> {
    map(&extract_graph(net)?, limits)
}

/// Per-channel quantization into a loadable configuration.
pub fn quantize_stage(mapped: &MappedSpec) -> Result<HardwareConfig> {
    HardwareConfig::new(channel_quantize(mapped)?)
}

/// Writes one CSV per float layer: `t,neuron,i_syn,v_mem,spikes`.
pub fn write_float_traces(traces: &[LayerTrace], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(traces.len());
    for (l, tr) in traces.iter().enumerate() {
        let name = if l + 1 == traces.len() {
            "float-readout.csv".to_string()
        } else {
            format!("float-hidden-{}.csv", l + 1)
        };
        let mut out = String::from("t,neuron,i_syn,v_mem,spikes\n");
        for (k, ((i, v), s)) in tr.i_syn.iter().zip(&tr.v_mem).zip(&tr.spikes).enumerate() {
            let _ = writeln!(out, "{},{},{i},{v},{s}", k / tr.neurons, k % tr.neurons);
        }
        let path = dir.join(name);
        std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Writes `int-hidden.csv` and `int-readout.csv`: `t,neuron,i_syn,v_mem,spikes`.
pub fn write_int_traces(trace: &IntTrace, n_hidden: usize, n_readout: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(2);
    for (name, states, spikes, n) in [
        ("int-hidden.csv", &trace.hidden, &trace.hidden_spikes, n_hidden),
        ("int-readout.csv", &trace.readout, &trace.readout_spikes, n_readout),
    ] {
        let mut out = String::from("t,neuron,i_syn,v_mem,spikes\n");
        if n > 0 {
            for (k, (st, s)) in states.iter().zip(spikes).enumerate() {
                let _ = writeln!(out, "{},{},{},{},{s}", k / n, k % n, st.i_syn, st.v_mem);
            }
        }
        let path = dir.join(name);
        std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Latency histogram from a report, and readout traces of the first test
/// segment of every class. Returns the written files.
pub fn plot_stage(
    report: &EvalReport,
    net: &NetworkSpec,
    test: &EncodedSplit,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = test
        .segments
        .first()
        .ok_or_else(|| Error::invalid("no test segments to plot"))?;
    let segment_ms = first.raster.timesteps() as f64 * first.raster.dt() * 1e3;
    let hist = dir.join("latency.svg");
    plot::latency_histogram(&report.latencies_ms, segment_ms, &hist)?;
    let examples: Vec<LabeledRaster> = (0..test.classes.len())
        .filter_map(|c| test.segments.iter().find(|s| s.label == c).cloned())
        .collect();
    let traces = dir.join("readout-traces.svg");
    plot::class_traces(net, &examples, &test.classes, &traces)?;
    Ok(vec![hist, traces])
}

/// Outcome of a full run.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub paths: PipelinePaths,
    pub loss_curve: Vec<f64>,
    pub calibration: Calibration,
    pub float_report: EvalReport,
    pub int_report: EvalReport,
    /// Fraction of test segments on which both backends decide alike.
    pub agreement: f64,
    /// Every file written, in stage order.
    pub outputs: Vec<PathBuf>,
}

/// Runs synth, encode, train, map, quantize, both evaluations and the
/// plots, writing each artifact to its manifest path under `base`.
pub fn run_pipeline(manifest: &PipelineManifest, base: &Path) -> Result<PipelineRun> {
    let manifest = manifest.clone().seeded();
    manifest.validate()?;
    let paths = manifest.paths.resolved(base);
    let mut outputs = Vec::new();

    let dataset = synth_stage(&manifest.dataset, &paths.dataset_dir)?;
    outputs.push(dataset.clone());
    let train_set = encode_split(&dataset, &manifest.frontend, Split::Train)?;
    let test_set = encode_split(&dataset, &manifest.frontend, Split::Test)?;

    let trained = train_stage(&train_set.segments, &manifest.model, &manifest.train)?;
    ensure_parent(&paths.checkpoint)?;
    trained.checkpoint.save(&paths.checkpoint)?;
    outputs.push(paths.checkpoint.clone());
    ensure_parent(&paths.network)?;
    trained.network.save(&paths.network)?;
    outputs.push(paths.network.clone());

    let mapped = map_stage(&trained.network, &HardwareLimits::default())?;
    ensure_parent(&paths.mapped)?;
    mapped.save(&paths.mapped)?;
    outputs.push(paths.mapped.clone());

    let config = quantize_stage(&mapped)?;
    ensure_parent(&paths.config)?;
    config.save(&paths.config)?;
    outputs.push(paths.config.clone());

    let float_report = evaluate(Model::Float(&trained.network), &test_set.segments)?;
    let int_report = evaluate(Model::Int(&config), &test_set.segments)?;
    for (path, report) in [(&paths.float_report, &float_report), (&paths.int_report, &int_report)] {
        ensure_parent(path)?;
        report.save(path)?;
        outputs.push(path.clone());
    }
    let agreement = float_report.agreement(&int_report)?;
    info!(
        "accuracy float {:.4}, int {:.4}, decision agreement {agreement:.4}",
        float_report.accuracy, int_report.accuracy
    );

    outputs.extend(plot_stage(&int_report, &trained.network, &test_set, &paths.plots_dir)?);
    Ok(PipelineRun {
        paths,
        loss_curve: trained.checkpoint.loss_curve.clone(),
        calibration: trained.calibration,
        float_report,
        int_report,
        agreement,
        outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_defaults_fill_missing_tables() {
        let m = PipelineManifest::from_toml("version = 1\nseed = 7\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(m.train.epochs, 3);
        assert_eq!(m.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(m.dataset, SyntheticDatasetSpec::default());
        let seeded = m.seeded();
        assert_eq!((seeded.dataset.seed, seeded.model.seed, seeded.train.seed), (7, 7, 7));
    }

    #[test]
    fn manifest_round_trips() {
        let m = PipelineManifest::default();
        assert_eq!(PipelineManifest::from_toml(&m.to_toml().unwrap()).unwrap(), m);
    }

    #[test]
    fn manifest_rejects_colliding_paths_and_mismatched_stages() {
        let mut m = PipelineManifest::default();
        m.paths.mapped = m.paths.config.clone();
        assert!(matches!(m.validate(), Err(Error::InvalidParam(_))));

        let mut m = PipelineManifest::default();
        m.frontend.sample_rate = 16_000;
        assert!(m.validate().unwrap_err().to_string().contains("sample rate"));

        let mut m = PipelineManifest::default();
        m.model.n_classes = 3;
        assert!(m.validate().is_err());

        let m = PipelineManifest {
            version: 9,
            ..Default::default()
        };
        assert!(matches!(m.validate(), Err(Error::SchemaVersion { found: 9, .. })));
    }

    #[test]
    fn missing_upstream_file_is_a_validation_error() {
        let e = encode_split(Path::new("/nonexistent/manifest.toml"), &FilterBankSpec::default(), Split::Test).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
