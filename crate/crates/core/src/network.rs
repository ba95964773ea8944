//! Layered float network: dense weights alternating with LIF blocks.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::lif::{LifKernel, LifParams, LifState};
use crate::matrix::Matrix;
use crate::raster::EventRaster;

pub const NETWORK_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `in_dim × out_dim`.
    pub weights: Matrix,
    pub lif: LifParams,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// A feed-forward stack of layers. The last layer is the readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub version: u32,
    pub input_dim: usize,
    pub layers: Vec<Layer>,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let net = Self {
            version: NETWORK_SCHEMA_VERSION,
            input_dim,
            layers,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != NETWORK_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.version,
                expected: NETWORK_SCHEMA_VERSION,
            });
        }
        if self.layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        let dt = self.dt();
        let mut dim = self.input_dim;
        for layer in &self.layers {
            check_len("layer input dimension", dim, layer.in_dim())?;
            check_len("LIF block size", layer.out_dim(), layer.lif.len())?;
            layer.lif.validate()?;
            if layer.lif.dt != dt {
                return Err(Error::invalid("all layers must share one dt"));
            }
            if !layer.weights.is_finite() {
                return Err(Error::NonFinite("layer weights".into()));
            }
            dim = layer.out_dim();
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.layers.first().map_or(0.0, |l| l.lif.dt)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn readout(&self) -> &Layer {
        self.layers.last().expect("validated network has layers")
    }

    pub fn readout_mut(&mut self) -> &mut Layer {
        self.layers.last_mut().expect("validated network has layers")
    }

    pub fn hidden_layers(&self) -> &[Layer] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn neuron_count(&self) -> usize {
        self.layers.iter().map(Layer::out_dim).sum()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Runtime(format!("serializing network: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let net: NetworkSpec = toml::from_str(text).map_err(|e| Error::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        net.validate()?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Format {
            path: path.into(),
            msg: e.to_string(),
        })
    }
}

/// Per-layer state history, `timesteps × neurons`, row-major.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerTrace {
    pub neurons: usize,
    pub i_syn: Vec<f64>,
    pub v_mem: Vec<f64>,
    pub spikes: Vec<f64>,
}

impl LayerTrace {
    fn with_capacity(neurons: usize, timesteps: usize) -> Self {
        Self {
            neurons,
            i_syn: Vec::with_capacity(neurons * timesteps),
            v_mem: Vec::with_capacity(neurons * timesteps),
            spikes: Vec::with_capacity(neurons * timesteps),
        }
    }

    fn push(&mut self, state: &LifState, spikes: &[f64]) {
        self.i_syn.extend_from_slice(&state.i_syn);
        self.v_mem.extend_from_slice(&state.v_mem);
        self.spikes.extend_from_slice(spikes);
    }

    pub fn v_mem_at(&self, t: usize) -> &[f64] {
        &self.v_mem[t * self.neurons..(t + 1) * self.neurons]
    }

    pub fn spikes_at(&self, t: usize) -> &[f64] {
        &self.spikes[t * self.neurons..(t + 1) * self.neurons]
    }
}

#[derive(Clone, Debug)]
pub struct FloatSimOutput {
    pub output: EventRaster,
    /// One entry per layer when recording was requested.
    pub traces: Option<Vec<LayerTrace>>,
}

/// Runs the layered network over `input`. Every layer sees the spikes its
/// predecessor emitted in the same step.
pub fn simulate_float(net: &NetworkSpec, input: &EventRaster, record: bool) -> Result<FloatSimOutput> {
    net.validate()?;
    check_len("input raster channels", net.input_dim, input.channels())?;

    let kernels: Vec<LifKernel> = net.layers.iter().map(|l| l.lif.kernel()).collect();
    let mut states: Vec<LifState> = net.layers.iter().map(|l| LifState::zeros(l.out_dim())).collect();
    let mut spikes: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect();
    let mut currents: Vec<Vec<f64>> = spikes.clone();
    let mut traces: Option<Vec<LayerTrace>> = record.then(|| {
        net.layers
            .iter()
            .map(|l| LayerTrace::with_capacity(l.out_dim(), input.timesteps()))
            .collect()
    });

    let mut out = EventRaster::zeros(input.timesteps(), net.output_dim(), input.dt());
    let mut x: Vec<f64> = vec![0.0; net.input_dim];
    for t in 0..input.timesteps() {
        for (xi, &c) in x.iter_mut().zip(input.row(t)) {
            *xi = f64::from(c);
        }
        for (l, layer) in net.layers.iter().enumerate() {
            let (before, after) = spikes.split_at_mut(l);
            let source: &[f64] = if l == 0 { &x } else { &before[l - 1] };
            layer.weights.transpose_mul_into(source, &mut currents[l]);
            kernels[l].step(&mut states[l], &currents[l], &mut after[0]);
            if let Some(tr) = traces.as_mut() {
                tr[l].push(&states[l], &after[0]);
            }
        }
        for (o, &s) in out.row_mut(t).iter_mut().zip(spikes.last().unwrap()) {
            *o = s.min(f64::from(u32::MAX)) as u32;
        }
    }
    if let Some(bad) = states.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("state of layer {bad} after simulation")));
    }
    Ok(FloatSimOutput { output: out, traces })
}

/// Initial weight distribution of the pyramid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    /// Uniform `±√(1/fan_in)`.
    FanIn,
    /// `±√(1/fan_in)` scaled by `dt/τ_syn` of the target neuron, which
    /// cancels the DC gain `1/(1−α)` of its synaptic filter.
    #[default]
    SynapticGain,
}

/// Parameters of the pyramid-of-time-constants architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PyramidConfig {
    pub n_channels: usize,
    pub n_hidden_per_layer: usize,
    pub n_layers: usize,
    pub n_classes: usize,
    /// Shortest synaptic time constant; layer `k` doubles it `2^k − 1` times.
    pub tau_base: f64,
    pub tau_mem: f64,
    pub dt: f64,
    /// Synaptic time constant of the readout neurons.
    pub readout_tau_syn: f64,
    /// Hidden-layer threshold.
    pub threshold: f64,
    #[serde(default)]
    pub init: WeightInit,
    pub seed: u64,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            n_channels: 16,
            n_hidden_per_layer: 24,
            n_layers: 3,
            n_classes: 4,
            tau_base: 2e-3,
            tau_mem: 2e-3,
            dt: 1e-3,
            readout_tau_syn: 16e-3,
            threshold: 1.0,
            init: WeightInit::default(),
            seed: 0,
        }
    }
}

/// Synaptic time constants of hidden layer `k` (1-based): the first `2^k`
/// entries of `tau_base·2^n`, each repeated `n_hidden / 2^k` times.
pub fn pyramid_taus(k: usize, n_hidden: usize, tau_base: f64) -> Result<Vec<f64>> {
    let groups = 1usize
        .checked_shl(k as u32)
        .filter(|g| *g > 0 && *g <= n_hidden && n_hidden.is_multiple_of(*g))
        .ok_or_else(|| {
            Error::invalid(format!(
                "hidden layer size {n_hidden} is not divisible by 2^{k}"
            ))
        })?;
    let per = n_hidden / groups;
    Ok((0..groups)
        .flat_map(|g| std::iter::repeat_n(tau_base * (1u64 << g) as f64, per))
        .collect())
}

/// Builds the pyramid network with weights drawn per `cfg.init`, zero
/// biases, and spiking disabled on the readout (`θ = ∞`) until calibration.
pub fn build_pyramid_net(cfg: &PyramidConfig) -> Result<NetworkSpec> {
    if cfg.n_layers == 0 || cfg.n_channels == 0 || cfg.n_classes == 0 {
        return Err(Error::invalid("pyramid needs at least one layer, channel and class"));
    }
    let groups = 1usize
        .checked_shl(cfg.n_layers as u32)
        .unwrap_or(0);
    if groups == 0 || !cfg.n_hidden_per_layer.is_multiple_of(groups) {
        return Err(Error::invalid(format!(
            "n_hidden_per_layer = {} must be divisible by 2^n_layers = 2^{}",
            cfg.n_hidden_per_layer, cfg.n_layers
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut layers = Vec::with_capacity(cfg.n_layers + 1);
    let mut fan_in = cfg.n_channels;
    for k in 1..=cfg.n_layers {
        let n = cfg.n_hidden_per_layer;
        let mut lif = LifParams::uniform(n, 0.0, cfg.tau_mem, cfg.threshold, cfg.dt);
        lif.tau_syn = pyramid_taus(k, n, cfg.tau_base)?;
        layers.push(Layer {
            weights: init_weights(&mut rng, fan_in, n),
            lif,
        });
        fan_in = n;
    }
    layers.push(Layer {
        weights: init_weights(&mut rng, fan_in, cfg.n_classes),
        lif: LifParams::uniform(
            cfg.n_classes,
            cfg.readout_tau_syn,
            cfg.tau_mem,
            f64::INFINITY,
            cfg.dt,
        ),
    });
    if cfg.init == WeightInit::SynapticGain {
        for layer in &mut layers {
            let gains: Vec<f64> = layer.lif.tau_syn.iter().map(|tau| (cfg.dt / tau).min(1.0)).collect();
            for r in 0..layer.weights.rows() {
                for (c, g) in gains.iter().enumerate() {
                    let w = layer.weights.get(r, c);
                    layer.weights.set(r, c, w * g);
                }
            }
        }
    }
    NetworkSpec::new(cfg.n_channels, layers)
}

fn init_weights(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = (1.0 / fan_in as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..bound))
}
