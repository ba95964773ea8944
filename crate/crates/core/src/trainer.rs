//! Surrogate-gradient training of layered networks.
//!
//! The forward pass is the float LIF model unrolled over the whole segment.
//! Each spike count `n = ⌊u/θ⌋` (with `u` the pre-reset membrane) is relaxed
//! to a periodic sum of logistic steps
//!
//! ```text
//! S(u) = Σ_{k ≥ 1} σ((u − kθ)/w)
//! ```
//!
//! whose derivative replaces the zero-almost-everywhere derivative of the
//! staircase. In [`ForwardMode::Hard`] only the backward pass uses `S'`; in
//! [`ForwardMode::Relaxed`] the forward pass uses `S` itself, so gradients are
//! exact derivatives of a smooth loss and can be checked by finite
//! differences.
//!
//! The loss is the mean squared error between readout membrane potentials
//! and per-class targets over every step. Readout spiking is disabled while
//! training and thresholds are set afterwards by
//! [`calibrate_readout_thresholds`].

use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::lif::spike_count;
use crate::matrix::Matrix;
use crate::network::{simulate_float, NetworkSpec};
use crate::raster::EventRaster;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Logistic terms further than this many widths from their step are treated
/// as exactly 0 or 1.
const SURROGATE_WINDOW: f64 = 30.0;

/// Threshold used when calibration cannot place one.
pub const NOMINAL_THRESHOLD: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSpec {
    /// Membrane target of the labelled class.
    pub target_hi: f64,
    /// Membrane target of every other class.
    pub target_lo: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            target_hi: 2.0 * NOMINAL_THRESHOLD,
            target_lo: 0.2 * NOMINAL_THRESHOLD,
        }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_hi.is_finite() && self.target_lo.is_finite() && self.target_hi > self.target_lo) {
            return Err(Error::invalid(format!(
                "need target_hi > target_lo, got {} and {}",
                self.target_hi, self.target_lo
            )));
        }
        Ok(())
    }

    fn target(&self, class: usize, label: usize) -> f64 {
        if class == label {
            self.target_hi
        } else {
            self.target_lo
        }
    }
}

/// Mean over steps and classes of `(v − target)²`. `vmem` is
/// `timesteps × classes`, row-major.
pub fn mse_membrane_loss(vmem: &[f64], classes: usize, label: usize, loss: &LossSpec) -> Result<f64> {
    loss.validate()?;
    if label >= classes {
        return Err(Error::invalid(format!("label {label} out of range for {classes} classes")));
    }
    if classes == 0 || !vmem.len().is_multiple_of(classes) || vmem.is_empty() {
        return Err(Error::invalid(format!(
            "membrane trace of length {} is not a whole number of {classes}-class rows",
            vmem.len()
        )));
    }
    let sum: f64 = vmem
        .chunks_exact(classes)
        .flat_map(|row| row.iter().enumerate().map(|(c, v)| (v - loss.target(c, label)).powi(2)))
        .sum();
    Ok(sum / vmem.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardMode {
    /// Integer spike counts forward, surrogate derivative backward.
    #[default]
    Hard,
    /// Smooth spike counts in both directions.
    Relaxed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateSpec {
    /// Logistic width as a fraction of each neuron's threshold.
    pub width_ratio: f64,
    pub forward: ForwardMode,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        Self {
            width_ratio: 0.5,
            forward: ForwardMode::Hard,
        }
    }
}

impl SurrogateSpec {
    pub fn relaxed() -> Self {
        Self {
            forward: ForwardMode::Relaxed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_ratio > 0.0 && self.width_ratio.is_finite()) {
            return Err(Error::invalid(format!("surrogate width must be > 0, got {}", self.width_ratio)));
        }
        Ok(())
    }
}

/// Relaxed spike count `S(u)` and its derivative for threshold `theta` and
/// logistic width `width`, with at most `cap` steps.
pub fn relaxed_spikes(u: f64, theta: f64, width: f64, cap: Option<f64>) -> (f64, f64) {
    let kmax = cap.unwrap_or(f64::INFINITY);
    let r = theta / width;
    let zu = u / width;
    // z_k = zu − k·r; terms with z_k > WINDOW are saturated at 1
    let k_lo = ((zu - SURROGATE_WINDOW) / r).ceil().max(1.0);
    let k_hi = ((zu + SURROGATE_WINDOW) / r).floor().min(kmax);
    let mut s = (k_lo - 1.0).min(kmax).max(0.0);
    let mut ds = 0.0;
    if k_hi >= k_lo {
        let step = r.exp();
        let mut e = (k_lo * r - zu).exp();
        let mut k = k_lo;
        while k <= k_hi {
            let sig = 1.0 / (1.0 + e);
            s += sig;
            ds += sig * (1.0 - sig);
            e *= step;
            k += 1.0;
        }
    }
    (s, ds / width)
}

/// Per-layer record of one forward pass, `timesteps × neurons`.
#[derive(Clone, Debug)]
struct Tape {
    spikes: Vec<f64>,
    dsdu: Vec<f64>,
    v_mem: Vec<f64>,
}

fn raster_to_f64(input: &EventRaster) -> Vec<f64> {
    input.counts().iter().map(|&c| f64::from(c)).collect()
}

fn forward(net: &NetworkSpec, x: &[f64], steps: usize, surrogate: &SurrogateSpec) -> Result<Vec<Tape>> {
    let mut tapes: Vec<Tape> = Vec::with_capacity(net.layers.len());
    for (l, layer) in net.layers.iter().enumerate() {
        let n = layer.out_dim();
        let in_dim = layer.in_dim();
        let src: &[f64] = if l == 0 { x } else { &tapes[l - 1].spikes };
        let k = layer.lif.kernel();
        let width: Vec<f64> = k.threshold.iter().map(|t| t * surrogate.width_ratio).collect();
        let mut tape = Tape {
            spikes: vec![0.0; steps * n],
            dsdu: vec![0.0; steps * n],
            v_mem: vec![0.0; steps * n],
        };
        let mut i_syn = vec![0.0; n];
        let mut v_mem = vec![0.0; n];
        let mut current = vec![0.0; n];
        for t in 0..steps {
            layer.weights.transpose_mul_into(&src[t * in_dim..(t + 1) * in_dim], &mut current);
            for j in 0..n {
                let i = k.alpha[j] * i_syn[j] + current[j];
                let u = k.beta[j] * v_mem[j] + i + k.bias[j];
                let theta = k.threshold[j];
                let (s, ds) = if theta.is_finite() {
                    let (sr, ds) = relaxed_spikes(u, theta, width[j], k.max_spikes);
                    let s = match surrogate.forward {
                        ForwardMode::Relaxed => sr,
                        ForwardMode::Hard => {
                            let s = spike_count(u, theta);
                            k.max_spikes.map_or(s, |cap| s.min(cap))
                        }
                    };
                    (s, ds)
                } else {
                    (0.0, 0.0)
                };
                i_syn[j] = i;
                v_mem[j] = if s != 0.0 { u - s * theta } else { u };
                tape.spikes[t * n + j] = s;
                tape.dsdu[t * n + j] = ds;
                tape.v_mem[t * n + j] = v_mem[j];
            }
            if !v_mem.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("membrane state of layer {l} at step {t}")));
            }
        }
        tapes.push(tape);
    }
    Ok(tapes)
}

/// Loss and weight gradients for one labelled segment.
#[derive(Clone, Debug)]
pub struct Backward {
    pub loss: f64,
    /// One gradient per layer, shaped like that layer's weights.
    pub grads: Vec<Matrix>,
}

/// Loss of one segment under the training forward pass.
pub fn segment_loss(
    net: &NetworkSpec,
    input: &EventRaster,
    label: usize,
    loss: &LossSpec,
    surrogate: &SurrogateSpec,
) -> Result<f64> {
    net.validate()?;
    surrogate.validate()?;
    check_len("input raster channels", net.input_dim, input.channels())?;
    let tapes = forward(net, &raster_to_f64(input), input.timesteps(), surrogate)?;
    mse_membrane_loss(&tapes.last().unwrap().v_mem, net.output_dim(), label, loss)
}

/// Backpropagation through time over the whole segment.
pub fn backward_bptt(
    net: &NetworkSpec,
    input: &EventRaster,
    label: usize,
    loss: &LossSpec,
    surrogate: &SurrogateSpec,
) -> Result<Backward> {
    net.validate()?;
    surrogate.validate()?;
    check_len("input raster channels", net.input_dim, input.channels())?;
    let steps = input.timesteps();
    if steps == 0 {
        return Err(Error::invalid("cannot train on an empty raster"));
    }
    let x = raster_to_f64(input);
    let tapes = forward(net, &x, steps, surrogate)?;
    let classes = net.output_dim();
    let out = tapes.last().unwrap();
    let value = mse_membrane_loss(&out.v_mem, classes, label, loss)?;

    let scale = 2.0 / (steps * classes) as f64;
    let direct: Vec<f64> = out
        .v_mem
        .chunks_exact(classes)
        .flat_map(|row| {
            row.iter()
                .enumerate()
                .map(move |(c, v)| scale * (v - loss.target(c, label)))
        })
        .collect();

    let mut grads: Vec<Matrix> = Vec::with_capacity(net.layers.len());
    // dL/ds of the layer being processed, from the layer above
    let mut g_spk: Vec<f64> = vec![0.0; steps * classes];
    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        let (n, in_dim) = (layer.out_dim(), layer.in_dim());
        let tape = &tapes[l];
        let src: &[f64] = if l == 0 { &x } else { &tapes[l - 1].spikes };
        let k = layer.lif.kernel();
        let top = l + 1 == net.layers.len();

        let mut gw = Matrix::zeros(in_dim, n);
        let mut g_src = if l > 0 { vec![0.0; steps * in_dim] } else { Vec::new() };
        let mut gu_next = vec![0.0; n];
        let mut gi = vec![0.0; n];
        for t in (0..steps).rev() {
            for j in 0..n {
                let idx = t * n + j;
                let mut gv = k.beta[j] * gu_next[j];
                if top {
                    gv += direct[idx];
                }
                let theta = k.threshold[j];
                let gu = if theta.is_finite() {
                    let ds = tape.dsdu[idx];
                    gv * (1.0 - theta * ds) + g_spk[idx] * ds
                } else {
                    gv
                };
                gu_next[j] = gu;
                gi[j] = gu + k.alpha[j] * gi[j];
            }
            let srow = &src[t * in_dim..(t + 1) * in_dim];
            for (r, &s) in srow.iter().enumerate() {
                if s != 0.0 {
                    for (g, &d) in gw.row_mut(r).iter_mut().zip(&gi) {
                        *g += s * d;
                    }
                }
            }
            if l > 0 {
                layer.weights.mul_into(&gi, &mut g_src[t * in_dim..(t + 1) * in_dim]);
            }
        }
        if !gw.is_finite() {
            return Err(Error::NonFinite(format!("weight gradient of layer {l}")));
        }
        grads.push(gw);
        g_spk = g_src;
    }
    grads.reverse();
    Ok(Backward { loss: value, grads })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state over the layer weights of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl Adam {
    pub fn new(config: AdamConfig, net: &NetworkSpec) -> Self {
        let zeros: Vec<Matrix> = net
            .layers
            .iter()
            .map(|l| Matrix::zeros(l.weights.rows(), l.weights.cols()))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, net: &mut NetworkSpec, grads: &[Matrix]) -> Result<()> {
        check_len("gradient layers", net.layers.len(), grads.len())?;
        check_len("optimizer layers", net.layers.len(), self.m.len())?;
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powf(self.step as f64);
        let bc2 = 1.0 - c.beta2.powf(self.step as f64);
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let g = grads[l].as_slice();
            check_len("gradient entries", layer.weights.as_slice().len(), g.len())?;
            let m = self.m[l].as_mut_slice();
            let v = self.v[l].as_mut_slice();
            for (((w, &g), m), v) in layer.weights.as_mut_slice().iter_mut().zip(g).zip(m).zip(v) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *w -= c.lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// One labelled training or evaluation segment.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledRaster {
    pub raster: EventRaster,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub loss: LossSpec,
    pub surrogate: SurrogateSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            seed: 0,
            adam: AdamConfig::default(),
            loss: LossSpec::default(),
            surrogate: SurrogateSpec::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: NetworkSpec,
    pub optimizer: Adam,
    /// Mean training loss of every epoch.
    pub loss_curve: Vec<f64>,
}

/// Mini-batch training with a fresh optimizer.
pub fn train(net: &NetworkSpec, data: &[LabeledRaster], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let optimizer = Adam::new(cfg.adam, net);
    train_from(net.clone(), optimizer, data, cfg)
}

/// Continues training from an existing optimizer state.
///
/// Per-sample gradients are computed in parallel and summed in batch order,
/// so the result does not depend on the number of worker threads.
pub fn train_from(
    mut net: NetworkSpec,
    mut optimizer: Adam,
    data: &[LabeledRaster],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    net.validate()?;
    cfg.loss.validate()?;
    cfg.surrogate.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    for (i, s) in data.iter().enumerate() {
        if s.label >= net.output_dim() {
            return Err(Error::invalid(format!(
                "sample {i}: label {} out of range for {} classes",
                s.label,
                net.output_dim()
            )));
        }
        check_len("input raster channels", net.input_dim, s.raster.channels())?;
    }
    optimizer.config = cfg.adam;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Backward> = batch
                .par_iter()
                .map(|&i| backward_bptt(&net, &data[i].raster, data[i].label, &cfg.loss, &cfg.surrogate))
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Divergence { epoch, loss: f64::NAN },
                    other => other,
                })?;
            let mut sum: Vec<Matrix> = results[0].grads.clone();
            for r in &results[1..] {
                for (acc, g) in sum.iter_mut().zip(&r.grads) {
                    for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *a += b;
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for g in &mut sum {
                g.as_mut_slice().iter_mut().for_each(|x| *x *= inv);
            }
            let batch_loss: f64 = results.iter().map(|r| r.loss).sum();
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { epoch, loss: batch_loss });
            }
            total += batch_loss;
            optimizer.update(&mut net, &sum)?;
        }
        let mean = total / data.len() as f64;
        info!("epoch {epoch}: loss {mean:.5}");
        loss_curve.push(mean);
    }
    Ok(TrainOutcome {
        net,
        optimizer,
        loss_curve,
    })
}

/// Network, optimizer state and loss history, stored as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub epochs: usize,
    pub loss_curve: Vec<f64>,
    pub net: NetworkSpec,
    pub optimizer: Adam,
}

impl Checkpoint {
    pub fn new(outcome: &TrainOutcome) -> Self {
        Self {
            version: CHECKPOINT_SCHEMA_VERSION,
            epochs: outcome.loss_curve.len(),
            loss_curve: outcome.loss_curve.clone(),
            net: outcome.net.clone(),
            optimizer: outcome.optimizer.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Runtime(format!("serializing checkpoint: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let ck: Checkpoint = toml::from_str(text).map_err(|e| Error::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        if ck.version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: ck.version,
                expected: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        ck.net.validate()?;
        Ok(ck)
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

/// How a readout threshold was chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdRule {
    /// Midpoint of the 95th non-target and 5th target percentiles.
    Quantile,
    /// Midpoint of the largest non-target and smallest target peak.
    Extremes,
    /// Distributions overlap: midpoint of the two medians.
    Medians,
    /// No positive threshold could be placed.
    Nominal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub thresholds: Vec<f64>,
    pub rules: Vec<ThresholdRule>,
}

impl Calibration {
    pub fn warnings(&self) -> usize {
        self.rules
            .iter()
            .filter(|r| matches!(r, ThresholdRule::Medians | ThresholdRule::Nominal))
            .count()
    }

    /// Installs the thresholds into the readout of `net`.
    pub fn apply(&self, net: &mut NetworkSpec) -> Result<()> {
        check_len("readout thresholds", net.output_dim(), self.thresholds.len())?;
        net.readout_mut().lif.threshold = self.thresholds.clone();
        net.validate()
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Peak readout membrane potential of one segment with spiking disabled.
pub fn readout_peaks(net: &NetworkSpec, input: &EventRaster) -> Result<Vec<f64>> {
    let mut silent = net.clone();
    silent.readout_mut().lif.threshold.fill(f64::INFINITY);
    let out = simulate_float(&silent, input, true)?;
    let trace = out.traces.unwrap().pop().unwrap();
    let classes = net.output_dim();
    let mut peaks = vec![f64::NEG_INFINITY; classes];
    for row in trace.v_mem.chunks_exact(classes) {
        for (p, &v) in peaks.iter_mut().zip(row) {
            *p = p.max(v);
        }
    }
    Ok(peaks)
}

/// Places each readout threshold between that neuron's peak membrane
/// potential on non-target segments and on target segments.
pub fn calibrate_readout_thresholds(net: &NetworkSpec, set: &[LabeledRaster]) -> Result<Calibration> {
    net.validate()?;
    let classes = net.output_dim();
    let peaks: Vec<Vec<f64>> = set
        .par_iter()
        .map(|s| readout_peaks(net, &s.raster))
        .collect::<Result<_>>()?;
    let mut thresholds = Vec::with_capacity(classes);
    let mut rules = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut target: Vec<f64> = Vec::new();
        let mut other: Vec<f64> = Vec::new();
        for (s, p) in set.iter().zip(&peaks) {
            if s.label >= classes {
                return Err(Error::invalid(format!("label {} out of range for {classes} classes", s.label)));
            }
            if s.label == c {
                target.push(p[c]);
            } else {
                other.push(p[c]);
            }
        }
        if target.is_empty() || other.is_empty() {
            return Err(Error::invalid(format!(
                "calibration set needs target and non-target segments for class {c}"
            )));
        }
        target.sort_by(f64::total_cmp);
        other.sort_by(f64::total_cmp);
        let (max_other, min_target) = (*other.last().unwrap(), target[0]);
        let (hi_other, lo_target) = (quantile(&other, 0.95), quantile(&target, 0.05));
        let quantile_mid = 0.5 * (hi_other + lo_target);
        let (mut theta, mut rule) = if min_target > max_other {
            if quantile_mid > max_other && quantile_mid <= min_target {
                (quantile_mid, ThresholdRule::Quantile)
            } else {
                (0.5 * (max_other + min_target), ThresholdRule::Extremes)
            }
        } else if lo_target > hi_other {
            (quantile_mid, ThresholdRule::Quantile)
        } else {
            warn!("readout {c}: target and non-target peaks overlap, using the midpoint of medians");
            (
                0.5 * (quantile(&other, 0.5) + quantile(&target, 0.5)),
                ThresholdRule::Medians,
            )
        };
        if !(theta > 0.0 && theta.is_finite()) {
            warn!("readout {c}: no positive threshold separates the classes, using {NOMINAL_THRESHOLD}");
            theta = NOMINAL_THRESHOLD;
            rule = ThresholdRule::Nominal;
        }
        thresholds.push(theta);
        rules.push(rule);
    }
    Ok(Calibration { thresholds, rules })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lif::LifParams;
    use crate::network::Layer;
    use proptest::prelude::*;

    #[test]
    fn loss_is_zero_on_targets() {
        let spec = LossSpec::default();
        let v = vec![0.2, 2.0, 0.2, 0.2, 2.0, 0.2];
        assert_eq!(mse_membrane_loss(&v, 3, 1, &spec).unwrap(), 0.0);
    }

    #[test]
    fn loss_of_silent_trace_is_one_over_classes() {
        let spec = LossSpec {
            target_hi: 1.0,
            target_lo: 0.0,
        };
        let v = vec![0.0; 4 * 7];
        assert_eq!(mse_membrane_loss(&v, 4, 2, &spec).unwrap(), 0.25);
    }

    #[test]
    fn loss_rejects_bad_label() {
        assert!(mse_membrane_loss(&[0.0; 4], 4, 4, &LossSpec::default()).is_err());
    }

    #[test]
    fn relaxed_spikes_track_the_staircase() {
        for &u in &[-3.0, 0.0, 0.5, 1.7, 5.2, 40.3] {
            let (s, _) = relaxed_spikes(u, 1.0, 0.01, None);
            assert!((s - spike_count(u, 1.0)).abs() < 1e-6, "u={u}: {s}");
        }
        let (s, ds) = relaxed_spikes(1000.0, 1.0, 0.5, Some(31.0));
        assert_eq!(s, 31.0);
        assert_eq!(ds, 0.0);
    }

    #[test]
    fn relaxed_derivative_matches_difference() {
        for &u in &[-0.5, 0.3, 1.0, 2.4, 17.9] {
            let h = 1e-6;
            let (a, _) = relaxed_spikes(u - h, 1.0, 0.5, Some(31.0));
            let (b, _) = relaxed_spikes(u + h, 1.0, 0.5, Some(31.0));
            let (_, ds) = relaxed_spikes(u, 1.0, 0.5, Some(31.0));
            assert!(((b - a) / (2.0 * h) - ds).abs() < 1e-6, "u={u}");
        }
    }

    fn toy(seed: u64) -> NetworkSpec {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |i: usize, o: usize, tau: f64, theta: f64| Layer {
            weights: Matrix::from_fn(i, o, |_, _| rng.gen_range(-0.8..0.8)),
            lif: LifParams::uniform(o, tau, 2e-3, theta, 1e-3),
        };
        NetworkSpec::new(3, vec![layer(3, 4, 4e-3, 1.0), layer(4, 2, 8e-3, f64::INFINITY)]).unwrap()
    }

    #[test]
    fn zero_weights_and_input_give_zero_gradient() {
        let mut net = toy(1);
        for l in &mut net.layers {
            l.weights = Matrix::zeros(l.weights.rows(), l.weights.cols());
        }
        let b = backward_bptt(
            &net,
            &EventRaster::zeros(20, 3, 1e-3),
            0,
            &LossSpec::default(),
            &SurrogateSpec::default(),
        )
        .unwrap();
        assert!(b.grads.iter().all(|g| g.max_abs() == 0.0));
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let net = toy(2);
        let raster = EventRaster::from_rows(&[vec![1, 0, 2], vec![0, 3, 0]], 1e-3).unwrap();
        let data = vec![LabeledRaster { raster, label: 1 }];
        let cfg = TrainConfig {
            epochs: 1,
            adam: AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        assert_eq!(train(&net, &data, &cfg).unwrap().net, net);
    }

    #[test]
    fn calibration_midpoint_rule() {
        // readout v_mem = input weight · event count, so peaks are set by the data
        let layer = Layer {
            weights: Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            lif: LifParams::uniform(2, 1e-3, 1e-3, f64::INFINITY, 1e-3),
        };
        let net = NetworkSpec::new(2, vec![layer]).unwrap();
        let seg = |a: u32, b: u32, label| LabeledRaster {
            raster: EventRaster::from_rows(&[vec![a, b]], 1e-3).unwrap(),
            label,
        };
        let set = vec![seg(2, 1, 0), seg(2, 1, 0), seg(1, 2, 1), seg(1, 2, 1)];
        let cal = calibrate_readout_thresholds(&net, &set).unwrap();
        assert_eq!(cal.thresholds, vec![1.5, 1.5]);
        assert_eq!(cal.warnings(), 0);
    }

    #[test]
    fn untrained_class_takes_warning_path() {
        let layer = Layer {
            weights: Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap(),
            lif: LifParams::uniform(2, 1e-3, 1e-3, f64::INFINITY, 1e-3),
        };
        let net = NetworkSpec::new(2, vec![layer]).unwrap();
        let seg = |a: u32, label| LabeledRaster {
            raster: EventRaster::from_rows(&[vec![a, 1]], 1e-3).unwrap(),
            label,
        };
        let cal = calibrate_readout_thresholds(&net, &[seg(3, 0), seg(1, 1)]).unwrap();
        assert_eq!(cal.rules[1], ThresholdRule::Nominal);
        assert_eq!(cal.thresholds[1], NOMINAL_THRESHOLD);
        assert_eq!(cal.warnings(), 1);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = toy(3);
        let outcome = TrainOutcome {
            optimizer: Adam::new(AdamConfig::default(), &net),
            net,
            loss_curve: vec![1.0, 0.5],
        };
        let ck = Checkpoint::new(&outcome);
        assert_eq!(Checkpoint::from_toml(&ck.to_toml().unwrap()).unwrap(), ck);
    }

    proptest! {
        #[test]
        fn calibration_ignores_sample_order(perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle()) {
            let layer = Layer {
                weights: Matrix::from_vec(2, 2, vec![0.7, -0.2, 0.1, 0.9]).unwrap(),
                lif: LifParams::uniform(2, 2e-3, 2e-3, f64::INFINITY, 1e-3),
            };
            let net = NetworkSpec::new(2, vec![layer]).unwrap();
            let set: Vec<LabeledRaster> = (0..6u32)
                .map(|i| LabeledRaster {
                    raster: EventRaster::from_rows(&[vec![i, 5 - i], vec![i % 2, 1]], 1e-3).unwrap(),
                    label: (i % 2) as usize,
                })
                .collect();
            let shuffled: Vec<LabeledRaster> = perm.iter().map(|&i| set[i].clone()).collect();
            prop_assert_eq!(
                calibrate_readout_thresholds(&net, &set).unwrap(),
                calibrate_readout_thresholds(&net, &shuffled).unwrap()
            );
        }
    }
}
