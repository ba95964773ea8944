//! Bit-exact integer model of the digital LIF core.
//!
//! States are signed 16-bit and saturate. Exponential decay is approximated
//! by a shift: `v ← v − (v >> dash)`, with a forced decrement of one when the
//! shift alone would leave the value unchanged. Each neuron emits at most
//! `max_spikes_per_step` events per step.
//!
//! Step schedule for the whole core:
//!
//! 1. hidden input = `w_inᵀ·events(t) + w_recᵀ·hidden_spikes(t−1)`
//! 2. step every hidden neuron
//! 3. readout input = `w_outᵀ·hidden_spikes(t)`
//! 4. step every readout neuron

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mapper::{HardwareLimits, Rule, Violation};
use crate::quantizer::{IntMatrix, IntNeuron, QuantizedSpec};
use crate::raster::{EventRaster, FRONTEND_EVENT_CAP};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Behaviour of [`bitshift_decay_with`] at zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DecayMode {
    /// Zero stays zero.
    #[default]
    ZeroFixedPoint,
    /// The literal rule, under which `0` decays to `−1`.
    StrictListing,
}

/// One decay step with the default zero handling.
#[inline]
pub fn bitshift_decay(value: i16, dash: u8) -> i16 {
    bitshift_decay_with(value, dash, DecayMode::ZeroFixedPoint)
}

#[inline]
pub fn bitshift_decay_with(value: i16, dash: u8, mode: DecayMode) -> i16 {
    if value == 0 && mode == DecayMode::ZeroFixedPoint {
        return 0;
    }
    let v = i32::from(value);
    let mut next = v - (v >> dash.min(31));
    if next == v {
        next -= 1;
    }
    next as i16
}

#[inline]
pub fn sat16(x: i32) -> i16 {
    x.clamp(i32::from(i16::MIN), i32::from(i16::MAX)) as i16
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct IntNeuronState {
    pub i_syn: i16,
    pub v_mem: i16,
}

/// Advances one neuron by one step and returns its spike count.
#[inline]
pub fn int_neuron_step(
    state: &mut IntNeuronState,
    weighted_input: i32,
    params: &IntNeuron,
    max_spikes: u8,
    mode: DecayMode,
) -> u8 {
    let i = bitshift_decay_with(state.i_syn, params.dash_syn, mode);
    let i = sat16(i32::from(i) + weighted_input);
    let v = bitshift_decay_with(state.v_mem, params.dash_mem, mode);
    let mut v = i32::from(sat16(i32::from(v) + i32::from(i) + params.bias));
    let theta = params.threshold;
    let mut n = 0;
    if v >= theta {
        n = (v / theta).min(i32::from(max_spikes));
        v -= n * theta;
    }
    state.i_syn = i;
    state.v_mem = v as i16;
    n as u8
}

/// A deployable integer configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct HardwareConfig {
    pub spec: QuantizedSpec,
    pub limits: HardwareLimits,
    pub max_spikes_per_step: u8,
}

impl HardwareConfig {
    /// Wraps a quantized spec for the default target, rejecting anything the
    /// target cannot hold.
    pub fn new(spec: QuantizedSpec) -> Result<Self> {
        let limits = HardwareLimits::default();
        let cfg = Self {
            spec,
            max_spikes_per_step: limits.max_spikes_per_step as u8,
            limits,
        };
        let v = cfg.check();
        if v.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Drc(v))
        }
    }

    pub fn n_input(&self) -> usize {
        self.spec.n_input()
    }

    pub fn n_hidden(&self) -> usize {
        self.spec.n_hidden()
    }

    pub fn n_readout(&self) -> usize {
        self.spec.n_readout()
    }

    /// Every way this configuration exceeds its limits.
    pub fn check(&self) -> Vec<Violation> {
        let l = &self.limits;
        let s = &self.spec;
        let mut out = Vec::new();
        let mut push = |rule, node: String, measured: i64, allowed: i64| {
            out.push(Violation {
                rule,
                node,
                measured,
                allowed,
            })
        };
        if s.n_hidden() > l.max_hidden_neurons {
            push(Rule::HiddenCount, "hidden".into(), s.n_hidden() as i64, l.max_hidden_neurons as i64);
        }
        if s.n_input() > l.n_input_channels {
            push(Rule::InputChannels, "input".into(), s.n_input() as i64, l.n_input_channels as i64);
        }
        if s.n_readout() > l.n_output_neurons {
            push(Rule::OutputNeurons, "readout".into(), s.n_readout() as i64, l.n_output_neurons as i64);
        }
        for r in 0..s.n_hidden() {
            let nnz = s.w_rec.row_nnz(r);
            if nnz > l.max_fanout_per_hidden {
                push(Rule::FanOut, format!("hidden {r}"), nnz as i64, l.max_fanout_per_hidden as i64);
            }
        }
        let wmax = l.weight_max();
        for (name, m) in [("w_in", &s.w_in), ("w_rec", &s.w_rec), ("w_out", &s.w_out)] {
            let worst = i64::from(m.max_abs());
            if worst > wmax {
                push(Rule::WeightRange, name.into(), worst, wmax);
            }
        }
        let max_dash = i64::from(l.state_bits) - 1;
        for (pop, neurons) in [("hidden", &s.hidden), ("readout", &s.readout)] {
            for (i, n) in neurons.iter().enumerate() {
                let t = i64::from(n.threshold);
                if !(1..=l.state_max()).contains(&t) {
                    push(Rule::StateRange, format!("{pop} {i} threshold"), t, l.state_max());
                }
                let b = i64::from(n.bias);
                if !(l.state_min()..=l.state_max()).contains(&b) {
                    push(Rule::StateRange, format!("{pop} {i} bias"), b, l.state_max());
                }
                for d in [n.dash_syn, n.dash_mem] {
                    if i64::from(d) > max_dash {
                        push(Rule::StateRange, format!("{pop} {i} dash"), i64::from(d), max_dash);
                    }
                }
            }
        }
        if u32::from(self.max_spikes_per_step) > l.max_spikes_per_step {
            push(
                Rule::SpikeCap,
                "max_spikes_per_step".into(),
                i64::from(self.max_spikes_per_step),
                i64::from(l.max_spikes_per_step),
            );
        }
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&ConfigFile::from(self))
            .map_err(|e| Error::Runtime(format!("serializing hardware config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        file.into_config()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Drc(v) => Error::Drc(v),
            other => Error::Format {
                path: path.into(),
                msg: other.to_string(),
            },
        })
    }
}

// On-disk layout: [meta], [limits], [weights.in|rec|out] coordinate lists,
// [neurons] rows of `id, dash_syn, dash_mem, threshold, bias`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    version: u32,
    meta: MetaSection,
    limits: HardwareLimits,
    weights: WeightsSection,
    neurons: NeuronsSection,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaSection {
    dt: f64,
    n_input: usize,
    n_hidden: usize,
    n_readout: usize,
    max_spikes_per_step: i64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsSection {
    #[serde(rename = "in")]
    input: Entries,
    rec: Entries,
    out: Entries,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entries {
    entries: Vec<[i64; 3]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NeuronsSection {
    hidden: Vec<[i64; 5]>,
    readout: Vec<[i64; 5]>,
}

impl From<&HardwareConfig> for ConfigFile {
    fn from(cfg: &HardwareConfig) -> Self {
        let s = &cfg.spec;
        let entries = |m: &IntMatrix| Entries {
            entries: m
                .nonzeros()
                .map(|(r, c, w)| [r as i64, c as i64, i64::from(w)])
                .collect(),
        };
        let rows = |ns: &[IntNeuron]| {
            ns.iter()
                .enumerate()
                .map(|(i, n)| {
                    [
                        i as i64,
                        i64::from(n.dash_syn),
                        i64::from(n.dash_mem),
                        i64::from(n.threshold),
                        i64::from(n.bias),
                    ]
                })
                .collect()
        };
        ConfigFile {
            version: CONFIG_SCHEMA_VERSION,
            meta: MetaSection {
                dt: s.dt,
                n_input: s.n_input(),
                n_hidden: s.n_hidden(),
                n_readout: s.n_readout(),
                max_spikes_per_step: i64::from(cfg.max_spikes_per_step),
            },
            limits: cfg.limits,
            weights: WeightsSection {
                input: entries(&s.w_in),
                rec: entries(&s.w_rec),
                out: entries(&s.w_out),
            },
            neurons: NeuronsSection {
                hidden: rows(&s.hidden),
                readout: rows(&s.readout),
            },
        }
    }
}

impl ConfigFile {
    fn into_config(self) -> Result<HardwareConfig> {
        if self.version != CONFIG_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.version,
                expected: CONFIG_SCHEMA_VERSION,
            });
        }
        let limits = HardwareLimits::default();
        if self.limits != limits {
            return Err(Error::invalid("[limits] does not describe the supported target"));
        }
        let m = &self.meta;
        if !(m.dt.is_finite() && m.dt > 0.0) {
            return Err(Error::invalid(format!("meta.dt = {} must be positive", m.dt)));
        }
        if m.n_input > limits.n_input_channels
            || m.n_hidden > limits.max_hidden_neurons
            || m.n_readout > limits.n_output_neurons
        {
            return Err(Error::invalid("population sizes exceed the target"));
        }
        let max_spikes = m.max_spikes_per_step;
        if !(0..=i64::from(limits.max_spikes_per_step)).contains(&max_spikes) {
            return Err(Error::invalid(format!("max_spikes_per_step = {max_spikes} out of range")));
        }
        let w_in = read_entries("weights.in", &self.weights.input.entries, m.n_input, m.n_hidden, &limits)?;
        let w_rec = read_entries("weights.rec", &self.weights.rec.entries, m.n_hidden, m.n_hidden, &limits)?;
        let w_out = read_entries("weights.out", &self.weights.out.entries, m.n_hidden, m.n_readout, &limits)?;
        let hidden = read_neurons("neurons.hidden", &self.neurons.hidden, m.n_hidden, &limits)?;
        let readout = read_neurons("neurons.readout", &self.neurons.readout, m.n_readout, &limits)?;
        let cfg = HardwareConfig {
            spec: QuantizedSpec {
                dt: m.dt,
                w_in,
                w_rec,
                w_out,
                hidden,
                readout,
            },
            limits,
            max_spikes_per_step: max_spikes as u8,
        };
        let v = cfg.check();
        if v.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Drc(v))
        }
    }
}

fn read_entries(section: &str, entries: &[[i64; 3]], rows: usize, cols: usize, limits: &HardwareLimits) -> Result<IntMatrix> {
    let mut m = IntMatrix::zeros(rows, cols);
    let mut seen = HashSet::new();
    let wmax = limits.weight_max();
    for &[r, c, w] in entries {
        if r < 0 || c < 0 || r as usize >= rows || c as usize >= cols {
            return Err(Error::invalid(format!("{section}: coordinate ({r}, {c}) outside {rows}×{cols}")));
        }
        if !(-wmax..=wmax).contains(&w) {
            return Err(Error::invalid(format!("{section}: weight {w} at ({r}, {c}) outside ±{wmax}")));
        }
        if !seen.insert((r, c)) {
            return Err(Error::invalid(format!("{section}: duplicate entry ({r}, {c})")));
        }
        m.set(r as usize, c as usize, w as i16);
    }
    Ok(m)
}

fn read_neurons(section: &str, rows: &[[i64; 5]], n: usize, limits: &HardwareLimits) -> Result<Vec<IntNeuron>> {
    check_len("neuron rows", n, rows.len())?;
    let mut out = vec![None; n];
    let max_dash = i64::from(limits.state_bits) - 1;
    for &[id, ds, dm, th, b] in rows {
        if id < 0 || id as usize >= n || out[id as usize].is_some() {
            return Err(Error::invalid(format!("{section}: bad or repeated id {id}")));
        }
        if !(0..=max_dash).contains(&ds) || !(0..=max_dash).contains(&dm) {
            return Err(Error::invalid(format!("{section}: neuron {id} dash outside 0..={max_dash}")));
        }
        if !(1..=limits.state_max()).contains(&th) {
            return Err(Error::invalid(format!("{section}: neuron {id} threshold {th} out of range")));
        }
        if !(limits.state_min()..=limits.state_max()).contains(&b) {
            return Err(Error::invalid(format!("{section}: neuron {id} bias {b} out of range")));
        }
        out[id as usize] = Some(IntNeuron {
            dash_syn: ds as u8,
            dash_mem: dm as u8,
            threshold: th as i32,
            bias: b as i32,
        });
    }
    Ok(out.into_iter().map(|n| n.expect("every id filled")).collect())
}

/// Per-step integer state history.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IntTrace {
    /// `timesteps × n_hidden`.
    pub hidden: Vec<IntNeuronState>,
    pub hidden_spikes: Vec<u8>,
    /// `timesteps × n_readout`.
    pub readout: Vec<IntNeuronState>,
    pub readout_spikes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntSimOutput {
    pub output: EventRaster,
    pub hidden: Vec<IntNeuronState>,
    pub readout: Vec<IntNeuronState>,
    pub trace: Option<IntTrace>,
}

/// Sparse `(target, weight)` lists per source row.
struct Fanout {
    rows: Vec<Vec<(usize, i32)>>,
}

impl Fanout {
    fn new(m: &IntMatrix) -> Self {
        let mut rows = vec![Vec::new(); m.rows()];
        for (r, c, w) in m.nonzeros() {
            rows[r].push((c, i32::from(w)));
        }
        Self { rows }
    }

    #[inline]
    fn scatter(&self, source: usize, count: i32, acc: &mut [i32]) {
        for &(t, w) in &self.rows[source] {
            acc[t] += count * w;
        }
    }
}

/// Streams `input` through the core from the all-zero state.
pub fn simulate_int(config: &HardwareConfig, input: &EventRaster, record: bool) -> Result<IntSimOutput> {
    simulate_int_with(config, input, record, DecayMode::default())
}

pub fn simulate_int_with(config: &HardwareConfig, input: &EventRaster, record: bool, mode: DecayMode) -> Result<IntSimOutput> {
    let s = &config.spec;
    check_len("input raster channels", s.n_input(), input.channels())?;
    input.check_cap(FRONTEND_EVENT_CAP)?;
    let (h, nr) = (s.n_hidden(), s.n_readout());
    let fin = Fanout::new(&s.w_in);
    let frec = Fanout::new(&s.w_rec);
    let fout = Fanout::new(&s.w_out);
    let cap = config.max_spikes_per_step;

    let mut hidden = vec![IntNeuronState::default(); h];
    let mut readout = vec![IntNeuronState::default(); nr];
    let mut prev = vec![0u8; h];
    let mut cur = vec![0u8; h];
    let mut acc = vec![0i32; h];
    let mut racc = vec![0i32; nr];
    let mut out = EventRaster::zeros(input.timesteps(), nr, input.dt());
    let mut trace = record.then(|| IntTrace {
        hidden: Vec::with_capacity(h * input.timesteps()),
        hidden_spikes: Vec::with_capacity(h * input.timesteps()),
        readout: Vec::with_capacity(nr * input.timesteps()),
        readout_spikes: Vec::with_capacity(nr * input.timesteps()),
    });

    for t in 0..input.timesteps() {
        acc.fill(0);
        for (c, &n) in input.row(t).iter().enumerate() {
            if n > 0 {
                fin.scatter(c, n as i32, &mut acc);
            }
        }
        for (src, &n) in prev.iter().enumerate() {
            if n > 0 {
                frec.scatter(src, i32::from(n), &mut acc);
            }
        }
        for k in 0..h {
            cur[k] = int_neuron_step(&mut hidden[k], acc[k], &s.hidden[k], cap, mode);
        }
        racc.fill(0);
        for (src, &n) in cur.iter().enumerate() {
            if n > 0 {
                fout.scatter(src, i32::from(n), &mut racc);
            }
        }
        let row = out.row_mut(t);
        for k in 0..nr {
            row[k] = u32::from(int_neuron_step(&mut readout[k], racc[k], &s.readout[k], cap, mode));
        }
        if let Some(tr) = trace.as_mut() {
            tr.hidden.extend_from_slice(&hidden);
            tr.hidden_spikes.extend_from_slice(&cur);
            tr.readout.extend_from_slice(&readout);
            tr.readout_spikes.extend(row.iter().map(|&n| n as u8));
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(IntSimOutput {
        output: out,
        hidden,
        readout,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn neuron(theta: i32) -> IntNeuron {
        IntNeuron {
            dash_syn: 0,
            dash_mem: 0,
            threshold: theta,
            bias: 0,
        }
    }

    #[test]
    fn decay_examples() {
        assert_eq!(bitshift_decay(256, 4), 240);
        assert_eq!(bitshift_decay(1, 4), 0);
        assert_eq!(bitshift_decay(-16, 4), -15);
        assert_eq!(bitshift_decay(0, 4), 0);
        assert_eq!(bitshift_decay_with(0, 4, DecayMode::StrictListing), -1);
        assert_eq!(bitshift_decay(i16::MIN, 0), 0);
        assert_eq!(bitshift_decay(i16::MAX, 15), i16::MAX - 1);
    }

    #[test]
    fn multi_spike_and_cap() {
        // dash 0 clears both states every step, so v = input exactly
        let mut s = IntNeuronState::default();
        assert_eq!(int_neuron_step(&mut s, 5 * 100 + 37, &neuron(100), 31, DecayMode::default()), 5);
        assert!((0..100).contains(&s.v_mem));
        let mut s = IntNeuronState::default();
        assert_eq!(int_neuron_step(&mut s, 40 * 100, &neuron(100), 31, DecayMode::default()), 31);
        assert_eq!(s.v_mem, 900);
    }

    #[test]
    fn states_saturate() {
        let p = IntNeuron {
            dash_syn: 15,
            dash_mem: 15,
            threshold: 32767,
            bias: 0,
        };
        let mut s = IntNeuronState::default();
        int_neuron_step(&mut s, 40_000, &p, 31, DecayMode::default());
        assert_eq!(s.i_syn, i16::MAX);
        // v = sat(0 + 32767) → exactly one threshold crossing
        assert_eq!(s.v_mem, 0);
        let mut s = IntNeuronState::default();
        int_neuron_step(&mut s, -40_000, &p, 31, DecayMode::default());
        assert_eq!((s.i_syn, s.v_mem), (i16::MIN, i16::MIN));
    }

    fn small_config() -> HardwareConfig {
        let mut w_in = IntMatrix::zeros(2, 3);
        w_in.set(0, 0, 100);
        w_in.set(1, 1, -128);
        let mut w_rec = IntMatrix::zeros(3, 3);
        w_rec.set(0, 2, 90);
        let mut w_out = IntMatrix::zeros(3, 2);
        w_out.set(2, 0, 128);
        w_out.set(0, 1, 5);
        let n = IntNeuron {
            dash_syn: 2,
            dash_mem: 1,
            threshold: 64,
            bias: 0,
        };
        HardwareConfig::new(QuantizedSpec {
            dt: 1e-3,
            w_in,
            w_rec,
            w_out,
            hidden: vec![n; 3],
            readout: vec![n; 2],
        })
        .unwrap()
    }

    #[test]
    fn zero_input_is_silent_and_deterministic() {
        let cfg = small_config();
        let out = simulate_int(&cfg, &EventRaster::zeros(100, 2, 1e-3), true).unwrap();
        assert_eq!(out.output.total(), 0);
        assert!(out.hidden.iter().chain(&out.readout).all(|s| *s == IntNeuronState::default()));
        let mut input = EventRaster::zeros(50, 2, 1e-3);
        for t in (0..50).step_by(3) {
            input.set(t, 0, 7);
        }
        let a = simulate_int(&cfg, &input, true).unwrap();
        let b = simulate_int(&cfg, &input, true).unwrap();
        assert_eq!(a, b);
        assert!(a.output.total() > 0);
    }

    #[test]
    fn recurrent_spikes_arrive_one_step_later() {
        let cfg = small_config();
        let mut input = EventRaster::zeros(4, 2, 1e-3);
        input.set(0, 0, 15);
        let out = simulate_int(&cfg, &input, true).unwrap();
        let tr = out.trace.unwrap();
        assert!(tr.hidden_spikes[0] > 0);
        assert_eq!(tr.hidden[2].i_syn, 0, "hidden 2 untouched at t=0");
        assert!(tr.hidden[3 + 2].i_syn > 0, "hidden 2 driven at t=1");
    }

    #[test]
    fn rejects_bad_rasters() {
        let cfg = small_config();
        assert!(simulate_int(&cfg, &EventRaster::zeros(3, 3, 1e-3), false).is_err());
        let r = EventRaster::from_rows(&[vec![16, 0]], 1e-3).unwrap();
        assert!(simulate_int(&cfg, &r, false).is_err());
    }

    #[test]
    fn config_file_round_trip_and_validation() {
        let cfg = small_config();
        let text = cfg.to_toml().unwrap();
        assert!(text.contains("[weights.rec]"), "{text}");
        assert_eq!(HardwareConfig::from_toml(&text).unwrap(), cfg);

        let bad = text.replace("[0, 0, 100]", "[0, 0, 129]");
        assert!(HardwareConfig::from_toml(&bad).is_err());
        let bad = text.replace("[0, 0, 100]", "[0, 9, 100]");
        assert!(HardwareConfig::from_toml(&bad).is_err());
        let bad = text.replace("max_spikes_per_step = 31\n", "max_spikes_per_step = 32\n");
        assert_ne!(bad, text);
        assert!(HardwareConfig::from_toml(&bad).is_err());
        let bad = text.replace("version = 1", "version = 2");
        assert!(matches!(HardwareConfig::from_toml(&bad), Err(Error::SchemaVersion { .. })));
    }

    #[test]
    fn check_reports_range_and_cap_violations() {
        let mut cfg = small_config();
        cfg.spec.w_in.set(0, 0, 200);
        cfg.spec.hidden[0].threshold = 40_000;
        cfg.max_spikes_per_step = 32;
        let rules: Vec<Rule> = cfg.check().into_iter().map(|v| v.rule).collect();
        assert_eq!(rules, vec![Rule::WeightRange, Rule::StateRange, Rule::SpikeCap]);
    }
}
