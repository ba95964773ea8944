//! Per-channel post-training quantization of a placed network.
//!
//! Every neuron gets its own scale `s = 128 / max|incoming weight|`. Its
//! incoming weights, threshold and bias are multiplied by `s` and rounded
//! half away from zero, so the largest incoming weight lands exactly on ±128.
//! Time constants become shift amounts `dash = round(log2(τ/dt))`.

use crate::error::{Error, Result};
use crate::lif::LifParams;
use crate::mapper::{HardwareLimits, MappedSpec};
use crate::matrix::Matrix;

/// Dense integer weight matrix, `rows × cols`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i16>,
}

impl IntMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> i16 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: i16) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[i16] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row(r).iter().filter(|w| **w != 0).count()
    }

    /// Nonzero entries as `(row, col, value)` in row-major order.
    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, usize, i16)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0)
            .map(move |(i, &w)| (i / self.cols, i % self.cols, w))
    }

    pub fn max_abs(&self) -> i16 {
        self.data.iter().map(|w| w.abs()).max().unwrap_or(0)
    }
}

/// Integer parameters of one hardware neuron.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IntNeuron {
    pub dash_syn: u8,
    pub dash_mem: u8,
    pub threshold: i32,
    pub bias: i32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedSpec {
    pub dt: f64,
    pub w_in: IntMatrix,
    pub w_rec: IntMatrix,
    pub w_out: IntMatrix,
    pub hidden: Vec<IntNeuron>,
    pub readout: Vec<IntNeuron>,
}

impl QuantizedSpec {
    pub fn n_input(&self) -> usize {
        self.w_in.rows()
    }

    pub fn n_hidden(&self) -> usize {
        self.w_rec.rows()
    }

    pub fn n_readout(&self) -> usize {
        self.w_out.cols()
    }
}

/// Shift amount approximating decay with time constant `tau` at step `dt`.
pub fn tau_to_dash(tau: f64, dt: f64) -> Result<u8> {
    if !(tau.is_finite() && dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid(format!("tau={tau}, dt={dt} must be finite and positive")));
    }
    if tau < dt {
        return Err(Error::invalid(format!("tau={tau} is shorter than dt={dt}")));
    }
    let dash = (tau / dt).log2().round().max(0.0);
    if dash > 15.0 {
        return Err(Error::invalid(format!(
            "tau={tau} needs a shift of {dash}, beyond the 16-bit state"
        )));
    }
    Ok(dash as u8)
}

/// Per-neuron scales `(hidden, readout)`: `128 / max|incoming|`, or 1 for a
/// neuron with no nonzero input. A neuron whose threshold would then exceed
/// the state range is scaled down so the threshold lands on the largest
/// state instead, and its weights use fewer than 128 levels.
pub fn channel_scales(spec: &MappedSpec) -> (Vec<f64>, Vec<f64>) {
    let limits = HardwareLimits::default();
    let target = limits.weight_max() as f64;
    let (hidden, readout) = references(spec, &limits);
    let to_scale = |refs: Vec<f64>| refs.into_iter().map(|m| if m > 0.0 { target / m } else { 1.0 }).collect();
    (to_scale(hidden), to_scale(readout))
}

/// The value each neuron's parameters are divided by before multiplying by
/// 128: the largest incoming weight, raised where needed so the threshold
/// fits the state range.
fn references(spec: &MappedSpec, limits: &HardwareLimits) -> (Vec<f64>, Vec<f64>) {
    let target = limits.weight_max() as f64;
    let hi = limits.state_max() as f64;
    let fit = |col_max: Vec<f64>, params: &LifParams, population: &str| -> Vec<f64> {
        col_max
            .into_iter()
            .zip(&params.threshold)
            .enumerate()
            .map(|(i, (m, &theta))| {
                let needed = theta * target / hi;
                if m > 0.0 && theta.is_finite() && (theta / m * target).round() > hi {
                    log::warn!(
                        "{population} neuron {i}: threshold {theta} is too large for incoming weights up to {m}; \
                         weights keep {:.1} of 128 levels",
                        m / needed * target
                    );
                    needed
                } else {
                    m
                }
            })
            .collect()
    };
    (
        fit(column_max_abs(&[&spec.w_in, &spec.w_rec], spec.n_hidden()), &spec.hidden, "hidden"),
        fit(column_max_abs(&[&spec.w_out], spec.n_readout()), &spec.readout, "readout"),
    )
}

fn column_max_abs(mats: &[&Matrix], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; cols];
    for m in mats {
        for r in 0..m.rows() {
            for (o, w) in out.iter_mut().zip(m.row(r)) {
                *o = o.max(w.abs());
            }
        }
    }
    out
}

/// `value / max_abs · 128`, rounded half away from zero.
///
/// Dividing by the reference first makes the result depend only on the
/// ratio, so jointly rescaling a neuron's inputs and threshold cannot change
/// it, and the maximum itself maps to exactly 128.
fn scaled(value: f64, max_abs: f64, target: f64) -> f64 {
    if max_abs > 0.0 {
        (value / max_abs * target).round()
    } else {
        value.round()
    }
}

pub fn channel_quantize(spec: &MappedSpec) -> Result<QuantizedSpec> {
    spec.validate()?;
    let limits = HardwareLimits::default();
    let target = limits.weight_max() as f64;
    let (hidden_max, readout_max) = references(spec, &limits);

    let quantize_matrix = |m: &Matrix, col_max: &[f64]| {
        let mut q = IntMatrix::zeros(m.rows(), m.cols());
        for r in 0..m.rows() {
            for (c, &w) in m.row(r).iter().enumerate() {
                q.set(r, c, scaled(w, col_max[c], target) as i16);
            }
        }
        q
    };

    Ok(QuantizedSpec {
        dt: spec.dt,
        w_in: quantize_matrix(&spec.w_in, &hidden_max),
        w_rec: quantize_matrix(&spec.w_rec, &hidden_max),
        w_out: quantize_matrix(&spec.w_out, &readout_max),
        hidden: quantize_neurons(&spec.hidden, &hidden_max, "hidden", &limits)?,
        readout: quantize_neurons(&spec.readout, &readout_max, "readout", &limits)?,
    })
}

fn quantize_neurons(
    params: &LifParams,
    col_max: &[f64],
    population: &str,
    limits: &HardwareLimits,
) -> Result<Vec<IntNeuron>> {
    let target = limits.weight_max() as f64;
    let (lo, hi) = (limits.state_min() as f64, limits.state_max() as f64);
    (0..params.len())
        .map(|i| {
            let theta = scaled(params.threshold[i], col_max[i], target);
            if !theta.is_finite() || theta > hi {
                return Err(Error::invalid(format!(
                    "{population} neuron {i}: threshold {} cannot be quantized (was the readout calibrated?)",
                    params.threshold[i]
                )));
            }
            if theta < 1.0 {
                return Err(Error::invalid(format!(
                    "{population} neuron {i}: threshold {} rounds to zero",
                    params.threshold[i]
                )));
            }
            let bias = scaled(params.bias[i], col_max[i], target);
            if !(lo..=hi).contains(&bias) {
                return Err(Error::invalid(format!(
                    "{population} neuron {i}: quantized bias {bias} out of range"
                )));
            }
            Ok(IntNeuron {
                dash_syn: tau_to_dash(params.tau_syn[i], params.dt)?,
                dash_mem: tau_to_dash(params.tau_mem[i], params.dt)?,
                threshold: theta as i32,
                bias: bias as i32,
            })
        })
        .collect()
}
