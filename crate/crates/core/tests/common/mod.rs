//! Oracles shared by the integration tests. Everything here is written from
//! the model definitions, without calling into the library's simulators.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use xylo_snn::quantizer::{IntMatrix, IntNeuron, QuantizedSpec};
use xylo_snn::raster::EventRaster;
use xylo_snn::xylo::HardwareConfig;

/// Listing-style decay on wide integers with floor division standing in for
/// the arithmetic shift. Zero is a fixed point unless `strict`.
pub fn reference_decay(value: i64, dash: u32, strict: bool) -> i64 {
    if value == 0 && !strict {
        return 0;
    }
    let shifted = value.div_euclid(1i64 << dash);
    let mut new_value = value - shifted;
    if new_value == value {
        new_value -= 1;
    }
    new_value
}

fn clamp16(x: i64) -> i64 {
    x.clamp(-32768, 32767)
}

pub struct RefResult {
    pub output: Vec<Vec<u32>>,
    pub hidden_spikes: Vec<Vec<u32>>,
    pub hidden_state: Vec<(i64, i64)>,
    pub readout_state: Vec<(i64, i64)>,
}

/// Straight-line integer interpreter over dense weights.
pub fn reference_sim(cfg: &HardwareConfig, input: &EventRaster) -> RefResult {
    let s = &cfg.spec;
    let (ni, nh, no) = (s.n_input(), s.n_hidden(), s.n_readout());
    let cap = i64::from(cfg.max_spikes_per_step);
    let mut hs = vec![(0i64, 0i64); nh];
    let mut rs = vec![(0i64, 0i64); no];
    let mut prev = vec![0i64; nh];
    let mut output = Vec::new();
    let mut hidden_spikes = Vec::new();

    let step = |state: &mut (i64, i64), x: i64, p: &IntNeuron| -> i64 {
        let mut i = reference_decay(state.0, u32::from(p.dash_syn), false);
        i = clamp16(i + x);
        let mut v = reference_decay(state.1, u32::from(p.dash_mem), false);
        v = clamp16(v + i + i64::from(p.bias));
        let th = i64::from(p.threshold);
        let mut n = 0;
        while v >= th && n < cap {
            v -= th;
            n += 1;
        }
        *state = (i, v);
        n
    };

    for t in 0..input.timesteps() {
        let mut cur = vec![0i64; nh];
        for j in 0..nh {
            let mut x = 0i64;
            for c in 0..ni {
                x += i64::from(input.get(t, c)) * i64::from(s.w_in.get(c, j));
            }
            for k in 0..nh {
                x += prev[k] * i64::from(s.w_rec.get(k, j));
            }
            cur[j] = step(&mut hs[j], x, &s.hidden[j]);
        }
        let mut row = Vec::with_capacity(no);
        for j in 0..no {
            let mut x = 0i64;
            for k in 0..nh {
                x += cur[k] * i64::from(s.w_out.get(k, j));
            }
            row.push(step(&mut rs[j], x, &s.readout[j]) as u32);
        }
        output.push(row);
        hidden_spikes.push(cur.iter().map(|&n| n as u32).collect());
        prev = cur;
    }
    RefResult {
        output,
        hidden_spikes,
        hidden_state: hs,
        readout_state: rs,
    }
}

fn sparse_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64, max_row_nnz: usize) -> IntMatrix {
    let mut m = IntMatrix::zeros(rows, cols);
    for r in 0..rows {
        let mut nnz = 0;
        for c in 0..cols {
            if nnz < max_row_nnz && rng.gen_bool(density) {
                m.set(r, c, rng.gen_range(-128..=128));
                nnz += 1;
            }
        }
    }
    m
}

fn neurons(rng: &mut ChaCha8Rng, n: usize) -> Vec<IntNeuron> {
    (0..n)
        .map(|_| IntNeuron {
            dash_syn: rng.gen_range(0..=15),
            dash_mem: rng.gen_range(0..=15),
            threshold: if rng.gen_bool(0.2) {
                rng.gen_range(1..=32767)
            } else {
                rng.gen_range(1..=2000)
            },
            bias: if rng.gen_bool(0.3) { rng.gen_range(-200..=200) } else { 0 },
        })
        .collect()
}

/// A random configuration within the hardware limits, at most 128 neurons.
pub fn random_config(rng: &mut ChaCha8Rng) -> HardwareConfig {
    let ni = rng.gen_range(1..=16);
    let no = rng.gen_range(1..=8);
    let nh = rng.gen_range(1..=(128 - no));
    let (d_in, d_rec, d_out) = (rng.gen_range(0.05..0.6), rng.gen_range(0.0..0.4), rng.gen_range(0.1..0.8));
    let spec = QuantizedSpec {
        dt: 1e-3,
        w_in: sparse_matrix(rng, ni, nh, d_in, usize::MAX),
        w_rec: sparse_matrix(rng, nh, nh, d_rec, 32),
        w_out: sparse_matrix(rng, nh, no, d_out, usize::MAX),
        hidden: neurons(rng, nh),
        readout: neurons(rng, no),
    };
    HardwareConfig::new(spec).expect("generated within limits")
}

pub fn random_raster(rng: &mut ChaCha8Rng, steps: usize, channels: usize) -> EventRaster {
    let density = rng.gen_range(0.02..0.5);
    let counts = (0..steps * channels)
        .map(|_| if rng.gen_bool(density) { rng.gen_range(1..=15) } else { 0 })
        .collect();
    EventRaster::from_counts(steps, channels, 1e-3, counts).unwrap()
}
