//! Float-domain leaky integrate-and-fire dynamics.
//!
//! One step, per neuron, with `α = 1 − dt/τ_syn` and `β = 1 − dt/τ_mem`:
//!
//! ```text
//! i_syn ← α·i_syn + x          (decay, then inject weighted input)
//! v_mem ← β·v_mem + i_syn + b  (decay, then integrate synaptic state)
//! n     ← ⌊max(v_mem, 0)/θ⌋    (multi-spike)
//! v_mem ← v_mem − n·θ          (subtraction reset)
//! ```
//!
//! The synaptic state is added to the membrane with unit coupling so this
//! model lines up term for term with the integer core in [`crate::xylo`].

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    /// Synaptic time constants, seconds.
    pub tau_syn: Vec<f64>,
    /// Membrane time constants, seconds.
    pub tau_mem: Vec<f64>,
    /// Spiking thresholds. `inf` disables spiking.
    pub threshold: Vec<f64>,
    pub bias: Vec<f64>,
    /// Simulation step, seconds.
    pub dt: f64,
    /// Optional per-step spike cap. `None` means unbounded multi-spike.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_spikes: Option<u32>,
}

impl LifParams {
    /// `n` identical neurons.
    pub fn uniform(n: usize, tau_syn: f64, tau_mem: f64, threshold: f64, dt: f64) -> Self {
        Self {
            tau_syn: vec![tau_syn; n],
            tau_mem: vec![tau_mem; n],
            threshold: vec![threshold; n],
            bias: vec![0.0; n],
            dt,
            max_spikes: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tau_syn.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau_syn.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tau_syn.len();
        check_len("tau_mem", n, self.tau_mem.len())?;
        check_len("threshold", n, self.threshold.len())?;
        check_len("bias", n, self.bias.len())?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        for i in 0..n {
            let (ts, tm) = (self.tau_syn[i], self.tau_mem[i]);
            if !(ts.is_finite() && ts >= self.dt) || !(tm.is_finite() && tm >= self.dt) {
                return Err(Error::invalid(format!(
                    "neuron {i}: time constants (tau_syn={ts}, tau_mem={tm}) must be >= dt={}",
                    self.dt
                )));
            }
            // NaN fails the comparison as well
            if !(self.threshold[i] > 0.0) {
                return Err(Error::invalid(format!(
                    "neuron {i}: threshold must be > 0, got {}",
                    self.threshold[i]
                )));
            }
            if !self.bias[i].is_finite() {
                return Err(Error::NonFinite(format!("bias of neuron {i}")));
            }
        }
        Ok(())
    }

    /// Precomputes the per-step decay factors.
    pub fn kernel(&self) -> LifKernel {
        LifKernel {
            alpha: self.tau_syn.iter().map(|t| 1.0 - self.dt / t).collect(),
            beta: self.tau_mem.iter().map(|t| 1.0 - self.dt / t).collect(),
            threshold: self.threshold.clone(),
            bias: self.bias.clone(),
            max_spikes: self.max_spikes.map(f64::from),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LifState {
    pub i_syn: Vec<f64>,
    pub v_mem: Vec<f64>,
}

impl LifState {
    pub fn zeros(n: usize) -> Self {
        Self {
            i_syn: vec![0.0; n],
            v_mem: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.i_syn.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i_syn.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.i_syn.iter().chain(&self.v_mem).all(|x| x.is_finite())
    }

    /// Advances one step and returns the spike count of every neuron.
    pub fn step(&mut self, input: &[f64], params: &LifParams) -> Result<Vec<u64>> {
        params.validate()?;
        check_len("lif state", params.len(), self.len())?;
        check_len("lif input", params.len(), input.len())?;
        if let Some(i) = input.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("input current of neuron {i}")));
        }
        let mut spikes = vec![0.0; self.len()];
        params.kernel().step(self, input, &mut spikes);
        Ok(spikes.into_iter().map(|s| s as u64).collect())
    }
}

/// Spike count for membrane value `v` against threshold `theta`.
#[inline]
pub fn spike_count(v: f64, theta: f64) -> f64 {
    if v >= theta {
        (v / theta).floor()
    } else {
        0.0
    }
}

/// Unchecked per-step kernel used by the simulators and the trainer.
#[derive(Clone, Debug)]
pub struct LifKernel {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub threshold: Vec<f64>,
    pub bias: Vec<f64>,
    pub max_spikes: Option<f64>,
}

impl LifKernel {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    #[inline]
    pub fn step(&self, state: &mut LifState, input: &[f64], spikes: &mut [f64]) {
        let n = self.alpha.len();
        for k in 0..n {
            let i = self.alpha[k] * state.i_syn[k] + input[k];
            let v = self.beta[k] * state.v_mem[k] + i + self.bias[k];
            let theta = self.threshold[k];
            let mut s = spike_count(v, theta);
            if let Some(cap) = self.max_spikes {
                s = s.min(cap);
            }
            state.i_syn[k] = i;
            state.v_mem[k] = if s > 0.0 { v - s * theta } else { v };
            spikes[k] = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one(tau_syn: f64, tau_mem: f64, theta: f64) -> LifParams {
        LifParams::uniform(1, tau_syn, tau_mem, theta, 1e-3)
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let p = one(4e-3, 2e-3, 1.0);
        let mut s = LifState::zeros(1);
        for _ in 0..10 {
            assert_eq!(s.step(&[0.0], &p).unwrap(), vec![0]);
        }
        assert_eq!(s, LifState::zeros(1));
    }

    #[test]
    fn constant_input_relaxes_to_steady_state() {
        // i* solves i = α i + x  =>  i* = x τ/dt; normalising by τ/dt gives the
        // ODE steady state x.
        let tau = 16e-3;
        let p = one(tau, 2e-3, f64::INFINITY);
        let x = 0.7;
        let gain = tau / p.dt;
        let mut s = LifState::zeros(1);
        let steps = (10.0 * tau / p.dt) as usize;
        for _ in 0..steps {
            s.step(&[x / gain], &p).unwrap();
        }
        assert!((s.i_syn[0] - x).abs() < 0.01 * x, "i_syn = {}", s.i_syn[0]);
    }

    #[test]
    fn multi_spike_with_subtraction_reset() {
        // beta = 0 (tau_mem = dt) so v is exactly the injected current
        let p = one(1e-3, 1e-3, 2.0);
        let mut s = LifState::zeros(1);
        let spikes = s.step(&[5.0], &p).unwrap();
        assert_eq!(spikes, vec![2]);
        assert_eq!(s.v_mem[0], 1.0);
    }

    #[test]
    fn spike_cap_is_optional() {
        let mut p = one(1e-3, 1e-3, 1.0);
        let mut s = LifState::zeros(1);
        assert_eq!(s.step(&[100.0], &p).unwrap(), vec![100]);
        p.max_spikes = Some(31);
        let mut s = LifState::zeros(1);
        assert_eq!(s.step(&[100.0], &p).unwrap(), vec![31]);
        assert_eq!(s.v_mem[0], 69.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = one(2e-3, 2e-3, 1.0);
        let mut s = LifState::zeros(1);
        assert!(matches!(s.step(&[f64::NAN], &p), Err(Error::NonFinite(_))));
        assert!(matches!(s.step(&[0.0, 1.0], &p), Err(Error::Shape { .. })));
        assert!(one(0.5e-3, 2e-3, 1.0).validate().is_err());
        assert!(one(2e-3, 2e-3, 0.0).validate().is_err());
        assert!(one(2e-3, 2e-3, f64::NAN).validate().is_err());
    }

    #[test]
    fn free_decay_is_exactly_geometric() {
        let p = LifParams::uniform(3, 8e-3, 4e-3, f64::INFINITY, 1e-3);
        let k = p.kernel();
        let mut s = LifState {
            i_syn: vec![1.0, -3.5, 0.25],
            v_mem: vec![0.0; 3],
        };
        let i0 = s.i_syn.clone();
        let mut spikes = vec![0.0; 3];
        let mut expected = i0.clone();
        for _ in 0..50 {
            k.step(&mut s, &[0.0; 3], &mut spikes);
            for (e, a) in expected.iter_mut().zip(&k.alpha) {
                *e *= a;
            }
            assert_eq!(s.i_syn, expected);
        }
        let closed: Vec<f64> = i0.iter().map(|i| i * k.alpha[0].powi(50)).collect();
        for (a, b) in s.i_syn.iter().zip(&closed) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    proptest! {
        // Dyadic inputs keep every operation exact, so charge conservation
        // holds with `==`.
        #[test]
        fn reset_removes_exactly_theta_per_spike(
            inputs in proptest::collection::vec(-64i32..256, 1..40),
            theta_exp in -2i32..4,
        ) {
            let theta = 2f64.powi(theta_exp);
            let p = one(2e-3, 2e-3, theta);
            let k = p.kernel();
            let mut s = LifState::zeros(1);
            let mut spikes = [0.0];
            for x in inputs {
                let x = f64::from(x) / 8.0;
                let pre = k.beta[0] * s.v_mem[0] + (k.alpha[0] * s.i_syn[0] + x);
                k.step(&mut s, &[x], &mut spikes);
                prop_assert_eq!(pre - s.v_mem[0], spikes[0] * theta);
                prop_assert!(s.v_mem[0] < theta);
            }
        }

        #[test]
        fn subthreshold_free_decay_is_monotone(i0 in -10.0f64..10.0, v0 in -10.0f64..0.9) {
            let p = one(32e-3, 2e-3, 1.0);
            let k = p.kernel();
            let mut s = LifState { i_syn: vec![i0], v_mem: vec![v0] };
            let mut spikes = [0.0];
            let mut last = i0.abs();
            for _ in 0..200 {
                k.step(&mut s, &[0.0], &mut spikes);
                prop_assert!(s.i_syn[0].abs() <= last);
                prop_assert!(s.is_finite());
                last = s.i_syn[0].abs();
            }
        }
    }
}
