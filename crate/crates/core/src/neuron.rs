//! Non-leaky integrate-and-fire neurons.
//!
//! Two views of the same neuron live here: the time-stepped simulation
//! (integrate, fire at `V ≥ θ`, reset by subtracting θ on the following step)
//! and the aggregate transfer function that maps the total input current of a
//! whole presentation straight to a spike count.

use crate::encoding::SpikeTrain;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Threshold and simulation window of a population.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronConfig {
    threshold: f64,
    duration: f64,
    dt: f64,
    r_max: u32,
}

impl NeuronConfig {
    /// `duration` (T) and `dt` are in milliseconds; `T/dt` must be a positive
    /// integer, which becomes the maximum spike count `r_max`.
    pub fn new(threshold: f64, duration: f64, dt: f64) -> Result<Self> {
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(Error::Validation(format!(
                "threshold must be positive, got {threshold}"
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Validation(format!("dt must be positive, got {dt}")));
        }
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::Validation(format!(
                "T must be positive, got {duration}"
            )));
        }
        let ratio = duration / dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * steps.max(1.0) || steps > u32::MAX as f64
        {
            return Err(Error::Validation(format!(
                "T={duration} is not a positive integer multiple of dt={dt}"
            )));
        }
        Ok(NeuronConfig {
            threshold,
            duration,
            dt,
            r_max: steps as u32,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Maximum spike count per presentation, `T/dt`.
    pub fn r_max(&self) -> u32 {
        self.r_max
    }

    /// Number of simulation steps; equal to `r_max` since a neuron fires at
    /// most once per step.
    pub fn steps(&self) -> usize {
        self.r_max as usize
    }

    pub fn with_duration(&self, duration: f64) -> Result<Self> {
        NeuronConfig::new(self.threshold, duration, self.dt)
    }
}

/// Membrane state of a population during one presentation.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronState {
    potential: Vec<f64>,
    spiked: Vec<bool>,
    counts: Vec<u32>,
    elapsed: u32,
}

impl NeuronState {
    /// Fresh state with the membrane potential set to the (learnable) bias.
    pub fn new(bias: &[f64]) -> Self {
        NeuronState {
            potential: bias.to_vec(),
            spiked: vec![false; bias.len()],
            counts: vec![0; bias.len()],
            elapsed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.potential.len()
    }

    pub fn is_empty(&self) -> bool {
        self.potential.is_empty()
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    /// Spikes emitted on the most recent step.
    pub fn spikes(&self) -> &[bool] {
        &self.spiked
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn elapsed(&self) -> u32 {
        self.elapsed
    }

    pub fn counts_tensor(&self) -> Tensor {
        Tensor::vector(self.counts.iter().map(|&c| f64::from(c)).collect())
    }

    /// Advances one time step with per-neuron input current `current`:
    /// `V ← V + z − θ·spiked_prev`, then fire wherever `V ≥ θ`.
    pub fn step(&mut self, current: &[f64], cfg: &NeuronConfig) -> Result<()> {
        if current.len() != self.potential.len() {
            return Err(Error::Dimension(format!(
                "{} input currents for {} neurons",
                current.len(),
                self.potential.len()
            )));
        }
        let theta = cfg.threshold;
        for (((v, fired), count), &z) in self
            .potential
            .iter_mut()
            .zip(self.spiked.iter_mut())
            .zip(self.counts.iter_mut())
            .zip(current)
        {
            let reset = if *fired { theta } else { 0.0 };
            *v = *v + z - reset;
            *fired = *v >= theta;
            if *fired {
                *count += 1;
            }
        }
        self.elapsed += 1;
        Ok(())
    }
}

/// Runs one presentation of `currents` (`[steps × N]`, one row per step)
/// from a state initialised at `bias`, returning the spike count per neuron.
pub fn simulate_counts(currents: &Tensor, bias: &Tensor, cfg: &NeuronConfig) -> Result<Tensor> {
    let n = bias.len();
    if currents.rank() != 2 || currents.rows() != cfg.steps() || currents.row_len() != n {
        return Err(Error::Dimension(format!(
            "expected {}×{n} currents, got {:?}",
            cfg.steps(),
            currents.shape()
        )));
    }
    let mut state = NeuronState::new(bias.data());
    for t in 0..cfg.steps() {
        state.step(currents.row(t), cfg)?;
    }
    Ok(state.counts_tensor())
}

/// Spike count for an aggregated current: `min(⌊z/θ⌋·[z>0], r_max)`.
#[inline]
pub fn spike_count(z: f64, threshold: f64, r_max: u32) -> f64 {
    if z > 0.0 {
        (z / threshold).floor().min(f64::from(r_max))
    } else {
        0.0
    }
}

/// Surrogate derivative of [`spike_count`]: `(1/θ)·[z>0]`.
#[inline]
pub fn spike_count_grad(z: f64, threshold: f64) -> f64 {
    if z > 0.0 {
        1.0 / threshold
    } else {
        0.0
    }
}

/// Differentiable stand-in for [`spike_count`] sharing its surrogate
/// derivative: `(z/θ)·[z>0]`, with neither floor nor clamp. Used to check the
/// backward pass against finite differences.
#[inline]
pub fn relaxed_count(z: f64, threshold: f64) -> f64 {
    if z > 0.0 {
        z / threshold
    } else {
        0.0
    }
}

pub fn transfer(z: &Tensor, cfg: &NeuronConfig) -> Tensor {
    z.map(|v| spike_count(v, cfg.threshold, cfg.r_max))
}

pub fn transfer_grad(z: &Tensor, cfg: &NeuronConfig) -> Tensor {
    z.map(|v| spike_count_grad(v, cfg.threshold))
}

/// Per-neuron spike totals over the time axis.
pub fn count_spikes(train: &SpikeTrain) -> Tensor {
    let mut counts = vec![0.0; train.neurons()];
    for t in 0..train.steps() {
        for (c, &s) in counts.iter_mut().zip(train.row(t)) {
            *c += f64::from(s);
        }
    }
    Tensor::vector(counts)
}
