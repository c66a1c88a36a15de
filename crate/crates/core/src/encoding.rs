//! Input encoding: min–max feature scaling, Bernoulli-per-step Poisson spike
//! trains, and the deterministic intensity-to-count path.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary spike occupancy, `steps × neurons`, row-major by step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeTrain {
    steps: usize,
    neurons: usize,
    spikes: Vec<u8>,
}

impl SpikeTrain {
    pub fn new(steps: usize, neurons: usize, spikes: Vec<u8>) -> Result<Self> {
        if spikes.len() != steps * neurons {
            return Err(Error::Dimension(format!(
                "{} entries for a {steps}×{neurons} spike train",
                spikes.len()
            )));
        }
        if spikes.iter().any(|&s| s > 1) {
            return Err(Error::Domain("spike entries must be 0 or 1".into()));
        }
        Ok(SpikeTrain {
            steps,
            neurons,
            spikes,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn row(&self, step: usize) -> &[u8] {
        &self.spikes[step * self.neurons..(step + 1) * self.neurons]
    }

    pub fn get(&self, step: usize, neuron: usize) -> bool {
        self.spikes[step * self.neurons + neuron] == 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// Stochastic spike trains, resampled for every presentation.
    Poisson,
    /// Deterministic counts `value·rate·r_max`, no sampling.
    Intensity,
}

impl InputMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            InputMode::Poisson => "poisson",
            InputMode::Intensity => "intensity",
        }
    }
}

/// Per-feature minimum and maximum, fitted on training rows only.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureScaling {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureScaling {
    /// Fits on a `[rows × features]` tensor.
    pub fn fit(features: &Tensor) -> Result<Self> {
        if features.rank() != 2 || features.rows() == 0 {
            return Err(Error::Dimension(format!(
                "cannot fit scaling on {:?}",
                features.shape()
            )));
        }
        let cols = features.row_len();
        let mut min = vec![f64::INFINITY; cols];
        let mut max = vec![f64::NEG_INFINITY; cols];
        for r in 0..features.rows() {
            for ((lo, hi), &x) in min.iter_mut().zip(max.iter_mut()).zip(features.row(r)) {
                *lo = lo.min(x);
                *hi = hi.max(x);
            }
        }
        Ok(FeatureScaling { min, max })
    }

    /// The identity map on `[0,1]` for `n` features (already-normalized data).
    pub fn unit(n: usize) -> Self {
        FeatureScaling {
            min: vec![0.0; n],
            max: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    pub fn apply(&self, raw: &Tensor) -> Result<Tensor> {
        normalize_features(raw, &self.min, &self.max)
    }
}

/// `(x − min)/(max − min)` per feature, clamped to `[0,1]`; features with
/// `max == min` map to 0. `raw` is `[rows × features]` or a single row.
pub fn normalize_features(raw: &Tensor, min: &[f64], max: &[f64]) -> Result<Tensor> {
    let cols = if raw.rank() == 1 { raw.len() } else { raw.row_len() };
    if min.len() != cols || max.len() != cols {
        return Err(Error::Dimension(format!(
            "{cols} features but scaling for {}/{}",
            min.len(),
            max.len()
        )));
    }
    let mut out = raw.clone();
    for row in out.data_mut().chunks_exact_mut(cols.max(1)) {
        for ((x, &lo), &hi) in row.iter_mut().zip(min).zip(max) {
            let span = hi - lo;
            *x = if span > 0.0 {
                ((*x - lo) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
    Ok(out)
}

fn check_unit_interval(values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::Domain(format!("input value {v} outside [0,1]"))),
        None => Ok(()),
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the spike trains of one sample in one pass over the data.
pub fn sample_seed(run_seed: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(mix64(run_seed) ^ stream) ^ index)
}

/// Bernoulli acceptance threshold on a `u32` draw for probability `p`.
#[inline]
fn spike_threshold(p: f64) -> u64 {
    (p * 4_294_967_296.0).round() as u64
}

/// Independent Bernoulli draw per neuron per step with `p = rate·value`.
///
/// Draws are consumed step-major (all neurons of step 0, then step 1, ...),
/// the same order [`poisson_counts`] uses.
pub fn poisson_encode(values: &[f64], steps: usize, rate: f64, seed: u64) -> Result<SpikeTrain> {
    check_unit_interval(values)?;
    let thresholds: Vec<u64> = values.iter().map(|&v| spike_threshold(rate * v)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spikes = Vec::with_capacity(steps * values.len());
    for _ in 0..steps {
        for &thr in &thresholds {
            spikes.push(u8::from(u64::from(rng.next_u32()) < thr));
        }
    }
    SpikeTrain::new(steps, values.len(), spikes)
}

/// Spike counts of [`poisson_encode`] for the same arguments, written into
/// `out` without materialising the train.
pub fn poisson_counts(
    values: &[f64],
    steps: usize,
    rate: f64,
    seed: u64,
    out: &mut [f64],
) -> Result<()> {
    check_unit_interval(values)?;
    if out.len() != values.len() {
        return Err(Error::Dimension(format!(
            "{} outputs for {} inputs",
            out.len(),
            values.len()
        )));
    }
    let thresholds: Vec<u64> = values.iter().map(|&v| spike_threshold(rate * v)).collect();
    let mut counts = vec![0u32; values.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..steps {
        for (c, &thr) in counts.iter_mut().zip(&thresholds) {
            *c += u32::from(u64::from(rng.next_u32()) < thr);
        }
    }
    for (o, c) in out.iter_mut().zip(counts) {
        *o = f64::from(c);
    }
    Ok(())
}

/// Deterministic input counts `value·r_max` (real-valued, not rounded).
pub fn intensity_to_counts(values: &Tensor, r_max: u32) -> Result<Tensor> {
    check_unit_interval(values.data())?;
    let r = f64::from(r_max);
    Ok(values.map(|v| v * r))
}

/// Turns normalized feature rows into first-layer spike counts or trains.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputEncoder {
    pub mode: InputMode,
    pub steps: usize,
    /// Spike probability per step for a feature value of 1.0.
    pub rate: f64,
}

impl InputEncoder {
    pub fn new(mode: InputMode, steps: usize, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(Error::Validation(format!(
                "input rate must lie in (0,1], got {rate}"
            )));
        }
        Ok(InputEncoder { mode, steps, rate })
    }

    /// Writes the input spike counts for one sample into `out`.
    pub fn encode_counts(&self, values: &[f64], seed: u64, out: &mut [f64]) -> Result<()> {
        match self.mode {
            InputMode::Poisson => poisson_counts(values, self.steps, self.rate, seed, out),
            InputMode::Intensity => {
                check_unit_interval(values)?;
                let scale = self.rate * self.steps as f64;
                for (o, &v) in out.iter_mut().zip(values) {
                    *o = v * scale;
                }
                Ok(())
            }
        }
    }

    /// Per-step input for the time-stepped simulator, `[steps × N]`.
    ///
    /// Poisson mode yields 0/1 spikes; intensity mode injects the constant
    /// fraction `rate·value` on every step, so each row sums to the same
    /// total as [`InputEncoder::encode_counts`].
    pub fn encode_steps(&self, values: &[f64], seed: u64) -> Result<Tensor> {
        match self.mode {
            InputMode::Poisson => {
                let train = poisson_encode(values, self.steps, self.rate, seed)?;
                Tensor::new(
                    vec![self.steps, values.len()],
                    train.spikes.iter().map(|&s| f64::from(s)).collect(),
                )
            }
            InputMode::Intensity => {
                check_unit_interval(values)?;
                let row: Vec<f64> = values.iter().map(|&v| v * self.rate).collect();
                let mut data = Vec::with_capacity(self.steps * values.len());
                for _ in 0..self.steps {
                    data.extend_from_slice(&row);
                }
                Tensor::new(vec![self.steps, values.len()], data)
            }
        }
    }
}
