//! Cross-entropy loss on output spike counts, Adam, and the epoch-level
//! training and evaluation loops.

use serde::{Deserialize, Serialize};

use crate::data;
use crate::encoding::{sample_seed, FeatureScaling, InputEncoder, InputMode};
use crate::error::{Error, Result};
use crate::network::{
    backward_network, forward_network, simulate_network, GradSet, NetworkSpec, ParamSet,
    TransferMode,
};
use crate::neuron::NeuronConfig;
use crate::tensor::Tensor;

/// Encoding stream used when scoring the training split.
pub const TRAIN_EVAL_STREAM: u64 = 1 << 62;
/// Encoding stream used when scoring the test split.
pub const TEST_EVAL_STREAM: u64 = (1 << 62) + 1;

fn check_label(a: &[f64], label: usize) -> Result<()> {
    if label >= a.len() {
        return Err(Error::Domain(format!(
            "label {label} out of range for {} classes",
            a.len()
        )));
    }
    Ok(())
}

fn log_sum_exp(a: &[f64]) -> f64 {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + a.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(a: &[f64]) -> Vec<f64> {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = a.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log Σ_k exp(a_k) − a_label`.
pub fn cross_entropy(a: &[f64], label: usize) -> Result<f64> {
    check_label(a, label)?;
    Ok(log_sum_exp(a) - a[label])
}

/// `softmax(a) − onehot(label)`.
pub fn loss_grad(a: &[f64], label: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; a.len()];
    loss_grad_into(a, label, &mut out)?;
    Ok(out)
}

pub(crate) fn loss_grad_into(a: &[f64], label: usize, out: &mut [f64]) -> Result<()> {
    check_label(a, label)?;
    for (o, p) in out.iter_mut().zip(softmax(a)) {
        *o = p;
    }
    out[label] -= 1.0;
    Ok(())
}

/// Index of the largest count; ties go to the lowest index.
pub fn predict(a: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in a.iter().enumerate().skip(1) {
        if v > a[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one pair of moments per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        Adam {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &GradSet) -> Result<()> {
        let n = self.m.len();
        if params.tensors().count() != n || grads.tensors().count() != n {
            return Err(Error::Dimension(format!(
                "optimizer tracks {n} tensors, got {} parameters and {} gradients",
                params.tensors().count(),
                grads.tensors().count()
            )));
        }
        for ((p, g), m) in params.tensors().zip(grads.tensors()).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Dimension(format!(
                    "parameter {:?}, gradient {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Spike counts straight from the aggregated currents.
    Aggregate,
    /// Full time-stepped integrate-and-fire simulation.
    Simulate,
}

impl EvalMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMode::Aggregate => "aggregate",
            EvalMode::Simulate => "simulate",
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aggregate" => Ok(EvalMode::Aggregate),
            "simulate" => Ok(EvalMode::Simulate),
            other => Err(Error::Config(format!(
                "unknown eval mode `{other}` (expected aggregate or simulate)"
            ))),
        }
    }
}

/// A trained or training network together with everything needed to turn
/// raw feature rows into its input.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: NetworkSpec,
    pub params: ParamSet,
    pub neuron: NeuronConfig,
    pub input: InputMode,
    /// Per-step spike probability for a normalized value of 1.
    pub rate: f64,
    pub scaling: FeatureScaling,
}

impl Model {
    pub fn encoder(&self) -> Result<InputEncoder> {
        InputEncoder::new(self.input, self.neuron.steps(), self.rate)
    }

    /// Normalizes raw feature rows into `[rows × input_len]` values in `[0,1]`.
    pub fn prepare(&self, features: &Tensor) -> Result<Tensor> {
        let rows = features.rows();
        let flat = features.clone().reshape(&[rows, features.len() / rows.max(1)])?;
        if flat.row_len() != self.spec.input_len() {
            return Err(Error::Dimension(format!(
                "{} features per row, network `{}` takes {}",
                flat.row_len(),
                self.spec,
                self.spec.input_len()
            )));
        }
        self.scaling.apply(&flat)
    }

    /// Input spike counts for the given rows of prepared inputs.
    pub fn encode_rows(
        &self,
        inputs: &Tensor,
        rows: &[usize],
        seed: u64,
        stream: u64,
    ) -> Result<Tensor> {
        let encoder = self.encoder()?;
        let n = inputs.row_len();
        let mut out = Tensor::zeros(&[rows.len(), n]);
        for (r, &row) in rows.iter().enumerate() {
            let s = sample_seed(seed, stream, row as u64);
            encoder.encode_counts(inputs.row(row), s, out.row_mut(r))?;
        }
        Ok(out)
    }

    /// Output spike counts for a batch of input counts.
    pub fn output_counts(&self, input_counts: &Tensor) -> Result<Tensor> {
        let trace = forward_network(
            input_counts,
            &self.params,
            &self.spec,
            &self.neuron,
            TransferMode::SpikeCount,
        )?;
        Ok(trace.layers.into_iter().last().expect("non-empty").a)
    }
}

/// Mean loss and running accuracy over the minibatches of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// One pass over `inputs` (prepared rows) in epoch-seeded minibatches:
/// encode, forward, backward, Adam step.
pub fn train_epoch(
    model: &mut Model,
    adam: &mut Adam,
    inputs: &Tensor,
    labels: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<EpochStats> {
    if labels.is_empty() || inputs.rows() != labels.len() {
        return Err(Error::Domain(format!(
            "cannot train on {} rows with {} labels",
            inputs.rows(),
            labels.len()
        )));
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for batch in data::batches(labels.len(), batch_size, seed, epoch) {
        let x = model.encode_rows(inputs, &batch, seed, epoch)?;
        let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
        let trace = forward_network(
            &x,
            &model.params,
            &model.spec,
            &model.neuron,
            TransferMode::SpikeCount,
        )?;
        let out = trace.output();
        for (r, &label) in y.iter().enumerate() {
            loss_sum += cross_entropy(out.row(r), label)?;
            correct += usize::from(predict(out.row(r)) == label);
        }
        if !loss_sum.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite loss in epoch {epoch}"
            )));
        }
        let grads = backward_network(&trace, &model.params, &model.spec, &y, &model.neuron)?;
        adam.step(&mut model.params, &grads)?;
    }
    if !model.params.all_finite() {
        return Err(Error::Diverged(format!(
            "non-finite parameters after epoch {epoch}"
        )));
    }
    let n = labels.len() as f64;
    Ok(EpochStats {
        loss: loss_sum / n,
        accuracy: correct as f64 / n,
    })
}

/// Accuracy, mean loss and confusion counts (`confusion[true][predicted]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub correct: usize,
    pub total: usize,
    pub loss: f64,
    pub confusion: Vec<Vec<u64>>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

const EVAL_CHUNK: usize = 500;

/// Scores prepared rows. Input spikes are drawn from `stream`, so the same
/// seed and stream give the same trains in both modes.
pub fn evaluate(
    model: &Model,
    inputs: &Tensor,
    labels: &[usize],
    mode: EvalMode,
    seed: u64,
    stream: u64,
) -> Result<Evaluation> {
    let classes = model.spec.output_len();
    let mut eval = Evaluation {
        correct: 0,
        total: labels.len(),
        loss: 0.0,
        confusion: vec![vec![0; classes]; classes],
    };
    let record = |out: &[f64], label: usize, eval: &mut Evaluation| -> Result<()> {
        eval.loss += cross_entropy(out, label)?;
        let p = predict(out);
        eval.correct += usize::from(p == label);
        eval.confusion[label][p] += 1;
        Ok(())
    };
    let rows: Vec<usize> = (0..labels.len()).collect();
    match mode {
        EvalMode::Aggregate => {
            for chunk in rows.chunks(EVAL_CHUNK) {
                let x = model.encode_rows(inputs, chunk, seed, stream)?;
                let out = model.output_counts(&x)?;
                for (r, &i) in chunk.iter().enumerate() {
                    record(out.row(r), labels[i], &mut eval)?;
                }
            }
        }
        EvalMode::Simulate => {
            let encoder = model.encoder()?;
            for &i in &rows {
                let s = sample_seed(seed, stream, i as u64);
                let steps = encoder.encode_steps(inputs.row(i), s)?;
                let out = simulate_network(&steps, &model.params, &model.spec, &model.neuron)?;
                record(out.data(), labels[i], &mut eval)?;
            }
        }
    }
    if eval.total > 0 {
        eval.loss /= eval.total as f64;
    }
    Ok(eval)
}
