//! Feed-forward spiking networks in aggregate (spike-count) form.
//!
//! A network is a chain of layers described in the usual shorthand, e.g.
//! `4-20-3` for an MLP or `28x28-12c5-2a-64c5-2a-10` for a CNN. Every
//! parameterized layer computes the aggregated current
//! `z = θ·Σ w·a_prev + b` and emits `a = f(z)` spikes; average pooling passes
//! fractional counts through untouched.
//!
//! Tensors flowing through a network carry a leading batch axis. Dense
//! weights are stored `[fan_in × units]`, convolution kernels
//! `[out × in × k × k]`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::neuron::{relaxed_count, spike_count, NeuronConfig};
use crate::optim::loss_grad_into;
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Flat(usize),
    Map {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Map {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Flat(n) => vec![n],
            Shape::Map {
                channels,
                height,
                width,
            } => vec![channels, height, width],
        }
    }

    /// `[batch, ...dims]`.
    pub fn batched(&self, batch: usize) -> Vec<usize> {
        let mut d = vec![batch];
        d.extend(self.dims());
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Input(Shape),
    Dense { units: usize },
    Conv { out_channels: usize, kernel: usize },
    AvgPool { size: usize },
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv { .. })
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Input(Shape::Flat(n)) => write!(f, "{n}"),
            LayerSpec::Input(Shape::Map {
                channels: 1,
                height,
                width,
            }) => write!(f, "{height}x{width}"),
            LayerSpec::Input(Shape::Map {
                channels,
                height,
                width,
            }) => write!(f, "{channels}x{height}x{width}"),
            LayerSpec::Dense { units } => write!(f, "{units}"),
            LayerSpec::Conv {
                out_channels,
                kernel,
            } => write!(f, "{out_channels}c{kernel}"),
            LayerSpec::AvgPool { size } => write!(f, "{size}a"),
        }
    }
}

/// Validated layer chain with the output shape of every layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
    shapes: Vec<Shape>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let invalid = |msg: String| Err(Error::Validation(msg));
        let Some(LayerSpec::Input(input)) = layers.first().copied() else {
            return invalid("first layer must be the input".into());
        };
        if input.is_empty() {
            return invalid("input layer is empty".into());
        }
        let mut shapes = vec![input];
        for (i, layer) in layers.iter().enumerate().skip(1) {
            let prev = shapes[i - 1];
            let shape = match (*layer, prev) {
                (LayerSpec::Input(_), _) => return invalid(format!("layer {i}: second input")),
                (LayerSpec::Dense { units: 0 }, _) => {
                    return invalid(format!("layer {i}: dense layer without units"))
                }
                (LayerSpec::Dense { units }, _) => Shape::Flat(units),
                (
                    LayerSpec::Conv {
                        out_channels,
                        kernel,
                    },
                    Shape::Map { height, width, .. },
                ) => {
                    if out_channels == 0 || kernel == 0 || kernel > height || kernel > width {
                        return invalid(format!(
                            "layer {i}: {out_channels}c{kernel} does not fit a {height}x{width} map"
                        ));
                    }
                    Shape::Map {
                        channels: out_channels,
                        height: height - kernel + 1,
                        width: width - kernel + 1,
                    }
                }
                (
                    LayerSpec::AvgPool { size },
                    Shape::Map {
                        channels,
                        height,
                        width,
                    },
                ) => {
                    if size == 0 || height % size != 0 || width % size != 0 {
                        return invalid(format!(
                            "layer {i}: {size}a pooling does not tile a {height}x{width} map"
                        ));
                    }
                    Shape::Map {
                        channels,
                        height: height / size,
                        width: width / size,
                    }
                }
                (other, Shape::Flat(_)) => {
                    return invalid(format!("layer {i}: {other} needs a spatial input"))
                }
            };
            shapes.push(shape);
        }
        match layers.last() {
            Some(LayerSpec::Dense { .. }) if layers.len() >= 2 => {}
            _ => return invalid("the output layer must be dense".into()),
        }
        Ok(NetworkSpec { layers, shapes })
    }

    /// Parses `784-800-10`, `28x28-12c5-2a-64c5-2a-10` and similar.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |tok: &str| Error::Config(format!("bad layer token `{tok}` in `{text}`"));
        let num = |s: &str, tok: &str| s.parse::<usize>().map_err(|_| bad(tok));
        let mut layers = Vec::new();
        for (i, tok) in text.split('-').map(str::trim).enumerate() {
            let layer = if i == 0 {
                let dims = tok
                    .split('x')
                    .map(|d| num(d, tok))
                    .collect::<Result<Vec<_>>>()?;
                match dims[..] {
                    [n] => LayerSpec::Input(Shape::Flat(n)),
                    [h, w] => LayerSpec::Input(Shape::Map {
                        channels: 1,
                        height: h,
                        width: w,
                    }),
                    [c, h, w] => LayerSpec::Input(Shape::Map {
                        channels: c,
                        height: h,
                        width: w,
                    }),
                    _ => return Err(bad(tok)),
                }
            } else if let Some((c, k)) = tok.split_once('c') {
                LayerSpec::Conv {
                    out_channels: num(c, tok)?,
                    kernel: num(k, tok)?,
                }
            } else if let Some(size) = tok.strip_suffix('a') {
                LayerSpec::AvgPool {
                    size: num(size, tok)?,
                }
            } else {
                LayerSpec::Dense {
                    units: num(tok, tok)?,
                }
            };
            layers.push(layer);
        }
        NetworkSpec::new(layers)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Output shape of each layer (index 0 is the input).
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn input_shape(&self) -> Shape {
        self.shapes[0]
    }

    pub fn input_len(&self) -> usize {
        self.shapes[0].len()
    }

    pub fn output_len(&self) -> usize {
        self.shapes[self.shapes.len() - 1].len()
    }

    /// Input extent feeding a parameterized layer: flattened for dense layers,
    /// the channel count for convolutions.
    pub fn fan_in(&self, layer: usize) -> usize {
        let prev = self.shapes[layer - 1];
        match (self.layers[layer], prev) {
            (LayerSpec::Conv { kernel, .. }, Shape::Map { channels, .. }) => {
                channels * kernel * kernel
            }
            _ => prev.len(),
        }
    }

    fn param_shapes(&self, layer: usize) -> Option<(Vec<usize>, Vec<usize>)> {
        let prev = self.shapes[layer - 1];
        match (self.layers[layer], prev) {
            (LayerSpec::Dense { units }, _) => Some((vec![prev.len(), units], vec![units])),
            (
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                },
                Shape::Map { channels, .. },
            ) => Some((
                vec![out_channels, channels, kernel, kernel],
                vec![out_channels],
            )),
            _ => None,
        }
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{layer}")?;
        }
        Ok(())
    }
}

impl FromStr for NetworkSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NetworkSpec::parse(s)
    }
}

/// Weights and bias of one layer. The bias is the initial membrane potential.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Parameters of every layer, `None` for the input and pooling layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    layers: Vec<Option<LayerParams>>,
}

/// Gradients share the parameter layout.
pub type GradSet = ParamSet;

impl ParamSet {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let layers = (0..spec.layers.len())
            .map(|i| {
                (i > 0).then(|| spec.param_shapes(i)).flatten().map(|(w, b)| LayerParams {
                    weights: Tensor::zeros(&w),
                    bias: Tensor::zeros(&b),
                })
            })
            .collect();
        ParamSet { layers }
    }

    pub fn from_layers(layers: Vec<Option<LayerParams>>) -> Self {
        ParamSet { layers }
    }

    pub fn layers(&self) -> &[Option<LayerParams>] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> Option<&LayerParams> {
        self.layers.get(i).and_then(Option::as_ref)
    }

    pub fn layer_mut(&mut self, i: usize) -> Option<&mut LayerParams> {
        self.layers.get_mut(i).and_then(Option::as_mut)
    }

    /// Weights then bias, layer by layer.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| [&p.weights, &p.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flatten()
            .flat_map(|p| [&mut p.weights, &mut p.bias])
    }

    pub fn num_values(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::all_finite)
    }

    /// Checks every tensor against the shapes `spec` prescribes.
    pub fn check_matches(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layers.len() != spec.layers.len() {
            return Err(Error::Validation(format!(
                "parameters cover {} layers, network `{spec}` has {}",
                self.layers.len(),
                spec.layers.len()
            )));
        }
        for (i, p) in self.layers.iter().enumerate() {
            let expected = if i == 0 { None } else { spec.param_shapes(i) };
            match (p, expected) {
                (None, None) => {}
                (Some(p), Some((w, b))) if p.weights.shape() == w && p.bias.shape() == b => {}
                _ => {
                    return Err(Error::Validation(format!(
                        "layer {i} parameters do not fit network `{spec}`"
                    )))
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// `w ~ N(0, std²)`, `b = 0`.
    Gaussian { std: f64 },
    /// `w, b ~ U(−1/√fan_in, 1/√fan_in)`.
    UniformFanIn,
}

/// Deterministic initialisation; draws weights then bias, layer by layer.
pub fn init_params(spec: &NetworkSpec, scheme: InitScheme, seed: u64) -> Result<ParamSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::zeros(spec);
    for (i, layer) in params.layers.iter_mut().enumerate() {
        let Some(p) = layer else { continue };
        match scheme {
            InitScheme::Gaussian { std } => {
                let normal = Normal::new(0.0, std)
                    .map_err(|e| Error::Validation(format!("gaussian init: {e}")))?;
                for w in p.weights.data_mut() {
                    *w = normal.sample(&mut rng);
                }
            }
            InitScheme::UniformFanIn => {
                let bound = 1.0 / (spec.fan_in(i) as f64).sqrt();
                for w in p.weights.data_mut().iter_mut().chain(p.bias.data_mut()) {
                    *w = rng.random_range(-bound..=bound);
                }
            }
        }
    }
    Ok(params)
}

/// Activation used by the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferMode {
    /// Integer spike counts, `min(⌊z/θ⌋·[z>0], r_max)`.
    SpikeCount,
    /// `(z/θ)·[z>0]`: same surrogate derivative, but differentiable almost
    /// everywhere. For gradient checks only.
    Relaxed,
}

fn activate(z: &Tensor, cfg: &NeuronConfig, mode: TransferMode) -> Tensor {
    let theta = cfg.threshold();
    match mode {
        TransferMode::SpikeCount => {
            let r_max = cfg.r_max();
            z.map(|v| spike_count(v, theta, r_max))
        }
        TransferMode::Relaxed => z.map(|v| relaxed_count(v, theta)),
    }
}

fn flatten_batch(t: &Tensor) -> Result<Tensor> {
    let (b, n) = (t.rows(), t.row_len());
    t.clone().reshape(&[b, n])
}

/// Dense layer on a batch: `z = θ·(a_prev·w) + b`, `a = f(z)`.
pub fn forward_dense(
    a_prev: &Tensor,
    params: &LayerParams,
    cfg: &NeuronConfig,
    mode: TransferMode,
) -> Result<(Tensor, Tensor)> {
    let x = if a_prev.rank() == 2 {
        matmul_input(a_prev, &params.weights)?
    } else {
        matmul_input(&flatten_batch(a_prev)?, &params.weights)?
    };
    let mut z = x;
    let theta = cfg.threshold();
    let units = z.row_len();
    if params.bias.len() != units {
        return Err(Error::Dimension(format!(
            "bias {:?} for {units} units",
            params.bias.shape()
        )));
    }
    for r in 0..z.rows() {
        for (v, &b) in z.row_mut(r).iter_mut().zip(params.bias.data()) {
            *v = theta * *v + b;
        }
    }
    let a = activate(&z, cfg, mode);
    Ok((z, a))
}

fn matmul_input(a: &Tensor, w: &Tensor) -> Result<Tensor> {
    tensor::matmul(a, w)
}

/// Convolutional layer on a batch `[N×C×H×W]`; one bias per output channel.
pub fn forward_conv(
    a_prev: &Tensor,
    params: &LayerParams,
    cfg: &NeuronConfig,
    mode: TransferMode,
) -> Result<(Tensor, Tensor)> {
    let mut z = tensor::conv2d_valid(a_prev, &params.weights)?;
    let (channels, plane) = match *z.shape() {
        [_, c, h, w] => (c, h * w),
        [c, h, w] => (c, h * w),
        _ => unreachable!("conv2d_valid returns 3-D or 4-D maps"),
    };
    if params.bias.len() != channels {
        return Err(Error::Dimension(format!(
            "bias {:?} for {channels} channels",
            params.bias.shape()
        )));
    }
    let theta = cfg.threshold();
    for (i, chunk) in z.data_mut().chunks_exact_mut(plane).enumerate() {
        let b = params.bias.data()[i % channels];
        for v in chunk {
            *v = theta * *v + b;
        }
    }
    let a = activate(&z, cfg, mode);
    Ok((z, a))
}

/// Average pooling of spike counts; results stay fractional.
pub fn forward_pool(a_prev: &Tensor, size: usize) -> Result<Tensor> {
    tensor::avgpool2d(a_prev, size)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    /// Aggregated current; `None` for input and pooling layers.
    pub z: Option<Tensor>,
    /// Spike counts (or pooled counts) leaving the layer.
    pub a: Tensor,
}

/// Per-layer currents and counts of one forward pass, kept for backprop.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    pub fn batch(&self) -> usize {
        self.layers[0].a.rows()
    }

    /// Output spike counts, `[batch × classes]`.
    pub fn output(&self) -> &Tensor {
        &self.layers[self.layers.len() - 1].a
    }

    pub fn output_current(&self) -> &Tensor {
        self.layers[self.layers.len() - 1]
            .z
            .as_ref()
            .expect("output layer is parameterized")
    }
}

/// Forward pass of a batch of input counts `[batch × input_len]` (or already
/// shaped `[batch × C×H×W]`).
pub fn forward_network(
    input: &Tensor,
    params: &ParamSet,
    spec: &NetworkSpec,
    cfg: &NeuronConfig,
    mode: TransferMode,
) -> Result<ForwardTrace> {
    if input.rank() < 2 || input.row_len() != spec.input_len() {
        return Err(Error::Dimension(format!(
            "input {:?} does not match network input {:?}",
            input.shape(),
            spec.input_shape().dims()
        )));
    }
    let batch = input.rows();
    let mut layers = Vec::with_capacity(spec.layers.len());
    layers.push(LayerTrace {
        z: None,
        a: input.clone().reshape(&spec.input_shape().batched(batch))?,
    });
    for (i, layer) in spec.layers.iter().enumerate().skip(1) {
        let prev = &layers[i - 1].a;
        let trace = match *layer {
            LayerSpec::Dense { .. } | LayerSpec::Conv { .. } => {
                let p = params.layer(i).ok_or_else(|| {
                    Error::Consistency(format!("no parameters for layer {i} ({layer})"))
                })?;
                let (z, a) = if let LayerSpec::Dense { .. } = layer {
                    forward_dense(prev, p, cfg, mode)?
                } else {
                    forward_conv(prev, p, cfg, mode)?
                };
                LayerTrace { z: Some(z), a }
            }
            LayerSpec::AvgPool { size } => LayerTrace {
                z: None,
                a: forward_pool(prev, size)?,
            },
            LayerSpec::Input(_) => unreachable!("validated by NetworkSpec"),
        };
        layers.push(trace);
    }
    Ok(ForwardTrace { layers })
}

/// Output-layer error `δ = (softmax(a) − y) ⊙ (1/θ)·[z>0]` for a batch.
pub fn backward_output(
    z_out: &Tensor,
    a_out: &Tensor,
    labels: &[usize],
    cfg: &NeuronConfig,
) -> Result<Tensor> {
    if z_out.shape() != a_out.shape() || a_out.rank() != 2 || a_out.rows() != labels.len() {
        return Err(Error::Consistency(format!(
            "output currents {:?}, counts {:?} and {} labels disagree",
            z_out.shape(),
            a_out.shape(),
            labels.len()
        )));
    }
    let inv_theta = 1.0 / cfg.threshold();
    let mut delta = Tensor::zeros(a_out.shape());
    for (r, &label) in labels.iter().enumerate() {
        let row = delta.row_mut(r);
        loss_grad_into(a_out.row(r), label, row)?;
        for (d, &z) in row.iter_mut().zip(z_out.row(r)) {
            *d = if z > 0.0 { *d * inv_theta } else { 0.0 };
        }
    }
    Ok(delta)
}

/// Zeroes `signal` wherever `z ≤ 0`.
fn gate(signal: Tensor, z: &Tensor) -> Result<Tensor> {
    signal.zip_map(z, |g, z| if z > 0.0 { g } else { 0.0 })
}

/// Hidden-layer error for a dense successor:
/// `δ_this[j] = Σ_k δ_next[k]·w_next[j,k] · [z_this[j] > 0]`.
///
/// The `θ` from the successor's current and the `1/θ` surrogate slope cancel,
/// so neither appears. `w_next` is `[units_this × units_next]`.
pub fn backward_hidden(delta_next: &Tensor, w_next: &Tensor, z_this: &Tensor) -> Result<Tensor> {
    let signal = tensor::matmul_nt(delta_next, w_next)?;
    gate(signal.reshape(z_this.shape())?, z_this)
}

/// Batch-averaged gradients of the cross-entropy loss for every parameter,
/// `∂E/∂w = δ·θ·a_prev` and `∂E/∂b = δ`, with pooling and convolution
/// routed through their tensor gradients.
pub fn backward_network(
    trace: &ForwardTrace,
    params: &ParamSet,
    spec: &NetworkSpec,
    labels: &[usize],
    cfg: &NeuronConfig,
) -> Result<GradSet> {
    let n_layers = spec.layers.len();
    if trace.layers.len() != n_layers {
        return Err(Error::Consistency(format!(
            "trace has {} layers, network `{spec}` has {n_layers}",
            trace.layers.len()
        )));
    }
    params
        .check_matches(spec)
        .map_err(|e| Error::Consistency(e.to_string()))?;
    let batch = trace.batch();
    if labels.len() != batch {
        return Err(Error::Consistency(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let theta = cfg.threshold();
    let inv_batch = 1.0 / batch as f64;
    let mut grads = ParamSet::zeros(spec);

    let mut l = n_layers - 1;
    let mut delta = backward_output(trace.output_current(), trace.output(), labels, cfg)?;
    loop {
        let a_prev = &trace.layers[l - 1].a;
        let p = params.layer(l).expect("checked above");
        let g = grads.layer_mut(l).expect("checked above");
        match spec.layers[l] {
            LayerSpec::Dense { .. } => {
                let mut gw = tensor::matmul_tn(&flatten_batch(a_prev)?, &delta)?;
                gw.scale_in_place(theta * inv_batch);
                g.weights = gw;
                g.bias = column_sums(&delta).scale(inv_batch);
            }
            LayerSpec::Conv { kernel, .. } => {
                let mut gk = tensor::conv2d_grad_kernels(a_prev, &delta, kernel)?;
                gk.scale_in_place(theta * inv_batch);
                g.weights = gk;
                g.bias = channel_sums(&delta).scale(inv_batch);
            }
            _ => unreachable!("l always indexes a parameterized layer"),
        }
        if l == 1 {
            break;
        }
        // ∂E/∂a_{l-1} divided by θ; the surrogate slope 1/θ applied at the
        // next gate cancels that factor.
        let mut signal = match spec.layers[l] {
            LayerSpec::Dense { .. } => {
                tensor::matmul_nt(&delta, &p.weights)?.reshape(a_prev.shape())?
            }
            LayerSpec::Conv { .. } => {
                let (h, w) = match *a_prev.shape() {
                    [_, _, h, w] => (h, w),
                    _ => unreachable!("conv inputs are batched maps"),
                };
                tensor::conv2d_grad_input(&p.weights, &delta, h, w)?
            }
            _ => unreachable!(),
        };
        let mut m = l - 1;
        while let LayerSpec::AvgPool { size } = spec.layers[m] {
            signal = tensor::avgpool2d_grad(&signal, size)?;
            m -= 1;
        }
        if m == 0 {
            break;
        }
        let z = trace.layers[m]
            .z
            .as_ref()
            .ok_or_else(|| Error::Consistency(format!("layer {m} has no current in the trace")))?;
        delta = gate(signal, z)?;
        l = m;
    }
    Ok(grads)
}

/// Time-stepped simulation of one sample through the whole network.
///
/// `input` holds the per-step input spikes (or currents), `[steps × input_len]`.
/// Each parameterized layer receives `θ·Σ w·s_prev(t)` per step on top of a
/// membrane initialised at its bias; pooling layers average the spikes of
/// each window per step. Returns the output spike counts.
pub fn simulate_network(
    input: &Tensor,
    params: &ParamSet,
    spec: &NetworkSpec,
    cfg: &NeuronConfig,
) -> Result<Tensor> {
    use crate::neuron::NeuronState;

    if input.rank() != 2 || input.rows() != cfg.steps() || input.row_len() != spec.input_len() {
        return Err(Error::Dimension(format!(
            "expected {}×{} input steps, got {:?}",
            cfg.steps(),
            spec.input_len(),
            input.shape()
        )));
    }
    params.check_matches(spec)?;
    let theta = cfg.threshold();
    let mut states: Vec<Option<NeuronState>> = spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let p = params.layer(i)?;
            let bias: Vec<f64> = match (layer, spec.shapes[i]) {
                (LayerSpec::Conv { .. }, Shape::Map { height, width, .. }) => p
                    .bias
                    .data()
                    .iter()
                    .flat_map(|&b| std::iter::repeat_n(b, height * width))
                    .collect(),
                _ => p.bias.data().to_vec(),
            };
            Some(NeuronState::new(&bias))
        })
        .collect();

    for t in 0..cfg.steps() {
        let mut x = Tensor::new(
            spec.input_shape().batched(1),
            input.row(t).to_vec(),
        )?;
        for (i, layer) in spec.layers.iter().enumerate().skip(1) {
            let current = match *layer {
                LayerSpec::Dense { .. } => {
                    let flat = x.reshape(&[1, spec.shapes[i - 1].len()])?;
                    tensor::matmul(&flat, &params.layer(i).expect("checked").weights)?
                }
                LayerSpec::Conv { .. } => {
                    tensor::conv2d_valid(&x, &params.layer(i).expect("checked").weights)?
                }
                LayerSpec::AvgPool { size } => {
                    x = tensor::avgpool2d(&x, size)?;
                    continue;
                }
                LayerSpec::Input(_) => unreachable!(),
            };
            let state = states[i].as_mut().expect("parameterized layer has a state");
            let current: Vec<f64> = current.data().iter().map(|&c| theta * c).collect();
            state.step(&current, cfg)?;
            let spikes = state.spikes().iter().map(|&s| f64::from(u8::from(s))).collect();
            x = Tensor::new(spec.shapes[i].batched(1), spikes)?;
        }
    }
    let last = states
        .pop()
        .flatten()
        .expect("output layer is parameterized");
    Ok(last.counts_tensor())
}

fn column_sums(t: &Tensor) -> Tensor {
    let mut sums = vec![0.0; t.row_len()];
    for r in 0..t.rows() {
        for (s, &v) in sums.iter_mut().zip(t.row(r)) {
            *s += v;
        }
    }
    Tensor::vector(sums)
}

fn channel_sums(t: &Tensor) -> Tensor {
    let [n, c, h, w] = *t.shape() else {
        unreachable!("conv deltas are batched maps")
    };
    let mut sums = vec![0.0; c];
    for s in 0..n {
        for (ch, sum) in sums.iter_mut().enumerate() {
            let start = (s * c + ch) * h * w;
            *sum += t.data()[start..start + h * w].iter().sum::<f64>();
        }
    }
    Tensor::vector(sums)
}
