#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikecount::Tensor;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn data_path(rel: &str) -> PathBuf {
    repo_root().join("data").join(rel)
}

/// `None` (with a note on stderr) when a data file has not been fetched.
pub fn require(rel: &str) -> Option<PathBuf> {
    let p = data_path(rel);
    if p.exists() {
        Some(p)
    } else {
        eprintln!("skipping: {} not found (run scripts/fetch_datasets.py)", p.display());
        None
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Relative error with an absolute floor so near-zero pairs compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

pub fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (&g, &w)) in got.iter().zip(want).enumerate() {
        assert!(rel_err(g, w) <= tol, "entry {i}: got {g}, want {w}");
    }
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.data_mut()[i] = orig - h;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// One random instance of the simulation/aggregate equivalence: dyadic
/// currents in `[0, θ]` per step and a bias in `[0, θ)`, so every sum is exact.
/// Returns `(simulated, aggregate)` counts.
pub fn equivalence_instance(seed: u64) -> (Vec<f64>, Vec<f64>) {
    use spikecount::neuron::{simulate_counts, transfer, NeuronConfig};

    let mut r = rng(seed);
    let theta = [0.5, 1.0, 2.0][r.random_range(0..3)];
    let steps = r.random_range(1..=60usize);
    let n = r.random_range(1..=8usize);
    let cfg = NeuronConfig::new(theta, steps as f64, 1.0).unwrap();
    let dyadic = |r: &mut ChaCha8Rng, max: u32| f64::from(r.random_range(0..=max)) / 64.0 * theta;
    let currents = Tensor::new(
        vec![steps, n],
        (0..steps * n).map(|_| dyadic(&mut r, 64)).collect(),
    )
    .unwrap();
    let bias = Tensor::vector((0..n).map(|_| dyadic(&mut r, 63)).collect());
    let simulated = simulate_counts(&currents, &bias, &cfg).unwrap();
    let mut total = bias.clone();
    for t in 0..steps {
        for (acc, &z) in total.data_mut().iter_mut().zip(currents.row(t)) {
            *acc += z;
        }
    }
    (simulated.into_data(), transfer(&total, &cfg).into_data())
}

/// Empirical mean count of `neurons` Poisson-encoded copies of `value`, with
/// the binomial standard error of that mean.
pub fn poisson_mean(value: f64, steps: usize, neurons: usize, seed: u64) -> (f64, f64) {
    use spikecount::encoding::poisson_encode;
    use spikecount::neuron::count_spikes;

    let train = poisson_encode(&vec![value; neurons], steps, 1.0, seed).unwrap();
    let counts = count_spikes(&train);
    let mean = counts.sum() / neurons as f64;
    let se = (steps as f64 * value * (1.0 - value) / neurons as f64).sqrt();
    (mean, se)
}

/// Mean relaxed-mode cross-entropy of a batch.
pub fn relaxed_loss(
    input: &Tensor,
    params: &spikecount::network::ParamSet,
    spec: &spikecount::network::NetworkSpec,
    labels: &[usize],
    cfg: &spikecount::neuron::NeuronConfig,
) -> f64 {
    use spikecount::network::{forward_network, TransferMode};
    use spikecount::optim::cross_entropy;

    let trace = forward_network(input, params, spec, cfg, TransferMode::Relaxed).unwrap();
    let out = trace.output();
    (0..labels.len())
        .map(|r| cross_entropy(out.row(r), labels[r]).unwrap())
        .sum::<f64>()
        / labels.len() as f64
}

/// A random relaxed network with every current at least `margin` away from
/// the gate, so central differences never straddle a kink. `None` if the
/// draw lands too close.
pub struct GradInstance {
    pub spec: spikecount::network::NetworkSpec,
    pub params: spikecount::network::ParamSet,
    pub input: Tensor,
    pub labels: Vec<usize>,
    pub cfg: spikecount::neuron::NeuronConfig,
}

pub fn random_dense_instance(seed: u64, margin: f64) -> Option<GradInstance> {
    use spikecount::network::{forward_network, init_params, InitScheme, NetworkSpec, TransferMode};
    use spikecount::neuron::NeuronConfig;

    let mut r = rng(seed);
    let depth = r.random_range(1..=3usize);
    let mut widths = vec![r.random_range(1..=6usize)];
    for _ in 1..depth {
        widths.push(r.random_range(2..=20usize));
    }
    widths.push(r.random_range(2..=5usize));
    let text = widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("-");
    let spec = NetworkSpec::parse(&text).unwrap();
    let theta = r.random_range(0.5..2.0);
    let cfg = NeuronConfig::new(theta, 20.0, 1.0).unwrap();
    let mut params = init_params(&spec, InitScheme::Gaussian { std: 0.6 }, seed).unwrap();
    for p in params.tensors_mut().collect::<Vec<_>>() {
        if p.rank() == 1 {
            for b in p.data_mut() {
                *b = r.random_range(-0.5..1.0);
            }
        }
    }
    let batch = r.random_range(1..=4usize);
    let input = random_tensor(&mut r, &[batch, widths[0]], 0.0, 5.0);
    let classes = *widths.last().unwrap();
    let labels = (0..batch).map(|_| r.random_range(0..classes)).collect();
    let trace = forward_network(&input, &params, &spec, &cfg, TransferMode::Relaxed).unwrap();
    let clear = trace
        .layers
        .iter()
        .filter_map(|l| l.z.as_ref())
        .all(|z| z.data().iter().all(|v| v.abs() > margin));
    clear.then_some(GradInstance {
        spec,
        params,
        input,
        labels,
        cfg,
    })
}

/// Largest relative error between `backward_network` and central differences
/// of the relaxed loss over every parameter.
pub fn max_fd_error(inst: &GradInstance) -> f64 {
    use spikecount::network::{backward_network, forward_network, TransferMode};

    let trace = forward_network(
        &inst.input,
        &inst.params,
        &inst.spec,
        &inst.cfg,
        TransferMode::Relaxed,
    )
    .unwrap();
    let grads = backward_network(&trace, &inst.params, &inst.spec, &inst.labels, &inst.cfg).unwrap();
    let analytic: Vec<f64> = grads.tensors().flat_map(|t| t.data().to_vec()).collect();

    let h = 1e-6;
    let mut probe = inst.params.clone();
    let mut worst: f64 = 0.0;
    let mut k = 0;
    let n_tensors = probe.tensors().count();
    for ti in 0..n_tensors {
        let len = probe.tensors().nth(ti).unwrap().len();
        for j in 0..len {
            let orig = probe.tensors().nth(ti).unwrap().data()[j];
            probe.tensors_mut().nth(ti).unwrap().data_mut()[j] = orig + h;
            let up = relaxed_loss(&inst.input, &probe, &inst.spec, &inst.labels, &inst.cfg);
            probe.tensors_mut().nth(ti).unwrap().data_mut()[j] = orig - h;
            let down = relaxed_loss(&inst.input, &probe, &inst.spec, &inst.labels, &inst.cfg);
            probe.tensors_mut().nth(ti).unwrap().data_mut()[j] = orig;
            worst = worst.max(rel_err(analytic[k], (up - down) / (2.0 * h)));
            k += 1;
        }
    }
    worst
}

/// TOML for a named dataset with every data path made absolute, plus any
/// extra `[section]` lines.
pub fn config_for(name: &str, extra: &str) -> String {
    let paths = if name == "mnist" {
        let p = |f: &str| data_path(&format!("mnist/{f}")).display().to_string();
        format!(
            "train_images = {:?}\ntrain_labels = {:?}\ntest_images = {:?}\ntest_labels = {:?}\n",
            p("train-images-idx3-ubyte"),
            p("train-labels-idx1-ubyte"),
            p("t10k-images-idx3-ubyte"),
            p("t10k-labels-idx1-ubyte"),
        )
    } else {
        format!("path = {:?}\n", data_path(&format!("uci/{name}.csv")).display().to_string())
    };
    format!("[dataset]\nname = {name:?}\n{paths}{extra}")
}
