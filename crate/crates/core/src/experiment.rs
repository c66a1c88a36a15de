//! End-to-end runs: load data, train repeated seeds, write metrics and
//! checkpoints; evaluate and describe saved checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;

use crate::checkpoint::{Checkpoint, Provenance};
use crate::config::RunConfig;
use crate::data::{self, Dataset};
use crate::encoding::FeatureScaling;
use crate::error::{Error, Result};
use crate::network::init_params;
use crate::optim::{
    evaluate, train_epoch, Adam, EvalMode, Evaluation, Model, TEST_EVAL_STREAM,
    TRAIN_EVAL_STREAM,
};

pub const METRICS_HEADER: &str = "epoch,loss,train_acc,test_acc,seconds";

/// Loads the configured dataset and returns `(train, test)`.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.dataset;
    if cfg.is_mnist() {
        let path = |p: &Option<PathBuf>, what: &str| {
            p.clone()
                .ok_or_else(|| Error::Config(format!("dataset.{what} is required")))
        };
        let take = |set: Dataset, n: Option<usize>| -> Result<Dataset> {
            match n {
                Some(n) if n > set.len() => Err(Error::Domain(format!(
                    "subset of {n} rows requested from {}",
                    set.len()
                ))),
                Some(n) => Ok(set.subset(&(0..n).collect::<Vec<_>>())),
                None => Ok(set),
            }
        };
        let train = data::load_mnist_idx(
            path(&d.train_images, "train_images")?,
            path(&d.train_labels, "train_labels")?,
        )?;
        let test = data::load_mnist_idx(
            path(&d.test_images, "test_images")?,
            path(&d.test_labels, "test_labels")?,
        )?;
        Ok((take(train, d.train_subset)?, take(test, d.test_subset)?))
    } else {
        let schema = cfg.csv_schema()?;
        let path = d
            .path
            .as_ref()
            .ok_or_else(|| Error::Config("dataset.path is required".into()))?;
        let all = data::load_csv(path, &schema)?;
        let n_train = d
            .n_train
            .ok_or_else(|| Error::Config("dataset.n_train is required".into()))?;
        data::split(&all, n_train, cfg.split_seed(), d.stratify.unwrap_or(true))
    }
}

/// Fresh model for one repeat. Feature scaling is fitted on `train` for CSV
/// data; image pixels are already in `[0,1]`.
pub fn build_model(cfg: &RunConfig, train: &Dataset, seed: u64) -> Result<Model> {
    let spec = cfg.network()?;
    let scaling = if cfg.is_mnist() {
        FeatureScaling::unit(spec.input_len())
    } else {
        FeatureScaling::fit(train.features())?
    };
    Ok(Model {
        params: init_params(&spec, cfg.init_scheme(), seed)?,
        spec,
        neuron: cfg.neuron()?,
        input: cfg.model.input,
        rate: cfg.model.rate,
        scaling,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.3}",
            self.epoch, self.loss, self.train_acc, self.test_acc, self.seconds
        )
    }
}

#[derive(Clone, Debug)]
pub struct RepeatResult {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Accuracy on the full training split after the last epoch.
    pub train_eval: Evaluation,
    pub test_eval: Evaluation,
    pub model: Model,
}

/// Trains one model from scratch. `on_epoch` sees every metrics row as it is
/// produced.
pub fn train_repeat(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<RepeatResult> {
    let mut model = build_model(cfg, train, seed)?;
    let train_x = model.prepare(train.features())?;
    let test_x = model.prepare(test.features())?;
    let mut adam = Adam::new(cfg.adam(), &model.params);
    let mode = cfg.run.eval_mode;
    let mut epochs = Vec::with_capacity(cfg.optim.epochs);
    let mut test_eval = evaluate(&model, &test_x, test.labels(), mode, seed, TEST_EVAL_STREAM)?;
    for epoch in 1..=cfg.optim.epochs {
        let start = Instant::now();
        let stats = train_epoch(
            &mut model,
            &mut adam,
            &train_x,
            train.labels(),
            cfg.optim.batch_size,
            seed,
            epoch as u64,
        )
        .map_err(|e| match e {
            Error::Diverged(msg) => Error::Diverged(format!(
                "{msg} (seed {seed}, lr {}); lower optim.lr or check the inputs",
                cfg.optim.lr
            )),
            other => other,
        })?;
        test_eval = evaluate(&model, &test_x, test.labels(), mode, seed, TEST_EVAL_STREAM)?;
        let elapsed = start.elapsed().as_secs_f64();
        let record = EpochRecord {
            epoch,
            loss: stats.loss,
            train_acc: stats.accuracy,
            test_acc: test_eval.accuracy(),
            seconds: if cfg.run.wall_clock { elapsed } else { 0.0 },
        };
        log::debug!(
            "seed {seed} epoch {epoch}: loss {:.4} train {:.4} test {:.4} ({elapsed:.2}s)",
            record.loss,
            record.train_acc,
            record.test_acc
        );
        on_epoch(&record);
        epochs.push(record);
    }
    let train_eval = evaluate(&model, &train_x, train.labels(), mode, seed, TRAIN_EVAL_STREAM)?;
    Ok(RepeatResult {
        seed,
        epochs,
        train_eval,
        test_eval,
        model,
    })
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub repeats: Vec<RepeatResult>,
    pub out_dir: PathBuf,
}

impl TrainSummary {
    pub fn test_accuracy(&self) -> (f64, f64) {
        mean_std(&self.collect(|r| r.test_eval.accuracy()))
    }

    pub fn train_accuracy(&self) -> (f64, f64) {
        mean_std(&self.collect(|r| r.train_eval.accuracy()))
    }

    fn collect(&self, f: impl Fn(&RepeatResult) -> f64) -> Vec<f64> {
        self.repeats.iter().map(f).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("repeat,seed,loss,train_acc,test_acc\n");
        for (i, r) in self.repeats.iter().enumerate() {
            let loss = r.epochs.last().map_or(f64::NAN, |e| e.loss);
            let _ = writeln!(
                out,
                "{i},{},{loss:.6},{:.6},{:.6}",
                r.seed,
                r.train_eval.accuracy(),
                r.test_eval.accuracy()
            );
        }
        let loss = mean_std(&self.collect(|r| r.epochs.last().map_or(f64::NAN, |e| e.loss)));
        let (train, test) = (self.train_accuracy(), self.test_accuracy());
        let _ = writeln!(out, "mean,,{:.6},{:.6},{:.6}", loss.0, train.0, test.0);
        let _ = writeln!(out, "std,,{:.6},{:.6},{:.6}", loss.1, train.1, test.1);
        out
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs every repeat of `cfg`, writing into `cfg.run.out_dir`:
/// `config.resolved.toml`, `metrics_repeat{r}.csv`, `model_repeat{r}.ckpt`
/// and `summary.csv`. Nothing is written if the data cannot be loaded.
pub fn run_training(cfg: &RunConfig) -> Result<TrainSummary> {
    let resolved = cfg.to_toml();
    for line in resolved.lines() {
        info!("config: {line}");
    }
    let (train, test) = load_data(cfg)?;
    info!(
        "dataset {}: {} train / {} test rows, {} features, {} classes",
        train.name(),
        train.len(),
        test.len(),
        train.feature_len(),
        train.classes()
    );
    if !train.meta().notes.is_empty() {
        info!("dataset {}: {}", train.name(), train.meta().notes);
    }
    let out_dir = cfg.run.out_dir.clone();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    write(&out_dir.join("config.resolved.toml"), &resolved)?;

    let started = Instant::now();
    let mut repeats = Vec::with_capacity(cfg.run.repeats);
    for r in 0..cfg.run.repeats {
        let seed = cfg.run.seed.wrapping_add(r as u64);
        let t0 = Instant::now();
        let mut metrics = format!("{METRICS_HEADER}\n");
        let result = train_repeat(cfg, &train, &test, seed, |rec| {
            metrics.push_str(&rec.csv_row());
            metrics.push('\n');
        })?;
        write(&out_dir.join(format!("metrics_repeat{r}.csv")), &metrics)?;
        Checkpoint {
            model: result.model.clone(),
            provenance: Provenance {
                dataset: train.name().to_string(),
                seed,
                epochs: cfg.optim.epochs as u64,
            },
            config: resolved.clone(),
        }
        .save(out_dir.join(format!("model_repeat{r}.ckpt")))?;
        info!(
            "repeat {r} (seed {seed}): train {:.4} test {:.4} in {:.1}s",
            result.train_eval.accuracy(),
            result.test_eval.accuracy(),
            t0.elapsed().as_secs_f64()
        );
        repeats.push(result);
    }
    let summary = TrainSummary { repeats, out_dir };
    write(&summary.out_dir.join("summary.csv"), summary.to_csv())?;
    let (tm, ts) = summary.test_accuracy();
    let (rm, rs) = summary.train_accuracy();
    info!(
        "{} repeats: train {rm:.4} ± {rs:.4}, test {tm:.4} ± {ts:.4} ({:.1}s total)",
        summary.repeats.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split `{other}` (expected train or test)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct EvalRequest {
    /// Presentation window override (ms).
    pub duration: Option<f64>,
    pub mode: Option<EvalMode>,
    pub split: Option<Split>,
    /// Configuration to take the data from instead of the stored one.
    pub config: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub split: Split,
    pub mode: EvalMode,
    pub duration: f64,
    pub evaluation: Evaluation,
    pub class_names: Vec<String>,
}

impl EvalReport {
    pub fn render(&self) -> String {
        let e = &self.evaluation;
        let mut out = format!(
            "split={} mode={} T={} accuracy={:.4} ({}/{})\n",
            match self.split {
                Split::Train => "train",
                Split::Test => "test",
            },
            self.mode.as_str(),
            self.duration,
            e.accuracy(),
            e.correct,
            e.total
        );
        out.push_str("confusion (rows: true class, columns: predicted)\n");
        for (name, row) in self.class_names.iter().zip(&e.confusion) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "{name}: {}", cells.join(" "));
        }
        out
    }
}

/// Evaluates a checkpoint on the data its configuration describes.
pub fn run_eval(checkpoint: impl AsRef<Path>, req: &EvalRequest) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let cfg = match &req.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::from_toml(&ckpt.config)?,
    };
    ckpt.check_network(&cfg.network()?)?;
    let mut model = ckpt.model;
    if let Some(t) = req.duration {
        model.neuron = model.neuron.with_duration(t)?;
    }
    let (train, test) = load_data(&cfg)?;
    let split = req.split.unwrap_or(Split::Test);
    let (set, stream) = match split {
        Split::Train => (&train, TRAIN_EVAL_STREAM),
        Split::Test => (&test, TEST_EVAL_STREAM),
    };
    let mode = req.mode.unwrap_or(cfg.run.eval_mode);
    let x = model.prepare(set.features())?;
    let evaluation = evaluate(&model, &x, set.labels(), mode, ckpt.provenance.seed, stream)?;
    Ok(EvalReport {
        split,
        mode,
        duration: model.neuron.duration(),
        evaluation,
        class_names: set.meta().class_names.clone(),
    })
}

/// Human-readable description of a checkpoint.
pub fn inspect(checkpoint: impl AsRef<Path>) -> Result<String> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let m = &ckpt.model;
    let mut out = String::new();
    let _ = writeln!(out, "network: {}", m.spec);
    let _ = writeln!(
        out,
        "neuron: threshold={} T={} dt={} r_max={}",
        m.neuron.threshold(),
        m.neuron.duration(),
        m.neuron.dt(),
        m.neuron.r_max()
    );
    let _ = writeln!(out, "input: {} rate={}", m.input.as_str(), m.rate);
    let _ = writeln!(
        out,
        "trained on: {} (seed {}, {} epochs)",
        ckpt.provenance.dataset, ckpt.provenance.seed, ckpt.provenance.epochs
    );
    for (i, p) in m.params.layers().iter().enumerate() {
        if let Some(p) = p {
            let w = p.weights.data();
            let (mean, std) = mean_std(w);
            let _ = writeln!(
                out,
                "layer {i} ({}): weights {:?} mean={mean:.5} std={std:.5}, bias {:?}",
                m.spec.layers()[i],
                p.weights.shape(),
                p.bias.shape()
            );
        }
    }
    let _ = writeln!(out, "parameters: {}", m.params.num_values());
    Ok(out)
}
