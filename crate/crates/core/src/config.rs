//! Run configuration: a TOML file with `[dataset]`, `[model]`, `[optim]` and
//! `[run]` sections. Keys left out are filled from the defaults of the named
//! dataset; the fully resolved configuration can be written back out and
//! re-read unchanged.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ColumnRole, CsvSchema, LabelEncoding};
use crate::encoding::InputMode;
use crate::error::{Error, Result};
use crate::network::{InitScheme, NetworkSpec};
use crate::neuron::NeuronConfig;
use crate::optim::{AdamConfig, EvalMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Gaussian,
    UniformFanin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// `iris`, `wbc`, `abalone`, `yeast`, `mnist`, or any name when
    /// `columns` is given.
    pub name: String,
    /// CSV file (UCI-style datasets).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Column roles: `num`, `skip`, `label` or `code:A/B/...`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
    /// Label values in class-index order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
    /// Bin a numeric label into this many quantile classes instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantile: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratify: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    /// Use only the first rows of the MNIST training / test files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_subset: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_subset: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: String,
    pub threshold: f64,
    #[serde(rename = "T")]
    pub duration: f64,
    pub dt: f64,
    pub input: InputMode,
    /// Per-step spike probability at normalized value 1.
    pub rate: f64,
    pub init: InitKind,
    pub init_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub repeats: usize,
    pub out_dir: PathBuf,
    pub eval_mode: EvalMode,
    /// Record real elapsed seconds in the metrics files. Off by default so
    /// that metrics are byte-for-byte reproducible; timings always go to the
    /// log.
    pub wall_clock: bool,
}

/// Fully resolved configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub run: RunSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialModel {
    layers: Option<String>,
    threshold: Option<f64>,
    #[serde(rename = "T")]
    duration: Option<f64>,
    dt: Option<f64>,
    input: Option<InputMode>,
    rate: Option<f64>,
    init: Option<InitKind>,
    init_std: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialOptim {
    lr: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    eps: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialRun {
    seed: Option<u64>,
    repeats: Option<usize>,
    out_dir: Option<PathBuf>,
    eval_mode: Option<EvalMode>,
    wall_clock: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    dataset: DatasetConfig,
    #[serde(default)]
    model: PartialModel,
    #[serde(default)]
    optim: PartialOptim,
    #[serde(default)]
    run: PartialRun,
}

struct Preset {
    layers: &'static str,
    n_train: Option<usize>,
    path: Option<&'static str>,
    mnist: bool,
}

fn preset(name: &str) -> Option<Preset> {
    let uci = |layers, n_train, path| Preset {
        layers,
        n_train: Some(n_train),
        path: Some(path),
        mnist: false,
    };
    Some(match name {
        "iris" => uci("4-20-3", 90, "data/uci/iris.csv"),
        "wbc" => uci("9-20-2", 455, "data/uci/wbc.csv"),
        "abalone" => uci("8-50-2", 2000, "data/uci/abalone.csv"),
        "yeast" => uci("8-50-10", 990, "data/uci/yeast.csv"),
        "mnist" => Preset {
            layers: "784-800-10",
            n_train: None,
            path: None,
            mnist: true,
        },
        _ => return None,
    })
}

impl RunConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text)
    }

    /// Parses and fills defaults. Unknown keys are rejected by name.
    pub fn from_toml(text: &str) -> Result<Self> {
        let partial: PartialConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let config = resolve(partial)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn is_mnist(&self) -> bool {
        self.dataset.name == "mnist"
    }

    pub fn network(&self) -> Result<NetworkSpec> {
        NetworkSpec::parse(&self.model.layers)
    }

    pub fn neuron(&self) -> Result<NeuronConfig> {
        NeuronConfig::new(self.model.threshold, self.model.duration, self.model.dt)
    }

    pub fn init_scheme(&self) -> InitScheme {
        match self.model.init {
            InitKind::Gaussian => InitScheme::Gaussian {
                std: self.model.init_std,
            },
            InitKind::UniformFanin => InitScheme::UniformFanIn,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.optim.lr,
            beta1: self.optim.beta1,
            beta2: self.optim.beta2,
            eps: self.optim.eps,
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.dataset.split_seed.unwrap_or(self.run.seed)
    }

    /// CSV layout: explicit `columns` if given, otherwise the built-in one for
    /// the dataset name.
    pub fn csv_schema(&self) -> Result<CsvSchema> {
        let d = &self.dataset;
        let mut schema = match &d.columns {
            Some(cols) => CsvSchema {
                name: d.name.clone(),
                columns: cols
                    .iter()
                    .map(|c| ColumnRole::parse(c))
                    .collect::<Result<_>>()?,
                labels: LabelEncoding::Classes(Vec::new()),
            },
            None => CsvSchema::preset(&d.name).ok_or_else(|| {
                Error::Config(format!(
                    "dataset `{}` has no built-in layout; give `columns`",
                    d.name
                ))
            })?,
        };
        if let Some(classes) = &d.classes {
            schema.labels = LabelEncoding::Classes(classes.clone());
        }
        if let Some(k) = d.quantile {
            schema.labels = LabelEncoding::Quantile(k);
        }
        if matches!(&schema.labels, LabelEncoding::Classes(c) if c.is_empty()) {
            return Err(Error::Config(format!(
                "dataset `{}` needs `classes` or `quantile`",
                d.name
            )));
        }
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.network()?;
        self.neuron()?;
        let m = &self.model;
        if !(m.rate > 0.0 && m.rate <= 1.0) {
            return Err(Error::Validation(format!(
                "model.rate must lie in (0,1], got {}",
                m.rate
            )));
        }
        if m.init == InitKind::Gaussian && !(m.init_std.is_finite() && m.init_std > 0.0) {
            return Err(Error::Validation(format!(
                "model.init_std must be positive, got {}",
                m.init_std
            )));
        }
        let o = &self.optim;
        if !(o.lr.is_finite() && o.lr >= 0.0) {
            return Err(Error::Validation(format!("optim.lr must be ≥ 0, got {}", o.lr)));
        }
        for (name, b) in [("beta1", o.beta1), ("beta2", o.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Validation(format!(
                    "optim.{name} must lie in [0,1), got {b}"
                )));
            }
        }
        if !(o.eps > 0.0) {
            return Err(Error::Validation(format!("optim.eps must be positive, got {}", o.eps)));
        }
        if o.batch_size == 0 {
            return Err(Error::Validation("optim.batch_size must be ≥ 1".into()));
        }
        if self.run.repeats == 0 {
            return Err(Error::Validation("run.repeats must be ≥ 1".into()));
        }
        if self.is_mnist() {
            if spec.input_len() != 784 || spec.output_len() != 10 {
                return Err(Error::Validation(format!(
                    "network `{spec}` does not map 28x28 images to 10 digits"
                )));
            }
        } else {
            let schema = self.csv_schema()?;
            if schema.feature_count() != spec.input_len() {
                return Err(Error::Validation(format!(
                    "dataset `{}` has {} features, network `{spec}` takes {}",
                    self.dataset.name,
                    schema.feature_count(),
                    spec.input_len()
                )));
            }
            let classes = match &schema.labels {
                LabelEncoding::Classes(c) => c.len(),
                LabelEncoding::Quantile(k) => *k,
            };
            if classes != spec.output_len() {
                return Err(Error::Validation(format!(
                    "dataset `{}` has {classes} classes, network `{spec}` has {} outputs",
                    self.dataset.name,
                    spec.output_len()
                )));
            }
            if self.dataset.path.is_none() {
                return Err(Error::Config("dataset.path is required".into()));
            }
            if self.dataset.n_train.is_none() {
                return Err(Error::Config("dataset.n_train is required".into()));
            }
        }
        Ok(())
    }
}

fn resolve(p: PartialConfig) -> Result<RunConfig> {
    let mut dataset = p.dataset;
    let preset = preset(&dataset.name);
    let mnist = preset.as_ref().is_some_and(|p| p.mnist);
    if let Some(pre) = &preset {
        if dataset.path.is_none() {
            dataset.path = pre.path.map(PathBuf::from);
        }
        if dataset.n_train.is_none() {
            dataset.n_train = pre.n_train;
        }
    }
    if mnist {
        let dir = Path::new("data/mnist");
        let fill = |slot: &mut Option<PathBuf>, file: &str| {
            if slot.is_none() {
                *slot = Some(dir.join(file));
            }
        };
        fill(&mut dataset.train_images, "train-images-idx3-ubyte");
        fill(&mut dataset.train_labels, "train-labels-idx1-ubyte");
        fill(&mut dataset.test_images, "t10k-images-idx3-ubyte");
        fill(&mut dataset.test_labels, "t10k-labels-idx1-ubyte");
    } else if dataset.stratify.is_none() {
        dataset.stratify = Some(true);
    }

    let pm = p.model;
    let layers = match (pm.layers, &preset) {
        (Some(l), _) => l,
        (None, Some(pre)) => pre.layers.to_string(),
        (None, None) => return Err(Error::Config("model.layers is required".into())),
    };
    let model = ModelConfig {
        layers,
        threshold: pm.threshold.unwrap_or(1.0),
        duration: pm.duration.unwrap_or(if mnist { 50.0 } else { 20.0 }),
        dt: pm.dt.unwrap_or(1.0),
        input: pm.input.unwrap_or(InputMode::Poisson),
        rate: pm.rate.unwrap_or(if mnist { 0.2 } else { 1.0 }),
        init: pm.init.unwrap_or(if mnist {
            InitKind::UniformFanin
        } else {
            InitKind::Gaussian
        }),
        init_std: pm.init_std.unwrap_or(0.05),
    };

    let po = p.optim;
    let optim = OptimConfig {
        lr: po.lr.unwrap_or(if mnist { 1e-3 } else { 5e-4 }),
        beta1: po.beta1.unwrap_or(0.9),
        beta2: po.beta2.unwrap_or(0.999),
        eps: po.eps.unwrap_or(1e-8),
        batch_size: po.batch_size.unwrap_or(if mnist { 100 } else { 10 }),
        epochs: po.epochs.unwrap_or(if mnist { 100 } else { 500 }),
    };

    let pr = p.run;
    let run = RunSection {
        seed: pr.seed.unwrap_or(0),
        repeats: pr.repeats.unwrap_or(if mnist { 1 } else { 5 }),
        out_dir: pr
            .out_dir
            .unwrap_or_else(|| Path::new("runs").join(&dataset.name)),
        eval_mode: pr.eval_mode.unwrap_or(EvalMode::Aggregate),
        wall_clock: pr.wall_clock.unwrap_or(false),
    };
    Ok(RunConfig {
        dataset,
        model,
        optim,
        run,
    })
}
