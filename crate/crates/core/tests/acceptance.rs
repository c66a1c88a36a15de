//! End-to-end acceptance checks, one printed verdict per criterion.
//!
//! Accuracy targets (1–6) report PASS/FAIL without failing the run; the
//! correctness properties (7–10) abort with a nonzero exit if violated.
//! Desk-scale MNIST runs take hours and only execute with `--ignored` or
//! `--include-ignored`:
//!
//! ```text
//! cargo test --release -p spikecount --test acceptance -- --ignored
//! ```

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use spikecount::config::RunConfig;
use spikecount::experiment::{run_training, TrainSummary};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    /// Reproduction target: reported, never fails the run.
    Target,
    /// Correctness property: a failure fails the run.
    Property,
}

enum Outcome {
    Pass,
    Fail,
    Skip,
}

struct Verdict {
    id: &'static str,
    title: &'static str,
    kind: Kind,
    outcome: Outcome,
    detail: String,
    elapsed: Duration,
}

impl Verdict {
    fn print(&self) {
        let tag = match self.outcome {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::Skip => "SKIP",
        };
        println!(
            "criterion {:<3} {tag}  {} — {} [{:.1}s]",
            self.id,
            self.title,
            self.detail,
            self.elapsed.as_secs_f64()
        );
    }
}

fn timed(
    id: &'static str,
    title: &'static str,
    kind: Kind,
    f: impl FnOnce() -> Option<(bool, String)>,
) -> Verdict {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let (outcome, detail) = match result {
        Some((true, d)) => (Outcome::Pass, d),
        Some((false, d)) => (Outcome::Fail, d),
        None => (Outcome::Skip, "data files missing (run scripts/fetch_datasets.py)".into()),
    };
    let v = Verdict { id, title, kind, outcome, detail, elapsed };
    v.print();
    v
}

fn train(name: &str, out: &Path, extra: &str) -> Option<TrainSummary> {
    let files: &[&str] = if name == "mnist" {
        &[
            "mnist/train-images-idx3-ubyte",
            "mnist/train-labels-idx1-ubyte",
            "mnist/t10k-images-idx3-ubyte",
            "mnist/t10k-labels-idx1-ubyte",
        ]
    } else {
        &[]
    };
    let csv = format!("uci/{name}.csv");
    let needed: Vec<&str> = if name == "mnist" { files.to_vec() } else { vec![&csv] };
    if needed.iter().any(|f| common::require(f).is_none()) {
        return None;
    }
    let text = common::config_for(
        name,
        &format!("{extra}\n[run]\nout_dir = {:?}\n", out.display().to_string()),
    );
    let text = merge_run_section(&text);
    let cfg = RunConfig::from_toml(&text).expect("acceptance config");
    Some(run_training(&cfg).expect("training run"))
}

/// Folds a second `[run]` header into the first so callers can add run keys.
fn merge_run_section(text: &str) -> String {
    let mut seen = false;
    text.lines()
        .filter(|l| {
            if l.trim() == "[run]" {
                let dup = seen;
                seen = true;
                !dup
            } else {
                true
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn uci_protocol(name: &str, out: &Path) -> Option<TrainSummary> {
    train(name, out, "[run]\nseed = 0\nrepeats = 5\n")
}

fn criterion_1(out: &Path) -> Option<(bool, String)> {
    let start = Instant::now();
    let s = uci_protocol("iris", out)?;
    let secs = start.elapsed().as_secs_f64();
    let (te, te_sd) = s.test_accuracy();
    let (tr, tr_sd) = s.train_accuracy();
    Some((
        te >= 0.96 && tr >= 0.99 && secs < 120.0,
        format!(
            "test {} ± {} (need ≥ 96%), train {} ± {} (need ≥ 99%), 5 seeds in {secs:.1}s",
            pct(te),
            pct(te_sd),
            pct(tr),
            pct(tr_sd)
        ),
    ))
}

fn criterion_2(out: &Path) -> Option<(bool, String)> {
    let start = Instant::now();
    let s = uci_protocol("wbc", out)?;
    let secs = start.elapsed().as_secs_f64();
    let (te, sd) = s.test_accuracy();
    Some((
        te >= 0.96 && secs < 180.0,
        format!("test {} ± {} (need ≥ 96%), 5 seeds in {secs:.1}s", pct(te), pct(sd)),
    ))
}

fn criterion_3(name: &str, min_train: f64, out: &Path) -> Option<(bool, String)> {
    let start = Instant::now();
    let s = uci_protocol(name, out)?;
    let secs = start.elapsed().as_secs_f64();
    let ratios: Vec<f64> = s
        .repeats
        .iter()
        .map(|r| r.epochs[49].loss / r.epochs[0].loss)
        .collect();
    let worst = ratios.iter().copied().fold(f64::MIN, f64::max);
    let (tr, sd) = s.train_accuracy();
    Some((
        worst < 0.8 && tr >= min_train && secs < 600.0,
        format!(
            "loss(ep50)/loss(ep1) per seed {:?} (need all < 0.8), train {} ± {} (need ≥ {}), {secs:.1}s",
            ratios.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            pct(tr),
            pct(sd),
            pct(min_train)
        ),
    ))
}

const SMOKE_EPOCHS: usize = 20;

fn mnist_smoke(out: &Path, extra: &str) -> Option<(f64, f64)> {
    let start = Instant::now();
    let s = train(
        "mnist",
        out,
        &format!("train_subset = 10000\n[optim]\nepochs = {SMOKE_EPOCHS}\n{extra}"),
    )?;
    Some((s.test_accuracy().0, start.elapsed().as_secs_f64()))
}

fn criterion_4(out: &Path) -> Option<(bool, String, f64)> {
    let (acc, secs) = mnist_smoke(out, "")?;
    Some((
        acc >= 0.955 && secs < 600.0,
        format!(
            "784-800-10, T=50, 10k-sample subset, {SMOKE_EPOCHS} epochs: test {} (need ≥ 95.5% within 10 min), {secs:.1}s",
            pct(acc)
        ),
        acc,
    ))
}

fn criterion_5(t50: Option<f64>, out: &Path) -> Option<(bool, String)> {
    let t50 = t50?;
    let (t10, secs) = mnist_smoke(out, "[model]\nT = 10\n")?;
    let gap = 100.0 * (t50 - t10);
    Some((
        gap.abs() <= 1.0,
        format!(
            "T=10 {} vs T=50 {} at {SMOKE_EPOCHS} epochs each: gap {gap:.2} pp (need ≤ 1.0), {secs:.1}s",
            pct(t10),
            pct(t50)
        ),
    ))
}

const CNN_SMOKE_EPOCHS: usize = 8;

fn criterion_6(out: &Path) -> Option<(bool, String)> {
    let start = Instant::now();
    let s = train(
        "mnist",
        out,
        &format!(
            "train_subset = 10000\n[model]\nlayers = \"28x28-12c5-2a-64c5-2a-10\"\n[optim]\nepochs = {CNN_SMOKE_EPOCHS}\n"
        ),
    )?;
    let secs = start.elapsed().as_secs_f64();
    let acc = s.test_accuracy().0;
    Some((
        acc >= 0.97 && secs < 1800.0,
        format!(
            "28x28-12c5-2a-64c5-2a-10, 10k-sample subset, {CNN_SMOKE_EPOCHS} epochs: test {} (need ≥ 97.0% within 30 min), {secs:.1}s",
            pct(acc)
        ),
    ))
}

fn criterion_7() -> Option<(bool, String)> {
    let start = Instant::now();
    let (mut checked, mut seed, mut worst) = (0, 0u64, 0f64);
    while checked < 100 {
        if let Some(inst) = common::random_dense_instance(seed, 1e-3) {
            worst = worst.max(common::max_fd_error(&inst));
            checked += 1;
        }
        seed += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    Some((
        worst <= 1e-5 && secs < 60.0,
        format!("{checked} random relaxed networks, worst relative error {worst:.2e} (need ≤ 1e-5)"),
    ))
}

fn criterion_8() -> Option<(bool, String)> {
    let start = Instant::now();
    let mismatches = (0..1000u64)
        .filter(|&s| {
            let (sim, agg) = common::equivalence_instance(10_000 + s);
            sim != agg
        })
        .count();
    let secs = start.elapsed().as_secs_f64();
    Some((
        mismatches == 0 && secs < 10.0,
        format!("1000 non-negative-current instances, {mismatches} count mismatches"),
    ))
}

fn criterion_9(first: &Path) -> Option<(bool, String)> {
    let before = fs::read(first.join("metrics_repeat0.csv")).ok()?;
    let before_all: Vec<Vec<u8>> = (0..5)
        .map(|r| fs::read(first.join(format!("metrics_repeat{r}.csv"))).unwrap())
        .collect();
    uci_protocol("iris", first)?;
    let same = (0..5).all(|r| {
        fs::read(first.join(format!("metrics_repeat{r}.csv"))).unwrap() == before_all[r]
    });
    Some((
        same && !before.is_empty(),
        format!(
            "Iris protocol rerun with seed 0: 5 metrics files {}",
            if same { "byte-identical" } else { "DIFFER" }
        ),
    ))
}

fn criterion_10() -> Option<(bool, String)> {
    let start = Instant::now();
    let mut worst_z: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, (v, steps)) in [(0.5, 50), (0.1, 20), (0.83, 50)].into_iter().enumerate() {
        let (mean, se) = common::poisson_mean(v, steps, 10_000, 77 + i as u64);
        let z = (mean - v * steps as f64) / se;
        worst_z = worst_z.max(z.abs());
        parts.push(format!("v={v},T={steps}: mean {mean:.3} vs {:.1} ({z:+.2} SE)", v * steps as f64));
    }
    let secs = start.elapsed().as_secs_f64();
    Some((worst_z <= 3.0 && secs < 5.0, format!("10⁴ draws each; {}", parts.join("; "))))
}

fn desk_mlp(out: &Path) -> Option<(bool, String)> {
    let start = Instant::now();
    let s = train("mnist", out, "")?;
    let secs = start.elapsed().as_secs_f64();
    let acc = s.test_accuracy().0;
    Some((
        acc >= 0.98 && secs < 7200.0,
        format!("full MNIST, 784-800-10: test {} (need ≥ 98.0% within 2 h), {secs:.0}s", pct(acc)),
    ))
}

fn desk_cnn(out: &Path) -> Option<(bool, String)> {
    let start = Instant::now();
    let s = train(
        "mnist",
        out,
        "[model]\nlayers = \"28x28-12c5-2a-64c5-2a-10\"\n",
    )?;
    let secs = start.elapsed().as_secs_f64();
    let acc = s.test_accuracy().0;
    Some((
        acc >= 0.985 && secs < 28_800.0,
        format!("full MNIST CNN: test {} (need ≥ 98.5% within 8 h), {secs:.0}s", pct(acc)),
    ))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let desk = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    let only_desk = args.iter().any(|a| a == "--ignored");
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir = |name: &str| tmp.path().join(name);
    let mut verdicts = Vec::new();

    if !only_desk {
        println!("acceptance criteria (accuracy targets are reported, correctness properties are enforced)");
        verdicts.push(timed("1", "Iris 4-20-3", Kind::Target, || criterion_1(&dir("iris"))));
        verdicts.push(timed("2", "WBC 9-20-2", Kind::Target, || criterion_2(&dir("wbc"))));
        verdicts.push(timed("3a", "Abalone 8-50-2 training behaviour", Kind::Target, || {
            criterion_3("abalone", 0.80, &dir("abalone"))
        }));
        verdicts.push(timed("3b", "Yeast 8-50-10 training behaviour", Kind::Target, || {
            criterion_3("yeast", 0.60, &dir("yeast"))
        }));
        let mut t50 = None;
        verdicts.push(timed("4", "MNIST MLP smoke scale", Kind::Target, || {
            criterion_4(&dir("mlp")).map(|(ok, d, acc)| {
                t50 = Some(acc);
                (ok, d)
            })
        }));
        verdicts.push(timed("5", "MNIST latency, T=10 vs T=50", Kind::Target, || {
            criterion_5(t50, &dir("mlp_t10"))
        }));
        verdicts.push(timed("6", "MNIST CNN smoke scale", Kind::Target, || criterion_6(&dir("cnn"))));
        verdicts.push(timed("7", "relaxed-gradient finite-difference oracle", Kind::Property, criterion_7));
        verdicts.push(timed("8", "simulation/aggregate equivalence", Kind::Property, criterion_8));
        verdicts.push(timed("9", "run determinism", Kind::Property, || criterion_9(&dir("iris"))));
        verdicts.push(timed("10", "Poisson encoder statistics", Kind::Property, criterion_10));
    }
    if desk {
        verdicts.push(timed("4d", "MNIST MLP desk scale", Kind::Target, || desk_mlp(&dir("mlp_full"))));
        verdicts.push(timed("6d", "MNIST CNN desk scale", Kind::Target, || desk_cnn(&dir("cnn_full"))));
    }

    let count = |f: fn(&Outcome) -> bool| verdicts.iter().filter(|v| f(&v.outcome)).count();
    println!(
        "acceptance summary: {} pass, {} fail, {} skipped",
        count(|o| matches!(o, Outcome::Pass)),
        count(|o| matches!(o, Outcome::Fail)),
        count(|o| matches!(o, Outcome::Skip)),
    );
    let broken: Vec<&str> = verdicts
        .iter()
        .filter(|v| v.kind == Kind::Property && matches!(v.outcome, Outcome::Fail))
        .map(|v| v.id)
        .collect();
    if broken.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("correctness criteria failed: {}", broken.join(", "));
        ExitCode::FAILURE
    }
}
