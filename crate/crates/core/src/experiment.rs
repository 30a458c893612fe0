//! Trains every requested fusion method on the same data and compares them
//! on a held-out split; `bench` repeats this over independently seeded
//! synthetic tasks.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;
use serde::Serialize;

use crate::classifier::{argmax, predict_late_avg, train_on_features, TrainConfig};
use crate::error::{Error, Result};
use crate::fusion::FusionKind;
use crate::model::{round_sig9, Model, ModelSeeds};
use crate::synth::{generate_synthetic, SynthConfig};
use crate::types::{make_rng, stream, Dataset, Seed};

/// A method the harness can compare: a fusion function or late score
/// averaging of two single-view classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(into = "String")]
pub enum ExperimentMethod {
    Fusion(FusionKind),
    AvgLate,
}

impl ExperimentMethod {
    pub const ALL: [ExperimentMethod; 6] = [
        ExperimentMethod::Fusion(FusionKind::Concat),
        ExperimentMethod::Fusion(FusionKind::Sum),
        ExperimentMethod::Fusion(FusionKind::Product),
        ExperimentMethod::Fusion(FusionKind::FullBilinear),
        ExperimentMethod::Fusion(FusionKind::CompactBilinear),
        ExperimentMethod::AvgLate,
    ];

    pub fn token(self) -> &'static str {
        match self {
            ExperimentMethod::Fusion(k) => k.token(),
            ExperimentMethod::AvgLate => "avg-late",
        }
    }
}

impl fmt::Display for ExperimentMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl From<ExperimentMethod> for String {
    fn from(m: ExperimentMethod) -> String {
        m.token().to_string()
    }
}

impl FromStr for ExperimentMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "avg-late" {
            return Ok(ExperimentMethod::AvgLate);
        }
        s.parse::<FusionKind>()
            .map(ExperimentMethod::Fusion)
            .map_err(|_| Error::Usage(format!("unknown method `{s}` (expected concat, sum, product, full, compact or avg-late)")))
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(list: &str) -> Result<Vec<ExperimentMethod>> {
    let methods: Vec<ExperimentMethod> = list.split(',').map(|t| t.trim().parse()).collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::Usage("no methods given".into()));
    }
    Ok(methods)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub sketch_dim: usize,
    pub alpha: f64,
    pub train: TrainConfig,
    /// Root of the sketch, weight-init and shuffle streams. Overrides
    /// `train.shuffle_seed`.
    pub seed: Seed,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig { sketch_dim: 256, alpha: 1.0, train: TrainConfig::default(), seed: Seed(0) }
    }
}

/// Outcome of one method on one test split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodResult {
    pub method: ExperimentMethod,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub num_classes: usize,
    pub results: Vec<MethodResult>,
}

impl ExperimentReport {
    pub fn result(&self, method: ExperimentMethod) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method)
    }
}

/// Per-class accuracy from a confusion matrix; classes absent from the test
/// split get NaN.
pub fn per_class_accuracy(confusion: &[Vec<usize>]) -> Vec<f64> {
    confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                f64::NAN
            } else {
                row[c] as f64 / total as f64
            }
        })
        .collect()
}

fn summarize(method: ExperimentMethod, confusion: Vec<Vec<usize>>, loss_trace: Vec<f64>) -> MethodResult {
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..confusion.len()).map(|c| confusion[c][c]).sum();
    MethodResult {
        method,
        accuracy: correct as f64 / total as f64,
        per_class_accuracy: per_class_accuracy(&confusion),
        confusion,
        loss_trace,
    }
}

/// Evaluates a trained model on `test`.
pub fn evaluate(model: &Model, test: &Dataset) -> Result<Vec<Vec<usize>>> {
    let l = model.num_classes();
    if test.num_classes() > l {
        return Err(Error::shape(format!("test split has {} classes, model {l}", test.num_classes())));
    }
    let mut confusion = vec![vec![0; l]; l];
    for s in test.samples() {
        let p = model.predict_proba(&s.view_a, &s.view_b)?;
        confusion[s.label][argmax(&p)] += 1;
    }
    Ok(confusion)
}

fn view_features(d: &Dataset, alpha: f64, view_b: bool) -> Vec<Vec<f64>> {
    d.samples()
        .iter()
        .map(|s| {
            let v = if view_b { &s.view_b } else { &s.view_a };
            v.as_slice().iter().map(|x| alpha * x).collect()
        })
        .collect()
}

fn run_avg_late(train: &Dataset, test: &Dataset, cfg: &ExperimentConfig) -> Result<MethodResult> {
    let l = train.num_classes();
    let labels: Vec<usize> = train.labels().collect();
    let tcfg = TrainConfig { shuffle_seed: cfg.seed, ..cfg.train.clone() };
    let a = train_on_features(&view_features(train, cfg.alpha, false), &labels, l, &tcfg, cfg.seed)?;
    let b = train_on_features(&view_features(train, cfg.alpha, true), &labels, l, &tcfg, cfg.seed)?;
    let test = test.scaled(cfg.alpha)?;
    let mut confusion = vec![vec![0; l]; l];
    for s in test.samples() {
        let p = predict_late_avg(&a.params, &b.params, &s.view_a, &s.view_b)?;
        confusion[s.label][argmax(&p)] += 1;
    }
    let trace = a.loss_trace.iter().zip(&b.loss_trace).map(|(x, y)| 0.5 * (x + y)).collect();
    Ok(summarize(ExperimentMethod::AvgLate, confusion, trace))
}

/// Trains and evaluates one method. Every method draws from the same seeds,
/// so results do not depend on which other methods run or in what order.
pub fn run_method(train: &Dataset, test: &Dataset, method: ExperimentMethod, cfg: &ExperimentConfig) -> Result<MethodResult> {
    match method {
        ExperimentMethod::AvgLate => run_avg_late(train, test, cfg),
        ExperimentMethod::Fusion(kind) => {
            let seeds = ModelSeeds { hash: cfg.seed, init: cfg.seed, shuffle: cfg.seed };
            let (model, trace) = Model::train(train, kind, cfg.sketch_dim, cfg.alpha, &cfg.train, seeds)?;
            Ok(summarize(method, evaluate(&model, test)?, trace))
        }
    }
}

pub fn run_experiment(
    train: &Dataset,
    test: &Dataset,
    methods: &[ExperimentMethod],
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    if train.dim() != test.dim() || train.num_classes() != test.num_classes() {
        return Err(Error::shape("train and test splits disagree on dimension or class count"));
    }
    let results = methods.iter().map(|&m| run_method(train, test, m, cfg)).collect::<Result<_>>()?;
    Ok(ExperimentReport { config: cfg.clone(), num_classes: train.num_classes(), results })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub synth: SynthConfig,
    pub experiment: ExperimentConfig,
    pub methods: Vec<ExperimentMethod>,
    pub repeats: usize,
    pub seed: Seed,
}

impl BenchConfig {
    pub fn new(seed: Seed) -> Self {
        BenchConfig {
            synth: SynthConfig::default(),
            experiment: ExperimentConfig::default(),
            methods: ExperimentMethod::ALL.to_vec(),
            repeats: 5,
            seed,
        }
    }
}

/// One method aggregated over repeats.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: ExperimentMethod,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Summed over repeats.
    pub confusion: Vec<Vec<usize>>,
    pub per_class_accuracy: Vec<f64>,
    pub loss_traces: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub repeat_seeds: Vec<Seed>,
    pub methods: Vec<MethodSummary>,
}

impl BenchReport {
    pub fn summary(&self, method: ExperimentMethod) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs the experiment on `repeats` synthetic tasks, each generated and
/// trained from its own seed derived from the root seed.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repeats == 0 {
        return Err(Error::Config("repeats must be positive".into()));
    }
    if cfg.methods.is_empty() {
        return Err(Error::Usage("no methods given".into()));
    }
    let mut derive = make_rng(cfg.seed, stream::REPEAT);
    let repeat_seeds: Vec<Seed> = (0..cfg.repeats).map(|_| Seed(derive.random())).collect();

    let l = cfg.synth.num_classes;
    let mut methods: Vec<MethodSummary> = cfg
        .methods
        .iter()
        .map(|&method| MethodSummary {
            method,
            accuracies: Vec::new(),
            mean_accuracy: 0.0,
            std_accuracy: 0.0,
            confusion: vec![vec![0; l]; l],
            per_class_accuracy: Vec::new(),
            loss_traces: Vec::new(),
        })
        .collect();

    for &seed in &repeat_seeds {
        let (train, test) = generate_synthetic(&SynthConfig { seed, ..cfg.synth.clone() })?;
        let exp = ExperimentConfig { seed, ..cfg.experiment.clone() };
        let report = run_experiment(&train, &test, &cfg.methods, &exp)?;
        for (summary, result) in methods.iter_mut().zip(report.results) {
            summary.accuracies.push(result.accuracy);
            for (acc, row) in summary.confusion.iter_mut().zip(&result.confusion) {
                for (a, r) in acc.iter_mut().zip(row) {
                    *a += r;
                }
            }
            summary.loss_traces.push(result.loss_trace);
        }
    }
    for s in &mut methods {
        (s.mean_accuracy, s.std_accuracy) = mean_std(&s.accuracies);
        s.per_class_accuracy = per_class_accuracy(&s.confusion);
    }
    Ok(BenchReport { config: cfg.clone(), repeat_seeds, methods })
}

fn fmt_real(x: f64) -> String {
    round_sig9(x).to_string()
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

/// `method,accuracy,acc_class_0..acc_class_{L-1}`, one row per method.
pub fn write_accuracy_csv<'a, W: Write>(
    rows: impl IntoIterator<Item = (ExperimentMethod, f64, &'a [f64])>,
    num_classes: usize,
    out: W,
) -> Result<()> {
    let mut w = csv_writer(out);
    let mut head = vec!["method".to_string(), "accuracy".to_string()];
    head.extend((0..num_classes).map(|c| format!("acc_class_{c}")));
    w.write_record(&head)?;
    for (method, acc, per_class) in rows {
        let mut row = vec![method.token().to_string(), fmt_real(acc)];
        row.extend(per_class.iter().map(|&v| fmt_real(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows are true classes, columns predicted classes.
pub fn write_confusion_csv<W: Write>(confusion: &[Vec<usize>], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    let mut head = vec!["true".to_string()];
    head.extend((0..confusion.len()).map(|c| format!("pred_{c}")));
    w.write_record(&head)?;
    for (c, row) in confusion.iter().enumerate() {
        let mut rec = vec![c.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `method,mean_accuracy,std_accuracy,repeat_0..repeat_{R-1}`.
pub fn write_summary_csv<W: Write>(report: &BenchReport, out: W) -> Result<()> {
    let mut w = csv_writer(out);
    let mut head = vec!["method".to_string(), "mean_accuracy".to_string(), "std_accuracy".to_string()];
    head.extend((0..report.repeat_seeds.len()).map(|r| format!("repeat_{r}")));
    w.write_record(&head)?;
    for m in &report.methods {
        let mut row = vec![m.method.token().to_string(), fmt_real(m.mean_accuracy), fmt_real(m.std_accuracy)];
        row.extend(m.accuracies.iter().map(|&a| fmt_real(a)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `epoch,repeat_0..repeat_{R-1}` training-loss traces.
pub fn write_loss_csv<W: Write>(traces: &[Vec<f64>], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    let mut head = vec!["epoch".to_string()];
    head.extend((0..traces.len()).map(|r| format!("repeat_{r}")));
    w.write_record(&head)?;
    let epochs = traces.iter().map(Vec::len).max().unwrap_or(0);
    for e in 0..epochs {
        let mut row = vec![(e + 1).to_string()];
        row.extend(traces.iter().map(|t| t.get(e).map_or(String::new(), |&v| fmt_real(v))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.csv`, `summary.csv`, and `confusion_<method>.csv` /
/// `loss_<method>.csv` per method into `dir`. Returns the paths written.
pub fn write_bench_outputs(report: &BenchReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut create = |name: String| -> Result<fs::File> {
        let path = dir.join(name);
        let f = fs::File::create(&path)?;
        written.push(path);
        Ok(f)
    };
    write_accuracy_csv(
        report.methods.iter().map(|m| (m.method, m.mean_accuracy, m.per_class_accuracy.as_slice())),
        report.config.synth.num_classes,
        create("report.csv".into())?,
    )?;
    write_summary_csv(report, create("summary.csv".into())?)?;
    for m in &report.methods {
        write_confusion_csv(&m.confusion, create(format!("confusion_{}.csv", m.method))?)?;
        write_loss_csv(&m.loss_traces, create(format!("loss_{}.csv", m.method))?)?;
    }
    Ok(written)
}
