//! Experiment execution and the append-only results file.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

use super::config::{Arch, ExperimentSpec, Mode, Tuner};
use crate::datasets::{generate, Dataset, LabelRule};
use crate::error::{Error, Result};
use crate::evaluation::{search_lr, stability_curve, test_error, Classifier, RuleClassifier, StabilityReport};
use crate::ising::{build_ising_dataset, IsingTask};
use crate::mlp::{train_to_zero_error, TrainConfig};
use crate::ntk::ntk_fit;
use crate::rng::SeedHasher;

pub const RESULTS_HEADER: [&str; 14] = [
    "experiment", "rule", "d", "k", "n", "model", "loss", "eta", "repeat", "test_error",
    "train_epochs", "status", "wall_ms", "seed",
];

pub const STABILITY_HEADER: [&str; 6] = ["experiment", "model", "n", "repeat", "v", "s"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotConverged,
    Diverged,
    Failed,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::NotConverged => "not_converged",
            Status::Diverged => "diverged",
            Status::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "ok" => Status::Ok,
            "not_converged" => Status::NotConverged,
            "diverged" => Status::Diverged,
            "failed" => Status::Failed,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub experiment: String,
    pub rule: String,
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub model: String,
    pub loss: String,
    /// `None` for kernel models and failed tuning.
    pub eta: Option<f64>,
    pub repeat: usize,
    /// Diverged and failed runs are scored 1.
    pub test_error: f64,
    pub train_epochs: usize,
    pub status: Status,
    pub wall_ms: u64,
    pub seed: u64,
    pub stability: Option<StabilityReport>,
}

impl RunResult {
    fn record(&self) -> Vec<String> {
        vec![
            self.experiment.clone(),
            self.rule.clone(),
            self.d.to_string(),
            self.k.to_string(),
            self.n.to_string(),
            self.model.clone(),
            self.loss.clone(),
            self.eta.map(|e| format!("{e:e}")).unwrap_or_default(),
            self.repeat.to_string(),
            self.test_error.to_string(),
            self.train_epochs.to_string(),
            self.status.name().into(),
            self.wall_ms.to_string(),
            self.seed.to_string(),
        ]
    }

    fn key(&self, with_eta: bool) -> String {
        row_key(
            &self.experiment,
            &self.rule,
            self.d,
            self.k,
            self.n,
            &self.model,
            &self.loss,
            self.repeat,
            with_eta.then_some(self.eta).flatten(),
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn row_key(
    experiment: &str,
    rule: &str,
    d: usize,
    k: usize,
    n: usize,
    model: &str,
    loss: &str,
    repeat: usize,
    eta: Option<f64>,
) -> String {
    let eta = eta.map(|e| format!("{e:e}")).unwrap_or_default();
    format!("{experiment}|{rule}|{d}|{k}|{n}|{model}|{loss}|{repeat}|{eta}")
}

/// Append-only results CSV. Rows already present when the file is opened
/// are treated as done, so an interrupted sweep resumes without duplicates.
pub struct ResultStore {
    writer: Option<csv::Writer<File>>,
    stability: Option<csv::Writer<File>>,
    done: HashSet<String>,
    done_eta: HashSet<String>,
}

impl ResultStore {
    /// Keeps rows in memory only.
    pub fn memory() -> Self {
        ResultStore {
            writer: None,
            stability: None,
            done: HashSet::new(),
            done_eta: HashSet::new(),
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut store = ResultStore::memory();
        let fresh = !path.exists() || fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        if !fresh {
            trim_partial_line(path)?;
            for row in read_results(path)? {
                store.done.insert(row.key(false));
                store.done_eta.insert(row.key(true));
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            w.write_record(RESULTS_HEADER).map_err(|e| csv_err(path, e))?;
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        store.writer = Some(w);
        Ok(store)
    }

    /// Also append stability curves to `path`.
    pub fn with_stability(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let fresh = !path.exists() || fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        if !fresh {
            trim_partial_line(path)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            w.write_record(STABILITY_HEADER).map_err(|e| csv_err(path, e))?;
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        self.stability = Some(w);
        Ok(self)
    }

    fn is_done(&self, key: &str, with_eta: bool) -> bool {
        if with_eta {
            self.done_eta.contains(key)
        } else {
            self.done.contains(key)
        }
    }

    fn append(&mut self, row: &RunResult) -> Result<()> {
        // The results row marks completion, so the curve goes first.
        if let (Some(w), Some(rep)) = (self.stability.as_mut(), row.stability.as_ref()) {
            for (v, s) in rep.v_values.iter().zip(&rep.s_values) {
                w.write_record([
                    row.experiment.clone(),
                    row.model.clone(),
                    row.n.to_string(),
                    row.repeat.to_string(),
                    format!("{v:e}"),
                    s.to_string(),
                ])
                .map_err(|e| csv_err("stability csv", e))?;
            }
            w.flush().map_err(|e| Error::io("stability csv", e))?;
        }
        if let Some(w) = self.writer.as_mut() {
            w.write_record(row.record()).map_err(|e| csv_err("results csv", e))?;
            w.flush().map_err(|e| Error::io("results csv", e))?;
        }
        self.done.insert(row.key(false));
        self.done_eta.insert(row.key(true));
        Ok(())
    }
}

fn csv_err(path: impl AsRef<Path>, e: csv::Error) -> Error {
    let path = path.as_ref().to_path_buf();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{}: {other:?}", path.display())),
    }
}

/// Drop a trailing line left incomplete by an interrupted write.
fn trim_partial_line(path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.last() == Some(&b'\n') || bytes.is_empty() {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    warn!("{}: dropping incomplete trailing line", path.display());
    let mut f = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
    f.set_len(keep as u64).map_err(|e| Error::io(path, e))?;
    f.seek(SeekFrom::End(0)).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<RunResult>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != RESULTS_HEADER {
        return Err(Error::Header(format!("{}: not a results file", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str| Error::Validation(format!("{} row {}: bad {what}", path.display(), i + 1));
        let num = |j: usize, what: &str| rec[j].parse::<usize>().map_err(|_| bad(what));
        rows.push(RunResult {
            experiment: rec[0].to_string(),
            rule: rec[1].to_string(),
            d: num(2, "d")?,
            k: num(3, "k")?,
            n: num(4, "n")?,
            model: rec[5].to_string(),
            loss: rec[6].to_string(),
            eta: if rec[7].is_empty() {
                None
            } else {
                Some(rec[7].parse().map_err(|_| bad("eta"))?)
            },
            repeat: num(8, "repeat")?,
            test_error: rec[9].parse().map_err(|_| bad("test_error"))?,
            train_epochs: num(10, "train_epochs")?,
            status: Status::parse(&rec[11]).ok_or_else(|| bad("status"))?,
            wall_ms: rec[12].parse().map_err(|_| bad("wall_ms"))?,
            seed: rec[13].parse().map_err(|_| bad("seed"))?,
            stability: None,
        });
    }
    Ok(rows)
}

/// Seed of one result row, a function of the master seed and the row's
/// coordinates only.
pub fn row_seed(spec: &ExperimentSpec, n: usize, arch: &Arch, repeat: usize) -> u64 {
    SeedHasher::new(spec.seed)
        .str("row")
        .str(spec.rule.name())
        .word(spec.d as u64)
        .word(spec.rule.arity() as u64)
        .word(n as u64)
        .str(&arch.descriptor())
        .word(repeat as u64)
        .finish()
}

fn data_seed(spec: &ExperimentSpec, purpose: &str, n: usize) -> u64 {
    SeedHasher::new(spec.seed)
        .str(purpose)
        .str(spec.rule.name())
        .word(spec.d as u64)
        .word(spec.rule.arity() as u64)
        .word(n as u64)
        .finish()
}

fn make_dataset(spec: &ExperimentSpec, n: usize, seed: u64) -> Result<Dataset> {
    match spec.rule {
        LabelRule::Ising { beta1, beta2 } => {
            let mut task = IsingTask::new(spec.d, beta1, beta2, seed);
            task.sweeps = spec.ising.sweeps;
            task.burn_in = spec.ising.burn_in;
            build_ising_dataset(&task, n)
        }
        ref rule => generate(rule, n, spec.d, seed),
    }
}

/// Training set of size `n`; shared by every architecture of the spec.
pub fn training_set(spec: &ExperimentSpec, n: usize) -> Result<Dataset> {
    make_dataset(spec, n, data_seed(spec, "train", n))
}

/// Fresh test set, independent of every training set.
pub fn test_set(spec: &ExperimentSpec) -> Result<Dataset> {
    make_dataset(spec, spec.n_test, data_seed(spec, "test", spec.n_test))
}

struct Ctx<'a> {
    spec: &'a ExperimentSpec,
    test: &'a Dataset,
}

impl Ctx<'_> {
    fn blank(&self, n: usize, arch: &Arch, repeat: usize) -> RunResult {
        RunResult {
            experiment: self.spec.name.clone(),
            rule: self.spec.rule.name().into(),
            d: self.spec.d,
            k: self.spec.rule.arity(),
            n,
            model: arch.descriptor(),
            loss: self.spec.loss.name().into(),
            eta: None,
            repeat,
            test_error: 1.0,
            train_epochs: 0,
            status: Status::Failed,
            wall_ms: 0,
            seed: row_seed(self.spec, n, arch, repeat),
            stability: None,
        }
    }

    fn stability_of(&self, clf: &dyn Classifier) -> Result<Option<StabilityReport>> {
        if self.spec.mode != Mode::Stability {
            return Ok(None);
        }
        stability_curve(clf, self.test, &self.spec.v_grid).map(Some)
    }

    fn ntk_row(&self, train: &Dataset, arch: &Arch) -> RunResult {
        let start = Instant::now();
        let mut row = self.blank(train.len(), arch, 0);
        let outcome = ntk_fit(train, &self.spec.ntk_spec(arch.depth())).and_then(|model| {
            let err = test_error(&model, self.test)?;
            Ok((err, self.stability_of(&model)?))
        });
        match outcome {
            Ok((err, stability)) => {
                row.test_error = err;
                row.status = Status::Ok;
                row.stability = stability;
            }
            Err(e) => warn!("{} n={} {}: {e}", self.spec.name, train.len(), row.model),
        }
        row.wall_ms = start.elapsed().as_millis() as u64;
        row
    }

    fn train_row(&self, train: &Dataset, arch: &Arch, eta: f64, repeat: usize) -> RunResult {
        let start = Instant::now();
        let mut row = self.blank(train.len(), arch, repeat);
        row.eta = Some(eta);
        let cfg = arch
            .net_config(self.spec.d, train.classes(), self.spec.init())
            .expect("network architecture");
        let tcfg = TrainConfig {
            eta,
            batch_size: self.spec.train.batch_size,
            max_epochs: self.spec.train.max_epochs,
            check_every: self.spec.train.check_every,
            loss: self.spec.loss,
            seed: row.seed,
        };
        let outcome = train_to_zero_error(&cfg, &tcfg, train).and_then(|out| {
            let err = test_error(&out.params, self.test)?;
            let stability = self.stability_of(&out.params)?;
            Ok((out, err, stability))
        });
        match outcome {
            Ok((out, err, stability)) => {
                row.test_error = err;
                row.train_epochs = out.epochs;
                row.status = if out.converged { Status::Ok } else { Status::NotConverged };
                row.stability = stability;
            }
            Err(Error::Diverged { epoch }) => {
                row.train_epochs = epoch;
                row.status = Status::Diverged;
            }
            Err(e) => warn!("{} n={} {} repeat {repeat}: {e}", self.spec.name, train.len(), row.model),
        }
        row.wall_ms = start.elapsed().as_millis() as u64;
        row
    }

    fn tune(&self, train: &Dataset, arch: &Arch) -> Result<f64> {
        match self.spec.tuner {
            Tuner::Fixed(eta) => Ok(eta),
            Tuner::Cv(mut search) => {
                let cfg = arch
                    .net_config(self.spec.d, train.classes(), self.spec.init())
                    .expect("network architecture");
                let seed = SeedHasher::new(data_seed(self.spec, "tune", train.len()))
                    .str(&arch.descriptor())
                    .finish();
                search.fold_seed = seed;
                let mut tcfg = TrainConfig::new(search.grid_lo, seed ^ 1);
                tcfg.batch_size = self.spec.train.batch_size;
                tcfg.check_every = self.spec.train.check_every;
                tcfg.loss = self.spec.loss;
                let found = search_lr(train, &cfg, &tcfg, &search)?;
                info!(
                    "{} n={} {}: eta {:e} (cv miss rate {:.4})",
                    self.spec.name,
                    train.len(),
                    arch.descriptor(),
                    found.best_eta,
                    found.best_score
                );
                Ok(found.best_eta)
            }
        }
    }
}

/// Runs every (N, architecture, repeat) cell of `spec` not already in
/// `store` and returns the rows produced. In `lr_sweep` mode this is
/// [`lr_sweep`].
pub fn run_experiment(spec: &ExperimentSpec, store: &mut ResultStore) -> Result<Vec<RunResult>> {
    if spec.mode == Mode::LrSweep {
        return lr_sweep(spec, store);
    }
    let test = test_set(spec)?;
    let ctx = Ctx { spec, test: &test };
    let mut produced = Vec::new();
    if spec.mode == Mode::Stability {
        if let Some(row) = rule_stability_row(&ctx, store)? {
            store.append(&row)?;
            produced.push(row);
        }
    }
    for &n in &spec.n_list {
        let mut train: Option<Dataset> = None;
        for arch in &spec.archs {
            let pending: Vec<usize> = if arch.is_ntk() { 0..1 } else { 0..spec.repeats }
                .filter(|&r| !store.is_done(&ctx.blank(n, arch, r).key(false), false))
                .collect();
            if pending.is_empty() {
                continue;
            }
            let train = match &train {
                Some(t) => t,
                None => train.insert(training_set(spec, n)?),
            };
            let rows: Vec<RunResult> = if arch.is_ntk() {
                vec![ctx.ntk_row(train, arch)]
            } else {
                match ctx.tune(train, arch) {
                    Ok(eta) => pending
                        .par_iter()
                        .map(|&r| ctx.train_row(train, arch, eta, r))
                        .collect(),
                    Err(e) => {
                        warn!("{} n={n} {}: tuning failed: {e}", spec.name, arch.descriptor());
                        pending.iter().map(|&r| ctx.blank(n, arch, r)).collect()
                    }
                }
            };
            for row in rows {
                info!(
                    "{} n={} {} repeat {}: test error {:.4} ({})",
                    row.experiment,
                    row.n,
                    row.model,
                    row.repeat,
                    row.test_error,
                    row.status.name()
                );
                store.append(&row)?;
                produced.push(row);
            }
        }
    }
    Ok(produced)
}

/// Stability curve of the labelling rule itself, stored as model `rule`
/// with `n = 0`.
fn rule_stability_row(ctx: &Ctx, store: &ResultStore) -> Result<Option<RunResult>> {
    let spec = ctx.spec;
    if spec.rule.classify(&vec![0.0; spec.d]).is_none() {
        return Ok(None);
    }
    let mut row = ctx.blank(0, &Arch::Perceptron, 0);
    row.model = "rule".into();
    if store.is_done(&row.key(false), false) {
        return Ok(None);
    }
    let oracle = RuleClassifier {
        rule: spec.rule.clone(),
        d: spec.d,
    };
    row.test_error = test_error(&oracle, ctx.test)?;
    row.status = Status::Ok;
    row.stability = ctx.stability_of(&oracle)?;
    Ok(Some(row))
}

/// Trains every architecture at each eta of `spec.eta_grid` (no tuning).
/// Kernel architectures contribute one reference row per N.
pub fn lr_sweep(spec: &ExperimentSpec, store: &mut ResultStore) -> Result<Vec<RunResult>> {
    if spec.eta_grid.is_empty() {
        return Err(Error::Config(format!("{}: lr sweep needs eta_grid", spec.name)));
    }
    let test = test_set(spec)?;
    let ctx = Ctx { spec, test: &test };
    let mut produced = Vec::new();
    for &n in &spec.n_list {
        let train = training_set(spec, n)?;
        for arch in &spec.archs {
            let cells: Vec<(Option<f64>, usize)> = if arch.is_ntk() {
                vec![(None, 0)]
            } else {
                spec.eta_grid
                    .iter()
                    .flat_map(|&eta| (0..spec.repeats).map(move |r| (Some(eta), r)))
                    .collect()
            };
            let pending: Vec<(Option<f64>, usize)> = cells
                .into_iter()
                .filter(|&(eta, r)| {
                    let mut row = ctx.blank(n, arch, r);
                    row.eta = eta;
                    !store.is_done(&row.key(true), true)
                })
                .collect();
            let rows: Vec<RunResult> = pending
                .par_iter()
                .map(|&(eta, r)| match eta {
                    None => ctx.ntk_row(&train, arch),
                    Some(eta) => ctx.train_row(&train, arch, eta, r),
                })
                .collect();
            for row in rows {
                info!(
                    "{} n={} {} eta {:?} repeat {}: test error {:.4} ({})",
                    row.experiment,
                    row.n,
                    row.model,
                    row.eta,
                    row.repeat,
                    row.test_error,
                    row.status.name()
                );
                store.append(&row)?;
                produced.push(row);
            }
        }
    }
    Ok(produced)
}

/// Sidecar next to a results file describing how the runs were produced.
pub fn metadata_path(results: &Path) -> PathBuf {
    let mut p = results.as_os_str().to_owned();
    p.push(".meta");
    PathBuf::from(p)
}

pub fn stability_path(results: &Path) -> PathBuf {
    let stem = results.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    results.with_file_name(format!("{stem}_stability.csv"))
}

pub fn write_metadata(results: &Path, specs: &[ExperimentSpec]) -> Result<()> {
    let path = metadata_path(results);
    let mut out = String::new();
    for spec in specs {
        out.push_str(&format!("[{}]\n", spec.name));
        out.push_str(&format!("# tuner: {}\n", spec.tuner.describe()));
        if !spec.note.is_empty() {
            out.push_str(&format!("# note: {}\n", spec.note));
        }
        out.push_str(&spec.to_config_string());
        out.push('\n');
    }
    let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(&path, e))
}

/// Runs several specs into one results file (plus the stability file when
/// any spec records curves) and writes the metadata sidecar.
pub fn run_suite(specs: &[ExperimentSpec], results: &Path) -> Result<Vec<RunResult>> {
    write_metadata(results, specs)?;
    let mut store = ResultStore::open(results)?;
    if specs.iter().any(|s| s.mode == Mode::Stability) {
        store = store.with_stability(stability_path(results))?;
    }
    let mut all = Vec::new();
    for spec in specs {
        info!("experiment {}", spec.name);
        all.extend(run_experiment(spec, &mut store)?);
    }
    Ok(all)
}
