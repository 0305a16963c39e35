use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use depthloc::datasets::{generate, read_dataset, write_dataset, write_dataset_csv, Dataset, LabelRule};
use depthloc::error::{Error, Result};
use depthloc::evaluation::{
    default_v_grid, log_grid, search_lr, stability_curve, test_error, Classifier,
    LrSearchSpec, RuleClassifier,
};
use depthloc::harness::{emit_plot, parse_config, preset, run_suite, ExperimentSpec, Mode, PlotKind, PRESETS};
use depthloc::ising::{build_ising_dataset, IsingTask};
use depthloc::mlp::{
    read_params, train_error, train_to_zero_error, write_params, InitKind, LossKind, NetConfig, TrainConfig,
};
use depthloc::ntk::{ntk_fit, read_model, write_model, NtkSpec, Ridge};

#[derive(Parser)]
#[command(name = "depthloc", version, about = "Depth versus feature locality in ReLU networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a Gaussian dataset labelled by a k-local, k-global or random rule.
    GenData(GenData),
    /// Sample an Ising two-temperature dataset.
    IsingGen(IsingGen),
    /// Train a network to zero training error.
    Train(Train),
    /// Fit the infinite-width NTK classifier.
    Ntk(Ntk),
    /// Cross-validated learning-rate search.
    TuneLr(TuneLr),
    /// Learning-rate sweep from a config or preset.
    SweepLr(RunArgs),
    /// Stability curve s(v) of a model or of a labelling rule.
    Stability(Stability),
    /// Run experiments from a config or preset.
    Experiment(RunArgs),
    /// Render a results CSV as SVG.
    Plot(Plot),
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    KLocal,
    KGlobal,
    Random,
}

#[derive(Args)]
struct GenData {
    #[arg(long, value_enum)]
    rule: RuleArg,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Explicit 1-based coordinates for k_local (comma separated).
    #[arg(long, value_delimiter = ',')]
    indices: Option<Vec<usize>>,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write a CSV copy.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct IsingGen {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    beta1: f64,
    #[arg(long, default_value_t = 0.3)]
    beta2: f64,
    #[arg(long, default_value_t = 1)]
    sweeps: usize,
    #[arg(long, default_value_t = 10)]
    burn_in: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Glorot,
    He,
    Ntk,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    CrossEntropy,
    MeanSquare,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::CrossEntropy => LossKind::CrossEntropy,
            LossArg::MeanSquare => LossKind::MeanSquare,
        }
    }
}

#[derive(Args)]
struct NetArgs {
    /// Hidden layers L (0 is the linear perceptron).
    #[arg(long)]
    depth: usize,
    /// Hidden width H.
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Glorot)]
    init: InitArg,
    /// Bias scale of the NTK initialization.
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, value_enum, default_value_t = LossArg::CrossEntropy)]
    loss: LossArg,
    #[arg(long, default_value_t = 50)]
    batch: usize,
    #[arg(long, default_value_t = 50)]
    check_every: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl NetArgs {
    fn config(&self, ds: &Dataset) -> NetConfig {
        let init = match self.init {
            InitArg::Glorot => InitKind::Glorot,
            InitArg::He => InitKind::He,
            InitArg::Ntk => InitKind::NtkScaled { beta: self.beta },
        };
        NetConfig::new(ds.dim(), self.depth, self.width, ds.classes()).with_init(init)
    }

    fn train_config(&self, eta: f64, max_epochs: usize) -> TrainConfig {
        TrainConfig {
            eta,
            batch_size: self.batch,
            max_epochs,
            check_every: self.check_every,
            loss: self.loss.into(),
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long)]
    eta: f64,
    #[arg(long, default_value_t = 2500)]
    max_epochs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report the error on this dataset.
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Args)]
struct Ntk {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    depth: usize,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    /// Ridge relative to the mean Gram diagonal.
    #[arg(long, default_value_t = 1e-8)]
    jitter: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Args)]
struct TuneLr {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, default_value_t = 1e-4)]
    lo: f64,
    #[arg(long, default_value_t = 1.0)]
    hi: f64,
    #[arg(long, default_value_t = 7)]
    coarse_points: usize,
    #[arg(long, default_value_t = 2)]
    refine_rounds: usize,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Epoch cap of each fold run.
    #[arg(long, default_value_t = 500)]
    max_epochs: usize,
    /// Score table CSV (eta,fold,miss_rate).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Config file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name.
    #[arg(long)]
    preset: Option<String>,
    /// Results CSV (appended to; completed rows are skipped).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved configs and exit.
    #[arg(long)]
    print: bool,
    /// Override the number of repeats.
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Args)]
struct Stability {
    /// Model file (network parameters or NTK model).
    #[arg(long, conflicts_with = "rule")]
    model: Option<PathBuf>,
    /// Use a labelling rule as the classifier.
    #[arg(long, value_enum)]
    rule: Option<RuleArg>,
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Evaluation dataset; generated from --rule when omitted.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    n_test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    v_lo: Option<f64>,
    #[arg(long)]
    v_hi: Option<f64>,
    #[arg(long, default_value_t = 32)]
    points: usize,
    /// CSV (v,s); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Plot {
    #[arg(long)]
    input: PathBuf,
    /// error_vs_N, error_vs_depth, error_vs_eta or stability.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    out: PathBuf,
}

fn rule_of(arg: RuleArg, k: usize, indices: Option<Vec<usize>>) -> LabelRule {
    match (arg, indices) {
        (RuleArg::KLocal, Some(indices)) => LabelRule::KLocal { indices },
        (RuleArg::KLocal, None) => LabelRule::k_local(k),
        (RuleArg::KGlobal, _) => LabelRule::k_global(k),
        (RuleArg::Random, _) => LabelRule::Random,
    }
}

fn save(ds: &Dataset, out: &Path, csv: Option<&Path>) -> Result<()> {
    write_dataset(ds, out)?;
    if let Some(p) = csv {
        let f = File::create(p).map_err(|e| Error::io(p, e))?;
        write_dataset_csv(ds, BufWriter::new(f)).map_err(|e| Error::io(p, e))?;
    }
    println!("wrote {} samples (d = {}) to {}", ds.len(), ds.dim(), out.display());
    Ok(())
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_specs(args: &RunArgs) -> Result<Vec<ExperimentSpec>> {
    let mut specs = match (&args.config, &args.preset) {
        (Some(path), _) => vec![parse_config(path)?],
        (None, Some(name)) => preset(name)?,
        (None, None) => {
            return Err(Error::InvalidArgument(format!(
                "give --config or --preset ({})",
                PRESETS.join(", ")
            )))
        }
    };
    if let Some(r) = args.repeats {
        specs.iter_mut().for_each(|s| s.repeats = r);
    }
    Ok(specs)
}

fn run(args: RunArgs, sweep: bool) -> Result<()> {
    let specs = load_specs(&args)?;
    if sweep && specs.iter().any(|s| s.mode != Mode::LrSweep) {
        return Err(Error::Config("sweep-lr needs configs with an eta_grid".into()));
    }
    if args.print {
        let mut out = io::stdout().lock();
        let printed = specs
            .iter()
            .try_for_each(|s| writeln!(out, "{}", s.to_config_string()));
        return quiet_pipe(printed, Path::new("stdout"));
    }
    let out = args
        .out
        .ok_or_else(|| Error::InvalidArgument("--out is required".into()))?;
    let rows = run_suite(&specs, &out)?;
    println!("{} new rows in {}", rows.len(), out.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData(a) => {
            let ds = generate(&rule_of(a.rule, a.k, a.indices), a.n, a.d, a.seed)?;
            save(&ds, &a.out, a.csv.as_deref())
        }
        Cmd::IsingGen(a) => {
            let mut task = IsingTask::new(a.d, a.beta1, a.beta2, a.seed);
            task.sweeps = a.sweeps;
            task.burn_in = a.burn_in;
            let ds = build_ising_dataset(&task, a.n)?;
            save(&ds, &a.out, a.csv.as_deref())
        }
        Cmd::Train(a) => {
            let ds = read_dataset(&a.data)?;
            let cfg = a.net.config(&ds);
            let out = train_to_zero_error(&cfg, &a.net.train_config(a.eta, a.max_epochs), &ds)?;
            println!(
                "epochs {}  converged {}  train error {}",
                out.epochs,
                out.converged,
                train_error(&out.params, &ds)
            );
            if let Some(t) = &a.test {
                println!("test error {}", test_error(&out.params, &read_dataset(t)?)?);
            }
            if let Some(p) = &a.out {
                write_params(&out.params, p)?;
            }
            Ok(())
        }
        Cmd::Ntk(a) => {
            let ds = read_dataset(&a.data)?;
            let spec = NtkSpec::new(a.depth).with_beta(a.beta).with_ridge(Ridge::Relative(a.jitter));
            let model = ntk_fit(&ds, &spec)?;
            println!("training error {}", test_error(&model, &ds)?);
            if let Some(t) = &a.test {
                println!("test error {}", test_error(&model, &read_dataset(t)?)?);
            }
            if let Some(p) = &a.out {
                write_model(&model, p)?;
            }
            Ok(())
        }
        Cmd::TuneLr(a) => {
            let ds = read_dataset(&a.data)?;
            let cfg = a.net.config(&ds);
            let spec = LrSearchSpec {
                grid_lo: a.lo,
                grid_hi: a.hi,
                coarse_points: a.coarse_points,
                refine_rounds: a.refine_rounds,
                folds: a.folds,
                fold_seed: a.net.seed,
                max_epochs: a.max_epochs,
            };
            let found = search_lr(&ds, &cfg, &a.net.train_config(a.lo, a.max_epochs), &spec)?;
            println!("best eta {:e}  cv miss rate {}", found.best_eta, found.best_score);
            if let Some(p) = &a.out {
                let mut w = open_out(Some(p))?;
                found.write_csv(&mut w).map_err(|e| Error::io(p, e))?;
            }
            Ok(())
        }
        Cmd::SweepLr(a) => run(a, true),
        Cmd::Experiment(a) => run(a, false),
        Cmd::Stability(a) => {
            let rule = a.rule.map(|r| rule_of(r, a.k, None));
            let clf: Box<dyn Classifier> = match (&a.model, &rule) {
                (Some(p), _) => load_classifier(p)?,
                (None, Some(rule)) => {
                    let d = a
                        .d
                        .or_else(|| a.test.as_ref().and_then(|t| read_dataset(t).ok().map(|ds| ds.dim())))
                        .ok_or_else(|| Error::InvalidArgument("--d or --test is required with --rule".into()))?;
                    Box::new(RuleClassifier { rule: rule.clone(), d })
                }
                (None, None) => return Err(Error::InvalidArgument("give --model or --rule".into())),
            };
            let test = match (&a.test, &rule) {
                (Some(t), _) => read_dataset(t)?,
                (None, Some(rule)) => generate(rule, a.n_test, clf.dim(), a.seed)?,
                (None, None) => return Err(Error::InvalidArgument("--test is required with --model".into())),
            };
            let grid = match (a.v_lo, a.v_hi) {
                (None, None) if a.points == 32 => default_v_grid(),
                (lo, hi) => log_grid(lo.unwrap_or(1e-2), hi.unwrap_or(1e1), a.points),
            };
            let report = stability_curve(clf.as_ref(), &test, &grid)?;
            let mut w = open_out(a.out.as_deref())?;
            let written = report.write_csv(&mut w).and_then(|()| w.flush());
            quiet_pipe(written, a.out.as_deref().unwrap_or(Path::new("stdout")))
        }
        Cmd::Plot(a) => {
            emit_plot(&a.input, PlotKind::parse(&a.kind)?, &a.out)?;
            info!("wrote {}", a.out.display());
            Ok(())
        }
    }
}

/// A closed pipe on stdout (e.g. `| head`) is not an error.
fn quiet_pipe(r: io::Result<()>, path: &Path) -> Result<()> {
    match r {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => r.map_err(|e| Error::io(path, e)),
    }
}

/// Dispatches on the file magic.
fn load_classifier(path: &Path) -> Result<Box<dyn Classifier>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match bytes.get(..4) {
        Some(m) if m == depthloc::mlp::PARAMS_MAGIC => Ok(Box::new(read_params(path)?)),
        Some(m) if m == depthloc::ntk::MODEL_MAGIC => Ok(Box::new(read_model(path)?)),
        _ => Err(Error::Header(format!("{}: unknown model format", path.display()))),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
