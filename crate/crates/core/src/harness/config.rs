//! Flat `key = value` experiment configs.
//!
//! One key per line; `#` starts a comment. Lists are comma separated.
//! Unknown and repeated keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::datasets::LabelRule;
use crate::error::{Error, Result};
use crate::evaluation::{log_grid, LrSearchSpec};
use crate::mlp::{InitKind, LossKind, NetConfig, DEFAULT_BATCH, DEFAULT_CHECK_EVERY, DEFAULT_MAX_EPOCHS};
use crate::ntk::{NtkSpec, Ridge, DEFAULT_BETA, DEFAULT_RELATIVE_JITTER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arch {
    Perceptron,
    Mlp { depth: usize, width: usize },
    Ntk { depth: usize },
}

impl Arch {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("bad architecture {s:?}; use perceptron, LxH or ntk:L"));
        if s == "perceptron" {
            return Ok(Arch::Perceptron);
        }
        if let Some(l) = s.strip_prefix("ntk:") {
            return Ok(Arch::Ntk {
                depth: l.parse().map_err(|_| bad())?,
            });
        }
        let (l, h) = s.split_once('x').ok_or_else(bad)?;
        let depth: usize = l.parse().map_err(|_| bad())?;
        let width: usize = h.parse().map_err(|_| bad())?;
        if depth == 0 || width == 0 {
            return Err(bad());
        }
        Ok(Arch::Mlp { depth, width })
    }

    /// `perceptron`, `LxH` or `ntk:L`, as written in result rows.
    pub fn descriptor(&self) -> String {
        match self {
            Arch::Perceptron => "perceptron".into(),
            Arch::Mlp { depth, width } => format!("{depth}x{width}"),
            Arch::Ntk { depth } => format!("ntk:{depth}"),
        }
    }

    pub fn depth(&self) -> usize {
        match *self {
            Arch::Perceptron => 0,
            Arch::Mlp { depth, .. } | Arch::Ntk { depth } => depth,
        }
    }

    pub fn is_ntk(&self) -> bool {
        matches!(self, Arch::Ntk { .. })
    }

    pub fn net_config(&self, d: usize, classes: usize, init: InitKind) -> Option<NetConfig> {
        match *self {
            Arch::Perceptron => Some(NetConfig::new(d, 0, 0, classes).with_init(init)),
            Arch::Mlp { depth, width } => Some(NetConfig::new(d, depth, width, classes).with_init(init)),
            Arch::Ntk { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Tune eta per dataset and architecture, then train `repeats` times.
    Errors,
    /// Train at every eta of `eta_grid`.
    LrSweep,
    /// Like `Errors`, and also record the stability curve of every model.
    Stability,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Errors => "errors",
            Mode::LrSweep => "lr_sweep",
            Mode::Stability => "stability",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tuner {
    Cv(LrSearchSpec),
    Fixed(f64),
}

impl Tuner {
    pub fn describe(&self) -> String {
        match self {
            Tuner::Cv(s) => format!(
                "coarse-to-fine log-grid {}-fold cross-validation over [{:e}, {:e}], {} coarse points, {} refinement rounds, {} epochs per fold run (stands in for Bayesian optimization)",
                s.folds, s.grid_lo, s.grid_hi, s.coarse_points, s.refine_rounds, s.max_epochs
            ),
            Tuner::Fixed(eta) => format!("fixed eta {eta:e}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub check_every: usize,
    pub init: InitName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitName {
    Glorot,
    He,
    Ntk,
}

impl InitName {
    fn name(self) -> &'static str {
        match self {
            InitName::Glorot => "glorot",
            InitName::He => "he",
            InitName::Ntk => "ntk",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsingSettings {
    pub sweeps: usize,
    pub burn_in: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub rule: LabelRule,
    pub d: usize,
    pub n_list: Vec<usize>,
    pub archs: Vec<Arch>,
    pub loss: LossKind,
    pub repeats: usize,
    pub seed: u64,
    pub n_test: usize,
    pub mode: Mode,
    pub eta_grid: Vec<f64>,
    pub beta_ntk: f64,
    pub jitter: f64,
    pub tuner: Tuner,
    pub train: TrainSettings,
    pub ising: IsingSettings,
    pub v_grid: Vec<f64>,
    /// Free text recorded in the run metadata (e.g. how the preset was scaled down).
    pub note: String,
}

impl ExperimentSpec {
    pub fn init(&self) -> InitKind {
        match self.train.init {
            InitName::Glorot => InitKind::Glorot,
            InitName::He => InitKind::He,
            InitName::Ntk => InitKind::NtkScaled { beta: self.beta_ntk },
        }
    }

    pub fn ntk_spec(&self, depth: usize) -> NtkSpec {
        NtkSpec::new(depth)
            .with_beta(self.beta_ntk)
            .with_ridge(Ridge::Relative(self.jitter))
    }

    /// Serialize back to config text; `parse_config_str` of the result is `self`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let join = |v: &[String]| v.join(",");
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("name", self.name.clone());
        put("rule", self.rule.name().into());
        put("d", self.d.to_string());
        match &self.rule {
            LabelRule::KLocal { indices } => put("indices", join(&indices.iter().map(|i| i.to_string()).collect::<Vec<_>>())),
            LabelRule::KGlobal { offsets } => put("k", offsets.len().to_string()),
            LabelRule::Ising { beta1, beta2 } => {
                put("ising.beta1", beta1.to_string());
                put("ising.beta2", beta2.to_string());
                put("ising.sweeps", self.ising.sweeps.to_string());
                put("ising.burn_in", self.ising.burn_in.to_string());
            }
            LabelRule::Random => {}
        }
        put("n_list", join(&self.n_list.iter().map(|n| n.to_string()).collect::<Vec<_>>()));
        put("archs", join(&self.archs.iter().map(Arch::descriptor).collect::<Vec<_>>()));
        put("loss", self.loss.name().into());
        put("repeats", self.repeats.to_string());
        put("seed", self.seed.to_string());
        put("n_test", self.n_test.to_string());
        put("mode", self.mode.name().into());
        if !self.eta_grid.is_empty() {
            put("eta_grid", join(&self.eta_grid.iter().map(|e| e.to_string()).collect::<Vec<_>>()));
        }
        put("beta_ntk", self.beta_ntk.to_string());
        put("jitter", self.jitter.to_string());
        match self.tuner {
            Tuner::Fixed(eta) => {
                put("tuner.kind", "fixed".into());
                put("tuner.eta", eta.to_string());
            }
            Tuner::Cv(t) => {
                put("tuner.kind", "cv".into());
                put("tuner.lo", t.grid_lo.to_string());
                put("tuner.hi", t.grid_hi.to_string());
                put("tuner.coarse_points", t.coarse_points.to_string());
                put("tuner.refine_rounds", t.refine_rounds.to_string());
                put("tuner.folds", t.folds.to_string());
                put("tuner.max_epochs", t.max_epochs.to_string());
            }
        }
        put("train.batch", self.train.batch_size.to_string());
        put("train.max_epochs", self.train.max_epochs.to_string());
        put("train.check_every", self.train.check_every.to_string());
        put("train.init", self.train.init.name().into());
        if self.mode == Mode::Stability {
            put("stability.v_lo", self.v_grid[0].to_string());
            put("stability.v_hi", self.v_grid[self.v_grid.len() - 1].to_string());
            put("stability.points", self.v_grid.len().to_string());
        }
        if !self.note.is_empty() {
            put("note", self.note.clone());
        }
        s
    }
}

const KEYS: &[&str] = &[
    "name", "rule", "d", "k", "indices", "n_list", "archs", "loss", "repeats", "seed", "n_test",
    "mode", "eta_grid", "beta_ntk", "jitter", "note",
    "tuner.kind", "tuner.eta", "tuner.lo", "tuner.hi", "tuner.coarse_points", "tuner.refine_rounds",
    "tuner.folds", "tuner.max_epochs",
    "train.batch", "train.max_epochs", "train.check_every", "train.init",
    "ising.beta1", "ising.beta2", "ising.sweeps", "ising.burn_in",
    "stability.v_lo", "stability.v_hi", "stability.points",
];

struct Entries(BTreeMap<String, String>);

impl Entries {
    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn required(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        self.take(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("key `{key}`: cannot parse {v:?}")))
            })
            .transpose()
    }

    fn or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        self.take(key)
            .map(|v| parse_list(key, &v))
            .transpose()
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|item| {
            item.trim()
                .parse()
                .map_err(|_| Error::Config(format!("key `{key}`: cannot parse list item {item:?}")))
        })
        .collect()
}

fn parse_loss(v: &str) -> Result<LossKind> {
    match v {
        "cross_entropy" | "ce" => Ok(LossKind::CrossEntropy),
        "mean_square" | "mse" => Ok(LossKind::MeanSquare),
        _ => Err(Error::Config(format!("unknown loss {v:?}"))),
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentSpec> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key `{k}`", lineno + 1)));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("duplicate key `{k}`")));
        }
    }
    build(Entries(map))
}

fn build(mut e: Entries) -> Result<ExperimentSpec> {
    let name = e.required("name")?;
    if name.is_empty() || name.contains(',') {
        return Err(Error::Config("name must be nonempty and contain no commas".into()));
    }
    let rule_name = e.required("rule")?;
    let d: usize = e
        .parsed("d")?
        .ok_or_else(|| Error::Config("missing required key `d`".into()))?;
    let k: Option<usize> = e.parsed("k")?;
    let indices: Option<Vec<usize>> = e.list("indices")?;
    let beta1: Option<f64> = e.parsed("ising.beta1")?;
    let beta2: Option<f64> = e.parsed("ising.beta2")?;
    let ising = IsingSettings {
        sweeps: e.or("ising.sweeps", 1)?,
        burn_in: e.or("ising.burn_in", 10)?,
    };
    let rule = match rule_name.as_str() {
        "k_local" | "k_global" => {
            let list = match (k, indices) {
                (_, Some(ix)) if rule_name == "k_global" => {
                    return Err(Error::Config(format!(
                        "`indices` only applies to k_local (got {ix:?}); k_global uses offsets 1..=k"
                    )))
                }
                (Some(k), Some(ix)) if ix.len() != k => {
                    return Err(Error::Config(format!("k = {k} but {} indices given", ix.len())))
                }
                (_, Some(ix)) => ix,
                (Some(k), None) => (1..=k).collect(),
                (None, None) => {
                    return Err(Error::Config(format!("missing required key `k` for rule {rule_name}")))
                }
            };
            if rule_name == "k_local" {
                LabelRule::KLocal { indices: list }
            } else {
                LabelRule::KGlobal { offsets: list }
            }
        }
        "random" => LabelRule::Random,
        "ising" => LabelRule::Ising {
            beta1: beta1.ok_or_else(|| Error::Config("missing required key `ising.beta1`".into()))?,
            beta2: beta2.ok_or_else(|| Error::Config("missing required key `ising.beta2`".into()))?,
        },
        other => return Err(Error::Config(format!("unknown rule {other:?}"))),
    };
    if !matches!(rule, LabelRule::Ising { .. }) && (beta1.is_some() || beta2.is_some()) {
        return Err(Error::Config("ising.* keys need rule = ising".into()));
    }
    if matches!(rule, LabelRule::Random | LabelRule::Ising { .. }) && k.is_some() {
        return Err(Error::Config(format!("`k` does not apply to rule {}", rule.name())));
    }
    rule.validate(d).map_err(|err| Error::Config(err.to_string()))?;
    if d == 0 || (matches!(rule, LabelRule::Ising { .. }) && d < 2) {
        return Err(Error::Config(format!("invalid d = {d}")));
    }

    let n_list: Vec<usize> = e
        .list("n_list")?
        .ok_or_else(|| Error::Config("missing required key `n_list`".into()))?;
    let archs = e
        .required("archs")?
        .split(',')
        .map(Arch::parse)
        .collect::<Result<Vec<_>>>()?;
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(Error::Config("n_list must be nonempty with N >= 1".into()));
    }
    let loss = match e.take("loss") {
        Some(v) => parse_loss(&v)?,
        None => LossKind::CrossEntropy,
    };
    let repeats = e.or("repeats", 10usize)?;
    let seed = e.or("seed", 0u64)?;
    let n_test = e.or("n_test", 10_000usize)?;
    if repeats == 0 || n_test == 0 {
        return Err(Error::Config("repeats and n_test must be >= 1".into()));
    }
    let eta_grid: Vec<f64> = e.list("eta_grid")?.unwrap_or_default();
    if eta_grid.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Config("eta_grid entries must be finite and > 0".into()));
    }
    let mode = match e.take("mode").as_deref() {
        None if !eta_grid.is_empty() => Mode::LrSweep,
        None | Some("errors") => Mode::Errors,
        Some("lr_sweep") => Mode::LrSweep,
        Some("stability") => Mode::Stability,
        Some(other) => return Err(Error::Config(format!("unknown mode {other:?}"))),
    };
    if mode == Mode::LrSweep && eta_grid.is_empty() {
        return Err(Error::Config("mode lr_sweep needs `eta_grid`".into()));
    }
    let beta_ntk = e.or("beta_ntk", DEFAULT_BETA)?;
    let jitter = e.or("jitter", DEFAULT_RELATIVE_JITTER)?;
    if !(beta_ntk >= 0.0 && beta_ntk.is_finite()) || !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(Error::Config("beta_ntk and jitter must be finite and >= 0".into()));
    }

    let defaults = LrSearchSpec::default();
    let kind = e.take("tuner.kind").unwrap_or_else(|| "cv".into());
    let fixed_eta: Option<f64> = e.parsed("tuner.eta")?;
    let cv = LrSearchSpec {
        grid_lo: e.or("tuner.lo", defaults.grid_lo)?,
        grid_hi: e.or("tuner.hi", defaults.grid_hi)?,
        coarse_points: e.or("tuner.coarse_points", defaults.coarse_points)?,
        refine_rounds: e.or("tuner.refine_rounds", defaults.refine_rounds)?,
        folds: e.or("tuner.folds", defaults.folds)?,
        fold_seed: 0,
        max_epochs: e.or("tuner.max_epochs", defaults.max_epochs)?,
    };
    let tuner = match kind.as_str() {
        "cv" => {
            if fixed_eta.is_some() {
                return Err(Error::Config("`tuner.eta` needs tuner.kind = fixed".into()));
            }
            cv.validate().map_err(|err| Error::Config(err.to_string()))?;
            if cv.folds < 2 {
                return Err(Error::Config("tuner.folds must be >= 2".into()));
            }
            Tuner::Cv(cv)
        }
        "fixed" => {
            let eta = fixed_eta.ok_or_else(|| Error::Config("missing required key `tuner.eta`".into()))?;
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::Config("tuner.eta must be finite and > 0".into()));
            }
            Tuner::Fixed(eta)
        }
        other => return Err(Error::Config(format!("unknown tuner.kind {other:?}"))),
    };

    let init = match e.take("train.init").as_deref() {
        None | Some("glorot") => InitName::Glorot,
        Some("he") => InitName::He,
        Some("ntk") => InitName::Ntk,
        Some(other) => return Err(Error::Config(format!("unknown train.init {other:?}"))),
    };
    let train = TrainSettings {
        batch_size: e.or("train.batch", DEFAULT_BATCH)?,
        max_epochs: e.or("train.max_epochs", DEFAULT_MAX_EPOCHS)?,
        check_every: e.or("train.check_every", DEFAULT_CHECK_EVERY)?,
        init,
    };
    if train.batch_size == 0 || train.check_every == 0 {
        return Err(Error::Config("train.batch and train.check_every must be >= 1".into()));
    }

    let v_lo: f64 = e.or("stability.v_lo", 1e-2)?;
    let v_hi: f64 = e.or("stability.v_hi", 1e1)?;
    let points = e.or("stability.points", 32usize)?;
    if !(v_lo > 0.0 && v_lo < v_hi && v_hi.is_finite()) || points < 2 {
        return Err(Error::Config("need 0 < stability.v_lo < stability.v_hi and >= 2 points".into()));
    }
    let v_grid = log_grid(v_lo, v_hi, points);
    let note = e.take("note").unwrap_or_default();
    debug_assert!(e.0.is_empty(), "unconsumed keys {:?}", e.0.keys());

    Ok(ExperimentSpec {
        name,
        rule,
        d,
        n_list,
        archs,
        loss,
        repeats,
        seed,
        n_test,
        mode,
        eta_grid,
        beta_ntk,
        jitter,
        tuner,
        train,
        ising,
        v_grid,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "name = t\nrule = k_local\nk = 2\nd = 10\nn_list = 100\narchs = 1x16\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let s = parse_config_str(MINIMAL).unwrap();
        assert_eq!(s.rule, LabelRule::k_local(2));
        assert_eq!(s.repeats, 10);
        assert_eq!(s.n_test, 10_000);
        assert_eq!(s.loss, LossKind::CrossEntropy);
        assert_eq!(s.mode, Mode::Errors);
        assert_eq!(s.tuner, Tuner::Cv(LrSearchSpec::default()));
        assert_eq!(s.train.max_epochs, 2500);
        assert_eq!(s.beta_ntk, 0.1);
        assert_eq!(s.v_grid.len(), 32);
    }

    #[test]
    fn missing_k_and_duplicates_are_errors() {
        let err = parse_config_str("name = t\nrule = k_local\nd = 10\nn_list = 100\narchs = 1x16\n").unwrap_err();
        assert!(err.to_string().contains("`k`"), "{err}");
        let err = parse_config_str(&format!("{MINIMAL}d = 11\n")).unwrap_err();
        assert!(err.to_string().contains("duplicate key `d`"), "{err}");
        let err = parse_config_str(&format!("{MINIMAL}depth = 3\n")).unwrap_err();
        assert!(err.to_string().contains("unknown key `depth`"), "{err}");
        let err = parse_config_str(&format!("{MINIMAL}repeats = many\n")).unwrap_err();
        assert!(err.to_string().contains("repeats"), "{err}");
    }

    #[test]
    fn architectures_parse() {
        assert_eq!(Arch::parse("perceptron").unwrap(), Arch::Perceptron);
        assert_eq!(Arch::parse(" 3x128").unwrap(), Arch::Mlp { depth: 3, width: 128 });
        assert_eq!(Arch::parse("ntk:7").unwrap(), Arch::Ntk { depth: 7 });
        for bad in ["3x", "x5", "0x10", "ntk", "mlp"] {
            assert!(Arch::parse(bad).is_err(), "{bad}");
        }
        for a in ["perceptron", "2x64", "ntk:0"] {
            assert_eq!(Arch::parse(a).unwrap().descriptor(), a);
        }
    }

    #[test]
    fn full_config_roundtrips() {
        let text = "# sweep\nname = sweep\nrule = k_global\nk = 3\nd = 20\nn_list = 500, 1000\n\
                    archs = 1x512,ntk:1\nloss = mse\nrepeats = 3\nseed = 9\nn_test = 2000\n\
                    eta_grid = 1e-3,1e-2\ntuner.kind = fixed\ntuner.eta = 0.05\ntrain.init = ntk\n\
                    train.max_epochs = 100\nnote = scaled down\n";
        let s = parse_config_str(text).unwrap();
        assert_eq!(s.mode, Mode::LrSweep);
        assert_eq!(s.loss, LossKind::MeanSquare);
        assert_eq!(s.tuner, Tuner::Fixed(0.05));
        assert_eq!(parse_config_str(&s.to_config_string()).unwrap(), s);

        let ising = "name = i\nrule = ising\nd = 50\nising.beta1 = 0.1\nising.beta2 = 0.3\n\
                     n_list = 100\narchs = 1x8\nmode = stability\n";
        let s = parse_config_str(ising).unwrap();
        assert_eq!(s.rule, LabelRule::Ising { beta1: 0.1, beta2: 0.3 });
        assert_eq!(parse_config_str(&s.to_config_string()).unwrap(), s);
    }

    #[test]
    fn rule_specific_keys_checked() {
        assert!(parse_config_str("name = t\nrule = ising\nd = 10\nn_list = 1\narchs = 1x2\n").is_err());
        assert!(parse_config_str(&format!("{MINIMAL}ising.beta1 = 0.1\n")).is_err());
        assert!(parse_config_str(&MINIMAL.replace("k = 2", "k = 11")).is_err());
        let s = parse_config_str(&MINIMAL.replace("k = 2", "indices = 3,7")).unwrap();
        assert_eq!(s.rule, LabelRule::KLocal { indices: vec![3, 7] });
        assert!(parse_config_str(&format!("{MINIMAL}mode = lr_sweep\n")).is_err());
        assert!(parse_config_str(&format!("{MINIMAL}tuner.kind = fixed\n")).is_err());
    }
}
