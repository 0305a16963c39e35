//! Learning-rate selection by k-fold cross-validation, test error, and the
//! local-stability curve `s(v)`.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::datasets::{Dataset, Label, LabelRule};
use crate::error::{Error, Result};
use crate::mlp::{train_to_zero_error, NetConfig, NetParams, TrainConfig};
use crate::ntk::KernelModel;
use crate::rng::{derive_seed, rng_from_seed};

pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_CV_EPOCHS: usize = 500;

/// Anything that maps row-major inputs to 1-based labels.
pub trait Classifier: Sync {
    fn dim(&self) -> usize;
    fn predict_batch(&self, inputs: &[f64]) -> Result<Vec<Label>>;
}

impl Classifier for NetParams {
    fn dim(&self) -> usize {
        self.config.d
    }

    fn predict_batch(&self, inputs: &[f64]) -> Result<Vec<Label>> {
        Ok(NetParams::predict_batch(self, inputs))
    }
}

impl Classifier for KernelModel {
    fn dim(&self) -> usize {
        KernelModel::dim(self)
    }

    fn predict_batch(&self, inputs: &[f64]) -> Result<Vec<Label>> {
        KernelModel::predict_batch(self, inputs)
    }
}

/// The generating rule used as a classifier.
#[derive(Debug, Clone)]
pub struct RuleClassifier {
    pub rule: LabelRule,
    pub d: usize,
}

impl Classifier for RuleClassifier {
    fn dim(&self) -> usize {
        self.d
    }

    fn predict_batch(&self, inputs: &[f64]) -> Result<Vec<Label>> {
        inputs
            .chunks_exact(self.d)
            .map(|x| {
                self.rule.classify(x).ok_or_else(|| {
                    Error::InvalidArgument(format!("rule {} has no closed form", self.rule.name()))
                })
            })
            .collect()
    }
}

/// Per-sample closure as a classifier.
pub struct FnClassifier<F> {
    pub d: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> Label + Sync> Classifier for FnClassifier<F> {
    fn dim(&self) -> usize {
        self.d
    }

    fn predict_batch(&self, inputs: &[f64]) -> Result<Vec<Label>> {
        Ok(inputs.chunks_exact(self.d).map(&self.f).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    /// 0-based fold id per sample.
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn validation(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] != fold).collect()
    }
}

pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || n < k {
        return Err(Error::InvalidArgument(format!(
            "need k >= 2 and n >= k for {k}-fold split of {n} samples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(FoldPlan { k, assignment, seed })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldScore {
    pub fold: usize,
    pub miss_rate: f64,
    pub diverged: bool,
}

/// Validation miss rate of each fold when training on its complement with
/// learning rate `eta`. Fold `f` always trains with the seed
/// `derive_seed(tcfg.seed, f)`, so etas are compared on identical
/// initializations and shuffles. Divergent runs score 1.
pub fn cv_fold_scores(
    eta: f64,
    ds: &Dataset,
    cfg: &NetConfig,
    tcfg: &TrainConfig,
    folds: &FoldPlan,
) -> Result<Vec<FoldScore>> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be > 0, got {eta}")));
    }
    if folds.len() != ds.len() {
        return Err(Error::DimensionMismatch {
            expected: ds.len(),
            actual: folds.len(),
        });
    }
    (0..folds.k)
        .into_par_iter()
        .map(|fold| {
            let train = ds.subset(&folds.training(fold));
            let val = ds.subset(&folds.validation(fold));
            let run = TrainConfig {
                eta,
                seed: derive_seed(tcfg.seed, fold as u64),
                ..*tcfg
            };
            match train_to_zero_error(cfg, &run, &train) {
                Ok(out) => Ok(FoldScore {
                    fold,
                    miss_rate: test_error(&out.params, &val)?,
                    diverged: false,
                }),
                Err(Error::Diverged { .. }) => Ok(FoldScore {
                    fold,
                    miss_rate: 1.0,
                    diverged: true,
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Mean of [`cv_fold_scores`].
pub fn cv_score(
    eta: f64,
    ds: &Dataset,
    cfg: &NetConfig,
    tcfg: &TrainConfig,
    folds: &FoldPlan,
) -> Result<f64> {
    let scores = cv_fold_scores(eta, ds, cfg, tcfg, folds)?;
    Ok(mean_miss(&scores))
}

fn mean_miss(scores: &[FoldScore]) -> f64 {
    scores.iter().map(|s| s.miss_rate).sum::<f64>() / scores.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSearchSpec {
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub coarse_points: usize,
    pub refine_rounds: usize,
    pub folds: usize,
    pub fold_seed: u64,
    /// Epoch cap for the CV training runs.
    pub max_epochs: usize,
}

impl Default for LrSearchSpec {
    fn default() -> Self {
        LrSearchSpec {
            grid_lo: 1e-4,
            grid_hi: 1.0,
            coarse_points: 7,
            refine_rounds: 2,
            folds: DEFAULT_FOLDS,
            fold_seed: 0,
            max_epochs: DEFAULT_CV_EPOCHS,
        }
    }
}

impl LrSearchSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid_lo > 0.0 && self.grid_lo < self.grid_hi && self.grid_hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < lo < hi, got [{}, {}]",
                self.grid_lo, self.grid_hi
            )));
        }
        if self.coarse_points < 3 {
            return Err(Error::InvalidArgument("need at least 3 coarse points".into()));
        }
        if self.refine_rounds > 20 {
            return Err(Error::InvalidArgument("at most 20 refinement rounds".into()));
        }
        Ok(())
    }

    /// Number of candidates the search evaluates.
    pub fn budget(&self) -> usize {
        self.coarse_points + self.refine_rounds * (self.coarse_points - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrCandidate {
    pub eta: f64,
    pub round: usize,
    pub score: f64,
    pub folds: Vec<FoldScore>,
}

impl LrCandidate {
    pub fn diverged(&self) -> bool {
        !self.folds.is_empty() && self.folds.iter().all(|f| f.diverged)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrSearch {
    pub best_eta: f64,
    pub best_score: f64,
    /// Candidates in evaluation order.
    pub table: Vec<LrCandidate>,
}

impl LrSearch {
    /// `eta,fold,miss_rate`, one line per fold per candidate; folds are 1-based.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "eta,fold,miss_rate")?;
        for c in &self.table {
            for f in &c.folds {
                writeln!(out, "{:e},{},{}", c.eta, f.fold + 1, f.miss_rate)?;
            }
        }
        Ok(())
    }
}

/// Coarse-to-fine search on a log grid for any fold scorer.
///
/// Candidates live on the lattice `lo · (hi/lo)^(i/M)`, with `M` chosen so
/// every refinement level is representable exactly in integers. The coarse
/// round places `coarse_points` nodes evenly across `[lo, hi]`. Refinement
/// round `r` adds `coarse_points − 1` new nodes around the incumbent at the
/// spacing of the coarse cell divided by `2^r`, nearest first, skipping
/// nodes outside the range or already evaluated. The lowest mean score wins;
/// ties go to the smaller eta.
pub fn search_lr_with<S>(spec: &LrSearchSpec, scorer: S) -> Result<LrSearch>
where
    S: Fn(f64) -> Result<Vec<FoldScore>> + Sync,
{
    spec.validate()?;
    let cells = spec.coarse_points - 1;
    let fine = 1i64 << spec.refine_rounds;
    let top = cells as i64 * fine;
    let (llo, lhi) = (spec.grid_lo.ln(), spec.grid_hi.ln());
    let eta_at = |i: i64| {
        if i == 0 {
            spec.grid_lo
        } else if i == top {
            spec.grid_hi
        } else {
            (llo + (lhi - llo) * i as f64 / top as f64).exp()
        }
    };

    let mut seen: BTreeMap<i64, LrCandidate> = BTreeMap::new();
    let mut table = Vec::with_capacity(spec.budget());
    let mut evaluate = |nodes: Vec<i64>, round: usize, seen: &mut BTreeMap<i64, LrCandidate>| -> Result<()> {
        let scored: Vec<(i64, Vec<FoldScore>)> = nodes
            .par_iter()
            .map(|&i| scorer(eta_at(i)).map(|s| (i, s)))
            .collect::<Result<_>>()?;
        for (i, folds) in scored {
            let c = LrCandidate {
                eta: eta_at(i),
                round,
                score: mean_miss(&folds),
                folds,
            };
            table.push(c.clone());
            seen.insert(i, c);
        }
        Ok(())
    };

    evaluate((0..=cells as i64).map(|c| c * fine).collect(), 0, &mut seen)?;
    for round in 1..=spec.refine_rounds {
        let best = incumbent(&seen);
        let step = fine >> round;
        let mut nodes = Vec::with_capacity(cells);
        let mut j = 1;
        while nodes.len() < cells {
            for i in [best - j * step, best + j * step] {
                if nodes.len() < cells && (0..=top).contains(&i) && !seen.contains_key(&i) {
                    nodes.push(i);
                }
            }
            j += 1;
        }
        evaluate(nodes, round, &mut seen)?;
    }

    if seen.values().all(LrCandidate::diverged) {
        return Err(Error::AllCandidatesDiverged);
    }
    let best = &seen[&incumbent(&seen)];
    Ok(LrSearch {
        best_eta: best.eta,
        best_score: best.score,
        table,
    })
}

/// Lattice index of the best candidate; the map is ordered by eta, so a
/// strict comparison keeps the smallest eta among ties.
fn incumbent(seen: &BTreeMap<i64, LrCandidate>) -> i64 {
    let mut best: Option<(i64, f64)> = None;
    for (&i, c) in seen {
        if best.is_none_or(|(_, s)| c.score < s) {
            best = Some((i, c.score));
        }
    }
    best.expect("at least one candidate").0
}

/// Cross-validated learning-rate search for an MLP on `ds`. `tcfg` supplies
/// batch size, loss and seed; its epoch cap is replaced by `spec.max_epochs`.
pub fn search_lr(ds: &Dataset, cfg: &NetConfig, tcfg: &TrainConfig, spec: &LrSearchSpec) -> Result<LrSearch> {
    spec.validate()?;
    let folds = make_folds(ds.len(), spec.folds, spec.fold_seed)?;
    let tcfg = TrainConfig {
        max_epochs: spec.max_epochs,
        ..*tcfg
    };
    search_lr_with(spec, |eta| cv_fold_scores(eta, ds, cfg, &tcfg, &folds))
}

/// Fraction of `ds` the classifier gets wrong.
pub fn test_error<C: Classifier + ?Sized>(clf: &C, ds: &Dataset) -> Result<f64> {
    if clf.dim() != ds.dim() {
        return Err(Error::DimensionMismatch {
            expected: clf.dim(),
            actual: ds.dim(),
        });
    }
    if ds.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    const CHUNK: usize = 4096;
    let d = ds.dim();
    let wrong = ds
        .inputs()
        .par_chunks(CHUNK * d)
        .zip(ds.labels().par_chunks(CHUNK))
        .map(|(x, y)| {
            let pred = clf.predict_batch(x)?;
            Ok(pred.iter().zip(y).filter(|(p, t)| p != t).count())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(wrong as f64 / ds.len() as f64)
}

fn perturbations(x: &[f64], v: f64, out: &mut Vec<f64>) {
    let d = x.len();
    for i in 0..d {
        for sign in [1.0, -1.0] {
            out.extend_from_slice(x);
            let at = out.len() - d + i;
            out[at] += sign * v;
        }
    }
}

/// True iff none of the `2d` moves `x ± v e_i` changes the predicted class.
pub fn v_stable<C: Classifier + ?Sized>(clf: &C, x: &[f64], v: f64) -> Result<bool> {
    if x.len() != clf.dim() {
        return Err(Error::DimensionMismatch {
            expected: clf.dim(),
            actual: x.len(),
        });
    }
    if !(v >= 0.0) {
        return Err(Error::InvalidArgument(format!("perturbation {v} must be >= 0")));
    }
    let mut batch = x.to_vec();
    perturbations(x, v, &mut batch);
    let pred = clf.predict_batch(&batch)?;
    Ok(pred[1..].iter().all(|&p| p == pred[0]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub v_values: Vec<f64>,
    pub s_values: Vec<f64>,
    pub n_test: usize,
}

impl StabilityReport {
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "v,s")?;
        for (v, s) in self.v_values.iter().zip(&self.s_values) {
            writeln!(out, "{v:e},{s}")?;
        }
        Ok(())
    }
}

/// `n` log-spaced points in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == 0 {
                    lo
                } else if i == n - 1 {
                    hi
                } else {
                    (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp()
                }
            })
            .collect(),
    }
}

pub fn default_v_grid() -> Vec<f64> {
    log_grid(1e-2, 1e1, 32)
}

/// Fraction of test points that are stable at `v`. A point counts at `v`
/// only if it is stable at every grid value up to and including `v`, which
/// makes the curve nonincreasing for any classifier; for classifiers whose
/// stable sets are nested (such as the label rules) this is the plain
/// pointwise fraction. Once a point fails it is not evaluated again.
pub fn stability_curve<C: Classifier + ?Sized>(clf: &C, test: &Dataset, v_grid: &[f64]) -> Result<StabilityReport> {
    if clf.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: clf.dim(),
            actual: test.dim(),
        });
    }
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    if v_grid.iter().any(|v| !(*v >= 0.0)) || v_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("v grid must be ascending and >= 0".into()));
    }
    const CHUNK: usize = 64;
    let d = test.dim();
    let counts = test
        .inputs()
        .par_chunks(CHUNK * d)
        .map(|xs| -> Result<Vec<usize>> {
            let base = clf.predict_batch(xs)?;
            let mut alive: Vec<usize> = (0..base.len()).collect();
            let mut stable = Vec::with_capacity(v_grid.len());
            let mut batch = Vec::new();
            for &v in v_grid {
                if alive.is_empty() {
                    stable.push(0);
                    continue;
                }
                batch.clear();
                for &a in &alive {
                    perturbations(&xs[a * d..(a + 1) * d], v, &mut batch);
                }
                let pred = clf.predict_batch(&batch)?;
                let mut groups = pred.chunks_exact(2 * d);
                alive.retain(|&a| {
                    let g = groups.next().expect("one group per live point");
                    g.iter().all(|&p| p == base[a])
                });
                stable.push(alive.len());
            }
            Ok(stable)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = test.len();
    let s_values = (0..v_grid.len())
        .map(|g| counts.iter().map(|c| c[g]).sum::<usize>() as f64 / n as f64)
        .collect();
    Ok(StabilityReport {
        v_values: v_grid.to_vec(),
        s_values,
        n_test: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::generate;
    use proptest::prelude::*;

    #[test]
    fn fold_sizes() {
        let p = make_folds(100, 10, 3).unwrap();
        let mut all: Vec<usize> = (0..10).flat_map(|f| p.validation(f)).collect();
        assert!((0..10).all(|f| p.validation(f).len() == 10));
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let p = make_folds(101, 10, 3).unwrap();
        let mut sizes: Vec<usize> = (0..10).map(|f| p.validation(f).len()).collect();
        sizes.sort();
        assert_eq!(sizes, [vec![10; 9], vec![11]].concat());
        assert_eq!(make_folds(101, 10, 3).unwrap(), p);
        assert!(make_folds(5, 10, 0).is_err());
        assert!(make_folds(5, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_and_balance(n in 2usize..300, k in 2usize..12, seed in any::<u64>()) {
            prop_assume!(n >= k);
            let p = make_folds(n, k, seed).unwrap();
            let sizes: Vec<usize> = (0..k).map(|f| p.validation(f).len()).collect();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for f in 0..k {
                prop_assert_eq!(p.training(f).len() + p.validation(f).len(), n);
            }
        }

        #[test]
        fn search_stays_in_range(lo_exp in -6.0f64..-1.0, span in 0.5f64..5.0, target in -8.0f64..2.0,
                                 cp in 3usize..9, rounds in 0usize..4) {
            let spec = LrSearchSpec {
                grid_lo: 10f64.powf(lo_exp),
                grid_hi: 10f64.powf(lo_exp + span),
                coarse_points: cp,
                refine_rounds: rounds,
                ..Default::default()
            };
            let r = search_lr_with(&spec, |eta| Ok(vec![mock(eta, 10f64.powf(target))])).unwrap();
            prop_assert!(r.best_eta >= spec.grid_lo && r.best_eta <= spec.grid_hi);
            prop_assert_eq!(r.table.len(), spec.budget());
        }
    }

    fn mock(eta: f64, at: f64) -> FoldScore {
        FoldScore {
            fold: 0,
            miss_rate: (eta.log10() - at.log10()).abs() / 10.0,
            diverged: false,
        }
    }

    #[test]
    fn search_finds_minimum_of_unimodal_score() {
        let spec = LrSearchSpec::default();
        let r = search_lr_with(&spec, |eta| Ok(vec![mock(eta, 1e-2)])).unwrap();
        // Coarse spacing is 4/6 decades; after two halvings one cell is 1/6 decade.
        let cell = 4.0 / 6.0 / 4.0;
        assert!((r.best_eta.log10() + 2.0).abs() <= cell + 1e-12, "best {}", r.best_eta);
        assert_eq!(r.table.len(), 7 + 2 * 6);
        let mut etas: Vec<f64> = r.table.iter().map(|c| c.eta).collect();
        etas.sort_by(f64::total_cmp);
        etas.dedup();
        assert_eq!(etas.len(), r.table.len());
    }

    #[test]
    fn ties_prefer_smaller_eta() {
        let spec = LrSearchSpec::default();
        let r = search_lr_with(&spec, |_| Ok(vec![mock(1.0, 1.0)])).unwrap();
        assert_eq!(r.best_eta, spec.grid_lo);
    }

    #[test]
    fn all_diverged_is_an_error() {
        let spec = LrSearchSpec::default();
        let out = search_lr_with(&spec, |_| {
            Ok(vec![FoldScore {
                fold: 0,
                miss_rate: 1.0,
                diverged: true,
            }])
        });
        assert!(matches!(out, Err(Error::AllCandidatesDiverged)));
    }

    #[test]
    fn lr_table_csv() {
        let spec = LrSearchSpec {
            refine_rounds: 0,
            coarse_points: 3,
            grid_lo: 0.01,
            grid_hi: 1.0,
            ..Default::default()
        };
        let r = search_lr_with(&spec, |eta| {
            Ok(vec![mock(eta, 0.1), FoldScore { fold: 1, ..mock(eta, 0.1) }])
        })
        .unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 6);
        assert!(text.starts_with("eta,fold,miss_rate\n1e-2,1,0.1\n"));
        assert!((r.best_eta - 0.1).abs() < 1e-15);
    }

    #[test]
    fn oracle_flipped_and_constant_classifiers() {
        let rule = LabelRule::k_local(2);
        let ds = generate(&rule, 4000, 6, 10).unwrap();
        let oracle = RuleClassifier { rule: rule.clone(), d: 6 };
        assert_eq!(test_error(&oracle, &ds).unwrap(), 0.0);
        let flipped = FnClassifier {
            d: 6,
            f: |x: &[f64]| 3 - rule.classify(x).unwrap(),
        };
        assert_eq!(test_error(&flipped, &ds).unwrap(), 1.0);
        let constant = FnClassifier { d: 6, f: |_: &[f64]| 1 };
        let e = test_error(&constant, &ds).unwrap();
        // 4 binomial standard deviations at p = 1/2.
        assert!((e - 0.5).abs() < 4.0 * (0.25f64 / 4000.0).sqrt(), "{e}");
        assert!(matches!(
            test_error(&FnClassifier { d: 5, f: |_: &[f64]| 1 }, &ds),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn test_error_is_permutation_invariant() {
        let rule = LabelRule::k_local(1);
        let ds = generate(&rule, 500, 4, 1).unwrap();
        let clf = FnClassifier {
            d: 4,
            f: |x: &[f64]| if x[1] > 0.0 { 1 } else { 2 },
        };
        let mut rows: Vec<usize> = (0..500).collect();
        rows.shuffle(&mut rng_from_seed(2));
        assert_eq!(
            test_error(&clf, &ds).unwrap(),
            test_error(&clf, &ds.subset(&rows)).unwrap()
        );
    }

    #[test]
    fn v_stability_hand_cases() {
        let clf = RuleClassifier {
            rule: LabelRule::k_local(2),
            d: 4,
        };
        assert!(v_stable(&clf, &[3.0, 3.0, 3.0, 3.0], 1.0).unwrap());
        assert!(!v_stable(&clf, &[0.5, 3.0, 3.0, 3.0], 1.0).unwrap());
        assert!(v_stable(&clf, &[0.5, 3.0, -0.1, 3.0], 0.0).unwrap());
        assert!(v_stable(&clf, &[0.5, -3.0, 0.01, 0.01], 0.4).unwrap());
    }

    #[test]
    fn stability_curve_matches_pointwise_for_rules() {
        let rule = LabelRule::k_local(2);
        let ds = generate(&rule, 300, 5, 4).unwrap();
        let clf = RuleClassifier { rule, d: 5 };
        let grid = [0.0, 0.1, 0.5, 1.0, 2.0];
        let rep = stability_curve(&clf, &ds, &grid).unwrap();
        assert_eq!(rep.s_values[0], 1.0);
        for (g, &v) in grid.iter().enumerate() {
            let direct = ds.rows().filter(|x| v_stable(&clf, x, v).unwrap()).count();
            assert_eq!(rep.s_values[g], direct as f64 / 300.0);
        }
        assert!(rep.s_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn stability_curve_csv_and_errors() {
        let rule = LabelRule::k_local(1);
        let ds = generate(&rule, 10, 3, 4).unwrap();
        let clf = RuleClassifier { rule, d: 3 };
        assert!(stability_curve(&clf, &ds, &[1.0, 0.5]).is_err());
        let rep = stability_curve(&clf, &ds, &default_v_grid()).unwrap();
        assert_eq!(rep.v_values.len(), 32);
        assert_eq!(rep.v_values[0], 1e-2);
        assert_eq!(rep.v_values[31], 1e1);
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 33);
    }

    #[test]
    fn global_rule_is_more_stable_than_local() {
        let d = 100;
        let local = LabelRule::k_local(2);
        let global = LabelRule::k_global(2);
        let ds = generate(&local, 2000, d, 8).unwrap();
        let grid = log_grid(0.05, 5.0, 8);
        let sl = stability_curve(&RuleClassifier { rule: local, d }, &ds, &grid).unwrap();
        let sg = stability_curve(&RuleClassifier { rule: global, d }, &ds, &grid).unwrap();
        for (a, b) in sg.s_values.iter().zip(&sl.s_values) {
            assert!(a >= b, "global {a} < local {b}");
        }
    }

    #[test]
    fn cv_score_tiny_eta_is_chance_level() {
        let ds = generate(&LabelRule::k_local(2), 200, 10, 3).unwrap();
        let cfg = NetConfig::new(10, 1, 16, 2);
        let mut tcfg = TrainConfig::new(1e-8, 9);
        tcfg.max_epochs = 2;
        tcfg.check_every = 1;
        let folds = make_folds(200, 5, 1).unwrap();
        let s = cv_score(1e-8, &ds, &cfg, &tcfg, &folds).unwrap();
        assert!((0.0..=1.0).contains(&s));
        assert!((s - 0.5).abs() < 0.15, "score {s}");
        assert_eq!(s, cv_score(1e-8, &ds, &cfg, &tcfg, &folds).unwrap());
        assert!(cv_score(0.0, &ds, &cfg, &tcfg, &folds).is_err());
    }

    #[test]
    fn cv_score_row_permutation_invariant_for_fixed_folds() {
        // Permuting rows together with their fold ids leaves each fold's set unchanged; with full-batch
        // steps of zero size the score depends only on the fold sets.
        let ds = generate(&LabelRule::k_local(1), 120, 4, 3).unwrap();
        let cfg = NetConfig::new(4, 1, 8, 2);
        let mut tcfg = TrainConfig::new(1e-12, 2);
        tcfg.max_epochs = 1;
        tcfg.batch_size = 500;
        let folds = make_folds(120, 4, 9).unwrap();
        let mut rows: Vec<usize> = (0..120).collect();
        rows.shuffle(&mut rng_from_seed(5));
        let permuted = FoldPlan {
            assignment: rows.iter().map(|&r| folds.assignment[r]).collect(),
            ..folds.clone()
        };
        let a = cv_score(1e-12, &ds, &cfg, &tcfg, &folds).unwrap();
        let b = cv_score(1e-12, &ds.subset(&rows), &cfg, &tcfg, &permuted).unwrap();
        assert_eq!(a, b);
    }
}
