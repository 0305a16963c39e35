//! One-dimensional Ising chains sampled at two inverse temperatures.
//!
//! The energy is `H(x) = Σ_i σ_i σ_{i+1}` with periodic boundary
//! `σ_{d+1} = σ_1`, and configurations follow `P_β(x) ∝ exp(-β H(x))`.
//! Note the sign: there is no leading minus, so larger β favours
//! anti-aligned neighbours.

use rand::Rng as _;
use rayon::prelude::*;

use crate::datasets::{Dataset, DatasetMeta, Label, LabelRule};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpinConfig(Vec<i8>);

impl SpinConfig {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if let Some(s) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::InvalidArgument(format!("spin value {s} is not ±1")));
        }
        Ok(SpinConfig(spins))
    }

    pub fn spins(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_reals(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().map(|&s| s as f64)
    }

    /// Mean of `σ_i σ_{i+1}` over the chain.
    pub fn bond_correlation(&self) -> f64 {
        hamiltonian(self) as f64 / self.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsingTask {
    pub d: usize,
    pub beta1: f64,
    pub beta2: f64,
    /// Sweeps after burn-in; the state after the last one is returned.
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl IsingTask {
    pub fn new(d: usize, beta1: f64, beta2: f64, seed: u64) -> Self {
        IsingTask {
            d,
            beta1,
            beta2,
            sweeps: 1,
            burn_in: 10,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::InvalidArgument(format!(
                "ising chain needs d >= 2, got {}",
                self.d
            )));
        }
        if self.sweeps == 0 {
            return Err(Error::InvalidArgument("sweeps must be >= 1".into()));
        }
        LabelRule::Ising {
            beta1: self.beta1,
            beta2: self.beta2,
        }
        .validate(self.d)
    }
}

pub fn hamiltonian(c: &SpinConfig) -> i64 {
    let s = c.spins();
    let d = s.len();
    (0..d)
        .map(|i| (s[i] as i64) * (s[(i + 1) % d] as i64))
        .sum()
}

/// Metropolis acceptance probability `min(1, exp(-β ΔH))`.
pub fn acceptance_probability(beta: f64, delta_h: i64) -> f64 {
    if delta_h <= 0 {
        1.0
    } else {
        (-beta * delta_h as f64).exp()
    }
}

/// Energy change from flipping site `i`.
pub fn flip_delta(c: &SpinConfig, i: usize) -> i64 {
    let s = c.spins();
    let d = s.len();
    let left = s[(i + d - 1) % d] as i64;
    let right = s[(i + 1) % d] as i64;
    -2 * (s[i] as i64) * (left + right)
}

/// `d` single-flip attempts at uniformly chosen sites. A fixed visiting
/// order is not used: with ΔH = 0 moves always accepted it transports
/// domain walls deterministically and the chain does not mix.
fn sweep(spins: &mut [i8], accept: &[f64; 3], rng: &mut Rng) {
    let d = spins.len();
    for _ in 0..d {
        let i = rng.gen_range(0..d);
        let left = spins[(i + d - 1) % d];
        let right = spins[(i + 1) % d];
        // s * (left + right) ∈ {-2, 0, 2}; ΔH = -2 s (left + right).
        let align = (spins[i] * (left + right)) as i64;
        let p = accept[((align + 2) / 2) as usize];
        if p >= 1.0 || rng.gen::<f64>() < p {
            spins[i] = -spins[i];
        }
    }
}

/// Single-spin-flip Metropolis chain from a uniform random start. Runs
/// `burn_in + sweeps` full-lattice sweeps and returns the final state.
pub fn metropolis_sample(task: &IsingTask, beta: f64, seed: u64) -> Result<SpinConfig> {
    task.validate()?;
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be >= 0, got {beta}")));
    }
    let mut rng = rng_from_seed(seed);
    Ok(run_chain(task, beta, &mut rng))
}

fn run_chain(task: &IsingTask, beta: f64, rng: &mut Rng) -> SpinConfig {
    let mut spins: Vec<i8> = (0..task.d)
        .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
        .collect();
    // Indexed by (s * (left + right) + 2) / 2, i.e. ΔH = 4, 0, -4.
    let accept = [
        acceptance_probability(beta, 4),
        acceptance_probability(beta, 0),
        acceptance_probability(beta, -4),
    ];
    for _ in 0..task.burn_in + task.sweeps {
        sweep(&mut spins, &accept, rng);
    }
    SpinConfig(spins)
}

/// Exact `⟨σ_i σ_{i+1}⟩` on a periodic chain of length `d` from the 2×2
/// transfer matrix with eigenvalues `2 cosh β` and `-2 sinh β`.
pub fn exact_bond_correlation(beta: f64, d: usize) -> Result<f64> {
    if !(beta >= 0.0 && beta.is_finite()) || d < 2 {
        return Err(Error::InvalidArgument(format!(
            "need beta >= 0 and d >= 2, got beta={beta}, d={d}"
        )));
    }
    let t = beta.tanh();
    let ratio = -t;
    let num = t - ratio.powi(d as i32 - 1);
    let den = 1.0 + ratio.powi(d as i32);
    Ok(-num / den)
}

/// Samples draw β from `{β₁, β₂}` with equal probability; labels are 1 for
/// β₁ and 2 for β₂. Spins are stored as ±1.0.
pub fn build_ising_dataset(task: &IsingTask, n: usize) -> Result<Dataset> {
    task.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("need n >= 1 samples".into()));
    }
    let samples: Vec<(Label, SpinConfig)> = (0..n)
        .into_par_iter()
        .map(|mu| {
            let mut rng = rng_from_seed(derive_seed(task.seed, mu as u64));
            let (label, beta) = if rng.gen::<bool>() {
                (1, task.beta1)
            } else {
                (2, task.beta2)
            };
            (label, run_chain(task, beta, &mut rng))
        })
        .collect();
    let mut inputs = Vec::with_capacity(n * task.d);
    let mut labels = Vec::with_capacity(n);
    for (label, config) in samples {
        inputs.extend(config.to_reals());
        labels.push(label);
    }
    Dataset::new(
        inputs,
        labels,
        task.d,
        2,
        DatasetMeta {
            rule: LabelRule::Ising {
                beta1: task.beta1,
                beta2: task.beta2,
            },
            seed: task.seed,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(spins: &[i8]) -> SpinConfig {
        SpinConfig::new(spins.to_vec()).unwrap()
    }

    fn all_configs(d: usize) -> impl Iterator<Item = SpinConfig> {
        (0u32..1 << d).map(move |bits| {
            SpinConfig(
                (0..d)
                    .map(|i| if bits >> i & 1 == 1 { 1 } else { -1 })
                    .collect(),
            )
        })
    }

    fn enumerated_bond(beta: f64, d: usize) -> f64 {
        let (mut z, mut acc) = (0.0, 0.0);
        for c in all_configs(d) {
            let h = hamiltonian(&c) as f64;
            let w = (-beta * h).exp();
            z += w;
            acc += w * h / d as f64;
        }
        acc / z
    }

    #[test]
    fn hamiltonian_examples() {
        assert_eq!(hamiltonian(&cfg(&[1, 1, 1, 1])), 4);
        assert_eq!(hamiltonian(&cfg(&[1, -1, 1, -1])), -4);
        assert_eq!(hamiltonian(&cfg(&[1, 1, -1, -1])), 0);
    }

    #[test]
    fn spin_domain_enforced() {
        assert!(SpinConfig::new(vec![1, 0, -1]).is_err());
    }

    #[test]
    fn flip_delta_matches_recompute() {
        for c in all_configs(5) {
            for i in 0..5 {
                let mut flipped = c.0.clone();
                flipped[i] = -flipped[i];
                let diff = hamiltonian(&SpinConfig(flipped)) - hamiltonian(&c);
                assert_eq!(flip_delta(&c, i), diff);
            }
        }
    }

    #[test]
    fn detailed_balance_on_d4() {
        for beta in [0.0, 0.1, 0.3, 1.0] {
            for c in all_configs(4) {
                let pi_c = (-beta * hamiltonian(&c) as f64).exp();
                for i in 0..4 {
                    let mut f = c.0.clone();
                    f[i] = -f[i];
                    let c2 = SpinConfig(f);
                    let pi_c2 = (-beta * hamiltonian(&c2) as f64).exp();
                    // Proposal probability 1/d cancels from both sides.
                    let fwd = pi_c * acceptance_probability(beta, flip_delta(&c, i));
                    let bwd = pi_c2 * acceptance_probability(beta, flip_delta(&c2, i));
                    assert!((fwd - bwd).abs() <= 1e-12 * fwd.max(bwd), "{fwd} vs {bwd}");
                }
            }
        }
    }

    #[test]
    fn transfer_matrix_matches_enumeration() {
        for d in [2, 3, 4, 7, 10, 12] {
            for beta in [0.0, 0.1, 0.3, 0.8] {
                let exact = exact_bond_correlation(beta, d).unwrap();
                let brute = enumerated_bond(beta, d);
                assert!((exact - brute).abs() < 1e-12, "d={d} beta={beta}: {exact} vs {brute}");
            }
        }
    }

    #[test]
    fn transfer_matrix_limits() {
        assert_eq!(exact_bond_correlation(0.0, 50).unwrap(), 0.0);
        let b3 = exact_bond_correlation(0.3, 500).unwrap();
        assert!((b3 + 0.3f64.tanh()).abs() < 1e-12);
        assert!((b3 + 0.29131).abs() < 1e-5);
        assert!((exact_bond_correlation(0.1, 500).unwrap() + 0.09967).abs() < 1e-5);
    }

    #[test]
    fn infinite_temperature_is_unbiased() {
        let task = IsingTask::new(100, 0.1, 0.3, 0);
        let mut total = 0i64;
        for s in 0..100 {
            let c = metropolis_sample(&task, 0.0, s).unwrap();
            total += c.spins().iter().map(|&v| v as i64).sum::<i64>();
        }
        let m = total as f64 / 10_000.0;
        assert!(m.abs() <= 0.04, "magnetization {m}");
    }

    #[test]
    fn sampler_is_deterministic() {
        let task = IsingTask::new(64, 0.1, 0.3, 0);
        assert_eq!(
            metropolis_sample(&task, 0.3, 9).unwrap(),
            metropolis_sample(&task, 0.3, 9).unwrap()
        );
    }

    #[test]
    fn small_chain_matches_enumeration() {
        let d = 10;
        let mut task = IsingTask::new(d, 0.1, 0.3, 0);
        task.burn_in = 20;
        for beta in [0.3, 0.8] {
            let samples: Vec<f64> = (0..4000)
                .map(|s| metropolis_sample(&task, beta, s).unwrap().bond_correlation())
                .collect();
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (samples.len() - 1) as f64;
            let se = (var / samples.len() as f64).sqrt();
            let exact = enumerated_bond(beta, d);
            assert!((mean - exact).abs() <= 4.0 * se, "beta={beta}: {mean} vs {exact} (se {se})");
        }
    }

    #[test]
    fn balanced_dataset_with_ordered_energies() {
        let mut task = IsingTask::new(50, 0.1, 0.3, 17);
        task.burn_in = 10;
        let ds = build_ising_dataset(&task, 2000).unwrap();
        assert!(ds.inputs().iter().all(|&v| v == 1.0 || v == -1.0));
        assert!((ds.class_fraction(1) - 0.5).abs() <= 0.04);
        let (mut e1, mut n1, mut e2, mut n2) = (0.0, 0, 0.0, 0);
        for (x, &y) in ds.rows().zip(ds.labels()) {
            let c = SpinConfig(x.iter().map(|&v| v as i8).collect());
            if y == 1 {
                e1 += hamiltonian(&c) as f64;
                n1 += 1;
            } else {
                e2 += hamiltonian(&c) as f64;
                n2 += 1;
            }
        }
        assert!(e1 / n1 as f64 > e2 / n2 as f64);
    }

    #[test]
    fn invalid_tasks_rejected() {
        assert!(IsingTask::new(1, 0.1, 0.3, 0).validate().is_err());
        assert!(IsingTask::new(10, 0.3, 0.3, 0).validate().is_err());
        let mut t = IsingTask::new(10, 0.1, 0.3, 0);
        t.sweeps = 0;
        assert!(t.validate().is_err());
        assert!(metropolis_sample(&IsingTask::new(10, 0.1, 0.3, 0), -1.0, 0).is_err());
        assert!(build_ising_dataset(&IsingTask::new(10, 0.1, 0.3, 0), 0).is_err());
    }

    proptest! {
        #[test]
        fn hamiltonian_symmetries(bits in prop::collection::vec(any::<bool>(), 2..40), shift in 0usize..40) {
            let spins: Vec<i8> = bits.iter().map(|&b| if b { 1 } else { -1 }).collect();
            let c = SpinConfig(spins.clone());
            let flipped = SpinConfig(spins.iter().map(|s| -s).collect());
            let mut rot = spins.clone();
            rot.rotate_left(shift % spins.len());
            prop_assert_eq!(hamiltonian(&c), hamiltonian(&flipped));
            prop_assert_eq!(hamiltonian(&c), hamiltonian(&SpinConfig(rot)));
        }
    }
}
