//! Infinite-width neural tangent kernel of a fully connected ReLU network and
//! the kernel-ridge classifier built on it.
//!
//! The kernel for depth `L` is accumulated layer by layer:
//! `Θ⁽⁰⁾ = Σ⁽⁰⁾`, `Θ⁽ˡ⁾ = Θ⁽ˡ⁻¹⁾ Σ̇⁽ˡ⁾ + Σ⁽ˡ⁾`, and finally the output layer
//! contributes a derivative factor (1 by default, see [`OutputDerivative`]).

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::Path;

use log::{debug, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::datasets::{ByteReader, Dataset, Label};
use crate::error::{Error, Result};
use crate::argmax_label;

/// Below this value of `det Λ / (Σ(x,x) Σ(x',x'))` the pair is treated as
/// exactly (anti-)parallel.
pub const DET_EPS: f64 = 1e-24;

pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_RELATIVE_JITTER: f64 = 1e-8;

/// Ridge term added to the Gram diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    /// Multiple of the mean Gram diagonal.
    Relative(f64),
    Absolute(f64),
}

impl Ridge {
    fn tag(self) -> (u8, f64) {
        match self {
            Ridge::Relative(v) => (0, v),
            Ridge::Absolute(v) => (1, v),
        }
    }

    pub fn resolve(self, mean_diag: f64) -> f64 {
        match self {
            Ridge::Relative(v) => v * mean_diag,
            Ridge::Absolute(v) => v,
        }
    }
}

/// Derivative factor applied for the linear output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputDerivative {
    /// `Σ̇⁽ᴸ⁺¹⁾ ≡ 1`.
    #[default]
    Unit,
    /// `Σ̇⁽ᴸ⁺¹⁾` evaluated from `Λ⁽ᴸ⁺¹⁾` like a hidden layer.
    FromCovariance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NtkSpec {
    pub depth: usize,
    pub beta: f64,
    pub ridge: Ridge,
    pub output: OutputDerivative,
}

impl NtkSpec {
    pub fn new(depth: usize) -> Self {
        NtkSpec {
            depth,
            beta: DEFAULT_BETA,
            ridge: Ridge::Relative(DEFAULT_RELATIVE_JITTER),
            output: OutputDerivative::Unit,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_ridge(mut self, ridge: Ridge) -> Self {
        self.ridge = ridge;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "bias scale must be finite and >= 0, got {}",
                self.beta
            )));
        }
        let (_, v) = self.ridge.tag();
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("ridge must be > 0, got {v}")));
        }
        Ok(())
    }
}

/// Covariances at one layer of the recursion plus the running kernel sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelState {
    pub sigma: f64,
    pub sigma_xx: f64,
    pub sigma_yy: f64,
    pub theta: f64,
    pub layer: usize,
}

impl KernelState {
    pub fn initial(dot: f64, norm_xx: f64, norm_yy: f64, d: usize, beta: f64) -> Self {
        let b2 = beta * beta;
        let sigma = dot / d as f64 + b2;
        KernelState {
            sigma,
            sigma_xx: norm_xx / d as f64 + b2,
            sigma_yy: norm_yy / d as f64 + b2,
            theta: sigma,
            layer: 0,
        }
    }
}

/// `Σ⁽ˡ⁾` for the next layer and `Σ̇⁽ˡ⁾`, from the 2×2 covariance `Λ⁽ˡ⁾`.
fn relu_moments(sigma: f64, sxx: f64, syy: f64, beta: f64) -> (f64, f64) {
    let b2 = beta * beta;
    // Equal diagonals skip the square root so that x = x' gives ρ = 1 exactly.
    let scale = if sxx == syy { sxx } else { (sxx * syy).sqrt() };
    if !(scale > 0.0) {
        return (b2, 0.5);
    }
    let rho = (sigma / scale).clamp(-1.0, 1.0);
    let sigma = rho * scale;
    // det Λ = sxx syy (1 - ρ)(1 + ρ), which avoids cancellation near ρ = ±1.
    let det = scale * scale * (1.0 - rho) * (1.0 + rho);
    if det <= DET_EPS * scale * scale {
        // arctan(Σ/√det) → ±π/2: the pair is parallel or antiparallel.
        return if sigma >= 0.0 {
            (sigma + b2, 1.0)
        } else {
            (b2, 0.0)
        };
    }
    let sqrt_det = det.sqrt();
    let angle = (sigma / sqrt_det).atan();
    let next = sqrt_det / PI + sigma / PI * (FRAC_PI_2 + angle) + b2;
    (next, 0.5 + angle / PI)
}

/// One hidden layer of the recursion. Returns the advanced state and `Σ̇⁽ˡ⁾`.
pub fn kernel_layer_step(state: &KernelState, beta: f64) -> (KernelState, f64) {
    let (sigma, sigma_dot) = relu_moments(state.sigma, state.sigma_xx, state.sigma_yy, beta);
    let b2 = beta * beta;
    let next = KernelState {
        sigma,
        sigma_xx: state.sigma_xx + b2,
        sigma_yy: state.sigma_yy + b2,
        theta: state.theta * sigma_dot + sigma,
        layer: state.layer + 1,
    };
    (next, sigma_dot)
}

pub fn sigma0(x: &[f64], y: &[f64], beta: f64) -> Result<f64> {
    check_pair(x, y)?;
    Ok(dot(x, y) / x.len() as f64 + beta * beta)
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty input vector".into()));
    }
    if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("input component {v}")));
    }
    Ok(())
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Kernel value from the inner products of the pair.
pub fn ntk_from_moments(dot: f64, norm_xx: f64, norm_yy: f64, d: usize, spec: &NtkSpec) -> f64 {
    let mut state = KernelState::initial(dot, norm_xx, norm_yy, d, spec.beta);
    for _ in 0..spec.depth {
        state = kernel_layer_step(&state, spec.beta).0;
    }
    match spec.output {
        OutputDerivative::Unit => state.theta,
        OutputDerivative::FromCovariance => {
            let (_, out_dot) = relu_moments(state.sigma, state.sigma_xx, state.sigma_yy, spec.beta);
            state.theta * out_dot
        }
    }
}

/// All intermediate states `l = 0..=L` for the pair.
pub fn kernel_trace(x: &[f64], y: &[f64], spec: &NtkSpec) -> Result<Vec<(KernelState, f64)>> {
    check_pair(x, y)?;
    let mut state = KernelState::initial(dot(x, y), dot(x, x), dot(y, y), x.len(), spec.beta);
    let mut trace = vec![(state, f64::NAN)];
    for _ in 0..spec.depth {
        let (next, sd) = kernel_layer_step(&state, spec.beta);
        trace.push((next, sd));
        state = next;
    }
    Ok(trace)
}

pub fn ntk_value(x: &[f64], y: &[f64], spec: &NtkSpec) -> Result<f64> {
    check_pair(x, y)?;
    Ok(ntk_from_moments(
        dot(x, y),
        dot(x, x),
        dot(y, y),
        x.len(),
        spec,
    ))
}

/// `β = 0` kernel through the angle recursion
/// `cos θ⁽ˡ⁾ = [sin θ⁽ˡ⁻¹⁾ + (π - θ⁽ˡ⁻¹⁾) cos θ⁽ˡ⁻¹⁾] / π`, `Σ̇⁽ˡ⁾ = 1 - θ⁽ˡ⁻¹⁾/π`.
pub fn ntk_value_bias_free(x: &[f64], y: &[f64], depth: usize) -> Result<f64> {
    check_pair(x, y)?;
    let nx = dot(x, x).sqrt();
    let ny = dot(y, y).sqrt();
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::InvalidArgument(
            "zero-norm input has no defined angle".into(),
        ));
    }
    let radius = nx * ny / x.len() as f64;
    let mut cos_theta = (dot(x, y) / (nx * ny)).clamp(-1.0, 1.0);
    let mut theta_sum = radius * cos_theta;
    for _ in 0..depth {
        let angle = cos_theta.acos();
        let sigma_dot = 1.0 - angle / PI;
        cos_theta = ((angle.sin() + (PI - angle) * cos_theta) / PI).clamp(-1.0, 1.0);
        theta_sum = theta_sum * sigma_dot + radius * cos_theta;
    }
    Ok(theta_sum)
}

/// Gram matrix of the dataset's inputs. The upper triangle is computed once
/// and mirrored, so the result is exactly symmetric.
pub fn gram_matrix(ds: &Dataset, spec: &NtkSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = ds.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let d = ds.dim();
    let dots = inner_products(ds.inputs(), ds.inputs(), d);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| ntk_from_moments(dots[i * n + j], dots[i * n + i], dots[j * n + j], d, spec))
                .collect()
        })
        .collect();
    let mut k = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            k[(i, i + off)] = v;
            k[(i + off, i)] = v;
        }
    }
    Ok(k)
}

/// `a bᵀ` for row-major `a` (n×d) and `b` (m×d), returned row-major n×m.
pub(crate) fn inner_products(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let n = a.len() / d;
    let m = b.len() / d;
    let mut out = vec![0.0; n * m];
    if n == 0 || m == 0 {
        return out;
    }
    // SAFETY: slices are sized n×d, m×d and n×m with the given strides.
    unsafe {
        matrixmultiply::dgemm(
            n,
            d,
            m,
            1.0,
            a.as_ptr(),
            d as isize,
            1,
            b.as_ptr(),
            1,
            d as isize,
            0.0,
            out.as_mut_ptr(),
            m as isize,
            1,
        );
    }
    out
}

/// Fitted kernel-ridge classifier: `f(x) = Σ_μ Θ(x, x⁽ᵘ⁾) α_μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelModel {
    pub spec: NtkSpec,
    pub ridge: f64,
    dim: usize,
    classes: usize,
    train_inputs: Vec<f64>,
    train_norms: Vec<f64>,
    dual_coeffs: Vec<f64>,
}

/// Solve `(K + λI) α = Y` for one-hot targets `Y`.
pub fn ntk_fit(ds: &Dataset, spec: &NtkSpec) -> Result<KernelModel> {
    let n = ds.len();
    let classes = ds.classes();
    let mut k = gram_matrix(ds, spec)?;
    let mean_diag = k.diagonal().mean();
    let ridge = spec.ridge.resolve(mean_diag);
    for i in 0..n {
        k[(i, i)] += ridge;
    }
    let mut y = DMatrix::zeros(n, classes);
    for (mu, &label) in ds.labels().iter().enumerate() {
        y[(mu, label as usize - 1)] = 1.0;
    }
    let alpha = solve_spd(k, &y)?;
    let train_norms = ds.rows().map(|x| dot(x, x)).collect();
    let mut dual_coeffs = Vec::with_capacity(n * classes);
    for mu in 0..n {
        for c in 0..classes {
            dual_coeffs.push(alpha[(mu, c)]);
        }
    }
    Ok(KernelModel {
        spec: *spec,
        ridge,
        dim: ds.dim(),
        classes,
        train_inputs: ds.inputs().to_vec(),
        train_norms,
        dual_coeffs,
    })
}

fn solve_spd(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let backup = a.clone();
    if let Some(chol) = a.cholesky() {
        let l = chol.l_dirty();
        let diag = l.diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let condition = (hi / lo).powi(2);
        debug!("gram cholesky ok, condition estimate {condition:e}");
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
        warn!("cholesky solve produced non-finite values; falling back to least squares");
    } else {
        warn!("gram matrix not numerically positive definite; falling back to least squares");
    }
    let svd = backup.svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    debug!("least-squares fallback, condition {condition:e}");
    let x = svd
        .solve(b, smax * 1e-14)
        .map_err(|reason| Error::Solve {
            condition,
            reason: reason.to_string(),
        })?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Solve {
            condition,
            reason: "non-finite solution".into(),
        });
    }
    Ok(x)
}

impl KernelModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn train_len(&self) -> usize {
        self.train_norms.len()
    }

    pub fn dual_coeffs(&self) -> &[f64] {
        &self.dual_coeffs
    }

    /// Real-valued output `f(x) ∈ R^K`.
    pub fn decision(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("input component {v}")));
        }
        let norm = dot(x, x);
        let mut out = vec![0.0; self.classes];
        for (mu, row) in self.train_inputs.chunks_exact(self.dim).enumerate() {
            let theta = ntk_from_moments(dot(x, row), norm, self.train_norms[mu], self.dim, &self.spec);
            let alpha = &self.dual_coeffs[mu * self.classes..(mu + 1) * self.classes];
            for (o, a) in out.iter_mut().zip(alpha) {
                *o += theta * a;
            }
        }
        Ok(out)
    }

    /// Predicted labels for a row-major batch of inputs.
    pub fn predict_batch(&self, inputs: &[f64]) -> Result<Vec<Label>> {
        if inputs.len() % self.dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: inputs.len() % self.dim,
            });
        }
        const CHUNK: usize = 256;
        let n_train = self.train_len();
        let labels: Vec<Vec<Label>> = inputs
            .par_chunks(CHUNK * self.dim)
            .map(|block| {
                let m = block.len() / self.dim;
                let dots = inner_products(block, &self.train_inputs, self.dim);
                (0..m)
                    .map(|i| {
                        let x = &block[i * self.dim..(i + 1) * self.dim];
                        let norm = dot(x, x);
                        let mut out = vec![0.0; self.classes];
                        for mu in 0..n_train {
                            let theta = ntk_from_moments(
                                dots[i * n_train + mu],
                                norm,
                                self.train_norms[mu],
                                self.dim,
                                &self.spec,
                            );
                            let alpha = &self.dual_coeffs[mu * self.classes..(mu + 1) * self.classes];
                            for (o, a) in out.iter_mut().zip(alpha) {
                                *o += theta * a;
                            }
                        }
                        argmax_label(&out)
                    })
                    .collect()
            })
            .collect();
        Ok(labels.into_iter().flatten().collect())
    }
}

/// Argmax class of the fitted predictor; ties go to the smallest index.
pub fn ntk_predict(model: &KernelModel, x: &[f64]) -> Result<Label> {
    Ok(argmax_label(&model.decision(x)?))
}

pub const MODEL_MAGIC: &[u8; 4] = b"NTKM";
const MODEL_VERSION: u32 = 1;

pub fn encode_model(model: &KernelModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.spec.depth as u32).to_le_bytes());
    out.extend_from_slice(&model.spec.beta.to_le_bytes());
    let (tag, value) = model.spec.ridge.tag();
    out.push(tag);
    out.extend_from_slice(&value.to_le_bytes());
    out.push(match model.spec.output {
        OutputDerivative::Unit => 0,
        OutputDerivative::FromCovariance => 1,
    });
    out.extend_from_slice(&model.ridge.to_le_bytes());
    out.extend_from_slice(&(model.train_len() as u32).to_le_bytes());
    out.extend_from_slice(&(model.dim as u32).to_le_bytes());
    out.extend_from_slice(&(model.classes as u32).to_le_bytes());
    for v in model.train_inputs.iter().chain(&model.dual_coeffs) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<KernelModel> {
    let mut r = ByteReader::new(bytes);
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(Error::Header("not an NTK model file".into()));
    }
    let version = r.u32("version")?;
    if version != MODEL_VERSION {
        return Err(Error::Header(format!("unsupported version {version}")));
    }
    let depth = r.u32("depth")? as usize;
    let beta = r.f64("beta")?;
    let ridge_spec = match (r.u8("ridge kind")?, r.f64("ridge value")?) {
        (0, v) => Ridge::Relative(v),
        (1, v) => Ridge::Absolute(v),
        (t, _) => return Err(Error::Header(format!("unknown ridge kind {t}"))),
    };
    let output = match r.u8("output convention")? {
        0 => OutputDerivative::Unit,
        1 => OutputDerivative::FromCovariance,
        t => return Err(Error::Header(format!("unknown output convention {t}"))),
    };
    let ridge = r.f64("ridge")?;
    let n = r.u32("N")? as usize;
    let dim = r.u32("d")? as usize;
    let classes = r.u32("K")? as usize;
    if dim == 0 || classes == 0 {
        return Err(Error::Header("d and K must be >= 1".into()));
    }
    r.ensure((n * dim + n * classes) * 8, "payload")?;
    let train_inputs = (0..n * dim).map(|_| r.f64("inputs")).collect::<Result<Vec<_>>>()?;
    let dual_coeffs = (0..n * classes).map(|_| r.f64("dual")).collect::<Result<Vec<_>>>()?;
    if r.remaining() != 0 {
        return Err(Error::Validation("trailing bytes after dual coefficients".into()));
    }
    let spec = NtkSpec {
        depth,
        beta,
        ridge: ridge_spec,
        output,
    };
    spec.validate()?;
    let train_norms = train_inputs.chunks_exact(dim).map(|x| dot(x, x)).collect();
    Ok(KernelModel {
        spec,
        ridge,
        dim,
        classes,
        train_inputs,
        train_norms,
        dual_coeffs,
    })
}

pub fn write_model(model: &KernelModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<KernelModel> {
    let path = path.as_ref();
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{self, LabelRule};

    fn unit_norm_pair() -> (Vec<f64>, Vec<f64>) {
        // Orthogonal, both with squared norm d = 4.
        (vec![1.0, 1.0, 1.0, 1.0], vec![1.0, -1.0, 1.0, -1.0])
    }

    #[test]
    fn sigma0_examples() {
        let x = [1.0, -1.0, 1.0, 1.0];
        assert!((sigma0(&x, &x, 0.1).unwrap() - 1.01).abs() < 1e-15);
        let (a, b) = unit_norm_pair();
        assert_eq!(sigma0(&a, &b, 0.0).unwrap(), 0.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(sigma0(&x, &neg, 0.0).unwrap(), -1.0);
        assert!(matches!(
            sigma0(&x, &[1.0], 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn layer_step_examples() {
        let diag = KernelState {
            sigma: 1.3,
            sigma_xx: 1.3,
            sigma_yy: 1.3,
            theta: 1.3,
            layer: 0,
        };
        let (next, sd) = kernel_layer_step(&diag, 0.1);
        assert_eq!(sd, 1.0);
        assert!((next.sigma - 1.31).abs() < 1e-14);
        assert!((next.sigma_xx - 1.31).abs() < 1e-14);

        let ortho = KernelState {
            sigma: 0.0,
            sigma_xx: 1.0,
            sigma_yy: 1.0,
            theta: 0.0,
            layer: 0,
        };
        let (next, sd) = kernel_layer_step(&ortho, 0.0);
        assert_eq!(sd, 0.5);
        assert!((next.sigma - 1.0 / PI).abs() < 1e-15);

        let anti = KernelState {
            sigma: -1.0,
            ..ortho
        };
        let (next, sd) = kernel_layer_step(&anti, 0.0);
        assert_eq!(sd, 0.0);
        assert_eq!(next.sigma, 0.0);
    }

    #[test]
    fn ntk_value_examples() {
        let x = [1.0, -1.0, 1.0, 1.0];
        let spec = NtkSpec::new(1);
        assert!((ntk_value(&x, &x, &spec).unwrap() - 2.03).abs() < 1e-13);
        let (a, b) = unit_norm_pair();
        let v = ntk_value(&a, &b, &NtkSpec::new(1).with_beta(0.0)).unwrap();
        assert!((v - 1.0 / PI).abs() < 1e-15);
        assert!((v - 0.31831).abs() < 1e-5);
        assert!(matches!(
            ntk_value(&[f64::NAN, 0.0], &[0.0, 1.0], &spec),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn output_switch_changes_only_final_factor() {
        let (a, b) = unit_norm_pair();
        let mut spec = NtkSpec::new(1).with_beta(0.0);
        let unit = ntk_value(&a, &b, &spec).unwrap();
        spec.output = OutputDerivative::FromCovariance;
        let scaled = ntk_value(&a, &b, &spec).unwrap();
        // Σ⁽¹⁾ = 1/π against diagonals 1: Σ̇⁽²⁾ = 1/2 + atan(ρ/√(1-ρ²))/π with ρ = 1/π.
        let rho: f64 = 1.0 / PI;
        let expect = 0.5 + rho.asin() / PI;
        assert!((scaled / unit - expect).abs() < 1e-14);
        // On the diagonal the factor is 1 either way.
        assert_eq!(ntk_value(&a, &a, &spec).unwrap(), ntk_value(&a, &a, &NtkSpec::new(1).with_beta(0.0)).unwrap());
    }

    #[test]
    fn bias_free_examples() {
        let x = [1.0, 2.0, -0.5];
        let y = [2.0, 4.0, -1.0];
        // Parallel: every Σ̇ is 1 and cos θ stays 1.
        let r = (dot(&x, &x) * dot(&y, &y)).sqrt() / 3.0;
        let v = ntk_value_bias_free(&x, &y, 3).unwrap();
        assert!((v - 4.0 * r).abs() < 1e-12);
        // θ⁽⁰⁾ = π/2 at depth 1: Σ̇ = 1/2 and cos θ⁽¹⁾ = 1/π.
        let (a, b) = unit_norm_pair();
        let v = ntk_value_bias_free(&a, &b, 1).unwrap();
        assert!((v - 1.0 / PI).abs() < 1e-15);
        assert!(ntk_value_bias_free(&[0.0, 0.0], &[1.0, 0.0], 2).is_err());
    }

    #[test]
    fn gram_single_point_and_symmetry() {
        let ds = datasets::generate(&LabelRule::k_local(1), 1, 5, 3).unwrap();
        let spec = NtkSpec::new(2);
        let k = gram_matrix(&ds, &spec).unwrap();
        assert_eq!(k.shape(), (1, 1));
        let direct = ntk_value(ds.row(0), ds.row(0), &spec).unwrap();
        assert!((k[(0, 0)] - direct).abs() <= 1e-14 * direct, "{} vs {direct}", k[(0, 0)]);

        let ds = datasets::generate(&LabelRule::k_local(1), 30, 5, 3).unwrap();
        let k = gram_matrix(&ds, &spec).unwrap();
        assert_eq!(k, k.transpose());
    }

    #[test]
    fn single_point_fit_predicts_own_label() {
        let meta = datasets::DatasetMeta {
            rule: LabelRule::Random,
            seed: 0,
        };
        let ds = Dataset::new(vec![0.3, -1.2, 0.8], vec![1], 3, 2, meta).unwrap();
        let spec = NtkSpec::new(1);
        let model = ntk_fit(&ds, &spec).unwrap();
        let theta = ntk_value(ds.row(0), ds.row(0), &spec).unwrap();
        let alpha = model.dual_coeffs();
        assert!((alpha[0] - 1.0 / (theta + model.ridge)).abs() < 1e-12);
        assert_eq!(alpha[1], 0.0);
        assert_eq!(ntk_predict(&model, ds.row(0)).unwrap(), 1);
    }

    #[test]
    fn interpolates_small_separable_set() {
        let ds = datasets::generate(&LabelRule::k_local(1), 50, 20, 11).unwrap();
        let model = ntk_fit(&ds, &NtkSpec::new(1)).unwrap();
        for (x, &y) in ds.rows().zip(ds.labels()) {
            assert_eq!(ntk_predict(&model, x).unwrap(), y);
        }
        assert_eq!(model.predict_batch(ds.inputs()).unwrap(), ds.labels());
    }

    #[test]
    fn ridge_changes_predictions_continuously() {
        let ds = datasets::generate(&LabelRule::k_local(2), 40, 6, 2).unwrap();
        let test = datasets::generate(&LabelRule::k_local(2), 20, 6, 3).unwrap();
        let out: Vec<Vec<f64>> = [1e-2, 1e-8]
            .iter()
            .map(|&r| {
                let m = ntk_fit(&ds, &NtkSpec::new(2).with_ridge(Ridge::Relative(r))).unwrap();
                test.rows().flat_map(|x| m.decision(x).unwrap()).collect()
            })
            .collect();
        assert!(out.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn decision_rejects_wrong_dimension() {
        let ds = datasets::generate(&LabelRule::k_local(1), 5, 3, 2).unwrap();
        let model = ntk_fit(&ds, &NtkSpec::new(1)).unwrap();
        assert!(matches!(
            ntk_predict(&model, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn model_roundtrip() {
        let ds = datasets::generate(&LabelRule::k_local(2), 12, 4, 2).unwrap();
        let model = ntk_fit(&ds, &NtkSpec::new(3)).unwrap();
        let back = decode_model(&encode_model(&model)).unwrap();
        assert_eq!(back, model);
        let mut bytes = encode_model(&model);
        bytes[1] = b'X';
        assert!(matches!(decode_model(&bytes), Err(Error::Header(_))));
        assert!(matches!(decode_model(&encode_model(&model)[..40]), Err(Error::Truncated(_))));
    }

    #[test]
    fn invalid_spec_rejected() {
        let ds = datasets::generate(&LabelRule::k_local(1), 3, 3, 2).unwrap();
        assert!(gram_matrix(&ds, &NtkSpec::new(1).with_ridge(Ridge::Absolute(0.0))).is_err());
        assert!(gram_matrix(&ds, &NtkSpec::new(1).with_beta(f64::NAN)).is_err());
    }
}
