use rand::seq::SliceRandom;

use super::{Layer, NetConfig, NetParams};
use crate::datasets::{Dataset, Label};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::argmax_label;

pub const DEFAULT_BATCH: usize = 50;
pub const DEFAULT_MAX_EPOCHS: usize = 2500;
pub const DEFAULT_CHECK_EVERY: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    CrossEntropy,
    MeanSquare,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::MeanSquare => "mean_square",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub eta: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub check_every: usize,
    pub loss: LossKind,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(eta: f64, seed: u64) -> Self {
        TrainConfig {
            eta,
            batch_size: DEFAULT_BATCH,
            max_epochs: DEFAULT_MAX_EPOCHS,
            check_every: DEFAULT_CHECK_EVERY,
            loss: LossKind::CrossEntropy,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and >= 0, got {}",
                self.eta
            )));
        }
        if self.batch_size == 0 || self.check_every == 0 {
            return Err(Error::InvalidArgument(
                "batch size and check interval must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// `-f_y + ln Σ_i exp(f_i)`, evaluated with the max subtracted.
pub fn ce_loss(f: &[f64], y: Label) -> f64 {
    let max = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + f.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - f[y as usize - 1]
}

/// `‖f - onehot(y)‖²`.
pub fn mse_loss(f: &[f64], y: Label) -> f64 {
    f.iter()
        .enumerate()
        .map(|(i, v)| {
            let t = if i + 1 == y as usize { 1.0 } else { 0.0 };
            (v - t).powi(2)
        })
        .sum()
}

/// Loss for one sample and `∂loss/∂f` scaled by `scale`, written into `grad`.
fn loss_and_grad(kind: LossKind, f: &[f64], y: Label, scale: f64, grad: &mut [f64]) -> f64 {
    let target = y as usize - 1;
    match kind {
        LossKind::CrossEntropy => {
            let max = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (g, &v) in grad.iter_mut().zip(f) {
                *g = (v - max).exp();
                sum += *g;
            }
            for (i, g) in grad.iter_mut().enumerate() {
                let t = if i == target { 1.0 } else { 0.0 };
                *g = scale * (*g / sum - t);
            }
            max + sum.ln() - f[target]
        }
        LossKind::MeanSquare => {
            let mut loss = 0.0;
            for (i, (g, &v)) in grad.iter_mut().zip(f).enumerate() {
                let r = v - if i == target { 1.0 } else { 0.0 };
                loss += r * r;
                *g = scale * 2.0 * r;
            }
            loss
        }
    }
}

/// Gradient with the same layout as [`NetParams::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    fn zeros(cfg: &NetConfig) -> Self {
        Gradients {
            layers: cfg
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| Layer::zeros(i, o))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }
}

/// `c (m×n) = a (m×k) · b (k×n)` with explicit strides; `c` is overwritten.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].fill(0.0);
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the debug assertions above describe the accessed ranges; every
    // call site passes buffers laid out with exactly these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Pre-activations of one layer for a batch: `out = input · Wᵀ + b`.
fn layer_forward(layer: &Layer, input: &[f64], rows: usize, out: &mut [f64]) {
    let (fi, fo) = (layer.fan_in, layer.fan_out);
    gemm(rows, fi, fo, input, (fi, 1), &layer.weights, (1, fi), out);
    for row in out[..rows * fo].chunks_exact_mut(fo) {
        for (v, b) in row.iter_mut().zip(&layer.biases) {
            *v += b;
        }
    }
}

/// Runs the network over `inputs` in blocks and hands each block of outputs
/// (row-major, `K` per row) to `sink`.
pub(super) fn forward_batched(p: &NetParams, inputs: &[f64], mut sink: impl FnMut(&[f64])) {
    const BLOCK: usize = 512;
    let d = p.config.d;
    let widest = p.layers.iter().map(|l| l.fan_out).max().unwrap_or(0);
    let mut buf_a = vec![0.0; BLOCK * widest];
    let mut buf_b = vec![0.0; BLOCK * widest];
    let last = p.layers.len() - 1;
    for block in inputs.chunks(BLOCK * d) {
        let rows = block.len() / d;
        for (l, layer) in p.layers.iter().enumerate() {
            let input: &[f64] = if l == 0 { block } else { &buf_a[..rows * layer.fan_in] };
            layer_forward(layer, input, rows, &mut buf_b);
            if l < last {
                buf_b[..rows * layer.fan_out]
                    .iter_mut()
                    .for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut buf_a, &mut buf_b);
        }
        sink(&buf_a[..rows * p.config.classes]);
    }
}

/// Reusable buffers for batched forward/backward passes.
#[derive(Debug)]
pub struct Trainer {
    /// Post-activations per layer; `acts[0]` is the input batch and the last
    /// entry holds raw outputs.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
    grads: Gradients,
    capacity: usize,
}

impl Trainer {
    pub fn new(cfg: &NetConfig, batch: usize) -> Self {
        let shapes = cfg.layer_shapes();
        let mut acts = vec![vec![0.0; batch * cfg.d]];
        acts.extend(shapes.iter().map(|&(_, o)| vec![0.0; batch * o]));
        let widest = shapes.iter().map(|&(i, o)| i.max(o)).max().unwrap_or(0);
        Trainer {
            acts,
            delta: vec![0.0; batch * widest],
            delta_prev: vec![0.0; batch * widest],
            grads: Gradients::zeros(cfg),
            capacity: batch,
        }
    }

    pub fn gradients(&self) -> &Gradients {
        &self.grads
    }

    /// Mean loss over the rows and its exact gradient, stored in `self`.
    pub fn compute(
        &mut self,
        p: &NetParams,
        ds: &Dataset,
        rows: &[usize],
        loss: LossKind,
    ) -> f64 {
        let batch = rows.len();
        assert!(batch > 0 && batch <= self.capacity, "batch size out of range");
        let d = p.config.d;
        let k = p.config.classes;
        let n_layers = p.layers.len();

        for (r, &mu) in rows.iter().enumerate() {
            self.acts[0][r * d..(r + 1) * d].copy_from_slice(ds.row(mu));
        }
        for (l, layer) in p.layers.iter().enumerate() {
            let (head, tail) = self.acts.split_at_mut(l + 1);
            let out = &mut tail[0];
            layer_forward(layer, &head[l][..batch * layer.fan_in], batch, out);
            if l + 1 < n_layers {
                out[..batch * layer.fan_out]
                    .iter_mut()
                    .for_each(|v| *v = v.max(0.0));
            }
        }

        let scale = 1.0 / batch as f64;
        let outputs = &self.acts[n_layers];
        let mut total = 0.0;
        for (r, &mu) in rows.iter().enumerate() {
            total += loss_and_grad(
                loss,
                &outputs[r * k..(r + 1) * k],
                ds.labels()[mu],
                scale,
                &mut self.delta[r * k..(r + 1) * k],
            );
        }

        for l in (0..n_layers).rev() {
            let layer = &p.layers[l];
            let (fi, fo) = (layer.fan_in, layer.fan_out);
            let input = &self.acts[l];
            let grad = &mut self.grads.layers[l];
            // dW = δᵀ · input
            gemm(fo, batch, fi, &self.delta, (1, fo), input, (fi, 1), &mut grad.weights);
            grad.biases.fill(0.0);
            for row in self.delta[..batch * fo].chunks_exact(fo) {
                for (g, v) in grad.biases.iter_mut().zip(row) {
                    *g += v;
                }
            }
            if l > 0 {
                // δ_prev = (δ · W) ⊙ 1[z > 0]
                gemm(batch, fo, fi, &self.delta, (fo, 1), &layer.weights, (fi, 1), &mut self.delta_prev);
                for (dv, &z) in self.delta_prev[..batch * fi].iter_mut().zip(&input[..batch * fi]) {
                    if z <= 0.0 {
                        *dv = 0.0;
                    }
                }
                std::mem::swap(&mut self.delta, &mut self.delta_prev);
            }
        }
        total * scale
    }
}

/// Exact gradient of the mean loss over `rows` of `ds`.
pub fn backprop(p: &NetParams, ds: &Dataset, rows: &[usize], loss: LossKind) -> Result<(f64, Gradients)> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if ds.dim() != p.config.d {
        return Err(Error::DimensionMismatch {
            expected: p.config.d,
            actual: ds.dim(),
        });
    }
    let mut t = Trainer::new(&p.config, rows.len());
    let value = t.compute(p, ds, rows, loss);
    Ok((value, t.grads))
}

/// `w ← w − η g`. Under the NTK parameterization the descent runs on the
/// unscaled parameters `w̃ = w / s`, so each layer's step is scaled by `s²`.
fn apply_update(p: &mut NetParams, grads: &Gradients, eta: f64) -> bool {
    let scales = p.config.ntk_scales();
    let mut finite = true;
    for (l, (layer, g)) in p.layers.iter_mut().zip(&grads.layers).enumerate() {
        let (ew, eb) = match &scales {
            Some(s) => (eta * s[l].0 * s[l].0, eta * s[l].1 * s[l].1),
            None => (eta, eta),
        };
        for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
            *w -= ew * gw;
            finite &= w.is_finite();
        }
        for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
            *b -= eb * gb;
            finite &= b.is_finite();
        }
    }
    finite
}

/// One pass over a fresh permutation of the data in minibatches of
/// `cfg.batch_size`; a final short batch uses its own mean. Returns the mean
/// minibatch loss. `epoch` only labels a divergence error.
pub fn sgd_epoch(
    p: &mut NetParams,
    ds: &Dataset,
    cfg: &TrainConfig,
    rng: &mut Rng,
    trainer: &mut Trainer,
    epoch: usize,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(rng);
    let mut loss_sum = 0.0;
    let mut batches = 0;
    for rows in order.chunks(cfg.batch_size) {
        let loss = trainer.compute(p, ds, rows, cfg.loss);
        if !loss.is_finite() || !apply_update(p, &trainer.grads, cfg.eta) {
            return Err(Error::Diverged { epoch });
        }
        loss_sum += loss;
        batches += 1;
    }
    Ok(loss_sum / batches.max(1) as f64)
}

/// Misclassification rate with smallest-index tie breaking.
pub fn train_error(p: &NetParams, ds: &Dataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let k = p.config.classes;
    let mut wrong = 0usize;
    let mut mu = 0usize;
    forward_batched(p, ds.inputs(), |out| {
        for row in out.chunks_exact(k) {
            if argmax_label(row) != ds.labels()[mu] {
                wrong += 1;
            }
            mu += 1;
        }
    });
    wrong as f64 / ds.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: NetParams,
    pub epochs: usize,
    pub converged: bool,
    pub final_train_error: f64,
}

/// Initialize from `cfg` and train with [`train_from`]. Initialization and
/// shuffling use streams derived from `tcfg.seed`.
pub fn train_to_zero_error(cfg: &NetConfig, tcfg: &TrainConfig, ds: &Dataset) -> Result<TrainOutcome> {
    let params = super::init_params(cfg, derive_seed(tcfg.seed, 0))?;
    train_from(params, tcfg, ds)
}

/// SGD until the training error is zero at a check point (every
/// `check_every` epochs, and at the last epoch) or `max_epochs` is reached.
pub fn train_from(mut params: NetParams, tcfg: &TrainConfig, ds: &Dataset) -> Result<TrainOutcome> {
    tcfg.validate()?;
    if ds.dim() != params.config.d {
        return Err(Error::DimensionMismatch {
            expected: params.config.d,
            actual: ds.dim(),
        });
    }
    if ds.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut rng = rng_from_seed(derive_seed(tcfg.seed, 1));
    let mut trainer = Trainer::new(&params.config, tcfg.batch_size.min(ds.len()));
    for epoch in 1..=tcfg.max_epochs {
        sgd_epoch(&mut params, ds, tcfg, &mut rng, &mut trainer, epoch)?;
        if epoch % tcfg.check_every == 0 || epoch == tcfg.max_epochs {
            let err = train_error(&params, ds);
            if err == 0.0 {
                return Ok(TrainOutcome {
                    params,
                    epochs: epoch,
                    converged: true,
                    final_train_error: 0.0,
                });
            }
            if epoch == tcfg.max_epochs {
                return Ok(TrainOutcome {
                    params,
                    epochs: epoch,
                    converged: false,
                    final_train_error: err,
                });
            }
        }
    }
    let err = train_error(&params, ds);
    Ok(TrainOutcome {
        params,
        epochs: 0,
        converged: false,
        final_train_error: err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate, randomize_labels, DatasetMeta, LabelRule};
    use crate::mlp::{forward, init_params, InitKind};

    fn toy(n: usize, d: usize, seed: u64) -> Dataset {
        generate(&LabelRule::k_local(1), n, d, seed).unwrap()
    }

    #[test]
    fn ce_loss_examples() {
        assert!((ce_loss(&[0.0, 0.0], 1) - 2f64.ln()).abs() < 1e-15);
        assert!((ce_loss(&[1.0, 0.0], 1) - 0.313_261_687_518_222_8).abs() < 1e-12);
        let big = ce_loss(&[1000.0, 0.0], 1);
        assert!(big.is_finite() && big.abs() < 1e-12);
        assert!((ce_loss(&[1000.0, 0.0], 2) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn mse_loss_examples() {
        assert_eq!(mse_loss(&[1.0, 0.0], 1), 0.0);
        assert_eq!(mse_loss(&[0.0, 0.0], 1), 1.0);
        assert_eq!(mse_loss(&[0.5, 0.5], 1), 0.5);
    }

    #[test]
    fn batch_loss_matches_per_sample_mean() {
        let ds = toy(7, 4, 2);
        let p = init_params(&NetConfig::new(4, 2, 6, 2), 1).unwrap();
        let rows: Vec<usize> = (0..7).collect();
        for kind in [LossKind::CrossEntropy, LossKind::MeanSquare] {
            let (batch, _) = backprop(&p, &ds, &rows, kind).unwrap();
            let direct: f64 = rows
                .iter()
                .map(|&mu| {
                    let f = forward(&p, ds.row(mu)).unwrap();
                    match kind {
                        LossKind::CrossEntropy => ce_loss(&f, ds.labels()[mu]),
                        LossKind::MeanSquare => mse_loss(&f, ds.labels()[mu]),
                    }
                })
                .sum::<f64>()
                / 7.0;
            assert!((batch - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_mse_fit_has_zero_gradient() {
        // Linear net that outputs onehot(y) exactly: w = 0, b = (1, 0), all labels 1.
        let meta = DatasetMeta {
            rule: LabelRule::Random,
            seed: 0,
        };
        let ds = Dataset::new(vec![0.3, -0.7, 1.0, 2.0], vec![1, 1], 2, 2, meta).unwrap();
        let mut p = crate::mlp::NetParams::zeros(&NetConfig::new(2, 0, 0, 2)).unwrap();
        p.layers[0].biases = vec![1.0, 0.0];
        let (loss, g) = backprop(&p, &ds, &[0, 1], LossKind::MeanSquare).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_rows_do_not_change_gradient() {
        let ds = toy(3, 5, 4);
        let p = init_params(&NetConfig::new(5, 2, 8, 2), 3).unwrap();
        let (_, one) = backprop(&p, &ds, &[1], LossKind::CrossEntropy).unwrap();
        let (_, two) = backprop(&p, &ds, &[1, 1], LossKind::CrossEntropy).unwrap();
        for (a, b) in one.flatten().iter().zip(two.flatten()) {
            assert!((a - b).abs() <= 1e-15 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let ds = toy(3, 5, 4);
        let p = init_params(&NetConfig::new(5, 1, 4, 2), 3).unwrap();
        assert!(backprop(&p, &ds, &[], LossKind::CrossEntropy).is_err());
    }

    #[test]
    fn single_step_matches_hand_update() {
        // 1-D input, linear net, one sample x = 2 with label 1, mse loss.
        // f = (w1 x + b1, w2 x + b2); dℓ/df = 2 (f - onehot).
        let meta = DatasetMeta {
            rule: LabelRule::Random,
            seed: 0,
        };
        let ds = Dataset::new(vec![2.0], vec![1], 1, 2, meta).unwrap();
        let mut p = crate::mlp::NetParams::zeros(&NetConfig::new(1, 0, 0, 2)).unwrap();
        p.layers[0].weights = vec![0.5, -0.25];
        p.layers[0].biases = vec![0.1, 0.2];
        let mut cfg = TrainConfig::new(0.1, 0);
        cfg.loss = LossKind::MeanSquare;
        let mut trainer = Trainer::new(&p.config, 1);
        let mut rng = rng_from_seed(0);
        sgd_epoch(&mut p, &ds, &cfg, &mut rng, &mut trainer, 1).unwrap();
        // f = (1.1, -0.3); grad f = (0.2, -0.6); dW = grad * x = (0.4, -1.2); db = grad.
        let expect_w = [0.5 - 0.1 * 0.4, -0.25 + 0.1 * 1.2];
        let expect_b = [0.1 - 0.1 * 0.2, 0.2 + 0.1 * 0.6];
        for (a, b) in p.layers[0].weights.iter().zip(expect_w) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in p.layers[0].biases.iter().zip(expect_b) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn ntk_parameterization_scales_steps() {
        let ds = toy(10, 3, 2);
        let cfg = NetConfig::new(3, 1, 4, 2).with_init(InitKind::NtkScaled { beta: 0.5 });
        let start = init_params(&cfg, 1).unwrap();
        let rows: Vec<usize> = (0..10).collect();
        let (_, g) = backprop(&start, &ds, &rows, LossKind::CrossEntropy).unwrap();
        let mut p = start.clone();
        let mut tcfg = TrainConfig::new(0.2, 0);
        tcfg.batch_size = 10;
        let mut trainer = Trainer::new(&cfg, 10);
        sgd_epoch(&mut p, &ds, &tcfg, &mut rng_from_seed(0), &mut trainer, 1).unwrap();
        let s = cfg.ntk_scales().unwrap();
        for l in 0..2 {
            let w = (p.layers[l].weights[0] - start.layers[l].weights[0]) / g.layers[l].weights[0];
            let b = (p.layers[l].biases[0] - start.layers[l].biases[0]) / g.layers[l].biases[0];
            assert!((w + 0.2 * s[l].0 * s[l].0).abs() < 1e-9);
            assert!((b + 0.2 * 0.25).abs() < 1e-9);
        }
    }

    fn param_mut(p: &mut NetParams, l: usize, j: usize) -> &mut f64 {
        let layer = &mut p.layers[l];
        let nw = layer.weights.len();
        if j < nw {
            &mut layer.weights[j]
        } else {
            &mut layer.biases[j - nw]
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ds = toy(6, 5, 8);
        let rows: Vec<usize> = (0..6).collect();
        for depth in [0, 2] {
            let cfg = NetConfig::new(5, depth, 8, 2).with_init(InitKind::He);
            let mut p = init_params(&cfg, 4).unwrap();
            for layer in &mut p.layers {
                layer.biases.iter_mut().enumerate().for_each(|(i, b)| *b = 0.05 * i as f64);
            }
            for kind in [LossKind::CrossEntropy, LossKind::MeanSquare] {
                let (_, g) = backprop(&p, &ds, &rows, kind).unwrap();
                let flat = g.flatten();
                let mut q = p.clone();
                let mut idx = 0;
                let h = 1e-5;
                for l in 0..q.layers.len() {
                    let n = q.layers[l].weights.len() + q.layers[l].biases.len();
                    for j in 0..n {
                        let orig = *param_mut(&mut q, l, j);
                        *param_mut(&mut q, l, j) = orig + h;
                        let plus = backprop(&q, &ds, &rows, kind).unwrap().0;
                        *param_mut(&mut q, l, j) = orig - h;
                        let minus = backprop(&q, &ds, &rows, kind).unwrap().0;
                        *param_mut(&mut q, l, j) = orig;
                        let fd = (plus - minus) / (2.0 * h);
                        assert!((fd - flat[idx]).abs() <= 1e-6 * (1.0 + fd.abs()), "L={depth} {kind:?} {fd} vs {}", flat[idx]);
                        idx += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let ds = toy(60, 4, 1);
        let start = init_params(&NetConfig::new(4, 2, 5, 2), 9).unwrap();
        let mut p = start.clone();
        let cfg = TrainConfig::new(0.0, 0);
        let mut trainer = Trainer::new(&p.config, cfg.batch_size);
        sgd_epoch(&mut p, &ds, &cfg, &mut rng_from_seed(1), &mut trainer, 1).unwrap();
        assert_eq!(p, start);
    }

    #[test]
    fn trajectory_is_deterministic() {
        let ds = toy(120, 6, 1);
        let cfg = NetConfig::new(6, 2, 10, 2);
        let mut tcfg = TrainConfig::new(0.05, 77);
        tcfg.max_epochs = 7;
        let a = train_to_zero_error(&cfg, &tcfg, &ds).unwrap();
        let b = train_to_zero_error(&cfg, &tcfg, &ds).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_epoch_budget_returns_initial_params() {
        let ds = toy(20, 3, 1);
        let cfg = NetConfig::new(3, 1, 4, 2);
        let mut tcfg = TrainConfig::new(0.1, 5);
        tcfg.max_epochs = 0;
        let out = train_to_zero_error(&cfg, &tcfg, &ds).unwrap();
        assert!(!out.converged);
        assert_eq!(out.epochs, 0);
        assert_eq!(out.params, init_params(&cfg, derive_seed(5, 0)).unwrap());
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let ds = toy(100, 10, 1);
        let cfg = NetConfig::new(10, 3, 32, 2).with_init(InitKind::He);
        let mut tcfg = TrainConfig::new(1e6, 1);
        tcfg.loss = LossKind::MeanSquare;
        assert!(matches!(
            train_to_zero_error(&cfg, &tcfg, &ds),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn reaches_zero_error_on_one_local() {
        let ds = toy(100, 20, 31);
        let cfg = NetConfig::new(20, 1, 200, 2);
        let tcfg = TrainConfig::new(0.1, 3);
        let out = train_to_zero_error(&cfg, &tcfg, &ds).unwrap();
        assert!(out.converged, "train error {}", out.final_train_error);
        assert!(out.epochs <= 2500 && out.epochs % 50 == 0);
        assert_eq!(train_error(&out.params, &ds), 0.0);
    }

    #[test]
    fn train_error_basics() {
        let ds = randomize_labels(&toy(200, 3, 2), 4).unwrap();
        // Constant output favouring class 1.
        let mut p = crate::mlp::NetParams::zeros(&NetConfig::new(3, 1, 4, 2)).unwrap();
        p.layers[1].biases = vec![1.0, 0.0];
        let err = train_error(&p, &ds);
        assert!((err - ds.class_fraction(2)).abs() < 1e-15);
        // All-zero outputs tie and resolve to class 1 as well.
        let z = crate::mlp::NetParams::zeros(&NetConfig::new(3, 1, 4, 2)).unwrap();
        assert_eq!(train_error(&z, &ds), err);
        let mut rows: Vec<usize> = (0..200).collect();
        rows.reverse();
        assert_eq!(train_error(&p, &ds.subset(&rows)), err);
    }
}
