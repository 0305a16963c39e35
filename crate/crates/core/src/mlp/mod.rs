//! Finite-width fully connected ReLU networks.
//!
//! `f(x) = w⁽ᴸ⁺¹⁾ z⁽ᴸ⁾ + b⁽ᴸ⁺¹⁾`, `z⁽ˡ⁾ = ReLU(w⁽ˡ⁾ z⁽ˡ⁻¹⁾ + b⁽ˡ⁾)`, `z⁽⁰⁾ = x`.
//! Depth 0 is the linear perceptron. Weight matrices are stored row-major
//! with shape `(fan_out, fan_in)`.

mod io;
mod train;

use rand_distr::{Distribution, StandardNormal};

use crate::datasets::Label;
use crate::error::{Error, Result};
use crate::ntk::dot;
use crate::rng::rng_from_seed;
use crate::argmax_label;

pub use io::{decode_params, encode_params, read_params, write_params, PARAMS_MAGIC};
pub use train::{
    backprop, ce_loss, mse_loss, sgd_epoch, train_error, train_from, train_to_zero_error,
    Gradients, LossKind, TrainConfig, TrainOutcome, Trainer, DEFAULT_BATCH, DEFAULT_CHECK_EVERY,
    DEFAULT_MAX_EPOCHS,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitKind {
    /// `N(0, 2/(fan_in + fan_out))` weights, zero biases.
    Glorot,
    /// `N(0, 2/fan_in)` weights, zero biases.
    He,
    /// NTK parameterization: `w = s_l w̃`, `b = β b̃` with standard normal
    /// `w̃, b̃`. `s_1 = √(1/d)` and `s_l = √(2/H)` for later layers, so the
    /// infinite-width kernel is exactly [`crate::ntk::ntk_value`].
    NtkScaled { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub d: usize,
    pub depth: usize,
    pub width: usize,
    pub classes: usize,
    pub init: InitKind,
}

impl NetConfig {
    pub fn new(d: usize, depth: usize, width: usize, classes: usize) -> Self {
        NetConfig {
            d,
            depth,
            width,
            classes,
            init: InitKind::Glorot,
        }
    }

    pub fn with_init(mut self, init: InitKind) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.classes == 0 {
            return Err(Error::InvalidArgument(format!(
                "need d >= 1 and K >= 1, got d={}, K={}",
                self.d, self.classes
            )));
        }
        if self.depth >= 1 && self.width == 0 {
            return Err(Error::InvalidArgument("hidden width must be >= 1".into()));
        }
        if let InitKind::NtkScaled { beta } = self.init {
            if !beta.is_finite() || beta < 0.0 {
                return Err(Error::InvalidArgument(format!("bias scale {beta} invalid")));
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for layers `1..=L+1`.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.d];
        dims.extend(std::iter::repeat_n(self.width, self.depth));
        dims.push(self.classes);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Per-layer `(weight, bias)` multipliers of the NTK parameterization.
    pub fn ntk_scales(&self) -> Option<Vec<(f64, f64)>> {
        match self.init {
            InitKind::NtkScaled { beta } => Some(
                self.layer_shapes()
                    .iter()
                    .enumerate()
                    .map(|(l, &(fan_in, _))| {
                        let gain = if l == 0 { 1.0 } else { 2.0 };
                        ((gain / fan_in as f64).sqrt(), beta)
                    })
                    .collect(),
            ),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `(fan_out, fan_in)`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            biases: vec![0.0; fan_out],
        }
    }

    fn affine(&self, input: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.fan_in).zip(&self.biases))
        {
            *o = dot(row, input) + b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub config: NetConfig,
    pub layers: Vec<Layer>,
}

pub fn init_params(cfg: &NetConfig, seed: u64) -> Result<NetParams> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    let scales = cfg.ntk_scales();
    let layers = cfg
        .layer_shapes()
        .into_iter()
        .enumerate()
        .map(|(l, (fan_in, fan_out))| {
            let (w_std, b_std) = match cfg.init {
                InitKind::Glorot => ((2.0 / (fan_in + fan_out) as f64).sqrt(), 0.0),
                InitKind::He => ((2.0 / fan_in as f64).sqrt(), 0.0),
                InitKind::NtkScaled { .. } => scales.as_ref().expect("ntk scales")[l],
            };
            let mut layer = Layer::zeros(fan_in, fan_out);
            for w in &mut layer.weights {
                *w = w_std * Distribution::<f64>::sample(&StandardNormal, &mut rng);
            }
            if b_std > 0.0 {
                for b in &mut layer.biases {
                    *b = b_std * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                }
            }
            layer
        })
        .collect();
    Ok(NetParams {
        config: *cfg,
        layers,
    })
}

impl NetParams {
    pub fn zeros(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(NetParams {
            config: *cfg,
            layers: cfg
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| Layer::zeros(i, o))
                .collect(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Post-activations `z⁽⁰⁾..z⁽ᴸ⁾` followed by the output.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.fan_out];
            layer.affine(acts.last().expect("input"), &mut out);
            if l < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        Ok(argmax_label(&forward(self, x)?))
    }

    /// Argmax labels for a row-major batch.
    pub fn predict_batch(&self, inputs: &[f64]) -> Vec<Label> {
        let k = self.config.classes;
        let mut labels = Vec::with_capacity(inputs.len() / self.config.d);
        train::forward_batched(self, inputs, |out| {
            labels.extend(out.chunks_exact(k).map(argmax_label));
        });
        labels
    }
}

pub fn forward(p: &NetParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != p.config.d {
        return Err(Error::DimensionMismatch {
            expected: p.config.d,
            actual: x.len(),
        });
    }
    let out = p.activations(x).pop().expect("output layer");
    if let Some(v) = out.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("network output {v}")));
    }
    Ok(out)
}

/// Gradient inner products `∇_w̃ f_i(x) · ∇_w̃ f_j(x')` with respect to the
/// unscaled NTK parameters, as a row-major `K×K` matrix.
pub fn empirical_ntk(p: &NetParams, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let scales = p.config.ntk_scales().ok_or_else(|| {
        Error::Parameterization("empirical NTK needs parameters from ntk_scaled init".into())
    })?;
    for v in [x, y] {
        if v.len() != p.config.d {
            return Err(Error::DimensionMismatch {
                expected: p.config.d,
                actual: v.len(),
            });
        }
    }
    let k = p.config.classes;
    let ax = p.activations(x);
    let ay = p.activations(y);
    let dx = output_sensitivities(p, &ax);
    let dy = output_sensitivities(p, &ay);
    let mut theta = vec![0.0; k * k];
    for (l, &(sw, sb)) in scales.iter().enumerate() {
        let feature = sw * sw * dot(&ax[l], &ay[l]) + sb * sb;
        for i in 0..k {
            for j in 0..k {
                theta[i * k + j] += feature * dot(&dx[i][l], &dy[j][l]);
            }
        }
    }
    Ok(theta)
}

/// `∂f_i/∂(pre-activation of layer l)` for every output `i` and layer.
fn output_sensitivities(p: &NetParams, acts: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    let n_layers = p.layers.len();
    (0..p.config.classes)
        .map(|i| {
            let mut deltas = vec![Vec::new(); n_layers];
            let mut delta = vec![0.0; p.config.classes];
            delta[i] = 1.0;
            for l in (0..n_layers).rev() {
                deltas[l] = delta.clone();
                if l == 0 {
                    break;
                }
                let layer = &p.layers[l];
                let mut prev = vec![0.0; layer.fan_in];
                for (row, dv) in layer.weights.chunks_exact(layer.fan_in).zip(&delta) {
                    for (pv, w) in prev.iter_mut().zip(row) {
                        *pv += w * dv;
                    }
                }
                for (pv, z) in prev.iter_mut().zip(&acts[l]) {
                    if *z <= 0.0 {
                        *pv = 0.0;
                    }
                }
                delta = prev;
            }
            deltas
        })
        .collect()
}
