//! NINDEN: per-channel dense branches, per-phase fusion branches and a
//! projection head, with hand-written reverse-mode gradients.
//!
//! Every hidden block is Dense → BatchNorm → activation → inverted dropout.
//! The output layer is a bare dense layer with one unit.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use train::{
    adamw_step, cosine_lr, sgdr_lr, train, AdamState, EarlyStopping, TrainConfig, TrainHistory, ADAM_BETAS, ADAM_EPS,
};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::PhaseLabel;
use crate::topology::FeatureSet;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Selu,
    Gelu,
    Mish,
}

const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Selu, Activation::Gelu, Activation::Mish];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Selu => "selu",
            Activation::Gelu => "gelu",
            Activation::Mish => "mish",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name().eq_ignore_ascii_case(s))
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
                }
            }
            Activation::Gelu => 0.5 * x * libm::erfc(-x / std::f64::consts::SQRT_2),
            Activation::Mish => x * softplus(x).tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
            Activation::Gelu => {
                let cdf = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                cdf + x * pdf
            }
            Activation::Mish => {
                let t = softplus(x).tanh();
                let sig = 1.0 / (1.0 + (-x).exp());
                t + x * (1.0 - t * t) * sig
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NindenConfig {
    pub activation: Activation,
    /// Hidden widths of each per-channel branch, before the encoding layer.
    pub pi_branch_widths: Vec<usize>,
    /// Hidden widths of each per-phase branch, before the encoding layer.
    pub phase_branch_widths: Vec<usize>,
    /// Exactly three hidden widths.
    pub head_widths: Vec<usize>,
    pub encoding_length: usize,
    pub dropout_pi: f64,
    pub dropout_phase: f64,
    /// Dropout of the head.
    pub dropout_main: f64,
    /// Phases fed to the model, in [`PhaseLabel::ALL`] order; three channels each.
    pub phases: Vec<PhaseLabel>,
    /// Pixels per image.
    pub input_size: usize,
}

impl Default for NindenConfig {
    fn default() -> Self {
        Self {
            activation: Activation::Selu,
            pi_branch_widths: vec![256, 128],
            phase_branch_widths: vec![256, 128],
            head_widths: vec![128, 64, 32],
            encoding_length: 64,
            dropout_pi: 1.2e-3,
            dropout_phase: 1.2e-3,
            dropout_main: 1.2e-3,
            phases: PhaseLabel::ALL.to_vec(),
            input_size: 32 * 32,
        }
    }
}

impl NindenConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = self.pi_branch_widths.iter().chain(&self.phase_branch_widths).chain(&self.head_widths);
        if widths.clone().any(|w| *w == 0) || self.encoding_length == 0 || self.input_size == 0 {
            return Err(invalid("layer widths must be at least 1"));
        }
        if self.head_widths.len() != 3 {
            return Err(invalid(format!("head needs 3 widths, got {}", self.head_widths.len())));
        }
        for p in [self.dropout_pi, self.dropout_phase, self.dropout_main] {
            if !(0.0..1.0).contains(&p) {
                return Err(invalid(format!("dropout {p} outside [0, 1)")));
            }
        }
        if self.phases.is_empty() {
            return Err(invalid("model needs at least one phase"));
        }
        let canonical: Vec<PhaseLabel> = PhaseLabel::ALL.into_iter().filter(|p| self.phases.contains(p)).collect();
        if canonical != self.phases {
            return Err(invalid("phases must be distinct and in canonical order"));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.phases.len() * 3
    }

    /// Feature-set channel indices consumed by the model, in input order.
    pub fn channel_indices(&self) -> Vec<usize> {
        self.phases
            .iter()
            .flat_map(|p| (0..3).map(|k| crate::topology::channel_index(*p, k)))
            .collect()
    }

    fn pi_depth(&self) -> usize {
        self.pi_branch_widths.len() + 1
    }

    fn phase_depth(&self) -> usize {
        self.phase_branch_widths.len() + 1
    }

    /// (fan-in, fan-out, has batchnorm) of every layer in declared order:
    /// channel branches, phase branches, head, output.
    fn layer_shapes(&self) -> Vec<(usize, usize, bool)> {
        let mut shapes = Vec::new();
        let chain = |input: usize, widths: &[usize], out: &mut Vec<(usize, usize, bool)>| {
            let mut fan_in = input;
            for &w in widths {
                out.push((fan_in, w, true));
                fan_in = w;
            }
        };
        let enc = self.encoding_length;
        let mut pi = self.pi_branch_widths.clone();
        pi.push(enc);
        let mut ph = self.phase_branch_widths.clone();
        ph.push(enc);
        for _ in 0..self.channels() {
            chain(self.input_size, &pi, &mut shapes);
        }
        for _ in 0..self.phases.len() {
            chain(3 * enc, &ph, &mut shapes);
        }
        chain(self.phases.len() * enc, &self.head_widths, &mut shapes);
        shapes.push((self.head_widths[2], 1, false));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

/// Weights are stored fan-in × fan-out.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub bn: Option<BatchNorm>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize, bn: bool) -> Self {
        Layer {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
            bn: bn.then(|| BatchNorm {
                gamma: Array1::ones(fan_out),
                beta: Array1::zeros(fan_out),
                running_mean: Array1::zeros(fan_out),
                running_var: Array1::ones(fan_out),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: NindenConfig,
    /// Declared order: channel branches, phase branches, head, output.
    pub layers: Vec<Layer>,
}

/// Gradients share the parameter layout; running statistics stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

/// LeCun-normal weights, zero biases, identity batchnorm.
pub fn init(cfg: &NindenConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = cfg
        .layer_shapes()
        .into_iter()
        .map(|(fan_in, fan_out, bn)| {
            let mut l = Layer::zeros(fan_in, fan_out, bn);
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            l.w.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
            l
        })
        .collect();
    Ok(ModelParams { config: cfg.clone(), layers })
}

impl ModelParams {
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len() + l.bn.as_ref().map_or(0, |b| 2 * b.gamma.len())).sum()
    }

    /// Trainable tensors in declared order, flagged when weight decay applies.
    pub fn tensors_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push((l.w.as_slice_mut().expect("standard layout"), true));
            out.push((l.b.as_slice_mut().expect("standard layout"), false));
            if let Some(bn) = &mut l.bn {
                out.push((bn.gamma.as_slice_mut().expect("standard layout"), false));
                out.push((bn.beta.as_slice_mut().expect("standard layout"), false));
            }
        }
        out
    }

    /// Every stored value, including running statistics, in declared order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
            if let Some(bn) = &l.bn {
                out.extend(bn.gamma.iter().chain(&bn.beta).chain(&bn.running_mean).chain(&bn.running_var));
            }
        }
        out
    }

    pub fn from_flat(cfg: &NindenConfig, values: &[f64]) -> Result<Self> {
        let mut p = init(cfg, 0)?;
        let expected = p.to_flat().len();
        if values.len() != expected {
            return Err(invalid(format!("expected {expected} parameters, got {}", values.len())));
        }
        let mut it = values.iter().copied();
        for l in &mut p.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|v| *v = it.next().expect("length checked"));
            if let Some(bn) = &mut l.bn {
                bn.gamma
                    .iter_mut()
                    .chain(bn.beta.iter_mut())
                    .chain(bn.running_mean.iter_mut())
                    .chain(bn.running_var.iter_mut())
                    .for_each(|v| *v = it.next().expect("length checked"));
                if bn.running_var.iter().any(|v| !(*v > 0.0)) {
                    return Err(invalid("running variance must be positive"));
                }
            }
        }
        Ok(p)
    }
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Gradients {
            layers: p
                .layers
                .iter()
                .map(|l| {
                    let mut g = Layer::zeros(l.w.nrows(), l.w.ncols(), l.bn.is_some());
                    if let Some(bn) = &mut g.bn {
                        bn.gamma.fill(0.0);
                        bn.running_var.fill(0.0);
                    }
                    g
                })
                .collect(),
        }
    }

    /// Same order as [`ModelParams::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.w.as_slice().expect("standard layout"));
            out.push(l.b.as_slice().expect("standard layout"));
            if let Some(bn) = &l.bn {
                out.push(bn.gamma.as_slice().expect("standard layout"));
                out.push(bn.beta.as_slice().expect("standard layout"));
            }
        }
        out
    }
}

/// Model inputs: one sample × pixel matrix per consumed channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub channels: Vec<Array2<f64>>,
}

impl Batch {
    /// Picks the channels of `phases` from full nine-channel feature sets.
    pub fn from_features(features: &[&FeatureSet], phases: &[PhaseLabel]) -> Result<Self> {
        let first = features.first().ok_or_else(|| invalid("empty batch"))?;
        let pixels = first.resolution * first.resolution;
        if features.iter().any(|f| f.resolution != first.resolution || f.values.len() != 9 * pixels) {
            return Err(invalid("feature sets disagree in shape"));
        }
        let cfg = NindenConfig { phases: phases.to_vec(), ..Default::default() };
        cfg.validate()?;
        let channels = cfg
            .channel_indices()
            .into_iter()
            .map(|c| {
                let mut m = Array2::zeros((features.len(), pixels));
                for (i, f) in features.iter().enumerate() {
                    m.row_mut(i).assign(&ndarray::ArrayView1::from(f.channel(c)));
                }
                m
            })
            .collect();
        Ok(Batch { channels })
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch { channels: self.channels.iter().map(|c| c.select(Axis(0), idx)).collect() }
    }

    fn check(&self, cfg: &NindenConfig) -> Result<()> {
        if self.channels.len() != cfg.channels() {
            return Err(invalid(format!("model expects {} channels, batch has {}", cfg.channels(), self.channels.len())));
        }
        let n = self.len();
        if n == 0 {
            return Err(invalid("empty batch"));
        }
        if self.channels.iter().any(|c| c.nrows() != n || c.ncols() != cfg.input_size) {
            return Err(invalid(format!("every channel must be {n} × {}", cfg.input_size)));
        }
        Ok(())
    }
}

struct LayerCache {
    input: Array2<f64>,
    /// Normalized pre-activations.
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    /// Batchnorm output, the activation's argument.
    pre: Array2<f64>,
    mask: Option<Array2<f64>>,
}

/// Per-layer batch mean and biased variance from one training pass.
pub struct BatchStats {
    stats: Vec<Option<(Array1<f64>, Array1<f64>, usize)>>,
}

struct Tape {
    rng: ChaCha8Rng,
    caches: Vec<Option<LayerCache>>,
    stats: Vec<Option<(Array1<f64>, Array1<f64>, usize)>>,
}

impl ModelParams {
    fn layer_forward(&self, li: usize, x: Array2<f64>, dropout: f64, tape: Option<&mut Tape>) -> Array2<f64> {
        let layer = &self.layers[li];
        let mut z = x.dot(&layer.w);
        z += &layer.b;
        let Some(bn) = &layer.bn else {
            if let Some(t) = tape {
                t.caches[li] = Some(LayerCache {
                    input: x,
                    xhat: Array2::zeros((0, 0)),
                    inv_std: Array1::zeros(0),
                    pre: Array2::zeros((0, 0)),
                    mask: None,
                });
            }
            return z;
        };
        let act = self.config.activation;
        match tape {
            None => {
                let inv_std = bn.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let scale = &bn.gamma * &inv_std;
                let shift = &bn.beta - &(&bn.running_mean * &scale);
                z *= &scale;
                z += &shift;
                z.mapv_inplace(|v| act.apply(v));
                z
            }
            Some(t) => {
                let n = z.nrows() as f64;
                let mean = z.sum_axis(Axis(0)) / n;
                z -= &mean;
                let var = z.mapv(|v| v * v).sum_axis(Axis(0)) / n;
                let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                z *= &inv_std;
                let xhat = z;
                let pre = &xhat * &bn.gamma + &bn.beta;
                let mut out = pre.mapv(|v| act.apply(v));
                let mask = (dropout > 0.0).then(|| {
                    let keep = 1.0 / (1.0 - dropout);
                    let m = Array2::from_shape_simple_fn(out.raw_dim(), || {
                        if t.rng.random::<f64>() < dropout {
                            0.0
                        } else {
                            keep
                        }
                    });
                    out *= &m;
                    m
                });
                t.stats[li] = Some((mean, var, xhat.nrows()));
                t.caches[li] = Some(LayerCache { input: x, xhat, inv_std, pre, mask });
                out
            }
        }
    }

    /// Returns (d input, if requested).
    fn layer_backward(&self, li: usize, cache: LayerCache, mut dout: Array2<f64>, g: &mut Gradients, need_dx: bool) -> Option<Array2<f64>> {
        let layer = &self.layers[li];
        let gl = &mut g.layers[li];
        let dz = match &layer.bn {
            None => dout,
            Some(bn) => {
                if let Some(m) = &cache.mask {
                    dout *= m;
                }
                let act = self.config.activation;
                let mut dy = dout;
                ndarray::Zip::from(&mut dy).and(&cache.pre).for_each(|d, &p| *d *= act.derivative(p));
                let gbn = gl.bn.as_mut().expect("gradient layout mirrors parameters");
                gbn.gamma.assign(&(&dy * &cache.xhat).sum_axis(Axis(0)));
                gbn.beta.assign(&dy.sum_axis(Axis(0)));
                let n = dy.nrows() as f64;
                let dxhat = dy * &bn.gamma;
                let sum_d = dxhat.sum_axis(Axis(0));
                let sum_dx = (&dxhat * &cache.xhat).sum_axis(Axis(0));
                let mut dz = dxhat * n;
                dz -= &sum_d;
                dz -= &(&cache.xhat * &sum_dx);
                dz *= &(&cache.inv_std / n);
                dz
            }
        };
        gl.w.assign(&cache.input.t().dot(&dz));
        gl.b.assign(&dz.sum_axis(Axis(0)));
        need_dx.then(|| dz.dot(&layer.w.t()))
    }

    fn forward_impl(&self, batch: &Batch, mut tape: Option<&mut Tape>) -> Array2<f64> {
        let cfg = &self.config;
        let (dp, dph, dm) = (cfg.dropout_pi, cfg.dropout_phase, cfg.dropout_main);
        let mut li = 0;
        let mut encodings = Vec::with_capacity(cfg.channels());
        for x in &batch.channels {
            let mut h = x.clone();
            for _ in 0..cfg.pi_depth() {
                h = self.layer_forward(li, h, dp, tape.as_deref_mut());
                li += 1;
            }
            encodings.push(h);
        }
        let mut phase_out = Vec::with_capacity(cfg.phases.len());
        for group in encodings.chunks(3) {
            let views: Vec<ArrayView2<f64>> = group.iter().map(|a| a.view()).collect();
            let mut h = concatenate(Axis(1), &views).expect("equal batch sizes");
            for _ in 0..cfg.phase_depth() {
                h = self.layer_forward(li, h, dph, tape.as_deref_mut());
                li += 1;
            }
            phase_out.push(h);
        }
        let views: Vec<ArrayView2<f64>> = phase_out.iter().map(|a| a.view()).collect();
        let mut h = concatenate(Axis(1), &views).expect("equal batch sizes");
        for _ in 0..3 {
            h = self.layer_forward(li, h, dm, tape.as_deref_mut());
            li += 1;
        }
        self.layer_forward(li, h, 0.0, tape)
    }

    fn backward(&self, tape: &mut Tape, dout: Array2<f64>) -> Gradients {
        let cfg = &self.config;
        let mut g = Gradients::zeros_like(self);
        let mut take = |li: usize| tape.caches[li].take().expect("forward pass recorded every layer");
        let mut li = self.layers.len() - 1;
        let mut d = self.layer_backward(li, take(li), dout, &mut g, true).expect("requested");
        for _ in 0..3 {
            li -= 1;
            d = self.layer_backward(li, take(li), d, &mut g, true).expect("requested");
        }
        let enc = cfg.encoding_length;
        let first_phase = cfg.channels() * cfg.pi_depth();
        let mut d_enc = vec![Array2::zeros((0, 0)); cfg.channels()];
        for j in (0..cfg.phases.len()).rev() {
            let mut dj = d.slice(s![.., j * enc..(j + 1) * enc]).to_owned();
            for k in (0..cfg.phase_depth()).rev() {
                let l = first_phase + j * cfg.phase_depth() + k;
                dj = self.layer_backward(l, take(l), dj, &mut g, true).expect("requested");
            }
            for c in 0..3 {
                d_enc[3 * j + c] = dj.slice(s![.., c * enc..(c + 1) * enc]).to_owned();
            }
        }
        for (c, dc) in d_enc.into_iter().enumerate().rev() {
            let mut dc = dc;
            for k in (0..cfg.pi_depth()).rev() {
                let l = c * cfg.pi_depth() + k;
                match self.layer_backward(l, take(l), dc, &mut g, k > 0) {
                    Some(next) => dc = next,
                    None => break,
                }
            }
        }
        g
    }
}

/// One scalar per sample. Training mode uses batch statistics and dropout
/// masks drawn from `dropout_seed`; eval mode uses running statistics.
pub fn forward(p: &ModelParams, batch: &Batch, training: Option<u64>) -> Result<Vec<f64>> {
    batch.check(&p.config)?;
    let out = match training {
        None => p.forward_impl(batch, None),
        Some(seed) => {
            if batch.len() < 2 {
                return Err(invalid("training-mode batchnorm needs at least 2 samples"));
            }
            let mut tape = new_tape(p, seed);
            p.forward_impl(batch, Some(&mut tape))
        }
    };
    Ok(out.column(0).to_vec())
}

/// Eval-mode forward pass.
pub fn predict(p: &ModelParams, batch: &Batch) -> Result<Vec<f64>> {
    forward(p, batch, None)
}

fn new_tape(p: &ModelParams, seed: u64) -> Tape {
    Tape {
        rng: ChaCha8Rng::seed_from_u64(seed),
        caches: (0..p.layers.len()).map(|_| None).collect(),
        stats: vec![None; p.layers.len()],
    }
}

/// Training-mode MSE and its exact gradient; dropout masks come from
/// `dropout_seed`.
pub fn loss_and_gradients(p: &ModelParams, batch: &Batch, targets: &[f64], dropout_seed: u64) -> Result<(f64, Gradients, BatchStats)> {
    batch.check(&p.config)?;
    if targets.len() != batch.len() {
        return Err(invalid(format!("{} targets for {} samples", targets.len(), batch.len())));
    }
    if batch.len() < 2 {
        return Err(invalid("training-mode batchnorm needs at least 2 samples"));
    }
    let mut tape = new_tape(p, dropout_seed);
    let out = p.forward_impl(batch, Some(&mut tape));
    let n = targets.len() as f64;
    let resid: Array1<f64> = out.column(0).iter().zip(targets).map(|(o, t)| o - t).collect();
    let mse = resid.mapv(|r| r * r).sum() / n;
    let dout = (resid * (2.0 / n)).insert_axis(Axis(1));
    let grads = p.backward(&mut tape, dout);
    Ok((mse, grads, BatchStats { stats: tape.stats }))
}

/// Exponential moving update of the running statistics; the variance uses
/// the unbiased batch estimate.
pub fn update_running_stats(p: &mut ModelParams, s: &BatchStats, momentum: f64) {
    for (l, st) in p.layers.iter_mut().zip(&s.stats) {
        if let (Some(bn), Some((mean, var, n))) = (&mut l.bn, st) {
            let unbias = *n as f64 / (*n as f64 - 1.0);
            bn.running_mean.zip_mut_with(mean, |r, m| *r = (1.0 - momentum) * *r + momentum * m);
            bn.running_var.zip_mut_with(var, |r, v| *r = (1.0 - momentum) * *r + momentum * v * unbias);
        }
    }
}

pub fn mse(pred: &[f64], targets: &[f64]) -> f64 {
    pred.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
}
