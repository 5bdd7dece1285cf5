use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{init, loss_and_gradients, mse, predict, update_running_stats, Batch, Gradients, ModelParams, NindenConfig, BN_MOMENTUM};
use crate::error::{invalid, Error, Result};
use crate::features::SplitIndex;

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub patience: usize,
    /// First restart cycle, in epochs.
    pub t0: usize,
    pub tmult: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1.2e-3,
            lr_min: 0.0,
            weight_decay: 1.72e-1,
            patience: 4,
            t0: 25,
            tmult: 2,
            batch_size: 32,
            max_epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) || !(0.0..=self.lr0).contains(&self.lr_min) {
            return Err(invalid("need lr0 > 0 and 0 ≤ lr_min ≤ lr0"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(invalid("weight decay must be non-negative"));
        }
        if self.patience == 0 || self.t0 == 0 || self.tmult == 0 || self.batch_size < 2 || self.max_epochs == 0 {
            return Err(invalid("patience, t0, tmult, max_epochs must be ≥ 1 and batch_size ≥ 2"));
        }
        Ok(())
    }
}

/// Cosine annealing within one cycle.
pub fn cosine_lr(t: f64, cycle_len: f64, lr0: f64, lr_min: f64) -> f64 {
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * t / cycle_len).cos())
}

/// Warm-restart schedule at a 0-based epoch.
pub fn sgdr_lr(epoch: usize, t0: usize, tmult: usize, lr0: f64, lr_min: f64) -> f64 {
    let (mut t, mut len) = (epoch, t0);
    while t >= len {
        t -= len;
        len *= tmult;
    }
    cosine_lr(t as f64, len as f64, lr0, lr_min)
}

/// First and second moments per trainable tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(p: &mut ModelParams) -> Self {
        let sizes: Vec<usize> = p.tensors_mut().iter().map(|(t, _)| t.len()).collect();
        AdamState {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// Decoupled weight decay, applied to dense weights only.
pub fn adamw_step(p: &mut ModelParams, state: &mut AdamState, g: &Gradients, lr: f64, weight_decay: f64) {
    state.step += 1;
    let (b1, b2) = ADAM_BETAS;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let grads = g.tensors();
    for (i, (theta, decay)) in p.tensors_mut().into_iter().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let wd = if decay { weight_decay } else { 0.0 };
        for j in 0..theta.len() {
            let gj = grads[i][j];
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let update = (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
            theta[j] -= lr * (update + wd * theta[j]);
        }
    }
}

/// Stops after `patience` consecutive epochs without a strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0, wait: 0 }
    }

    /// Returns (improved, stop).
    pub fn update(&mut self, epoch: usize, val: f64) -> (bool, bool) {
        if val < self.best {
            self.best = val;
            self.best_epoch = epoch;
            self.wait = 0;
            (true, false)
        } else {
            self.wait += 1;
            (false, self.wait >= self.patience)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub lr: Vec<f64>,
    /// 1-based.
    pub best_epoch: usize,
    pub stop_epoch: usize,
}

/// Trains on `split.train`, early-stops on `split.val` and returns the
/// best-validation parameters. `targets` is indexed like the batch rows.
pub fn train(
    cfg: &NindenConfig,
    tcfg: &TrainConfig,
    data: &Batch,
    targets: &[f64],
    split: &SplitIndex,
) -> Result<(ModelParams, TrainHistory)> {
    tcfg.validate()?;
    if targets.len() != data.len() {
        return Err(invalid(format!("{} targets for {} samples", targets.len(), data.len())));
    }
    if split.train.len() < 2 || split.val.is_empty() {
        return Err(invalid("need at least 2 training and 1 validation sample"));
    }
    if split.train.iter().chain(&split.val).any(|&i| i >= data.len()) {
        return Err(invalid("split index out of range"));
    }
    let mut p = init(cfg, tcfg.seed)?;
    let mut state = AdamState::new(&mut p);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    rng.set_stream(1);
    let val_batch = data.select(&split.val);
    let val_targets: Vec<f64> = split.val.iter().map(|&i| targets[i]).collect();
    let mut order = split.train.clone();
    let mut stopper = EarlyStopping::new(tcfg.patience);
    let mut best = p.clone();
    let mut h = TrainHistory { train_loss: vec![], val_loss: vec![], lr: vec![], best_epoch: 0, stop_epoch: 0 };

    for epoch in 1..=tcfg.max_epochs {
        let lr = sgdr_lr(epoch - 1, tcfg.t0, tcfg.tmult, tcfg.lr0, tcfg.lr_min);
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(tcfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let b = data.select(chunk);
            let t: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            let (loss, g, stats) = loss_and_gradients(&p, &b, &t, rng.random())?;
            update_running_stats(&mut p, &stats, BN_MOMENTUM);
            adamw_step(&mut p, &mut state, &g, lr, tcfg.weight_decay);
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let val = mse(&predict(&p, &val_batch)?, &val_targets);
        if !val.is_finite() {
            return Err(Error::Numeric(format!("validation loss diverged at epoch {epoch}")));
        }
        h.train_loss.push(total / seen as f64);
        h.val_loss.push(val);
        h.lr.push(lr);
        h.stop_epoch = epoch;
        let (improved, stop) = stopper.update(epoch, val);
        if improved {
            best = p.clone();
        }
        if stop {
            break;
        }
    }
    h.best_epoch = stopper.best_epoch;
    Ok((best, h))
}
