//! Losses with analytic gradients, optimizers, the step learning-rate
//! schedule and the epoch loop with best-validation checkpointing.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::data::{normalize_pixels, Sample};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::metrics::DEFAULT_EPS;
use crate::net::{BnObservation, Model, ParamStore};
use crate::ops::norm::BnMode;
use crate::real::Real;
use crate::tensor::Tensor;

// ---------- losses ----------

fn per_sample<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    if pred.shape() != gt.shape() || pred.rank() < 2 {
        return Err(shape_err(op, format!("pred {:?} vs gt {:?}", pred.shape(), gt.shape())));
    }
    let n = pred.shape()[0];
    if n == 0 || pred.numel() == 0 {
        return Err(shape_err(op, "empty batch"));
    }
    Ok((n, pred.numel() / n))
}

fn kl_one(p: &[f64], g: &[f64], eps: f64, grad: &mut [f64], scale: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..p.len() {
        let q = eps + p[i];
        let ratio = g[i] / q;
        let inner = eps + ratio;
        total += g[i] * libm::log(inner);
        grad[i] += scale * g[i] * (-ratio / q) / inner;
    }
    total
}

/// Pearson correlation and its gradient with respect to `p`, or `None` when
/// either map is constant.
fn cc_one(p: &[f64], g: &[f64], grad: &mut [f64], scale: f64) -> Option<f64> {
    let n = p.len() as f64;
    let mp = p.iter().sum::<f64>() / n;
    let mg = g.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in p.iter().zip(g) {
        let (a, b) = (x - mp, y - mg);
        sab += a * b;
        saa += a * a;
        sbb += b * b;
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return None;
    }
    let norm = libm::sqrt(saa * sbb);
    let r = sab / norm;
    for i in 0..p.len() {
        grad[i] += scale * ((g[i] - mg) / norm - r * (p[i] - mp) / saa);
    }
    Some(r)
}

fn to_f64<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64()).collect()
}

/// Batch mean of `sum G ln(eps + G / (eps + P))` and its gradient with
/// respect to the prediction.
pub fn loss_kl<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, eps: f64) -> Result<(f64, Tensor<T>)> {
    let (n, k) = per_sample(pred, gt, "loss_kl")?;
    let (p, g) = (to_f64(pred), to_f64(gt));
    let mut grad = alloc::vec![0.0; p.len()];
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    for s in 0..n {
        let r = s * k..(s + 1) * k;
        total += kl_one(&p[r.clone()], &g[r.clone()], eps, &mut grad[r], scale);
    }
    Ok((total * scale, Tensor::new(pred.shape(), grad.into_iter().map(T::from_f64).collect())?))
}

/// Batch mean of `alpha * CC + beta * KL`. Samples whose prediction is
/// constant have no correlation; they contribute `beta * KL` only.
pub fn loss_combined<T: Real>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    alpha: f64,
    beta: f64,
    eps: f64,
) -> Result<(f64, Tensor<T>)> {
    let (n, k) = per_sample(pred, gt, "loss_combined")?;
    let (p, g) = (to_f64(pred), to_f64(gt));
    let mut grad = alloc::vec![0.0; p.len()];
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    for s in 0..n {
        let r = s * k..(s + 1) * k;
        let kl = kl_one(&p[r.clone()], &g[r.clone()], eps, &mut grad[r.clone()], beta * scale);
        total += beta * kl;
        if alpha != 0.0 {
            match cc_one(&p[r.clone()], &g[r.clone()], &mut grad[r], alpha * scale) {
                Some(c) => total += alpha * c,
                None => log::warn!("sample {s}: correlation undefined for a constant map, using the KL term only"),
            }
        }
    }
    Ok((total * scale, Tensor::new(pred.shape(), grad.into_iter().map(T::from_f64).collect())?))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Kl,
    Combined,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

// ---------- configuration and schedule ----------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    /// Epochs between decays.
    pub lr_decay_every: usize,
    pub max_epochs: usize,
    /// Optional cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub loss: LossKind,
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub pixel_mean: [f64; 3],
    pub pixel_std: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 15,
            initial_lr: 1e-4,
            lr_decay_factor: 10.0,
            lr_decay_every: 2,
            max_epochs: 10,
            max_steps: None,
            loss: LossKind::Kl,
            alpha: -1.0,
            beta: 5.0,
            eps: DEFAULT_EPS,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            pixel_mean: crate::data::PIXEL_MEAN,
            pixel_std: crate::data::PIXEL_STD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::Config(d));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(self.initial_lr >= 0.0) || !self.initial_lr.is_finite() {
            return bad(format!("initial_lr must be finite and non-negative, got {}", self.initial_lr));
        }
        if !(self.lr_decay_factor > 0.0) || self.lr_decay_every == 0 {
            return bad("lr_decay_factor must be positive and lr_decay_every at least 1".into());
        }
        if self.loss == LossKind::Combined && self.beta == 0.0 {
            return bad("beta must be nonzero for the combined loss".into());
        }
        if self.pixel_std.iter().any(|s| !(*s > 0.0)) {
            return bad("pixel_std must be positive".into());
        }
        Ok(())
    }

    /// Loss value and gradient under this configuration.
    pub fn loss_of<T: Real>(&self, pred: &Tensor<T>, gt: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
        match self.loss {
            LossKind::Kl => loss_kl(pred, gt, self.eps),
            LossKind::Combined => loss_combined(pred, gt, self.alpha, self.beta, self.eps),
        }
    }
}

/// `initial_lr / factor^floor(epoch / every)`.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    let k = (epoch / cfg.lr_decay_every.max(1)) as i32;
    cfg.initial_lr / libm::pow(cfg.lr_decay_factor, k as f64)
}

// ---------- optimizers ----------

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    /// Completed steps.
    pub step: u64,
    /// Adam moments by parameter name.
    pub moments: BTreeMap<String, Moments<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

/// One update of every parameter that has a gradient.
pub fn optimizer_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads {
        let entry = params.entry(name)?;
        if !entry.trainable {
            return Err(arg_err("optimizer_step", format!("{name} is not trainable")));
        }
        if entry.value.shape() != g.shape() {
            return Err(shape_err(
                "optimizer_step",
                format!("{name}: gradient {:?} vs parameter {:?}", g.shape(), entry.value.shape()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    for (name, g) in grads {
        let p = params.get_mut(name)?;
        match state.kind {
            OptimizerKind::Sgd => {
                for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                    *w = T::from_f64(w.to_f64() - lr * d.to_f64());
                }
            }
            OptimizerKind::Adam => {
                let mo = state.moments.entry(name.clone()).or_insert_with(|| Moments {
                    m: Tensor::zeros(g.shape()),
                    v: Tensor::zeros(g.shape()),
                });
                let (c1, c2) = (1.0 - libm::pow(ADAM_BETA1, t), 1.0 - libm::pow(ADAM_BETA2, t));
                let (m, v) = (mo.m.data_mut(), mo.v.data_mut());
                for (i, (w, d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                    let d = d.to_f64();
                    let mi = ADAM_BETA1 * m[i].to_f64() + (1.0 - ADAM_BETA1) * d;
                    let vi = ADAM_BETA2 * v[i].to_f64() + (1.0 - ADAM_BETA2) * d * d;
                    m[i] = T::from_f64(mi);
                    v[i] = T::from_f64(vi);
                    let update = lr * (mi / c1) / (libm::sqrt(vi / c2) + ADAM_EPS);
                    *w = T::from_f64(w.to_f64() - update);
                }
            }
        }
    }
    Ok(())
}

// ---------- batches and steps ----------

/// Network input and target for the samples at `idx`: normalized images
/// `[B,3,H,W]` and densities `[B,1,H,W]`.
pub fn make_batch<T: Real>(
    samples: &[Sample],
    idx: &[usize],
    input_size: (usize, usize),
    cfg: &TrainConfig,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (h, w) = input_size;
    let mut images = Vec::with_capacity(idx.len());
    let mut gts = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = &samples[i];
        if s.image.shape() != [3, h, w] || s.density.size() != (h, w) {
            return Err(shape_err(
                "make_batch",
                format!(
                    "sample {} has image {:?} and density {:?}; the model expects {h}x{w}",
                    s.id,
                    s.image.shape(),
                    s.density.size()
                ),
            ));
        }
        images.push(normalize_pixels(&s.image.cast::<T>(), &cfg.pixel_mean, &cfg.pixel_std)?);
        gts.push(s.density.to_tensor::<T>().reshape(&[1, h, w])?);
    }
    Ok((Tensor::stack(&images)?, Tensor::stack(&gts)?))
}

/// Loss, per-parameter gradients and batchnorm observations of one batch.
pub struct StepResult<T> {
    pub loss: f64,
    pub grads: BTreeMap<String, Tensor<T>>,
    pub observed: Vec<BnObservation<T>>,
}

pub fn loss_and_grads<T: Real>(
    model: &Model<T>,
    images: &Tensor<T>,
    gt: &Tensor<T>,
    cfg: &TrainConfig,
    mode: BnMode,
) -> Result<StepResult<T>> {
    let mut tape = Tape::new();
    let pass = model.forward_graph(&mut tape, images, mode)?;
    let (loss, seed) = cfg.loss_of(tape.value(pass.output), gt)?;
    let mut g = tape.backward(pass.output, seed)?;
    let mut grads = BTreeMap::new();
    for (name, var) in pass.params {
        if model.params.entry(&name)?.trainable {
            if let Some(t) = g.take(var) {
                grads.insert(name, t);
            }
        }
    }
    Ok(StepResult {
        loss,
        grads,
        observed: pass.observed,
    })
}

/// Mean configured loss and mean KL over a dataset with batchnorm running
/// statistics.
pub fn evaluate_loss<T: Real>(model: &Model<T>, samples: &[Sample], cfg: &TrainConfig) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(arg_err("evaluate_loss", "empty dataset"));
    }
    let (mut loss, mut kl) = (0.0, 0.0);
    let all: Vec<usize> = (0..samples.len()).collect();
    for idx in all.chunks(cfg.batch_size.max(1)) {
        let (x, gt) = make_batch::<T>(samples, idx, model.config.input_size, cfg)?;
        let pred = model.forward(&x)?;
        let b = idx.len() as f64;
        loss += b * cfg.loss_of(&pred, &gt)?.0;
        kl += b * loss_kl(&pred, &gt, cfg.eps)?.0;
    }
    let n = samples.len() as f64;
    Ok((loss / n, kl / n))
}

// ---------- epoch loop ----------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_kl: f64,
    pub lr: f64,
    /// Optimizer steps completed by the end of this epoch.
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub epoch: usize,
    pub val_loss: f64,
    pub params: ParamStore<T>,
    pub optimizer: OptimizerState<T>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Epoch with the lowest validation loss (earliest on ties).
    pub best: Checkpoint<T>,
    pub history: Vec<EpochRecord>,
    pub initial_val_loss: f64,
    pub initial_val_kl: f64,
}

/// Trains `model` in place, leaving it at the final epoch's weights; the
/// best-validation weights are in the returned checkpoint.
pub fn train<T: Real>(
    model: &mut Model<T>,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(arg_err("train", "training and validation sets must be non-empty"));
    }
    let (initial_val_loss, initial_val_kl) = evaluate_loss(model, val_set, cfg)?;
    log::info!("initial validation loss {initial_val_loss:.6} (kl {initial_val_kl:.6})");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(cfg.optimizer);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<Checkpoint<T>> = None;
    let mut steps = 0usize;
    let cap = cfg.max_steps.unwrap_or(usize::MAX);
    for epoch in 0..cfg.max_epochs {
        if steps >= cap {
            break;
        }
        let lr = lr_at(cfg, epoch);
        order.shuffle(&mut rng);
        let (mut sum, mut seen) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            if steps >= cap {
                break;
            }
            let (x, gt) = make_batch::<T>(train_set, idx, model.config.input_size, cfg)?;
            let step = loss_and_grads(model, &x, &gt, cfg, BnMode::Train)?;
            if !step.loss.is_finite() || step.grads.values().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "training diverged at epoch {epoch}, step {steps} (loss {})",
                    step.loss
                )));
            }
            optimizer_step(&mut model.params, &step.grads, &mut opt, lr)?;
            model.update_running_stats(&step.observed)?;
            sum += step.loss * idx.len() as f64;
            seen += idx.len();
            steps += 1;
        }
        let (val_loss, val_kl) = evaluate_loss(model, val_set, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("validation loss is {val_loss} after epoch {epoch}")));
        }
        let rec = EpochRecord {
            epoch,
            train_loss: if seen > 0 { sum / seen as f64 } else { f64::NAN },
            val_loss,
            val_kl,
            lr,
            steps,
        };
        log::info!(
            "epoch {epoch}: train {:.6} val {val_loss:.6} kl {val_kl:.6} lr {lr:e}",
            rec.train_loss
        );
        history.push(rec);
        if best.as_ref().is_none_or(|b| val_loss < b.val_loss) {
            best = Some(Checkpoint {
                epoch,
                val_loss,
                params: model.params.clone(),
                optimizer: opt.clone(),
            });
        }
    }
    Ok(TrainOutcome {
        best: best.ok_or_else(|| arg_err("train", "no epoch ran"))?,
        history,
        initial_val_loss,
        initial_val_kl,
    })
}
