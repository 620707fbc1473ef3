//! Optimiser, learning-rate schedule and the training loop.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ensure_finite, Graph};
use crate::data::{augment_with, AugmentRanges, Sample};
use crate::error::{Error, Result};
use crate::image::LabelMap;
use crate::losses::{objective, LossBreakdown, LossConfig, Targets, DEFAULT_LAMBDA};
use crate::model::{images_to_batch, Model};
use crate::ops::NormMode;
use crate::params::{Binder, ParamStore};
use crate::sda::SdaWeights;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    /// RMSprop decay rate.
    pub rho: f64,
    /// RMSprop epsilon.
    pub epsilon: f64,
    pub lambda: f64,
    pub include_background: bool,
    /// Train on each sample plus its eight augmented variants.
    pub augment: bool,
    pub augment_ranges: AugmentRanges,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 2e-4,
            lr_decay: 0.8,
            decay_every: 5,
            batch_size: 4,
            rho: 0.9,
            epsilon: 1e-7,
            lambda: DEFAULT_LAMBDA,
            include_background: true,
            augment: false,
            augment_ranges: AugmentRanges::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::Invalid(
                "epochs, batch_size and decay_every must be positive".into(),
            ));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("lr_decay", self.lr_decay),
            ("rho", self.rho),
            ("epsilon", self.epsilon),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Invalid(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Learning rate for 0-based `epoch`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        learning_rate(self.lr, self.lr_decay, self.decay_every, epoch)
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            include_background: self.include_background,
        }
    }
}

/// `lr * decay^floor(epoch / every)`.
pub fn learning_rate(lr: f64, decay: f64, every: usize, epoch: usize) -> f64 {
    lr * libm::pow(decay, (epoch / every) as f64)
}

/// RMSprop: `ms = rho*ms + (1-rho)*g^2`, `w -= lr * g / (sqrt(ms) + eps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub rho: f64,
    pub epsilon: f64,
    mean_square: Vec<Option<Tensor>>,
}

impl RmsProp {
    pub fn new(rho: f64, epsilon: f64) -> Self {
        RmsProp {
            rho,
            epsilon,
            mean_square: Vec::new(),
        }
    }

    /// Updates every trainable parameter from its stored gradient.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        if self.mean_square.len() < store.len() {
            self.mean_square.resize(store.len(), None);
        }
        for (p, ms) in store.iter_mut().zip(self.mean_square.iter_mut()) {
            if !p.trainable {
                continue;
            }
            let ms = ms.get_or_insert_with(|| Tensor::zeros(p.value.shape()));
            let (rho, eps) = (self.rho, self.epsilon);
            for ((w, &g), m) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(ms.data_mut())
            {
                *m = rho * *m + (1.0 - rho) * g * g;
                *w -= lr * g / (crate::math::sqrt(*m) + eps);
            }
        }
    }
}

/// One optimisation step on a batch `(N, H, W, 1)`. Nothing is updated when
/// the loss or a gradient is not finite.
pub fn train_step(
    model: &mut Model,
    opt: &mut RmsProp,
    batch: &Tensor,
    targets: &Targets,
    loss: &LossConfig,
    lr: f64,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let mut binder = Binder::new();
    let x = g.constant(batch.clone());
    let (heads, updates) = model.forward_graph(&mut g, &mut binder, x, NormMode::Train)?;
    let (total, breakdown) = objective(&mut g, &heads, targets, loss)?;
    if !breakdown.joint.is_finite() {
        return Err(Error::NonFinite(format!(
            "joint loss {} (dlc {}, clc {})",
            breakdown.joint, breakdown.dlc, breakdown.clc
        )));
    }
    let mut grads = g.backward(total)?;
    drop(heads);
    let store = model.params_mut();
    store.zero_grad();
    binder.collect(&mut grads, store);
    for p in store.iter() {
        ensure_finite(&p.name, &p.grad)?;
    }
    opt.step(store, lr);
    model.apply_stat_updates(updates);
    model.project_sda();
    Ok(breakdown)
}

/// Log entry of one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// 0-based.
    pub epoch: usize,
    /// 0-based, counted over the whole run.
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub sda: Vec<SdaWeights>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitReport {
    pub steps: Vec<StepRecord>,
    /// Mean joint loss per epoch.
    pub epoch_loss: Vec<f64>,
}

/// Seed of the augmentation draw for training sample `index`.
pub fn augment_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index as u64)
}

/// Training set as used by [`fit`]: the samples, each followed by its eight
/// variants when augmentation is on.
pub fn expand_training_set(samples: &[Sample], cfg: &TrainConfig) -> Vec<Sample> {
    if !cfg.augment {
        return samples.to_vec();
    }
    let mut out = Vec::with_capacity(samples.len() * 9);
    for (i, s) in samples.iter().enumerate() {
        out.push(s.clone());
        out.extend(augment_with(
            s,
            augment_seed(cfg.seed, i),
            &cfg.augment_ranges,
        ));
    }
    out
}

/// Trains `model` in place. Batches are drawn from a per-epoch shuffle of
/// the (optionally augmented) samples; `on_step` sees every step record.
pub fn fit<F: FnMut(&StepRecord)>(
    model: &mut Model,
    samples: &[Sample],
    cfg: &TrainConfig,
    mut on_step: F,
) -> Result<FitReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let (h, w) = model.config().input_size;
    let classes = model.config().classes;
    for s in samples {
        if s.image.height != h || s.image.width != w {
            return Err(Error::Invalid(format!(
                "sample {} is {}x{}, model expects {}x{}",
                s.subject_id, s.image.height, s.image.width, h, w
            )));
        }
        s.mask.check_classes(classes)?;
    }
    let data = expand_training_set(samples, cfg);
    let loss_cfg = cfg.loss_config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = RmsProp::new(cfg.rho, cfg.epsilon);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = FitReport::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let images: Vec<_> = chunk.iter().map(|&i| data[i].image.clone()).collect();
            let masks: Vec<LabelMap> = chunk.iter().map(|&i| data[i].mask.clone()).collect();
            let batch = images_to_batch(&images)?;
            let targets = Targets::from_labels(&masks, classes)?;
            let loss = train_step(model, &mut opt, &batch, &targets, &loss_cfg, lr).map_err(
                |e| match e {
                    Error::NonFinite(msg) => {
                        Error::NonFinite(format!("epoch {epoch}, step {step}: {msg}"))
                    }
                    other => other,
                },
            )?;
            total += loss.joint;
            batches += 1;
            let rec = StepRecord {
                epoch,
                step,
                lr,
                loss,
                sda: model.sda_weights(),
            };
            on_step(&rec);
            report.steps.push(rec);
            step += 1;
        }
        report.epoch_loss.push(total / batches as f64);
    }
    Ok(report)
}
