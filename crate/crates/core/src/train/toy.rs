//! Desk-scale training loop on the synthetic dataset.

use std::fmt::Write as _;

use super::data::{synthetic_dataset, Dataset, TOY_CLASSES};
use super::multiscale::{MultiScaleSampler, MultiScaleSpec};
use super::optim::OptimizerState;
use crate::backbones::Backbone;
use crate::error::{Error, Result};
use crate::graph::{backward, forward, forward_train, BnMode, ModelGraph, Param, Tape, WeightStore, TAP_LOGITS};
use crate::labels::{LabelMap, IGNORE_INDEX};
use crate::model::{build_liteseg, LiteSeg, LiteSegConfig};
use crate::ops::{argmax_channel, cross_entropy_loss, loss_backward};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Momentum of the batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub model: LiteSegConfig,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub images: usize,
    pub size: usize,
    pub multiscale: Option<MultiScaleSpec>,
}

impl ToyConfig {
    pub const EPOCHS: usize = 300;

    /// Reduced-width LiteSeg for the synthetic 3-class task.
    pub fn toy_model() -> LiteSegConfig {
        LiteSegConfig {
            num_classes: TOY_CLASSES,
            aspp_filters: 16,
            decoder_filters: 16,
            lowlevel_reduce: Some(8),
            width_multiplier: 0.25,
            ..LiteSegConfig::for_backbone(Backbone::MobileNetV2)
        }
    }
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            model: Self::toy_model(),
            epochs: Self::EPOCHS,
            lr: 1e-2,
            seed: 0,
            images: 4,
            size: 64,
            multiscale: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss of the epoch.
    pub loss: f64,
    /// Training-mode pixel accuracy of the epoch.
    pub pixel_acc: f64,
}

#[derive(Debug, Clone)]
pub struct ToyRun {
    pub model: LiteSeg,
    pub weights: WeightStore,
    pub history: Vec<EpochRecord>,
    /// Inference-mode (running statistics) pixel accuracy after the last epoch.
    pub final_accuracy: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,lr,loss,pixel_acc\n");
    for r in history {
        let _ = writeln!(s, "{},{:e},{:.9},{:.6}", r.epoch, r.lr, r.loss, r.pixel_acc);
    }
    s
}

pub fn pixel_accuracy(pred: &LabelMap, truth: &LabelMap) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for (&p, &t) in pred.data.iter().zip(&truth.data) {
        if t != IGNORE_INDEX {
            total += 1;
            hit += usize::from(p == t);
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Blend batch statistics into the stored running mean and (unbiased) variance.
pub fn update_running_stats<T: Scalar>(g: &ModelGraph, tape: &Tape<T>, store: &mut WeightStore<T>, momentum: f64) {
    for (i, mean, var, count) in tape.batch_stats() {
        let id = &g.layers()[i].spec.id;
        let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        let blend = |name: &str, store: &mut WeightStore<T>, vals: &[T], scale: f64| {
            if let Some(Param::Vector(rv)) = store.get_mut(&format!("{id}.{name}")) {
                for (r, v) in rv.iter_mut().zip(vals) {
                    *r = T::from_f64((1.0 - momentum) * r.as_f64() + momentum * v.as_f64() * scale);
                }
            }
        };
        blend("running_mean", store, mean, 1.0);
        blend("running_var", store, var, unbias);
    }
}

/// One forward/backward/update on a batch. Returns (loss, training pixel accuracy).
pub fn train_step(
    g: &ModelGraph,
    store: &mut WeightStore,
    opt: &mut OptimizerState,
    batch: &Dataset,
    lr: f64,
) -> Result<(f64, f64)> {
    let tape = forward_train(g, &batch.images, store, BnMode::Batch)?;
    let logits = tape.tap(g, TAP_LOGITS)?;
    let ce = cross_entropy_loss(logits, &batch.labels, IGNORE_INDEX)?;
    if !ce.loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let acc = pixel_accuracy(&argmax_channel(logits), &batch.labels);
    let seed = loss_backward(logits, &batch.labels, IGNORE_INDEX)?;
    let grads = backward(g, &tape, store, TAP_LOGITS, seed)?;
    opt.step(g, store, &grads, lr)?;
    update_running_stats(g, &tape, store, BN_MOMENTUM);
    Ok((ce.loss, acc))
}

pub fn evaluate(g: &ModelGraph, store: &WeightStore, data: &Dataset) -> Result<f64> {
    let out = forward(g, &data.images, store)?;
    Ok(pixel_accuracy(&argmax_channel(&out[TAP_LOGITS]), &data.labels))
}

/// Full-batch training: one optimizer step per epoch over all images.
pub fn train_toy(cfg: &ToyConfig) -> Result<ToyRun> {
    let data = synthetic_dataset(cfg.images, cfg.size, cfg.seed)?;
    train_on(cfg, &data)
}

pub fn train_on(cfg: &ToyConfig, data: &Dataset) -> Result<ToyRun> {
    if cfg.epochs == 0 {
        return Err(Error::Usage("epochs must be positive".into()));
    }
    let model = build_liteseg(&cfg.model)?;
    let g = &model.graph;
    let mut store = WeightStore::<f32>::init(g, cfg.seed);
    let mut opt = OptimizerState::new(cfg.lr, cfg.epochs)?;
    let mut sampler = cfg.multiscale.clone().map(|s| MultiScaleSampler::new(s, cfg.seed ^ 0x5ca1e));
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = opt.lr_at(epoch)?;
        let scaled;
        let batch = match sampler.as_mut() {
            Some(s) => {
                let (h, w) = s.sample();
                scaled = data.resized(h, w)?;
                &scaled
            }
            None => data,
        };
        let (loss, pixel_acc) = train_step(g, &mut store, &mut opt, batch, lr)?;
        history.push(EpochRecord { epoch, lr, loss, pixel_acc });
    }
    let final_accuracy = evaluate(g, &store, data)?;
    Ok(ToyRun {
        model,
        weights: store,
        history,
        final_accuracy,
    })
}

/// Argmax class map of a batch under inference-mode batch norm.
pub fn predict(g: &ModelGraph, store: &WeightStore, image: &Tensor) -> Result<LabelMap> {
    let out = forward(g, image, store)?;
    Ok(argmax_channel(&out[TAP_LOGITS]))
}
