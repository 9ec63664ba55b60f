//! End-to-end finite-difference check of graph gradients in f64.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::toy::ToyConfig;
use crate::error::{Error, Result};
use crate::graph::{backward, forward_train, BnMode, ModelGraph, WeightStore, TAP_LOGITS};
use crate::labels::{LabelMap, IGNORE_INDEX};
use crate::model::{build_liteseg, LiteSegConfig};
use crate::ops::{cross_entropy_loss, loss_backward};
use crate::tensor::{Shape4, Tensor};

/// Central-difference step as a fraction of `max(|p|, 1)`.
///
/// Coarser steps straddle ReLU kinks too often in a deep network to say
/// anything about the analytic gradient.
pub const FD_RELATIVE_STEP: f64 = 1e-7;
/// Disagreement between the forward and backward one-sided differences above
/// which a draw is treated as straddling a non-differentiable point and
/// redrawn. A kink inside the step moves the central difference by at most
/// half this disagreement.
pub const KINK_TOLERANCE: f64 = 1e-3;
const MAX_DRAWS_PER_SAMPLE: usize = 8;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
/// Below this magnitude gradients are compared on an absolute scale
/// (`tolerance * GRAD_FLOOR`), which sits above the round-off of a 1e-7 step.
pub const GRAD_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub model: LiteSegConfig,
    pub samples: usize,
    pub seed: u64,
    pub batch: usize,
    pub size: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            model: ToyConfig::toy_model(),
            samples: 32,
            seed: 0,
            batch: 2,
            size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub samples: Vec<GradSample>,
    pub tolerance: f64,
    /// Draws rejected because the one-sided differences disagreed.
    pub kinks_skipped: usize,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.samples.iter().map(|s| s.rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.samples.iter().all(|s| s.rel_err <= self.tolerance)
    }

    /// Samples large enough to be judged on the relative scale.
    pub fn informative(&self) -> usize {
        self.samples
            .iter()
            .filter(|s| s.analytic.abs().max(s.numeric.abs()) >= GRAD_FLOOR)
            .count()
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradSample> {
        self.samples.iter().filter(move |s| s.rel_err > self.tolerance)
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_FLOOR)
}

fn objective(g: &ModelGraph, w: &WeightStore<f64>, x: &Tensor<f64>, labels: &LabelMap) -> Result<f64> {
    let tape = forward_train(g, x, w, BnMode::Batch)?;
    Ok(cross_entropy_loss(tape.tap(g, TAP_LOGITS)?, labels, IGNORE_INDEX)?.loss)
}

/// Compare backprop against central differences on `samples` random trainable scalars.
pub fn check_graph(
    g: &ModelGraph,
    weights: &WeightStore<f64>,
    x: &Tensor<f64>,
    labels: &LabelMap,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<GradcheckReport> {
    if samples == 0 {
        return Err(Error::Usage("gradcheck needs at least one sample".into()));
    }
    let tape = forward_train(g, x, weights, BnMode::Batch)?;
    let logits = tape.tap(g, TAP_LOGITS)?;
    let seed = loss_backward(logits, labels, IGNORE_INDEX)?;
    let grads = backward(g, &tape, weights, TAP_LOGITS, seed)?;
    drop(tape);

    let mut names: Vec<String> = g
        .param_specs()
        .into_iter()
        .filter(|s| s.role.trainable())
        .map(|s| s.name)
        .collect();
    names.shuffle(rng);
    let mut w = weights.clone();
    // (forward, backward) one-sided differences; their mean is the central difference
    let one_sided = |w: &mut WeightStore<f64>, name: &str, index: usize, h: f64| -> Result<(f64, f64)> {
        let p0 = w.get(name).expect("spec name present").data()[index];
        let mid = objective(g, w, x, labels);
        w.get_mut(name).unwrap().data_mut()[index] = p0 + h;
        let up = objective(g, w, x, labels);
        w.get_mut(name).unwrap().data_mut()[index] = p0 - h;
        let down = objective(g, w, x, labels);
        w.get_mut(name).unwrap().data_mut()[index] = p0;
        let mid = mid?;
        Ok(((up? - mid) / h, (mid - down?) / h))
    };
    let mut out = Vec::with_capacity(samples);
    let mut kinks = 0;
    let mut draws = 0;
    while out.len() < samples {
        if draws == samples * MAX_DRAWS_PER_SAMPLE {
            return Err(Error::Domain(format!("{kinks} of {draws} draws hit non-differentiable points")));
        }
        let name = &names[draws % names.len()];
        draws += 1;
        let len = w.get(name).expect("spec name present").data().len();
        let index = rng.gen_range(0..len);
        let analytic = grads.params.get(name).map_or(0.0, |v| v[index]);
        let h = FD_RELATIVE_STEP * w.get(name).unwrap().data()[index].abs().max(1.0);
        let (fwd, bwd) = one_sided(&mut w, name, index, h)?;
        if relative_error(fwd, bwd) > KINK_TOLERANCE {
            kinks += 1;
            continue;
        }
        out.push(GradSample {
            param: name.clone(),
            index,
            analytic,
            numeric: (fwd + bwd) / 2.0,
            rel_err: relative_error(analytic, (fwd + bwd) / 2.0),
        });
    }
    Ok(GradcheckReport {
        samples: out,
        tolerance: END_TO_END_TOLERANCE,
        kinks_skipped: kinks,
    })
}

/// Random input, random labels (a few ignored), freshly initialized f64 weights.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let model = build_liteseg(&cfg.model)?;
    let g = &model.graph;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights = WeightStore::<f64>::init(g, cfg.seed);
    let shape = Shape4::new(cfg.batch, 3, cfg.size, cfg.size)?;
    let x = Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))?;
    let nc = cfg.model.num_classes as u32;
    let labels = (0..cfg.batch * cfg.size * cfg.size)
        .map(|_| if rng.gen_bool(0.05) { IGNORE_INDEX } else { rng.gen_range(0..nc) })
        .collect();
    let labels = LabelMap::new(cfg.batch, cfg.size, cfg.size, labels)?;
    check_graph(g, &weights, &x, &labels, cfg.samples, &mut rng)
}
