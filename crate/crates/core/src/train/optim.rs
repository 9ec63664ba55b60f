//! SGD with Nesterov momentum and decoupled-from-BN weight decay.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Gradients, ModelGraph, ParamRole, WeightStore};
use crate::scalar::Scalar;

/// One Nesterov update in place: `g' = g + wd p; v = m v + g'; p -= lr (g' + m v)`.
pub fn sgd_nesterov_step<T: Scalar>(p: &mut [T], g: &[T], v: &mut [T], lr: T, momentum: T, weight_decay: T) -> Result<()> {
    if p.len() != g.len() || p.len() != v.len() {
        return Err(Error::Shape(format!(
            "sgd step over {} params, {} grads, {} velocities",
            p.len(),
            g.len(),
            v.len()
        )));
    }
    for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
        let g = g + weight_decay * *p;
        *v = momentum * *v + g;
        *p = *p - lr * (g + momentum * *v);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OptimizerState<T = f32> {
    pub velocity: BTreeMap<String, Vec<T>>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub initial_lr: f64,
    pub power: f64,
    pub max_epochs: usize,
    pub lr_step_epochs: usize,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(initial_lr: f64, max_epochs: usize) -> Result<Self> {
        let s = OptimizerState {
            velocity: BTreeMap::new(),
            momentum: 0.9,
            weight_decay: 4e-5,
            initial_lr,
            power: 0.9,
            max_epochs,
            lr_step_epochs: super::schedule::LR_STEP_EPOCHS,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Domain(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        let nonneg = |v: f64| v >= 0.0;
        if !nonneg(self.initial_lr) || !nonneg(self.weight_decay) || self.power.is_nan() || self.power <= 0.0 {
            return Err(Error::Domain("learning rate, power and weight decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        super::poly_lr(self.initial_lr, epoch, self.max_epochs, self.power)
    }

    /// Update every trainable parameter that has a gradient. Only conv kernels decay.
    pub fn step(&mut self, g: &ModelGraph, store: &mut WeightStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        for spec in g.param_specs() {
            if !spec.role.trainable() {
                continue;
            }
            let Some(grad) = grads.params.get(&spec.name) else { continue };
            let wd = if spec.role == ParamRole::Kernel { self.weight_decay } else { 0.0 };
            let p = store
                .get_mut(&spec.name)
                .ok_or_else(|| Error::Load(format!("layer `{}`: missing weight `{}`", spec.layer, spec.name)))?;
            let v = self
                .velocity
                .entry(spec.name.clone())
                .or_insert_with(|| vec![T::zero(); grad.len()]);
            sgd_nesterov_step(
                p.data_mut(),
                grad,
                v,
                T::from_f64(lr),
                T::from_f64(self.momentum),
                T::from_f64(wd),
            )?;
        }
        Ok(())
    }
}
