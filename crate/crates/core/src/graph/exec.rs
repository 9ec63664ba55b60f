//! Graph execution: inference forward, training tape, reverse-mode backward.

use std::collections::BTreeMap;

use super::{infer_shapes, Layer, LayerKind, ModelGraph, WeightStore};
use crate::error::{Error, Result};
use crate::ops::conv::{conv2d_backward_parts, conv2d_parts, dwsep_forward};
use crate::ops::norm::BN_EPS;
use crate::ops::{
    activate, activation_backward, avgpool2d, avgpool2d_backward, batchnorm_infer, batchnorm_train,
    bilinear_upsample, bn_backward_infer, bn_backward_train, channel_shuffle, channel_unshuffle, concat_backward,
    global_avgpool, global_avgpool_backward, maxpool2d, maxpool2d_backward, upsample_backward, BatchNormParams,
    BnTrainCache, ConvParams,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which statistics batch-norm layers normalize with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BnMode {
    /// Stored running statistics (inference).
    #[default]
    Running,
    /// Statistics of the current batch (training).
    Batch,
}

enum Cache<T> {
    None,
    Bn(BnTrainCache<T>),
    DwSep(Tensor<T>),
}

fn bn_params<T: Scalar>(id: &str, w: &WeightStore<T>) -> Result<BatchNormParams<T>> {
    Ok(BatchNormParams {
        gamma: w.vector(id, "gamma")?.to_vec(),
        beta: w.vector(id, "beta")?.to_vec(),
        running_mean: w.vector(id, "running_mean")?.to_vec(),
        running_var: w.vector(id, "running_var")?.to_vec(),
        eps: T::from_f64(BN_EPS),
    })
}

fn eval_layer<T: Scalar>(
    layer: &Layer,
    ins: &[&Tensor<T>],
    w: &WeightStore<T>,
    mode: BnMode,
    keep_cache: bool,
) -> Result<(Tensor<T>, Cache<T>)> {
    let id = layer.spec.id.as_str();
    let x = ins[0];
    let y = match &layer.spec.kind {
        LayerKind::Input { .. } | LayerKind::OutputTap => x.clone(),
        LayerKind::Conv(c) => {
            let bias = if c.bias { Some(w.vector(id, "bias")?) } else { None };
            conv2d_parts(x, w.kernel(id, "weight")?, bias, &c.params)?
        }
        LayerKind::DwSepConv(d) => {
            let (mid, out) = dwsep_forward(x, w.kernel(id, "dw")?, None, w.kernel(id, "pw")?, None, &d.params)?;
            let cache = if keep_cache { Cache::DwSep(mid) } else { Cache::None };
            return Ok((out, cache));
        }
        LayerKind::BatchNorm => match mode {
            BnMode::Running => batchnorm_infer(x, &bn_params(id, w)?)?,
            BnMode::Batch => {
                let (y, cache) = batchnorm_train(x, w.vector(id, "gamma")?, w.vector(id, "beta")?, T::from_f64(BN_EPS))?;
                let cache = if keep_cache { Cache::Bn(cache) } else { Cache::None };
                return Ok((y, cache));
            }
        },
        LayerKind::Activation(a) => activate(x, *a),
        LayerKind::MaxPool(p) => maxpool2d(x, p)?,
        LayerKind::AvgPool(p) => avgpool2d(x, p)?,
        LayerKind::GlobalPool => global_avgpool(x),
        LayerKind::Upsample => {
            let r = ins[1].shape();
            bilinear_upsample(x, r.h, r.w)?
        }
        LayerKind::Concat => Tensor::concat_many(ins)?,
        LayerKind::Add => {
            let mut acc = x.clone();
            for t in &ins[1..] {
                acc = acc.add(t)?;
            }
            acc
        }
        LayerKind::ChannelShuffle { groups } => channel_shuffle(x, *groups)?,
    };
    Ok((y, Cache::None))
}

fn check_output<T: Scalar>(layer: &Layer, y: &Tensor<T>, expected: crate::tensor::Shape4) -> Result<()> {
    if y.shape() != expected {
        return Err(Error::layer(
            &layer.spec.id,
            format!("produced {} but shape inference says {expected}", y.shape()),
        ));
    }
    y.ensure_finite(&layer.spec.id)
}

/// Inference forward in insertion order. Returns every named tap.
pub fn forward<T: Scalar>(g: &ModelGraph, input: &Tensor<T>, w: &WeightStore<T>) -> Result<BTreeMap<String, Tensor<T>>> {
    let order: Vec<usize> = (0..g.len()).collect();
    forward_in_order(g, &order, input, w)
}

/// Inference forward along a caller-chosen topological order.
pub fn forward_in_order<T: Scalar>(
    g: &ModelGraph,
    order: &[usize],
    input: &Tensor<T>,
    w: &WeightStore<T>,
) -> Result<BTreeMap<String, Tensor<T>>> {
    if !g.is_topological(order) {
        return Err(Error::Usage("execution order is not a topological order of the graph".into()));
    }
    let shapes = infer_shapes(g, input.shape())?;
    let layers = g.layers();
    let mut pending = vec![0usize; layers.len()];
    for l in layers {
        for &i in &l.inputs {
            pending[i] += 1;
        }
    }
    let mut keep = vec![false; layers.len()];
    for &t in g.taps().values() {
        keep[t] = true;
    }
    let mut outs: Vec<Option<Tensor<T>>> = vec![None; layers.len()];
    for &i in order {
        let l = &layers[i];
        let y = {
            let ins: Vec<&Tensor<T>> = if l.inputs.is_empty() {
                vec![input]
            } else {
                l.inputs.iter().map(|&j| outs[j].as_ref().expect("input computed")).collect()
            };
            eval_layer(l, &ins, w, BnMode::Running, false)?.0
        };
        check_output(l, &y, shapes[i])?;
        outs[i] = Some(y);
        for &j in &l.inputs {
            pending[j] -= 1;
            if pending[j] == 0 && !keep[j] {
                outs[j] = None;
            }
        }
    }
    Ok(g
        .taps()
        .iter()
        .map(|(name, &i)| (name.clone(), outs[i].take().expect("tap kept")))
        .collect())
}

/// Every layer output and backward context of one training forward.
pub struct Tape<T = f32> {
    outputs: Vec<Tensor<T>>,
    caches: Vec<Cache<T>>,
    mode: BnMode,
}

impl<T: Scalar> Tape<T> {
    pub fn output(&self, index: usize) -> &Tensor<T> {
        &self.outputs[index]
    }

    pub fn tap(&self, g: &ModelGraph, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.outputs[g.tap(name)?])
    }

    /// `(layer index, batch mean, biased batch variance, element count)` per batch-norm layer.
    pub fn batch_stats(&self) -> impl Iterator<Item = (usize, &[T], &[T], usize)> {
        self.caches.iter().enumerate().filter_map(|(i, c)| match c {
            Cache::Bn(b) => Some((i, b.mean.as_slice(), b.var.as_slice(), b.count)),
            _ => None,
        })
    }
}

pub fn forward_train<T: Scalar>(g: &ModelGraph, input: &Tensor<T>, w: &WeightStore<T>, mode: BnMode) -> Result<Tape<T>> {
    let shapes = infer_shapes(g, input.shape())?;
    let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(g.len());
    let mut caches = Vec::with_capacity(g.len());
    for (i, l) in g.layers().iter().enumerate() {
        let (y, cache) = {
            let ins: Vec<&Tensor<T>> = if l.inputs.is_empty() {
                vec![input]
            } else {
                l.inputs.iter().map(|&j| &outputs[j]).collect()
            };
            eval_layer(l, &ins, w, mode, true)?
        };
        check_output(l, &y, shapes[i])?;
        outputs.push(y);
        caches.push(cache);
    }
    Ok(Tape { outputs, caches, mode })
}

#[derive(Debug, Clone, Default)]
pub struct Gradients<T = f32> {
    /// Keyed by parameter name; only parameters upstream of the seeded tap appear.
    pub params: BTreeMap<String, Vec<T>>,
    pub input: Option<Tensor<T>>,
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    *slot = Some(match slot.take() {
        None => g,
        Some(prev) => prev.add(&g)?,
    });
    Ok(())
}

/// Backpropagate `seed` (gradient of the objective w.r.t. the tap `tap`) through the tape.
pub fn backward<T: Scalar>(
    g: &ModelGraph,
    tape: &Tape<T>,
    w: &WeightStore<T>,
    tap: &str,
    seed: Tensor<T>,
) -> Result<Gradients<T>> {
    let start = g.tap(tap)?;
    if seed.shape() != tape.outputs[start].shape() {
        return Err(Error::ShapeMismatch {
            context: format!("gradient seed for tap `{tap}`"),
            left: tape.outputs[start].shape(),
            right: seed.shape(),
        });
    }
    let layers = g.layers();
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; layers.len()];
    grads[start] = Some(seed);
    let mut out = Gradients::default();
    for i in (0..=start).rev() {
        let Some(go) = grads[i].take() else { continue };
        let l = &layers[i];
        let id = l.spec.id.as_str();
        let x = l.inputs.first().map(|&j| &tape.outputs[j]);
        let mut param = |suffix: &str, v: Vec<T>| {
            out.params.insert(format!("{id}.{suffix}"), v);
        };
        let to_inputs: Vec<Tensor<T>> = match &l.spec.kind {
            LayerKind::Input { .. } => {
                out.input = Some(go);
                continue;
            }
            LayerKind::OutputTap => vec![go],
            LayerKind::Conv(c) => {
                let r = conv2d_backward_parts(x.unwrap(), w.kernel(id, "weight")?, c.bias, &c.params, &go)?;
                param("weight", r.kernel.into_vec());
                if let Some(b) = r.bias {
                    param("bias", b);
                }
                vec![r.input]
            }
            LayerKind::DwSepConv(d) => {
                let Cache::DwSep(mid) = &tape.caches[i] else {
                    return Err(Error::Usage(format!("layer `{id}`: missing forward context")));
                };
                let x = x.unwrap();
                let pw = conv2d_backward_parts(mid, w.kernel(id, "pw")?, false, &ConvParams::default(), &go)?;
                let dwp = ConvParams { groups: x.shape().c, ..d.params };
                let dw = conv2d_backward_parts(x, w.kernel(id, "dw")?, false, &dwp, &pw.input)?;
                param("pw", pw.kernel.into_vec());
                param("dw", dw.kernel.into_vec());
                vec![dw.input]
            }
            LayerKind::BatchNorm => {
                let (gin, ggamma, gbeta) = match (tape.mode, &tape.caches[i]) {
                    (BnMode::Batch, Cache::Bn(cache)) => bn_backward_train(&go, w.vector(id, "gamma")?, cache)?,
                    (BnMode::Running, _) => bn_backward_infer(x.unwrap(), &bn_params(id, w)?, &go)?,
                    _ => return Err(Error::Usage(format!("layer `{id}`: missing forward context"))),
                };
                param("gamma", ggamma);
                param("beta", gbeta);
                vec![gin]
            }
            LayerKind::Activation(a) => vec![activation_backward(x.unwrap(), *a, &go)?],
            LayerKind::MaxPool(p) => vec![maxpool2d_backward(x.unwrap(), p, &go)?],
            LayerKind::AvgPool(p) => vec![avgpool2d_backward(x.unwrap().shape(), p, &go)?],
            LayerKind::GlobalPool => vec![global_avgpool_backward(x.unwrap().shape(), &go)?],
            // The reference input only supplies extents.
            LayerKind::Upsample => vec![upsample_backward(x.unwrap().shape(), &go)?],
            LayerKind::Concat => {
                let chans: Vec<usize> = l.inputs.iter().map(|&j| layers[j].channels).collect();
                concat_backward(&go, &chans)?
            }
            LayerKind::Add => vec![go; l.inputs.len()],
            LayerKind::ChannelShuffle { groups } => vec![channel_unshuffle(&go, *groups)?],
        };
        for (&j, gj) in l.inputs.iter().zip(to_inputs) {
            accumulate(&mut grads[j], gj)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, LayerSpec, TAP_LOGITS};
    use crate::ops::Activation;
    use crate::tensor::Shape4;

    #[test]
    fn identity_conv_graph() {
        let mut b = GraphBuilder::new();
        b.input("in", 2).unwrap();
        b.conv("id", "in", 2, 1, ConvParams::default(), false).unwrap();
        b.tap(TAP_LOGITS, "id").unwrap();
        let g = b.build().unwrap();
        let mut w = WeightStore::new();
        let k = Tensor::from_vec(Shape4::new(2, 2, 1, 1).unwrap(), vec![1.0f32, 0.0, 0.0, 1.0]).unwrap();
        w.insert("id.weight", crate::graph::Param::Kernel(k));
        let x = Tensor::from_fn(Shape4::new(1, 2, 3, 3).unwrap(), |_, c, y, x| (c * 9 + y * 3 + x) as f32).unwrap();
        let out = forward(&g, &x, &w).unwrap();
        assert_eq!(out[TAP_LOGITS], x);
    }

    #[test]
    fn missing_weight_names_layer() {
        let mut b = GraphBuilder::new();
        b.input("in", 2).unwrap();
        b.conv("head", "in", 2, 1, ConvParams::default(), false).unwrap();
        let g = b.build().unwrap();
        let x = Tensor::<f32>::zeros(Shape4::new(1, 2, 2, 2).unwrap()).unwrap();
        let err = forward(&g, &x, &WeightStore::new()).unwrap_err();
        assert!(matches!(&err, Error::Load(m) if m.contains("`head`")), "{err}");
    }

    #[test]
    fn shared_input_gradients_accumulate() {
        let mut b = GraphBuilder::new();
        b.input("in", 1).unwrap();
        b.activation("a", "in", Activation::Relu).unwrap();
        b.add(LayerSpec::new("sum", LayerKind::Add, &["a", "a", "in"])).unwrap();
        b.tap(TAP_LOGITS, "sum").unwrap();
        let g = b.build().unwrap();
        let x = Tensor::from_vec(Shape4::new(1, 1, 1, 2).unwrap(), vec![1.0f64, -1.0]).unwrap();
        let w = WeightStore::new();
        let tape = forward_train(&g, &x, &w, BnMode::Batch).unwrap();
        let seed = Tensor::full(x.shape(), 1.0).unwrap();
        let gr = backward(&g, &tape, &w, TAP_LOGITS, seed).unwrap();
        assert_eq!(gr.input.unwrap().data(), &[3.0, 1.0]);
    }
}
