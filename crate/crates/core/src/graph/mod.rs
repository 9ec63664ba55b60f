//! Declarative layer DAG.
//!
//! Layers are appended in an order where every input already exists, so the
//! insertion order is always a valid topological order. Channel counts are
//! resolved while building; spatial extents are resolved by [`infer_shapes`]
//! for a concrete input.

mod cost;
mod exec;
mod shapes;
mod weights;

pub use cost::{count_flops, count_params, CostEntry, CostReport, FlopConvention};
pub use exec::{backward, forward, forward_in_order, forward_train, BnMode, Gradients, Tape};
pub use shapes::{infer_shapes, shape_map};
pub use weights::{Param, ParamRole, ParamSpec, WeightStore, LSW_MAGIC};

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::ops::{Activation, ConvParams, PoolParams};

pub const TAP_LOW_LEVEL: &str = "low_level_feature";
pub const TAP_ENCODER: &str = "encoder_out";
pub const TAP_LOGITS: &str = "logits";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvSpec {
    pub out_c: usize,
    pub kernel: [usize; 2],
    pub params: ConvParams,
    pub bias: bool,
}

/// Depthwise `k x k` conv (stride, padding and dilation from `params`) then a 1x1 projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwSepSpec {
    pub out_c: usize,
    pub kernel: usize,
    pub params: ConvParams,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Input { channels: usize },
    Conv(ConvSpec),
    DwSepConv(DwSepSpec),
    BatchNorm,
    Activation(Activation),
    MaxPool(PoolParams),
    AvgPool(PoolParams),
    GlobalPool,
    /// Bilinear upsample of input 0 to the spatial extents of input 1.
    Upsample,
    Concat,
    Add,
    ChannelShuffle { groups: usize },
    OutputTap,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv(_) => "conv",
            LayerKind::DwSepConv(_) => "dwsep_conv",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Activation(_) => "activation",
            LayerKind::MaxPool(_) => "maxpool",
            LayerKind::AvgPool(_) => "avgpool",
            LayerKind::GlobalPool => "globalpool",
            LayerKind::Upsample => "upsample",
            LayerKind::Concat => "concat",
            LayerKind::Add => "add",
            LayerKind::ChannelShuffle { .. } => "shuffle",
            LayerKind::OutputTap => "output_tap",
        }
    }

    fn arity_ok(&self, n: usize) -> bool {
        match self {
            LayerKind::Input { .. } => n == 0,
            LayerKind::Upsample => n == 2,
            LayerKind::Concat => n >= 1,
            LayerKind::Add => n >= 2,
            _ => n == 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
}

impl LayerSpec {
    pub fn new(id: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> Self {
        LayerSpec {
            id: id.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    pub inputs: Vec<usize>,
    /// Output channel count.
    pub channels: usize,
    /// Input channel count of the first input (0 for the input layer).
    pub in_channels: usize,
}

#[derive(Debug, Clone)]
pub struct ModelGraph {
    layers: Vec<Layer>,
    index: HashMap<String, usize>,
    taps: BTreeMap<String, usize>,
    input: usize,
}

impl ModelGraph {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_index(&self) -> usize {
        self.input
    }

    pub fn input_channels(&self) -> usize {
        self.layers[self.input].channels
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn layer(&self, id: &str) -> Option<&Layer> {
        self.index_of(id).map(|i| &self.layers[i])
    }

    pub fn taps(&self) -> &BTreeMap<String, usize> {
        &self.taps
    }

    pub fn tap(&self, name: &str) -> Result<usize> {
        self.taps
            .get(name)
            .copied()
            .ok_or_else(|| Error::Usage(format!("graph has no tap `{name}`")))
    }

    /// True when every layer appears after all of its inputs.
    pub fn is_topological(&self, order: &[usize]) -> bool {
        if order.len() != self.layers.len() {
            return false;
        }
        let mut pos = vec![usize::MAX; self.layers.len()];
        for (p, &i) in order.iter().enumerate() {
            if i >= pos.len() || pos[i] != usize::MAX {
                return false;
            }
            pos[i] = p;
        }
        self.layers
            .iter()
            .enumerate()
            .all(|(i, l)| l.inputs.iter().all(|&j| pos[j] < pos[i]))
    }

    /// Parameters every parameterized layer owns, in layer order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        weights::param_specs(self)
    }
}

/// Incremental graph construction with build-time channel checks.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    layers: Vec<Layer>,
    index: HashMap<String, usize>,
    taps: BTreeMap<String, usize>,
    input: Option<usize>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn channels(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .map(|&i| self.layers[i].channels)
            .ok_or_else(|| Error::layer(id, "unknown layer"))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn add(&mut self, spec: LayerSpec) -> Result<String> {
        let id = spec.id.clone();
        if self.index.contains_key(&id) {
            return Err(Error::layer(&id, "duplicate layer id"));
        }
        if !spec.kind.arity_ok(spec.inputs.len()) {
            return Err(Error::layer(
                &id,
                format!("{} cannot take {} inputs", spec.kind.name(), spec.inputs.len()),
            ));
        }
        let inputs = spec
            .inputs
            .iter()
            .map(|i| {
                self.index
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::layer(&id, format!("input `{i}` does not exist")))
            })
            .collect::<Result<Vec<_>>>()?;
        let in_ch: Vec<usize> = inputs.iter().map(|&i| self.layers[i].channels).collect();
        let first = in_ch.first().copied().unwrap_or(0);
        let channels = match &spec.kind {
            LayerKind::Input { channels } => {
                if self.input.is_some() {
                    return Err(Error::layer(&id, "graph already has an input layer"));
                }
                if *channels == 0 {
                    return Err(Error::layer(&id, "input needs at least one channel"));
                }
                *channels
            }
            LayerKind::Conv(c) => {
                c.params.validate().map_err(|e| Error::layer(&id, e.to_string()))?;
                let g = c.params.groups;
                if c.out_c == 0 || c.kernel.contains(&0) {
                    return Err(Error::layer(&id, "conv needs positive filters and kernel"));
                }
                if first % g != 0 || c.out_c % g != 0 {
                    return Err(Error::layer(
                        &id,
                        format!("groups {g} must divide in {first} and out {} channels", c.out_c),
                    ));
                }
                c.out_c
            }
            LayerKind::DwSepConv(d) => {
                d.params.validate().map_err(|e| Error::layer(&id, e.to_string()))?;
                if d.out_c == 0 || d.kernel == 0 {
                    return Err(Error::layer(&id, "dwsep conv needs positive filters and kernel"));
                }
                d.out_c
            }
            LayerKind::Concat => in_ch.iter().sum(),
            LayerKind::Add => {
                if in_ch.iter().any(|&c| c != first) {
                    return Err(Error::layer(&id, format!("add of unequal channel counts {in_ch:?}")));
                }
                first
            }
            LayerKind::ChannelShuffle { groups } => {
                if *groups == 0 || first % groups != 0 {
                    return Err(Error::layer(&id, format!("{groups} groups do not divide {first} channels")));
                }
                first
            }
            _ => first,
        };
        let idx = self.layers.len();
        if matches!(spec.kind, LayerKind::Input { .. }) {
            self.input = Some(idx);
        }
        self.layers.push(Layer {
            spec,
            inputs,
            channels,
            in_channels: first,
        });
        self.index.insert(id.clone(), idx);
        Ok(id)
    }

    pub fn input(&mut self, id: &str, channels: usize) -> Result<String> {
        self.add(LayerSpec::new(id, LayerKind::Input { channels }, &[]))
    }

    pub fn conv(&mut self, id: &str, input: &str, out_c: usize, kernel: usize, params: ConvParams, bias: bool) -> Result<String> {
        let spec = ConvSpec {
            out_c,
            kernel: [kernel, kernel],
            params,
            bias,
        };
        self.add(LayerSpec::new(id, LayerKind::Conv(spec), &[input]))
    }

    pub fn dwsep(&mut self, id: &str, input: &str, out_c: usize, kernel: usize, params: ConvParams) -> Result<String> {
        let spec = DwSepSpec { out_c, kernel, params };
        self.add(LayerSpec::new(id, LayerKind::DwSepConv(spec), &[input]))
    }

    pub fn batchnorm(&mut self, id: &str, input: &str) -> Result<String> {
        self.add(LayerSpec::new(id, LayerKind::BatchNorm, &[input]))
    }

    pub fn activation(&mut self, id: &str, input: &str, act: Activation) -> Result<String> {
        self.add(LayerSpec::new(id, LayerKind::Activation(act), &[input]))
    }

    /// Bias-free conv, batch norm, optional activation. Layers are `{id}`, `{id}.bn`, `{id}.act`.
    pub fn conv_bn(&mut self, id: &str, input: &str, out_c: usize, kernel: usize, params: ConvParams, act: Option<Activation>) -> Result<String> {
        self.conv(id, input, out_c, kernel, params, false)?;
        self.bn_act(id, act)
    }

    /// Depthwise-separable conv, batch norm, optional activation.
    pub fn dwsep_bn(&mut self, id: &str, input: &str, out_c: usize, kernel: usize, params: ConvParams, act: Option<Activation>) -> Result<String> {
        self.dwsep(id, input, out_c, kernel, params)?;
        self.bn_act(id, act)
    }

    fn bn_act(&mut self, id: &str, act: Option<Activation>) -> Result<String> {
        let bn = self.batchnorm(&format!("{id}.bn"), id)?;
        match act {
            Some(a) => self.activation(&format!("{id}.act"), &bn, a),
            None => Ok(bn),
        }
    }

    pub fn tap(&mut self, name: &str, layer: &str) -> Result<()> {
        let idx = *self
            .index
            .get(layer)
            .ok_or_else(|| Error::layer(layer, format!("tap `{name}` targets a missing layer")))?;
        self.taps.insert(name.to_string(), idx);
        Ok(())
    }

    pub fn build(self) -> Result<ModelGraph> {
        let input = self
            .input
            .ok_or_else(|| Error::Shape("graph has no input layer".into()))?;
        Ok(ModelGraph {
            layers: self.layers,
            index: self.index,
            taps: self.taps,
            input,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_dangling_inputs() {
        let mut b = GraphBuilder::new();
        b.input("in", 3).unwrap();
        assert!(b.conv("in", "in", 4, 3, ConvParams::default(), false).is_err());
        let err = b.conv("c", "nope", 4, 3, ConvParams::default(), false).unwrap_err();
        assert!(err.to_string().contains("`c`"), "{err}");
        assert!(b.input("in2", 3).is_err());
    }

    #[test]
    fn channel_bookkeeping() {
        let mut b = GraphBuilder::new();
        b.input("in", 3).unwrap();
        b.conv("a", "in", 96, 1, ConvParams::default(), false).unwrap();
        b.conv("b", "in", 24, 1, ConvParams::default(), false).unwrap();
        b.add(LayerSpec::new("cat", LayerKind::Concat, &["a", "b"])).unwrap();
        assert_eq!(b.channels("cat").unwrap(), 120);
        assert!(b.add(LayerSpec::new("sum", LayerKind::Add, &["a", "b"])).is_err());
        assert!(b.conv("g", "cat", 10, 3, ConvParams::default().groups(3), false).is_err());
    }
}
