//! Parameter and FLOP accounting.

use std::fmt;
use std::str::FromStr;

use super::{infer_shapes, Layer, LayerKind, ModelGraph};
use crate::error::{Error, Result};
use crate::tensor::Shape4;

/// How many FLOPs one multiply-accumulate is worth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FlopConvention {
    #[default]
    Mac,
    Mac2,
}

impl FlopConvention {
    pub const ALL: [FlopConvention; 2] = [FlopConvention::Mac, FlopConvention::Mac2];

    pub fn per_mac(self) -> u64 {
        match self {
            FlopConvention::Mac => 1,
            FlopConvention::Mac2 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FlopConvention::Mac => "mac",
            FlopConvention::Mac2 => "mac2",
        }
    }
}

impl fmt::Display for FlopConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FlopConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mac" => Ok(FlopConvention::Mac),
            "mac2" => Ok(FlopConvention::Mac2),
            other => Err(Error::Usage(format!("unknown convention `{other}` (expected mac or mac2)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostEntry {
    pub id: String,
    pub kind: &'static str,
    /// Known only when the report was computed for a concrete input.
    pub output: Option<Shape4>,
    /// Trainable parameters.
    pub params: u64,
    /// Everything written to a weights file, including batch-norm running statistics.
    pub stored_params: u64,
    /// Multiply-accumulates of convolution layers.
    pub macs: u64,
    /// Non-MAC elementwise work (norm, activation, pooling, upsampling, adds).
    pub other_ops: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub convention: FlopConvention,
    pub input: Option<Shape4>,
    pub entries: Vec<CostEntry>,
    pub total_params: u64,
    pub total_stored_params: u64,
    pub total_macs: u64,
    pub total_flops: u64,
}

impl CostReport {
    fn from_entries(convention: FlopConvention, input: Option<Shape4>, entries: Vec<CostEntry>) -> Self {
        CostReport {
            convention,
            input,
            total_params: entries.iter().map(|e| e.params).sum(),
            total_stored_params: entries.iter().map(|e| e.stored_params).sum(),
            total_macs: entries.iter().map(|e| e.macs).sum(),
            total_flops: entries.iter().map(|e| e.flops).sum(),
            entries,
        }
    }

    pub fn gflops(&self) -> f64 {
        self.total_flops as f64 / 1e9
    }

    pub fn mparams(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    pub fn entry(&self, id: &str) -> Option<&CostEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// (trainable, stored) parameter counts of one layer.
pub(crate) fn layer_params(layer: &Layer) -> (u64, u64) {
    let cin = layer.in_channels as u64;
    let p = match &layer.spec.kind {
        LayerKind::Conv(c) => {
            let k = (c.kernel[0] * c.kernel[1]) as u64;
            c.out_c as u64 * (cin / c.params.groups as u64) * k + if c.bias { c.out_c as u64 } else { 0 }
        }
        LayerKind::DwSepConv(d) => cin * (d.kernel * d.kernel) as u64 + cin * d.out_c as u64,
        LayerKind::BatchNorm => return (2 * layer.channels as u64, 4 * layer.channels as u64),
        _ => 0,
    };
    (p, p)
}

/// Trainable and stored parameter counts; FLOP fields are zero.
pub fn count_params(g: &ModelGraph) -> CostReport {
    let entries = g
        .layers()
        .iter()
        .map(|l| {
            let (params, stored_params) = layer_params(l);
            CostEntry {
                id: l.spec.id.clone(),
                kind: l.spec.kind.name(),
                output: None,
                params,
                stored_params,
                macs: 0,
                other_ops: 0,
                flops: 0,
            }
        })
        .collect();
    CostReport::from_entries(FlopConvention::Mac, None, entries)
}

pub fn count_flops(g: &ModelGraph, input: Shape4, convention: FlopConvention) -> Result<CostReport> {
    let shapes = infer_shapes(g, input)?;
    let entries = g
        .layers()
        .iter()
        .zip(&shapes)
        .map(|(l, &out)| {
            let x = l.inputs.first().map(|&i| shapes[i]);
            let (macs, other_ops) = layer_ops(l, x, out);
            let (params, stored_params) = layer_params(l);
            CostEntry {
                id: l.spec.id.clone(),
                kind: l.spec.kind.name(),
                output: Some(out),
                params,
                stored_params,
                macs,
                other_ops,
                flops: macs * convention.per_mac() + other_ops,
            }
        })
        .collect();
    Ok(CostReport::from_entries(convention, Some(input), entries))
}

fn layer_ops(l: &Layer, x: Option<Shape4>, out: Shape4) -> (u64, u64) {
    let numel = out.numel() as u64;
    let positions = (out.n * out.h * out.w) as u64;
    match &l.spec.kind {
        LayerKind::Conv(c) => {
            let k = (c.kernel[0] * c.kernel[1]) as u64;
            (positions * c.out_c as u64 * (l.in_channels / c.params.groups) as u64 * k, 0)
        }
        LayerKind::DwSepConv(d) => {
            let cin = l.in_channels as u64;
            (positions * (cin * (d.kernel * d.kernel) as u64 + cin * d.out_c as u64), 0)
        }
        LayerKind::BatchNorm | LayerKind::Activation(_) => (0, numel),
        LayerKind::MaxPool(p) | LayerKind::AvgPool(p) => (0, numel * (p.kernel * p.kernel) as u64),
        LayerKind::GlobalPool => (0, x.map_or(0, |s| s.numel() as u64)),
        LayerKind::Upsample => (0, 7 * numel),
        LayerKind::Add => (0, numel * (l.inputs.len() as u64 - 1)),
        LayerKind::Input { .. } | LayerKind::Concat | LayerKind::ChannelShuffle { .. } | LayerKind::OutputTap => (0, 0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use crate::ops::ConvParams;

    #[test]
    fn conv_with_bias_params() {
        let mut b = GraphBuilder::new();
        b.input("in", 3).unwrap();
        b.conv("c", "in", 96, 3, ConvParams::same(3, 1), true).unwrap();
        let r = count_params(&b.build().unwrap());
        assert_eq!(r.total_params, 2688);
    }

    #[test]
    fn pointwise_mac_count() {
        let mut b = GraphBuilder::new();
        b.input("in", 3).unwrap();
        b.conv("c", "in", 1, 1, ConvParams::default(), false).unwrap();
        let g = b.build().unwrap();
        let s = Shape4::new(1, 3, 2, 2).unwrap();
        assert_eq!(count_flops(&g, s, FlopConvention::Mac).unwrap().total_flops, 12);
        assert_eq!(count_flops(&g, s, FlopConvention::Mac2).unwrap().total_flops, 24);
    }

    #[test]
    fn batchnorm_counts_two_trainable_four_stored() {
        let mut b = GraphBuilder::new();
        b.input("in", 5).unwrap();
        b.batchnorm("bn", "in").unwrap();
        let r = count_params(&b.build().unwrap());
        assert_eq!((r.total_params, r.total_stored_params), (10, 20));
    }
}
