//! Feature-extractor subgraphs: Darknet19, MobileNetV2 and ShuffleNet v1.
//!
//! Classification heads are dropped. Output stride 16 is obtained by turning
//! the last downsampling step into a stride-1 step, with no dilation added.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, LayerKind, LayerSpec, ModelGraph, TAP_ENCODER, TAP_LOW_LEVEL};
use crate::ops::{Activation, ConvParams, PoolParams, DARKNET_LEAKY_SLOPE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backbone {
    Darknet19,
    MobileNetV2,
    ShuffleNet,
}

impl Backbone {
    pub const ALL: [Backbone; 3] = [Backbone::Darknet19, Backbone::MobileNetV2, Backbone::ShuffleNet];

    pub fn name(self) -> &'static str {
        match self {
            Backbone::Darknet19 => "darknet19",
            Backbone::MobileNetV2 => "mobilenetv2",
            Backbone::ShuffleNet => "shufflenet",
        }
    }

    /// Output stride the reference configuration uses.
    pub fn default_stride(self) -> usize {
        match self {
            Backbone::Darknet19 => 16,
            _ => 32,
        }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backbone {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Backbone::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown backbone `{s}` (expected darknet19, mobilenetv2 or shufflenet)")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureTap {
    pub id: String,
    pub channels: usize,
    /// Per-axis downsampling factor relative to the image.
    pub stride: usize,
}

/// Taps left behind after appending a backbone to a builder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneTaps {
    pub low_level: FeatureTap,
    pub last: FeatureTap,
}

impl BackboneTaps {
    pub fn output_stride(&self) -> usize {
        self.last.stride
    }
}

/// A standalone backbone graph with `low_level_feature` and `encoder_out` taps.
#[derive(Debug, Clone)]
pub struct BackboneBuild {
    pub graph: ModelGraph,
    pub taps: BackboneTaps,
}

impl BackboneBuild {
    pub fn output_stride(&self) -> usize {
        self.taps.output_stride()
    }
}

fn check_stride(os: usize) -> Result<()> {
    if os == 16 || os == 32 {
        Ok(())
    } else {
        Err(Error::Unsupported(format!("output stride {os} (expected 16 or 32)")))
    }
}

fn check_width(width: f64) -> Result<()> {
    if width.is_finite() && width > 0.0 {
        Ok(())
    } else {
        Err(Error::Usage(format!("width multiplier {width} must be positive")))
    }
}

/// Round `v` to the nearest positive multiple of `m`.
fn round_to(v: f64, m: usize) -> usize {
    (((v / m as f64).round() as usize).max(1)) * m
}

/// Append a backbone reading from layer `input`.
pub fn append_backbone(b: &mut GraphBuilder, kind: Backbone, input: &str, os: usize, width: f64) -> Result<BackboneTaps> {
    check_stride(os)?;
    check_width(width)?;
    match kind {
        Backbone::Darknet19 => darknet19(b, input, os, width),
        Backbone::MobileNetV2 => mobilenetv2(b, input, os, width),
        Backbone::ShuffleNet => shufflenet(b, input, os, width),
    }
}

fn standalone(kind: Backbone, os: usize, width: f64) -> Result<BackboneBuild> {
    let mut b = GraphBuilder::new();
    b.input("input", 3)?;
    let taps = append_backbone(&mut b, kind, "input", os, width)?;
    b.tap(TAP_LOW_LEVEL, &taps.low_level.id)?;
    b.tap(TAP_ENCODER, &taps.last.id)?;
    Ok(BackboneBuild { graph: b.build()?, taps })
}

pub fn build_darknet19(os: usize) -> Result<BackboneBuild> {
    standalone(Backbone::Darknet19, os, 1.0)
}

pub fn build_mobilenetv2(os: usize) -> Result<BackboneBuild> {
    standalone(Backbone::MobileNetV2, os, 1.0)
}

pub fn build_shufflenet(os: usize) -> Result<BackboneBuild> {
    standalone(Backbone::ShuffleNet, os, 1.0)
}

pub fn build_backbone(kind: Backbone, os: usize, width: f64) -> Result<BackboneBuild> {
    standalone(kind, os, width)
}

fn darknet19(b: &mut GraphBuilder, input: &str, os: usize, width: f64) -> Result<BackboneTaps> {
    let leaky = Some(Activation::LeakyRelu(DARKNET_LEAKY_SLOPE));
    let ch = |c: usize| ((c as f64 * width).round() as usize).max(1);
    // (filters, kernel) per conv; `None` marks a 2x2 max pool.
    let plan: [&[Option<(usize, usize)>]; 6] = [
        &[Some((32, 3)), None],
        &[Some((64, 3)), None],
        &[Some((128, 3)), Some((64, 1)), Some((128, 3))],
        &[None, Some((256, 3)), Some((128, 1)), Some((256, 3))],
        &[None, Some((512, 3)), Some((256, 1)), Some((512, 3)), Some((256, 1)), Some((512, 3))],
        &[None, Some((1024, 3)), Some((512, 1)), Some((1024, 3)), Some((512, 1)), Some((1024, 3))],
    ];
    let mut cur = input.to_string();
    let mut stride = 1;
    let mut conv_i = 0;
    let mut pool_i = 0;
    let mut low = None;
    for (stage, steps) in plan.iter().enumerate() {
        for step in steps.iter() {
            match step {
                Some((f, k)) => {
                    conv_i += 1;
                    let id = format!("dark.conv{conv_i}");
                    cur = b.conv_bn(&id, &cur, ch(*f), *k, ConvParams::same(*k, 1), leaky)?;
                }
                None => {
                    pool_i += 1;
                    // the last pool is what os=16 drops
                    if stage == 5 && os == 16 {
                        continue;
                    }
                    let id = format!("dark.pool{pool_i}");
                    cur = b.add(LayerSpec::new(id, LayerKind::MaxPool(PoolParams::new(2, 2)), &[&cur]))?;
                    stride *= 2;
                }
            }
        }
        if stage == 2 {
            low = Some(FeatureTap {
                id: cur.clone(),
                channels: b.channels(&cur)?,
                stride,
            });
        }
    }
    Ok(BackboneTaps {
        low_level: low.expect("stage 2 visited"),
        last: FeatureTap {
            channels: b.channels(&cur)?,
            id: cur,
            stride,
        },
    })
}

fn mobilenetv2(b: &mut GraphBuilder, input: &str, os: usize, width: f64) -> Result<BackboneTaps> {
    let relu6 = Some(Activation::Relu6);
    let ch = |c: usize| round_to(c as f64 * width, 8);
    let mut cur = b.conv_bn("mbv2.stem", input, ch(32), 3, ConvParams::same(3, 1).stride(2), relu6)?;
    let mut c = ch(32);
    let mut stride = 2;
    let mut low = None;
    // (expansion, filters, repeats, first stride)
    let plan = [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2), (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)];
    for (bi, &(t, f, n, s)) in plan.iter().enumerate() {
        let out = ch(f);
        // os=16 keeps the 160-filter stage at stride 1
        let s = if f == 160 && os == 16 { 1 } else { s };
        for i in 0..n {
            let st = if i == 0 { s } else { 1 };
            let id = format!("mbv2.b{}_{}", bi + 1, i + 1);
            let block_in = cur.clone();
            let e = c * t;
            let mut x = cur.clone();
            if t != 1 {
                x = b.conv_bn(&format!("{id}.expand"), &x, e, 1, ConvParams::default(), relu6)?;
            }
            x = b.conv_bn(&format!("{id}.dw"), &x, e, 3, ConvParams::same(3, 1).stride(st).groups(e), relu6)?;
            x = b.conv_bn(&format!("{id}.project"), &x, out, 1, ConvParams::default(), None)?;
            if st == 1 && c == out {
                x = b.add(LayerSpec::new(format!("{id}.add"), LayerKind::Add, &[&x, &block_in]))?;
            }
            stride *= st;
            cur = x;
            c = out;
        }
        if f == 24 {
            low = Some(FeatureTap {
                id: cur.clone(),
                channels: c,
                stride,
            });
        }
    }
    let last = round_to(1280.0 * width, 8);
    cur = b.conv_bn("mbv2.last", &cur, last, 1, ConvParams::default(), relu6)?;
    Ok(BackboneTaps {
        low_level: low.expect("24-filter stage visited"),
        last: FeatureTap {
            id: cur,
            channels: last,
            stride,
        },
    })
}

const SHUFFLE_GROUPS: usize = 3;

fn shufflenet(b: &mut GraphBuilder, input: &str, os: usize, width: f64) -> Result<BackboneTaps> {
    let g = SHUFFLE_GROUPS;
    let relu = Some(Activation::Relu);
    let stem_c = round_to(24.0 * width, g);
    b.conv_bn("shuf.stem", input, stem_c, 3, ConvParams::same(3, 1).stride(2), relu)?;
    let mut cur = b.add(LayerSpec::new(
        "shuf.pool",
        LayerKind::MaxPool(PoolParams::new(3, 2).padding(1)),
        &["shuf.stem.act"],
    ))?;
    let mut stride = 4;
    let low = FeatureTap {
        id: cur.clone(),
        channels: stem_c,
        stride,
    };
    let mut c = stem_c;
    for (si, (&f, &n)) in [240usize, 480, 960].iter().zip(&[4usize, 8, 4]).enumerate() {
        let out = round_to(f as f64 * width, 4 * g);
        let mid = out / 4;
        for i in 0..n {
            let id = format!("shuf.s{}_{}", si + 2, i + 1);
            let first = i == 0;
            let st = if first && !(si == 2 && os == 16) { 2 } else { 1 };
            // the first unit widens by concatenating a pooled shortcut
            let branch_out = if first { out - c } else { out };
            let g_in = if si == 0 && first { 1 } else { g };
            let x = b.conv_bn(&format!("{id}.gconv1"), &cur, mid, 1, ConvParams::default().groups(g_in), relu)?;
            let x = b.add(LayerSpec::new(format!("{id}.shuffle"), LayerKind::ChannelShuffle { groups: g }, &[&x]))?;
            let x = b.conv_bn(&format!("{id}.dw"), &x, mid, 3, ConvParams::same(3, 1).stride(st).groups(mid), None)?;
            let x = b.conv_bn(&format!("{id}.gconv2"), &x, branch_out, 1, ConvParams::default().groups(g), None)?;
            let merged = if first {
                let pool = PoolParams::new(3, st).padding(1);
                let sc = b.add(LayerSpec::new(format!("{id}.shortcut"), LayerKind::AvgPool(pool), &[&cur]))?;
                b.add(LayerSpec::new(format!("{id}.cat"), LayerKind::Concat, &[&sc, &x]))?
            } else {
                b.add(LayerSpec::new(format!("{id}.add"), LayerKind::Add, &[&x, &cur]))?
            };
            cur = b.activation(&format!("{id}.act"), &merged, Activation::Relu)?;
            stride *= st;
            c = out;
        }
    }
    Ok(BackboneTaps {
        low_level: low,
        last: FeatureTap {
            id: cur,
            channels: c,
            stride,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{count_params, shape_map};
    use crate::tensor::Shape4;

    #[test]
    fn strides_and_final_extents() {
        let input = Shape4::new(1, 3, 512, 1024).unwrap();
        for kind in Backbone::ALL {
            for os in [16, 32] {
                let bb = build_backbone(kind, os, 1.0).unwrap();
                assert_eq!(bb.output_stride(), os, "{kind}");
                let shapes = shape_map(&bb.graph, input).unwrap();
                let last = shapes[&bb.taps.last.id];
                assert_eq!((last.h, last.w), (512 / os, 1024 / os), "{kind} os{os}");
                let low = shapes[&bb.taps.low_level.id];
                assert_eq!((low.h, low.c), (128, bb.taps.low_level.channels), "{kind}");
            }
        }
    }

    #[test]
    fn tap_channels() {
        assert_eq!(build_mobilenetv2(32).unwrap().taps.low_level.channels, 24);
        assert_eq!(build_mobilenetv2(32).unwrap().taps.last.channels, 1280);
        assert_eq!(build_darknet19(16).unwrap().taps.last.channels, 1024);
        assert_eq!(build_shufflenet(32).unwrap().taps.last.channels, 960);
    }

    #[test]
    fn darknet_has_eighteen_convs_and_about_twenty_million_params() {
        let bb = build_darknet19(16).unwrap();
        let convs = bb.graph.layers().iter().filter(|l| l.spec.kind.name() == "conv").count();
        assert_eq!(convs, 18);
        let p = count_params(&bb.graph).mparams();
        assert!((p - 19.8).abs() / 19.8 < 0.1, "{p}");
    }

    #[test]
    fn unsupported_stride() {
        assert!(matches!(build_shufflenet(8), Err(Error::Unsupported(_))));
    }
}
