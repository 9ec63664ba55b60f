//! Static shape inference.

use std::collections::BTreeMap;

use super::{LayerKind, ModelGraph};
use crate::error::{Error, Result};
use crate::ops::conv_output_shape;
use crate::tensor::Shape4;

/// Output shape of every layer, indexed like [`ModelGraph::layers`].
pub fn infer_shapes(g: &ModelGraph, input: Shape4) -> Result<Vec<Shape4>> {
    input.validate()?;
    let mut out: Vec<Shape4> = Vec::with_capacity(g.len());
    for layer in g.layers() {
        let id = &layer.spec.id;
        let wrap = |e: Error| Error::layer(id, e.to_string());
        let ins: Vec<Shape4> = layer.inputs.iter().map(|&i| out[i]).collect();
        let x = ins.first().copied();
        let s = match &layer.spec.kind {
            LayerKind::Input { channels } => {
                if input.c != *channels {
                    return Err(Error::layer(
                        id,
                        format!("expects {channels} channels, got input {input}"),
                    ));
                }
                input
            }
            LayerKind::Conv(c) => {
                let x = x.unwrap();
                let k = Shape4 {
                    n: c.out_c,
                    c: x.c / c.params.groups,
                    h: c.kernel[0],
                    w: c.kernel[1],
                };
                conv_output_shape(x, k, &c.params).map_err(wrap)?
            }
            LayerKind::DwSepConv(d) => {
                let x = x.unwrap();
                let k = Shape4 {
                    n: x.c,
                    c: 1,
                    h: d.kernel,
                    w: d.kernel,
                };
                let p = crate::ops::ConvParams { groups: x.c, ..d.params };
                conv_output_shape(x, k, &p).map_err(wrap)?.with_c(d.out_c)
            }
            LayerKind::MaxPool(p) | LayerKind::AvgPool(p) => p.output_shape(x.unwrap()).map_err(wrap)?,
            LayerKind::GlobalPool => x.unwrap().with_hw(1, 1),
            LayerKind::Upsample => {
                let (x, r) = (ins[0], ins[1]);
                if r.h < x.h || r.w < x.w || r.n != x.n {
                    return Err(Error::layer(
                        id,
                        format!("cannot upsample {x} to the extents of {r}"),
                    ));
                }
                x.with_hw(r.h, r.w)
            }
            LayerKind::Concat => {
                let first = ins[0];
                if let Some(bad) = ins.iter().find(|s| !s.same_nhw(&first)) {
                    return Err(Error::layer(
                        id,
                        format!("concat of {first} with {bad}: spatial extents differ"),
                    ));
                }
                first.with_c(ins.iter().map(|s| s.c).sum())
            }
            LayerKind::Add => {
                let first = ins[0];
                if let Some(bad) = ins.iter().find(|&&s| s != first) {
                    return Err(Error::layer(id, format!("add of {first} with {bad}")));
                }
                first
            }
            LayerKind::BatchNorm
            | LayerKind::Activation(_)
            | LayerKind::ChannelShuffle { .. }
            | LayerKind::OutputTap => x.unwrap(),
        };
        debug_assert_eq!(s.c, layer.channels, "channel bookkeeping for {id}");
        out.push(s);
    }
    Ok(out)
}

/// Shapes keyed by layer id.
pub fn shape_map(g: &ModelGraph, input: Shape4) -> Result<BTreeMap<String, Shape4>> {
    let shapes = infer_shapes(g, input)?;
    Ok(g
        .layers()
        .iter()
        .zip(shapes)
        .map(|(l, s)| (l.spec.id.clone(), s))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, LayerSpec};
    use crate::ops::{ConvParams, PoolParams};

    #[test]
    fn strided_graph_shapes() {
        let mut b = GraphBuilder::new();
        b.input("in", 3).unwrap();
        b.conv("c1", "in", 8, 3, ConvParams::same(3, 1).stride(2), false).unwrap();
        b.add(LayerSpec::new("mp", LayerKind::MaxPool(PoolParams::new(2, 2)), &["c1"])).unwrap();
        b.add(LayerSpec::new("up", LayerKind::Upsample, &["mp", "c1"])).unwrap();
        b.add(LayerSpec::new("cat", LayerKind::Concat, &["up", "c1"])).unwrap();
        let g = b.build().unwrap();
        let m = shape_map(&g, Shape4::new(1, 3, 64, 48).unwrap()).unwrap();
        assert_eq!(m["c1"], Shape4::new(1, 8, 32, 24).unwrap());
        assert_eq!(m["mp"], Shape4::new(1, 8, 16, 12).unwrap());
        assert_eq!(m["cat"], Shape4::new(1, 16, 32, 24).unwrap());
    }

    #[test]
    fn error_names_offending_layer() {
        let mut b = GraphBuilder::new();
        b.input("in", 3).unwrap();
        b.conv("big", "in", 4, 7, ConvParams::default(), false).unwrap();
        let g = b.build().unwrap();
        let err = infer_shapes(&g, Shape4::new(1, 3, 5, 5).unwrap()).unwrap_err();
        assert!(err.to_string().contains("`big`"), "{err}");
        let err = infer_shapes(&g, Shape4::new(1, 4, 9, 9).unwrap()).unwrap_err();
        assert!(err.to_string().contains("`in`"), "{err}");
    }
}
