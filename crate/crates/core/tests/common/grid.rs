//! Stride and extent invariants over the input grid.

use super::*;
use liteseg::backbones::Backbone;
use liteseg::graph::{shape_map, TAP_ENCODER, TAP_LOGITS, TAP_LOW_LEVEL};
use liteseg::{build_liteseg, LiteSegConfig};

/// 64..=512 in steps of 32; includes the listed sizes 64, 128, 256 and 512.
pub fn extents() -> impl Iterator<Item = usize> + Clone {
    (2..=16).map(|k| 32 * k)
}

/// Number of inputs checked, or the first violated invariant.
pub fn check_grid(backbone: Backbone, os: usize, depthwise: bool) -> Result<usize, String> {
    let cfg = LiteSegConfig {
        output_stride: os,
        ..LiteSegConfig::for_backbone(backbone).with_depthwise(depthwise)
    };
    let m = build_liteseg(&cfg).map_err(|e| e.to_string())?;
    let g = &m.graph;
    if m.backbone.output_stride() != os {
        return Err(format!("{backbone}: backbone reports stride {}", m.backbone.output_stride()));
    }
    let tap = |name: &str| g.layers()[g.tap(name).unwrap()].spec.id.clone();
    let (enc, low, logits, last) = (tap(TAP_ENCODER), tap(TAP_LOW_LEVEL), tap(TAP_LOGITS), m.backbone.last.id.clone());
    let daspp: Vec<String> = g
        .layers()
        .iter()
        .map(|l| l.spec.id.clone())
        .filter(|id| id.starts_with("daspp."))
        .collect();
    if daspp.len() < 8 {
        return Err(format!("only {} DASPP layers", daspp.len()));
    }

    let mut cases = 0;
    for h in extents() {
        for w in extents() {
            let shapes = shape_map(g, shape(1, 3, h, w)).map_err(|e| e.to_string())?;
            let at = |id: &str| (shapes[id].h, shapes[id].w);
            let ctx = format!("{backbone} os{os} dw={depthwise} {h}x{w}");
            if at(&last) != (h / os, w / os) || at(&enc) != (h / os, w / os) {
                return Err(format!("{ctx}: encoder at {:?}, backbone at {:?}", at(&enc), at(&last)));
            }
            if let Some(id) = daspp.iter().find(|id| at(id) != at(&last)) {
                return Err(format!("{ctx}: {id} changes extents to {:?}", at(id)));
            }
            if at(&low) != (h / 4, w / 4) {
                return Err(format!("{ctx}: low-level features at {:?}", at(&low)));
            }
            let l = shapes[&logits];
            if (l.n, l.c, l.h, l.w) != (1, cfg.num_classes, h, w) {
                return Err(format!("{ctx}: logits {l}"));
            }
            cases += 1;
        }
    }
    Ok(cases)
}

/// Every backbone, both output strides, standard and depthwise heads.
pub fn check_all() -> Result<usize, String> {
    let mut total = 0;
    for backbone in Backbone::ALL {
        for os in [16, 32] {
            for depthwise in [false, true] {
                total += check_grid(backbone, os, depthwise)?;
            }
        }
    }
    Ok(total)
}
