//! Bilinear upsampling with half-pixel centers (`align_corners = false`).
//!
//! Source coordinate: `src = (dst + 0.5) * in / out - 0.5`, clamped at 0; the
//! upper neighbour is clamped to the last row/column.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f64,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            Tap { i0, i1, frac: src - i0 as f64 }
        })
        .collect()
}

fn lerp<T: Scalar>(a: T, b: T, t: T) -> T {
    a + t * (b - a)
}

pub fn bilinear_upsample<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    check(s.h, s.w, out_h, out_w)?;
    let ty = taps(s.h, out_h);
    let tx = taps(s.w, out_w);
    let fx: Vec<T> = tx.iter().map(|t| T::from_f64(t.frac)).collect();
    let os = s.with_hw(out_h, out_w);
    let mut out = Vec::with_capacity(os.numel());
    for plane in x.data().chunks(s.plane()) {
        for t in &ty {
            let r0 = &plane[t.i0 * s.w..][..s.w];
            let r1 = &plane[t.i1 * s.w..][..s.w];
            let fy = T::from_f64(t.frac);
            for (u, fxv) in tx.iter().zip(&fx) {
                let top = lerp(r0[u.i0], r0[u.i1], *fxv);
                let bot = lerp(r1[u.i0], r1[u.i1], *fxv);
                out.push(lerp(top, bot, fy));
            }
        }
    }
    Ok(Tensor::from_parts(os, out))
}

/// Adjoint of [`bilinear_upsample`]: scatters each output gradient onto its four sources.
pub fn upsample_backward<T: Scalar>(x_shape: crate::tensor::Shape4, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x_shape;
    let gs = grad_out.shape();
    check(s.h, s.w, gs.h, gs.w)?;
    if gs.n != s.n || gs.c != s.c {
        return Err(Error::ShapeMismatch {
            context: "upsample gradient".into(),
            left: s,
            right: gs,
        });
    }
    let ty = taps(s.h, gs.h);
    let tx = taps(s.w, gs.w);
    let mut gin = vec![T::zero(); s.numel()];
    for (gp, ip) in grad_out.data().chunks(gs.plane()).zip(gin.chunks_mut(s.plane())) {
        for (oy, t) in ty.iter().enumerate() {
            let fy = T::from_f64(t.frac);
            for (ox, u) in tx.iter().enumerate() {
                let fx = T::from_f64(u.frac);
                let g = gp[oy * gs.w + ox];
                let gt = g * (T::one() - fy);
                let gb = g * fy;
                ip[t.i0 * s.w + u.i0] = ip[t.i0 * s.w + u.i0] + gt * (T::one() - fx);
                ip[t.i0 * s.w + u.i1] = ip[t.i0 * s.w + u.i1] + gt * fx;
                ip[t.i1 * s.w + u.i0] = ip[t.i1 * s.w + u.i0] + gb * (T::one() - fx);
                ip[t.i1 * s.w + u.i1] = ip[t.i1 * s.w + u.i1] + gb * fx;
            }
        }
    }
    Ok(Tensor::from_parts(s, gin))
}

fn check(h: usize, w: usize, oh: usize, ow: usize) -> Result<()> {
    if oh < h || ow < w {
        return Err(Error::Unsupported(format!(
            "bilinear downscaling {h}x{w} -> {oh}x{ow}"
        )));
    }
    Ok(())
}
