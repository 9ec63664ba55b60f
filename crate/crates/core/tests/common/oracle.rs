//! Reference implementations and randomized comparisons for the forward operators.

use super::*;
use liteseg::ops::*;

/// Direct seven-loop cross-correlation in f64.
pub fn naive_conv(x: &Tensor, k: &Tensor, bias: Option<&[f32]>, p: &ConvParams) -> Tensor {
    let xs = x.shape();
    let ks = k.shape();
    let icg = xs.c / p.groups;
    let ocg = ks.n / p.groups;
    let ext = |i: usize, kk: usize, a: usize| (i + 2 * p.padding[a] - (kk - 1) * p.dilation[a] - 1) / p.stride[a] + 1;
    let os = shape(xs.n, ks.n, ext(xs.h, ks.h, 0), ext(xs.w, ks.w, 1));
    Tensor::from_fn(os, |n, oc, oy, ox| {
        let g = oc / ocg;
        let mut acc = bias.map_or(0.0, |b| b[oc] as f64);
        for ic in 0..icg {
            for ky in 0..ks.h {
                for kx in 0..ks.w {
                    let iy = (oy * p.stride[0] + ky * p.dilation[0]) as isize - p.padding[0] as isize;
                    let ix = (ox * p.stride[1] + kx * p.dilation[1]) as isize - p.padding[1] as isize;
                    if iy < 0 || ix < 0 || iy as usize >= xs.h || ix as usize >= xs.w {
                        continue;
                    }
                    acc += x.at(n, g * icg + ic, iy as usize, ix as usize) as f64 * k.at(oc, ic, ky, kx) as f64;
                }
            }
        }
        acc as f32
    })
    .unwrap()
}

#[derive(Debug, Clone, Copy)]
enum GroupMode {
    Dense,
    Two,
    Three,
    Depthwise,
}

/// Randomized conv cases over dilations 1, 2, 3, 6, 9 and four group modes.
/// Returns (cases, worst absolute difference).
pub fn random_conv_cases(seed: u64) -> (usize, f64) {
    let mut r = rng(seed);
    let mut cases = 0;
    let mut worst = 0f64;
    for dilation in [1, 2, 3, 6, 9] {
        for mode in [GroupMode::Dense, GroupMode::Two, GroupMode::Three, GroupMode::Depthwise] {
            for _ in 0..6 {
                let groups = match mode {
                    GroupMode::Dense => 1,
                    GroupMode::Two => 2,
                    GroupMode::Three => 3,
                    GroupMode::Depthwise => r.gen_range(1..=4),
                };
                let (icg, ocg) = match mode {
                    GroupMode::Depthwise => (1, r.gen_range(1..=2)),
                    _ => (r.gen_range(1..=3), r.gen_range(1..=3)),
                };
                let k: usize = [1, 2, 3, 3, 5][r.gen_range(0..5)];
                let kw: usize = if r.gen_bool(0.2) { 1 } else { k };
                let stride = r.gen_range(1..=3);
                let span = (k - 1) * dilation + 1;
                let pad = r.gen_range(0..=span / 2 + 1);
                let h = (span.saturating_sub(2 * pad)).max(1) + r.gen_range(0..6);
                let w = ((kw - 1) * dilation + 1).saturating_sub(2 * pad).max(1) + r.gen_range(0..6);
                let mut p = ConvParams::default().stride(stride).padding(pad).dilation(dilation).groups(groups);
                if r.gen_bool(0.2) {
                    p.stride[1] = r.gen_range(1..=2);
                }
                let batch = r.gen_range(1..=2);
                let x: Tensor = uniform(&mut r, shape(batch, icg * groups, h, w), -1.0, 1.0);
                let kernel: Tensor = uniform(&mut r, shape(ocg * groups, icg, k, kw), -1.0, 1.0);
                let bias: Option<Vec<f32>> =
                    r.gen_bool(0.5).then(|| (0..ocg * groups).map(|_| r.gen_range(-1.0..1.0)).collect());
                let want = naive_conv(&x, &kernel, bias.as_deref(), &p);
                let got = conv2d(&x, &ConvWeights::new(kernel, bias).unwrap(), &p).unwrap();
                let d = max_abs_diff(&got, &want);
                worst = worst.max(d);
                cases += 1;
            }
        }
    }
    (cases, worst)
}

pub fn dwsep_case(r: &mut impl Rng, c: usize, out: usize, k: usize, p: ConvParams) -> (Tensor, Tensor, Tensor, ConvParams) {
    let x: Tensor = uniform(r, shape(2, c, 13, 11), -1.0, 1.0);
    let dw: Tensor = uniform(r, shape(c, 1, k, k), -1.0, 1.0);
    let pw: Tensor = uniform(r, shape(out, c, 1, 1), -1.0, 1.0);
    (x, dw, pw, p)
}

/// Number of cases where the fused layer differs from depthwise-then-pointwise in any bit.
pub fn dwsep_composition_mismatches(seed: u64) -> usize {
    let mut r = rng(seed);
    let mut bad = 0;
    for (c, out, k, d, s) in [(3, 4, 3, 1, 1), (5, 2, 3, 2, 1), (4, 8, 3, 3, 2), (6, 6, 5, 1, 2), (2, 7, 3, 6, 1)] {
        let p = ConvParams::same(k, d).stride(s);
        let (x, dw, pw, p) = dwsep_case(&mut r, c, out, k, p);
        let dw_w = ConvWeights::new(dw, None).unwrap();
        let pw_w = ConvWeights::new(pw, Some((0..out).map(|i| i as f32 * 0.1).collect())).unwrap();
        let fused = depthwise_separable_conv(&x, &dw_w, &pw_w, &p).unwrap();
        let mid = conv2d(&x, &dw_w, &ConvParams { groups: c, ..p }).unwrap();
        let two = conv2d(&mid, &pw_w, &ConvParams::default()).unwrap();
        bad += usize::from(fused != two);
    }
    bad
}

/// Worst absolute difference between a separable conv and the standard conv with its rank-1 kernel.
pub fn rank_one_worst(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0f64;
    for (c, out, k, d) in [(3, 4, 3, 1), (4, 5, 3, 2), (2, 3, 3, 3), (3, 2, 3, 6), (2, 2, 3, 9), (3, 3, 5, 1)] {
        let (x, dw, pw, p) = dwsep_case(&mut r, c, out, k, ConvParams::same(k, d));
        let full = Tensor::from_fn(shape(out, c, k, k), |o, i, y, xx| pw.at(o, i, 0, 0) * dw.at(i, 0, y, xx)).unwrap();
        let standard = conv2d(&x, &ConvWeights::new(full, None).unwrap(), &p).unwrap();
        let sep = depthwise_separable_conv(
            &x,
            &ConvWeights::new(dw, None).unwrap(),
            &ConvWeights::new(pw, None).unwrap(),
            &p,
        )
        .unwrap();
        worst = worst.max(max_abs_diff(&standard, &sep));
    }
    worst
}
