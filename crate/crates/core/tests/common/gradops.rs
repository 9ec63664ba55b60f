//! Per-operator finite-difference checks. Each returns one outcome per checked tensor.

use super::*;
use liteseg::graph::*;
use liteseg::ops::*;
use liteseg::train::{check_graph, GradcheckReport};
use liteseg::{LabelMap, IGNORE_INDEX};
use rand::seq::SliceRandom;

type T64 = Tensor<f64>;

fn t(s: Shape4, data: &[f64]) -> T64 {
    Tensor::from_vec(s, data.to_vec()).unwrap()
}

fn conv_case(seed: u64, xs: Shape4, ks: Shape4, p: ConvParams, bias: bool) -> Vec<FdOutcome> {
    let mut r = rng(seed);
    let x: T64 = uniform(&mut r, xs, -1.0, 1.0);
    let k: T64 = uniform(&mut r, ks, -1.0, 1.0);
    let b: Option<Vec<f64>> = bias.then(|| (0..ks.n).map(|_| r.gen_range(-1.0..1.0)).collect());
    let w = ConvWeights::new(k.clone(), b.clone()).unwrap();
    let y = conv2d(&x, &w, &p).unwrap();
    let proj: T64 = uniform(&mut r, y.shape(), -1.0, 1.0);
    let g = conv2d_backward(&x, &w, &p, &proj).unwrap();

    let loss = |x: &T64, k: &T64, b: &Option<Vec<f64>>| {
        project(&conv2d(x, &ConvWeights::new(k.clone(), b.clone()).unwrap(), &p).unwrap(), &proj)
    };
    let tag = format!("conv {ks} s{:?} d{:?} g{}", p.stride, p.dilation, p.groups);
    let mut out = vec![
        fd_check(&format!("{tag} input"), x.data(), g.input.data(), &mut r, |v| loss(&t(xs, v), &k, &b)),
        fd_check(&format!("{tag} kernel"), k.data(), g.kernel.data(), &mut r, |v| loss(&x, &t(ks, v), &b)),
    ];
    if let (Some(bv), Some(gb)) = (&b, &g.bias) {
        out.push(fd_check(&format!("{tag} bias"), bv, gb, &mut r, |v| loss(&x, &k, &Some(v.to_vec()))));
    }
    out
}

pub fn conv_dense() -> Vec<FdOutcome> {
    [
        conv_case(1, shape(2, 3, 9, 8), shape(4, 3, 3, 3), ConvParams::default().padding(1), true),
        conv_case(2, shape(1, 4, 11, 10), shape(2, 4, 3, 3), ConvParams::default().stride(2).padding(2).dilation(2), false),
        conv_case(3, shape(1, 2, 20, 20), shape(3, 2, 3, 3), ConvParams::same(3, 6), true),
        conv_case(4, shape(1, 2, 21, 21), shape(2, 2, 3, 3), ConvParams::same(3, 9), false),
        conv_case(5, shape(2, 5, 6, 7), shape(3, 5, 1, 1), ConvParams::default(), true),
    ]
    .concat()
}

pub fn conv_grouped() -> Vec<FdOutcome> {
    [
        conv_case(6, shape(1, 6, 8, 8), shape(6, 2, 3, 3), ConvParams::default().padding(1).groups(3), true),
        conv_case(7, shape(2, 4, 9, 9), shape(4, 1, 3, 3), ConvParams::same(3, 3).groups(4), false),
        conv_case(8, shape(1, 3, 10, 10), shape(6, 1, 3, 3), ConvParams::default().stride(2).padding(1).groups(3), true),
    ]
    .concat()
}

pub fn batchnorm_train_op() -> Vec<FdOutcome> {
    let mut r = rng(10);
    let s = shape(2, 3, 4, 5);
    let x: T64 = uniform(&mut r, s, -2.0, 2.0);
    let gamma: Vec<f64> = (0..3).map(|_| r.gen_range(0.5..1.5)).collect();
    let beta: Vec<f64> = (0..3).map(|_| r.gen_range(-0.5..0.5)).collect();
    let eps = 1e-5;
    let (y, cache) = batchnorm_train(&x, &gamma, &beta, eps).unwrap();
    let proj: T64 = uniform(&mut r, y.shape(), -1.0, 1.0);
    let (gx, gg, gb) = bn_backward_train(&proj, &gamma, &cache).unwrap();
    let loss = |x: &T64, g: &[f64], b: &[f64]| project(&batchnorm_train(x, g, b, eps).unwrap().0, &proj);
    vec![
        fd_check("bn input", x.data(), gx.data(), &mut r, |v| loss(&t(s, v), &gamma, &beta)),
        fd_check("bn gamma", &gamma, &gg, &mut r, |v| loss(&x, v, &beta)),
        fd_check("bn beta", &beta, &gb, &mut r, |v| loss(&x, &gamma, v)),
    ]
}

pub fn batchnorm_infer_op() -> Vec<FdOutcome> {
    let mut r = rng(11);
    let s = shape(2, 3, 3, 4);
    let x: T64 = uniform(&mut r, s, -2.0, 2.0);
    let mut bn = BatchNormParams::identity(3, 1e-5f64);
    for c in 0..3 {
        bn.gamma[c] = r.gen_range(-2.0..2.0);
        bn.beta[c] = r.gen_range(-1.0..1.0);
        bn.running_mean[c] = r.gen_range(-1.0..1.0);
        bn.running_var[c] = r.gen_range(0.2..2.0);
    }
    let proj: T64 = uniform(&mut r, s, -1.0, 1.0);
    let (gx, gg, gb) = bn_backward_infer(&x, &bn, &proj).unwrap();
    let with = |gamma: &[f64], beta: &[f64]| BatchNormParams {
        gamma: gamma.to_vec(),
        beta: beta.to_vec(),
        ..bn.clone()
    };
    vec![
        fd_check("bn-infer input", x.data(), gx.data(), &mut r, |v| {
            project(&batchnorm_infer(&t(s, v), &bn).unwrap(), &proj)
        }),
        fd_check("bn-infer gamma", &bn.gamma, &gg, &mut r, |v| {
            project(&batchnorm_infer(&x, &with(v, &bn.beta)).unwrap(), &proj)
        }),
        fd_check("bn-infer beta", &bn.beta, &gb, &mut r, |v| {
            project(&batchnorm_infer(&x, &with(&bn.gamma, v)).unwrap(), &proj)
        }),
    ]
}

/// Values kept at least `gap` away from every point in `kinks`.
fn away_from(r: &mut impl Rng, s: Shape4, lo: f64, hi: f64, kinks: &[f64], gap: f64) -> T64 {
    Tensor::from_fn(s, |_, _, _, _| loop {
        let v = r.gen_range(lo..hi);
        if kinks.iter().all(|k| (v - k).abs() > gap) {
            break v;
        }
    })
    .unwrap()
}

pub fn activations() -> Vec<FdOutcome> {
    let mut r = rng(12);
    let s = shape(1, 3, 5, 5);
    [Activation::Relu, Activation::LeakyRelu(0.1), Activation::Relu6]
        .into_iter()
        .map(|act| {
            let x = away_from(&mut r, s, -8.0, 8.0, &[0.0, 6.0], 0.01);
            let proj: T64 = uniform(&mut r, s, -1.0, 1.0);
            let g = activation_backward(&x, act, &proj).unwrap();
            fd_check(act.name(), x.data(), g.data(), &mut r, |v| project(&activate(&t(s, v), act), &proj))
        })
        .collect()
}

pub fn pooling() -> Vec<FdOutcome> {
    let mut r = rng(13);
    let s = shape(2, 2, 7, 6);
    // distinct values 0.05 apart, so no window max is within a step of a tie
    let mut vals: Vec<f64> = (0..s.numel()).map(|i| i as f64 * 0.05 - 2.0).collect();
    vals.shuffle(&mut r);
    let x = t(s, &vals);
    let mut out = Vec::new();
    for p in [PoolParams::new(2, 2), PoolParams::new(3, 2).padding(1), PoolParams::new(3, 1).padding(1)] {
        let y = maxpool2d(&x, &p).unwrap();
        let proj: T64 = uniform(&mut r, y.shape(), -1.0, 1.0);
        let g = maxpool2d_backward(&x, &p, &proj).unwrap();
        out.push(fd_check("maxpool", x.data(), g.data(), &mut r, |v| {
            project(&maxpool2d(&t(s, v), &p).unwrap(), &proj)
        }));
        let g = avgpool2d_backward(s, &p, &proj).unwrap();
        out.push(fd_check("avgpool", x.data(), g.data(), &mut r, |v| {
            project(&avgpool2d(&t(s, v), &p).unwrap(), &proj)
        }));
    }
    let proj: T64 = uniform(&mut r, shape(2, 2, 1, 1), -1.0, 1.0);
    let g = global_avgpool_backward(s, &proj).unwrap();
    out.push(fd_check("global pool", x.data(), g.data(), &mut r, |v| {
        project(&global_avgpool(&t(s, v)), &proj)
    }));
    out
}

pub fn upsample() -> Vec<FdOutcome> {
    let mut r = rng(14);
    [(shape(1, 2, 3, 4), 7, 9), (shape(2, 1, 4, 4), 16, 16), (shape(1, 2, 5, 5), 5, 5)]
        .into_iter()
        .map(|(s, oh, ow)| {
            let x: T64 = uniform(&mut r, s, -1.0, 1.0);
            let proj: T64 = uniform(&mut r, shape(s.n, s.c, oh, ow), -1.0, 1.0);
            let g = upsample_backward(s, &proj).unwrap();
            fd_check("upsample", x.data(), g.data(), &mut r, |v| {
                project(&bilinear_upsample(&t(s, v), oh, ow).unwrap(), &proj)
            })
        })
        .collect()
}

/// Also requires the split to equal plain channel slices.
pub fn concat() -> Vec<FdOutcome> {
    let mut r = rng(15);
    let a: T64 = uniform(&mut r, shape(2, 2, 3, 3), -1.0, 1.0);
    let b: T64 = uniform(&mut r, shape(2, 3, 3, 3), -1.0, 1.0);
    let proj: T64 = uniform(&mut r, shape(2, 5, 3, 3), -1.0, 1.0);
    let parts = concat_backward(&proj, &[2, 3]).unwrap();
    assert_eq!(parts[0], proj.slice_channels(0, 2).unwrap());
    assert_eq!(parts[1], proj.slice_channels(2, 3).unwrap());
    vec![
        fd_check("concat a", a.data(), parts[0].data(), &mut r, |v| {
            project(&Tensor::concat_channels(&t(a.shape(), v), &b).unwrap(), &proj)
        }),
        fd_check("concat b", b.data(), parts[1].data(), &mut r, |v| {
            project(&Tensor::concat_channels(&a, &t(b.shape(), v)).unwrap(), &proj)
        }),
    ]
}

pub fn shuffle() -> Vec<FdOutcome> {
    let mut r = rng(16);
    let s = shape(1, 6, 3, 2);
    let x: T64 = uniform(&mut r, s, -1.0, 1.0);
    let proj: T64 = uniform(&mut r, s, -1.0, 1.0);
    let g = channel_unshuffle(&proj, 3).unwrap();
    vec![fd_check("shuffle", x.data(), g.data(), &mut r, |v| {
        project(&channel_shuffle(&t(s, v), 3).unwrap(), &proj)
    })]
}

pub fn cross_entropy() -> Vec<FdOutcome> {
    let mut r = rng(17);
    let s = shape(2, 4, 3, 3);
    let x: T64 = uniform(&mut r, s, -3.0, 3.0);
    let data = (0..18).map(|i| if i % 5 == 0 { IGNORE_INDEX } else { r.gen_range(0..4) }).collect();
    let labels = LabelMap::new(2, 3, 3, data).unwrap();
    let g = loss_backward(&x, &labels, IGNORE_INDEX).unwrap();
    vec![fd_check("cross entropy", x.data(), g.data(), &mut r, |v| {
        cross_entropy_loss(&t(s, v), &labels, IGNORE_INDEX).unwrap().loss
    })]
}

/// Every per-op group, in a fixed order.
pub fn all() -> Vec<(&'static str, Vec<FdOutcome>)> {
    vec![
        ("conv dense/strided/dilated", conv_dense()),
        ("conv grouped/depthwise", conv_grouped()),
        ("batchnorm train", batchnorm_train_op()),
        ("batchnorm infer", batchnorm_infer_op()),
        ("activations", activations()),
        ("pooling", pooling()),
        ("upsample", upsample()),
        ("concat", concat()),
        ("shuffle", shuffle()),
        ("cross entropy", cross_entropy()),
    ]
}

/// Graph with one of every layer kind, checked through the training backward.
pub fn small_graph() -> GradcheckReport {
    let mut b = GraphBuilder::new();
    b.input("in", 3).unwrap();
    b.conv_bn("stem", "in", 6, 3, ConvParams::default().padding(1), Some(Activation::Relu6)).unwrap();
    b.add(LayerSpec::new("mp", LayerKind::MaxPool(PoolParams::new(2, 2)), &["stem.act"])).unwrap();
    b.dwsep_bn("ds", "mp", 6, 3, ConvParams::same(3, 2), Some(Activation::LeakyRelu(0.1))).unwrap();
    b.add(LayerSpec::new("sh", LayerKind::ChannelShuffle { groups: 3 }, &["ds.act"])).unwrap();
    b.conv("gc", "sh", 6, 3, ConvParams::same(3, 1).groups(3), true).unwrap();
    b.add(LayerSpec::new("sum", LayerKind::Add, &["gc", "mp"])).unwrap();
    b.add(LayerSpec::new("ap", LayerKind::AvgPool(PoolParams::new(3, 1).padding(1)), &["sum"])).unwrap();
    b.add(LayerSpec::new("gp", LayerKind::GlobalPool, &["ap"])).unwrap();
    b.add(LayerSpec::new("gp_up", LayerKind::Upsample, &["gp", "ap"])).unwrap();
    b.add(LayerSpec::new("cat", LayerKind::Concat, &["ap", "gp_up"])).unwrap();
    b.activation("relu", "cat", Activation::Relu).unwrap();
    b.conv("cls", "relu", 3, 1, ConvParams::default(), true).unwrap();
    b.add(LayerSpec::new("up", LayerKind::Upsample, &["cls", "in"])).unwrap();
    b.add(LayerSpec::new("out", LayerKind::OutputTap, &["up"])).unwrap();
    b.tap(TAP_LOGITS, "out").unwrap();
    let g = b.build().unwrap();

    let mut r = rng(18);
    let w = WeightStore::<f32>::init(&g, 3).cast::<f64>();
    let x: T64 = uniform(&mut r, shape(2, 3, 12, 10), -1.0, 1.0);
    let labels = LabelMap::new(2, 12, 10, (0..240).map(|_| r.gen_range(0..3)).collect()).unwrap();
    check_graph(&g, &w, &x, &labels, 48, &mut r).unwrap()
}
