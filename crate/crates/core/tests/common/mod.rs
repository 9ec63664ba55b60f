#![allow(dead_code)]

pub mod gradops;
pub mod grid;
pub mod oracle;

use liteseg::{Scalar, Shape4, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape4 {
    Shape4::new(n, c, h, w).unwrap()
}

pub fn uniform<T: Scalar>(rng: &mut impl Rng, s: Shape4, lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(s, |_, _, _, _| T::from_f64(rng.gen_range(lo..hi))).unwrap()
}

pub fn max_abs_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
        .fold(0.0, f64::max)
}

/// `sum(r * y)`, the scalar whose gradient w.r.t. `y` is `r`.
pub fn project(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

pub const OP_STEP: f64 = 1e-3;
pub const OP_TOLERANCE: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely.
pub const OP_FLOOR: f64 = 1e-6;
pub const OP_SAMPLES: usize = 24;

#[derive(Debug, Clone)]
pub struct FdOutcome {
    pub what: String,
    pub checked: usize,
    pub worst: f64,
    /// Coordinate, analytic and numeric value of the worst sample.
    pub detail: String,
}

impl FdOutcome {
    pub fn ok(&self) -> bool {
        self.checked > 0 && self.worst < OP_TOLERANCE
    }
}

pub fn assert_all(outcomes: &[FdOutcome]) {
    for o in outcomes {
        assert!(o.ok(), "{}: rel err {:e} at {}", o.what, o.worst, o.detail);
    }
}

/// Central differences of `f` at up to `OP_SAMPLES` random coordinates of
/// `params` against `analytic`.
pub fn fd_check(
    what: &str,
    params: &[f64],
    analytic: &[f64],
    rng: &mut impl Rng,
    mut f: impl FnMut(&[f64]) -> f64,
) -> FdOutcome {
    assert_eq!(params.len(), analytic.len(), "{what}: gradient length");
    let picks: Vec<usize> = if params.len() <= OP_SAMPLES {
        (0..params.len()).collect()
    } else {
        (0..OP_SAMPLES).map(|_| rng.gen_range(0..params.len())).collect()
    };
    let mut p = params.to_vec();
    let mut out = FdOutcome {
        what: what.to_string(),
        checked: picks.len(),
        worst: 0.0,
        detail: String::new(),
    };
    for i in picks {
        let h = OP_STEP * params[i].abs().max(1.0);
        p[i] = params[i] + h;
        let up = f(&p);
        p[i] = params[i] - h;
        let down = f(&p);
        p[i] = params[i];
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(OP_FLOOR);
        if err >= out.worst {
            out.worst = err;
            out.detail = format!("[{i}] analytic {a:e} numeric {numeric:e}");
        }
    }
    out
}
