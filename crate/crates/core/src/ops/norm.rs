//! Batch normalization, inference form and batch-statistics (training) form.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
}

pub const BN_EPS: f64 = 1e-5;

impl<T: Scalar> BatchNormParams<T> {
    /// gamma = 1, beta = 0, mean = 0, var = 1.
    pub fn identity(c: usize, eps: T) -> Self {
        BatchNormParams {
            gamma: vec![T::one(); c],
            beta: vec![T::zero(); c],
            running_mean: vec![T::zero(); c],
            running_var: vec![T::one(); c],
            eps,
        }
    }

    fn check(&self, c: usize) -> Result<()> {
        let lens = [self.gamma.len(), self.beta.len(), self.running_mean.len(), self.running_var.len()];
        if lens.iter().any(|&l| l != c) {
            return Err(Error::Shape(format!("batchnorm vectors {lens:?} do not match {c} channels")));
        }
        if self.running_var.iter().any(|v| *v < T::zero()) || self.eps.is_nan() || self.eps < T::zero() {
            return Err(Error::Domain("batchnorm variance and eps must be non-negative".into()));
        }
        Ok(())
    }
}

/// `y = gamma * (x - mean) / sqrt(var + eps) + beta` per channel.
pub fn batchnorm_infer<T: Scalar>(x: &Tensor<T>, bn: &BatchNormParams<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    bn.check(s.c)?;
    let (scale, shift) = fold(bn);
    let mut out = x.clone();
    for (i, plane) in out.data_mut().chunks_mut(s.plane()).enumerate() {
        let c = i % s.c;
        plane.iter_mut().for_each(|v| *v = *v * scale[c] + shift[c]);
    }
    Ok(out)
}

fn fold<T: Scalar>(bn: &BatchNormParams<T>) -> (Vec<T>, Vec<T>) {
    let scale: Vec<T> = bn
        .gamma
        .iter()
        .zip(&bn.running_var)
        .map(|(&g, &v)| g / (v + bn.eps).sqrt())
        .collect();
    let shift = bn
        .beta
        .iter()
        .zip(&bn.running_mean)
        .zip(&scale)
        .map(|((&b, &m), &s)| b - m * s)
        .collect();
    (scale, shift)
}

/// Gradients of inference-mode batch norm (a per-channel affine map).
pub fn bn_backward_infer<T: Scalar>(
    x: &Tensor<T>,
    bn: &BatchNormParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let s = x.shape();
    bn.check(s.c)?;
    same_shape(x, grad_out)?;
    let (scale, _) = fold(bn);
    let inv: Vec<T> = bn.running_var.iter().map(|&v| T::one() / (v + bn.eps).sqrt()).collect();
    let mut gin = grad_out.clone();
    let mut ggamma = vec![T::zero(); s.c];
    let mut gbeta = vec![T::zero(); s.c];
    let planes = x.data().chunks(s.plane()).zip(gin.data_mut().chunks_mut(s.plane()));
    for (i, (xp, gp)) in planes.enumerate() {
        let c = i % s.c;
        for (xv, gv) in xp.iter().zip(gp.iter_mut()) {
            ggamma[c] = ggamma[c] + *gv * (*xv - bn.running_mean[c]) * inv[c];
            gbeta[c] = gbeta[c] + *gv;
            *gv = *gv * scale[c];
        }
    }
    Ok((gin, ggamma, gbeta))
}

/// Saved state from a batch-statistics forward pass.
#[derive(Debug, Clone)]
pub struct BnTrainCache<T = f32> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
    /// Number of elements per channel the statistics were taken over.
    pub count: usize,
}

/// Normalize with the batch's own per-channel mean and variance.
pub fn batchnorm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Result<(Tensor<T>, BnTrainCache<T>)> {
    let s = x.shape();
    if gamma.len() != s.c || beta.len() != s.c {
        return Err(Error::Shape(format!("batchnorm vectors do not match {} channels", s.c)));
    }
    let count = s.n * s.plane();
    let mut sum = vec![0f64; s.c];
    let mut sq = vec![0f64; s.c];
    for (i, plane) in x.data().chunks(s.plane()).enumerate() {
        let c = i % s.c;
        for v in plane {
            let v = v.as_f64();
            sum[c] += v;
            sq[c] += v * v;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|v| v / count as f64).collect();
    let var: Vec<f64> = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / count as f64 - m * m).max(0.0))
        .collect();
    let mean_t: Vec<T> = mean.iter().map(|&m| T::from_f64(m)).collect();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (T::from_f64(v) + eps).sqrt()).collect();
    let mut xhat = x.clone();
    for (i, plane) in xhat.data_mut().chunks_mut(s.plane()).enumerate() {
        let c = i % s.c;
        plane.iter_mut().for_each(|v| *v = (*v - mean_t[c]) * inv_std[c]);
    }
    let mut y = xhat.clone();
    for (i, plane) in y.data_mut().chunks_mut(s.plane()).enumerate() {
        let c = i % s.c;
        plane.iter_mut().for_each(|v| *v = *v * gamma[c] + beta[c]);
    }
    Ok((
        y,
        BnTrainCache {
            xhat,
            inv_std,
            mean: mean_t,
            var: var.iter().map(|&v| T::from_f64(v)).collect(),
            count,
        },
    ))
}

pub fn bn_backward_train<T: Scalar>(
    grad_out: &Tensor<T>,
    gamma: &[T],
    cache: &BnTrainCache<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    same_shape(&cache.xhat, grad_out)?;
    let s = grad_out.shape();
    let mut ggamma = vec![T::zero(); s.c];
    let mut gbeta = vec![T::zero(); s.c];
    let planes = grad_out.data().chunks(s.plane()).zip(cache.xhat.data().chunks(s.plane()));
    for (i, (gp, xp)) in planes.enumerate() {
        let c = i % s.c;
        for (g, xh) in gp.iter().zip(xp) {
            ggamma[c] = ggamma[c] + *g * *xh;
            gbeta[c] = gbeta[c] + *g;
        }
    }
    let m = T::from_f64(cache.count as f64);
    let mut gin = grad_out.clone();
    for (i, (gp, xp)) in gin.data_mut().chunks_mut(s.plane()).zip(cache.xhat.data().chunks(s.plane())).enumerate() {
        let c = i % s.c;
        let k = gamma[c] * cache.inv_std[c] / m;
        for (g, xh) in gp.iter_mut().zip(xp) {
            *g = k * (m * *g - gbeta[c] - *xh * ggamma[c]);
        }
    }
    Ok((gin, ggamma, gbeta))
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            context: "batchnorm gradient".into(),
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn input() -> Tensor {
        Tensor::from_fn(Shape4::new(2, 3, 3, 2).unwrap(), |n, c, y, x| {
            ((n * 13 + c * 7 + y * 3 + x) as f32).sin() * 4.0
        })
        .unwrap()
    }

    #[test]
    fn identity_params_leave_input() {
        let x = input();
        let y = batchnorm_infer(&x, &BatchNormParams::identity(3, 0.0)).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= 1e-7);
        }
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let mut bn = BatchNormParams::identity(3, 1e-5);
        bn.gamma = vec![0.0; 3];
        bn.beta = vec![0.5, -1.0, 2.0];
        let y = batchnorm_infer(&input(), &bn).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                assert!(y.plane(n, c).iter().all(|&v| v == bn.beta[c]));
            }
        }
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        let bn = BatchNormParams::<f32>::identity(2, 1e-5);
        assert!(matches!(batchnorm_infer(&input(), &bn), Err(Error::Shape(_))));
    }

    #[test]
    fn batch_stats_normalize() {
        let x = input();
        let (y, cache) = batchnorm_train(&x, &[1.0; 3], &[0.0; 3], 1e-5).unwrap();
        assert_eq!(cache.count, 12);
        for c in 0..3 {
            let vals: Vec<f64> = (0..2).flat_map(|n| y.plane(n, c).iter().map(|&v| v as f64)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5, "{mean}");
            assert!((var - 1.0).abs() < 1e-3, "{var}");
        }
    }
}
