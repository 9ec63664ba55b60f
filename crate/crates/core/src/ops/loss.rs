//! Channel softmax and pixel-wise cross-entropy.

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Softmax over channels independently at each `(n, y, x)`.
pub fn softmax_channel<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let plane = s.plane();
    let mut out = x.clone();
    let data = out.data_mut();
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let idx = |c: usize| base + c * plane + p;
            let max = (0..s.c).map(|c| data[idx(c)]).fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for c in 0..s.c {
                let e = (data[idx(c)] - max).exp();
                data[idx(c)] = e;
                sum = sum + e;
            }
            for c in 0..s.c {
                data[idx(c)] = data[idx(c)] / sum;
            }
        }
    }
    out
}

/// Mean cross-entropy over scored pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    /// Pixels that contributed (not ignored). Zero means `loss` is 0 by convention.
    pub pixels: usize,
}

fn check_labels<T: Scalar>(logits: &Tensor<T>, labels: &LabelMap, ignore_index: u32) -> Result<()> {
    let s = logits.shape();
    if labels.n != s.n || labels.h != s.h || labels.w != s.w {
        return Err(Error::Shape(format!(
            "labels {}x1x{}x{} do not match logits {s}",
            labels.n, labels.h, labels.w
        )));
    }
    if let Some(&bad) = labels.data.iter().find(|&&l| l != ignore_index && l as usize >= s.c) {
        return Err(Error::InvalidLabel { label: bad, num_classes: s.c });
    }
    Ok(())
}

pub fn cross_entropy_loss<T: Scalar>(logits: &Tensor<T>, labels: &LabelMap, ignore_index: u32) -> Result<CrossEntropy> {
    check_labels(logits, labels, ignore_index)?;
    let s = logits.shape();
    let plane = s.plane();
    let d = logits.data();
    let mut total = 0f64;
    let mut pixels = 0usize;
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let label = labels.data[n * plane + p];
            if label == ignore_index {
                continue;
            }
            let max = (0..s.c).map(|c| d[base + c * plane + p]).fold(T::neg_infinity(), T::max);
            let sum: T = (0..s.c).map(|c| (d[base + c * plane + p] - max).exp()).sum();
            let lse = max + sum.ln();
            total += (lse - d[base + label as usize * plane + p]).as_f64();
            pixels += 1;
        }
    }
    let loss = if pixels == 0 { 0.0 } else { total / pixels as f64 };
    Ok(CrossEntropy { loss, pixels })
}

/// Gradient of the mean loss: `(softmax - onehot) / pixels`, zero at ignored pixels.
pub fn loss_backward<T: Scalar>(logits: &Tensor<T>, labels: &LabelMap, ignore_index: u32) -> Result<Tensor<T>> {
    check_labels(logits, labels, ignore_index)?;
    let s = logits.shape();
    let plane = s.plane();
    let pixels = labels.data.iter().filter(|&&l| l != ignore_index).count();
    let mut g = softmax_channel(logits);
    if pixels == 0 {
        return Tensor::zeros(s);
    }
    let scale = T::one() / T::from_f64(pixels as f64);
    let data = g.data_mut();
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let label = labels.data[n * plane + p];
            for c in 0..s.c {
                let i = base + c * plane + p;
                data[i] = if label == ignore_index {
                    T::zero()
                } else if c as u32 == label {
                    (data[i] - T::one()) * scale
                } else {
                    data[i] * scale
                };
            }
        }
    }
    Ok(g)
}

/// Per-pixel argmax over channels; ties resolve to the lowest class index.
pub fn argmax_channel<T: Scalar>(x: &Tensor<T>) -> LabelMap {
    let s = x.shape();
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.n * plane);
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let mut best = 0usize;
            let mut best_v = x.data()[base + p];
            for c in 1..s.c {
                let v = x.data()[base + c * plane + p];
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            data.push(best as u32);
        }
    }
    LabelMap { n: s.n, h: s.h, w: s.w, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::IGNORE_INDEX;
    use crate::tensor::Shape4;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let x = Tensor::<f32>::zeros(Shape4::new(1, 4, 3, 3).unwrap()).unwrap();
        let labels = LabelMap::new(1, 3, 3, vec![0, 1, 2, 3, 0, 1, 2, 3, 0]).unwrap();
        let ce = cross_entropy_loss(&x, &labels, IGNORE_INDEX).unwrap();
        assert!((ce.loss - 4f64.ln()).abs() < 1e-6, "{}", ce.loss);
        assert_eq!(ce.pixels, 9);
    }

    #[test]
    fn all_ignored_is_zero_with_zero_count() {
        let x = Tensor::from_fn(Shape4::new(1, 3, 2, 2).unwrap(), |_, c, y, x| (c + y + x) as f32).unwrap();
        let labels = LabelMap::filled(1, 2, 2, IGNORE_INDEX).unwrap();
        let ce = cross_entropy_loss(&x, &labels, IGNORE_INDEX).unwrap();
        assert_eq!(ce, CrossEntropy { loss: 0.0, pixels: 0 });
        assert!(loss_backward(&x, &labels, IGNORE_INDEX).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_label_rejected() {
        let x = Tensor::<f32>::zeros(Shape4::new(1, 3, 1, 2).unwrap()).unwrap();
        let labels = LabelMap::new(1, 1, 2, vec![0, 3]).unwrap();
        assert!(matches!(
            cross_entropy_loss(&x, &labels, IGNORE_INDEX),
            Err(Error::InvalidLabel { label: 3, num_classes: 3 })
        ));
    }

    #[test]
    fn large_logits_stay_finite() {
        let x = Tensor::from_vec(Shape4::new(1, 2, 1, 1).unwrap(), vec![1000.0f32, -1000.0]).unwrap();
        let labels = LabelMap::new(1, 1, 1, vec![1]).unwrap();
        let ce = cross_entropy_loss(&x, &labels, IGNORE_INDEX).unwrap();
        assert!((ce.loss - 2000.0).abs() < 1e-3);
        assert!(softmax_channel(&x).is_finite());
    }

    #[test]
    fn argmax_tie_picks_lowest() {
        let x = Tensor::from_vec(Shape4::new(1, 3, 1, 2).unwrap(), vec![0.0f32, 1.0, 0.0, 2.0, 0.0, 2.0]).unwrap();
        assert_eq!(argmax_channel(&x).data, vec![0, 1]);
    }
}
