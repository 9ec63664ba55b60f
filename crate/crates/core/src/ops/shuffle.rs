use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// ShuffleNet channel shuffle: view channels as `(groups, c / groups)`, transpose, flatten.
pub fn channel_shuffle<T: Scalar>(x: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if groups == 0 || !s.c.is_multiple_of(groups) {
        return Err(Error::Shape(format!("{groups} shuffle groups do not divide {} channels", s.c)));
    }
    let per = s.c / groups;
    let plane = s.plane();
    let mut out = Vec::with_capacity(s.numel());
    for n in 0..s.n {
        for oc in 0..s.c {
            let (i, g) = (oc / groups, oc % groups);
            let ic = g * per + i;
            out.extend_from_slice(x.plane(n, ic));
        }
    }
    debug_assert_eq!(out.len(), s.n * s.c * plane);
    Ok(Tensor::from_parts(s, out))
}

/// Inverse permutation of [`channel_shuffle`] with the same `groups`.
pub fn channel_unshuffle<T: Scalar>(x: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    let c = x.shape().c;
    if groups == 0 || !c.is_multiple_of(groups) {
        return Err(Error::Shape(format!("{groups} shuffle groups do not divide {c} channels")));
    }
    channel_shuffle(x, c / groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn permutes_as_transpose() {
        let x = Tensor::from_fn(Shape4::new(1, 6, 1, 1).unwrap(), |_, c, _, _| c as f32).unwrap();
        let y = channel_shuffle(&x, 2).unwrap();
        assert_eq!(y.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert_eq!(channel_unshuffle(&y, 2).unwrap(), x);
    }

    #[test]
    fn bad_groups() {
        let x = Tensor::<f32>::zeros(Shape4::new(1, 6, 1, 1).unwrap()).unwrap();
        assert!(channel_shuffle(&x, 4).is_err());
    }
}
