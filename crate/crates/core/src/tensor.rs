//! Dense NCHW tensors.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Extents of a batch-channel-height-width tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        let s = Shape4 { n, c, h, w };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::InvalidShape(format!("zero extent in {self}")));
        }
        [self.c, self.h, self.w]
            .iter()
            .try_fold(self.n, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidShape(format!("{self} overflows the index range")))?;
        Ok(())
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape4 { c, ..self }
    }

    pub fn with_hw(self, h: usize, w: usize) -> Self {
        Shape4 { h, w, ..self }
    }

    pub fn same_nhw(&self, other: &Shape4) -> bool {
        self.n == other.n && self.h == other.h && self.w == other.w
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

/// Row-major NCHW tensor. Operations never mutate their inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape4) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape4, value: T) -> Result<Self> {
        shape.validate()?;
        Ok(Tensor {
            shape,
            data: vec![value; shape.numel()],
        })
    }

    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(Error::InvalidShape(format!(
                "{} elements supplied for shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Build from a closure over `(n, c, h, w)` coordinates.
    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Result<Self> {
        shape.validate()?;
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Ok(Tensor { shape, data })
    }

    /// Crate-internal constructor for buffers whose length is known to match.
    pub(crate) fn from_parts(shape: Shape4, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    /// Contiguous `h*w` plane of one channel of one batch item.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                context: "elementwise".into(),
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(Tensor {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Sum accumulated in f64, independent of `T`'s precision.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, producer: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(producer.to_string()))
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Concatenate along channels: `a`'s channels first, then `b`'s.
    pub fn concat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Result<Self> {
        Self::concat_many(&[a, b])
    }

    pub fn concat_many(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?
            .shape;
        let mut c = 0;
        for p in parts {
            if !p.shape.same_nhw(&first) {
                return Err(Error::ShapeMismatch {
                    context: "concat_channels".into(),
                    left: first,
                    right: p.shape,
                });
            }
            c += p.shape.c;
        }
        let shape = first.with_c(c);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..first.n {
            for p in parts {
                let chunk = p.shape.c * p.shape.plane();
                data.extend_from_slice(&p.data[n * chunk..(n + 1) * chunk]);
            }
        }
        Ok(Tensor { shape, data })
    }

    /// Channels `start..start+len`, copied.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.shape.c {
            return Err(Error::Shape(format!(
                "channel slice {start}..{} out of range for {}",
                start + len,
                self.shape
            )));
        }
        let shape = self.shape.with_c(len);
        let plane = self.shape.plane();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..self.shape.n {
            let base = (n * self.shape.c + start) * plane;
            data.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Ok(Tensor { shape, data })
    }

    /// Constant-value border padding.
    pub fn pad2d(&self, top: usize, bottom: usize, left: usize, right: usize, value: T) -> Self {
        let s = self.shape;
        let (oh, ow) = (s.h + top + bottom, s.w + left + right);
        let shape = s.with_hw(oh, ow);
        let mut data = vec![value; shape.numel()];
        for nc in 0..s.n * s.c {
            for y in 0..s.h {
                let src = (nc * s.h + y) * s.w;
                let dst = (nc * oh + y + top) * ow + left;
                data[dst..dst + s.w].copy_from_slice(&self.data[src..src + s.w]);
            }
        }
        Tensor { shape, data }
    }

    /// Mirror padding without edge repetition (`dcb|abcd|cba`).
    pub fn pad_reflect(&self, top: usize, bottom: usize, left: usize, right: usize) -> Result<Self> {
        let s = self.shape;
        if top.max(bottom) >= s.h.max(2) || left.max(right) >= s.w.max(2) {
            return Err(Error::Shape(format!(
                "reflect padding ({top},{bottom},{left},{right}) too large for {s}"
            )));
        }
        let reflect = |i: isize, len: usize| -> usize {
            if len == 1 {
                return 0;
            }
            let period = 2 * (len as isize - 1);
            let mut j = i.rem_euclid(period);
            if j >= len as isize {
                j = period - j;
            }
            j as usize
        };
        let (oh, ow) = (s.h + top + bottom, s.w + left + right);
        Tensor::from_fn(s.with_hw(oh, ow), |n, c, y, x| {
            let sy = reflect(y as isize - top as isize, s.h);
            let sx = reflect(x as isize - left as isize, s.w);
            self.at(n, c, sy, sx)
        })
    }

    /// Spatial window `[y0, y0+h) x [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        if h == 0 || w == 0 || y0 + h > s.h || x0 + w > s.w {
            return Err(Error::Shape(format!(
                "crop {h}x{w} at ({y0},{x0}) outside {s}"
            )));
        }
        Tensor::from_fn(s.with_hw(h, w), |n, c, y, x| self.at(n, c, y0 + y, x0 + x))
    }

    /// Nearest-neighbour resize (any direction), used for augmentation.
    pub fn resize_nearest(&self, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        Tensor::from_fn(s.with_hw(h, w), |n, c, y, x| {
            let sy = (y * s.h) / h;
            let sx = (x * s.w) / w;
            self.at(n, c, sy, sx)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape4 {
        Shape4::new(n, c, h, w).unwrap()
    }

    fn ramp(s: Shape4) -> Tensor {
        Tensor::from_vec(s, (0..s.numel()).map(|i| i as f32 * 0.5 - 3.0).collect()).unwrap()
    }

    #[test]
    fn zeros_small() {
        let t = Tensor::<f32>::zeros(shape(1, 1, 2, 2)).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        let t = Tensor::<f32>::zeros(shape(2, 3, 4, 5)).unwrap();
        assert_eq!(t.data().len(), 120);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_extent_rejected() {
        let bad = Shape4 { n: 1, c: 0, h: 1, w: 1 };
        assert!(matches!(Tensor::<f32>::zeros(bad), Err(Error::InvalidShape(_))));
        assert!(Shape4::new(1, 0, 1, 1).is_err());
    }

    #[test]
    fn overflowing_shape_rejected() {
        assert!(Shape4::new(usize::MAX, 2, 2, 2).is_err());
    }

    #[test]
    fn concat_shapes_and_order() {
        let a = ramp(shape(1, 2, 4, 4));
        let b = ramp(shape(1, 3, 4, 4)).map(|v| v + 100.0);
        let c = Tensor::concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), shape(1, 5, 4, 4));
        assert_eq!(c.slice_channels(0, 2).unwrap(), a);
        assert_eq!(c.slice_channels(2, 3).unwrap(), b);
    }

    #[test]
    fn concat_with_zeros_recovers_input() {
        let a = ramp(shape(2, 3, 3, 5));
        let z = Tensor::zeros(shape(2, 4, 3, 5)).unwrap();
        let c = Tensor::concat_channels(&a, &z).unwrap();
        let back = c.slice_channels(0, 3).unwrap();
        assert!(back.data().iter().zip(a.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn concat_spatial_mismatch_names_shapes() {
        let a = Tensor::<f32>::zeros(shape(1, 2, 4, 4)).unwrap();
        let b = Tensor::<f32>::zeros(shape(1, 2, 8, 8)).unwrap();
        let err = Tensor::concat_channels(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(1,2,4,4)") && msg.contains("(1,2,8,8)"), "{msg}");
    }

    #[test]
    fn pad_centers_input() {
        let x = Tensor::from_vec(shape(1, 1, 2, 2), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let p = x.pad2d(1, 1, 1, 1, 0.0);
        assert_eq!(p.shape(), shape(1, 1, 4, 4));
        #[rustfmt::skip]
        let expect = [
            0.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 2.0, 0.0,
            0.0, 3.0, 4.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(p.data(), &expect);
    }

    #[test]
    fn zero_pad_is_identity_copy() {
        let x = ramp(shape(1, 2, 3, 3));
        assert_eq!(x.pad2d(0, 0, 0, 0, 7.0), x);
    }

    #[test]
    fn asymmetric_pad_with_value() {
        let x = ramp(shape(1, 1, 2, 3));
        let p = x.pad2d(0, 2, 3, 1, -9.0);
        assert_eq!(p.shape(), shape(1, 1, 4, 7));
        assert_eq!(p.at(0, 0, 0, 3), x.at(0, 0, 0, 0));
        assert_eq!(p.at(0, 0, 3, 6), -9.0);
        let border = p.data().iter().filter(|&&v| v == -9.0).count();
        assert_eq!(border, 28 - 6);
    }

    #[test]
    fn reflect_pad_and_crop_round_trip() {
        let x = ramp(shape(1, 2, 3, 4));
        let p = x.pad_reflect(1, 2, 2, 1).unwrap();
        assert_eq!(p.shape(), shape(1, 2, 6, 7));
        // dcb|abcd reflection on the left
        assert_eq!(p.at(0, 0, 1, 0), x.at(0, 0, 0, 2));
        assert_eq!(p.at(0, 0, 0, 2), x.at(0, 0, 1, 0));
        assert_eq!(p.crop(1, 2, 3, 4).unwrap(), x);
    }

    #[test]
    fn finite_check() {
        let mut x = ramp(shape(1, 1, 2, 2));
        assert!(x.ensure_finite("t").is_ok());
        x.data_mut()[1] = f32::NAN;
        assert!(matches!(x.ensure_finite("t"), Err(Error::NonFinite(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn tensor_strategy() -> impl Strategy<Value = Tensor> {
            (1usize..3, 1usize..4, 1usize..6, 1usize..6).prop_flat_map(|(n, c, h, w)| {
                proptest::collection::vec(-1e3f32..1e3, n * c * h * w)
                    .prop_map(move |d| Tensor::from_vec(Shape4 { n, c, h, w }, d).unwrap())
            })
        }

        proptest! {
            #[test]
            fn concat_then_slice_is_exact(a in tensor_strategy(), extra in 1usize..4) {
                let s = a.shape();
                let b = Tensor::from_fn(s.with_c(extra), |n, c, y, x| (n + c + y + x) as f32).unwrap();
                let cat = Tensor::concat_channels(&a, &b).unwrap();
                let back = cat.slice_channels(0, s.c).unwrap();
                prop_assert!(back.data().iter().zip(a.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
                prop_assert_eq!(cat.slice_channels(s.c, extra).unwrap(), b);
            }

            #[test]
            fn zero_padding_preserves_sum(a in tensor_strategy(), t in 0usize..3, b in 0usize..3, l in 0usize..3, r in 0usize..3) {
                let p = a.pad2d(t, b, l, r, 0.0);
                prop_assert_eq!(p.sum_f64(), a.sum_f64());
                prop_assert!(p.is_finite());
            }
        }
    }
}
