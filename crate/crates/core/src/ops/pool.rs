//! Windowed max/average pooling and global average pooling.

use crate::error::{Error, Result};
use crate::ops::conv::conv_out_extent;
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoolParams {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolParams {
    pub fn new(kernel: usize, stride: usize) -> Self {
        PoolParams { kernel, stride, padding: 0 }
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = p;
        self
    }

    pub fn output_shape(&self, x: Shape4) -> Result<Shape4> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::Shape(format!("degenerate pooling {self:?}")));
        }
        let oh = conv_out_extent(x.h, self.kernel, self.stride, self.padding, 1);
        let ow = conv_out_extent(x.w, self.kernel, self.stride, self.padding, 1);
        match (oh, ow) {
            (Some(h), Some(w)) => Ok(x.with_hw(h, w)),
            _ => Err(Error::Shape(format!(
                "pool kernel {} larger than padded input {}x{}",
                self.kernel,
                x.h + 2 * self.padding,
                x.w + 2 * self.padding
            ))),
        }
    }

    /// Input coordinates covered by output `(oy, ox)`, clipped to the input.
    fn window(&self, oy: usize, ox: usize, h: usize, w: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let clip = |o: usize, len: usize| {
            let start = (o * self.stride) as isize - self.padding as isize;
            let lo = start.max(0) as usize;
            let hi = ((start + self.kernel as isize).max(0) as usize).min(len);
            lo..hi
        };
        (clip(oy, h), clip(ox, w))
    }
}

pub fn maxpool2d<T: Scalar>(x: &Tensor<T>, p: &PoolParams) -> Result<Tensor<T>> {
    let os = p.output_shape(x.shape())?;
    let s = x.shape();
    Tensor::from_fn(os, |n, c, oy, ox| {
        let plane = x.plane(n, c);
        let (ys, xs) = p.window(oy, ox, s.h, s.w);
        let mut best = T::neg_infinity();
        for y in ys {
            for xx in xs.clone() {
                best = best.max(plane[y * s.w + xx]);
            }
        }
        best
    })
}

/// Routes each output gradient to the first maximal input of its window.
pub fn maxpool2d_backward<T: Scalar>(x: &Tensor<T>, p: &PoolParams, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let os = p.output_shape(x.shape())?;
    check_grad(os, grad_out)?;
    let s = x.shape();
    let mut gin = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = x.plane(n, c);
            let base = (n * s.c + c) * s.plane();
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let (ys, xs) = p.window(oy, ox, s.h, s.w);
                    let mut arg = None;
                    let mut best = T::neg_infinity();
                    for y in ys {
                        for xx in xs.clone() {
                            let v = plane[y * s.w + xx];
                            if arg.is_none() || v > best {
                                best = v;
                                arg = Some(y * s.w + xx);
                            }
                        }
                    }
                    if let Some(i) = arg {
                        gin[base + i] = gin[base + i] + grad_out.at(n, c, oy, ox);
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(s, gin))
}

/// Average over the full `kernel x kernel` window; padded taps count as zeros.
pub fn avgpool2d<T: Scalar>(x: &Tensor<T>, p: &PoolParams) -> Result<Tensor<T>> {
    let os = p.output_shape(x.shape())?;
    let s = x.shape();
    let norm = T::from_f64((p.kernel * p.kernel) as f64);
    Tensor::from_fn(os, |n, c, oy, ox| {
        let plane = x.plane(n, c);
        let (ys, xs) = p.window(oy, ox, s.h, s.w);
        let mut acc = T::zero();
        for y in ys {
            for xx in xs.clone() {
                acc = acc + plane[y * s.w + xx];
            }
        }
        acc / norm
    })
}

pub fn avgpool2d_backward<T: Scalar>(x_shape: Shape4, p: &PoolParams, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let os = p.output_shape(x_shape)?;
    check_grad(os, grad_out)?;
    let s = x_shape;
    let norm = T::from_f64((p.kernel * p.kernel) as f64);
    let mut gin = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.plane();
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let g = grad_out.at(n, c, oy, ox) / norm;
                    let (ys, xs) = p.window(oy, ox, s.h, s.w);
                    for y in ys {
                        for xx in xs.clone() {
                            gin[base + y * s.w + xx] = gin[base + y * s.w + xx] + g;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(s, gin))
}

/// Spatial mean per channel, output `(n, c, 1, 1)`.
pub fn global_avgpool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let count = T::from_f64(s.plane() as f64);
    let data = x.data().chunks(s.plane()).map(|p| p.iter().copied().sum::<T>() / count).collect();
    Tensor::from_parts(s.with_hw(1, 1), data)
}

pub fn global_avgpool_backward<T: Scalar>(x_shape: Shape4, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    check_grad(x_shape.with_hw(1, 1), grad_out)?;
    let count = T::from_f64(x_shape.plane() as f64);
    let mut data = Vec::with_capacity(x_shape.numel());
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g / count, x_shape.plane()));
    }
    Ok(Tensor::from_parts(x_shape, data))
}

fn check_grad<T: Scalar>(expected: Shape4, g: &Tensor<T>) -> Result<()> {
    if g.shape() != expected {
        return Err(Error::ShapeMismatch {
            context: "pooling upstream gradient".into(),
            left: expected,
            right: g.shape(),
        });
    }
    Ok(())
}
