//! 2-D convolution (cross-correlation) with stride, padding, dilation and groups.
//!
//! Dense groups go through im2col + GEMM. Groups with a single input channel
//! (depthwise) use a direct loop, which is far cheaper than a 1-row GEMM.

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::{Shape4, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvParams {
    /// `[vertical, horizontal]`
    pub stride: [usize; 2],
    pub padding: [usize; 2],
    /// Atrous rate.
    pub dilation: [usize; 2],
    pub groups: usize,
}

impl Default for ConvParams {
    fn default() -> Self {
        ConvParams {
            stride: [1, 1],
            padding: [0, 0],
            dilation: [1, 1],
            groups: 1,
        }
    }
}

impl ConvParams {
    pub fn stride(mut self, s: usize) -> Self {
        self.stride = [s, s];
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = [p, p];
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = [d, d];
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    /// Padding that keeps stride-1 output extents equal to the input.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        ConvParams::default()
            .dilation(dilation)
            .padding(dilation * (kernel - 1) / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride.contains(&0) || self.dilation.contains(&0) || self.groups == 0 {
            return Err(Error::Shape(format!(
                "stride, dilation and groups must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Output extent along one axis, `None` when the dilated kernel does not fit.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize, dilation: usize) -> Option<usize> {
    let k_eff = (kernel - 1) * dilation + 1;
    let padded = input + 2 * pad;
    (k_eff <= padded && stride > 0).then(|| (padded - k_eff) / stride + 1)
}

/// Validate a convolution and compute its output shape.
pub fn conv_output_shape(x: Shape4, kernel: Shape4, p: &ConvParams) -> Result<Shape4> {
    p.validate()?;
    let g = p.groups;
    if !x.c.is_multiple_of(g) || !kernel.n.is_multiple_of(g) {
        return Err(Error::Shape(format!(
            "groups {g} must divide input channels {} and output channels {}",
            x.c, kernel.n
        )));
    }
    if kernel.c * g != x.c {
        return Err(Error::Shape(format!(
            "kernel {kernel} expects {} input channels over {g} groups, got {}",
            kernel.c * g,
            x.c
        )));
    }
    let oh = conv_out_extent(x.h, kernel.h, p.stride[0], p.padding[0], p.dilation[0]);
    let ow = conv_out_extent(x.w, kernel.w, p.stride[1], p.padding[1], p.dilation[1]);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(Shape4 { n: x.n, c: kernel.n, h: oh, w: ow }),
        _ => Err(Error::Shape(format!(
            "dilated kernel {}x{} (rate {:?}) larger than padded input {}x{}",
            (kernel.h - 1) * p.dilation[0] + 1,
            (kernel.w - 1) * p.dilation[1] + 1,
            p.dilation,
            x.h + 2 * p.padding[0],
            x.w + 2 * p.padding[1]
        ))),
    }
}

/// Kernel shaped `(out_c, in_c / groups, k_h, k_w)` plus optional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights<T = f32> {
    pub kernel: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> ConvWeights<T> {
    pub fn new(kernel: Tensor<T>, bias: Option<Vec<T>>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != kernel.shape().n {
                return Err(Error::Shape(format!(
                    "bias length {} does not match {} output channels",
                    b.len(),
                    kernel.shape().n
                )));
            }
        }
        Ok(ConvWeights { kernel, bias })
    }

    pub fn param_count(&self) -> usize {
        self.kernel.shape().numel() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &ConvWeights<T>, p: &ConvParams) -> Result<Tensor<T>> {
    conv2d_parts(x, &w.kernel, w.bias.as_deref(), p)
}

/// Depthwise convolution (`groups = x.c`) followed by a 1x1 pointwise projection.
pub fn depthwise_separable_conv<T: Scalar>(
    x: &Tensor<T>,
    dw: &ConvWeights<T>,
    pw: &ConvWeights<T>,
    p: &ConvParams,
) -> Result<Tensor<T>> {
    let (mid, out) = dwsep_forward(x, &dw.kernel, dw.bias.as_deref(), &pw.kernel, pw.bias.as_deref(), p)?;
    drop(mid);
    Ok(out)
}

pub(crate) fn dwsep_forward<T: Scalar>(
    x: &Tensor<T>,
    dw: &Tensor<T>,
    dw_bias: Option<&[T]>,
    pw: &Tensor<T>,
    pw_bias: Option<&[T]>,
    p: &ConvParams,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let dw_params = ConvParams { groups: x.shape().c, ..*p };
    if pw.shape().h != 1 || pw.shape().w != 1 {
        return Err(Error::Shape(format!("pointwise kernel {} is not 1x1", pw.shape())));
    }
    let mid = conv2d_parts(x, dw, dw_bias, &dw_params)?;
    let out = conv2d_parts(&mid, pw, pw_bias, &ConvParams::default())?;
    Ok((mid, out))
}

pub(crate) fn conv2d_parts<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&[T]>,
    p: &ConvParams,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ks = kernel.shape();
    let os = conv_output_shape(xs, ks, p)?;
    if let Some(b) = bias {
        if b.len() != ks.n {
            return Err(Error::Shape(format!("bias length {} vs {} outputs", b.len(), ks.n)));
        }
    }
    let geo = Geometry::new(xs, ks, os, p);
    let mut out = vec![T::zero(); os.numel()];

    if geo.icg == 1 {
        depthwise_forward(x.data(), kernel.data(), &geo, &mut out);
    } else {
        let k_rows = geo.icg * geo.kh * geo.kw;
        let out_plane = geo.oh * geo.ow;
        let mut cols = if geo.pointwise() { Vec::new() } else { vec![T::zero(); k_rows * out_plane] };
        for n in 0..xs.n {
            for g in 0..geo.groups {
                let in_block = &x.data()[(n * xs.c + g * geo.icg) * geo.ih * geo.iw..][..geo.icg * geo.ih * geo.iw];
                let b = if geo.pointwise() {
                    MatRef::row_major(in_block, k_rows, out_plane)
                } else {
                    im2col(in_block, &geo, &mut cols);
                    MatRef::row_major(&cols, k_rows, out_plane)
                };
                let k = MatRef::row_major(&kernel.data()[g * geo.ocg * k_rows..][..geo.ocg * k_rows], geo.ocg, k_rows);
                let dst = &mut out[(n * os.c + g * geo.ocg) * out_plane..][..geo.ocg * out_plane];
                gemm(T::one(), k, b, T::zero(), dst);
            }
        }
    }

    if let Some(b) = bias {
        let plane = os.plane();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let bv = b[i % os.c];
            chunk.iter_mut().for_each(|v| *v = *v + bv);
        }
    }
    Ok(Tensor::from_parts(os, out))
}

/// Gradients of a convolution with respect to its input, kernel and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads<T = f32> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &ConvWeights<T>,
    p: &ConvParams,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    conv2d_backward_parts(x, &w.kernel, w.bias.is_some(), p, grad_out)
}

pub(crate) fn conv2d_backward_parts<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    has_bias: bool,
    p: &ConvParams,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let xs = x.shape();
    let ks = kernel.shape();
    let os = conv_output_shape(xs, ks, p)?;
    if grad_out.shape() != os {
        return Err(Error::ShapeMismatch {
            context: "conv2d_backward upstream gradient".into(),
            left: os,
            right: grad_out.shape(),
        });
    }
    let geo = Geometry::new(xs, ks, os, p);
    let mut gin = vec![T::zero(); xs.numel()];
    let mut gk = vec![T::zero(); ks.numel()];

    if geo.icg == 1 {
        depthwise_backward(x.data(), kernel.data(), grad_out.data(), &geo, &mut gin, &mut gk);
    } else {
        let k_rows = geo.icg * geo.kh * geo.kw;
        let out_plane = geo.oh * geo.ow;
        let in_len = geo.icg * geo.ih * geo.iw;
        let mut cols = vec![T::zero(); k_rows * out_plane];
        let mut gcols = vec![T::zero(); k_rows * out_plane];
        for n in 0..xs.n {
            for g in 0..geo.groups {
                let in_off = (n * xs.c + g * geo.icg) * geo.ih * geo.iw;
                let go = MatRef::row_major(
                    &grad_out.data()[(n * os.c + g * geo.ocg) * out_plane..][..geo.ocg * out_plane],
                    geo.ocg,
                    out_plane,
                );
                let kmat = MatRef::row_major(&kernel.data()[g * geo.ocg * k_rows..][..geo.ocg * k_rows], geo.ocg, k_rows);
                let gk_dst = &mut gk[g * geo.ocg * k_rows..][..geo.ocg * k_rows];
                if geo.pointwise() {
                    let xin = MatRef::row_major(&x.data()[in_off..][..in_len], k_rows, out_plane);
                    gemm(T::one(), go, xin.t(), T::one(), gk_dst);
                    gemm(T::one(), kmat.t(), go, T::one(), &mut gin[in_off..][..in_len]);
                } else {
                    im2col(&x.data()[in_off..][..in_len], &geo, &mut cols);
                    gemm(T::one(), go, MatRef::row_major(&cols, k_rows, out_plane).t(), T::one(), gk_dst);
                    gemm(T::one(), kmat.t(), go, T::zero(), &mut gcols);
                    col2im_add(&gcols, &geo, &mut gin[in_off..][..in_len]);
                }
            }
        }
    }

    let bias = has_bias.then(|| {
        let mut gb = vec![T::zero(); os.c];
        for (i, chunk) in grad_out.data().chunks(os.plane()).enumerate() {
            gb[i % os.c] = gb[i % os.c] + chunk.iter().copied().sum::<T>();
        }
        gb
    });
    Ok(ConvGrads {
        input: Tensor::from_parts(xs, gin),
        kernel: Tensor::from_parts(ks, gk),
        bias,
    })
}

struct Geometry {
    groups: usize,
    icg: usize,
    ocg: usize,
    ih: usize,
    iw: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: [usize; 2],
    pad: [usize; 2],
    dil: [usize; 2],
    batch: usize,
}

impl Geometry {
    fn new(xs: Shape4, ks: Shape4, os: Shape4, p: &ConvParams) -> Self {
        Geometry {
            groups: p.groups,
            icg: xs.c / p.groups,
            ocg: ks.n / p.groups,
            ih: xs.h,
            iw: xs.w,
            kh: ks.h,
            kw: ks.w,
            oh: os.h,
            ow: os.w,
            stride: p.stride,
            pad: p.padding,
            dil: p.dilation,
            batch: xs.n,
        }
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == [1, 1] && self.pad == [0, 0]
    }

    /// Input row for output row `o` and kernel tap `k` along the vertical axis.
    fn in_y(&self, o: usize, k: usize) -> Option<usize> {
        let y = (o * self.stride[0] + k * self.dil[0]) as isize - self.pad[0] as isize;
        (y >= 0 && (y as usize) < self.ih).then_some(y as usize)
    }

    /// Output columns `[lo, hi)` whose input column for tap `k` is in range.
    fn valid_x(&self, k: usize) -> (usize, usize) {
        let off = k * self.dil[1];
        let s = self.stride[1];
        let pad = self.pad[1];
        // need ox*s + off >= pad and ox*s + off - pad < iw
        let lo = if off >= pad { 0 } else { (pad - off).div_ceil(s) };
        let limit = self.iw + pad; // ox*s + off < iw + pad
        let hi = if off >= limit { 0 } else { (limit - off).div_ceil(s).min(self.ow) };
        (lo.min(hi), hi)
    }
}

fn im2col<T: Scalar>(input: &[T], geo: &Geometry, cols: &mut [T]) {
    let plane_in = geo.ih * geo.iw;
    let plane_out = geo.oh * geo.ow;
    let s = geo.stride[1];
    for ci in 0..geo.icg {
        let src = &input[ci * plane_in..][..plane_in];
        for ky in 0..geo.kh {
            for kx in 0..geo.kw {
                let row = (ci * geo.kh + ky) * geo.kw + kx;
                let dst = &mut cols[row * plane_out..][..plane_out];
                let (lo, hi) = geo.valid_x(kx);
                for oy in 0..geo.oh {
                    let line = &mut dst[oy * geo.ow..][..geo.ow];
                    match geo.in_y(oy, ky) {
                        None => line.fill(T::zero()),
                        Some(iy) => {
                            line[..lo].fill(T::zero());
                            line[hi..].fill(T::zero());
                            let base = iy * geo.iw;
                            for ox in lo..hi {
                                line[ox] = src[base + ox * s + kx * geo.dil[1] - geo.pad[1]];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], geo: &Geometry, grad_in: &mut [T]) {
    let plane_in = geo.ih * geo.iw;
    let plane_out = geo.oh * geo.ow;
    let s = geo.stride[1];
    for ci in 0..geo.icg {
        let dst = &mut grad_in[ci * plane_in..][..plane_in];
        for ky in 0..geo.kh {
            for kx in 0..geo.kw {
                let row = (ci * geo.kh + ky) * geo.kw + kx;
                let src = &cols[row * plane_out..][..plane_out];
                let (lo, hi) = geo.valid_x(kx);
                for oy in 0..geo.oh {
                    if let Some(iy) = geo.in_y(oy, ky) {
                        let base = iy * geo.iw;
                        for ox in lo..hi {
                            let i = base + ox * s + kx * geo.dil[1] - geo.pad[1];
                            dst[i] = dst[i] + src[oy * geo.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_forward<T: Scalar>(input: &[T], kernel: &[T], geo: &Geometry, out: &mut [T]) {
    let plane_in = geo.ih * geo.iw;
    let plane_out = geo.oh * geo.ow;
    let oc_total = geo.groups * geo.ocg;
    let s = geo.stride[1];
    for n in 0..geo.batch {
        for oc in 0..oc_total {
            let ic = oc / geo.ocg;
            let src = &input[(n * geo.groups + ic) * plane_in..][..plane_in];
            let dst = &mut out[(n * oc_total + oc) * plane_out..][..plane_out];
            let taps = &kernel[oc * geo.kh * geo.kw..][..geo.kh * geo.kw];
            for ky in 0..geo.kh {
                for kx in 0..geo.kw {
                    let wv = taps[ky * geo.kw + kx];
                    let (lo, hi) = geo.valid_x(kx);
                    for oy in 0..geo.oh {
                        if let Some(iy) = geo.in_y(oy, ky) {
                            let base = iy * geo.iw + kx * geo.dil[1];
                            let line = &mut dst[oy * geo.ow..][..geo.ow];
                            for ox in lo..hi {
                                line[ox] = line[ox] + wv * src[base + ox * s - geo.pad[1]];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    geo: &Geometry,
    grad_in: &mut [T],
    grad_k: &mut [T],
) {
    let plane_in = geo.ih * geo.iw;
    let plane_out = geo.oh * geo.ow;
    let oc_total = geo.groups * geo.ocg;
    let s = geo.stride[1];
    for n in 0..geo.batch {
        for oc in 0..oc_total {
            let ic = oc / geo.ocg;
            let in_off = (n * geo.groups + ic) * plane_in;
            let go = &grad_out[(n * oc_total + oc) * plane_out..][..plane_out];
            for ky in 0..geo.kh {
                for kx in 0..geo.kw {
                    let tap = oc * geo.kh * geo.kw + ky * geo.kw + kx;
                    let wv = kernel[tap];
                    let (lo, hi) = geo.valid_x(kx);
                    let mut acc = T::zero();
                    for oy in 0..geo.oh {
                        if let Some(iy) = geo.in_y(oy, ky) {
                            let base = in_off + iy * geo.iw + kx * geo.dil[1];
                            for ox in lo..hi {
                                let g = go[oy * geo.ow + ox];
                                let i = base + ox * s - geo.pad[1];
                                acc = acc + g * input[i];
                                grad_in[i] = grad_in[i] + wv * g;
                            }
                        }
                    }
                    grad_k[tap] = grad_k[tap] + acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape4 {
        Shape4::new(n, c, h, w).unwrap()
    }

    #[test]
    fn identity_1x1_is_bit_exact() {
        let x = Tensor::from_fn(shape(1, 3, 5, 4), |_, c, y, x| (c * 31 + y * 7 + x) as f32 * 0.37 - 2.0).unwrap();
        let k = Tensor::from_fn(shape(3, 3, 1, 1), |o, i, _, _| if o == i { 1.0 } else { 0.0 }).unwrap();
        let w = ConvWeights::new(k, None).unwrap();
        let y = conv2d(&x, &w, &ConvParams::default()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn output_extent_formula() {
        assert_eq!(conv_out_extent(8, 3, 1, 1, 1), Some(8));
        assert_eq!(conv_out_extent(8, 3, 1, 2, 2), Some(8));
        assert_eq!(conv_out_extent(8, 3, 2, 1, 1), Some(4));
        assert_eq!(conv_out_extent(4, 3, 1, 0, 3), None);
        // dilated 3x3 at rate d matches a dense kernel of extent 2d+1
        for d in 1..6 {
            assert_eq!(conv_out_extent(20, 3, 1, 0, d), conv_out_extent(20, 2 * d + 1, 1, 0, 1));
        }
    }

    #[test]
    fn group_mismatch_is_shape_error() {
        let x = Tensor::<f32>::zeros(shape(1, 4, 4, 4)).unwrap();
        let w = ConvWeights::new(Tensor::zeros(shape(6, 4, 3, 3)).unwrap(), None).unwrap();
        assert!(matches!(conv2d(&x, &w, &ConvParams::default().groups(2)), Err(Error::Shape(_))));
        let w = ConvWeights::new(Tensor::zeros(shape(3, 2, 3, 3)).unwrap(), None).unwrap();
        assert!(matches!(conv2d(&x, &w, &ConvParams::default().groups(2)), Err(Error::Shape(_))));
    }

    #[test]
    fn oversized_kernel_is_shape_error() {
        let x = Tensor::<f32>::zeros(shape(1, 1, 4, 4)).unwrap();
        let w = ConvWeights::new(Tensor::zeros(shape(1, 1, 3, 3)).unwrap(), None).unwrap();
        let err = conv2d(&x, &w, &ConvParams::default().dilation(3)).unwrap_err();
        assert!(err.to_string().contains("larger than padded input"), "{err}");
    }

    #[test]
    fn bias_length_checked() {
        let k = Tensor::<f32>::zeros(shape(2, 1, 1, 1)).unwrap();
        assert!(ConvWeights::new(k, Some(vec![0.0; 3])).is_err());
    }

    #[test]
    fn valid_range_covers_exactly_in_bounds_columns() {
        for (iw, k, s, pad, dil) in [(7, 3, 1, 1, 1), (9, 3, 2, 4, 3), (5, 3, 3, 0, 2), (4, 1, 1, 0, 1), (6, 3, 1, 9, 9)] {
            let ks = shape(1, 1, 1, k);
            let xs = shape(1, 1, 1, iw);
            let p = ConvParams { stride: [1, s], padding: [0, pad], dilation: [1, dil], groups: 1 };
            let Ok(os) = conv_output_shape(xs, ks, &p) else { continue };
            let geo = Geometry::new(xs, ks, os, &p);
            for kx in 0..k {
                let (lo, hi) = geo.valid_x(kx);
                for ox in 0..os.w {
                    let ix = (ox * s + kx * dil) as isize - pad as isize;
                    let inside = ix >= 0 && (ix as usize) < iw;
                    assert_eq!(inside, (lo..hi).contains(&ox), "iw={iw} k={k} s={s} pad={pad} dil={dil} kx={kx} ox={ox}");
                }
            }
        }
    }
}
