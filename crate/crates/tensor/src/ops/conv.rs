//! 2-D convolution and transposed convolution via im2col + GEMM.

use crate::error::{invalid, mismatch, Result};
use crate::graph::{Backward, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// `(k - 1) / 2` on each side of an odd kernel.
    SameOdd,
    Explicit(usize),
}

/// Geometry of a `conv2d` layer. Weights are `[out, in, kernel_h, kernel_w]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn square(kernel: usize, stride: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding: Padding::SameOdd,
            in_channels,
            out_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 {
            return Err(invalid("conv2d", "kernel and stride must be positive"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(invalid("conv2d", "channel counts must be positive"));
        }
        if self.padding == Padding::SameOdd && (self.kernel_h % 2 == 0 || self.kernel_w % 2 == 0) {
            return Err(invalid("conv2d", "same-odd padding needs odd kernels"));
        }
        Ok(())
    }

    fn pads(&self) -> (usize, usize) {
        match self.padding {
            Padding::SameOdd => ((self.kernel_h - 1) / 2, (self.kernel_w - 1) / 2),
            Padding::Explicit(p) => (p, p),
        }
    }

    /// Output spatial extent for an `h x w` input, without running the kernel.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = self.pads();
        if h + 2 * ph < self.kernel_h || w + 2 * pw < self.kernel_w {
            return Err(invalid(
                "conv2d",
                format!("input {h}x{w} smaller than kernel {}x{}", self.kernel_h, self.kernel_w),
            ));
        }
        Ok((
            (h + 2 * ph - self.kernel_h) / self.stride + 1,
            (w + 2 * pw - self.kernel_w) / self.stride + 1,
        ))
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w + self.out_channels
    }
}

/// Geometry of a transposed convolution. Weights are `[in, out, k, k]`.
///
/// Only the exact-multiple convention `kernel = stride + 2 * padding` is
/// accepted, so the output is exactly `stride` times the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvTransposeSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvTransposeSpec {
    /// Kernel 4, stride 2, padding 1.
    pub fn upsample2x(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kernel: 4,
            stride: 2,
            padding: 1,
            in_channels,
            out_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(invalid("conv_transpose2d", "stride and channels must be positive"));
        }
        if self.kernel != self.stride + 2 * self.padding {
            return Err(invalid(
                "conv_transpose2d",
                format!(
                    "kernel {} != stride {} + 2 * padding {}: output would not be an exact multiple",
                    self.kernel, self.stride, self.padding
                ),
            ));
        }
        Ok(())
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h * self.stride, w * self.stride)
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.in_channels, self.out_channels, self.kernel, self.kernel]
    }

    pub fn param_count(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel * self.kernel + self.out_channels
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Valid output-column range for kernel column `kx`.
    #[inline]
    fn x_range(&self, kx: usize) -> (usize, usize) {
        axis_range(self.w, self.ow, self.stride, self.pw, kx)
    }

    #[inline]
    fn y_range(&self, ky: usize) -> (usize, usize) {
        axis_range(self.h, self.oh, self.stride, self.ph, ky)
    }
}

/// Output indices `o` in `[lo, hi)` with `0 <= o*stride + k - pad < extent`.
#[inline]
fn axis_range(extent: usize, out: usize, stride: usize, pad: usize, k: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if extent + pad > k {
        ((extent + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// `[c, h, w]` image to `[c*kh*kw, oh*ow]` patch matrix.
fn im2col<T: Scalar>(img: &[T], geo: &Geometry, cols: &mut [T]) {
    let n_cols = geo.col_cols();
    cols.fill(T::zero());
    for c in 0..geo.c {
        for ky in 0..geo.kh {
            let (ylo, yhi) = geo.y_range(ky);
            for kx in 0..geo.kw {
                let (xlo, xhi) = geo.x_range(kx);
                if xlo == xhi {
                    continue;
                }
                let row = (c * geo.kh + ky) * geo.kw + kx;
                let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                for oy in ylo..yhi {
                    let iy = oy * geo.stride + ky - geo.ph;
                    let src = &img[(c * geo.h + iy) * geo.w..(c * geo.h + iy + 1) * geo.w];
                    let drow = &mut dst[oy * geo.ow..(oy + 1) * geo.ow];
                    if geo.stride == 1 {
                        let ix0 = xlo + kx - geo.pw;
                        drow[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            drow[ox] = src[ox * geo.stride + kx - geo.pw];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds patch matrix back into an image.
fn col2im<T: Scalar>(cols: &[T], geo: &Geometry, img: &mut [T]) {
    let n_cols = geo.col_cols();
    for c in 0..geo.c {
        for ky in 0..geo.kh {
            let (ylo, yhi) = geo.y_range(ky);
            for kx in 0..geo.kw {
                let (xlo, xhi) = geo.x_range(kx);
                let row = (c * geo.kh + ky) * geo.kw + kx;
                let src = &cols[row * n_cols..(row + 1) * n_cols];
                for oy in ylo..yhi {
                    let iy = oy * geo.stride + ky - geo.ph;
                    let dst = &mut img[(c * geo.h + iy) * geo.w..(c * geo.h + iy + 1) * geo.w];
                    let srow = &src[oy * geo.ow..(oy + 1) * geo.ow];
                    for ox in xlo..xhi {
                        dst[ox * geo.stride + kx - geo.pw] += srow[ox];
                    }
                }
            }
        }
    }
}

fn check_weights<T: Scalar>(
    op: &'static str,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    expect: [usize; 4],
    bias_len: usize,
) -> Result<()> {
    if weights.dims() != expect {
        return Err(mismatch(
            op,
            "weight dims",
            format!("{expect:?}"),
            format!("{:?}", weights.dims()),
        ));
    }
    if bias.numel() != bias_len {
        return Err(mismatch(op, "bias length", bias_len, bias.numel()));
    }
    Ok(())
}

struct Conv2dBackward {
    geo: Geometry,
    out_channels: usize,
}

impl<T: Scalar> Backward<T> for Conv2dBackward {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let geo = self.geo;
        let n = x.dims()[0];
        let (k, p, oc) = (geo.col_rows(), geo.col_cols(), self.out_channels);
        let in_sz = geo.c * geo.h * geo.w;
        let mut gx = Tensor::zeros(x.dims());
        let mut gw = Tensor::zeros(w.dims());
        let mut gb = Tensor::zeros(inputs[2].dims());
        let mut cols = vec![T::zero(); k * p];
        let mut gcols = vec![T::zero(); k * p];
        for b in 0..n {
            let gout = &g.data()[b * oc * p..(b + 1) * oc * p];
            for (o, acc) in gb.data_mut().iter_mut().enumerate() {
                *acc += gout[o * p..(o + 1) * p].iter().copied().sum::<T>();
            }
            im2col(&x.data()[b * in_sz..(b + 1) * in_sz], &geo, &mut cols);
            // gW[oc, k] += gout[oc, p] * cols[k, p]^T
            T::gemm(
                oc,
                p,
                k,
                T::one(),
                gout,
                p as isize,
                1,
                &cols,
                1,
                p as isize,
                T::one(),
                gw.data_mut(),
                k as isize,
                1,
            );
            // gcols[k, p] = W[oc, k]^T * gout[oc, p]
            T::gemm(
                k,
                oc,
                p,
                T::one(),
                w.data(),
                1,
                k as isize,
                gout,
                p as isize,
                1,
                T::zero(),
                &mut gcols,
                p as isize,
                1,
            );
            col2im(&gcols, &geo, &mut gx.data_mut()[b * in_sz..(b + 1) * in_sz]);
        }
        vec![Some(gx), Some(gw), Some(gb)]
    }
}

/// Graph-free convolution forward pass.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    spec.validate()?;
    let (n, c, h, w) = x.nchw("conv2d")?;
    if c != spec.in_channels {
        return Err(mismatch("conv2d", "input channels", spec.in_channels, c));
    }
    check_weights("conv2d", weights, bias, spec.weight_dims(), spec.out_channels)?;
    let (oh, ow) = spec.output_hw(h, w)?;
    let (ph, pw) = spec.pads();
    let geo = Geometry {
        c,
        h,
        w,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        ph,
        pw,
        oh,
        ow,
    };
    let (k, p, oc) = (geo.col_rows(), geo.col_cols(), spec.out_channels);
    let mut out = Tensor::zeros(&[n, oc, oh, ow]);
    let mut cols = vec![T::zero(); k * p];
    let in_sz = c * h * w;
    for b in 0..n {
        im2col(&x.data()[b * in_sz..(b + 1) * in_sz], &geo, &mut cols);
        let dst = &mut out.data_mut()[b * oc * p..(b + 1) * oc * p];
        for (o, row) in dst.chunks_mut(p).enumerate() {
            row.fill(bias.data()[o]);
        }
        T::gemm(
            oc,
            k,
            p,
            T::one(),
            weights.data(),
            k as isize,
            1,
            &cols,
            p as isize,
            1,
            T::one(),
            dst,
            p as isize,
            1,
        );
    }
    Ok(out)
}

/// 2-D convolution of an NCHW input.
pub fn conv2d<T: Scalar>(g: &mut Graph<T>, x: Var, weights: Var, bias: Var, spec: &ConvSpec) -> Result<Var> {
    let out = conv2d_forward(g.value(x), g.value(weights), g.value(bias), spec)?;
    let (_, c, h, w) = g.value(x).nchw("conv2d")?;
    let (oh, ow) = (out.dims()[2], out.dims()[3]);
    let (ph, pw) = spec.pads();
    let geo = Geometry {
        c,
        h,
        w,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        ph,
        pw,
        oh,
        ow,
    };
    g.record(
        "conv2d",
        out,
        &[x, weights, bias],
        Box::new(Conv2dBackward {
            geo,
            out_channels: spec.out_channels,
        }),
    )
}

/// Geometry of the stride-`s` convolution whose adjoint is the transposed
/// convolution: it maps the (large) output back onto the (small) input.
fn transpose_geometry(spec: &ConvTransposeSpec, h: usize, w: usize) -> Geometry {
    let (oh, ow) = spec.output_hw(h, w);
    Geometry {
        c: spec.out_channels,
        h: oh,
        w: ow,
        kh: spec.kernel,
        kw: spec.kernel,
        stride: spec.stride,
        ph: spec.padding,
        pw: spec.padding,
        oh: h,
        ow: w,
    }
}

struct ConvTransposeBackward {
    geo: Geometry,
    in_channels: usize,
}

impl<T: Scalar> Backward<T> for ConvTransposeBackward {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let geo = self.geo;
        let n = x.dims()[0];
        let (k, p, ic) = (geo.col_rows(), geo.col_cols(), self.in_channels);
        let out_sz = geo.c * geo.h * geo.w;
        let mut gx = Tensor::zeros(x.dims());
        let mut gw = Tensor::zeros(w.dims());
        let mut gb = Tensor::zeros(inputs[2].dims());
        let mut cols = vec![T::zero(); k * p];
        let plane = geo.h * geo.w;
        for b in 0..n {
            let gout = &g.data()[b * out_sz..(b + 1) * out_sz];
            for (o, acc) in gb.data_mut().iter_mut().enumerate() {
                *acc += gout[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
            }
            im2col(gout, &geo, &mut cols);
            let xb = &x.data()[b * ic * p..(b + 1) * ic * p];
            // gx[ic, p] = W[ic, k] * cols[k, p]
            T::gemm(
                ic,
                k,
                p,
                T::one(),
                w.data(),
                k as isize,
                1,
                &cols,
                p as isize,
                1,
                T::zero(),
                &mut gx.data_mut()[b * ic * p..(b + 1) * ic * p],
                p as isize,
                1,
            );
            // gW[ic, k] += x[ic, p] * cols[k, p]^T
            T::gemm(
                ic,
                p,
                k,
                T::one(),
                xb,
                p as isize,
                1,
                &cols,
                1,
                p as isize,
                T::one(),
                gw.data_mut(),
                k as isize,
                1,
            );
        }
        vec![Some(gx), Some(gw), Some(gb)]
    }
}

pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvTransposeSpec,
) -> Result<Tensor<T>> {
    spec.validate()?;
    let (n, c, h, w) = x.nchw("conv_transpose2d")?;
    if c != spec.in_channels {
        return Err(mismatch("conv_transpose2d", "input channels", spec.in_channels, c));
    }
    check_weights("conv_transpose2d", weights, bias, spec.weight_dims(), spec.out_channels)?;
    let geo = transpose_geometry(spec, h, w);
    let (k, p, ic) = (geo.col_rows(), geo.col_cols(), c);
    let (oh, ow) = (geo.h, geo.w);
    let oc = spec.out_channels;
    let mut out = Tensor::zeros(&[n, oc, oh, ow]);
    let mut cols = vec![T::zero(); k * p];
    for b in 0..n {
        // cols[k, p] = W[ic, k]^T * x[ic, p]
        T::gemm(
            k,
            ic,
            p,
            T::one(),
            weights.data(),
            1,
            k as isize,
            &x.data()[b * ic * p..(b + 1) * ic * p],
            p as isize,
            1,
            T::zero(),
            &mut cols,
            p as isize,
            1,
        );
        let dst = &mut out.data_mut()[b * oc * oh * ow..(b + 1) * oc * oh * ow];
        for (o, plane) in dst.chunks_mut(oh * ow).enumerate() {
            plane.fill(bias.data()[o]);
        }
        col2im(&cols, &geo, dst);
    }
    Ok(out)
}

/// Transposed convolution (fractionally strided), the adjoint of a stride-`s`
/// convolution plus bias.
pub fn conv_transpose2d<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    weights: Var,
    bias: Var,
    spec: &ConvTransposeSpec,
) -> Result<Var> {
    let out = conv_transpose2d_forward(g.value(x), g.value(weights), g.value(bias), spec)?;
    let (_, _, h, w) = g.value(x).nchw("conv_transpose2d")?;
    let geo = transpose_geometry(spec, h, w);
    g.record(
        "conv_transpose2d",
        out,
        &[x, weights, bias],
        Box::new(ConvTransposeBackward {
            geo,
            in_channels: spec.in_channels,
        }),
    )
}
