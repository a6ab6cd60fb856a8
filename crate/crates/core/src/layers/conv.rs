//! Convolution in the true-convolution orientation: the kernel is indexed
//! by a displacement u⃗ and the input is sampled at x⃗ − u⃗, so each output
//! value anchors at the high corner of its window and the layer equals
//! cross-correlation against the spatially flipped kernel. Forward and
//! backward each run as one GEMM over an im2col patch matrix.

use matrixmultiply::dgemm;

use super::out_extent;
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Convolution parameters: a rank-4 kernel `(out_channels, in_channels, kh,
/// kw)`, one bias per output channel, stride, and symmetric zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub kernel: Tensor4,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvParams {
    pub fn new(kernel: Tensor4, bias: Vec<f64>, stride: usize, pad: usize) -> Result<Self> {
        if bias.len() != kernel.shape().n {
            return Err(Error::Shape(format!(
                "conv bias length {} does not match {} output channels",
                bias.len(),
                kernel.shape().n
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv stride must be positive".into()));
        }
        Ok(ConvParams {
            kernel,
            bias,
            stride,
            pad,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape().c
    }

    /// Output shape for an input of shape `x`; fails on channel mismatch or
    /// when the kernel does not fit in the padded input.
    pub fn output_shape(&self, x: Shape4) -> Result<Shape4> {
        let k = self.kernel.shape();
        if x.c != k.c {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                k.c, x.c
            )));
        }
        let oh = out_extent(x.h, self.pad, k.h, self.stride);
        let ow = out_extent(x.w, self.pad, k.w, self.stride);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok(Shape4::new(x.n, k.n, oh, ow)),
            _ => Err(Error::Shape(format!(
                "{}x{} kernel does not fit {}x{} input with pad {}",
                k.h, k.w, x.h, x.w, self.pad
            ))),
        }
    }
}

/// Output positions `x` (exclusive upper bound) whose window tap
/// `x·stride + off − pad` lands inside `[0, in_extent)`.
fn tap_range(off: usize, pad: usize, stride: usize, in_extent: usize, out_extent: usize) -> (usize, usize) {
    let off = off as isize;
    let pad = pad as isize;
    let s = stride as isize;
    let lo = if off >= pad { 0 } else { (pad - off + s - 1) / s };
    let hi_num = in_extent as isize - 1 + pad - off;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num / s + 1).max(0) as usize;
    let lo = lo as usize;
    let hi = hi.min(out_extent);
    (lo.min(hi), hi)
}

/// Patch matrix of the zero-padded input: row `(l, v, u)`, column
/// `(n, y, x)`, both row-major; entry = input(l, y·stride + v − pad,
/// x·stride + u − pad), zero where the tap lies in the padding.
fn im2col(x: &Tensor4, p: &ConvParams, out: Shape4) -> Vec<f64> {
    let xs = x.shape();
    let k = p.kernel.shape();
    let cols_w = out.n * out.h * out.w;
    let mut cols = vec![0.0; k.c * k.h * k.w * cols_w];
    let xd = x.as_slice();
    for l in 0..k.c {
        for v in 0..k.h {
            let (y_lo, y_hi) = tap_range(v, p.pad, p.stride, xs.h, out.h);
            for u in 0..k.w {
                let (x_lo, x_hi) = tap_range(u, p.pad, p.stride, xs.w, out.w);
                if x_lo >= x_hi {
                    continue;
                }
                let row = (l * k.h + v) * k.w + u;
                let ix0 = x_lo * p.stride + u - p.pad;
                for n in 0..out.n {
                    for y in y_lo..y_hi {
                        let iy = y * p.stride + v - p.pad;
                        let src = ((n * xs.c + l) * xs.h + iy) * xs.w;
                        let dst = row * cols_w + (n * out.h + y) * out.w;
                        if p.stride == 1 {
                            let run = x_hi - x_lo;
                            cols[dst + x_lo..dst + x_hi]
                                .copy_from_slice(&xd[src + ix0..src + ix0 + run]);
                        } else {
                            for xo in x_lo..x_hi {
                                cols[dst + xo] = xd[src + xo * p.stride + u - p.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds a patch matrix back onto the input
/// grid (overlapping taps accumulate, padding taps are dropped).
fn col2im(cols: &[f64], p: &ConvParams, x_shape: Shape4, out: Shape4) -> Result<Tensor4> {
    let k = p.kernel.shape();
    let cols_w = out.n * out.h * out.w;
    let mut gx = Tensor4::zeros(x_shape)?;
    let gd = gx.as_mut_slice();
    for l in 0..k.c {
        for v in 0..k.h {
            let (y_lo, y_hi) = tap_range(v, p.pad, p.stride, x_shape.h, out.h);
            for u in 0..k.w {
                let (x_lo, x_hi) = tap_range(u, p.pad, p.stride, x_shape.w, out.w);
                if x_lo >= x_hi {
                    continue;
                }
                let row = (l * k.h + v) * k.w + u;
                let ix0 = x_lo * p.stride + u - p.pad;
                for n in 0..out.n {
                    for y in y_lo..y_hi {
                        let iy = y * p.stride + v - p.pad;
                        let dst = ((n * x_shape.c + l) * x_shape.h + iy) * x_shape.w;
                        let src = row * cols_w + (n * out.h + y) * out.w;
                        if p.stride == 1 {
                            for (i, xo) in (x_lo..x_hi).enumerate() {
                                gd[dst + ix0 + i] += cols[src + xo];
                            }
                        } else {
                            for xo in x_lo..x_hi {
                                gd[dst + xo * p.stride + u - p.pad] += cols[src + xo];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// Kernel flipped along both spatial axes, flattened to a row-major
/// `(out_channels) × (in_channels·kh·kw)` GEMM operand.
fn flipped_kernel(kernel: &Tensor4) -> Vec<f64> {
    let k = kernel.shape();
    let kd = kernel.as_slice();
    let mut a = vec![0.0; kd.len()];
    for ko in 0..k.n {
        for l in 0..k.c {
            for v in 0..k.h {
                for u in 0..k.w {
                    a[((ko * k.c + l) * k.h + v) * k.w + u] =
                        kd[((ko * k.c + l) * k.h + (k.h - 1 - v)) * k.w + (k.w - 1 - u)];
                }
            }
        }
    }
    a
}

/// Gathers `grad_out` into channel-major GEMM layout: row `k`, column
/// `(n, y, x)`.
fn gather_gmat(grad_out: &Tensor4) -> Vec<f64> {
    let os = grad_out.shape();
    let plane = os.h * os.w;
    let nn = os.n * plane;
    let god = grad_out.as_slice();
    let mut g = vec![0.0; os.c * nn];
    for n in 0..os.n {
        for ko in 0..os.c {
            let src = (n * os.c + ko) * plane;
            let dst = ko * nn + n * plane;
            g[dst..dst + plane].copy_from_slice(&god[src..src + plane]);
        }
    }
    g
}

/// out(k, x⃗) = Σ_{l,u⃗} kernel(k, l, u⃗) · input(l, x⃗ − u⃗) + bias(k), over the
/// zero-padded input at the configured stride.
pub fn conv_forward(x: &Tensor4, p: &ConvParams) -> Result<Tensor4> {
    let out_shape = p.output_shape(x.shape())?;
    let k = p.kernel.shape();
    let kk = k.c * k.h * k.w;
    let plane = out_shape.h * out_shape.w;
    let nn = out_shape.n * plane;
    let cols = im2col(x, p, out_shape);
    let a = flipped_kernel(&p.kernel);
    let mut out_mat = vec![0.0; k.n * nn];
    unsafe {
        dgemm(
            k.n,
            kk,
            nn,
            1.0,
            a.as_ptr(),
            kk as isize,
            1,
            cols.as_ptr(),
            nn as isize,
            1,
            0.0,
            out_mat.as_mut_ptr(),
            nn as isize,
            1,
        );
    }
    let mut out = Tensor4::zeros(out_shape)?;
    let od = out.as_mut_slice();
    for n in 0..out_shape.n {
        for ko in 0..k.n {
            let dst = (n * k.n + ko) * plane;
            let src = ko * nn + n * plane;
            let b = p.bias[ko];
            for i in 0..plane {
                od[dst + i] = out_mat[src + i] + b;
            }
        }
    }
    Ok(out)
}

fn input_grad_from_gmat(
    g_mat: &[f64],
    p: &ConvParams,
    x_shape: Shape4,
    out_shape: Shape4,
) -> Result<Tensor4> {
    let k = p.kernel.shape();
    let kk = k.c * k.h * k.w;
    let nn = out_shape.n * out_shape.h * out_shape.w;
    let a = flipped_kernel(&p.kernel);
    let mut grad_cols = vec![0.0; kk * nn];
    // grad_cols = Aᵀ · g_mat
    unsafe {
        dgemm(
            kk,
            k.n,
            nn,
            1.0,
            a.as_ptr(),
            1,
            kk as isize,
            g_mat.as_ptr(),
            nn as isize,
            1,
            0.0,
            grad_cols.as_mut_ptr(),
            nn as isize,
            1,
        );
    }
    col2im(&grad_cols, p, x_shape, out_shape)
}

/// Gradient of the convolution with respect to its input alone — the
/// adjoint map the backward visualization path reuses as deconvolution
/// (bias plays no part).
pub fn conv_input_grad(grad_out: &Tensor4, p: &ConvParams, x_shape: Shape4) -> Result<Tensor4> {
    let out_shape = p.output_shape(x_shape)?;
    if grad_out.shape() != out_shape {
        return Err(Error::Shape(format!(
            "conv grad_out shape {} does not match output {}",
            grad_out.shape(),
            out_shape
        )));
    }
    let g_mat = gather_gmat(grad_out);
    input_grad_from_gmat(&g_mat, p, x_shape, out_shape)
}

/// Gradients of Σ(out · grad_out) with respect to input, kernel, and bias.
pub fn conv_backward(
    x: &Tensor4,
    p: &ConvParams,
    grad_out: &Tensor4,
) -> Result<(Tensor4, Tensor4, Vec<f64>)> {
    let out_shape = p.output_shape(x.shape())?;
    if grad_out.shape() != out_shape {
        return Err(Error::Shape(format!(
            "conv grad_out shape {} does not match output {}",
            grad_out.shape(),
            out_shape
        )));
    }
    let k = p.kernel.shape();
    let kk = k.c * k.h * k.w;
    let nn = out_shape.n * out_shape.h * out_shape.w;
    let g_mat = gather_gmat(grad_out);

    let mut grad_bias = vec![0.0; k.n];
    for ko in 0..k.n {
        let row = &g_mat[ko * nn..(ko + 1) * nn];
        let mut acc = 0.0;
        for v in row {
            acc += v;
        }
        grad_bias[ko] = acc;
    }

    // Gradient w.r.t. the flipped kernel, then unflip back into kernel order.
    let cols = im2col(x, p, out_shape);
    let mut gwf = vec![0.0; k.n * kk];
    unsafe {
        dgemm(
            k.n,
            nn,
            kk,
            1.0,
            g_mat.as_ptr(),
            nn as isize,
            1,
            cols.as_ptr(),
            1,
            nn as isize,
            0.0,
            gwf.as_mut_ptr(),
            kk as isize,
            1,
        );
    }
    let mut grad_kernel = Tensor4::zeros(k)?;
    let gkd = grad_kernel.as_mut_slice();
    for ko in 0..k.n {
        for l in 0..k.c {
            for v in 0..k.h {
                for u in 0..k.w {
                    gkd[((ko * k.c + l) * k.h + v) * k.w + u] =
                        gwf[(ko * k.c + l) * k.h * k.w + (k.h - 1 - v) * k.w + (k.w - 1 - u)];
                }
            }
        }
    }

    let grad_x = input_grad_from_gmat(&g_mat, p, x.shape(), out_shape)?;
    Ok((grad_x, grad_kernel, grad_bias))
}
