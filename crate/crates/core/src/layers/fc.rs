//! Fully-connected layer over the flattened input.

use matrixmultiply::dgemm;

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Dense parameters: a row-major `out_units × in_units` weight matrix and a
/// per-output bias.
#[derive(Clone, Debug, PartialEq)]
pub struct FcParams {
    pub out_units: usize,
    pub in_units: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl FcParams {
    pub fn new(out_units: usize, in_units: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if out_units == 0 || in_units == 0 {
            return Err(Error::Config("fc unit counts must be positive".into()));
        }
        if weight.len() != out_units * in_units {
            return Err(Error::Shape(format!(
                "fc weight length {} does not match {out_units}x{in_units}",
                weight.len()
            )));
        }
        if bias.len() != out_units {
            return Err(Error::Shape(format!(
                "fc bias length {} does not match {out_units} output units",
                bias.len()
            )));
        }
        Ok(FcParams {
            out_units,
            in_units,
            weight,
            bias,
        })
    }

    fn check_input(&self, x: Shape4) -> Result<()> {
        let flat = x.c * x.h * x.w;
        if flat != self.in_units {
            return Err(Error::Shape(format!(
                "fc expects {} inputs, got {} ({})",
                self.in_units, flat, x
            )));
        }
        Ok(())
    }

    pub fn output_shape(&self, x: Shape4) -> Result<Shape4> {
        self.check_input(x)?;
        Ok(Shape4::new(x.n, self.out_units, 1, 1))
    }
}

/// out = weight · flatten(x) + bias per batch element; output shape
/// `(n, out_units, 1, 1)`.
pub fn fc_forward(x: &Tensor4, p: &FcParams) -> Result<Tensor4> {
    let xs = x.shape();
    p.check_input(xs)?;
    let n = xs.n;
    let mut out = Tensor4::zeros(Shape4::new(n, p.out_units, 1, 1))?;
    unsafe {
        // out (n×out) = x (n×in) · weightᵀ (in×out)
        dgemm(
            n,
            p.in_units,
            p.out_units,
            1.0,
            x.as_slice().as_ptr(),
            p.in_units as isize,
            1,
            p.weight.as_ptr(),
            1,
            p.in_units as isize,
            0.0,
            out.as_mut_slice().as_mut_ptr(),
            p.out_units as isize,
            1,
        );
    }
    let od = out.as_mut_slice();
    for b in 0..n {
        for o in 0..p.out_units {
            od[b * p.out_units + o] += p.bias[o];
        }
    }
    Ok(out)
}

fn check_grad_out(p: &FcParams, n: usize, grad_out: &Tensor4) -> Result<()> {
    let gs = grad_out.shape();
    if gs != Shape4::new(n, p.out_units, 1, 1) {
        return Err(Error::Shape(format!(
            "fc grad_out shape {gs} does not match ({n}, {}, 1, 1)",
            p.out_units
        )));
    }
    Ok(())
}

/// Gradient with respect to the input alone: weightᵀ · grad_out, reshaped
/// to `input_shape`. The visualization path reuses this map as the FC
/// backprojection (bias plays no part).
pub fn fc_input_grad(grad_out: &Tensor4, p: &FcParams, input_shape: Shape4) -> Result<Tensor4> {
    p.check_input(input_shape)?;
    check_grad_out(p, input_shape.n, grad_out)?;
    let n = input_shape.n;
    let mut gx = Tensor4::zeros(input_shape)?;
    unsafe {
        // gx (n×in) = grad_out (n×out) · weight (out×in)
        dgemm(
            n,
            p.out_units,
            p.in_units,
            1.0,
            grad_out.as_slice().as_ptr(),
            p.out_units as isize,
            1,
            p.weight.as_ptr(),
            p.in_units as isize,
            1,
            0.0,
            gx.as_mut_slice().as_mut_ptr(),
            p.in_units as isize,
            1,
        );
    }
    Ok(gx)
}

/// Gradients of Σ(out · grad_out) with respect to input, weight, and bias.
pub fn fc_backward(
    x: &Tensor4,
    p: &FcParams,
    grad_out: &Tensor4,
) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
    let xs = x.shape();
    p.check_input(xs)?;
    check_grad_out(p, xs.n, grad_out)?;
    let n = xs.n;
    let grad_x = fc_input_grad(grad_out, p, xs)?;

    let mut grad_w = vec![0.0; p.out_units * p.in_units];
    unsafe {
        // grad_w (out×in) = grad_outᵀ (out×n) · x (n×in)
        dgemm(
            p.out_units,
            n,
            p.in_units,
            1.0,
            grad_out.as_slice().as_ptr(),
            1,
            p.out_units as isize,
            x.as_slice().as_ptr(),
            p.in_units as isize,
            1,
            0.0,
            grad_w.as_mut_ptr(),
            p.in_units as isize,
            1,
        );
    }

    let god = grad_out.as_slice();
    let mut grad_b = vec![0.0; p.out_units];
    for b in 0..n {
        for o in 0..p.out_units {
            grad_b[o] += god[b * p.out_units + o];
        }
    }
    Ok((grad_x, grad_w, grad_b))
}
