//! ReLU with positivity-mask recording.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// max(0, x) elementwise; the mask records strictly positive inputs (an
/// input of exactly zero is `false`).
pub fn relu_forward(x: &Tensor4) -> (Tensor4, Vec<bool>) {
    let mut out = x.clone();
    let mut mask = vec![false; x.len()];
    for (v, m) in out.as_mut_slice().iter_mut().zip(mask.iter_mut()) {
        if *v > 0.0 {
            *m = true;
        } else {
            *v = 0.0;
        }
    }
    (out, mask)
}

/// Passes the gradient where the forward input was positive, zero
/// elsewhere. The same gating serves the visualization path.
pub fn relu_backward(grad_out: &Tensor4, mask: &[bool]) -> Result<Tensor4> {
    if mask.len() != grad_out.len() {
        return Err(Error::Shape(format!(
            "relu mask length {} does not match {} gradient elements",
            mask.len(),
            grad_out.len()
        )));
    }
    let mut gx = grad_out.clone();
    for (v, &m) in gx.as_mut_slice().iter_mut().zip(mask) {
        if !m {
            *v = 0.0;
        }
    }
    Ok(gx)
}
