//! Softmax with cross-entropy loss, fused for a stable gradient.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Mean negative log-likelihood of the labels under softmax(logits),
/// computed with max-subtraction; the gradient is (softmax − onehot)
/// divided by the batch size. Logits must be `(n, classes, 1, 1)`.
pub fn softmax_cross_entropy(logits: &Tensor4, labels: &[usize]) -> Result<(f64, Tensor4)> {
    let s = logits.shape();
    if s.h != 1 || s.w != 1 {
        return Err(Error::Shape(format!(
            "logits must be (n, classes, 1, 1), got {s}"
        )));
    }
    if labels.len() != s.n {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {}",
            labels.len(),
            s.n
        )));
    }
    let classes = s.c;
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Data(format!(
                "label {l} at index {i} out of range for {classes} classes"
            )));
        }
    }
    let ld = logits.as_slice();
    let mut grad = Tensor4::zeros(s)?;
    let gd = grad.as_mut_slice();
    let inv_n = 1.0 / s.n as f64;
    let mut loss = 0.0;
    for b in 0..s.n {
        let row = &ld[b * classes..(b + 1) * classes];
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let mut z = 0.0;
        for &v in row {
            z += (v - m).exp();
        }
        loss -= row[labels[b]] - m - z.ln();
        for j in 0..classes {
            let p = (row[j] - m).exp() / z;
            gd[b * classes + j] = (p - if j == labels[b] { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

/// Plain softmax over the channel axis for an explicit softmax layer;
/// training fuses softmax into the loss instead, so this only runs when an
/// architecture declares the layer.
pub fn softmax_forward(x: &Tensor4) -> Result<Tensor4> {
    let s = x.shape();
    if s.h != 1 || s.w != 1 {
        return Err(Error::Shape(format!(
            "softmax input must be (n, classes, 1, 1), got {s}"
        )));
    }
    let mut out = x.clone();
    let od = out.as_mut_slice();
    for b in 0..s.n {
        let row = &mut od[b * s.c..(b + 1) * s.c];
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}

/// Jacobian-vector product of [`softmax_forward`] given its output
/// probabilities: grad_in = p ⊙ (grad_out − ⟨grad_out, p⟩) per row.
pub fn softmax_backward(probs: &Tensor4, grad_out: &Tensor4) -> Result<Tensor4> {
    let s = probs.shape();
    if grad_out.shape() != s {
        return Err(Error::Shape(format!(
            "softmax grad_out shape {} does not match {}",
            grad_out.shape(),
            s
        )));
    }
    let pd = probs.as_slice();
    let god = grad_out.as_slice();
    let mut gx = Tensor4::zeros(s)?;
    let gd = gx.as_mut_slice();
    for b in 0..s.n {
        let base = b * s.c;
        let mut dot = 0.0;
        for j in 0..s.c {
            dot += god[base + j] * pd[base + j];
        }
        for j in 0..s.c {
            gd[base + j] = pd[base + j] * (god[base + j] - dot);
        }
    }
    Ok(gx)
}
