//! Max-pooling with argmax switch recording.

use super::out_extent;
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Pooling parameters: window `(ph, pw)` and stride. No padding — the
/// window must fit inside the input extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolParams {
    pub window: (usize, usize),
    pub stride: usize,
}

impl PoolParams {
    pub fn new(window: (usize, usize), stride: usize) -> Result<Self> {
        if window.0 == 0 || window.1 == 0 {
            return Err(Error::Config("pool window extents must be positive".into()));
        }
        if stride == 0 {
            return Err(Error::Config("pool stride must be positive".into()));
        }
        Ok(PoolParams { window, stride })
    }

    pub fn output_shape(&self, x: Shape4) -> Result<Shape4> {
        let oh = out_extent(x.h, 0, self.window.0, self.stride);
        let ow = out_extent(x.w, 0, self.window.1, self.stride);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok(Shape4::new(x.n, x.c, oh, ow)),
            _ => Err(Error::Shape(format!(
                "{}x{} pool window does not fit {}x{} input",
                self.window.0, self.window.1, x.h, x.w
            ))),
        }
    }
}

/// Window maximum per output position; the returned argmax vector stores,
/// per output position in flat output order, the flat coordinate of the
/// winning input element. Ties go to the lowest flat index.
pub fn maxpool_forward(x: &Tensor4, p: &PoolParams) -> Result<(Tensor4, Vec<usize>)> {
    let out_shape = p.output_shape(x.shape())?;
    let xs = x.shape();
    let xd = x.as_slice();
    let mut out = Tensor4::zeros(out_shape)?;
    let od = out.as_mut_slice();
    let mut argmax = vec![0usize; od.len()];
    let mut oi = 0;
    for n in 0..xs.n {
        for c in 0..xs.c {
            let base = (n * xs.c + c) * xs.h * xs.w;
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let (y0, x0) = (oy * p.stride, ox * p.stride);
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for v in 0..p.window.0 {
                        let row = base + (y0 + v) * xs.w + x0;
                        for u in 0..p.window.1 {
                            // In-window iteration follows flat index order,
                            // so strict > keeps the lowest index on ties.
                            if xd[row + u] > best {
                                best = xd[row + u];
                                best_i = row + u;
                            }
                        }
                    }
                    od[oi] = best;
                    argmax[oi] = best_i;
                    oi += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each output gradient back to its argmax position; overlapping
/// windows accumulate. The same scatter serves the visualization path as
/// unpooling.
pub fn maxpool_backward(
    grad_out: &Tensor4,
    argmax: &[usize],
    input_shape: Shape4,
) -> Result<Tensor4> {
    if argmax.len() != grad_out.len() {
        return Err(Error::Corrupt(format!(
            "pool argmax length {} does not match {} output positions",
            argmax.len(),
            grad_out.len()
        )));
    }
    let mut gx = Tensor4::zeros(input_shape)?;
    let gd = gx.as_mut_slice();
    let god = grad_out.as_slice();
    for (i, &a) in argmax.iter().enumerate() {
        if a >= gd.len() {
            return Err(Error::Corrupt(format!(
                "pool argmax {a} out of range for input of {} elements",
                gd.len()
            )));
        }
        gd[a] += god[i];
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn single_window() {
        let x = Tensor4::from_vec(Shape4::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = PoolParams::new((2, 2), 2).unwrap();
        let (out, argmax) = maxpool_forward(&x, &p).unwrap();
        assert_eq!(out.as_slice(), &[4.0]);
        assert_eq!(argmax, vec![3]);
    }

    #[test]
    fn ties_pick_lowest_flat_index() {
        let x = Tensor4::from_vec(Shape4::new(1, 2, 2, 2), vec![5.0; 8]).unwrap();
        let p = PoolParams::new((2, 2), 2).unwrap();
        let (out, argmax) = maxpool_forward(&x, &p).unwrap();
        assert_eq!(out.as_slice(), &[5.0, 5.0]);
        // First element of each window (per channel plane).
        assert_eq!(argmax, vec![0, 4]);
    }

    #[test]
    fn matches_window_max_oracle() {
        let mut rng = stream(77);
        let xs = Shape4::new(1, 2, 8, 8);
        let mut x = Tensor4::zeros(xs).unwrap();
        x.map_elementwise(|_| rng.random::<f64>());
        let p = PoolParams::new((3, 3), 2).unwrap();
        let (out, argmax) = maxpool_forward(&x, &p).unwrap();
        let os = out.shape();
        for n in 0..os.n {
            for c in 0..os.c {
                for oy in 0..os.h {
                    for ox in 0..os.w {
                        let mut want = f64::NEG_INFINITY;
                        for v in 0..3 {
                            for u in 0..3 {
                                want = want.max(x.get(n, c, oy * 2 + v, ox * 2 + u));
                            }
                        }
                        assert_eq!(out.get(n, c, oy, ox), want);
                    }
                }
            }
        }
        // Every argmax lies inside its own window.
        let mut oi = 0;
        for n in 0..os.n {
            for c in 0..os.c {
                for oy in 0..os.h {
                    for ox in 0..os.w {
                        let a = argmax[oi];
                        oi += 1;
                        let w = a % xs.w;
                        let h = (a / xs.w) % xs.h;
                        let ch = (a / (xs.w * xs.h)) % xs.c;
                        let b = a / (xs.w * xs.h * xs.c);
                        assert_eq!((b, ch), (n, c));
                        assert!(h >= oy * 2 && h < oy * 2 + 3);
                        assert!(w >= ox * 2 && w < ox * 2 + 3);
                    }
                }
            }
        }
    }

    #[test]
    fn backward_scatters_sparsely() {
        let x = Tensor4::from_vec(
            Shape4::new(1, 1, 2, 4),
            vec![1.0, 2.0, 3.0, 4.0, 8.0, 7.0, 6.0, 5.0],
        )
        .unwrap();
        let p = PoolParams::new((2, 2), 2).unwrap();
        let (out, argmax) = maxpool_forward(&x, &p).unwrap();
        assert_eq!(out.as_slice(), &[8.0, 6.0]);
        let go = Tensor4::from_vec(out.shape(), vec![0.5, 0.25]).unwrap();
        let gx = maxpool_backward(&go, &argmax, x.shape()).unwrap();
        assert_eq!(gx.as_slice(), &[0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.25, 0.0]);
    }

    #[test]
    fn overlapping_windows_accumulate() {
        // Stride 1 with a 2x2 window: the global max sits in several
        // windows and collects all their gradients.
        let x = Tensor4::from_vec(
            Shape4::new(1, 1, 3, 3),
            vec![0.0, 0.1, 0.2, 0.3, 9.0, 0.4, 0.5, 0.6, 0.7],
        )
        .unwrap();
        let p = PoolParams::new((2, 2), 1).unwrap();
        let (out, argmax) = maxpool_forward(&x, &p).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 9.0));
        let go = Tensor4::from_vec(out.shape(), vec![1.0; 4]).unwrap();
        let gx = maxpool_backward(&go, &argmax, x.shape()).unwrap();
        assert_eq!(gx.get(0, 0, 1, 1), 4.0);
        assert_eq!(gx.sum(), 4.0);
    }

    #[test]
    fn stale_argmax_is_corruption() {
        let go = Tensor4::from_vec(Shape4::new(1, 1, 1, 1), vec![1.0]).unwrap();
        let err = maxpool_backward(&go, &[99], Shape4::new(1, 1, 2, 2)).unwrap_err();
        assert!(matches!(err, Error::Corrupt(_)));
        assert!(maxpool_backward(&go, &[0, 1], Shape4::new(1, 1, 2, 2)).is_err());
    }

    #[test]
    fn window_must_fit() {
        let x = Tensor4::zeros(Shape4::new(1, 1, 2, 2)).unwrap();
        let p = PoolParams::new((3, 3), 1).unwrap();
        assert!(maxpool_forward(&x, &p).is_err());
    }
}
