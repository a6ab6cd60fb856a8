//! Separable Catmull-Rom bicubic resampling.
//!
//! Sample positions use the align-corners convention: output index `i` of
//! extent `m` maps to input coordinate `i * (n - 1) / (m - 1)`, so the first
//! and last samples land exactly on the first and last input samples.
//! Out-of-range taps are filled by linear extrapolation from the two
//! nearest samples, which keeps affine signals affine right up to the
//! border (clamping the taps instead would bend ramps near the edges).

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Catmull-Rom interpolation at fractional position `t` in [0, 1) between
/// `p1` and `p2`, written in difference form so a constant signal is
/// reproduced bit-for-bit (every term carries a factor of some p_i - p1).
fn catmull_rom(p0: f64, p1: f64, p2: f64, p3: f64, t: f64) -> f64 {
    let d0 = p0 - p1;
    let d2 = p2 - p1;
    let d3 = p3 - p1;
    let c1 = 0.5 * (d2 - d0);
    let c2 = d0 + 2.0 * d2 - 0.5 * d3;
    let c3 = -0.5 * d0 - 1.5 * d2 + 0.5 * d3;
    p1 + t * (c1 + t * (c2 + t * c3))
}

/// Reads `line[j]` with linear extrapolation beyond either end.
fn tap(line: &[f64], j: isize) -> f64 {
    let n = line.len() as isize;
    if j < 0 {
        line[0] + j as f64 * (line[1] - line[0])
    } else if j >= n {
        line[(n - 1) as usize] + (j - n + 1) as f64 * (line[(n - 1) as usize] - line[(n - 2) as usize])
    } else {
        line[j as usize]
    }
}

/// Resamples one line of length `n` to length `m` (align-corners).
fn resample_line(src: &[f64], dst: &mut [f64]) {
    let n = src.len();
    let m = dst.len();
    if m == 1 {
        dst[0] = src[0];
        return;
    }
    let scale = (n - 1) as f64 / (m - 1) as f64;
    for (i, out) in dst.iter_mut().enumerate() {
        let pos = i as f64 * scale;
        let base = pos.floor();
        let t = pos - base;
        let j = base as isize;
        *out = catmull_rom(tap(src, j - 1), tap(src, j), tap(src, j + 1), tap(src, j + 2), t);
    }
}

fn resize_plane(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    // Rows first, then columns.
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        resample_line(&src[y * w..(y + 1) * w], &mut rows[y * ow..(y + 1) * ow]);
    }
    let mut out = vec![0.0; oh * ow];
    let mut col_src = vec![0.0; h];
    let mut col_dst = vec![0.0; oh];
    for x in 0..ow {
        for y in 0..h {
            col_src[y] = rows[y * ow + x];
        }
        resample_line(&col_src, &mut col_dst);
        for y in 0..oh {
            out[y * ow + x] = col_dst[y];
        }
    }
    out
}

fn check_extents(shape: Shape4, oh: usize, ow: usize) -> Result<()> {
    if shape.h < 2 || shape.w < 2 {
        return Err(Error::Shape(format!(
            "bicubic needs at least a 2x2 source, got {}x{}",
            shape.h, shape.w
        )));
    }
    if oh == 0 || ow == 0 {
        return Err(Error::Shape("bicubic output extent must be positive".into()));
    }
    Ok(())
}

/// Bicubic resize of every (n, c) plane, without the final value clamp.
/// Cubic overshoot near strong edges can leave values slightly outside
/// the input range; callers that need raw interpolated values (for
/// analysis of the resampler itself) use this variant.
pub fn bicubic_resize_unclamped(x: &Tensor4, oh: usize, ow: usize) -> Result<Tensor4> {
    check_extents(x.shape(), oh, ow)?;
    let sh = x.shape();
    let out_shape = Shape4::new(sh.n, sh.c, oh, ow);
    let mut out = Tensor4::zeros(out_shape)?;
    let plane = sh.h * sh.w;
    let out_plane = oh * ow;
    for p in 0..sh.n * sh.c {
        let src = &x.as_slice()[p * plane..(p + 1) * plane];
        let resized = resize_plane(src, sh.h, sh.w, oh, ow);
        out.as_mut_slice()[p * out_plane..(p + 1) * out_plane].copy_from_slice(&resized);
    }
    Ok(out)
}

/// Bicubic resize with the result clamped back to [0, 1], the contract
/// image data lives under everywhere else in this crate.
pub fn bicubic_resize(x: &Tensor4, oh: usize, ow: usize) -> Result<Tensor4> {
    let mut out = bicubic_resize_unclamped(x, oh, ow)?;
    for v in out.as_mut_slice() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn plane(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> Tensor4 {
        let mut v = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                v.push(f(y, x));
            }
        }
        Tensor4::from_vec(Shape4::new(1, 1, h, w), v).unwrap()
    }

    #[test]
    fn constant_is_reproduced_exactly() {
        let x = plane(7, 5, |_, _| 0.3125);
        let y = bicubic_resize(&x, 23, 17).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.3125));
    }

    #[test]
    fn identity_size_is_exact() {
        let mut rng = stream(5);
        let x = plane(9, 11, |_, _| rng.random());
        let y = bicubic_resize_unclamped(&x, 9, 11).unwrap();
        let err: f64 = x
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "identity resize drifted by {err}");
    }

    #[test]
    fn linear_ramp_survives_upscale() {
        // An affine signal lies in the null space of the cubic correction
        // terms, and linear border extrapolation keeps that true at the
        // edges, so a 2x upscale of a ramp must be another exact ramp.
        let x = plane(8, 8, |y, x| 0.05 + 0.07 * x as f64 + 0.04 * y as f64);
        let up = bicubic_resize_unclamped(&x, 15, 15).unwrap();
        let mut worst = 0.0f64;
        for y in 0..15 {
            for x in 0..15 {
                let want = 0.05 + 0.07 * (x as f64 * 0.5) + 0.04 * (y as f64 * 0.5);
                worst = worst.max((up.get(0, 0, y, x) - want).abs());
            }
        }
        assert!(worst < 1e-9, "ramp distorted by {worst:e}");
    }

    #[test]
    fn downscale_then_upscale_is_stable_on_smooth_signal() {
        let x = plane(16, 16, |y, x| {
            0.5 + 0.3 * ((x as f64) * 0.25).sin() * ((y as f64) * 0.2).cos()
        });
        let down = bicubic_resize(&x, 8, 8).unwrap();
        let back = bicubic_resize(&down, 16, 16).unwrap();
        let mean_err: f64 = x
            .as_slice()
            .iter()
            .zip(back.as_slice())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 256.0;
        assert!(mean_err < 0.02, "round trip too lossy: {mean_err}");
    }

    #[test]
    fn resize_commutes_with_value_offset() {
        // Interpolation weights sum to one, so shifting every sample by a
        // constant shifts every output by the same constant (before any
        // clamping).
        let mut rng = stream(17);
        let x = plane(10, 12, |_, _| rng.random());
        let shifted = {
            let mut s = x.clone();
            for v in s.as_mut_slice() {
                *v += 0.25;
            }
            s
        };
        let a = bicubic_resize_unclamped(&x, 21, 27).unwrap();
        let b = bicubic_resize_unclamped(&shifted, 21, 27).unwrap();
        let worst = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(p, q)| ((p + 0.25) - q).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12, "offset commutation broke by {worst:e}");
    }

    #[test]
    fn clamped_variant_stays_in_unit_range() {
        // A sharp step makes the cubic overshoot; the public resize clamps.
        let x = plane(6, 6, |_, x| if x < 3 { 0.0 } else { 1.0 });
        let y = bicubic_resize(&x, 13, 13).unwrap();
        assert!(y.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let raw = bicubic_resize_unclamped(&x, 13, 13).unwrap();
        assert!(
            raw.as_slice().iter().any(|&v| !(0.0..=1.0).contains(&v)),
            "expected overshoot on a hard step"
        );
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let x = plane(1, 5, |_, _| 0.0);
        assert!(bicubic_resize(&x, 3, 3).is_err());
        let x = plane(5, 5, |_, _| 0.0);
        assert!(bicubic_resize(&x, 0, 3).is_err());
    }

    #[test]
    fn single_output_sample_takes_the_corner() {
        let x = plane(4, 4, |y, x| (y * 4 + x) as f64 / 15.0);
        let y = bicubic_resize(&x, 1, 1).unwrap();
        assert_eq!(y.get(0, 0, 0, 0), x.get(0, 0, 0, 0));
    }
}
