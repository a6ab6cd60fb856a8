//! Inverted dropout: kept activations are rescaled at training time so
//! inference is a pure pass-through.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Drops each element with probability `rate` during training, scaling the
/// survivors by 1/(1−rate); outside training the input passes through
/// untouched with an all-true mask. Mask draws consume the stream in flat
/// storage order.
pub fn dropout_forward(
    x: &Tensor4,
    rate: f64,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor4, Vec<bool>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), vec![true; x.len()]));
    }
    let scale = 1.0 / (1.0 - rate);
    let mut out = x.clone();
    let mut mask = vec![false; x.len()];
    for (v, m) in out.as_mut_slice().iter_mut().zip(mask.iter_mut()) {
        if rng.random::<f64>() >= rate {
            *m = true;
            *v *= scale;
        } else {
            *v = 0.0;
        }
    }
    Ok((out, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tensor::Shape4;

    fn filled(shape: Shape4, seed: u64) -> Tensor4 {
        let mut rng = stream(seed);
        let mut t = Tensor4::zeros(shape).unwrap();
        t.map_elementwise(|_| rng.random::<f64>() + 0.5);
        t
    }

    #[test]
    fn rate_zero_is_identity() {
        let x = filled(Shape4::new(1, 2, 3, 3), 1);
        let (out, mask) = dropout_forward(&x, 0.0, true, &mut stream(2)).unwrap();
        assert_eq!(out, x);
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn inference_is_identity() {
        let x = filled(Shape4::new(1, 2, 3, 3), 3);
        let (out, mask) = dropout_forward(&x, 0.5, false, &mut stream(4)).unwrap();
        assert_eq!(out, x);
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn keeps_about_half_and_preserves_mean() {
        let x = filled(Shape4::new(1, 10, 100, 100), 5);
        let (out, mask) = dropout_forward(&x, 0.5, true, &mut stream(6)).unwrap();
        let kept = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
        assert!((kept - 0.5).abs() < 0.01, "kept fraction {kept}");
        let mean_in = x.sum() / x.len() as f64;
        let mean_out = out.sum() / out.len() as f64;
        assert!(
            (mean_out - mean_in).abs() / mean_in < 0.03,
            "mean drifted from {mean_in} to {mean_out}"
        );
        // Survivors are scaled by exactly 1/(1-rate); dropped are zero.
        for i in 0..x.len() {
            if mask[i] {
                assert_eq!(out.as_slice()[i], x.as_slice()[i] * 2.0);
            } else {
                assert_eq!(out.as_slice()[i], 0.0);
            }
        }
    }

    #[test]
    fn invalid_rate_rejected() {
        let x = filled(Shape4::new(1, 1, 2, 2), 7);
        assert!(dropout_forward(&x, 1.0, true, &mut stream(8)).is_err());
        assert!(dropout_forward(&x, -0.1, true, &mut stream(8)).is_err());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let x = filled(Shape4::new(1, 4, 8, 8), 9);
        let (a, ma) = dropout_forward(&x, 0.3, true, &mut stream(10)).unwrap();
        let (b, mb) = dropout_forward(&x, 0.3, true, &mut stream(10)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
    }
}
