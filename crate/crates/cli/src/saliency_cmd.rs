//! The saliency command: load a checkpoint and one image, backproject a
//! named layer's feature map, and write the result as a magnitude PGM plus
//! a signed CSV per input channel.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use stlb_core::data::{load_image, save_image};
use stlb_core::network::{Mode, Network};
use stlb_core::saliency::{backproject, ChannelSelection, SaliencyRequest};
use stlb_core::tensor::{Shape4, Tensor4};
use stlb_core::transfer::replicate_channels;
use stlb_core::{checkpoint, Error, Result};

#[derive(Clone, Debug)]
pub struct SaliencyArgs {
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    /// Layer name as reported by the architecture (conv1, fc2, ...).
    pub layer: String,
    pub out_dir: PathBuf,
    /// Keep a single channel of the feature map.
    pub channel: Option<usize>,
    /// Keep the m highest-energy channels. Mutually exclusive with
    /// `channel`; when both are absent the top channel is used.
    pub top: Option<usize>,
}

fn resolve_layer(net: &Network, name: &str) -> Result<usize> {
    let names = net.arch().layer_names();
    names.iter().position(|n| n == name).ok_or_else(|| {
        Error::Config(format!(
            "no layer named \"{name}\"; this architecture has: {}",
            names.join(", ")
        ))
    })
}

fn selection(args: &SaliencyArgs) -> Result<ChannelSelection> {
    match (args.channel, args.top) {
        (Some(_), Some(_)) => Err(Error::Usage(
            "choose either a channel or a top-m count, not both".into(),
        )),
        (Some(c), None) => Ok(ChannelSelection::Channel(c)),
        (None, Some(m)) => Ok(ChannelSelection::TopM(m)),
        (None, None) => Ok(ChannelSelection::TopM(1)),
    }
}

fn signed_csv(plane: &[f64], h: usize, w: usize) -> String {
    let mut out = String::new();
    for y in 0..h {
        for x in 0..w {
            if x > 0 {
                out.push(',');
            }
            write!(out, "{}", plane[y * w + x]).expect("string write");
        }
        out.push('\n');
    }
    out
}

/// Returns the written file paths: a magnitude PGM and a raw CSV per input
/// channel, deterministic for a fixed checkpoint and image.
pub fn cmd_saliency(args: &SaliencyArgs) -> Result<Vec<PathBuf>> {
    let net = checkpoint::load(&args.checkpoint)?;
    let image = load_image(&args.image)?;
    let input = net.arch().input_shape;
    let s = image.shape();
    if (s.h, s.w) != (input.h, input.w) {
        return Err(Error::Config(format!(
            "image is {}x{} but the network expects {}x{}",
            s.h, s.w, input.h, input.w
        )));
    }
    let x = if input.c == s.c {
        image
    } else if s.c == 1 {
        replicate_channels(&image, input.c)?
    } else {
        return Err(Error::Config(format!(
            "image has {} channels but the network expects {}",
            s.c, input.c
        )));
    };

    let layer_index = resolve_layer(&net, &args.layer)?;
    let trace = net.forward(&x, Mode::Eval, None)?;
    let img = backproject(
        &net,
        &SaliencyRequest {
            layer_index,
            selection: selection(args)?,
            trace: &trace,
        },
    )?;

    fs::create_dir_all(&args.out_dir)?;
    let shape = img.raw.shape();
    let plane = shape.h * shape.w;
    let mut written = Vec::new();
    for c in 0..shape.c {
        let mag_path = args.out_dir.join(format!("magnitude_c{c}.pgm"));
        let mag_plane = Tensor4::from_vec(
            Shape4::new(1, 1, shape.h, shape.w),
            img.magnitude.as_slice()[c * plane..(c + 1) * plane].to_vec(),
        )?;
        save_image(&mag_plane, &mag_path)?;
        written.push(mag_path);

        let raw_path = args.out_dir.join(format!("raw_c{c}.csv"));
        fs::write(
            &raw_path,
            signed_csv(
                &img.raw.as_slice()[c * plane..(c + 1) * plane],
                shape.h,
                shape.w,
            ),
        )?;
        written.push(raw_path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    use stlb_core::network::{ArchitectureSpec, LayerParams, LayerSpec};
    use stlb_core::tensor::{Shape4, Tensor4};

    /// A net whose first layer reproduces its input: 1x1 identity conv.
    fn identity_net() -> Network {
        let arch = ArchitectureSpec {
            input_shape: Shape4::new(1, 1, 4, 4),
            layers: vec![
                LayerSpec::Conv {
                    out_channels: 1,
                    kh: 1,
                    kw: 1,
                    stride: 1,
                    pad: 0,
                },
                LayerSpec::Fc { out_units: 2 },
            ],
            split_index: 1,
            class_count: 2,
        };
        let mut net = Network::init_random(arch, 3).unwrap();
        match net.layer_params_mut(0) {
            LayerParams::Conv(p) => {
                p.kernel.as_mut_slice()[0] = 1.0;
                p.bias[0] = 0.0;
            }
            _ => unreachable!(),
        }
        net
    }

    fn args(dir: &Path, layer: &str) -> SaliencyArgs {
        SaliencyArgs {
            checkpoint: dir.join("net.ckpt"),
            image: dir.join("input.pgm"),
            layer: layer.to_string(),
            out_dir: dir.join("saliency"),
            channel: None,
            top: None,
        }
    }

    fn setup(dir: &Path) -> Tensor4 {
        let net = identity_net();
        checkpoint::save(&net, &dir.join("net.ckpt")).unwrap();
        let img = Tensor4::from_vec(
            Shape4::new(1, 1, 4, 4),
            (0..16).map(|i| i as f64 / 15.0).collect(),
        )
        .unwrap();
        save_image(&img, &dir.join("input.pgm")).unwrap();
        // The image comes back 8-bit quantized.
        load_image(&dir.join("input.pgm")).unwrap()
    }

    #[test]
    fn identity_first_layer_reproduces_normalized_input() {
        let dir = tempfile::tempdir().unwrap();
        let quantized = setup(dir.path());
        let written = cmd_saliency(&args(dir.path(), "conv1")).unwrap();
        assert_eq!(written.len(), 2);

        let magnitude = load_image(&dir.path().join("saliency/magnitude_c0.pgm")).unwrap();
        let max = quantized.max().unwrap();
        for (&m, &v) in magnitude.as_slice().iter().zip(quantized.as_slice()) {
            // |input| / max(|input|), re-quantized once on save.
            assert!((m - v / max).abs() <= 0.5 / 255.0 + 1e-12);
        }

        let csv = fs::read_to_string(dir.path().join("saliency/raw_c0.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        let first: f64 = csv.lines().next().unwrap().split(',').next().unwrap().parse().unwrap();
        assert_eq!(first, quantized.as_slice()[0]);
    }

    #[test]
    fn outputs_are_bit_identical_across_invocations() {
        let dir = tempfile::tempdir().unwrap();
        setup(dir.path());
        let a = args(dir.path(), "fc1");
        cmd_saliency(&a).unwrap();
        let mag = fs::read(dir.path().join("saliency/magnitude_c0.pgm")).unwrap();
        let raw = fs::read(dir.path().join("saliency/raw_c0.csv")).unwrap();
        cmd_saliency(&a).unwrap();
        assert_eq!(mag, fs::read(dir.path().join("saliency/magnitude_c0.pgm")).unwrap());
        assert_eq!(raw, fs::read(dir.path().join("saliency/raw_c0.csv")).unwrap());
    }

    #[test]
    fn bad_layer_and_bad_shape_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        setup(dir.path());
        let mut bad_layer = args(dir.path(), "fc9");
        assert!(matches!(
            cmd_saliency(&bad_layer),
            Err(Error::Config(_))
        ));
        bad_layer.layer = "conv1".into();
        bad_layer.channel = Some(0);
        bad_layer.top = Some(2);
        assert!(matches!(cmd_saliency(&bad_layer), Err(Error::Usage(_))));

        let wrong = Tensor4::zeros(Shape4::new(1, 1, 3, 3)).unwrap();
        save_image(&wrong, &dir.path().join("small.pgm")).unwrap();
        let mut bad_shape = args(dir.path(), "conv1");
        bad_shape.image = dir.path().join("small.pgm");
        let err = cmd_saliency(&bad_shape).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("3x3"), "{err}");
    }
}
