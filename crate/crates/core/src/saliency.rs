//! Backprojection of feature maps into input space through recorded
//! switches.
//!
//! The backward path composes one inverse map per layer, applied in
//! reverse order from the visualized layer down to the input: transposed
//! convolution for conv layers, sparse unpooling into the recorded argmax
//! positions, forward-mask gating for ReLU (the recorded mask decides,
//! not the sign of the backward signal), and the weight transpose for
//! fully-connected layers. Dropout and softmax are treated as identity.
//! With the switches frozen by a forward trace the whole path is linear,
//! and each inverse is the exact adjoint of the linearized forward layer
//! — both properties are tested, not assumed.

use crate::error::{Error, Result};
use crate::layers::{
    conv_forward, conv_input_grad, fc_forward, fc_input_grad, maxpool_backward, relu_backward,
    ConvParams, FcParams,
};
use crate::network::{ForwardTrace, LayerParams, LayerSpec, Mode, Network};
use crate::tensor::{Shape4, Tensor4};

/// Transposed convolution: routes each output value back across the taps
/// that produced it. Identical to the gradient of `conv_forward` with
/// respect to its input (bias plays no role in either direction).
pub fn deconv_layer(h: &Tensor4, p: &ConvParams, input_shape: Shape4) -> Result<Tensor4> {
    conv_input_grad(h, p, input_shape)
}

/// Sparse unpooling: every pooled value returns to the input position the
/// forward pass took it from; all other positions stay zero. Overlapping
/// windows accumulate.
pub fn unpool_layer(h: &Tensor4, pool_argmax: &[usize], input_shape: Shape4) -> Result<Tensor4> {
    maxpool_backward(h, pool_argmax, input_shape)
}

/// Forward-mask gating: keeps `h` exactly where the forward activation
/// was positive. The sign of `h` itself is irrelevant, which is what
/// distinguishes this from rectifying the backward signal.
pub fn unrelu_layer(h: &Tensor4, relu_mask: &[bool]) -> Result<Tensor4> {
    relu_backward(h, relu_mask)
}

/// Weight-transpose backprojection through a fully-connected layer,
/// reshaped to the layer's input shape.
pub fn fc_backproject(h: &Tensor4, p: &FcParams, input_shape: Shape4) -> Result<Tensor4> {
    fc_input_grad(h, p, input_shape)
}

/// Which channels of the visualized feature map to keep.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ChannelSelection {
    All,
    /// A single channel by index.
    Channel(usize),
    /// The m highest-energy channels (squared-sum per channel, ranked
    /// per image; ties keep the lower index).
    TopM(usize),
}

/// A backprojection request against a recorded forward trace.
pub struct SaliencyRequest<'a> {
    /// Layer whose output feature map is visualized.
    pub layer_index: usize,
    pub selection: ChannelSelection,
    pub trace: &'a ForwardTrace,
}

/// Result of a backprojection.
#[derive(Clone, Debug)]
pub struct SaliencyImage {
    /// Signed backprojection in input space.
    pub raw: Tensor4,
    /// `|raw|`, normalized per image to [0, 1] by its maximum (all-zero
    /// images stay all-zero).
    pub magnitude: Tensor4,
}

fn apply_selection(h: &Tensor4, selection: ChannelSelection) -> Result<Tensor4> {
    let s = h.shape();
    match selection {
        ChannelSelection::All => Ok(h.clone()),
        ChannelSelection::Channel(k) => {
            if k >= s.c {
                return Err(Error::Usage(format!(
                    "channel {k} out of range for {} channels",
                    s.c
                )));
            }
            let mut out = Tensor4::zeros(s)?;
            let plane = s.h * s.w;
            for n in 0..s.n {
                let base = (n * s.c + k) * plane;
                out.as_mut_slice()[base..base + plane]
                    .copy_from_slice(&h.as_slice()[base..base + plane]);
            }
            Ok(out)
        }
        ChannelSelection::TopM(m) => {
            if m == 0 {
                return Err(Error::Usage("top-m selection needs m >= 1".into()));
            }
            if m >= s.c {
                return Ok(h.clone());
            }
            let plane = s.h * s.w;
            let mut out = Tensor4::zeros(s)?;
            for n in 0..s.n {
                let mut energy: Vec<(usize, f64)> = (0..s.c)
                    .map(|c| {
                        let base = (n * s.c + c) * plane;
                        let e = h.as_slice()[base..base + plane]
                            .iter()
                            .map(|v| v * v)
                            .sum::<f64>();
                        (c, e)
                    })
                    .collect();
                // Stable sort, so equal energies keep channel order.
                energy.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite energies"));
                for &(c, _) in energy.iter().take(m) {
                    let base = (n * s.c + c) * plane;
                    out.as_mut_slice()[base..base + plane]
                        .copy_from_slice(&h.as_slice()[base..base + plane]);
                }
            }
            Ok(out)
        }
    }
}

fn check_trace(net: &Network, trace: &ForwardTrace) -> Result<()> {
    if trace.mode == Mode::Train {
        return Err(Error::Usage(
            "saliency needs an eval-mode trace; train-mode dropout corrupts the switches".into(),
        ));
    }
    if trace.activations.len() != net.arch().layers.len() {
        return Err(Error::Usage(format!(
            "trace has {} layers, network has {}",
            trace.activations.len(),
            net.arch().layers.len()
        )));
    }
    Ok(())
}

/// The linear backward path: carries an arbitrary cotangent `h` at
/// `layer_index`'s output down to input space through the trace's
/// switches. [`backproject`] wraps this with channel selection and
/// magnitude normalization.
pub fn backproject_feature(
    net: &Network,
    trace: &ForwardTrace,
    layer_index: usize,
    h: &Tensor4,
) -> Result<Tensor4> {
    check_trace(net, trace)?;
    if layer_index >= trace.activations.len() {
        return Err(Error::Usage(format!(
            "layer index {layer_index} out of range for {} layers",
            trace.activations.len()
        )));
    }
    if h.shape() != trace.activations[layer_index].shape() {
        return Err(Error::Shape(format!(
            "feature map {} does not match layer {layer_index} output {}",
            h.shape(),
            trace.activations[layer_index].shape()
        )));
    }
    let mut g = h.clone();
    for j in (0..=layer_index).rev() {
        let input_shape = if j == 0 {
            trace.input.shape()
        } else {
            trace.activations[j - 1].shape()
        };
        match &net.arch().layers[j] {
            LayerSpec::Conv { .. } => {
                let p = match net.layer_params(j) {
                    LayerParams::Conv(p) => p,
                    _ => return Err(Error::Usage(format!("layer {j}: missing conv parameters"))),
                };
                g = deconv_layer(&g, p, input_shape)?;
            }
            LayerSpec::Relu => {
                let mask = trace.switches[j]
                    .relu_mask
                    .as_ref()
                    .ok_or_else(|| Error::Usage(format!("layer {j}: missing relu mask")))?;
                g = unrelu_layer(&g, mask)?;
            }
            LayerSpec::MaxPool { .. } => {
                let argmax = trace.switches[j]
                    .pool_argmax
                    .as_ref()
                    .ok_or_else(|| Error::Usage(format!("layer {j}: missing pool argmax")))?;
                g = unpool_layer(&g, argmax, input_shape)?;
            }
            LayerSpec::Fc { .. } => {
                let p = match net.layer_params(j) {
                    LayerParams::Fc(p) => p,
                    _ => return Err(Error::Usage(format!("layer {j}: missing fc parameters"))),
                };
                g = fc_backproject(&g, p, input_shape)?;
            }
            LayerSpec::Dropout { .. } | LayerSpec::Softmax => {}
        }
    }
    Ok(g)
}

/// Backprojects the selected channels of a layer's recorded feature map
/// and normalizes the magnitude per image.
pub fn backproject(net: &Network, request: &SaliencyRequest) -> Result<SaliencyImage> {
    check_trace(net, request.trace)?;
    if request.layer_index >= request.trace.activations.len() {
        return Err(Error::Usage(format!(
            "layer index {} out of range for {} layers",
            request.layer_index,
            request.trace.activations.len()
        )));
    }
    let selected = apply_selection(
        &request.trace.activations[request.layer_index],
        request.selection,
    )?;
    let raw = backproject_feature(net, request.trace, request.layer_index, &selected)?;
    if !raw.all_finite() {
        return Err(Error::Data("backprojection produced non-finite values".into()));
    }
    let s = raw.shape();
    let mut magnitude = raw.clone();
    let per_image = s.c * s.h * s.w;
    for n in 0..s.n {
        let chunk = &mut magnitude.as_mut_slice()[n * per_image..(n + 1) * per_image];
        let mut max = 0.0f64;
        for v in chunk.iter_mut() {
            *v = v.abs();
            max = max.max(*v);
        }
        if max > 0.0 {
            for v in chunk.iter_mut() {
                *v /= max;
            }
        }
    }
    Ok(SaliencyImage { raw, magnitude })
}

/// Forward pass with the trace's switches frozen: max-pooling gathers
/// from the recorded argmax, ReLU multiplies by the recorded mask, and
/// dropout/softmax are identity. On the traced input this reproduces the
/// eval forward pass; on any other input it is the linearization whose
/// exact adjoint is [`backproject_feature`].
pub fn linearized_forward(
    net: &Network,
    trace: &ForwardTrace,
    x: &Tensor4,
    layer_index: usize,
) -> Result<Tensor4> {
    check_trace(net, trace)?;
    if layer_index >= trace.activations.len() {
        return Err(Error::Usage(format!(
            "layer index {layer_index} out of range for {} layers",
            trace.activations.len()
        )));
    }
    if x.shape() != trace.input.shape() {
        return Err(Error::Shape(format!(
            "input {} does not match traced input {}",
            x.shape(),
            trace.input.shape()
        )));
    }
    let mut a = x.clone();
    for j in 0..=layer_index {
        match &net.arch().layers[j] {
            LayerSpec::Conv { .. } => {
                let p = match net.layer_params(j) {
                    LayerParams::Conv(p) => p,
                    _ => return Err(Error::Usage(format!("layer {j}: missing conv parameters"))),
                };
                a = conv_forward(&a, p)?;
            }
            LayerSpec::Relu => {
                let mask = trace.switches[j]
                    .relu_mask
                    .as_ref()
                    .ok_or_else(|| Error::Usage(format!("layer {j}: missing relu mask")))?;
                a = relu_backward(&a, mask)?;
            }
            LayerSpec::MaxPool { .. } => {
                let argmax = trace.switches[j]
                    .pool_argmax
                    .as_ref()
                    .ok_or_else(|| Error::Usage(format!("layer {j}: missing pool argmax")))?;
                let out_shape = trace.activations[j].shape();
                let mut pooled = Tensor4::zeros(out_shape)?;
                if argmax.len() != pooled.len() {
                    return Err(Error::Corrupt(format!(
                        "layer {j}: argmax length {} vs pooled size {}",
                        argmax.len(),
                        pooled.len()
                    )));
                }
                for (o, &src) in pooled.as_mut_slice().iter_mut().zip(argmax) {
                    *o = a.as_slice()[src];
                }
                a = pooled;
            }
            LayerSpec::Fc { .. } => {
                let p = match net.layer_params(j) {
                    LayerParams::Fc(p) => p,
                    _ => return Err(Error::Usage(format!("layer {j}: missing fc parameters"))),
                };
                a = fc_forward(&a, p)?;
            }
            LayerSpec::Dropout { .. } | LayerSpec::Softmax => {}
        }
    }
    Ok(a)
}
