//! Sequential network assembly: architecture description, parameter
//! initialization, forward pass with switch recording, and backward pass
//! over the whole stack.
//!
//! An architecture carries a `split_index` marking the first layer of the
//! classifier part; everything below it is the feature extractor whose
//! weights the staged transfer processes carry between stages.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    conv_backward, conv_forward, dropout_forward, fc_backward, fc_forward, maxpool_backward,
    maxpool_forward, relu_backward, relu_forward, softmax_backward, softmax_forward, ConvParams,
    FcParams, LayerKind, PoolParams, Switches,
};
use crate::rng::{derive_seed, stream, tags};
use crate::tensor::{Shape4, Tensor4};

/// One layer position in an architecture.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool {
        ph: usize,
        pw: usize,
        stride: usize,
    },
    Fc {
        out_units: usize,
    },
    Dropout {
        rate: f64,
    },
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Conv { .. } => LayerKind::Convolution,
            LayerSpec::Relu => LayerKind::ReLU,
            LayerSpec::MaxPool { .. } => LayerKind::MaxPool,
            LayerSpec::Fc { .. } => LayerKind::FullyConnected,
            LayerSpec::Dropout { .. } => LayerKind::Dropout,
            LayerSpec::Softmax => LayerKind::Softmax,
        }
    }
}

/// Ordered layer stack with the feature/classifier boundary and the class
/// count of the attached dataset.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    /// Single-example input shape; the batch extent is ignored (treated
    /// as 1) since batching is free.
    pub input_shape: Shape4,
    pub layers: Vec<LayerSpec>,
    /// Index of the first classifier layer; layers below it form the
    /// feature extractor.
    pub split_index: usize,
    pub class_count: usize,
}

impl ArchitectureSpec {
    /// The desk-scale default: two conv/pool stages into a three-FC
    /// classifier head on 32×32 single-channel input. The first FC layer
    /// is the extracted feature representation; the split places the last
    /// two FC layers in the classifier part.
    pub fn mini_alex(class_count: usize) -> Self {
        ArchitectureSpec {
            input_shape: Shape4::new(1, 1, 32, 32),
            layers: vec![
                LayerSpec::Conv {
                    out_channels: 16,
                    kh: 5,
                    kw: 5,
                    stride: 1,
                    pad: 2,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool {
                    ph: 2,
                    pw: 2,
                    stride: 2,
                },
                LayerSpec::Conv {
                    out_channels: 32,
                    kh: 5,
                    kw: 5,
                    stride: 1,
                    pad: 2,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool {
                    ph: 2,
                    pw: 2,
                    stride: 2,
                },
                LayerSpec::Fc { out_units: 128 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Fc { out_units: 64 },
                LayerSpec::Relu,
                LayerSpec::Fc { out_units: class_count },
            ],
            split_index: 9,
            class_count,
        }
    }

    /// Shapes threaded through the stack for a batch of one: entry 0 is
    /// the input, entry i+1 the output of layer i.
    pub fn shape_chain(&self) -> Result<Vec<Shape4>> {
        let mut s = self.input_shape;
        s.n = 1;
        if s.is_empty() {
            return Err(Error::Config(format!("degenerate input shape {s}")));
        }
        let mut chain = vec![s];
        for (i, spec) in self.layers.iter().enumerate() {
            let cur = *chain.last().expect("chain nonempty");
            let next = match *spec {
                LayerSpec::Conv {
                    out_channels,
                    kh,
                    kw,
                    stride,
                    pad,
                } => {
                    let kernel = Tensor4::zeros(Shape4::new(out_channels, cur.c, kh, kw))?;
                    ConvParams::new(kernel, vec![0.0; out_channels], stride, pad)?
                        .output_shape(cur)?
                }
                LayerSpec::Relu => cur,
                LayerSpec::MaxPool { ph, pw, stride } => {
                    PoolParams::new((ph, pw), stride)?.output_shape(cur)?
                }
                LayerSpec::Fc { out_units } => {
                    if out_units == 0 {
                        return Err(Error::Config(format!("layer {i}: zero fc units")));
                    }
                    Shape4::new(1, out_units, 1, 1)
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::Config(format!(
                            "layer {i}: dropout rate {rate} outside [0, 1)"
                        )));
                    }
                    cur
                }
                LayerSpec::Softmax => {
                    if cur.h != 1 || cur.w != 1 {
                        return Err(Error::Config(format!(
                            "layer {i}: softmax needs (n, c, 1, 1) input, got {cur}"
                        )));
                    }
                    cur
                }
            };
            chain.push(next);
        }
        Ok(chain)
    }

    /// Checks that shapes chain, the final activation is a class-count
    /// logit vector, and the split index is inside the stack.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("architecture has no layers".into()));
        }
        let chain = self.shape_chain()?;
        let last = *chain.last().expect("chain nonempty");
        if last != Shape4::new(1, self.class_count, 1, 1) {
            return Err(Error::Config(format!(
                "final activation {last} does not match {} classes",
                self.class_count
            )));
        }
        if self.split_index == 0 || self.split_index >= self.layers.len() {
            return Err(Error::Config(format!(
                "split index {} outside 1..{}",
                self.split_index,
                self.layers.len()
            )));
        }
        if self.last_fc_index().is_none() {
            return Err(Error::Config("architecture has no fully-connected layer".into()));
        }
        Ok(())
    }

    /// Index of the final FC layer (the one that produces the logits).
    pub fn last_fc_index(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Fc { .. }))
    }

    /// Stable per-layer names for reporting and CLI selection: kind plus a
    /// 1-based counter within that kind (conv1, relu2, pool1, fc3, ...).
    pub fn layer_names(&self) -> Vec<String> {
        let mut counts = std::collections::HashMap::new();
        self.layers
            .iter()
            .map(|spec| {
                let stem = match spec.kind() {
                    LayerKind::Convolution => "conv",
                    LayerKind::ReLU => "relu",
                    LayerKind::MaxPool => "pool",
                    LayerKind::FullyConnected => "fc",
                    LayerKind::Dropout => "dropout",
                    LayerKind::Softmax => "softmax",
                };
                let c = counts.entry(stem).or_insert(0usize);
                *c += 1;
                format!("{stem}{c}")
            })
            .collect()
    }
}

/// Forward-pass mode; dropout draws only in `Train`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Train,
    Eval,
}

/// Parameters of one layer position; stateless kinds hold `None`.
#[derive(Clone, PartialEq, Debug)]
pub enum LayerParams {
    None,
    Conv(ConvParams),
    Fc(FcParams),
}

/// Per-layer gradient (or momentum-velocity) storage, mirroring
/// [`LayerParams`].
#[derive(Clone, PartialEq, Debug)]
pub enum LayerGrads {
    None,
    Conv { kernel: Tensor4, bias: Vec<f64> },
    Fc { weight: Vec<f64>, bias: Vec<f64> },
}

/// A parameterized architecture.
#[derive(Clone, PartialEq, Debug)]
pub struct Network {
    arch: ArchitectureSpec,
    params: Vec<LayerParams>,
    /// Seed the initial parameters were drawn from; retained for
    /// checkpoint provenance.
    pub rng_seed: u64,
}

/// Activations and switches captured by one forward pass. Entry i of both
/// vectors belongs to layer i; the raw input is retained because the
/// backward passes need every layer's input shape.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub input: Tensor4,
    pub activations: Vec<Tensor4>,
    pub switches: Vec<Switches>,
    pub mode: Mode,
}

impl ForwardTrace {
    /// Logits (or final activation) of the pass.
    pub fn output(&self) -> &Tensor4 {
        self.activations.last().expect("trace has layers")
    }
}

fn init_layer(spec: &LayerSpec, in_shape: Shape4, rng: &mut ChaCha8Rng) -> Result<LayerParams> {
    match *spec {
        LayerSpec::Conv {
            out_channels,
            kh,
            kw,
            stride,
            pad,
        } => {
            let fan_in = (in_shape.c * kh * kw) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt())
                .map_err(|e| Error::Config(format!("bad init distribution: {e}")))?;
            let shape = Shape4::new(out_channels, in_shape.c, kh, kw);
            let mut kernel = Tensor4::zeros(shape)?;
            kernel.map_elementwise(|_| normal.sample(rng));
            Ok(LayerParams::Conv(ConvParams::new(
                kernel,
                vec![0.0; out_channels],
                stride,
                pad,
            )?))
        }
        LayerSpec::Fc { out_units } => {
            let in_units = in_shape.c * in_shape.h * in_shape.w;
            let normal = Normal::new(0.0, (2.0 / in_units as f64).sqrt())
                .map_err(|e| Error::Config(format!("bad init distribution: {e}")))?;
            let weight = (0..out_units * in_units).map(|_| normal.sample(rng)).collect();
            Ok(LayerParams::Fc(FcParams::new(
                out_units,
                in_units,
                weight,
                vec![0.0; out_units],
            )?))
        }
        _ => Ok(LayerParams::None),
    }
}

impl Network {
    /// Fresh network with zero-mean Gaussian weights scaled by √(2/fan_in)
    /// and zero biases, fully determined by `seed`.
    pub fn init_random(arch: ArchitectureSpec, seed: u64) -> Result<Network> {
        arch.validate()?;
        let chain = arch.shape_chain()?;
        let mut params = Vec::with_capacity(arch.layers.len());
        for (i, spec) in arch.layers.iter().enumerate() {
            let mut rng = stream(derive_seed(seed, &[tags::INIT, i as u64]));
            params.push(init_layer(spec, chain[i], &mut rng)?);
        }
        Ok(Network {
            arch,
            params,
            rng_seed: seed,
        })
    }

    /// Rebuilds a network from already-validated parts (checkpoint loading).
    pub(crate) fn from_parts(
        arch: ArchitectureSpec,
        params: Vec<LayerParams>,
        rng_seed: u64,
    ) -> Network {
        Network {
            arch,
            params,
            rng_seed,
        }
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn layer_params(&self, i: usize) -> &LayerParams {
        &self.params[i]
    }

    pub fn layer_params_mut(&mut self, i: usize) -> &mut LayerParams {
        &mut self.params[i]
    }

    pub(crate) fn params(&self) -> &[LayerParams] {
        &self.params
    }

    fn conv(&self, i: usize) -> &ConvParams {
        match &self.params[i] {
            LayerParams::Conv(p) => p,
            _ => panic!("layer {i} parameters do not match its conv spec"),
        }
    }

    fn fc(&self, i: usize) -> &FcParams {
        match &self.params[i] {
            LayerParams::Fc(p) => p,
            _ => panic!("layer {i} parameters do not match its fc spec"),
        }
    }

    /// Applies every layer in order, recording activations and switches.
    /// `rng` feeds dropout and is required only in train mode when a
    /// dropout layer with a positive rate is present.
    pub fn forward(
        &self,
        x: &Tensor4,
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardTrace> {
        let xs = x.shape();
        let want = self.arch.input_shape;
        if (xs.c, xs.h, xs.w) != (want.c, want.h, want.w) {
            return Err(Error::Shape(format!(
                "input {} does not match architecture input {}",
                xs, want
            )));
        }
        let n_layers = self.arch.layers.len();
        let mut activations: Vec<Tensor4> = Vec::with_capacity(n_layers);
        let mut switches = Vec::with_capacity(n_layers);
        for (i, spec) in self.arch.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &activations[i - 1] };
            let (out, sw) = match *spec {
                LayerSpec::Conv { .. } => (conv_forward(input, self.conv(i))?, Switches::none()),
                LayerSpec::Relu => {
                    let (out, mask) = relu_forward(input);
                    (
                        out,
                        Switches {
                            relu_mask: Some(mask),
                            ..Switches::none()
                        },
                    )
                }
                LayerSpec::MaxPool { ph, pw, stride } => {
                    let p = PoolParams::new((ph, pw), stride)?;
                    let (out, argmax) = maxpool_forward(input, &p)?;
                    (
                        out,
                        Switches {
                            pool_argmax: Some(argmax),
                            ..Switches::none()
                        },
                    )
                }
                LayerSpec::Fc { .. } => (fc_forward(input, self.fc(i))?, Switches::none()),
                LayerSpec::Dropout { rate } => {
                    let training = mode == Mode::Train;
                    let mut idle = stream(0);
                    let r = if training && rate > 0.0 {
                        match rng.as_deref_mut() {
                            Some(r) => r,
                            None => {
                                return Err(Error::Usage(
                                    "train-mode forward through dropout needs an rng".into(),
                                ))
                            }
                        }
                    } else {
                        &mut idle
                    };
                    let (out, mask) = dropout_forward(input, rate, training, r)?;
                    (
                        out,
                        Switches {
                            dropout_mask: Some(mask),
                            ..Switches::none()
                        },
                    )
                }
                LayerSpec::Softmax => (softmax_forward(input)?, Switches::none()),
            };
            activations.push(out);
            switches.push(sw);
        }
        Ok(ForwardTrace {
            input: x.clone(),
            activations,
            switches,
            mode,
        })
    }

    /// Recorded activation of layer `layer_index` (output side).
    pub fn feature_at<'t>(&self, trace: &'t ForwardTrace, layer_index: usize) -> Result<&'t Tensor4> {
        trace.activations.get(layer_index).ok_or_else(|| {
            Error::Usage(format!(
                "layer index {layer_index} out of range for {} layers",
                self.arch.layers.len()
            ))
        })
    }

    /// Backpropagates `grad_out` (the cotangent of the final activation)
    /// through the stack, returning per-layer parameter gradients. With
    /// `freeze_below = Some(k)` the walk stops before layer k−1, leaving
    /// every frozen layer's gradient `None`.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_out: &Tensor4,
        freeze_below: Option<usize>,
    ) -> Result<Vec<LayerGrads>> {
        let n_layers = self.arch.layers.len();
        if trace.activations.len() != n_layers {
            return Err(Error::Usage(format!(
                "trace has {} layers, network has {n_layers}",
                trace.activations.len()
            )));
        }
        if grad_out.shape() != trace.output().shape() {
            return Err(Error::Shape(format!(
                "grad_out {} does not match final activation {}",
                grad_out.shape(),
                trace.output().shape()
            )));
        }
        let fb = freeze_below.unwrap_or(0);
        let mut grads = vec![LayerGrads::None; n_layers];
        let mut grad = grad_out.clone();
        for i in (0..n_layers).rev() {
            if i < fb {
                break;
            }
            let input = if i == 0 {
                &trace.input
            } else {
                &trace.activations[i - 1]
            };
            match self.arch.layers[i] {
                LayerSpec::Conv { .. } => {
                    let (gx, gk, gb) = conv_backward(input, self.conv(i), &grad)?;
                    grads[i] = LayerGrads::Conv {
                        kernel: gk,
                        bias: gb,
                    };
                    grad = gx;
                }
                LayerSpec::Relu => {
                    let mask = trace.switches[i]
                        .relu_mask
                        .as_ref()
                        .ok_or_else(|| Error::Usage(format!("layer {i}: missing relu mask")))?;
                    grad = relu_backward(&grad, mask)?;
                }
                LayerSpec::MaxPool { .. } => {
                    let argmax = trace.switches[i]
                        .pool_argmax
                        .as_ref()
                        .ok_or_else(|| Error::Usage(format!("layer {i}: missing pool argmax")))?;
                    grad = maxpool_backward(&grad, argmax, input.shape())?;
                }
                LayerSpec::Fc { .. } => {
                    let (gx, gw, gb) = fc_backward(input, self.fc(i), &grad)?;
                    grads[i] = LayerGrads::Fc {
                        weight: gw,
                        bias: gb,
                    };
                    grad = gx;
                }
                LayerSpec::Dropout { rate } => {
                    if trace.mode == Mode::Train && rate > 0.0 {
                        let mask = trace.switches[i].dropout_mask.as_ref().ok_or_else(|| {
                            Error::Usage(format!("layer {i}: missing dropout mask"))
                        })?;
                        if mask.len() != grad.len() {
                            return Err(Error::Shape(format!(
                                "layer {i}: dropout mask length {} vs gradient {}",
                                mask.len(),
                                grad.len()
                            )));
                        }
                        let scale = 1.0 / (1.0 - rate);
                        let gd = grad.as_mut_slice();
                        for (v, &m) in gd.iter_mut().zip(mask) {
                            *v = if m { *v * scale } else { 0.0 };
                        }
                    }
                }
                LayerSpec::Softmax => {
                    grad = softmax_backward(&trace.activations[i], &grad)?;
                }
            }
        }
        Ok(grads)
    }

    /// Zero-valued gradient storage matching this network's parameters
    /// (used as the initial momentum velocity).
    pub fn zero_grads(&self) -> Result<Vec<LayerGrads>> {
        self.params
            .iter()
            .map(|p| {
                Ok(match p {
                    LayerParams::None => LayerGrads::None,
                    LayerParams::Conv(c) => LayerGrads::Conv {
                        kernel: Tensor4::zeros(c.kernel.shape())?,
                        bias: vec![0.0; c.bias.len()],
                    },
                    LayerParams::Fc(f) => LayerGrads::Fc {
                        weight: vec![0.0; f.weight.len()],
                        bias: vec![0.0; f.bias.len()],
                    },
                })
            })
            .collect()
    }

    /// Fresh random parameters for every layer at or above the split; the
    /// feature extractor below is untouched. Classifier sizes stay as
    /// declared in the architecture.
    pub fn reinit_classifier(&self, seed: u64) -> Result<Network> {
        self.reinit_classifier_with_classes(self.arch.class_count, seed)
    }

    /// Like [`Network::reinit_classifier`], but also swaps the final FC
    /// layer (and the architecture's class count) to a new number of
    /// classes, which transfer stages need when the target domain differs
    /// from the source.
    pub fn reinit_classifier_with_classes(&self, class_count: usize, seed: u64) -> Result<Network> {
        let mut arch = self.arch.clone();
        let last_fc = arch
            .last_fc_index()
            .ok_or_else(|| Error::Config("architecture has no fully-connected layer".into()))?;
        if let LayerSpec::Fc { out_units } = &mut arch.layers[last_fc] {
            *out_units = class_count;
        }
        arch.class_count = class_count;
        arch.validate()?;
        let chain = arch.shape_chain()?;
        let mut params = self.params.clone();
        for (i, spec) in arch.layers.iter().enumerate() {
            if i >= arch.split_index {
                let mut rng = stream(derive_seed(seed, &[tags::REINIT, i as u64]));
                params[i] = init_layer(spec, chain[i], &mut rng)?;
            }
        }
        Ok(Network {
            arch,
            params,
            rng_seed: self.rng_seed,
        })
    }

    /// Total number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.trainable_param_count(None)
    }

    /// Learnable scalars outside the frozen region.
    pub fn trainable_param_count(&self, freeze_below: Option<usize>) -> usize {
        let fb = freeze_below.unwrap_or(0);
        self.params
            .iter()
            .enumerate()
            .filter(|(i, _)| *i >= fb)
            .map(|(_, p)| match p {
                LayerParams::None => 0,
                LayerParams::Conv(c) => c.kernel.len() + c.bias.len(),
                LayerParams::Fc(f) => f.weight.len() + f.bias.len(),
            })
            .sum()
    }

    /// Bitwise equality of the feature extractors (layers below the split).
    pub fn features_equal(&self, other: &Network) -> bool {
        if self.arch.split_index != other.arch.split_index {
            return false;
        }
        (0..self.arch.split_index).all(|i| self.params[i] == other.params[i])
    }
}
