//! Forward and backward passes for the layer kinds the network stacks,
//! plus the switch records the backward visualization path consumes.

mod activation;
mod conv;
mod dropout;
mod fc;
mod pool;
mod softmax;

pub use activation::{relu_backward, relu_forward};
pub use conv::{conv_backward, conv_forward, conv_input_grad, ConvParams};
pub use dropout::dropout_forward;
pub use fc::{fc_backward, fc_forward, fc_input_grad, FcParams};
pub use pool::{maxpool_backward, maxpool_forward, PoolParams};
pub use softmax::{softmax_backward, softmax_cross_entropy, softmax_forward};

use serde::{Deserialize, Serialize};

/// The layer vocabulary. The backward visualization path treats only
/// `Convolution`, `MaxPool`, `ReLU`, and `FullyConnected` as non-identity;
/// `Dropout` and `Softmax` backproject as identity maps.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum LayerKind {
    Convolution,
    ReLU,
    MaxPool,
    FullyConnected,
    Dropout,
    Softmax,
}

/// Switch records captured by one forward pass through one layer.
///
/// `pool_argmax` holds, per pooled output position in flat output order, the
/// flat coordinate of the winning input element (ties go to the lowest flat
/// index). `relu_mask` marks strictly positive pre-activations — a value of
/// exactly zero is recorded as `false`. `dropout_mask` is the keep mask of
/// the last training-mode pass. A layer populates only the fields it
/// produces.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Switches {
    pub pool_argmax: Option<Vec<usize>>,
    pub relu_mask: Option<Vec<bool>>,
    pub dropout_mask: Option<Vec<bool>>,
}

impl Switches {
    pub fn none() -> Self {
        Switches::default()
    }
}

/// Output extent of a sliding window: `floor((input + 2·pad − window)/stride) + 1`,
/// or `None` when the window does not fit in the padded input.
pub(crate) fn out_extent(input: usize, pad: usize, window: usize, stride: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < window {
        return None;
    }
    Some((padded - window) / stride + 1)
}
