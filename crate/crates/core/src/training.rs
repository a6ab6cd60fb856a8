//! Momentum SGD with cross-entropy loss, plateau-based stopping, and
//! per-class training-fraction subsampling.
//!
//! The optimizer is classical heavy-ball SGD: `v' = momentum·v − lr·g`,
//! `p' = p + v'`. An epoch is one pass over seeded-shuffled minibatches;
//! training stops once the best training loss has gone `plateau_window`
//! consecutive epochs without a relative improvement of at least
//! `plateau_epsilon`, or at `max_epochs`. The returned parameters are the
//! snapshot from the best-validation-loss epoch, not the final one.
//! Everything is bit-reproducible for a fixed config seed.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::PatchSet;
use crate::error::{Error, Result};
use crate::layers::softmax_cross_entropy;
use crate::metrics::{evaluate_with_loss, summarize};
use crate::network::{LayerGrads, LayerParams, Mode, Network};
use crate::rng::{derive_seed, stream, tags};
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Epochs the best training loss may stand unimproved before stopping.
    pub plateau_window: usize,
    /// Minimum relative improvement that counts as progress.
    pub plateau_epsilon: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

/// Learning rate for a first (randomly initialized) stage.
pub const STAGE_ONE_LR: f64 = 0.05;
/// Learning rate for every stage that starts from transferred features.
pub const TRANSFER_LR: f64 = 0.0005;

impl TrainConfig {
    /// Defaults for a stage trained from random initialization.
    pub fn stage_one(seed: u64) -> Self {
        TrainConfig {
            learning_rate: STAGE_ONE_LR,
            momentum: 0.9,
            batch_size: 32,
            plateau_window: 10,
            plateau_epsilon: 1e-3,
            max_epochs: 200,
            seed,
        }
    }

    /// Defaults for a stage that continues from transferred features.
    pub fn transferred(seed: u64) -> Self {
        TrainConfig {
            learning_rate: TRANSFER_LR,
            ..TrainConfig::stage_one(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.plateau_window < 2 {
            return Err(Error::Config("plateau window must be at least 2 epochs".into()));
        }
        if !(self.plateau_epsilon >= 0.0 && self.plateau_epsilon < 1.0) {
            return Err(Error::Config(format!(
                "plateau epsilon must lie in [0, 1), got {}",
                self.plateau_epsilon
            )));
        }
        if self.max_epochs < self.plateau_window {
            return Err(Error::Config(format!(
                "max_epochs {} is below the plateau window {}",
                self.max_epochs, self.plateau_window
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Plateau,
    MaxEpochs,
    Diverged,
}

/// Per-epoch history of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    /// Epoch whose validation loss selected the returned parameters.
    pub best_epoch: usize,
}

/// A training run that aborted, carrying the history up to the failure.
#[derive(Debug)]
pub struct TrainFailure {
    pub log: TrainLog,
    pub error: Error,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training aborted after {} epochs: {}", self.log.epochs_run, self.error)
    }
}

impl std::error::Error for TrainFailure {}

impl From<TrainFailure> for Error {
    fn from(tf: TrainFailure) -> Error {
        tf.error
    }
}

/// The single-parameter momentum recurrence; `sgd_step` applies exactly
/// this kernel to every parameter.
pub fn momentum_update(param: &mut f64, velocity: &mut f64, grad: f64, lr: f64, momentum: f64) {
    *velocity = momentum * *velocity - lr * grad;
    *param += *velocity;
}

fn apply_updates(params: &mut [f64], velocity: &mut [f64], grads: &[f64], lr: f64, momentum: f64) {
    for ((p, v), &g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        momentum_update(p, v, g, lr, momentum);
    }
}

/// One optimizer step on one minibatch. Returns the batch's mean loss.
/// Layers below `freeze_below` receive neither gradients nor updates.
pub fn sgd_step(
    net: &mut Network,
    batch: &Tensor4,
    labels: &[usize],
    config: &TrainConfig,
    velocity: &mut [LayerGrads],
    dropout_rng: &mut rand_chacha::ChaCha8Rng,
    freeze_below: Option<usize>,
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Usage("cannot step on an empty batch".into()));
    }
    let trace = net.forward(batch, Mode::Train, Some(dropout_rng))?;
    let (loss, grad) = softmax_cross_entropy(trace.output(), labels)?;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite batch loss {loss} (labels {labels:?})"
        )));
    }
    let grads = net.backward(&trace, &grad, freeze_below)?;
    for (i, g) in grads.iter().enumerate() {
        match (net.layer_params_mut(i), &mut velocity[i], g) {
            (LayerParams::None, _, LayerGrads::None) => {}
            (LayerParams::Conv(p), LayerGrads::Conv { kernel: vk, bias: vb }, LayerGrads::Conv { kernel: gk, bias: gb }) => {
                apply_updates(
                    p.kernel.as_mut_slice(),
                    vk.as_mut_slice(),
                    gk.as_slice(),
                    config.learning_rate,
                    config.momentum,
                );
                apply_updates(&mut p.bias, vb, gb, config.learning_rate, config.momentum);
            }
            (LayerParams::Fc(p), LayerGrads::Fc { weight: vw, bias: vb }, LayerGrads::Fc { weight: gw, bias: gb }) => {
                apply_updates(&mut p.weight, vw, gw, config.learning_rate, config.momentum);
                apply_updates(&mut p.bias, vb, gb, config.learning_rate, config.momentum);
            }
            // Frozen parametric layers come back as LayerGrads::None and
            // keep both their parameters and their velocity untouched.
            (_, _, LayerGrads::None) => {}
            _ => {
                return Err(Error::Usage(format!(
                    "layer {i}: gradient kind does not match parameter kind"
                )))
            }
        }
    }
    Ok(loss)
}

/// Trains until plateau or the epoch cap, then restores the parameters
/// from the epoch with the lowest validation loss.
pub fn train(
    net: &mut Network,
    train_set: &PatchSet,
    val_set: &PatchSet,
    config: &TrainConfig,
    freeze_below: Option<usize>,
) -> std::result::Result<TrainLog, TrainFailure> {
    let mut log = TrainLog {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        val_accuracy: Vec::new(),
        epochs_run: 0,
        stop_reason: StopReason::MaxEpochs,
        best_epoch: 0,
    };
    let fail = |log: &TrainLog, error: Error| TrainFailure {
        log: TrainLog {
            stop_reason: StopReason::Diverged,
            ..log.clone()
        },
        error,
    };
    if let Err(e) = config.validate() {
        return Err(fail(&log, e));
    }
    if train_set.examples.is_empty() || val_set.examples.is_empty() {
        return Err(fail(&log, Error::Data("training and validation sets must be nonempty".into())));
    }
    let mut velocity = match net.zero_grads() {
        Ok(v) => v,
        Err(e) => return Err(fail(&log, e)),
    };
    let mut best_train = f64::INFINITY;
    let mut stale_epochs = 0usize;
    let mut best_val = f64::INFINITY;
    let mut best_params: Option<Network> = None;

    for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..train_set.examples.len()).collect();
        let mut shuffle_rng = stream(derive_seed(config.seed, &[tags::SHUFFLE, epoch as u64]));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let (batch, labels) = match train_set.batch(chunk) {
                Ok(b) => b,
                Err(e) => return Err(fail(&log, e)),
            };
            let mut dropout_rng = stream(derive_seed(
                config.seed,
                &[tags::DROPOUT, epoch as u64, step as u64],
            ));
            match sgd_step(net, &batch, &labels, config, &mut velocity, &mut dropout_rng, freeze_below) {
                Ok(loss) => loss_sum += loss * labels.len() as f64,
                Err(e) => return Err(fail(&log, e)),
            }
        }
        let train_loss = loss_sum / train_set.examples.len() as f64;

        let (val_loss, val_acc) = match evaluate_with_loss(net, val_set)
            .and_then(|(cm, loss)| Ok((loss, summarize(&cm)?.accuracy)))
        {
            Ok(v) => v,
            Err(e) => return Err(fail(&log, e)),
        };
        if !val_loss.is_finite() {
            return Err(fail(&log, Error::Divergence(format!(
                "non-finite validation loss {val_loss} at epoch {epoch}"
            ))));
        }

        log.train_loss.push(train_loss);
        log.val_loss.push(val_loss);
        log.val_accuracy.push(val_acc);
        log.epochs_run = epoch + 1;

        if val_loss < best_val {
            best_val = val_loss;
            log.best_epoch = epoch;
            best_params = Some(net.clone());
        }

        if train_loss < best_train * (1.0 - config.plateau_epsilon) {
            best_train = train_loss;
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.plateau_window {
                log.stop_reason = StopReason::Plateau;
                break;
            }
        }
    }

    if let Some(best) = best_params {
        *net = best;
    }
    Ok(log)
}

/// Per-class subsampling by the fraction `r`, keeping `round(r·count)`
/// examples of each class (at least one) chosen by a seeded shuffle. The
/// surviving examples keep their original relative order, and `r = 1`
/// returns the set unchanged.
pub fn subsample(set: &PatchSet, r: f64, seed: u64) -> Result<PatchSet> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Usage(format!("subsample fraction must lie in (0, 1], got {r}")));
    }
    if r == 1.0 {
        return Ok(set.clone());
    }
    let counts = set.class_counts();
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("class {empty} has no examples to subsample")));
    }
    let mut keep: Vec<usize> = Vec::new();
    for class in 0..set.class_count {
        let mut members: Vec<usize> = set
            .examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == class)
            .map(|(i, _)| i)
            .collect();
        let want = ((r * members.len() as f64).round() as usize).max(1);
        let mut rng = stream(derive_seed(seed, &[tags::SUBSAMPLE, class as u64]));
        members.shuffle(&mut rng);
        keep.extend(members.into_iter().take(want));
    }
    keep.sort_unstable();
    Ok(PatchSet {
        examples: keep.iter().map(|&i| set.examples[i].clone()).collect(),
        split: set.split,
        class_count: set.class_count,
    })
}
