//! Orchestration of the compared learning processes: training from
//! scratch, single-stage feature transfer from either source domain,
//! two-stage transfer through both, and the two fine-tuning baselines.
//!
//! A process expands to an ordered stage plan. Stage one always trains a
//! fresh network at the full learning rate; every later stage carries the
//! feature extractor bit-exactly, swaps in a freshly initialized
//! classifier sized for the next domain, and continues at the reduced
//! rate. Fine-tuning differs from transfer only in freezing everything
//! below the split during the final stage. Completed non-final stages can
//! be cached and shared across processes whose plans begin identically.

use std::collections::HashMap;
use std::path::PathBuf;

use crate::checkpoint;
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::network::{ArchitectureSpec, LayerParams, LayerSpec, Network};
use crate::rng::{derive_seed, tags};
use crate::tensor::Tensor4;
use crate::training::{self, subsample, train, TrainConfig, TrainLog, STAGE_ONE_LR, TRANSFER_LR};

/// Which generated domain a stage trains on.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DatasetId {
    Natural,
    Texture,
    Target,
}

impl DatasetId {
    fn tag(self) -> u64 {
        match self {
            DatasetId::Natural => 0,
            DatasetId::Texture => 1,
            DatasetId::Target => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DatasetId::Natural => "natural",
            DatasetId::Texture => "texture",
            DatasetId::Target => "target",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum StageMode {
    Full,
    FrozenFeatures,
}

/// One step of a stage plan.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct Stage {
    pub dataset: DatasetId,
    pub mode: StageMode,
    pub learning_rate: f64,
    /// Replace the classifier with fresh weights before training.
    pub reinit_classifier: bool,
}

#[derive(Clone, PartialEq, Debug)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
}

/// The six compared learning processes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum ProcessKind {
    Scratch,
    SingleFromTexture,
    SingleFromNatural,
    TwoStage,
    FineTuneNatural,
    FineTuneTexture,
}

impl ProcessKind {
    pub const ALL: [ProcessKind; 6] = [
        ProcessKind::Scratch,
        ProcessKind::SingleFromTexture,
        ProcessKind::SingleFromNatural,
        ProcessKind::TwoStage,
        ProcessKind::FineTuneNatural,
        ProcessKind::FineTuneTexture,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ProcessKind::Scratch => "scratch",
            ProcessKind::SingleFromTexture => "single_from_texture",
            ProcessKind::SingleFromNatural => "single_from_natural",
            ProcessKind::TwoStage => "two_stage",
            ProcessKind::FineTuneNatural => "fine_tune_natural",
            ProcessKind::FineTuneTexture => "fine_tune_texture",
        }
    }

    pub fn from_label(s: &str) -> Option<ProcessKind> {
        ProcessKind::ALL.into_iter().find(|k| k.label() == s)
    }

    /// True for the baselines that freeze the feature extractor on the
    /// target stage instead of training it through.
    pub fn is_fine_tune(self) -> bool {
        matches!(self, ProcessKind::FineTuneNatural | ProcessKind::FineTuneTexture)
    }
}

/// Expands a process into its ordered stages with the fixed rate policy:
/// a randomly initialized stage trains at the full rate, every transferred
/// stage at the reduced one.
pub fn build_plan(kind: ProcessKind) -> StagePlan {
    let first = |dataset| Stage {
        dataset,
        mode: StageMode::Full,
        learning_rate: STAGE_ONE_LR,
        reinit_classifier: false,
    };
    let later = |dataset, mode| Stage {
        dataset,
        mode,
        learning_rate: TRANSFER_LR,
        reinit_classifier: true,
    };
    let stages = match kind {
        ProcessKind::Scratch => vec![first(DatasetId::Target)],
        ProcessKind::SingleFromTexture => vec![
            first(DatasetId::Texture),
            later(DatasetId::Target, StageMode::Full),
        ],
        ProcessKind::SingleFromNatural => vec![
            first(DatasetId::Natural),
            later(DatasetId::Target, StageMode::Full),
        ],
        ProcessKind::TwoStage => vec![
            first(DatasetId::Natural),
            later(DatasetId::Texture, StageMode::Full),
            later(DatasetId::Target, StageMode::Full),
        ],
        ProcessKind::FineTuneNatural => vec![
            first(DatasetId::Natural),
            later(DatasetId::Target, StageMode::FrozenFeatures),
        ],
        ProcessKind::FineTuneTexture => vec![
            first(DatasetId::Texture),
            later(DatasetId::Target, StageMode::FrozenFeatures),
        ],
    };
    StagePlan { stages }
}

/// The domains a process may draw on. Source domains are optional so a
/// scratch-only run does not have to generate them.
pub struct TransferDatasets<'a> {
    pub natural: Option<&'a Domain>,
    pub texture: Option<&'a Domain>,
    pub target: &'a Domain,
}

impl<'a> TransferDatasets<'a> {
    fn get(&self, id: DatasetId) -> Result<&'a Domain> {
        match id {
            DatasetId::Natural => self.natural,
            DatasetId::Texture => self.texture,
            DatasetId::Target => Some(self.target),
        }
        .ok_or_else(|| Error::Config(format!("process requires the {} dataset", id.label())))
    }
}

/// Knobs shared by every stage of a process run. Per-stage learning rates
/// come from the plan, not from here.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessOptions {
    pub momentum: f64,
    pub batch_size: usize,
    pub plateau_window: usize,
    pub plateau_epsilon: f64,
    /// Epoch cap for source-domain stages.
    pub source_max_epochs: usize,
    /// Epoch cap for the final target stage.
    pub target_max_epochs: usize,
    /// Carry the classifier into later stages instead of reinitializing
    /// it (requires matching class counts across the stage boundary).
    pub reuse_classifier: bool,
    /// Freeze boundary for fine-tuning stages; defaults to the
    /// architecture's split index.
    pub fine_tune_boundary: Option<usize>,
    /// When set, every finished stage is checkpointed here as
    /// `{process}_{stage}_{seed}.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for ProcessOptions {
    fn default() -> Self {
        ProcessOptions {
            momentum: 0.9,
            batch_size: 32,
            plateau_window: 10,
            plateau_epsilon: 1e-3,
            source_max_epochs: 200,
            target_max_epochs: 200,
            reuse_classifier: false,
            fine_tune_boundary: None,
            checkpoint_dir: None,
        }
    }
}

/// History and carry digests of one executed stage. The digests are
/// CRC32s of the exact parameter bytes, so equality means bit-identical
/// parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub log: TrainLog,
    pub features_in: u32,
    pub features_out: u32,
    pub classifier_in: u32,
    pub classifier_out: u32,
}

#[derive(Debug)]
pub struct ProcessOutcome {
    pub network: Network,
    pub stages: Vec<StageRecord>,
}

/// A process run that aborted mid-stage; carries every completed stage
/// record plus the partial log of the failing stage.
#[derive(Debug)]
pub struct ProcessError {
    pub kind: ProcessKind,
    pub stage: usize,
    pub completed: Vec<StageRecord>,
    pub partial_log: Option<TrainLog>,
    pub error: Error,
}

impl std::fmt::Display for ProcessError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "process {} failed in stage {}: {}",
            self.kind.label(),
            self.stage + 1,
            self.error
        )
    }
}

impl std::error::Error for ProcessError {}

impl From<ProcessError> for Error {
    fn from(pe: ProcessError) -> Error {
        Error::Process(pe.to_string())
    }
}

/// Reusable store for completed non-final stages, keyed by everything
/// that determines their result (seed, architecture, domain specs, and
/// the stage descriptor chain). Two processes whose plans begin with the
/// same stages share the cached network bit-for-bit.
#[derive(Default)]
pub struct StageCache {
    entries: HashMap<String, (Network, StageRecord)>,
}

impl StageCache {
    pub fn new() -> Self {
        StageCache::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn digest_params(net: &Network, range: std::ops::Range<usize>) -> u32 {
    let mut hasher = crc32fast::Hasher::new();
    for i in range {
        match net.layer_params(i) {
            LayerParams::None => {}
            LayerParams::Conv(c) => {
                for v in c.kernel.as_slice().iter().chain(&c.bias) {
                    hasher.update(&v.to_le_bytes());
                }
            }
            LayerParams::Fc(p) => {
                for v in p.weight.iter().chain(&p.bias) {
                    hasher.update(&v.to_le_bytes());
                }
            }
        }
    }
    hasher.finalize()
}

/// Digest of the feature-extractor parameters (layers below the split).
pub fn feature_digest(net: &Network) -> u32 {
    digest_params(net, 0..net.arch().split_index)
}

/// Digest of the classifier parameters (layers at or above the split).
pub fn classifier_digest(net: &Network) -> u32 {
    digest_params(net, net.arch().split_index..net.arch().layers.len())
}

/// Clone of `arch` with its final fully-connected layer resized to
/// `classes` outputs.
fn arch_with_classes(arch: &ArchitectureSpec, classes: usize) -> Result<ArchitectureSpec> {
    let mut out = arch.clone();
    let last = out
        .last_fc_index()
        .ok_or_else(|| Error::Config("architecture has no fully-connected layer".into()))?;
    if let LayerSpec::Fc { out_units } = &mut out.layers[last] {
        *out_units = classes;
    }
    out.class_count = classes;
    out.validate()?;
    Ok(out)
}

fn stage_descriptor(stage: &Stage, opts: &ProcessOptions, max_epochs: usize) -> String {
    format!(
        "{}:{}:lr{:?}:ri{}:me{}:bs{}:pw{}:pe{:?}:mo{:?}",
        stage.dataset.label(),
        match stage.mode {
            StageMode::Full => "full",
            StageMode::FrozenFeatures => "frozen",
        },
        stage.learning_rate,
        u8::from(stage.reinit_classifier && !opts.reuse_classifier),
        max_epochs,
        opts.batch_size,
        opts.plateau_window,
        opts.plateau_epsilon,
        opts.momentum,
    )
}

/// Executes every stage of `kind`'s plan in order and returns the final
/// network plus per-stage records. `r` subsamples the target training
/// split per class; source stages always see their full sets.
pub fn run_process(
    kind: ProcessKind,
    datasets: &TransferDatasets,
    arch: &ArchitectureSpec,
    seed: u64,
    r: f64,
    opts: &ProcessOptions,
    cache: &mut StageCache,
) -> std::result::Result<ProcessOutcome, ProcessError> {
    let plan = build_plan(kind);
    let mut records: Vec<StageRecord> = Vec::with_capacity(plan.stages.len());
    let mut net: Option<Network> = None;

    let fail = |records: &[StageRecord], stage: usize, partial: Option<TrainLog>, error: Error| {
        ProcessError {
            kind,
            stage,
            completed: records.to_vec(),
            partial_log: partial,
            error,
        }
    };

    // Cache keys accumulate the descriptor chain of all stages so far, so
    // a hit is only possible when the entire training history matches.
    let arch_digest = {
        let mut h = crc32fast::Hasher::new();
        h.update(
            serde_json::to_string(arch)
                .map_err(|e| fail(&records, 0, None, Error::Config(e.to_string())))?
                .as_bytes(),
        );
        h.finalize()
    };
    let mut chain = format!("seed{seed}:arch{arch_digest:08x}");

    for (i, stage) in plan.stages.iter().enumerate() {
        let is_last = i + 1 == plan.stages.len();
        let domain = datasets
            .get(stage.dataset)
            .map_err(|e| fail(&records, i, None, e))?;
        let max_epochs = if stage.dataset == DatasetId::Target {
            opts.target_max_epochs
        } else {
            opts.source_max_epochs
        };
        chain.push('|');
        chain.push_str(&stage_descriptor(stage, opts, max_epochs));
        {
            let mut h = crc32fast::Hasher::new();
            h.update(
                serde_json::to_string(&domain.spec)
                    .map_err(|e| fail(&records, i, None, Error::Config(e.to_string())))?
                    .as_bytes(),
            );
            chain.push_str(&format!(":dom{:08x}", h.finalize()));
        }

        if !is_last {
            if let Some((cached_net, record)) = cache.entries.get(&chain) {
                net = Some(cached_net.clone());
                records.push(record.clone());
                if let Some(dir) = &opts.checkpoint_dir {
                    let path = dir.join(format!("{}_{}_{}.ckpt", kind.label(), i + 1, seed));
                    checkpoint::save(cached_net, &path)
                        .map_err(|e| fail(&records, i, None, e))?;
                }
                continue;
            }
        }

        let stage_seed = derive_seed(seed, &[tags::STAGE, stage.dataset.tag()]);
        let classes = domain.spec.class_count;
        let mut current = match net.take() {
            None => {
                let stage_arch = arch_with_classes(arch, classes)
                    .map_err(|e| fail(&records, i, None, e))?;
                Network::init_random(stage_arch, seed).map_err(|e| fail(&records, i, None, e))?
            }
            Some(prev) => {
                if stage.reinit_classifier && !opts.reuse_classifier {
                    prev.reinit_classifier_with_classes(classes, stage_seed)
                        .map_err(|e| fail(&records, i, None, e))?
                } else {
                    if prev.arch().class_count != classes {
                        return Err(fail(
                            &records,
                            i,
                            None,
                            Error::Config(format!(
                                "cannot reuse a {}-class classifier on a {classes}-class domain",
                                prev.arch().class_count
                            )),
                        ));
                    }
                    prev
                }
            }
        };

        let features_in = feature_digest(&current);
        let classifier_in = classifier_digest(&current);

        let train_set_owned;
        let train_set = if stage.dataset == DatasetId::Target && r < 1.0 {
            train_set_owned =
                subsample(&domain.train, r, seed).map_err(|e| fail(&records, i, None, e))?;
            &train_set_owned
        } else {
            &domain.train
        };

        let cfg = TrainConfig {
            learning_rate: stage.learning_rate,
            momentum: opts.momentum,
            batch_size: opts.batch_size,
            plateau_window: opts.plateau_window,
            plateau_epsilon: opts.plateau_epsilon,
            max_epochs,
            seed: stage_seed,
        };
        let freeze = match stage.mode {
            StageMode::Full => None,
            StageMode::FrozenFeatures => {
                Some(opts.fine_tune_boundary.unwrap_or(current.arch().split_index))
            }
        };

        let log = train(&mut current, train_set, &domain.eval, &cfg, freeze)
            .map_err(|tf| fail(&records, i, Some(tf.log), tf.error))?;

        let record = StageRecord {
            log,
            features_in,
            features_out: feature_digest(&current),
            classifier_in,
            classifier_out: classifier_digest(&current),
        };
        if !is_last {
            cache
                .entries
                .insert(chain.clone(), (current.clone(), record.clone()));
        }
        if let Some(dir) = &opts.checkpoint_dir {
            let path = dir.join(format!("{}_{}_{}.ckpt", kind.label(), i + 1, seed));
            checkpoint::save(&current, &path).map_err(|e| fail(&records, i, None, e))?;
        }
        records.push(record);
        net = Some(current);
    }

    Ok(ProcessOutcome {
        network: net.expect("every plan has at least one stage"),
        stages: records,
    })
}

/// Replicates a single-channel batch across `channels` identical input
/// channels, for carrying grayscale data into a multi-channel
/// architecture. Not applied anywhere by default.
pub fn replicate_channels(x: &Tensor4, channels: usize) -> Result<Tensor4> {
    let s = x.shape();
    if s.c != 1 {
        return Err(Error::Shape(format!(
            "channel replication expects single-channel input, got {s}"
        )));
    }
    if channels == 0 {
        return Err(Error::Usage("cannot replicate to zero channels".into()));
    }
    let mut out = Tensor4::zeros(crate::tensor::Shape4::new(s.n, channels, s.h, s.w))?;
    let plane = s.h * s.w;
    for n in 0..s.n {
        let src = &x.as_slice()[n * plane..(n + 1) * plane];
        for c in 0..channels {
            let base = (n * channels + c) * plane;
            out.as_mut_slice()[base..base + plane].copy_from_slice(src);
        }
    }
    Ok(out)
}

// Re-exported so orchestration callers can name the failure type without
// importing the training module.
pub use training::TrainFailure;
