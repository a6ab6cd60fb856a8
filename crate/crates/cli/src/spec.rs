//! The experiment spec: one JSON file describing the whole grid — domains,
//! architecture, processes, seeds, training-fraction values, and training
//! overrides. Everything a run touches hangs off this file, so its hash
//! identifies the experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use stlb_core::data::DomainSpec;
use stlb_core::network::ArchitectureSpec;
use stlb_core::transfer::{build_plan, DatasetId, ProcessKind, ProcessOptions};
use stlb_core::{Error, Result};

/// Architecture selection: the built-in desk-scale topology, or a spelled
/// out custom stack.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchChoice {
    MiniAlex,
    Custom(ArchitectureSpec),
}

/// The three domain slots. Source slots may stay empty when no configured
/// process needs them.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct DomainSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub natural: Option<DomainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture: Option<DomainSpec>,
    pub target: DomainSpec,
}

fn default_momentum() -> f64 {
    ProcessOptions::default().momentum
}
fn default_batch_size() -> usize {
    ProcessOptions::default().batch_size
}
fn default_plateau_window() -> usize {
    ProcessOptions::default().plateau_window
}
fn default_plateau_epsilon() -> f64 {
    ProcessOptions::default().plateau_epsilon
}
fn default_source_max_epochs() -> usize {
    ProcessOptions::default().source_max_epochs
}
fn default_target_max_epochs() -> usize {
    ProcessOptions::default().target_max_epochs
}

/// Optional knobs over the fixed process policy; anything omitted in the
/// JSON keeps the library default.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct TrainOverrides {
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_plateau_window")]
    pub plateau_window: usize,
    #[serde(default = "default_plateau_epsilon")]
    pub plateau_epsilon: f64,
    #[serde(default = "default_source_max_epochs")]
    pub source_max_epochs: usize,
    #[serde(default = "default_target_max_epochs")]
    pub target_max_epochs: usize,
}

impl Default for TrainOverrides {
    fn default() -> Self {
        TrainOverrides {
            momentum: default_momentum(),
            batch_size: default_batch_size(),
            plateau_window: default_plateau_window(),
            plateau_epsilon: default_plateau_epsilon(),
            source_max_epochs: default_source_max_epochs(),
            target_max_epochs: default_target_max_epochs(),
        }
    }
}

impl TrainOverrides {
    pub fn to_options(&self) -> ProcessOptions {
        ProcessOptions {
            momentum: self.momentum,
            batch_size: self.batch_size,
            plateau_window: self.plateau_window,
            plateau_epsilon: self.plateau_epsilon,
            source_max_epochs: self.source_max_epochs,
            target_max_epochs: self.target_max_epochs,
            ..ProcessOptions::default()
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub arch: ArchChoice,
    pub domains: DomainSet,
    /// Process labels, e.g. "scratch" or "two_stage".
    pub processes: Vec<String>,
    pub seeds: Vec<u64>,
    /// Training-set fractions; each cell subsamples the target train split
    /// to this fraction before its final stage.
    pub r_grid: Vec<f64>,
    #[serde(default)]
    pub train: TrainOverrides,
    pub output_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn from_file(path: &Path) -> Result<ExperimentSpec> {
        let json = std::fs::read_to_string(path)?;
        let spec: ExperimentSpec = serde_json::from_str(&json)
            .map_err(|e| Error::Config(format!("spec {}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn arch_spec(&self) -> ArchitectureSpec {
        match &self.arch {
            ArchChoice::MiniAlex => {
                ArchitectureSpec::mini_alex(self.domains.target.class_count)
            }
            ArchChoice::Custom(a) => a.clone(),
        }
    }

    /// Parsed process list in spec order.
    pub fn process_kinds(&self) -> Result<Vec<ProcessKind>> {
        self.processes
            .iter()
            .map(|label| {
                ProcessKind::from_label(label).ok_or_else(|| {
                    let known: Vec<&str> = ProcessKind::ALL.iter().map(|k| k.label()).collect();
                    Error::Config(format!(
                        "unknown process \"{label}\"; known: {}",
                        known.join(", ")
                    ))
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let arch = self.arch_spec();
        arch.validate()?;
        let kinds = self.process_kinds()?;
        if kinds.is_empty() {
            return Err(Error::Config("spec lists no processes".into()));
        }
        for (i, k) in kinds.iter().enumerate() {
            if kinds[..i].contains(k) {
                return Err(Error::Config(format!(
                    "process \"{}\" listed twice",
                    k.label()
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("spec lists no seeds".into()));
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return Err(Error::Config(format!("seed {s} listed twice")));
            }
        }
        if self.r_grid.is_empty() {
            return Err(Error::Config("spec lists no r values".into()));
        }
        for &r in &self.r_grid {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config(format!(
                    "training fraction {r} outside (0, 1]"
                )));
            }
        }
        // Every process's plan must find its datasets, and every referenced
        // domain must feed the architecture's input size.
        let input = arch.input_shape;
        let check_domain = |id: DatasetId, spec: Option<&DomainSpec>| -> Result<()> {
            let spec = spec.ok_or_else(|| {
                Error::Config(format!(
                    "a configured process needs the {} domain, but the spec does not define it",
                    id.label()
                ))
            })?;
            spec.validate()?;
            if spec.image_size != input.h || spec.image_size != input.w {
                return Err(Error::Config(format!(
                    "{} domain renders {}x{} images but the architecture expects {}x{}",
                    id.label(),
                    spec.image_size,
                    spec.image_size,
                    input.h,
                    input.w
                )));
            }
            Ok(())
        };
        check_domain(DatasetId::Target, Some(&self.domains.target))?;
        for kind in &kinds {
            for stage in &build_plan(*kind).stages {
                match stage.dataset {
                    DatasetId::Natural => {
                        check_domain(DatasetId::Natural, self.domains.natural.as_ref())?
                    }
                    DatasetId::Texture => {
                        check_domain(DatasetId::Texture, self.domains.texture.as_ref())?
                    }
                    DatasetId::Target => {}
                }
            }
        }
        self.train.to_options();
        Ok(())
    }

    /// Hash identifying the experiment content. The output directory is
    /// excluded: moving results elsewhere is still the same experiment.
    pub fn config_hash(&self) -> String {
        let mut scrubbed = self.clone();
        scrubbed.output_dir = PathBuf::new();
        let json = serde_json::to_string(&scrubbed).expect("spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut hex = String::with_capacity(16);
        for b in &digest[..8] {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }

    /// Directory that holds a domain's rendered images and manifest.
    pub fn domain_dir(&self, id: DatasetId) -> PathBuf {
        self.output_dir.join("data").join(id.label())
    }
}
