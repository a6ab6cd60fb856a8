//! Procedural multi-domain image data, bicubic magnification, and image
//! I/O.
//!
//! Three generated domains stand in for large photographic, texture, and
//! medical-texture datasets: `NaturalLike` (edge-dominated shape
//! compositions), `Textural` (stationary texture fields), and `Target`
//! (seven texture classes with within-class jitter). Examples are
//! deterministic per (spec, seed, class, split, index), which makes the
//! train/eval splits disjoint by construction.

pub mod bicubic;
mod generate;
mod pgm;

pub use bicubic::{bicubic_resize, bicubic_resize_unclamped};
pub use generate::{generate_domain, DomainKind, DomainSpec};
pub use pgm::{load_image, save_image};

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Which half of a domain an example belongs to.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub(crate) fn id(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Eval => 1,
        }
    }

    fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

/// One labeled single-channel image, values in [0, 1], shape `(1, 1, h, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub image: Tensor4,
    pub label: usize,
}

/// A labeled split of one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub examples: Vec<Example>,
    pub split: Split,
    pub class_count: usize,
}

impl PatchSet {
    /// Examples per class, indexed by label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }

    /// Stacks the selected examples into one batch tensor plus the matching
    /// label vector. All images must share a single-image shape.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor4, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::Usage("cannot build an empty batch".into()));
        }
        let first = self
            .examples
            .get(indices[0])
            .ok_or_else(|| Error::Usage(format!("example index {} out of range", indices[0])))?;
        let s = first.image.shape();
        let mut out = Tensor4::zeros(Shape4::new(indices.len(), s.c, s.h, s.w))?;
        let plane = s.c * s.h * s.w;
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            let e = self
                .examples
                .get(i)
                .ok_or_else(|| Error::Usage(format!("example index {i} out of range")))?;
            if e.image.shape() != s {
                return Err(Error::Shape(format!(
                    "mixed image shapes in batch: {} vs {}",
                    e.image.shape(),
                    s
                )));
            }
            out.as_mut_slice()[row * plane..(row + 1) * plane]
                .copy_from_slice(e.image.as_slice());
            labels.push(e.label);
        }
        Ok((out, labels))
    }
}

/// A fully generated domain: its spec plus both splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub spec: DomainSpec,
    pub train: PatchSet,
    pub eval: PatchSet,
}

/// Mean absolute finite-difference gradient per pixel, averaged over the
/// whole set; the statistic that separates edge-dominated from textural
/// imagery.
pub fn mean_gradient_magnitude(set: &PatchSet) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for e in &set.examples {
        let s = e.image.shape();
        let px = e.image.as_slice();
        for y in 0..s.h {
            for x in 0..s.w {
                let v = px[y * s.w + x];
                if x + 1 < s.w {
                    total += (px[y * s.w + x + 1] - v).abs();
                    count += 1;
                }
                if y + 1 < s.h {
                    total += (px[(y + 1) * s.w + x] - v).abs();
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Accuracy of a pixel-space nearest-centroid classifier fit on `train`
/// and scored on `eval`; a floor/ceiling sanity probe for generated
/// domains.
pub fn nearest_centroid_accuracy(train: &PatchSet, eval: &PatchSet) -> Result<f64> {
    if train.examples.is_empty() || eval.examples.is_empty() {
        return Err(Error::Data("nearest-centroid probe needs nonempty splits".into()));
    }
    let dim = train.examples[0].image.len();
    let classes = train.class_count;
    let mut centroids = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for e in &train.examples {
        counts[e.label] += 1;
        for (c, v) in centroids[e.label].iter_mut().zip(e.image.as_slice()) {
            *c += v;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        if n == 0 {
            return Err(Error::Data("a class has no training examples".into()));
        }
        for v in c.iter_mut() {
            *v /= n as f64;
        }
    }
    let mut hits = 0usize;
    for e in &eval.examples {
        let mut best = f64::INFINITY;
        let mut best_class = 0;
        for (k, c) in centroids.iter().enumerate() {
            let mut d = 0.0;
            for (a, b) in e.image.as_slice().iter().zip(c) {
                d += (a - b) * (a - b);
            }
            if d < best {
                best = d;
                best_class = k;
            }
        }
        if best_class == e.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / eval.examples.len() as f64)
}

/// True when no image appears in both splits (compared bytewise).
pub fn splits_disjoint(domain: &Domain) -> bool {
    let key = |t: &Tensor4| -> Vec<u8> {
        t.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect()
    };
    let train: HashSet<Vec<u8>> = domain.train.examples.iter().map(|e| key(&e.image)).collect();
    domain
        .eval
        .examples
        .iter()
        .all(|e| !train.contains(&key(&e.image)))
}

/// One line of a dataset manifest.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
    pub split: Split,
}

/// On-disk description of a materialized domain.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub spec: DomainSpec,
    pub entries: Vec<ManifestEntry>,
}

/// Writes every example as an 8-bit PGM under
/// `dir/class{label}/{split}/{index}.pgm` plus a `manifest.json`; returns
/// the manifest path.
pub fn save_domain(domain: &Domain, dir: &Path) -> Result<PathBuf> {
    let mut entries = Vec::new();
    for set in [&domain.train, &domain.eval] {
        let mut per_class = vec![0usize; set.class_count];
        for e in &set.examples {
            let idx = per_class[e.label];
            per_class[e.label] += 1;
            let rel = format!(
                "class{}/{}/{idx:05}.pgm",
                e.label,
                set.split.dir_name()
            );
            let path = dir.join(&rel);
            fs::create_dir_all(path.parent().expect("file path has a parent"))?;
            save_image(&e.image, &path)?;
            entries.push(ManifestEntry {
                path: rel,
                label: e.label,
                split: set.split,
            });
        }
    }
    let manifest = Manifest {
        spec: domain.spec.clone(),
        entries,
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
    fs::write(&manifest_path, json)?;
    Ok(manifest_path)
}

/// Reads a domain materialized by [`save_domain`]. Images come back 8-bit
/// quantized.
pub fn load_domain(manifest_path: &Path) -> Result<Domain> {
    let json = fs::read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&json)
        .map_err(|e| Error::Data(format!("manifest {}: {e}", manifest_path.display())))?;
    let dir = manifest_path
        .parent()
        .ok_or_else(|| Error::Usage("manifest path has no parent directory".into()))?;
    let classes = manifest.spec.class_count;
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for entry in &manifest.entries {
        if entry.label >= classes {
            return Err(Error::Data(format!(
                "manifest label {} out of range for {classes} classes",
                entry.label
            )));
        }
        let image = load_image(&dir.join(&entry.path))?;
        let ex = Example {
            image,
            label: entry.label,
        };
        match entry.split {
            Split::Train => train.push(ex),
            Split::Eval => eval.push(ex),
        }
    }
    Ok(Domain {
        spec: manifest.spec,
        train: PatchSet {
            examples: train,
            split: Split::Train,
            class_count: classes,
        },
        eval: PatchSet {
            examples: eval,
            split: Split::Eval,
            class_count: classes,
        },
    })
}
