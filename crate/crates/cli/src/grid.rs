//! Data generation and the experiment grid: every (process, seed, r) cell
//! trains through `run_process`, evaluates on the fixed target eval split,
//! and lands as one CSV row.
//!
//! The run is resumable and deterministic. Each finished cell is appended
//! to an append-only JSON-lines progress file keyed by the spec's config
//! hash; `--resume` replays matching lines instead of retraining. The
//! final CSVs are rewritten from scratch in canonical grid order on every
//! run, so an interrupted-and-resumed run ends byte-identical to an
//! uninterrupted one.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write as _};
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use stlb_core::checkpoint;
use stlb_core::data::{generate_domain, load_domain, Domain, DomainSpec, Manifest};
use stlb_core::metrics::{evaluate_with_loss, fit_slope, summarize};
use stlb_core::network::ArchitectureSpec;
use stlb_core::transfer::{
    build_plan, run_process, DatasetId, ProcessKind, ProcessOptions, StageCache,
    TransferDatasets,
};
use stlb_core::{Error, Result};

use crate::spec::ExperimentSpec;

/// Materializes every domain the spec defines under
/// `output_dir/data/<domain>/`. A domain whose manifest already matches
/// the spec is left untouched; a stale directory is rebuilt.
pub fn cmd_generate(spec: &ExperimentSpec) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    fs::create_dir_all(&spec.output_dir)?;
    let slots: [(DatasetId, Option<&DomainSpec>); 3] = [
        (DatasetId::Natural, spec.domains.natural.as_ref()),
        (DatasetId::Texture, spec.domains.texture.as_ref()),
        (DatasetId::Target, Some(&spec.domains.target)),
    ];
    let mut manifests = Vec::new();
    for (id, dspec) in slots {
        let Some(dspec) = dspec else { continue };
        let dir = spec.domain_dir(id);
        let manifest_path = dir.join("manifest.json");
        if manifest_path.exists() {
            let same = fs::read_to_string(&manifest_path)
                .ok()
                .and_then(|json| serde_json::from_str::<Manifest>(&json).ok())
                .is_some_and(|m| m.spec == *dspec);
            if same {
                manifests.push(manifest_path);
                continue;
            }
            fs::remove_dir_all(&dir)?;
        }
        let domain = generate_domain(dspec)?;
        manifests.push(stlb_core::data::save_domain(&domain, &dir)?);
    }
    Ok(manifests)
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    /// Replay finished cells from the progress file instead of retraining.
    pub resume: bool,
    /// Worker threads; seeds are distributed across workers.
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            resume: false,
            jobs: 1,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct CellMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub loss: f64,
}

/// One line of the progress file.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct ProgressLine {
    config: String,
    process: String,
    seed: u64,
    r: f64,
    status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metrics: Option<CellMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub results_csv: PathBuf,
    pub slopes_csv: PathBuf,
    pub config: String,
    /// Cells with metrics (freshly run or replayed).
    pub completed: usize,
    /// Cells that errored; the grid keeps going past them.
    pub failed: usize,
}

/// Cell identity within one run. The fraction is keyed by its exact bits:
/// every path to an r value starts from the same parsed spec, so equal
/// cells carry equal bits.
type CellKey = (ProcessKind, u64, u64);

fn cell_key(process: ProcessKind, seed: u64, r: f64) -> CellKey {
    (process, seed, r.to_bits())
}

fn load_needed_domains(
    spec: &ExperimentSpec,
    kinds: &[ProcessKind],
) -> Result<(Option<Domain>, Option<Domain>, Domain)> {
    let needs = |want: DatasetId| {
        kinds
            .iter()
            .any(|k| build_plan(*k).stages.iter().any(|s| s.dataset == want))
    };
    let load = |id: DatasetId| -> Result<Domain> {
        let manifest = spec.domain_dir(id).join("manifest.json");
        if !manifest.exists() {
            return Err(Error::Usage(format!(
                "{} domain not generated yet ({} missing); run the generate command first",
                id.label(),
                manifest.display()
            )));
        }
        load_domain(&manifest)
    };
    let natural = if needs(DatasetId::Natural) {
        Some(load(DatasetId::Natural)?)
    } else {
        None
    };
    let texture = if needs(DatasetId::Texture) {
        Some(load(DatasetId::Texture)?)
    } else {
        None
    };
    Ok((natural, texture, load(DatasetId::Target)?))
}

/// Replays the progress file. Lines from other configs are ignored; a
/// torn final line (interrupted write) ends the replay.
fn replay_progress(path: &PathBuf, config: &str) -> HashMap<(String, u64, u64), ProgressLine> {
    let mut done = HashMap::new();
    let Ok(text) = fs::read_to_string(path) else {
        return done;
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let Ok(parsed) = serde_json::from_str::<ProgressLine>(line) else {
            break;
        };
        if parsed.config != config {
            continue;
        }
        done.insert(
            (parsed.process.clone(), parsed.seed, parsed.r.to_bits()),
            parsed,
        );
    }
    done
}

fn run_cell(
    kind: ProcessKind,
    datasets: &TransferDatasets,
    arch: &ArchitectureSpec,
    seed: u64,
    r: f64,
    opts: &ProcessOptions,
    cache: &mut StageCache,
    ckpt_path: &PathBuf,
) -> std::result::Result<CellMetrics, String> {
    let outcome = run_process(kind, datasets, arch, seed, r, opts, cache)
        .map_err(|e| e.to_string())?;
    checkpoint::save(&outcome.network, ckpt_path).map_err(|e| e.to_string())?;
    let (cm, loss) =
        evaluate_with_loss(&outcome.network, &datasets.target.eval).map_err(|e| e.to_string())?;
    let s = summarize(&cm).map_err(|e| e.to_string())?;
    Ok(CellMetrics {
        accuracy: s.accuracy,
        precision: s.precision,
        recall: s.recall,
        f1: s.f1,
        loss,
    })
}

fn fmt_metric(v: f64) -> String {
    format!("{v:.6}")
}

/// Runs the whole grid. Failures are recorded and skipped over; the
/// summary's `failed` count tells the caller whether to exit nonzero.
pub fn cmd_run(spec: &ExperimentSpec, options: &RunOptions) -> Result<RunSummary> {
    spec.validate()?;
    let kinds = spec.process_kinds()?;

    // Seed-list override for quick smoke runs, folded into the config
    // hash so progress entries never mix grids.
    let mut effective = spec.clone();
    if let Ok(raw) = std::env::var("STLB_SEED") {
        let seed: u64 = raw
            .parse()
            .map_err(|_| Error::Config(format!("STLB_SEED must be an integer, got \"{raw}\"")))?;
        effective.seeds = vec![seed];
    }
    let config = effective.config_hash();
    let seeds = effective.seeds.clone();

    let arch = spec.arch_spec();
    let (natural, texture, target) = load_needed_domains(spec, &kinds)?;
    let datasets = TransferDatasets {
        natural: natural.as_ref(),
        texture: texture.as_ref(),
        target: &target,
    };
    let opts = spec.train.to_options();

    let ckpt_dir = spec.output_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let progress_path = spec.output_dir.join("progress.jsonl");
    if !options.resume && progress_path.exists() {
        fs::remove_file(&progress_path)?;
    }
    let replayed = if options.resume {
        replay_progress(&progress_path, &config)
    } else {
        HashMap::new()
    };

    // Canonical cell order: processes, then seeds, then fractions, all in
    // spec order. The CSVs are always written in this order.
    let cells: Vec<(ProcessKind, u64, f64)> = kinds
        .iter()
        .flat_map(|&k| {
            seeds.iter().flat_map(move |&s| {
                spec.r_grid.iter().map(move |&r| (k, s, r))
            })
        })
        .collect();

    let mut results: HashMap<CellKey, CellMetrics> = HashMap::new();
    let mut pending: HashMap<u64, Vec<(ProcessKind, f64)>> = HashMap::new();
    for &(kind, seed, r) in &cells {
        if let Some(line) = replayed.get(&(kind.label().to_string(), seed, r.to_bits())) {
            if line.status == "ok" {
                if let Some(m) = line.metrics {
                    results.insert(cell_key(kind, seed, r), m);
                    continue;
                }
            }
            // Failed or malformed entries are retried.
        }
        pending.entry(seed).or_default().push((kind, r));
    }

    let progress_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&progress_path)?;
    let progress = Mutex::new(BufWriter::new(progress_file));
    let fresh: Mutex<Vec<(CellKey, std::result::Result<CellMetrics, String>)>> =
        Mutex::new(Vec::new());

    // One work unit per seed: stage caching pays off across the processes
    // and fractions of a single seed, and units are independent.
    let mut queue: VecDeque<(u64, Vec<(ProcessKind, f64)>)> = seeds
        .iter()
        .filter_map(|s| pending.get(s).map(|cells| (*s, cells.clone())))
        .collect();
    let jobs = options.jobs.max(1).min(queue.len().max(1));
    let queue = Mutex::new(&mut queue);

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| {
                loop {
                    let unit = queue.lock().expect("queue lock").pop_front();
                    let Some((seed, unit_cells)) = unit else { break };
                    let mut cache = StageCache::new();
                    for (kind, r) in unit_cells {
                        let ckpt_path =
                            ckpt_dir.join(format!("{}_s{}_r{}.ckpt", kind.label(), seed, r));
                        let outcome = run_cell(
                            kind, &datasets, &arch, seed, r, &opts, &mut cache, &ckpt_path,
                        );
                        let line = ProgressLine {
                            config: config.clone(),
                            process: kind.label().to_string(),
                            seed,
                            r,
                            status: if outcome.is_ok() { "ok" } else { "failed" }.to_string(),
                            metrics: outcome.as_ref().ok().copied(),
                            error: outcome.as_ref().err().cloned(),
                        };
                        {
                            let mut w = progress.lock().expect("progress lock");
                            let json = serde_json::to_string(&line).expect("progress serializes");
                            writeln!(w, "{json}").expect("progress write");
                            w.flush().expect("progress flush");
                        }
                        fresh
                            .lock()
                            .expect("results lock")
                            .push((cell_key(kind, seed, r), outcome));
                    }
                }
            });
        }
    });

    for (key, outcome) in fresh.into_inner().expect("results lock") {
        if let Ok(m) = outcome {
            results.insert(key, m);
        }
    }

    // results.csv: one row per completed cell, canonical order.
    let results_csv = spec.output_dir.join("results.csv");
    let mut out = String::from("process,seed,r,accuracy,precision,recall,f1,loss,config\n");
    for &(kind, seed, r) in &cells {
        let Some(m) = results.get(&cell_key(kind, seed, r)) else {
            continue;
        };
        writeln!(
            out,
            "{},{seed},{r},{},{},{},{},{},{config}",
            kind.label(),
            fmt_metric(m.accuracy),
            fmt_metric(m.precision),
            fmt_metric(m.recall),
            fmt_metric(m.f1),
            fmt_metric(m.loss),
        )
        .expect("string write");
    }
    fs::write(&results_csv, out)?;

    // slopes.csv: accuracy and loss fitted against r per process, pooled
    // over seeds. Processes without two distinct fractions have no line.
    let slopes_csv = spec.output_dir.join("slopes.csv");
    let mut out = String::from(
        "process,accuracy_slope,accuracy_intercept,accuracy_residual_rms,\
         loss_slope,loss_intercept,loss_residual_rms\n",
    );
    for &kind in &kinds {
        let mut acc_pts = Vec::new();
        let mut loss_pts = Vec::new();
        for &seed in &seeds {
            for &r in &spec.r_grid {
                if let Some(m) = results.get(&cell_key(kind, seed, r)) {
                    acc_pts.push((r, m.accuracy));
                    loss_pts.push((r, m.loss));
                }
            }
        }
        let (Ok(acc_fit), Ok(loss_fit)) = (fit_slope(&acc_pts), fit_slope(&loss_pts)) else {
            continue;
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            kind.label(),
            fmt_metric(acc_fit.a),
            fmt_metric(acc_fit.b),
            fmt_metric(acc_fit.residual_rms),
            fmt_metric(loss_fit.a),
            fmt_metric(loss_fit.b),
            fmt_metric(loss_fit.residual_rms),
        )
        .expect("string write");
    }
    fs::write(&slopes_csv, out)?;

    Ok(RunSummary {
        results_csv,
        slopes_csv,
        config,
        completed: results.len(),
        failed: cells.len() - results.len(),
    })
}
