//! End-to-end runs of the compiled `stlb` binary: the generate → run →
//! report → saliency flow, the seed-override environment variable, and the
//! exit-code contract (0 clean, 1 hard error, 2 when grid cells failed).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use stlb_cli::spec::{ArchChoice, DomainSet, ExperimentSpec, TrainOverrides};
use stlb_core::data::{DomainKind, DomainSpec};
use stlb_core::network::{ArchitectureSpec, LayerSpec};
use stlb_core::tensor::Shape4;

fn stlb(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_stlb"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn tiny_arch(classes: usize) -> ArchitectureSpec {
    ArchitectureSpec {
        input_shape: Shape4::new(1, 1, 12, 12),
        layers: vec![
            LayerSpec::Conv {
                out_channels: 4,
                kh: 3,
                kw: 3,
                stride: 1,
                pad: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool {
                ph: 2,
                pw: 2,
                stride: 2,
            },
            LayerSpec::Fc { out_units: 16 },
            LayerSpec::Relu,
            LayerSpec::Fc { out_units: classes },
        ],
        split_index: 3,
        class_count: classes,
    }
}

fn write_spec(dir: &Path) -> std::path::PathBuf {
    let spec = ExperimentSpec {
        arch: ArchChoice::Custom(tiny_arch(4)),
        domains: DomainSet {
            natural: None,
            texture: None,
            target: DomainSpec {
                kind: DomainKind::Target,
                class_count: 4,
                train_per_class: 6,
                eval_per_class: 3,
                image_size: 12,
                seed: 63,
                train_counts: None,
            },
        },
        processes: vec!["scratch".into()],
        seeds: vec![11],
        r_grid: vec![0.5, 1.0],
        train: TrainOverrides {
            source_max_epochs: 3,
            target_max_epochs: 3,
            plateau_window: 3,
            batch_size: 8,
            ..TrainOverrides::default()
        },
        output_dir: dir.join("out"),
    };
    let path = dir.join("experiment.json");
    fs::write(&path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    path
}

#[test]
fn generate_run_report_saliency_flow() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let spec_arg = spec.to_str().unwrap();

    let gen = stlb(&["generate", "--spec", spec_arg], &[]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let listed = String::from_utf8(gen.stdout).unwrap();
    assert!(listed.contains("manifest.json"), "{listed}");

    let run = stlb(&["run", "--spec", spec_arg], &[]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let out = String::from_utf8(run.stdout).unwrap();
    assert!(out.contains("2 cells completed, 0 failed"), "{out}");
    let results_csv = dir.path().join("out/results.csv");
    assert_eq!(fs::read_to_string(&results_csv).unwrap().lines().count(), 3);

    let report = stlb(
        &["report", "--results", dir.path().join("out").to_str().unwrap()],
        &[],
    );
    assert!(report.status.success());
    let text = String::from_utf8(report.stdout).unwrap();
    assert!(text.contains("metrics at r = 1"), "{text}");
    assert!(text.contains("scratch"), "{text}");

    // Saliency over one generated image with the freshly trained model.
    let ckpt = dir.path().join("out/checkpoints/scratch_s11_r1.ckpt");
    let image = dir.path().join("out/data/target/class0/train/00000.pgm");
    assert!(image.exists());
    let sal_out = dir.path().join("saliency");
    let sal = stlb(
        &[
            "saliency",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--image",
            image.to_str().unwrap(),
            "--layer",
            "fc1",
            "--out",
            sal_out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(sal.status.success(), "{}", String::from_utf8_lossy(&sal.stderr));
    assert!(sal_out.join("magnitude_c0.pgm").exists());
    let raw = fs::read_to_string(sal_out.join("raw_c0.csv")).unwrap();
    assert_eq!(raw.lines().count(), 12);
    assert!(
        raw.lines()
            .any(|l| l.split(',').any(|v| v.parse::<f64>().unwrap() != 0.0)),
        "saliency map is identically zero"
    );
}

#[test]
fn seed_env_var_overrides_the_spec_list() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let spec_arg = spec.to_str().unwrap();
    assert!(stlb(&["generate", "--spec", spec_arg], &[]).status.success());

    let run = stlb(&["run", "--spec", spec_arg], &[("STLB_SEED", "77")]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let results = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    for row in results.lines().skip(1) {
        assert!(row.starts_with("scratch,77,"), "{row}");
    }

    let bad = stlb(&["run", "--spec", spec_arg], &[("STLB_SEED", "many")]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("STLB_SEED"));
}

#[test]
fn hard_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = stlb(
        &["run", "--spec", dir.path().join("nope.json").to_str().unwrap()],
        &[],
    );
    assert_eq!(missing.status.code(), Some(1));

    // Valid spec, but the data was never generated.
    let spec = write_spec(dir.path());
    let ungenerated = stlb(&["run", "--spec", spec.to_str().unwrap()], &[]);
    assert_eq!(ungenerated.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&ungenerated.stderr).contains("generate"));
}

#[test]
fn failed_grid_cells_exit_two_and_leave_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let spec_arg = spec.to_str().unwrap();
    assert!(stlb(&["generate", "--spec", spec_arg], &[]).status.success());

    // Sabotage exactly one cell: its checkpoint path is a directory, so
    // the save fails while every other cell proceeds.
    fs::create_dir_all(dir.path().join("out/checkpoints/scratch_s11_r1.ckpt")).unwrap();
    let run = stlb(&["run", "--spec", spec_arg], &[]);
    assert_eq!(run.status.code(), Some(2), "{}", String::from_utf8_lossy(&run.stderr));

    let results = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    let rows: Vec<&str> = results.lines().skip(1).collect();
    assert_eq!(rows.len(), 1, "{results}");
    assert!(rows[0].starts_with("scratch,11,0.5,"));

    let progress = fs::read_to_string(dir.path().join("out/progress.jsonl")).unwrap();
    assert!(progress.contains("\"failed\""), "{progress}");
}
