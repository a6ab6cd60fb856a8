//! Plain-text report over a finished run: per-process metrics at the
//! largest trained fraction, then the robustness table ordered by slope
//! magnitude.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use stlb_core::metrics::robustness_rank;
use stlb_core::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
struct ResultRow {
    process: String,
    seed: u64,
    r: f64,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    loss: f64,
}

fn parse_f64(field: &str, line_no: usize) -> Result<f64> {
    field.parse().map_err(|_| {
        Error::Data(format!(
            "results.csv line {line_no}: \"{field}\" is not a number"
        ))
    })
}

fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if !line.starts_with("process,seed,r,") {
                return Err(Error::Data(format!(
                    "unexpected results.csv header: \"{line}\""
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::Data(format!(
                "results.csv line {}: expected 9 fields, got {}",
                i + 1,
                f.len()
            )));
        }
        rows.push(ResultRow {
            process: f[0].to_string(),
            seed: f[1]
                .parse()
                .map_err(|_| Error::Data(format!("results.csv line {}: bad seed", i + 1)))?,
            r: parse_f64(f[2], i + 1)?,
            accuracy: parse_f64(f[3], i + 1)?,
            precision: parse_f64(f[4], i + 1)?,
            recall: parse_f64(f[5], i + 1)?,
            f1: parse_f64(f[6], i + 1)?,
            loss: parse_f64(f[7], i + 1)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Data("results.csv holds no result rows".into()));
    }
    Ok(rows)
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Renders the report for a results directory holding `results.csv` and,
/// optionally, `slopes.csv`.
pub fn cmd_report(results_dir: &Path) -> Result<String> {
    let results_path = results_dir.join("results.csv");
    let rows = parse_results(&fs::read_to_string(&results_path).map_err(|e| {
        Error::Usage(format!("cannot read {}: {e}", results_path.display()))
    })?)?;

    let r_max = rows.iter().map(|r| r.r).fold(f64::NEG_INFINITY, f64::max);
    // Spec order is lost in the CSV; group alphabetically but keep first-
    // appearance order for display.
    let mut order: Vec<String> = Vec::new();
    let mut at_full: BTreeMap<String, Vec<&ResultRow>> = BTreeMap::new();
    for row in &rows {
        if !order.contains(&row.process) {
            order.push(row.process.clone());
        }
        if row.r == r_max {
            at_full.entry(row.process.clone()).or_default().push(row);
        }
    }

    let mut out = String::new();
    writeln!(out, "metrics at r = {r_max} (mean over seeds)").unwrap();
    writeln!(
        out,
        "{:<22} {:>5} {:>9} {:>7} {:>10} {:>8} {:>8} {:>9}",
        "process", "n", "accuracy", "sd", "precision", "recall", "f1", "loss"
    )
    .unwrap();
    for process in &order {
        let Some(group) = at_full.get(process) else {
            continue;
        };
        let acc: Vec<f64> = group.iter().map(|r| r.accuracy).collect();
        let (acc_mean, acc_sd) = mean_sd(&acc);
        let mean = |f: fn(&ResultRow) -> f64| {
            group.iter().map(|r| f(r)).sum::<f64>() / group.len() as f64
        };
        writeln!(
            out,
            "{:<22} {:>5} {:>9.4} {:>7.4} {:>10.4} {:>8.4} {:>8.4} {:>9.4}",
            process,
            group.len(),
            acc_mean,
            acc_sd,
            mean(|r| r.precision),
            mean(|r| r.recall),
            mean(|r| r.f1),
            mean(|r| r.loss),
        )
        .unwrap();
    }

    let slopes_path = results_dir.join("slopes.csv");
    if let Ok(text) = fs::read_to_string(&slopes_path) {
        let mut names = Vec::new();
        let mut acc_slopes = Vec::new();
        let mut details = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Data(format!(
                    "slopes.csv line {}: expected 7 fields, got {}",
                    i + 1,
                    f.len()
                )));
            }
            names.push(f[0].to_string());
            acc_slopes.push(parse_f64(f[1], i + 1)?);
            details.push((
                parse_f64(f[2], i + 1)?,
                parse_f64(f[3], i + 1)?,
                parse_f64(f[4], i + 1)?,
            ));
        }
        if !names.is_empty() {
            writeln!(out).unwrap();
            writeln!(out, "robustness to training-set shrinkage (|accuracy slope|, ascending)").unwrap();
            writeln!(
                out,
                "{:<5} {:<22} {:>9} {:>11} {:>9} {:>11}",
                "rank", "process", "acc A", "acc b", "resid", "loss A"
            )
            .unwrap();
            for (rank, &idx) in robustness_rank(&acc_slopes).iter().enumerate() {
                writeln!(
                    out,
                    "{:<5} {:<22} {:>9.4} {:>11.4} {:>9.4} {:>11.4}",
                    rank + 1,
                    names[idx],
                    acc_slopes[idx],
                    details[idx].0,
                    details[idx].1,
                    details[idx].2,
                )
                .unwrap();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path) {
        fs::write(
            dir.join("results.csv"),
            "process,seed,r,accuracy,precision,recall,f1,loss,config\n\
             scratch,1,0.5,0.600000,0.610000,0.600000,0.605000,1.100000,abcd\n\
             scratch,1,1,0.700000,0.710000,0.700000,0.705000,0.900000,abcd\n\
             scratch,2,1,0.720000,0.730000,0.720000,0.725000,0.880000,abcd\n\
             two_stage,1,0.5,0.740000,0.750000,0.740000,0.745000,0.800000,abcd\n\
             two_stage,1,1,0.760000,0.770000,0.760000,0.765000,0.780000,abcd\n\
             two_stage,2,1,0.780000,0.790000,0.780000,0.785000,0.760000,abcd\n",
        )
        .unwrap();
        fs::write(
            dir.join("slopes.csv"),
            "process,accuracy_slope,accuracy_intercept,accuracy_residual_rms,\
             loss_slope,loss_intercept,loss_residual_rms\n\
             scratch,0.220000,0.490000,0.005000,-0.420000,1.310000,0.004000\n\
             two_stage,0.050000,0.715000,0.002000,-0.045000,0.823000,0.001000\n",
        )
        .unwrap();
    }

    #[test]
    fn report_summarizes_full_fraction_and_ranks_slopes() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let report = cmd_report(dir.path()).unwrap();

        // Means at r = 1 over two seeds.
        assert!(report.contains("metrics at r = 1"), "{report}");
        let scratch_line = report
            .lines()
            .find(|l| l.starts_with("scratch"))
            .unwrap();
        assert!(scratch_line.contains("0.7100"), "{scratch_line}");

        // two_stage has the smaller |slope| → rank 1.
        let rank_lines: Vec<&str> = report
            .lines()
            .skip_while(|l| !l.starts_with("rank"))
            .skip(1)
            .collect();
        assert!(rank_lines[0].contains("two_stage"), "{report}");
        assert!(rank_lines[1].contains("scratch"), "{report}");
    }

    #[test]
    fn report_without_slopes_still_renders_metrics() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        fs::remove_file(dir.path().join("slopes.csv")).unwrap();
        let report = cmd_report(dir.path()).unwrap();
        assert!(report.contains("metrics at r = 1"));
        assert!(!report.contains("robustness"));
    }

    #[test]
    fn malformed_rows_are_reported_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("results.csv"),
            "process,seed,r,accuracy,precision,recall,f1,loss,config\n\
             scratch,1,0.5,oops,0.6,0.6,0.6,1.0,abcd\n",
        )
        .unwrap();
        let err = cmd_report(dir.path()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let empty = tempfile::tempdir().unwrap();
        assert!(cmd_report(empty.path()).is_err());
    }
}
