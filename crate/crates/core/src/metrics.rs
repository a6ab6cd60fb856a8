//! Confusion-matrix metrics and the robustness-slope regression.
//!
//! Evaluation predicts by logit argmax (ties resolve to the lowest class
//! id), accumulates a `counts[true][predicted]` matrix, and summarizes it
//! with accuracy plus macro-averaged precision, recall, and F1. Robustness
//! of a process is the fitted slope `A` of `value = A·r + b` over the
//! training-fraction grid `r`; a smaller `|A|` means performance decays
//! more slowly as training data shrinks.

use crate::data::PatchSet;
use crate::error::{Error, Result};
use crate::layers::softmax_cross_entropy;
use crate::network::{Mode, Network};

/// Examples per forward pass during evaluation; purely a throughput knob.
const EVAL_BATCH: usize = 64;

/// Per-class prediction counts, `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    class_count: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(class_count: usize) -> Self {
        ConfusionMatrix {
            class_count,
            counts: vec![0; class_count * class_count],
        }
    }

    /// Builds a matrix from explicit rows (true class major).
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        let mut cm = ConfusionMatrix::new(c);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::Shape(format!(
                    "confusion row {t} has {} entries, expected {c}",
                    row.len()
                )));
            }
            for (p, &n) in row.iter().enumerate() {
                cm.counts[t * c + p] = n;
            }
        }
        Ok(cm)
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.class_count + predicted] += 1;
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.class_count + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Elementwise sum, for merging matrices evaluated on dataset shards.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.class_count != self.class_count {
            return Err(Error::Shape(format!(
                "cannot merge {}-class matrix into {}-class matrix",
                other.class_count, self.class_count
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Macro-averaged summary of a confusion matrix.
///
/// Classes with no true examples have undefined recall; they are dropped
/// from the macro averages and listed in `excluded_classes` so callers can
/// surface the omission.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub excluded_classes: Vec<usize>,
}

pub fn summarize(cm: &ConfusionMatrix) -> Result<Summary> {
    let c = cm.class_count;
    let total = cm.total();
    if total == 0 {
        return Err(Error::Usage("cannot summarize an empty confusion matrix".into()));
    }
    let mut row = vec![0u64; c];
    let mut col = vec![0u64; c];
    let mut trace = 0u64;
    for t in 0..c {
        for p in 0..c {
            let n = cm.count(t, p);
            row[t] += n;
            col[p] += n;
            if t == p {
                trace += n;
            }
        }
    }
    let mut excluded = Vec::new();
    let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
    let mut included = 0usize;
    for k in 0..c {
        if row[k] == 0 {
            excluded.push(k);
            continue;
        }
        let diag = cm.count(k, k) as f64;
        // An empty predicted column means the class was never predicted;
        // its precision is defined as zero rather than left undefined.
        let p = if col[k] == 0 { 0.0 } else { diag / col[k] as f64 };
        let r = diag / row[k] as f64;
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        ps += p;
        rs += r;
        fs += f;
        included += 1;
    }
    let n = included as f64;
    Ok(Summary {
        accuracy: trace as f64 / total as f64,
        precision: ps / n,
        recall: rs / n,
        f1: fs / n,
        excluded_classes: excluded,
    })
}

/// Logit argmax with ties resolved to the lowest class id.
fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Runs the network over the whole set in eval mode and accumulates a
/// confusion matrix plus the mean cross-entropy loss.
pub fn evaluate_with_loss(net: &Network, set: &PatchSet) -> Result<(ConfusionMatrix, f64)> {
    let classes = net.arch().class_count;
    if set.examples.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    if set.class_count != classes {
        return Err(Error::Data(format!(
            "dataset labels span {} classes but the network predicts {classes}",
            set.class_count
        )));
    }
    let mut cm = ConfusionMatrix::new(classes);
    let mut loss_sum = 0.0;
    let all: Vec<usize> = (0..set.examples.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let (batch, labels) = set.batch(chunk)?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
        }
        let trace = net.forward(&batch, Mode::Eval, None)?;
        let logits = trace.activations.last().expect("forward yields at least one activation");
        let (loss, _) = softmax_cross_entropy(logits, &labels)?;
        loss_sum += loss * chunk.len() as f64;
        for (i, &label) in labels.iter().enumerate() {
            let per = &logits.as_slice()[i * classes..(i + 1) * classes];
            cm.record(label, argmax(per));
        }
    }
    Ok((cm, loss_sum / set.examples.len() as f64))
}

pub fn evaluate(net: &Network, set: &PatchSet) -> Result<ConfusionMatrix> {
    evaluate_with_loss(net, set).map(|(cm, _)| cm)
}

/// Least-squares line fit over `(r, value)` points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    /// Slope of the fitted line.
    pub a: f64,
    /// Intercept.
    pub b: f64,
    /// Root-mean-square of the fit residuals; zero on collinear input.
    pub residual_rms: f64,
}

pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 2 {
        return Err(Error::Usage("slope fit needs at least two points".into()));
    }
    let n = points.len() as f64;
    let mean_r = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_v = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for &(r, v) in points {
        num += (r - mean_r) * (v - mean_v);
        den += (r - mean_r) * (r - mean_r);
    }
    if den == 0.0 {
        return Err(Error::Usage("slope fit needs at least two distinct r values".into()));
    }
    let a = num / den;
    let b = mean_v - a * mean_r;
    let ss = points
        .iter()
        .map(|&(r, v)| {
            let e = v - (a * r + b);
            e * e
        })
        .sum::<f64>();
    Ok(SlopeFit {
        a,
        b,
        residual_rms: (ss / n).sqrt(),
    })
}

/// Orders process indices from most to least robust: ascending `|A|`.
/// Ties keep their original order.
pub fn robustness_rank(slopes: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..slopes.len()).collect();
    order.sort_by(|&i, &j| {
        slopes[i]
            .abs()
            .partial_cmp(&slopes[j].abs())
            .expect("slopes must not be NaN")
    });
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::data::{Example, Split};
    use crate::network::{ArchitectureSpec, LayerSpec, Network};
    use crate::rng::stream;
    use crate::tensor::{Shape4, Tensor4};

    /// A two-layer net whose logits equal the flattened input, so tests
    /// control predictions exactly. ReLU on top keeps the architecture
    /// valid without disturbing the nonnegative logits used here.
    fn passthrough_net(classes: usize) -> Network {
        let arch = ArchitectureSpec {
            input_shape: Shape4::new(1, 1, classes, 1),
            layers: vec![LayerSpec::Fc { out_units: classes }, LayerSpec::Relu],
            split_index: 1,
            class_count: classes,
        };
        let mut net = Network::init_random(arch, 0).unwrap();
        match net.layer_params_mut(0) {
            crate::network::LayerParams::Fc(p) => {
                for v in p.weight.iter_mut() {
                    *v = 0.0;
                }
                for i in 0..classes {
                    p.weight[i * classes + i] = 1.0;
                }
                for v in p.bias.iter_mut() {
                    *v = 0.0;
                }
            }
            _ => unreachable!(),
        }
        net
    }

    fn set_from_logits(rows: &[(Vec<f64>, usize)], classes: usize) -> PatchSet {
        let examples = rows
            .iter()
            .map(|(logits, label)| Example {
                image: Tensor4::from_vec(Shape4::new(1, 1, classes, 1), logits.clone()).unwrap(),
                label: *label,
            })
            .collect();
        PatchSet {
            examples,
            split: Split::Eval,
            class_count: classes,
        }
    }

    #[test]
    fn perfect_classifier_gives_diagonal_matrix() {
        let net = passthrough_net(3);
        let rows: Vec<(Vec<f64>, usize)> = (0..3)
            .map(|k| {
                let mut v = vec![0.0; 3];
                v[k] = 1.0;
                (v, k)
            })
            .collect();
        let cm = evaluate(&net, &set_from_logits(&rows, 3)).unwrap();
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.count(t, p), u64::from(t == p));
            }
        }
        let s = summarize(&cm).unwrap();
        assert_eq!((s.accuracy, s.precision, s.recall, s.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn constant_classifier_fills_one_column() {
        let net = passthrough_net(4);
        // Every image peaks at class 2 regardless of label.
        let rows: Vec<(Vec<f64>, usize)> = (0..4)
            .map(|k| (vec![0.1, 0.2, 0.9, 0.3], k))
            .collect();
        let cm = evaluate(&net, &set_from_logits(&rows, 4)).unwrap();
        for t in 0..4 {
            for p in 0..4 {
                assert_eq!(cm.count(t, p), u64::from(p == 2));
            }
        }
    }

    #[test]
    fn evaluate_matches_per_example_argmax_oracle() {
        let classes = 5;
        let net = passthrough_net(classes);
        let mut rng = stream(42);
        let rows: Vec<(Vec<f64>, usize)> = (0..137)
            .map(|_| {
                // Quantized logits force occasional exact ties.
                let v: Vec<f64> = (0..classes)
                    .map(|_| (rng.random_range(0..4u32)) as f64 * 0.25)
                    .collect();
                (v, rng.random_range(0..classes))
            })
            .collect();
        let cm = evaluate(&net, &set_from_logits(&rows, classes)).unwrap();

        let mut oracle = ConfusionMatrix::new(classes);
        for (logits, label) in &rows {
            let mut best = 0;
            for k in 1..classes {
                if logits[k] > logits[best] {
                    best = k;
                }
            }
            oracle.record(*label, best);
        }
        assert_eq!(cm, oracle);
    }

    #[test]
    fn ties_resolve_to_lowest_class() {
        let net = passthrough_net(3);
        let rows = vec![(vec![0.5, 0.5, 0.5], 2usize)];
        let cm = evaluate(&net, &set_from_logits(&rows, 3)).unwrap();
        assert_eq!(cm.count(2, 0), 1);
    }

    #[test]
    fn hand_computed_binary_summary() {
        let cm = ConfusionMatrix::from_rows(&[vec![1, 1], vec![0, 2]]).unwrap();
        let s = summarize(&cm).unwrap();
        assert!((s.accuracy - 0.75).abs() < 1e-15);
        // class 0: P = 1, R = 1/2, F1 = 2/3; class 1: P = 2/3, R = 1, F1 = 4/5.
        assert!((s.precision - 5.0 / 6.0).abs() < 1e-15);
        assert!((s.recall - 0.75).abs() < 1e-15);
        assert!((s.f1 - 11.0 / 15.0).abs() < 1e-15);
        assert!(s.excluded_classes.is_empty());
    }

    #[test]
    fn summary_matches_per_class_loop_oracle() {
        let mut rng = stream(7);
        for _ in 0..20 {
            let c = rng.random_range(2..8usize);
            let rows: Vec<Vec<u64>> = (0..c)
                .map(|_| (0..c).map(|_| rng.random_range(0..9u64)).collect())
                .collect();
            let cm = ConfusionMatrix::from_rows(&rows).unwrap();
            if cm.total() == 0 {
                continue;
            }
            let s = summarize(&cm).unwrap();

            let col_sum =
                |p: usize| -> u64 { (0..c).map(|t| rows[t][p]).sum() };
            let (mut ps, mut rs, mut fs, mut m) = (0.0, 0.0, 0.0, 0.0);
            let mut correct = 0u64;
            let mut total = 0u64;
            for k in 0..c {
                let row_sum: u64 = rows[k].iter().sum();
                correct += rows[k][k];
                total += row_sum;
                if row_sum == 0 {
                    assert!(s.excluded_classes.contains(&k));
                    continue;
                }
                let p = if col_sum(k) == 0 {
                    0.0
                } else {
                    rows[k][k] as f64 / col_sum(k) as f64
                };
                let r = rows[k][k] as f64 / row_sum as f64;
                ps += p;
                rs += r;
                fs += if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
                m += 1.0;
            }
            assert!((s.accuracy - correct as f64 / total as f64).abs() < 1e-12);
            assert!((s.precision - ps / m).abs() < 1e-12);
            assert!((s.recall - rs / m).abs() < 1e-12);
            assert!((s.f1 - fs / m).abs() < 1e-12);
        }
    }

    #[test]
    fn summary_invariant_under_class_permutation() {
        let mut rng = stream(11);
        let c = 6;
        let rows: Vec<Vec<u64>> = (0..c)
            .map(|_| (0..c).map(|_| rng.random_range(1..20u64)).collect())
            .collect();
        let base = summarize(&ConfusionMatrix::from_rows(&rows).unwrap()).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut permuted = vec![vec![0u64; c]; c];
        for t in 0..c {
            for p in 0..c {
                permuted[perm[t]][perm[p]] = rows[t][p];
            }
        }
        let s = summarize(&ConfusionMatrix::from_rows(&permuted).unwrap()).unwrap();
        assert!((s.accuracy - base.accuracy).abs() < 1e-12);
        assert!((s.precision - base.precision).abs() < 1e-12);
        assert!((s.recall - base.recall).abs() < 1e-12);
        assert!((s.f1 - base.f1).abs() < 1e-12);
    }

    #[test]
    fn accuracy_equals_micro_precision_and_recall() {
        let mut rng = stream(13);
        let c = 5;
        let rows: Vec<Vec<u64>> = (0..c)
            .map(|_| (0..c).map(|_| rng.random_range(0..15u64)).collect())
            .collect();
        let cm = ConfusionMatrix::from_rows(&rows).unwrap();
        let s = summarize(&cm).unwrap();
        let trace: u64 = (0..c).map(|k| cm.count(k, k)).sum();
        // Micro P and micro R both reduce to trace/total in single-label
        // classification: every false positive is another class's false
        // negative.
        let micro = trace as f64 / cm.total() as f64;
        assert!((s.accuracy - micro).abs() < 1e-15);
    }

    #[test]
    fn absent_class_is_excluded_with_notice() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 0, 1], vec![0, 0, 0], vec![1, 0, 2]])
            .unwrap();
        let s = summarize(&cm).unwrap();
        assert_eq!(s.excluded_classes, vec![1]);
        // Macro averages run over the two populated classes only.
        let p0 = 3.0 / 4.0;
        let p2 = 2.0 / 3.0;
        assert!((s.precision - (p0 + p2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_matrix_is_a_usage_error() {
        assert!(matches!(
            summarize(&ConfusionMatrix::new(4)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn exact_line_recovered() {
        let pts: Vec<(f64, f64)> = [0.2, 0.4, 0.6, 0.8, 1.0]
            .iter()
            .map(|&r| (r, 2.0 * r + 1.0))
            .collect();
        let fit = fit_slope(&pts).unwrap();
        assert!((fit.a - 2.0).abs() < 1e-12);
        assert!((fit.b - 1.0).abs() < 1e-12);
        assert!(fit.residual_rms < 1e-12);
    }

    #[test]
    fn constant_values_give_zero_slope() {
        let pts = vec![(0.2, 0.7), (0.5, 0.7), (1.0, 0.7)];
        let fit = fit_slope(&pts).unwrap();
        assert!(fit.a.abs() < 1e-12);
        assert!((fit.b - 0.7).abs() < 1e-12);
    }

    #[test]
    fn degenerate_r_rejected() {
        assert!(fit_slope(&[(0.5, 1.0)]).is_err());
        assert!(fit_slope(&[(0.5, 1.0), (0.5, 2.0), (0.5, 3.0)]).is_err());
    }

    #[test]
    fn noisy_fit_matches_normal_equation_oracle() {
        let mut rng = stream(29);
        let pts: Vec<(f64, f64)> = (0..30)
            .map(|i| {
                let r = 0.1 + 0.03 * i as f64;
                (r, 1.4 - 0.8 * r + 0.05 * (rng.random::<f64>() - 0.5))
            })
            .collect();
        let fit = fit_slope(&pts).unwrap();
        // Oracle: solve the 2x2 normal equations directly.
        let n = pts.len() as f64;
        let (sr, sv, srr, srv) = pts.iter().fold((0.0, 0.0, 0.0, 0.0), |acc, &(r, v)| {
            (acc.0 + r, acc.1 + v, acc.2 + r * r, acc.3 + r * v)
        });
        let det = n * srr - sr * sr;
        let a = (n * srv - sr * sv) / det;
        let b = (srr * sv - sr * srv) / det;
        assert!((fit.a - a).abs() < 1e-9);
        assert!((fit.b - b).abs() < 1e-9);
    }

    #[test]
    fn published_slope_magnitudes_rank_as_expected() {
        // Reference ranking fixture over four reported accuracy slopes,
        // one per compared process in their (1)..(4) order.
        let slopes = [1.3560, 0.9920, 0.9475, 0.7479];
        assert_eq!(robustness_rank(&slopes), vec![3, 2, 1, 0]);
        let loss_slopes = [-0.5054, -0.4938, -0.3221, -0.2230];
        assert_eq!(robustness_rank(&loss_slopes), vec![3, 2, 1, 0]);
    }

    #[test]
    fn slope_scales_with_values() {
        let pts = vec![(0.2, 0.31), (0.4, 0.55), (0.6, 0.5), (1.0, 0.92)];
        let base = fit_slope(&pts).unwrap();
        // Power-of-two scaling is exact in binary floating point, so the
        // equivariance holds bitwise.
        let scaled: Vec<(f64, f64)> = pts.iter().map(|&(r, v)| (r, 4.0 * v)).collect();
        let fit = fit_slope(&scaled).unwrap();
        assert_eq!(fit.a, 4.0 * base.a);
        assert_eq!(fit.b, 4.0 * base.b);
        let scaled: Vec<(f64, f64)> = pts.iter().map(|&(r, v)| (r, 3.0 * v)).collect();
        let fit = fit_slope(&scaled).unwrap();
        assert!((fit.a - 3.0 * base.a).abs() < 1e-12);
        assert!((fit.b - 3.0 * base.b).abs() < 1e-12);
    }

    #[test]
    fn merge_sums_counts() {
        let mut a = ConfusionMatrix::from_rows(&[vec![1, 0], vec![2, 3]]).unwrap();
        let b = ConfusionMatrix::from_rows(&[vec![4, 1], vec![0, 5]]).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a, ConfusionMatrix::from_rows(&[vec![5, 1], vec![2, 8]]).unwrap());
        assert!(a.merge(&ConfusionMatrix::new(3)).is_err());
    }

    #[test]
    fn class_count_mismatch_rejected() {
        let net = passthrough_net(3);
        let mut set = set_from_logits(&[(vec![1.0, 0.0, 0.0], 0)], 3);
        set.class_count = 4;
        assert!(evaluate(&net, &set).is_err());
    }
}
