//! Property-based invariants across modules: randomized shapes, fractions,
//! and confusion matrices that must hold for any input, not just the
//! fixtures in the unit tests.

use proptest::prelude::*;

use stlb_core::data::{bicubic_resize, load_image, save_image, Example, PatchSet, Split};
use stlb_core::metrics::{fit_slope, robustness_rank, summarize, ConfusionMatrix};
use stlb_core::tensor::{Shape4, Tensor4};
use stlb_core::training::subsample;

fn patch_set(class_counts: &[usize]) -> PatchSet {
    let mut examples = Vec::new();
    for (label, &count) in class_counts.iter().enumerate() {
        for i in 0..count {
            let value = (label * 100 + i) as f64 / 1000.0;
            examples.push(Example {
                image: Tensor4::from_vec(Shape4::new(1, 1, 2, 2), vec![value; 4]).unwrap(),
                label,
            });
        }
    }
    PatchSet {
        examples,
        split: Split::Train,
        class_count: class_counts.len(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bicubic_preserves_constants_exactly(
        c in 0.0f64..=1.0,
        sh in 2..10usize,
        sw in 2..10usize,
        oh in 1..16usize,
        ow in 1..16usize,
    ) {
        let src = Tensor4::from_vec(Shape4::new(1, 1, sh, sw), vec![c; sh * sw]).unwrap();
        let out = bicubic_resize(&src, oh, ow).unwrap();
        prop_assert_eq!(out.shape(), Shape4::new(1, 1, oh, ow));
        for &v in out.as_slice() {
            prop_assert_eq!(v, c, "constant {} drifted to {}", c, v);
        }
    }

    #[test]
    fn bicubic_output_stays_in_range(
        seed in 0u64..1000,
        sh in 2..8usize,
        sw in 2..8usize,
        oh in 2..12usize,
        ow in 2..12usize,
    ) {
        use rand::Rng;
        let mut rng = stlb_core::rng::stream(seed);
        let mut src = Tensor4::zeros(Shape4::new(1, 2, sh, sw)).unwrap();
        src.map_elementwise(|_| rng.random());
        let out = bicubic_resize(&src, oh, ow).unwrap();
        for &v in out.as_slice() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn pgm_roundtrip_is_quantization_exact(
        seed in 0u64..1000,
        h in 1..12usize,
        w in 1..12usize,
    ) {
        use rand::Rng;
        let mut rng = stlb_core::rng::stream(seed);
        let mut img = Tensor4::zeros(Shape4::new(1, 1, h, w)).unwrap();
        img.map_elementwise(|_| rng.random());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.pgm");
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        prop_assert_eq!(back.shape(), img.shape());
        for (&a, &b) in img.as_slice().iter().zip(back.as_slice()) {
            // One 8-bit quantization step of slack, nothing more.
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        // A second save/load must be lossless: the loaded values already
        // sit on the 8-bit grid.
        save_image(&back, &path).unwrap();
        let twice = load_image(&path).unwrap();
        prop_assert_eq!(&twice, &back);
    }

    #[test]
    fn subsample_keeps_per_class_rule_and_order(
        counts in proptest::collection::vec(1..9usize, 2..5),
        r_millis in 1..=1000u32,
        seed in 0u64..100,
    ) {
        let r = f64::from(r_millis) / 1000.0;
        let set = patch_set(&counts);
        let sub = subsample(&set, r, seed).unwrap();
        // Per-class size: round(r·n) with a floor of one.
        let got = sub.class_counts();
        for (label, &n) in counts.iter().enumerate() {
            let want = ((r * n as f64).round() as usize).max(1);
            prop_assert_eq!(got[label], want, "class {}", label);
        }
        // Selection is a subsequence of the original ordering.
        let mut cursor = 0;
        for e in &sub.examples {
            let found = set.examples[cursor..]
                .iter()
                .position(|o| o.label == e.label && o.image == e.image);
            prop_assert!(found.is_some(), "picked example out of order");
            cursor += found.unwrap() + 1;
        }
        // Same seed, same subset.
        let again = subsample(&set, r, seed).unwrap();
        prop_assert_eq!(sub.examples.len(), again.examples.len());
        for (a, b) in sub.examples.iter().zip(&again.examples) {
            prop_assert_eq!(a.label, b.label);
            prop_assert_eq!(&a.image, &b.image);
        }
    }

    #[test]
    fn confusion_merge_adds_cellwise(
        a_rows in proptest::collection::vec(proptest::collection::vec(0u64..20, 3), 3),
        b_rows in proptest::collection::vec(proptest::collection::vec(0u64..20, 3), 3),
    ) {
        let a = ConfusionMatrix::from_rows(&a_rows).unwrap();
        let b = ConfusionMatrix::from_rows(&b_rows).unwrap();
        let mut merged = a.clone();
        merged.merge(&b).unwrap();
        prop_assert_eq!(merged.total(), a.total() + b.total());
        for t in 0..3 {
            for p in 0..3 {
                prop_assert_eq!(merged.count(t, p), a.count(t, p) + b.count(t, p));
            }
        }
        if merged.total() > 0 {
            let s = summarize(&merged).unwrap();
            let correct: u64 = (0..3).map(|i| merged.count(i, i)).sum();
            let acc = correct as f64 / merged.total() as f64;
            prop_assert!((s.accuracy - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn slope_fit_reproduces_exact_lines(
        a_millis in -2000i32..=2000,
        b_millis in -2000i32..=2000,
        n in 2..8usize,
    ) {
        let a = f64::from(a_millis) / 1000.0;
        let b = f64::from(b_millis) / 1000.0;
        let points: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let r = 0.2 + i as f64 * 0.8 / (n - 1).max(1) as f64;
                (r, a * r + b)
            })
            .collect();
        let fit = fit_slope(&points).unwrap();
        prop_assert!((fit.a - a).abs() < 1e-9);
        prop_assert!((fit.b - b).abs() < 1e-9);
        prop_assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn robustness_rank_is_a_permutation_sorted_by_magnitude(
        slopes in proptest::collection::vec(-5.0f64..5.0, 1..6),
    ) {
        let rank = robustness_rank(&slopes);
        let mut seen = rank.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..slopes.len()).collect::<Vec<_>>());
        for pair in rank.windows(2) {
            prop_assert!(slopes[pair[0]].abs() <= slopes[pair[1]].abs());
        }
    }
}
