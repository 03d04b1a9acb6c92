use std::collections::BTreeMap;

use depthgaze::evaluation::*;
use depthgaze::fixation::{densify, frame_rng, FixationSet};
use depthgaze::maps::ProbabilityMap;
use depthgaze::{Dims, Grid, Point};
use ndarray::array;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DIMS: Dims = Dims::new(128, 96);

fn prob(g: Grid) -> ProbabilityMap {
    ProbabilityMap::from_weights(g).unwrap()
}

/// Counts every (positive, negative) pair directly.
fn pairwise_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut s = 0.0;
    for p in pos {
        for n in neg {
            s += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (pos.len() * neg.len()) as f64
}

#[test]
fn chi2_examples() {
    let a = prob(array![[0.5, 0.5]]);
    let b = prob(array![[0.75, 0.25]]);
    let expected = 0.5 * (0.0625 / 1.25 + 0.0625 / 0.75);
    assert!((chi2_distance(&a, &b).unwrap() - expected).abs() < 1e-15);
    assert!((expected - 0.0666666666666).abs() < 1e-12);
    assert_eq!(chi2_distance(&a, &a).unwrap(), 0.0);
    let c = prob(array![[1.0, 0.0]]);
    let d = prob(array![[0.0, 1.0]]);
    assert!((chi2_distance(&c, &d).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn chi2_shape_mismatch() {
    let a = prob(array![[0.5, 0.5]]);
    let b = prob(array![[0.5], [0.5]]);
    assert!(matches!(chi2_distance(&a, &b), Err(EvalError::ShapeMismatch(..))));
}

#[test]
fn auc_examples() {
    let mut sal = Grid::zeros(DIMS.shape());
    sal[[10, 10]] = 1.0;
    sal[[50, 70]] = 1.0;
    let fix = [Point::new(10.0, 10.0), Point::new(70.0, 50.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // Negatives almost surely miss the two hot pixels; ties would count ½.
    assert!(auc_score(&sal, &fix, 10, &mut rng).unwrap() > 0.99);
    let flat = Grid::from_elem(DIMS.shape(), 0.3);
    assert_eq!(auc_score(&flat, &fix, 10, &mut rng).unwrap(), 0.5);
    assert!(matches!(auc_score(&flat, &[], 10, &mut rng), Err(EvalError::NoFixations)));
}

#[test]
fn auc_small_instance_matches_pair_counting() {
    let pos = [0.9, 0.4, 0.4];
    let neg = [0.1, 0.4, 0.95, 0.2, 0.4, 0.0];
    assert!((auc_from_scores(&pos, &neg) - pairwise_auc(&pos, &neg)).abs() < 1e-15);
}

fn gt_maps(videos: &[EvalVideo]) -> InMemory {
    let mut maps = BTreeMap::new();
    for v in videos {
        let frames = v
            .fixations
            .iter()
            .map(|f| densify(f, v.dims, 0.05).map(|m| m.into_grid()).unwrap_or_else(|_| Grid::zeros(v.dims.shape())))
            .collect();
        maps.insert(v.id.clone(), frames);
    }
    InMemory {
        name: "gt".into(),
        maps,
    }
}

fn corpus(center: Point, frames: usize) -> Vec<EvalVideo> {
    let fixations = (0..frames)
        .map(|f| {
            let jitter = (f % 3) as f64;
            FixationSet::new(vec![
                vec![Point::new(center.x + jitter, center.y)],
                vec![Point::new(center.x - 2.0, center.y + jitter)],
                vec![Point::new(center.x, center.y - 1.0)],
            ])
        })
        .collect();
    vec![EvalVideo {
        id: "v0".into(),
        dims: DIMS,
        fixations,
    }]
}

#[test]
fn ground_truth_scores_perfectly_against_itself() {
    let videos = corpus(Point::new(40.0, 30.0), 6);
    let gt = gt_maps(&videos);
    let report = evaluate_split(&[&gt], &videos, &[Metric::Auc, Metric::OneMinusChi2], &EvalConfig::default()).unwrap();
    for r in report.rows.iter().filter(|r| r.method == "gt") {
        match r.metric {
            Metric::OneMinusChi2 => assert!((r.value - 1.0).abs() < 1e-12),
            Metric::Auc => assert!(r.value > 0.95, "frame {}: {}", r.frame, r.value),
        }
    }
    assert!(report.rows.iter().any(|r| r.method == UPPER_BOUND_NAME));
}

#[test]
fn center_prior_prefers_center_fixations() {
    let cfg = EvalConfig::default();
    let metrics = [Metric::Auc, Metric::OneMinusChi2];
    let centered = evaluate_split(&[&CenterPrior], &corpus(DIMS.center(), 5), &metrics, &cfg).unwrap();
    let corner = evaluate_split(&[&CenterPrior], &corpus(Point::new(8.0, 8.0), 5), &metrics, &cfg).unwrap();
    for m in metrics {
        let a = centered.aggregate("center", m).unwrap().mean;
        let b = corner.aggregate("center", m).unwrap().mean;
        assert!(a > b, "{m:?}: {a} vs {b}");
    }
}

#[test]
fn frames_without_fixations_are_skipped() {
    let mut videos = corpus(DIMS.center(), 4);
    videos[0].fixations[2] = FixationSet::default();
    let report = evaluate_split(&[&UniformMap], &videos, &[Metric::Auc], &EvalConfig::default()).unwrap();
    let frames: Vec<usize> = report.rows.iter().filter(|r| r.method == "uniform").map(|r| r.frame).collect();
    assert_eq!(frames, vec![0, 1, 3]);
}

#[test]
fn missing_prediction_directory_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let source = PredictionDir::new(dir.path().join("nothing"));
    let err = evaluate_split(&[&source], &corpus(DIMS.center(), 2), &[Metric::Auc], &EvalConfig::default()).unwrap_err();
    assert!(matches!(err, EvalError::MissingPredictions(_)));
}

#[test]
fn prediction_dir_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let map = depthgaze::center_prior(DIMS).into_grid();
    write_map_png(&dir.path().join("pred/v0/000000.png"), &map).unwrap();
    let source = PredictionDir::new(dir.path().join("pred"));
    assert_eq!(source.name(), "pred");
    let back = source.map("v0", 0, DIMS).unwrap();
    for (a, b) in back.iter().zip(map.iter()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn report_csv_layout_and_recomputable_aggregates() {
    let videos = corpus(Point::new(50.0, 40.0), 5);
    let report = evaluate_split(&[&CenterPrior, &UniformMap], &videos, &[Metric::Auc, Metric::OneMinusChi2], &EvalConfig::default()).unwrap();
    let csv = report.to_csv();
    let mut blocks = csv.split("\n\n");
    let rows = blocks.next().unwrap();
    let summary = blocks.next().unwrap();
    assert!(rows.starts_with("method,video,frame,metric,value\n"));
    assert!(summary.starts_with("method,metric,mean,std\n"));

    let mut parsed: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for line in rows.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        parsed.entry((f[0].into(), f[3].into())).or_default().push(f[4].parse().unwrap());
    }
    for line in summary.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let v = &parsed[&(f[0].to_string(), f[1].to_string())];
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        assert!((mean - f[2].parse::<f64>().unwrap()).abs() < 1e-9);
        assert!((std - f[3].parse::<f64>().unwrap()).abs() < 1e-9);
    }

    let mut shuffled = report.clone();
    shuffled.rows.reverse();
    for a in report.aggregates() {
        let b = shuffled.aggregate(&a.method, a.metric).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-12 && (a.std - b.std).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chi2_symmetric_and_bounded(a in prop::collection::vec(0.0..1.0f64, 12), b in prop::collection::vec(0.0..1.0f64, 12)) {
        prop_assume!(a.iter().sum::<f64>() > 0.0 && b.iter().sum::<f64>() > 0.0);
        let ga = prob(Grid::from_shape_vec((3, 4), a).unwrap());
        let gb = prob(Grid::from_shape_vec((3, 4), b).unwrap());
        let ab = chi2_distance(&ga, &gb).unwrap();
        let ba = chi2_distance(&gb, &ga).unwrap();
        prop_assert!((ab - ba).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(chi2_distance(&ga, &ga).unwrap(), 0.0);
    }

    #[test]
    fn auc_matches_pair_counting(pos in prop::collection::vec(0u8..5, 1..8), neg in prop::collection::vec(0u8..5, 1..20)) {
        let pos: Vec<f64> = pos.into_iter().map(f64::from).collect();
        let neg: Vec<f64> = neg.into_iter().map(f64::from).collect();
        prop_assert!((auc_from_scores(&pos, &neg) - pairwise_auc(&pos, &neg)).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_to_monotone_transform(seed in 0u64..1000, xs in prop::collection::vec((0.0..127.0f64, 0.0..95.0f64), 1..6)) {
        let sal = Grid::from_shape_fn(DIMS.shape(), |(y, x)| ((x * 7 + y * 13) % 23) as f64 / 23.0);
        let warped = sal.mapv(|v| (3.0 * v).exp() + 2.0);
        let fix: Vec<Point> = xs.iter().map(|&(x, y)| Point::new(x, y)).collect();
        let a = auc_score(&sal, &fix, 10, &mut frame_rng(seed, 0)).unwrap();
        let b = auc_score(&warped, &fix, 10, &mut frame_rng(seed, 0)).unwrap();
        prop_assert_eq!(a, b);
    }
}
