mod common;

use common::rng;
use gnas::eval::{
    metrics_from_predictions, representation_similarity, sign_test, target_average, AblationReport, DomainFeatures,
    DomainMetrics, OpFrequencyReport, SweepReport, ABLATION_ORDER,
};
use gnas::linalg::{power_iteration, Matrix};
use gnas::search_space::{CellKind, OpKind, NUM_OPS};
use gnas::supernet::ArchParams;
use gnas::trainer::{RunReport, RunStatus, TrainConfig};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn features(domain: &str, rows: usize, scales: &[f64], shift: &[f64], r: &mut ChaCha8Rng) -> DomainFeatures {
    let mut values = Vec::with_capacity(rows * scales.len());
    for _ in 0..rows {
        for (s, m) in scales.iter().zip(shift) {
            values.push(m + s * r.random_range(-1.0..1.0));
        }
    }
    DomainFeatures { domain: domain.into(), dim: scales.len(), values }
}

fn covariance(f: &DomainFeatures) -> DMatrix<f64> {
    let x = DMatrix::from_row_slice(f.rows(), f.dim, &f.values);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(f.rows(), f.dim, |i, j| x[(i, j)] - mean[j]);
    centered.transpose() * &centered / (f.rows() - 1) as f64
}

/// Eigenpairs sorted by decreasing eigenvalue.
fn dense_eigen(cov: &DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let e = SymmetricEigen::new(cov.clone());
    let mut pairs: Vec<(f64, Vec<f64>)> =
        (0..cov.nrows()).map(|k| (e.eigenvalues[k], e.eigenvectors.column(k).iter().copied().collect())).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

fn sign_free_distance(a: &[f64], b: &[f64]) -> f64 {
    let plus = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let minus = a.iter().zip(b).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max);
    plus.min(minus)
}

#[test]
fn perfect_and_constant_predictors() {
    let y1 = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
    let y2 = [0.1, 0.2, -0.3, 0.4, 0.0, 0.0, 0.7, -0.7, 0.5, 0.5, -0.1, 0.0];
    let m = metrics_from_predictions("d", &y1, &y2, &y1, &y2, 0.15).unwrap();
    assert_eq!((m.accuracy, m.detection_score, m.reg_mse, m.n), (1.0, 1.0, 0.0, 6));

    let m = metrics_from_predictions("d", &[1.0; 6], &y2, &y1, &y2, 0.15).unwrap();
    assert_eq!(m.accuracy, 0.5);
    assert_eq!(m.detection_score, 0.5);
    // a logit of exactly zero is never correct
    let m = metrics_from_predictions("d", &[0.0; 6], &y2, &y1, &y2, 0.15).unwrap();
    assert_eq!(m.accuracy, 0.0);
    assert!(metrics_from_predictions("d", &[1.0; 5], &y2, &y1, &y2, 0.15).is_err());
}

#[test]
fn hand_built_split() {
    // example 0: right class, 0.1 off         -> detected
    // example 1: right class, 0.2 off         -> not detected
    // example 2: wrong class, exact position  -> not detected
    // example 3: right class, exact position  -> detected
    let y1 = [1.0, -1.0, 1.0, -1.0];
    let y2 = [0.0, 0.0, 0.5, 0.5, -0.5, 0.2, 0.3, -0.3];
    let p1 = [2.0, -0.1, -3.0, -1.0];
    let p2 = [0.1, -0.05, 0.5, 0.7, -0.5, 0.2, 0.3, -0.3];
    let m = metrics_from_predictions("hand", &p1, &p2, &y1, &y2, 0.15).unwrap();
    assert_eq!(m.accuracy, 0.75);
    assert_eq!(m.detection_score, 0.5);
    let sq = 0.01 + 0.0025 + 0.04;
    assert!((m.reg_mse - sq / 8.0).abs() < 1e-15);
    // a tighter tolerance loses example 0
    assert_eq!(metrics_from_predictions("hand", &p1, &p2, &y1, &y2, 0.1).unwrap().detection_score, 0.25);
}

proptest! {
    #[test]
    fn detection_never_exceeds_accuracy(
        rows in prop::collection::vec((any::<bool>(), -2.0..2.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..40),
        tau in 0.01..0.5f64,
    ) {
        let y1: Vec<f64> = rows.iter().map(|r| if r.0 { 1.0 } else { -1.0 }).collect();
        let p1: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let y2 = vec![0.0; 2 * rows.len()];
        let p2: Vec<f64> = rows.iter().flat_map(|r| [r.2, r.3]).collect();
        let m = metrics_from_predictions("p", &p1, &p2, &y1, &y2, tau).unwrap();
        prop_assert!(m.detection_score <= m.accuracy);
    }
}

#[test]
fn target_average_skips_source() {
    let m = |domain: &str, d: f64| DomainMetrics { domain: domain.into(), accuracy: 1.0, reg_mse: 0.0, detection_score: d, n: 1 };
    let metrics = [m("source_test", 1.0), m("T1", 0.1), m("T2", 0.2), m("T3", 0.3), m("T4", 0.4)];
    assert!((target_average(&metrics, |x| x.detection_score) - 0.25).abs() < 1e-15);
}

#[test]
fn pca_matches_dense_eigensolver() {
    let mut r = rng(11);
    for trial in 0..3 {
        let scales: Vec<f64> = (0..32).map(|k| 1.0 + 4.0 * (-(k as f64) / 4.0).exp() + 0.1 * trial as f64).collect();
        let src = features("source", 400, &scales, &[0.0; 32], &mut r);
        let cov = covariance(&src);
        let dense = dense_eigen(&cov);

        let report = representation_similarity(std::slice::from_ref(&src)).unwrap();
        assert_eq!(report.rank, 2);
        for k in 0..2 {
            assert!((report.eigenvalues[k] - dense[k].0).abs() < 1e-8 * dense[0].0, "trial {trial} eigenvalue {k}");
            let d = sign_free_distance(&report.components[k], &dense[k].1);
            assert!(d < 1e-8, "trial {trial} component {k}: {d:e}");
        }
    }
}

#[test]
fn power_iteration_on_random_covariances() {
    let mut r = rng(12);
    for _ in 0..5 {
        let a = DMatrix::from_fn(32, 32, |_, _| r.random_range(-1.0..1.0));
        let cov = &a * a.transpose();
        let m = Matrix::new(32, 32, cov.transpose().iter().copied().collect()).unwrap();
        let pairs = power_iteration(&m, 2, 1e-10, 10_000_000).unwrap();
        let dense = dense_eigen(&cov);
        for k in 0..2 {
            assert!((pairs[k].0 - dense[k].0).abs() < 1e-8 * dense[0].0);
            let d = sign_free_distance(&pairs[k].1, &dense[k].1);
            assert!(d < 1e-8, "component {k}: {d:e}");
        }
    }
}

#[test]
fn components_have_fixed_sign() {
    let mut r = rng(13);
    let src = features("source", 100, &[3.0, 2.0, 1.0, 0.5], &[0.0; 4], &mut r);
    let report = representation_similarity(&[src]).unwrap();
    for c in &report.components {
        let big = c.iter().copied().fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
        assert!(big > 0.0);
    }
}

#[test]
fn similarity_distances() {
    let mut r = rng(14);
    let scales = [3.0, 2.0, 1.0, 0.5, 0.2];
    let src = features("source", 200, &scales, &[0.0; 5], &mut r);
    let twin = DomainFeatures { domain: "twin".into(), ..src.clone() };
    let shifted = DomainFeatures {
        domain: "shifted".into(),
        values: src.values.iter().enumerate().map(|(i, v)| v + if i % 5 == 0 { 2.0 } else { 0.0 }).collect(),
        ..src.clone()
    };
    let report = representation_similarity(&[src, twin, shifted]).unwrap();
    assert_eq!(report.domains[1].distance, 0.0);
    // the shift lies along the leading axis, so it shows up in full
    assert!((report.domains[2].distance - 2.0).abs() < 1e-3, "{}", report.domains[2].distance);
    assert!((report.mean_target_distance - report.domains[2].distance / 2.0).abs() < 1e-15);
    assert_eq!(report.scatter.len(), 600);
}

#[test]
fn degenerate_covariance_is_reported() {
    let rows: Vec<f64> = (0..20).flat_map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
    let src = DomainFeatures { domain: "source".into(), dim: 3, values: rows.clone() };
    let other = DomainFeatures { domain: "t".into(), dim: 3, values: rows.iter().map(|v| v + 1.0).collect() };
    let report = representation_similarity(&[src, other]).unwrap();
    assert_eq!(report.rank, 1);
    assert_eq!(report.domains[1].centroid.len(), 1);
    assert!((report.domains[1].distance - 3.0 / 5f64.sqrt()).abs() < 1e-9);
}

#[test]
fn sign_test_binomial_tail() {
    let t = sign_test(&[0.1; 5]);
    assert!(t.p_value < 0.05);
    let t = sign_test(&[0.1, 0.2, 0.3, 0.4, -0.1]);
    assert!((t.p_value - 6.0 / 32.0).abs() < 1e-15);
    let t = sign_test(&[-1.0; 8]);
    assert_eq!(t.p_value, 1.0);
}

fn fake_report(cfg: TrainConfig, detection: Option<f64>) -> RunReport {
    let mut r = RunReport::new(&cfg, "hash");
    match detection {
        Some(d) => r.target_detection = Some(d),
        None => r.status = RunStatus::Aborted,
    }
    r
}

#[test]
fn sweep_aggregation() {
    let base = TrainConfig::default();
    let runs: Vec<RunReport> = [(0.0, 0, Some(0.1)), (0.0, 1, Some(0.3)), (1.0, 0, Some(0.5)), (1.0, 1, None), (1.0, 2, Some(0.7))]
        .into_iter()
        .map(|(lambda_g, seed, d)| fake_report(TrainConfig { lambda_g, seed, ..base.clone() }, d))
        .collect();
    let report = SweepReport::from_runs(&[0.0, 1.0, 10.0], &runs);
    let zero = report.row(0.0).unwrap();
    assert!((zero.mean - 0.2).abs() < 1e-15 && (zero.sd - 0.02f64.sqrt()).abs() < 1e-15);
    let one = report.row(1.0).unwrap();
    assert_eq!((one.completed, one.aborted), (2, 1));
    assert_eq!(one.scores, vec![(0, 0.5), (2, 0.7)]);
    assert!(report.row(10.0).unwrap().mean.is_nan());

    let dir = tempfile::tempdir().unwrap();
    report.write_csv(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn ablation_aggregation() {
    let base = TrainConfig::default();
    let mut runs = Vec::new();
    for (cell, &(enable_nas, enable_gloss)) in ABLATION_ORDER.iter().enumerate() {
        for seed in 0..5u64 {
            let d = 0.1 * cell as f64 + 0.01 * seed as f64;
            runs.push(fake_report(TrainConfig { enable_nas, enable_gloss, seed, ..base.clone() }, Some(d)));
        }
    }
    let report = AblationReport::from_runs(&runs);
    assert_eq!(report.cells.len(), 4);
    assert!((report.cell(true, true).mean - 0.32).abs() < 1e-12);
    assert!((report.cell(false, false).mean - 0.02).abs() < 1e-12);
    for (_, t) in &report.gloss_effect {
        assert_eq!(t.positive, 5);
        assert!(t.p_value < 0.05);
    }
}

#[test]
fn op_frequencies() {
    let mut r = rng(15);
    let genotypes: Vec<_> = (0..3u64)
        .map(|seed| {
            let arch = ArchParams::<f64>::random(4, &mut r);
            (seed, arch.discretize().unwrap())
        })
        .collect();
    let report = OpFrequencyReport::from_genotypes(&genotypes);
    assert_eq!(report.rows.len(), NUM_OPS * 2 * 3);
    for seed in 0..3 {
        for cell in [CellKind::Normal, CellKind::Reduction] {
            let sum: f64 = report.rows.iter().filter(|x| x.seed == seed && x.cell == cell).map(|x| x.fraction).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    let same: Vec<_> = (0..3u64).map(|s| (s, genotypes[0].1.clone())).collect();
    let report = OpFrequencyReport::from_genotypes(&same);
    for op in 0..NUM_OPS {
        let op = OpKind::from_index(op).unwrap();
        let fr: Vec<f64> = report.rows.iter().filter(|x| x.op == op && x.cell == CellKind::Normal).map(|x| x.fraction).collect();
        assert!(fr.iter().all(|&f| f == fr[0]));
    }
}
