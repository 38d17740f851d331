//! Per-domain metrics, representation similarity, and multi-run studies.

mod studies;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use studies::{
    ablation_configs, ablation_grid, arch_stability, lambda_sweep, run_many, sign_test, sweep_configs, AblationCell,
    AblationReport, OpFrequencyReport, OpFrequencyRow, SignTest, SweepReport, SweepRow, ABLATION_ORDER,
};

use crate::data::Split;
use crate::linalg::{power_iteration, LinalgError, Matrix};
use crate::scalar::Scalar;
use crate::supernet::{NetError, Network};

/// Default localisation tolerance for the detection score.
pub const DEFAULT_TAU: f64 = 0.15;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub domain: String,
    pub accuracy: f64,
    pub reg_mse: f64,
    pub detection_score: f64,
    pub n: usize,
}

/// Metrics from raw predictions. A logit of exactly zero counts as wrong.
/// `reg_mse` averages the squared error over examples and both components.
pub fn metrics_from_predictions(
    domain: &str,
    y_hat1: &[f64],
    y_hat2: &[f64],
    y1: &[f64],
    y2: &[f64],
    tau: f64,
) -> Result<DomainMetrics, EvalError> {
    let n = y1.len();
    if n == 0 || y_hat1.len() != n || y_hat2.len() != 2 * n || y2.len() != 2 * n {
        return Err(EvalError::Invalid(format!(
            "{domain}: {} logits, {} positions for {n} examples",
            y_hat1.len(),
            y_hat2.len()
        )));
    }
    let mut correct = 0usize;
    let mut detected = 0usize;
    let mut sq = 0.0;
    for i in 0..n {
        let ok = y_hat1[i] * y1[i] > 0.0;
        let dx = y_hat2[2 * i] - y2[2 * i];
        let dy = y_hat2[2 * i + 1] - y2[2 * i + 1];
        sq += dx * dx + dy * dy;
        correct += ok as usize;
        detected += (ok && dx.abs().max(dy.abs()) < tau) as usize;
    }
    Ok(DomainMetrics {
        domain: domain.to_string(),
        accuracy: correct as f64 / n as f64,
        reg_mse: sq / (2 * n) as f64,
        detection_score: detected as f64 / n as f64,
        n,
    })
}

/// Evaluates `net` on a whole split in one deterministic pass.
pub fn evaluate_domain<T: Scalar>(net: &Network<T>, split: &Split, tau: f64) -> Result<DomainMetrics, EvalError> {
    if split.is_empty() {
        return Err(EvalError::Invalid(format!("split {} is empty", split.name)));
    }
    let images = split.images.cast::<T>();
    let out = net.predict(&images, 250)?;
    let y1: Vec<f64> = out.y_hat1.iter().map(|v| v.as_f64()).collect();
    let y2: Vec<f64> = out.y_hat2.iter().map(|v| v.as_f64()).collect();
    metrics_from_predictions(&split.name, &y1, &y2, &split.y1, &split.y2, tau)
}

/// Mean over the target domains only, i.e. every entry but the source one.
pub fn target_average(metrics: &[DomainMetrics], f: impl Fn(&DomainMetrics) -> f64) -> f64 {
    let targets: Vec<f64> = metrics.iter().filter(|m| !m.domain.starts_with("source")).map(f).collect();
    if targets.is_empty() {
        return f64::NAN;
    }
    targets.iter().sum::<f64>() / targets.len() as f64
}

pub fn write_metrics_csv(path: &Path, metrics: &[DomainMetrics]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for m in metrics {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}

/// Features of one domain, row-major `[n, dim]`.
#[derive(Clone, Debug)]
pub struct DomainFeatures {
    pub domain: String,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl DomainFeatures {
    pub fn rows(&self) -> usize {
        self.values.len() / self.dim.max(1)
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn extract_features<T: Scalar>(net: &Network<T>, split: &Split, examples: usize) -> Result<DomainFeatures, EvalError> {
    let sub = split.head(examples);
    let out = net.predict(&sub.images.cast::<T>(), 250)?;
    Ok(DomainFeatures {
        domain: split.name.clone(),
        dim: out.feature_dim,
        values: out.features.iter().map(|v| v.as_f64()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainProjection {
    pub domain: String,
    pub centroid: Vec<f64>,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub domain: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    /// Number of principal components found (2 unless the source covariance is degenerate).
    pub rank: usize,
    pub eigenvalues: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub domains: Vec<DomainProjection>,
    /// Mean centroid distance over the non-source domains.
    pub mean_target_distance: f64,
    #[serde(skip)]
    pub scatter: Vec<ScatterPoint>,
}

/// Tolerance of the power iteration used for principal directions.
pub const PCA_TOL: f64 = 1e-10;

/// Projects every domain onto the top-2 principal plane of the source
/// features and measures centroid distances to the source centroid there.
/// `domains[0]` is the source.
pub fn representation_similarity(domains: &[DomainFeatures]) -> Result<SimilarityReport, EvalError> {
    let source = domains.first().ok_or_else(|| EvalError::Invalid("no domains".into()))?;
    let d = source.dim;
    let n = source.rows();
    if n < 2 || domains.iter().any(|f| f.dim != d || f.values.len() % d.max(1) != 0) {
        return Err(EvalError::Invalid("feature sets must share a dimension and the source needs 2+ rows".into()));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(source.row(i)) {
            *m += v / n as f64;
        }
    }
    let mut cov = Matrix::zeros(d, d);
    for i in 0..n {
        let r: Vec<f64> = source.row(i).iter().zip(&mean).map(|(v, m)| v - m).collect();
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += r[a] * r[b] / (n - 1) as f64;
            }
        }
    }
    let pairs = power_iteration(&cov, 2, PCA_TOL, 2_000_000)?;
    let components: Vec<Vec<f64>> = pairs.iter().map(|(_, v)| v.clone()).collect();
    let project = |row: &[f64]| -> Vec<f64> {
        components.iter().map(|c| c.iter().zip(row).zip(&mean).map(|((c, v), m)| c * (v - m)).sum()).collect()
    };
    let mut scatter = Vec::new();
    let mut centroids = Vec::new();
    for f in domains {
        let mut centroid = vec![0.0; components.len()];
        for i in 0..f.rows() {
            let p = project(f.row(i));
            for (c, v) in centroid.iter_mut().zip(&p) {
                *c += v / f.rows() as f64;
            }
            scatter.push(ScatterPoint {
                domain: f.domain.clone(),
                x: p.first().copied().unwrap_or(0.0),
                y: p.get(1).copied().unwrap_or(0.0),
            });
        }
        centroids.push(centroid);
    }
    let src = centroids[0].clone();
    let projections: Vec<DomainProjection> = domains
        .iter()
        .zip(centroids)
        .map(|(f, c)| {
            let distance = c.iter().zip(&src).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            DomainProjection { domain: f.domain.clone(), centroid: c, distance }
        })
        .collect();
    let targets: Vec<f64> = projections[1..].iter().map(|p| p.distance).collect();
    let mean_target_distance =
        if targets.is_empty() { 0.0 } else { targets.iter().sum::<f64>() / targets.len() as f64 };
    Ok(SimilarityReport {
        rank: components.len(),
        eigenvalues: pairs.iter().map(|(l, _)| *l).collect(),
        components,
        domains: projections,
        mean_target_distance,
        scatter,
    })
}

pub fn write_similarity_csv(dir: &Path, report: &SimilarityReport) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(dir.join("similarity.csv"))?;
    w.write_record(["domain", "centroid_x", "centroid_y", "distance"])?;
    for p in &report.domains {
        let get = |k: usize| p.centroid.get(k).map_or(String::from("0"), |v| v.to_string());
        w.write_record([p.domain.clone(), get(0), get(1), p.distance.to_string()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("scatter.csv"))?;
    for p in &report.scatter {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
