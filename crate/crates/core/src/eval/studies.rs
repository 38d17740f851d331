//! Multi-run studies. Every table is a pure function of run reports, so the
//! same code aggregates fresh runs and saved run directories.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::{Benchmark, Split};
use crate::search_space::{CellKind, OpKind, NUM_OPS};
use crate::supernet::Genotype;
use crate::trainer::{run_pipeline, search_stage, write_run_dir, RunReport, TrainConfig, TrainError};

/// Runs `jobs` independent pipelines at a time. Results come back in input
/// order; each run with a directory gets its artifacts written there.
pub fn run_many(
    runs: &[(TrainConfig, Option<PathBuf>)],
    bench: &Benchmark,
    dataset_hash: &str,
    jobs: usize,
) -> Result<Vec<RunReport>, TrainError> {
    parallel_map(runs.len(), jobs, |i| {
        let (cfg, dir) = &runs[i];
        let outcome = run_pipeline(cfg, bench, dataset_hash)?;
        if let Some(d) = dir {
            write_run_dir(d, &outcome)?;
        }
        Ok(outcome.report)
    })
}

fn parallel_map<R: Send>(
    n: usize,
    jobs: usize,
    f: impl Fn(usize) -> Result<R, TrainError> + Sync,
) -> Result<Vec<R>, TrainError> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R, TrainError>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("lock").into_iter().map(|r| r.expect("every slot filled")).collect()
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub positive: usize,
    pub negative: usize,
    pub ties: usize,
    /// One-sided `P(X ≥ positive)` for `X ~ Binomial(positive + negative, ½)`.
    pub p_value: f64,
}

/// One-sided sign test for a positive median difference. Ties are dropped.
pub fn sign_test(diffs: &[f64]) -> SignTest {
    let positive = diffs.iter().filter(|&&d| d > 0.0).count();
    let negative = diffs.iter().filter(|&&d| d < 0.0).count();
    let ties = diffs.len() - positive - negative;
    let n = positive + negative;
    let mut tail = 0.0;
    let mut c = 1.0f64;
    for k in 0..=n {
        if k >= positive {
            tail += c;
        }
        c = c * (n - k) as f64 / (k + 1) as f64;
    }
    SignTest { positive, negative, ties, p_value: tail / 2f64.powi(n as i32) }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda_g: f64,
    pub mean: f64,
    pub sd: f64,
    pub completed: usize,
    pub aborted: usize,
    /// `(seed, target-average detection score)`; aborted runs are absent.
    pub scores: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Groups runs by their configured λ_g, in the order of `values`.
    pub fn from_runs(values: &[f64], runs: &[RunReport]) -> Self {
        let rows = values
            .iter()
            .map(|&l| {
                let group: Vec<&RunReport> = runs.iter().filter(|r| r.config.lambda_g == l).collect();
                let scores: Vec<(u64, f64)> =
                    group.iter().filter_map(|r| r.target_detection.filter(|_| r.completed()).map(|d| (r.seed, d))).collect();
                let vals: Vec<f64> = scores.iter().map(|s| s.1).collect();
                let (mean, sd) = mean_sd(&vals);
                SweepRow { lambda_g: l, mean, sd, completed: scores.len(), aborted: group.len() - scores.len(), scores }
            })
            .collect();
        Self { rows }
    }

    pub fn row(&self, lambda_g: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.lambda_g == lambda_g)
    }

    pub fn write_csv(&self, dir: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
        w.write_record(["lambda_g", "mean", "sd", "completed", "aborted"])?;
        for r in &self.rows {
            w.write_record([r.lambda_g, r.mean, r.sd, r.completed as f64, r.aborted as f64].map(|v| v.to_string()))?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("sweep_points.csv"))?;
        w.write_record(["lambda_g", "seed", "score"])?;
        for r in &self.rows {
            for (seed, s) in &r.scores {
                w.write_record([r.lambda_g.to_string(), seed.to_string(), s.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// One config per (λ_g, seed), λ-major.
pub fn sweep_configs(base: &TrainConfig, values: &[f64], seeds: &[u64]) -> Vec<TrainConfig> {
    values
        .iter()
        .flat_map(|&lambda_g| seeds.iter().map(move |&seed| TrainConfig { lambda_g, seed, ..base.clone() }))
        .collect()
}

pub fn lambda_sweep(
    base: &TrainConfig,
    values: &[f64],
    seeds: &[u64],
    bench: &Benchmark,
    dataset_hash: &str,
    jobs: usize,
    out: Option<&Path>,
) -> Result<(SweepReport, Vec<RunReport>), TrainError> {
    let runs: Vec<(TrainConfig, Option<PathBuf>)> = sweep_configs(base, values, seeds)
        .into_iter()
        .map(|c| {
            let dir = out.map(|o| o.join(format!("lambda_{}", c.lambda_g)).join(format!("seed_{}", c.seed)));
            (c, dir)
        })
        .collect();
    let reports = run_many(&runs, bench, dataset_hash, jobs)?;
    Ok((SweepReport::from_runs(values, &reports), reports))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub enable_nas: bool,
    pub enable_gloss: bool,
    pub mean: f64,
    pub sd: f64,
    pub completed: usize,
    pub aborted: usize,
    pub scores: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// Cells in the order (✗✗, ✗✓, ✓✗, ✓✓) as (NAS, G-loss).
    pub cells: Vec<AblationCell>,
    /// Seed-paired sign test of G-loss on minus off, per NAS setting (off, on).
    pub gloss_effect: Vec<(bool, SignTest)>,
}

pub const ABLATION_ORDER: [(bool, bool); 4] = [(false, false), (false, true), (true, false), (true, true)];

impl AblationReport {
    pub fn from_runs(runs: &[RunReport]) -> Self {
        let cells: Vec<AblationCell> = ABLATION_ORDER
            .iter()
            .map(|&(nas, gloss)| {
                let group: Vec<&RunReport> = runs
                    .iter()
                    .filter(|r| r.config.enable_nas == nas && r.config.enable_gloss == gloss)
                    .collect();
                let scores: Vec<(u64, f64)> =
                    group.iter().filter_map(|r| r.target_detection.filter(|_| r.completed()).map(|d| (r.seed, d))).collect();
                let vals: Vec<f64> = scores.iter().map(|s| s.1).collect();
                let (mean, sd) = mean_sd(&vals);
                AblationCell {
                    enable_nas: nas,
                    enable_gloss: gloss,
                    mean,
                    sd,
                    completed: scores.len(),
                    aborted: group.len() - scores.len(),
                    scores,
                }
            })
            .collect();
        let gloss_effect = [false, true]
            .iter()
            .map(|&nas| {
                let off = &cells.iter().find(|c| c.enable_nas == nas && !c.enable_gloss).expect("cell").scores;
                let on = &cells.iter().find(|c| c.enable_nas == nas && c.enable_gloss).expect("cell").scores;
                let diffs: Vec<f64> = on
                    .iter()
                    .filter_map(|(seed, s)| off.iter().find(|(k, _)| k == seed).map(|(_, o)| s - o))
                    .collect();
                (nas, sign_test(&diffs))
            })
            .collect();
        Self { cells, gloss_effect }
    }

    pub fn cell(&self, enable_nas: bool, enable_gloss: bool) -> &AblationCell {
        self.cells.iter().find(|c| c.enable_nas == enable_nas && c.enable_gloss == enable_gloss).expect("all cells")
    }

    pub fn write_csv(&self, dir: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(dir.join("ablation.csv"))?;
        w.write_record(["enable_nas", "enable_gloss", "mean", "sd", "completed", "aborted"])?;
        for c in &self.cells {
            w.write_record([
                c.enable_nas.to_string(),
                c.enable_gloss.to_string(),
                c.mean.to_string(),
                c.sd.to_string(),
                c.completed.to_string(),
                c.aborted.to_string(),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("ablation_sign_test.csv"))?;
        w.write_record(["enable_nas", "positive", "negative", "ties", "p_value"])?;
        for (nas, t) in &self.gloss_effect {
            w.write_record([
                nas.to_string(),
                t.positive.to_string(),
                t.negative.to_string(),
                t.ties.to_string(),
                t.p_value.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One config per (grid cell, seed), cell-major in [`ABLATION_ORDER`].
pub fn ablation_configs(base: &TrainConfig, seeds: &[u64]) -> Vec<TrainConfig> {
    ABLATION_ORDER
        .iter()
        .flat_map(|&(enable_nas, enable_gloss)| {
            seeds.iter().map(move |&seed| TrainConfig { enable_nas, enable_gloss, seed, ..base.clone() })
        })
        .collect()
}

pub fn ablation_grid(
    base: &TrainConfig,
    seeds: &[u64],
    bench: &Benchmark,
    dataset_hash: &str,
    jobs: usize,
    out: Option<&Path>,
) -> Result<(AblationReport, Vec<RunReport>), TrainError> {
    let runs: Vec<(TrainConfig, Option<PathBuf>)> = ablation_configs(base, seeds)
        .into_iter()
        .map(|c| {
            let cell = format!("nas_{}_gloss_{}", c.enable_nas as u8, c.enable_gloss as u8);
            let dir = out.map(|o| o.join(cell).join(format!("seed_{}", c.seed)));
            (c, dir)
        })
        .collect();
    let reports = run_many(&runs, bench, dataset_hash, jobs)?;
    Ok((AblationReport::from_runs(&reports), reports))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpFrequencyRow {
    pub seed: u64,
    pub cell: CellKind,
    pub op: OpKind,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpFrequencyReport {
    pub rows: Vec<OpFrequencyRow>,
}

impl OpFrequencyReport {
    /// Seven rows per (seed, cell kind), fractions over retained edges.
    pub fn from_genotypes(genotypes: &[(u64, Genotype)]) -> Self {
        let mut rows = Vec::with_capacity(genotypes.len() * 2 * NUM_OPS);
        for (seed, g) in genotypes {
            for cell in [CellKind::Normal, CellKind::Reduction] {
                let counts = g.op_counts(cell);
                let total: usize = counts.iter().sum();
                for (k, &count) in counts.iter().enumerate() {
                    rows.push(OpFrequencyRow {
                        seed: *seed,
                        cell,
                        op: OpKind::from_index(k).expect("op index"),
                        count,
                        fraction: count as f64 / total as f64,
                    });
                }
            }
        }
        Self { rows }
    }

    pub fn write_csv(&self, dir: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(dir.join("op_frequency.csv"))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Search plus discretization per seed; no augment stage.
pub fn arch_stability(
    base: &TrainConfig,
    seeds: &[u64],
    train: &Split,
    jobs: usize,
) -> Result<(OpFrequencyReport, Vec<(u64, Genotype)>), TrainError> {
    let genotypes = parallel_map(seeds.len(), jobs, |i| {
        let cfg = TrainConfig { seed: seeds[i], ..base.clone() };
        Ok((seeds[i], search_stage::<f64>(train, &cfg)?.genotype))
    })?;
    Ok((OpFrequencyReport::from_genotypes(&genotypes), genotypes))
}
