//! Two-stage training: joint search of weights and architecture logits,
//! discretization, then retraining the discrete network from scratch.
//!
//! A run directory contains:
//!
//! ```text
//! config.json      effective TrainConfig
//! genotype.json    discretized architecture
//! curves.csv       stage, epoch, cls, reg, g, total (epoch means)
//! metrics.csv      domain, accuracy, reg_mse, detection_score, n
//! similarity.csv   domain, centroid_x, centroid_y, distance
//! scatter.csv      domain, x, y
//! checkpoint.bin   final parameters, layout below
//! report.json      RunReport, the only file with wall-clock time
//! ```
//!
//! Checkpoint layout, little-endian:
//!
//! ```text
//! magic "GNASCK01", value width u64 (4 or 8), parameter count u64
//! per parameter: name length u64, name bytes, group u8 (0 backbone, 1 head, 2 arch),
//!                rank u64, dims u64 each, values
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{forward_backward, sgd_step, AutodiffError, ParamGroup, ParamStore, Tape};
use crate::data::{BatchSampler, Benchmark, Split};
use crate::eval::{
    evaluate_domain, extract_features, representation_similarity, target_average, write_metrics_csv,
    write_similarity_csv, DomainMetrics, EvalError, SimilarityReport, DEFAULT_TAU,
};
use crate::losses::{train_loss, LossBreakdown};
use crate::scalar::Scalar;
use crate::supernet::{ArchParams, Genotype, GenotypeError, NetConfig, NetError, Network, RegressionInput};
use crate::tensor::Tensor;

/// Loss magnitude above which a run is aborted.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Genotype(#[from] GenotypeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Diverged(Box<Divergence>),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_g: f64,
    pub lr: f64,
    pub epochs_search: usize,
    pub epochs_augment: usize,
    pub batch_size: usize,
    pub channels: usize,
    pub nodes: usize,
    pub seed: u64,
    /// Train δ in the search stage; when off δ stays at its random init.
    pub enable_nas: bool,
    /// Apply the G-loss at all; off means λ_g is treated as 0 everywhere.
    pub enable_gloss: bool,
    /// Keep the G-loss during the augment stage.
    pub gloss_in_augment: bool,
    pub regression: RegressionInput,
    /// Localisation tolerance of the detection score.
    pub tau: f64,
    /// Examples per domain for the similarity analysis.
    pub similarity_examples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_g: 1.0,
            lr: 0.02,
            epochs_search: 12,
            epochs_augment: 12,
            batch_size: 32,
            channels: 8,
            nodes: 4,
            seed: 0,
            enable_nas: true,
            enable_gloss: true,
            gloss_in_augment: true,
            regression: RegressionInput::Spatial,
            tau: DEFAULT_TAU,
            similarity_examples: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs_search == 0 || self.epochs_augment == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lambda_g >= 0.0 && self.lambda_g.is_finite()) {
            return bad(format!("lambda_g must be non-negative, got {}", self.lambda_g));
        }
        if self.batch_size == 0 || self.channels == 0 || self.nodes == 0 || self.similarity_examples < 2 {
            return bad("batch_size, channels, nodes must be positive and similarity_examples at least 2".into());
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        Ok(())
    }

    pub fn net_config(&self, image_size: usize) -> NetConfig {
        NetConfig {
            channels: self.channels,
            nodes: self.nodes,
            image_size,
            regression: self.regression,
            ..NetConfig::default()
        }
    }

    /// λ_g actually applied in `stage`.
    pub fn effective_lambda(&self, stage: Stage) -> f64 {
        match stage {
            _ if !self.enable_gloss => 0.0,
            Stage::Augment if !self.gloss_in_augment => 0.0,
            _ => self.lambda_g,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Search,
    Augment,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Search => "search",
            Stage::Augment => "augment",
        }
    }

    fn groups(self, enable_nas: bool) -> &'static [ParamGroup] {
        match self {
            Stage::Search if enable_nas => &[ParamGroup::Backbone, ParamGroup::Head, ParamGroup::Arch],
            _ => &[ParamGroup::Backbone, ParamGroup::Head],
        }
    }
}

/// Derived seed for one role within a run; roles never share a stream.
pub fn derive_seed(seed: u64, role: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(role.wrapping_mul(0xD1B5_4A32_D192_ED03)) ^ role
}

pub const ROLE_SEARCH_INIT: u64 = 1;
pub const ROLE_SEARCH_BATCHES: u64 = 2;
pub const ROLE_AUGMENT_INIT: u64 = 3;
pub const ROLE_AUGMENT_BATCHES: u64 = 4;

/// Epoch means of the loss terms, weighted by batch size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub stage: Stage,
    pub epoch: usize,
    pub cls: f64,
    pub reg: f64,
    pub g: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub stage: Stage,
    pub epoch: usize,
    pub batch: usize,
    pub breakdown: LossBreakdown,
    /// Completed epochs before the trip.
    pub curve: Vec<EpochLoss>,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b = &self.breakdown;
        write!(
            f,
            "{} stage diverged at epoch {} batch {}: total {:e} (cls {:e}, reg {:e}, g {:e}, lambda_g {})",
            self.stage.name(),
            self.epoch,
            self.batch,
            b.total,
            b.cls,
            b.reg,
            b.g,
            b.lambda_g
        )
    }
}

struct StageRun {
    curve: Vec<EpochLoss>,
    regime_violations: usize,
}

fn check_split(train: &Split, net: &NetConfig) -> Result<(), TrainError> {
    if train.is_empty() {
        return Err(TrainError::Config(format!("training split {} is empty", train.name)));
    }
    if train.images.shape()[1..] != [net.in_channels, net.image_size, net.image_size] {
        return Err(TrainError::Config(format!("training images have shape {:?}", train.images.shape())));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_epochs<T: Scalar>(
    net: &mut Network<T>,
    train: &Split,
    stage: Stage,
    epochs: usize,
    groups: &[ParamGroup],
    lambda_g: f64,
    lr: f64,
    batch_size: usize,
    batch_seed: u64,
) -> Result<StageRun, TrainError> {
    let mut sampler = BatchSampler::new(train.len(), batch_size, batch_seed);
    let mut curve = Vec::with_capacity(epochs);
    let mut regime_violations = 0;
    let lr = T::lit(lr);
    for epoch in 0..epochs {
        let mut sums = [0.0; 4];
        for (b, idx) in sampler.epoch().into_iter().enumerate() {
            let (images, y1, y2) = train.gather::<T>(&idx);
            let mut tape = Tape::new();
            let bindings = net.params().bind(&mut tape, groups);
            let pred = net.forward(&mut tape, &bindings, &images, None)?;
            let loss = train_loss(&mut tape, pred.y_hat1, pred.y_hat2, &y1, &y2, lambda_g)?;
            let lb = loss.breakdown;
            if !lb.total.is_finite() || lb.total.abs() > DIVERGENCE_LIMIT {
                return Err(TrainError::Diverged(Box::new(Divergence { stage, epoch, batch: b, breakdown: lb, curve })));
            }
            regime_violations += loss.regime_violations;
            let w = idx.len() as f64;
            for (s, v) in sums.iter_mut().zip([lb.cls, lb.reg, lb.g, lb.total]) {
                *s += w * v;
            }
            let grads = forward_backward(&tape, loss.total, &bindings)?;
            sgd_step(net.params_mut(), &grads, lr, groups)?;
        }
        let n = train.len() as f64;
        curve.push(EpochLoss {
            stage,
            epoch,
            cls: sums[0] / n,
            reg: sums[1] / n,
            g: sums[2] / n,
            total: sums[3] / n,
        });
    }
    Ok(StageRun { curve, regime_violations })
}

pub struct SearchOutcome<T> {
    /// Supernet holding θ, ω and the final δ.
    pub net: Network<T>,
    pub arch_params: ArchParams<T>,
    pub genotype: Genotype,
    pub curve: Vec<EpochLoss>,
    pub regime_violations: usize,
}

/// Joint SGD on θ, ω and (with NAS on) δ, then discretization.
pub fn search_stage<T: Scalar>(train: &Split, cfg: &TrainConfig) -> Result<SearchOutcome<T>, TrainError> {
    cfg.validate()?;
    let net_cfg = cfg.net_config(train.image_size());
    check_split(train, &net_cfg)?;
    let mut net = Network::<T>::supernet(net_cfg, derive_seed(cfg.seed, ROLE_SEARCH_INIT))?;
    let run = train_epochs(
        &mut net,
        train,
        Stage::Search,
        cfg.epochs_search,
        Stage::Search.groups(cfg.enable_nas),
        cfg.effective_lambda(Stage::Search),
        cfg.lr,
        cfg.batch_size,
        derive_seed(cfg.seed, ROLE_SEARCH_BATCHES),
    )?;
    let arch_params = net.arch_params().expect("supernet has arch params");
    let genotype = arch_params.discretize()?;
    Ok(SearchOutcome { net, arch_params, genotype, curve: run.curve, regime_violations: run.regime_violations })
}

/// The architecture a search would produce without training δ.
pub fn initial_genotype(cfg: &TrainConfig, image_size: usize) -> Result<Genotype, TrainError> {
    let net = Network::<f64>::supernet(cfg.net_config(image_size), derive_seed(cfg.seed, ROLE_SEARCH_INIT))?;
    Ok(net.arch_params().expect("supernet has arch params").discretize()?)
}

pub struct AugmentOutcome<T> {
    pub net: Network<T>,
    pub curve: Vec<EpochLoss>,
    pub regime_violations: usize,
}

/// Rebuilds the genotype with fresh parameters and trains θ and ω.
pub fn augment_stage<T: Scalar>(
    train: &Split,
    genotype: &Genotype,
    cfg: &TrainConfig,
) -> Result<AugmentOutcome<T>, TrainError> {
    cfg.validate()?;
    let net_cfg = cfg.net_config(train.image_size());
    check_split(train, &net_cfg)?;
    let mut net = Network::<T>::reconstruct(genotype, net_cfg, derive_seed(cfg.seed, ROLE_AUGMENT_INIT))?;
    let run = train_epochs(
        &mut net,
        train,
        Stage::Augment,
        cfg.epochs_augment,
        Stage::Augment.groups(false),
        cfg.effective_lambda(Stage::Augment),
        cfg.lr,
        cfg.batch_size,
        derive_seed(cfg.seed, ROLE_AUGMENT_BATCHES),
    )?;
    Ok(AugmentOutcome { net, curve: run.curve, regime_violations: run.regime_violations })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeCounts {
    pub search: usize,
    pub augment: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub status: RunStatus,
    pub diagnostic: Option<String>,
    pub config: TrainConfig,
    pub seed: u64,
    pub dataset_hash: String,
    pub genotype: Option<Genotype>,
    pub curves: Vec<EpochLoss>,
    pub metrics: Vec<DomainMetrics>,
    /// Mean detection score over the target domains; `None` for aborted runs.
    pub target_detection: Option<f64>,
    pub target_accuracy: Option<f64>,
    pub similarity: Option<SimilarityReport>,
    pub regime_violations: RegimeCounts,
    pub param_hash: Option<String>,
    pub wall_clock_secs: f64,
}

impl RunReport {
    /// An empty completed report for `cfg`; stages fill it in.
    pub fn new(cfg: &TrainConfig, dataset_hash: &str) -> Self {
        Self {
            status: RunStatus::Completed,
            diagnostic: None,
            config: cfg.clone(),
            seed: cfg.seed,
            dataset_hash: dataset_hash.to_string(),
            genotype: None,
            curves: Vec::new(),
            metrics: Vec::new(),
            target_detection: None,
            target_accuracy: None,
            similarity: None,
            regime_violations: RegimeCounts::default(),
            param_hash: None,
            wall_clock_secs: 0.0,
        }
    }

    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// A finished run: its report plus the trained model when there is one.
pub struct RunOutcome {
    pub report: RunReport,
    pub model: Option<Network<f64>>,
}

/// Search, discretize, augment, evaluate. A divergence yields an aborted
/// report, not an error.
pub fn run_pipeline(cfg: &TrainConfig, bench: &Benchmark, dataset_hash: &str) -> Result<RunOutcome, TrainError> {
    let mut outcome = train_run(cfg, &bench.source_train, dataset_hash)?;
    evaluate_run(&mut outcome, &bench.eval_splits())?;
    Ok(outcome)
}

/// The training half of a pipeline; it sees the source training split only.
pub fn train_run(cfg: &TrainConfig, train: &Split, dataset_hash: &str) -> Result<RunOutcome, TrainError> {
    let start = Instant::now();
    let mut report = RunReport::new(cfg, dataset_hash);
    let abort = |mut report: RunReport, d: Box<Divergence>| -> Result<RunOutcome, TrainError> {
        report.status = RunStatus::Aborted;
        report.diagnostic = Some(d.to_string());
        report.curves.extend(d.curve);
        report.wall_clock_secs = start.elapsed().as_secs_f64();
        Ok(RunOutcome { report, model: None })
    };

    let search = match search_stage::<f64>(train, cfg) {
        Ok(s) => s,
        Err(TrainError::Diverged(d)) => return abort(report, d),
        Err(e) => return Err(e),
    };
    report.curves.extend(search.curve);
    report.regime_violations.search = search.regime_violations;
    report.genotype = Some(search.genotype.clone());
    drop(search.net);

    let aug = match augment_stage::<f64>(train, &search.genotype, cfg) {
        Ok(a) => a,
        Err(TrainError::Diverged(d)) => return abort(report, d),
        Err(e) => return Err(e),
    };
    report.curves.extend(aug.curve);
    report.regime_violations.augment = aug.regime_violations;
    report.param_hash = Some(aug.net.param_hash());
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(RunOutcome { report, model: Some(aug.net) })
}

/// Fills in metrics and the similarity report. `splits[0]` is the source
/// test split. Aborted runs are left untouched.
pub fn evaluate_run(outcome: &mut RunOutcome, splits: &[&Split]) -> Result<(), TrainError> {
    let Some(net) = &outcome.model else { return Ok(()) };
    let start = Instant::now();
    let report = &mut outcome.report;
    let (metrics, similarity) = evaluate_model(net, splits, &report.config)?;
    report.target_detection = Some(target_average(&metrics, |m| m.detection_score));
    report.target_accuracy = Some(target_average(&metrics, |m| m.accuracy));
    report.metrics = metrics;
    report.similarity = Some(similarity);
    report.wall_clock_secs += start.elapsed().as_secs_f64();
    Ok(())
}

/// Metrics on every split plus the similarity report, with `splits[0]` as
/// the reference domain.
pub fn evaluate_model(
    net: &Network<f64>,
    splits: &[&Split],
    cfg: &TrainConfig,
) -> Result<(Vec<DomainMetrics>, SimilarityReport), TrainError> {
    let metrics = splits.iter().map(|s| evaluate_domain(net, s, cfg.tau)).collect::<Result<Vec<_>, _>>()?;
    let features = splits
        .iter()
        .map(|s| extract_features(net, s, cfg.similarity_examples))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((metrics, representation_similarity(&features)?))
}

pub const CONFIG_FILE: &str = "config.json";
pub const GENOTYPE_FILE: &str = "genotype.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const REPORT_FILE: &str = "report.json";

pub fn write_curves_csv(path: &Path, curve: &[EpochLoss]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| TrainError::Eval(e.into()))?;
    for row in curve {
        w.serialize(row).map_err(|e| TrainError::Eval(e.into()))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), TrainError> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(io_err(path))
}

/// Writes every artifact of a run into `dir`.
pub fn write_run_dir(dir: &Path, outcome: &RunOutcome) -> Result<(), TrainError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let r = &outcome.report;
    write_json(&dir.join(CONFIG_FILE), &r.config)?;
    if let Some(g) = &r.genotype {
        let p = dir.join(GENOTYPE_FILE);
        fs::write(&p, g.to_json()).map_err(io_err(&p))?;
    }
    write_curves_csv(&dir.join(CURVES_FILE), &r.curves)?;
    if r.completed() {
        write_metrics_csv(&dir.join(METRICS_FILE), &r.metrics)?;
    }
    if let Some(s) = &r.similarity {
        write_similarity_csv(dir, s)?;
    }
    if let Some(net) = &outcome.model {
        let p = dir.join(CHECKPOINT_FILE);
        fs::write(&p, checkpoint_bytes(net.params())).map_err(io_err(&p))?;
    }
    write_json(&dir.join(REPORT_FILE), r)
}

pub fn read_report(dir: &Path) -> Result<RunReport, TrainError> {
    let p = dir.join(REPORT_FILE);
    Ok(serde_json::from_str(&fs::read_to_string(&p).map_err(io_err(&p))?)?)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"GNASCK01";

fn group_code(g: ParamGroup) -> u8 {
    match g {
        ParamGroup::Backbone => 0,
        ParamGroup::Head => 1,
        ParamGroup::Arch => 2,
    }
}

pub fn checkpoint_bytes<T: Scalar>(params: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(T::BYTES as u64).to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, p) in params.iter() {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(group_code(p.group));
        out.extend_from_slice(&(p.value.shape().len() as u64).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| TrainError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")) as usize)
    }
}

/// Parses a checkpoint into a parameter store.
pub fn parse_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<ParamStore<T>, TrainError> {
    let bad = |m: String| TrainError::Checkpoint(m);
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let width = r.u64()?;
    if width != T::BYTES {
        return Err(bad(format!("values are {width} bytes wide, expected {}", T::BYTES)));
    }
    let count = r.u64()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u64()?;
        let name = std::str::from_utf8(r.take(len)?).map_err(|e| bad(e.to_string()))?.to_string();
        let group = match r.take(1)?[0] {
            0 => ParamGroup::Backbone,
            1 => ParamGroup::Head,
            2 => ParamGroup::Arch,
            g => return Err(bad(format!("{name}: unknown group {g}"))),
        };
        let rank = r.u64()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("shape overflow".into()))?;
        let raw = r.take(numel.checked_mul(width).ok_or_else(|| bad("shape overflow".into()))?)?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        let value = Tensor::from_vec(shape, data).map_err(|e| bad(e.to_string()))?;
        store.insert(name, group, value)?;
    }
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(store)
}

/// Rebuilds a trained discrete network from its genotype and checkpoint.
pub fn load_model(dir: &Path, cfg: &TrainConfig, image_size: usize) -> Result<Network<f64>, TrainError> {
    let gp = dir.join(GENOTYPE_FILE);
    let genotype = Genotype::from_json(&fs::read_to_string(&gp).map_err(io_err(&gp))?)?;
    let cp = dir.join(CHECKPOINT_FILE);
    let stored = parse_checkpoint::<f64>(&fs::read(&cp).map_err(io_err(&cp))?)?;
    let mut net = Network::<f64>::reconstruct(&genotype, cfg.net_config(image_size), 0)?;
    if stored.len() != net.params().len() {
        return Err(TrainError::Checkpoint(format!(
            "{} parameters stored, the genotype needs {}",
            stored.len(),
            net.params().len()
        )));
    }
    for (name, p) in stored.iter() {
        let dst = net.params_mut().get_mut(name).ok_or_else(|| TrainError::Checkpoint(format!("unexpected {name}")))?;
        if dst.value.shape() != p.value.shape() || dst.group != p.group {
            return Err(TrainError::Checkpoint(format!("{name}: shape or group mismatch")));
        }
        dst.value = p.value.clone();
    }
    Ok(net)
}
