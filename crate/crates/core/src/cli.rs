//! `gnas` command-line entry point.
//!
//! Config files are TOML. Every key is optional and unknown keys are
//! rejected:
//!
//! ```toml
//! out = "runs/exp1"          # output directory
//! seeds = [0, 1, 2, 3, 4]    # sweep, ablate, arch-stats
//! lambdas = [0.0, 1.0, 10.0] # sweep
//! jobs = 1
//! data_seed = 0              # gen-data
//!
//! [train]                    # TrainConfig fields
//! lambda_g = 1.0
//! epochs_search = 12
//!
//! [data]                     # GeneratorConfig fields
//! source_train = 2000
//! ```
//!
//! Flags override the file, which overrides the defaults. Without `--out`
//! or `out`, results go to `$GNAS_OUT_ROOT/<subcommand>` (default root `runs`).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{self, DataError, GeneratorConfig, Manifest, Split};
use crate::dual::{self, write_report_csv, DualError, ReportRow};
use crate::eval::{
    ablation_configs, run_many, sweep_configs, AblationReport, EvalError, OpFrequencyReport, SweepReport,
};
use crate::supernet::Genotype;
use crate::trainer::{
    self, augment_stage, evaluate_model, evaluate_run, read_report, search_stage, train_run, write_curves_csv,
    write_json, write_run_dir, RunOutcome, RunReport, TrainConfig, TrainError, CONFIG_FILE, GENOTYPE_FILE,
};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "GNAS_OUT_ROOT";
pub const STUDY_FILE: &str = "study.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Dual(#[from] DualError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Train(TrainError::Config(_)) | CliError::Data(DataError::Config(_)) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Parser)]
#[command(name = "gnas", version, about = "Desk-scale generalizable neural architecture search lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic benchmark and write it to disk.
    GenData(GenDataArgs),
    /// Run the search stage and write the discretized genotype.
    Search(RunArgs),
    /// Retrain a genotype from scratch and evaluate it.
    Augment(AugmentArgs),
    /// Search, discretize, augment and evaluate.
    Pipeline(RunArgs),
    /// Re-evaluate a saved run directory.
    Eval(EvalArgs),
    /// Check strong duality numerically on generated linearized instances.
    VerifyTheorem(VerifyArgs),
    /// One pipeline per (lambda_g, seed).
    Sweep(SweepArgs),
    /// The 2x2 grid of NAS on/off and G-loss on/off over seeds.
    Ablate(StudyArgs),
    /// Operation frequencies of searched genotypes across seeds.
    ArchStats(StudyArgs),
    /// Re-aggregate the tables of a saved study directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda_g: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs_search: Option<usize>,
    #[arg(long)]
    pub epochs_augment: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub enable_nas: Option<bool>,
    #[arg(long)]
    pub enable_gloss: Option<bool>,
    #[arg(long)]
    pub gloss_in_augment: Option<bool>,
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub source_train: Option<usize>,
    #[arg(long)]
    pub source_test: Option<usize>,
    #[arg(long)]
    pub target_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub genotype: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory holding config.json, genotype.json and checkpoint.bin.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Where to write the tables; defaults to `<run>/eval`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 8)]
    pub n_max: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub lambdas: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by sweep, ablate or arch-stats.
    #[arg(long)]
    pub study: PathBuf,
    /// Where to write the tables; defaults to the study directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Structured config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub lambdas: Option<Vec<f64>>,
    pub jobs: Option<usize>,
    pub data_seed: Option<u64>,
    pub train: TrainConfig,
    pub data: GeneratorConfig,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

const DEFAULT_STUDY_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const DEFAULT_ARCH_SEEDS: [u64; 3] = [0, 1, 2];
const DEFAULT_LAMBDAS: [f64; 7] = [0.0, 0.01, 0.1, 1.0, 2.0, 5.0, 10.0];

impl TrainFlags {
    fn apply(&self, mut c: TrainConfig) -> TrainConfig {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(
            seed,
            lambda_g,
            lr,
            epochs_search,
            epochs_augment,
            batch_size,
            channels,
            nodes,
            enable_nas,
            enable_gloss,
            gloss_in_augment,
            tau
        );
        c
    }
}

fn output_dir(flag: &Option<PathBuf>, cfg: &CliConfig, command: &str) -> PathBuf {
    if let Some(p) = flag.clone().or_else(|| cfg.out.clone()) {
        return p;
    }
    let root = std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(command)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

struct Resolved {
    cfg: CliConfig,
    train: TrainConfig,
    out: PathBuf,
}

fn resolve(args: &RunArgs, command: &str) -> Result<Resolved, CliError> {
    let cfg = CliConfig::load(args.common.config.as_deref())?;
    let train = args.train.apply(cfg.train.clone());
    train.validate()?;
    let out = output_dir(&args.common.out, &cfg, command);
    Ok(Resolved { cfg, train, out })
}

/// Loads only the source training split.
fn load_training(data_dir: &Path) -> Result<(Manifest, Split), CliError> {
    let m = data::load_manifest(data_dir)?;
    let split = data::load_split(data_dir, &m.source_train)?;
    Ok((m, split))
}

/// Source test split followed by the targets, opened after training.
fn load_eval(data_dir: &Path, m: &Manifest) -> Result<Vec<Split>, CliError> {
    let mut out = vec![data::load_split(data_dir, &m.source_test)?];
    for e in &m.targets {
        out.push(data::load_split(data_dir, e)?);
    }
    Ok(out)
}

fn print_metrics(report: &RunReport) {
    for m in &report.metrics {
        println!(
            "{:<12} accuracy {:.4}  reg_mse {:.5}  detection {:.4}  n {}",
            m.domain, m.accuracy, m.reg_mse, m.detection_score, m.n
        );
    }
    if let Some(d) = report.target_detection {
        println!("target-average detection {d:.4}");
    }
}

fn finish_run(outcome: &RunOutcome, dir: &Path) -> Result<(), CliError> {
    write_run_dir(dir, outcome)?;
    let r = &outcome.report;
    if let Some(d) = &r.diagnostic {
        return Err(CliError::Failed(format!("run aborted: {d} (report in {})", dir.display())));
    }
    print_metrics(r);
    println!("run written to {}", dir.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Search(a) => search(a),
        Command::Augment(a) => augment(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Eval(a) => eval(a),
        Command::VerifyTheorem(a) => verify(a),
        Command::Sweep(a) => sweep(a),
        Command::Ablate(a) => ablate(a),
        Command::ArchStats(a) => arch_stats(a),
        Command::Report(a) => report(a),
    }
}

/// Parses `argv` (program name first), runs it and returns the exit code.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let cfg = CliConfig::load(a.common.config.as_deref())?;
    let mut gen = cfg.data.clone();
    if let Some(v) = a.source_train {
        gen.source_train = v;
    }
    if let Some(v) = a.source_test {
        gen.source_test = v;
    }
    if let Some(v) = a.target_size {
        gen.target_size = v;
    }
    let seed = a.seed.or(cfg.data_seed).unwrap_or(0);
    let out = output_dir(&a.common.out, &cfg, "data");
    let bench = data::generate_benchmark(&gen, seed)?;
    let m = data::save_benchmark(&bench, &out)?;
    println!("dataset {} written to {}", m.dataset_hash(), out.display());
    Ok(())
}

fn search(a: RunArgs) -> Result<(), CliError> {
    let r = resolve(&a, "search")?;
    let (_, train) = load_training(&a.data)?;
    create_dir(&r.out)?;
    write_json(&r.out.join(CONFIG_FILE), &r.train)?;
    let s = match search_stage::<f64>(&train, &r.train) {
        Ok(s) => s,
        Err(TrainError::Diverged(d)) => {
            write_curves_csv(&r.out.join(trainer::CURVES_FILE), &d.curve)?;
            return Err(TrainError::Diverged(d).into());
        }
        Err(e) => return Err(e.into()),
    };
    let gp = r.out.join(GENOTYPE_FILE);
    fs::write(&gp, s.genotype.to_json()).map_err(io_err(&gp))?;
    let alpha = s.arch_params.alpha();
    write_json(
        &r.out.join("alpha.json"),
        &serde_json::json!({ "normal": alpha.normal.data(), "reduction": alpha.reduction.data() }),
    )?;
    write_curves_csv(&r.out.join(trainer::CURVES_FILE), &s.curve)?;
    println!("{}", s.genotype);
    println!("search written to {}", r.out.display());
    Ok(())
}

fn augment(a: AugmentArgs) -> Result<(), CliError> {
    let r = resolve(&a.run, "augment")?;
    let text = fs::read_to_string(&a.genotype).map_err(io_err(&a.genotype))?;
    let genotype = Genotype::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", a.genotype.display())))?;
    let (m, train) = load_training(&a.run.data)?;
    let mut report = RunReport::new(&r.train, &m.dataset_hash());
    report.genotype = Some(genotype.clone());
    let start = std::time::Instant::now();
    let mut outcome = match augment_stage::<f64>(&train, &genotype, &r.train) {
        Ok(aug) => {
            report.curves = aug.curve;
            report.regime_violations.augment = aug.regime_violations;
            report.param_hash = Some(aug.net.param_hash());
            RunOutcome { report, model: Some(aug.net) }
        }
        Err(TrainError::Diverged(d)) => {
            report.status = trainer::RunStatus::Aborted;
            report.diagnostic = Some(d.to_string());
            report.curves = d.curve;
            RunOutcome { report, model: None }
        }
        Err(e) => return Err(e.into()),
    };
    outcome.report.wall_clock_secs = start.elapsed().as_secs_f64();
    drop(train);
    if outcome.model.is_some() {
        let splits = load_eval(&a.run.data, &m)?;
        evaluate_run(&mut outcome, &splits.iter().collect::<Vec<_>>())?;
    }
    finish_run(&outcome, &r.out)
}

fn pipeline(a: RunArgs) -> Result<(), CliError> {
    let r = resolve(&a, "pipeline")?;
    let (m, train) = load_training(&a.data)?;
    let mut outcome = train_run(&r.train, &train, &m.dataset_hash())?;
    drop(train);
    if outcome.model.is_some() {
        let splits = load_eval(&a.data, &m)?;
        evaluate_run(&mut outcome, &splits.iter().collect::<Vec<_>>())?;
    }
    finish_run(&outcome, &r.out)
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let cp = a.run.join(CONFIG_FILE);
    let cfg: TrainConfig = serde_json::from_str(&fs::read_to_string(&cp).map_err(io_err(&cp))?)?;
    let m = data::load_manifest(&a.data)?;
    let splits = load_eval(&a.data, &m)?;
    let net = trainer::load_model(&a.run, &cfg, splits[0].image_size())?;
    let (metrics, similarity) = evaluate_model(&net, &splits.iter().collect::<Vec<_>>(), &cfg)?;
    let out = a.out.unwrap_or_else(|| a.run.join("eval"));
    create_dir(&out)?;
    crate::eval::write_metrics_csv(&out.join(trainer::METRICS_FILE), &metrics)?;
    crate::eval::write_similarity_csv(&out, &similarity)?;
    let mut report = RunReport::new(&cfg, &m.dataset_hash());
    report.target_detection = Some(crate::eval::target_average(&metrics, |m| m.detection_score));
    report.metrics = metrics;
    print_metrics(&report);
    println!("evaluation written to {}", out.display());
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<(), CliError> {
    if !(a.tol > 0.0) {
        return Err(CliError::Usage(format!("--tol must be positive, got {}", a.tol)));
    }
    if a.instances == 0 || a.n_max < 2 {
        return Err(CliError::Usage("--instances must be at least 1 and --n-max at least 2".into()));
    }
    let out = a.out.clone().unwrap_or_else(|| output_dir(&None, &CliConfig::default(), "verify-theorem"));
    create_dir(&out)?;
    let start = std::time::Instant::now();
    let reports = dual::verify_family(a.instances, a.n_max, a.tol, a.seed)?;
    let rows: Vec<ReportRow> = reports.iter().map(|(s, r)| ReportRow::new(*s, r)).collect();
    let csv_path = out.join("duality_report.csv");
    let gaps_ok = write_report_csv(&csv_path, &rows, a.tol)?;
    write_json(&out.join("duality_reports.json"), &reports.iter().map(|(_, r)| r).collect::<Vec<_>>())?;
    let all_passed = gaps_ok && reports.iter().all(|(_, r)| r.passed);
    let worst = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
    println!(
        "{} instances, max relative gap {worst:e}, {:.2}s, report {}",
        rows.len(),
        start.elapsed().as_secs_f64(),
        csv_path.display()
    );
    if all_passed {
        Ok(())
    } else {
        Err(CliError::Failed(format!("duality check failed at tol {:e}", a.tol)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Sweep,
    Ablation,
    ArchStats,
}

/// Written next to the runs of a study so `report` can re-aggregate them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Study {
    pub kind: StudyKind,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    /// Run directories relative to the study directory.
    pub runs: Vec<PathBuf>,
}

fn study_settings(a: &StudyArgs, cfg: &CliConfig, default: &[u64]) -> Result<(Vec<u64>, usize), CliError> {
    let seeds = a.seeds.clone().or_else(|| cfg.seeds.clone()).unwrap_or_else(|| default.to_vec());
    let jobs = a.jobs.or(cfg.jobs).unwrap_or(1);
    if seeds.is_empty() || jobs == 0 {
        return Err(CliError::Usage("need at least one seed and one job".into()));
    }
    Ok((seeds, jobs))
}

fn run_study(
    out: &Path,
    data_dir: &Path,
    kind: StudyKind,
    seeds: Vec<u64>,
    lambdas: Vec<f64>,
    configs: Vec<(TrainConfig, PathBuf)>,
    jobs: usize,
) -> Result<Vec<RunReport>, CliError> {
    create_dir(out)?;
    let (bench, m) = data::load_benchmark(data_dir)?;
    let study = Study { kind, seeds, lambdas, runs: configs.iter().map(|(_, p)| p.clone()).collect() };
    write_json(&out.join(STUDY_FILE), &study)?;
    let runs: Vec<(TrainConfig, Option<PathBuf>)> = configs.into_iter().map(|(c, p)| (c, Some(out.join(p)))).collect();
    Ok(run_many(&runs, &bench, &m.dataset_hash(), jobs)?)
}

fn sweep(a: SweepArgs) -> Result<(), CliError> {
    let r = resolve(&a.study.run, "sweep")?;
    let (seeds, jobs) = study_settings(&a.study, &r.cfg, &DEFAULT_STUDY_SEEDS)?;
    let lambdas = a.lambdas.clone().or_else(|| r.cfg.lambdas.clone()).unwrap_or_else(|| DEFAULT_LAMBDAS.to_vec());
    if lambdas.iter().any(|l| !(*l >= 0.0)) {
        return Err(CliError::Usage("lambdas must be non-negative".into()));
    }
    let configs = sweep_configs(&r.train, &lambdas, &seeds)
        .into_iter()
        .map(|c| {
            let p = PathBuf::from(format!("lambda_{}", c.lambda_g)).join(format!("seed_{}", c.seed));
            (c, p)
        })
        .collect();
    let reports = run_study(&r.out, &a.study.run.data, StudyKind::Sweep, seeds, lambdas.clone(), configs, jobs)?;
    let table = SweepReport::from_runs(&lambdas, &reports);
    table.write_csv(&r.out)?;
    for row in &table.rows {
        println!(
            "lambda_g {:<6} mean {:.4} sd {:.4} completed {} aborted {}",
            row.lambda_g, row.mean, row.sd, row.completed, row.aborted
        );
    }
    Ok(())
}

fn ablate(a: StudyArgs) -> Result<(), CliError> {
    let r = resolve(&a.run, "ablate")?;
    let (seeds, jobs) = study_settings(&a, &r.cfg, &DEFAULT_STUDY_SEEDS)?;
    let configs = ablation_configs(&r.train, &seeds)
        .into_iter()
        .map(|c| {
            let cell = format!("nas_{}_gloss_{}", c.enable_nas as u8, c.enable_gloss as u8);
            let p = PathBuf::from(cell).join(format!("seed_{}", c.seed));
            (c, p)
        })
        .collect();
    let reports = run_study(&r.out, &a.run.data, StudyKind::Ablation, seeds, Vec::new(), configs, jobs)?;
    let table = AblationReport::from_runs(&reports);
    table.write_csv(&r.out)?;
    print_ablation(&table);
    Ok(())
}

fn print_ablation(t: &AblationReport) {
    for c in &t.cells {
        println!(
            "nas {:<5} gloss {:<5} mean {:.4} sd {:.4} completed {} aborted {}",
            c.enable_nas, c.enable_gloss, c.mean, c.sd, c.completed, c.aborted
        );
    }
    for (nas, s) in &t.gloss_effect {
        println!("gloss effect (nas {nas}): +{} -{} ={} p {:.4}", s.positive, s.negative, s.ties, s.p_value);
    }
}

fn arch_stats(a: StudyArgs) -> Result<(), CliError> {
    let r = resolve(&a.run, "arch-stats")?;
    let (seeds, jobs) = study_settings(&a, &r.cfg, &DEFAULT_ARCH_SEEDS)?;
    let (_, train) = load_training(&a.run.data)?;
    create_dir(&r.out)?;
    let runs: Vec<PathBuf> = seeds.iter().map(|s| PathBuf::from(format!("seed_{s}"))).collect();
    let study = Study { kind: StudyKind::ArchStats, seeds: seeds.clone(), lambdas: Vec::new(), runs: runs.clone() };
    write_json(&r.out.join(STUDY_FILE), &study)?;
    let (table, genotypes) = crate::eval::arch_stability(&r.train, &seeds, &train, jobs)?;
    for ((seed, g), dir) in genotypes.iter().zip(&runs) {
        let dir = r.out.join(dir);
        create_dir(&dir)?;
        write_json(&dir.join(CONFIG_FILE), &TrainConfig { seed: *seed, ..r.train.clone() })?;
        let p = dir.join(GENOTYPE_FILE);
        fs::write(&p, g.to_json()).map_err(io_err(&p))?;
        println!("seed {seed}: {g}");
    }
    table.write_csv(&r.out)?;
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), CliError> {
    let sp = a.study.join(STUDY_FILE);
    let study: Study = serde_json::from_str(&fs::read_to_string(&sp).map_err(io_err(&sp))?)?;
    let out = a.out.unwrap_or_else(|| a.study.clone());
    create_dir(&out)?;
    match study.kind {
        StudyKind::Sweep | StudyKind::Ablation => {
            let reports = study.runs.iter().map(|p| read_report(&a.study.join(p))).collect::<Result<Vec<_>, _>>()?;
            if study.kind == StudyKind::Sweep {
                SweepReport::from_runs(&study.lambdas, &reports).write_csv(&out)?;
            } else {
                let t = AblationReport::from_runs(&reports);
                t.write_csv(&out)?;
                print_ablation(&t);
            }
        }
        StudyKind::ArchStats => {
            let mut genotypes = Vec::new();
            for (seed, p) in study.seeds.iter().zip(&study.runs) {
                let gp = a.study.join(p).join(GENOTYPE_FILE);
                let text = fs::read_to_string(&gp).map_err(io_err(&gp))?;
                genotypes.push((*seed, Genotype::from_json(&text).map_err(TrainError::from)?));
            }
            OpFrequencyReport::from_genotypes(&genotypes).write_csv(&out)?;
        }
    }
    println!("tables written to {}", out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let cfg: CliConfig = toml::from_str("[train]\nlambda_g = 0.5\nlr = 0.1\n").unwrap();
        let flags = TrainFlags { lambda_g: Some(2.0), ..Default::default() };
        let t = flags.apply(cfg.train);
        assert_eq!((t.lambda_g, t.lr, t.epochs_search), (2.0, 0.1, 12));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<CliConfig>("[train]\nlamda_g = 1.0\n").is_err());
        assert!(toml::from_str::<CliConfig>("output = \"x\"\n").is_err());
    }
}
