//! Synthetic single-source benchmark with a spurious background cue.
//!
//! Every image is `3 x 8 x 8` in `[0, 1]`:
//!
//! * channel 0 holds one 3x3 stripe patch, diagonal for class `+1` and
//!   anti-diagonal for class `−1` (the causal feature);
//! * channel 1 is a constant background level (the easy feature), tied to the
//!   class in the source domain, random or flipped in targets;
//! * channel 2 is uniform noise.
//!
//! The regression target is the patch centre, `(column, row)`, mapped
//! linearly onto `[−0.8, 0.8]`.

mod io;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use io::{load_benchmark, load_manifest, load_split, save_benchmark, split_bytes, Manifest, SplitEntry, MANIFEST_FILE};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const GENERATOR_VERSION: u32 = 1;
pub const CHANNELS: usize = 3;
pub const PATCH: usize = 3;
/// Half-width of the target range.
pub const TARGET_EXTENT: f64 = 0.8;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundRule {
    /// Level 0.8 for `+1`, 0.2 for `−1`, plus jitter.
    Correlated,
    /// Level uniform in `[0.2, 0.8]`.
    Decorrelated,
    /// The correlated rule with labels swapped.
    Flipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    pub background: BackgroundRule,
    #[serde(default)]
    pub brightness_offset: f64,
    #[serde(default)]
    pub pixel_noise: f64,
}

impl DomainSpec {
    pub fn new(name: &str, background: BackgroundRule, brightness_offset: f64, pixel_noise: f64) -> Self {
        Self { name: name.to_string(), background, brightness_offset, pixel_noise }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub image_size: usize,
    pub source_train: usize,
    pub source_test: usize,
    pub target_size: usize,
    /// Standard deviation of the background jitter under the correlated rules.
    pub background_jitter: f64,
    /// Probability that a correlated background follows the label at all.
    pub correlation: f64,
    pub targets: Vec<DomainSpec>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            image_size: 8,
            source_train: 2000,
            source_test: 500,
            target_size: 500,
            background_jitter: 0.05,
            correlation: 1.0,
            targets: vec![
                DomainSpec::new("T1", BackgroundRule::Decorrelated, 0.0, 0.0),
                DomainSpec::new("T2", BackgroundRule::Flipped, 0.0, 0.0),
                DomainSpec::new("T3", BackgroundRule::Decorrelated, -0.3, 0.0),
                DomainSpec::new("T4", BackgroundRule::Flipped, 0.0, 0.1),
            ],
        }
    }
}

impl GeneratorConfig {
    pub fn source_domain() -> DomainSpec {
        DomainSpec::new("source", BackgroundRule::Correlated, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.image_size < PATCH {
            return Err(DataError::Config(format!(
                "a {PATCH}x{PATCH} patch cannot fit a {0}x{0} grid",
                self.image_size
            )));
        }
        if self.source_train == 0 || self.source_test == 0 || self.target_size == 0 {
            return Err(DataError::Config("split sizes must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return Err(DataError::Config(format!("correlation {} is not a probability", self.correlation)));
        }
        if !(self.background_jitter >= 0.0) {
            return Err(DataError::Config("background jitter must be non-negative".into()));
        }
        for d in &self.targets {
            if !(-0.5..=0.0).contains(&d.brightness_offset) || !(d.pixel_noise >= 0.0) {
                return Err(DataError::Config(format!(
                    "domain {}: brightness offset must lie in [-0.5, 0] and noise be non-negative",
                    d.name
                )));
            }
        }
        let mut names: Vec<&str> = self.targets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) || names.iter().any(|n| n.starts_with("source")) {
            return Err(DataError::Config("target names must be unique and not start with `source`".into()));
        }
        Ok(())
    }
}

/// A labelled set of images; images are `[n, 3, s, s]`, targets `[n, 2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub name: String,
    pub images: Tensor<f64>,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y1.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.images.shape()[2]
    }

    fn per_image(&self) -> usize {
        self.images.shape()[1..].iter().product()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let per = self.per_image();
        &self.images.data()[i * per..(i + 1) * per]
    }

    /// Images and targets of the examples `idx`, in that order.
    pub fn gather<T: Scalar>(&self, idx: &[usize]) -> (Tensor<T>, Vec<T>, Vec<T>) {
        let per = self.per_image();
        let mut data = Vec::with_capacity(idx.len() * per);
        let mut y1 = Vec::with_capacity(idx.len());
        let mut y2 = Vec::with_capacity(2 * idx.len());
        for &i in idx {
            data.extend(self.image(i).iter().map(|&v| T::lit(v)));
            y1.push(T::lit(self.y1[i]));
            y2.push(T::lit(self.y2[2 * i]));
            y2.push(T::lit(self.y2[2 * i + 1]));
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = idx.len();
        (Tensor::from_vec(shape, data).expect("gather shape"), y1, y2)
    }

    /// The first `n` examples; `n` must be at least 1.
    pub fn head(&self, n: usize) -> Split {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let (images, y1, y2) = self.gather::<f64>(&idx);
        Split { name: self.name.clone(), images, y1, y2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub seed: u64,
    pub version: u32,
    pub config: GeneratorConfig,
    pub source_train: Split,
    pub source_test: Split,
    pub targets: Vec<Split>,
}

impl Benchmark {
    /// Source test split followed by every target split.
    pub fn eval_splits(&self) -> Vec<&Split> {
        std::iter::once(&self.source_test).chain(&self.targets).collect()
    }

    pub fn target(&self, name: &str) -> Option<&Split> {
        self.targets.iter().find(|s| s.name == name)
    }
}

/// Maps a patch centre index in `1..=s-2` onto `[−0.8, 0.8]`.
pub fn center_to_target(center: usize, image_size: usize) -> f64 {
    let span = (image_size - PATCH) as f64;
    if span == 0.0 {
        return 0.0;
    }
    -TARGET_EXTENT + 2.0 * TARGET_EXTENT * (center - 1) as f64 / span
}

/// Generates all splits. Each split draws from its own stream of the seed.
pub fn generate_benchmark(config: &GeneratorConfig, seed: u64) -> Result<Benchmark, DataError> {
    config.validate()?;
    let source = GeneratorConfig::source_domain();
    let source_train = generate_split(config, &source, "source_train", config.source_train, seed, 0);
    let source_test = generate_split(config, &source, "source_test", config.source_test, seed, 1);
    let targets = config
        .targets
        .iter()
        .enumerate()
        .map(|(k, d)| generate_split(config, d, &d.name, config.target_size, seed, 2 + k as u64))
        .collect();
    Ok(Benchmark { seed, version: GENERATOR_VERSION, config: config.clone(), source_train, source_test, targets })
}

fn generate_split(cfg: &GeneratorConfig, domain: &DomainSpec, name: &str, n: usize, seed: u64, stream: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let s = cfg.image_size;
    let plane = s * s;
    let jitter = Normal::new(0.0, cfg.background_jitter).expect("valid jitter");
    let noise = Normal::new(0.0, domain.pixel_noise).expect("valid noise");
    let mut images = Vec::with_capacity(n * CHANNELS * plane);
    let mut y1 = Vec::with_capacity(n);
    let mut y2 = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let label = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let row = rng.random_range(0..=s - PATCH);
        let col = rng.random_range(0..=s - PATCH);
        let mut img = vec![0.0f64; CHANNELS * plane];
        for k in 0..PATCH {
            let c = if label > 0.0 { k } else { PATCH - 1 - k };
            img[(row + k) * s + col + c] = 1.0;
        }
        let level = match domain.background {
            BackgroundRule::Decorrelated => rng.random_range(0.2..=0.8),
            rule => {
                let follows = cfg.correlation >= 1.0 || rng.random_bool(cfg.correlation);
                let positive = (label > 0.0) == (rule == BackgroundRule::Correlated);
                let base = if positive == follows { 0.8 } else { 0.2 };
                base + jitter.sample(&mut rng)
            }
        };
        img[plane..2 * plane].iter_mut().for_each(|v| *v = level.clamp(0.0, 1.0));
        img[2 * plane..].iter_mut().for_each(|v| *v = rng.random::<f64>());
        for v in img.iter_mut() {
            let mut x = *v + domain.brightness_offset;
            if domain.pixel_noise > 0.0 {
                x += noise.sample(&mut rng);
            }
            *v = x.clamp(0.0, 1.0);
        }
        images.extend(img);
        y1.push(label);
        y2.push(center_to_target(col + 1, s));
        y2.push(center_to_target(row + 1, s));
    }
    Split {
        name: name.to_string(),
        images: Tensor::from_vec([n, CHANNELS, s, s], images).expect("split shape"),
        y1,
        y2,
    }
}

/// Epoch-wise shuffled mini-batches; the last partial batch is kept.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    n: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        Self { n, batch: batch.max(1), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Index batches of the next epoch.
    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        let mut perm: Vec<usize> = (0..self.n).collect();
        perm.shuffle(&mut self.rng);
        perm.chunks(self.batch).map(<[usize]>::to_vec).collect()
    }
}
