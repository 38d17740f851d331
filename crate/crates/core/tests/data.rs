mod common;

use common::{background_accuracy, correlation, mean, plane, stripe_classifier, strongest_stripe};
use gnas::data::{center_to_target, generate_benchmark, load_benchmark, save_benchmark, BatchSampler, Benchmark, GeneratorConfig, Split};

fn default_bench() -> Benchmark {
    generate_benchmark(&GeneratorConfig::default(), 0).unwrap()
}

#[test]
fn background_cue_is_spurious() {
    let b = default_bench();
    let src = background_accuracy(&b.source_test);
    assert!(src > 0.95, "source {src}");
    let t1 = background_accuracy(b.target("T1").unwrap());
    assert!(t1 < 0.6, "T1 {t1}");
    let t2 = background_accuracy(b.target("T2").unwrap());
    assert!(t2 < 0.1, "T2 {t2}");
}

#[test]
fn stripe_cue_is_causal_everywhere() {
    let b = default_bench();
    let classify = stripe_classifier(&b.source_train);
    for split in b.eval_splits() {
        let acc = classify(split);
        assert!(acc > 0.95, "{}: {acc}", split.name);
    }
}

#[test]
fn background_correlation_statistics() {
    let cfg = GeneratorConfig { target_size: 2000, ..GeneratorConfig::default() };
    let b = generate_benchmark(&cfg, 1).unwrap();
    let stats = |s: &Split| {
        let bg: Vec<f64> = (0..s.len()).map(|i| mean(plane(s, i, 1))).collect();
        correlation(&bg, &s.y1)
    };
    let src = stats(&b.source_train);
    assert!(src > 0.9, "source {src}");
    let t1 = stats(b.target("T1").unwrap());
    assert!((-0.1..=0.1).contains(&t1), "T1 {t1}");
}

#[test]
fn positions_are_recoverable_from_clean_images() {
    let b = default_bench();
    let s = b.source_train.image_size();
    for i in 0..b.source_train.len() {
        let (r, c, _) = strongest_stripe(&b.source_train, i);
        assert_eq!(b.source_train.y2[2 * i], center_to_target(c + 1, s));
        assert_eq!(b.source_train.y2[2 * i + 1], center_to_target(r + 1, s));
    }
    for split in b.eval_splits() {
        assert!(split.y2.iter().all(|v| v.abs() <= 0.8));
        assert!(split.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn default_sizes_and_names() {
    let b = default_bench();
    assert_eq!((b.source_train.len(), b.source_test.len()), (2000, 500));
    let names: Vec<&str> = b.targets.iter().map(|t| t.name.as_str()).collect();
    assert_eq!(names, ["T1", "T2", "T3", "T4"]);
    assert!(b.targets.iter().all(|t| t.len() == 500));
    assert_eq!(b.source_train.images.shape(), &[2000, 3, 8, 8]);
}

#[test]
fn same_seed_same_bytes() {
    let small = GeneratorConfig { source_train: 300, source_test: 100, target_size: 100, ..GeneratorConfig::default() };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m1 = save_benchmark(&generate_benchmark(&small, 5).unwrap(), d1.path()).unwrap();
    let m2 = save_benchmark(&generate_benchmark(&small, 5).unwrap(), d2.path()).unwrap();
    assert_eq!(m1.dataset_hash(), m2.dataset_hash());
    assert_eq!(m1.source_train.sha256, m2.source_train.sha256);
    let m3 = save_benchmark(&generate_benchmark(&small, 6).unwrap(), d2.path()).unwrap();
    assert_ne!(m1.dataset_hash(), m3.dataset_hash());

    let (loaded, manifest) = load_benchmark(d1.path()).unwrap();
    assert_eq!(loaded, generate_benchmark(&small, 5).unwrap());
    assert_eq!(manifest.dataset_hash(), m1.dataset_hash());
}

#[test]
fn corrupted_split_is_rejected() {
    let small = GeneratorConfig { source_train: 20, source_test: 10, target_size: 10, ..GeneratorConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let m = save_benchmark(&generate_benchmark(&small, 0).unwrap(), dir.path()).unwrap();
    let path = dir.path().join(&m.targets[1].file);
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    assert!(load_benchmark(dir.path()).is_err());
}

#[test]
fn sampler_examples() {
    let mut s = BatchSampler::new(2000, 32, 4);
    let epoch = s.epoch();
    assert_eq!(epoch.len(), 63);
    assert_eq!(epoch[62].len(), 16);
    let mut seen = epoch.concat();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen.len(), 2000);
    let mut again = BatchSampler::new(2000, 32, 4);
    assert_eq!(again.epoch(), epoch);
    assert_eq!(again.epoch(), s.epoch());
}
