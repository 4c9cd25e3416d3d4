mod common;

use common::chip;
use mzimesh::chip::{ChipRecipe, Dataset, Noise};
use mzimesh::fitting::{split_dataset, train_model3, Architecture, FitConfig, SplitSpec};
use mzimesh::mesh::VoltageVector;
use mzimesh::models::Normalizer;

/// Kolmogorov–Smirnov distance of `x` from the uniform law on `[lo, hi]`.
fn ks_uniform(mut x: Vec<f64>, lo: f64, hi: f64) -> f64 {
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter().enumerate().fold(0.0, |d: f64, (k, &v)| {
        let cdf = (v - lo) / (hi - lo);
        d.max((k as f64 + 1.0) / n - cdf).max(cdf - k as f64 / n)
    })
}

#[test]
fn random_voltages_are_uniform() {
    let mut c = chip(&ChipRecipe::default());
    let (lo, hi) = (c.params().v_min, c.params().v_max);
    let d = c.random_dataset(100_000, 99).unwrap();
    for k in 0..c.n_mzis() {
        let ks = ks_uniform(d.samples.iter().map(|s| s.voltages.0[k]).collect(), lo, hi);
        assert!(ks < 0.01, "heater {k}: KS {ks}");
    }
}

#[test]
fn measurement_noise_has_configured_sigma() {
    for sigma in [0.05, 0.2] {
        let mut c = chip(&ChipRecipe { noise_sigma_db: sigma, ..ChipRecipe::default() });
        let v = VoltageVector(vec![0.3, 1.1, 0.7, 1.9, 1.4]);
        let clean = c.measure_clean(&v).unwrap();
        let e: Vec<f64> = (0..10_000).map(|_| c.measure(&v, Noise::On).unwrap().get(1, 2) - clean.get(1, 2)).collect();
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        let sd = (e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (e.len() - 1) as f64).sqrt();
        assert!((sd / sigma - 1.0).abs() < 0.1, "configured {sigma}, measured {sd}");
    }
}

#[test]
fn dataset_files_round_trip_exactly() {
    let mut c = chip(&ChipRecipe::default());
    let d = c.random_dataset(200, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("random.jsonl");
    d.save(&path).unwrap();
    assert_eq!(Dataset::load(&path).unwrap(), d);
}

#[test]
fn split_parts_share_no_samples() {
    let mut c = chip(&ChipRecipe::default());
    let d = c.random_dataset(900, 5).unwrap();
    let s = split_dataset(&d, &SplitSpec { n_train: 600, n_val: 100, n_test: 300, seed: 1 }).unwrap();
    let key = |v: &VoltageVector| v.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let test: std::collections::HashSet<_> = s.test.samples.iter().map(|x| key(&x.voltages)).collect();
    assert_eq!(test.len(), 300);
    assert!(s.training_pool().iter().all(|x| !test.contains(&key(&x.voltages))));
    assert_eq!(s.train.len(), 500);
    assert_eq!(s.validation.len(), 100);
}

#[test]
fn model3_normalizer_sees_training_data_only() {
    let mut c = chip(&ChipRecipe::default());
    let d = c.random_dataset(300, 5).unwrap();
    let s = split_dataset(&d, &SplitSpec { n_train: 250, n_val: 50, n_test: 50, seed: 1 }).unwrap();
    let mut cfg = FitConfig::default();
    cfg.optimizer.max_iterations = 5;
    cfg.search_space = vec![Architecture(vec![4])];
    let (p, _) = train_model3(&s.train.samples, &s.validation.samples, &cfg.search_space, &cfg).unwrap();
    let expected = Normalizer::fit(s.train.samples.iter().map(|x| x.voltages.as_slice())).unwrap();
    assert_eq!(p.normalizer, Some(expected));
}
