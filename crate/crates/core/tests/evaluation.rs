use approx::assert_abs_diff_eq;
use mzimesh::chip::Sample;
use mzimesh::eval::{evaluate, export_scatter, read_scatter, HistogramConfig};
use mzimesh::mesh::{MeshTopology, VoltageVector, WeightMatrixDb};
use mzimesh::models::{Model1, Model1Params, WeightModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn model() -> Model1 {
    let topology = MeshTopology::default_3x3();
    Model1::new(Model1Params {
        loss_db: WeightMatrixDb::filled(3, 3, -4.0),
        topology,
        er_db: 25.0,
        phi0: vec![0.2, 1.4, 2.9, 4.1, 5.5],
        phi2: vec![0.6, 0.7, 0.5, 0.8, 0.65],
    })
    .unwrap()
}

/// Samples whose measurements are the model's predictions plus `N(0, σ²)`.
fn noisy_samples(m: &Model1, n: usize, sigma: f64, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v = VoltageVector((0..5).map(|_| rng.random_range(0.0..2.0)).collect());
            let mut w = m.predict(&v).unwrap();
            for x in w.as_mut_slice() {
                *x -= sigma * rng.sample::<f64, _>(StandardNormal);
            }
            Sample { voltages: v, weights_db: w }
        })
        .collect()
}

#[test]
fn gaussian_errors_give_gaussian_histogram() {
    let m = model();
    let test = noisy_samples(&m, 20_000, 1.0, 1);
    let stats = evaluate(&m, &test).unwrap();
    assert_abs_diff_eq!(stats.rmse_db, 1.0, epsilon = 0.01);
    assert_abs_diff_eq!(stats.mean_db, 0.0, epsilon = 0.01);
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let sup = stats
        .histogram
        .centers()
        .iter()
        .zip(&stats.histogram.densities)
        .fold(0.0f64, |s, (&c, &d)| s.max((d - pdf(c)).abs()));
    assert!(sup < 0.05, "sup-norm {sup}");
    let mass: f64 = stats.histogram.densities.iter().zip(stats.histogram.widths()).map(|(d, w)| d * w).sum();
    assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-12);
    assert_eq!(stats.histogram.densities.len(), HistogramConfig::default().bins);
}

#[test]
fn scatter_file_round_trips() {
    let m = model();
    let test = noisy_samples(&m, 50, 0.3, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scatter.csv");
    export_scatter(&m, &test, &path).unwrap();
    let rows = read_scatter(&path).unwrap();
    assert_eq!(rows.len(), 50 * 9);
    for r in rows {
        let s = &test[r.sample];
        assert_abs_diff_eq!(r.measured_db, s.weights_db.get(r.j - 1, r.i - 1), epsilon = 1e-9);
        assert_abs_diff_eq!(r.predicted_db, m.predict(&s.voltages).unwrap().get(r.j - 1, r.i - 1), epsilon = 1e-9);
    }
}

#[test]
fn per_weight_rmse_is_consistent_with_total() {
    let m = model();
    let stats = evaluate(&m, &noisy_samples(&m, 500, 0.5, 3)).unwrap();
    let mean_sq = stats.per_weight_rmse.iter().map(|w| w.rmse_db.powi(2)).sum::<f64>() / 9.0;
    assert_abs_diff_eq!(mean_sq.sqrt(), stats.rmse_db, epsilon = 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn statistics_ignore_sample_order(seed in any::<u64>(), n in 2usize..60) {
        let m = model();
        let test = noisy_samples(&m, n, 0.7, seed);
        let mut shuffled = test.clone();
        shuffled.reverse();
        shuffled.rotate_left((seed % n as u64) as usize);
        let a = evaluate(&m, &test).unwrap();
        let b = evaluate(&m, &shuffled).unwrap();
        prop_assert!((a.rmse_db - b.rmse_db).abs() < 1e-12);
        prop_assert!((a.mean_db - b.mean_db).abs() < 1e-12);
        prop_assert_eq!(a.max_abs_db, b.max_abs_db);
        prop_assert_eq!(a.histogram, b.histogram);
        for (x, y) in a.per_weight_rmse.iter().zip(&b.per_weight_rmse) {
            prop_assert!((x.rmse_db - y.rmse_db).abs() < 1e-12);
        }
    }
}
