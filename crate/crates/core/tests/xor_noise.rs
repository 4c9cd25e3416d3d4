use mzimesh::fitting::FitReport;
use mzimesh::models::ModelKind;
use mzimesh::xor::{noisy_accuracy, run_fig3c, train_xor, write_fig3c_csv, OnnClassifier, XorDataset, XorTrainConfig};

fn classifier() -> OnnClassifier {
    train_xor(2021, &XorTrainConfig::default()).unwrap()
}

fn report(model: ModelKind, sigma: f64) -> FitReport {
    FitReport {
        model,
        train_rmse_db: sigma,
        validation_rmse_db: None,
        test_rmse_db: Some(sigma),
        iterations: 0,
        converged: true,
        wall_time_s: 0.0,
        hyperparameters: serde_json::Value::Null,
        trace: Vec::new(),
    }
}

#[test]
fn trained_classifier_respects_the_mesh_box() {
    let c = classifier();
    assert_eq!(c.accuracy(&XorDataset::default()), 1.0);
    assert!(c.w_mesh_db.as_slice().iter().all(|w| (-30.0..=0.0).contains(w)));
}

#[test]
fn median_accuracy_does_not_rise_with_noise() {
    let c = classifier();
    let box_db = XorTrainConfig::default().mesh_box_db;
    let medians: Vec<f64> = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0]
        .iter()
        .map(|&s| noisy_accuracy(&c, s, 200, 8, box_db).unwrap().median)
        .collect();
    assert_eq!(medians[0], 1.0);
    for w in medians.windows(2) {
        assert!(w[1] <= w[0], "medians {medians:?}");
    }
}

#[test]
fn equal_sigma_rows_are_identical() {
    let c = classifier();
    let reports = [report(ModelKind::Model1, 0.8), report(ModelKind::Model2, 0.8), report(ModelKind::Model3, 0.1)];
    let rows = run_fig3c(&c, &reports, 20, 4, (-30.0, 0.0)).unwrap();
    assert_eq!(rows[0].result, rows[1].result);
    assert_eq!(rows[2].result.sigma_db, 0.1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fig3c.csv");
    write_fig3c_csv(&rows, &path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "model,sigma_db,median,p25,p75,n_realizations");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("m1,0.8,") && lines[1].ends_with(",20"));
}

#[test]
fn report_without_test_rmse_is_rejected() {
    let mut r = report(ModelKind::Model2, 0.5);
    r.test_rmse_db = None;
    assert!(run_fig3c(&classifier(), &[r], 5, 0, (-30.0, 0.0)).is_err());
}
