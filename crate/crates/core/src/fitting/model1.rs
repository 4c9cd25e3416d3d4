use std::f64::consts::PI;
use std::time::Instant;

use serde_json::json;

use super::{lbfgs_minimize, median, pick_best, rmse_of, FitConfig, FitReport, TraceRow};
use crate::chip::{Dataset, GenerationMode, Sample};
use crate::error::{Error, Result};
use crate::mesh::{MeshTopology, Port, WeightMatrixDb};
use crate::models::physics::{er_to_r, factor_db};
use crate::models::{Model1, Model1Params, ModelKind};

/// Two-stage Model 1 fit.
///
/// Stage 1 fits `φ0_k`, `φ2_k` and an ER to each single-MZI sweep, using only
/// the weights whose path crosses the swept MZI; every such weight gets a free
/// dB offset that absorbs its loss and the MZIs held at rest. The chip ER is
/// the median over sweeps. Stage 2 sets each path loss to the mean residual on
/// `train`, which is the exact least-squares solution with the phases fixed.
pub fn fit_model1(
    topology: &MeshTopology,
    sweeps: &[Dataset],
    train: &[Sample],
    cfg: &FitConfig,
) -> Result<(Model1Params, FitReport)> {
    let started = Instant::now();
    if train.is_empty() {
        return Err(Error::Input("model 1 loss fit needs training samples".into()));
    }
    let paths = topology.resolve()?;
    let m = topology.n_mzis;
    let mut phi0 = vec![0.0; m];
    let mut phi2 = vec![0.0; m];
    let mut ers = Vec::with_capacity(m);
    let mut iterations = 0;
    let mut converged = true;
    let mut trace = Vec::new();

    for k in 0..m {
        let sweep = find_sweep(sweeps, k + 1)?;
        let affected: Vec<(usize, Port)> = paths
            .iter()
            .enumerate()
            .filter_map(|(w, p)| p.mzis.iter().position(|&q| q == k).map(|e| (w, p.ports[e])))
            .collect();
        let fit = fit_sweep(sweep, k, &affected, cfg)?;
        phi0[k] = fit.x[0];
        phi2[k] = fit.x[1];
        ers.push(fit.x[2]);
        iterations += fit.iterations;
        converged &= fit.converged;
        trace.extend(fit.trace);
    }

    let er_db = median(&ers);
    let mut model = Model1::new(Model1Params {
        topology: topology.clone(),
        er_db,
        loss_db: WeightMatrixDb::filled(topology.n_outputs, topology.n_inputs, 0.0),
        phi0,
        phi2,
    })?;
    let n_w = paths.len();
    let mut loss = vec![0.0; n_w];
    for s in train {
        let v = s.voltages.as_slice();
        for (w, l) in loss.iter_mut().enumerate() {
            *l += s.weights_db.as_slice()[w] - model.path_factors_db(w, v);
        }
    }
    let (lo, hi) = cfg.bounds.loss_db;
    for l in &mut loss {
        *l = (*l / train.len() as f64).clamp(lo, hi);
    }
    let mut params = model.params().clone();
    params.loss_db = WeightMatrixDb::new(topology.n_outputs, topology.n_inputs, loss)?;
    model = Model1::new(params)?;

    let report = FitReport {
        model: ModelKind::Model1,
        train_rmse_db: rmse_of(&model, train)?,
        validation_rmse_db: None,
        test_rmse_db: None,
        iterations,
        converged,
        wall_time_s: started.elapsed().as_secs_f64(),
        hyperparameters: json!({
            "phase_starts": starts(cfg),
            "er_per_sweep_db": ers,
        }),
        trace,
    };
    Ok((model.into_params(), report))
}

fn starts(cfg: &FitConfig) -> usize {
    cfg.optimizer.restarts.max(1)
}

fn find_sweep(sweeps: &[Dataset], mzi: usize) -> Result<&Dataset> {
    sweeps
        .iter()
        .find(|d| matches!(d.meta.mode, GenerationMode::Sweep { mzi: k, .. } if k == mzi))
        .ok_or_else(|| Error::Input(format!("no sweep dataset for MZI {mzi}")))
}

struct SweepFit {
    x: Vec<f64>,
    iterations: usize,
    converged: bool,
    trace: Vec<TraceRow>,
}

/// Variables: `[φ0, φ2, er_db, offset per affected weight]`.
fn fit_sweep(sweep: &Dataset, k: usize, affected: &[(usize, Port)], cfg: &FitConfig) -> Result<SweepFit> {
    if sweep.is_empty() {
        return Err(Error::Input(format!("sweep for MZI {} is empty", k + 1)));
    }
    let v_sq: Vec<f64> = sweep.samples.iter().map(|s| s.voltages.0[k].powi(2)).collect();
    let meas: Vec<Vec<f64>> =
        affected.iter().map(|&(w, _)| sweep.samples.iter().map(|s| s.weights_db.as_slice()[w]).collect()).collect();
    let n = (v_sq.len() * affected.len()) as f64;

    let objective = |x: &[f64], g: &mut [f64]| -> f64 {
        g.iter_mut().for_each(|v| *v = 0.0);
        let (r, dr_der) = er_to_r(x[2]);
        let mut sse = 0.0;
        for (a, &(_, port)) in affected.iter().enumerate() {
            for (u, &y) in v_sq.iter().zip(&meas[a]) {
                let (val, dphi, dr) = factor_db(r, x[0] + x[1] * u, port);
                let e = x[3 + a] + val - y;
                sse += e * e;
                g[0] += 2.0 * e * dphi;
                g[1] += 2.0 * e * dphi * u;
                g[2] += 2.0 * e * dr * dr_der;
                g[3 + a] += 2.0 * e;
            }
        }
        g.iter_mut().for_each(|v| *v /= n);
        sse / n
    };

    let b = &cfg.bounds;
    let mut bounds = vec![b.phi0, b.phi2_self, b.er_db];
    bounds.extend(std::iter::repeat_n((f64::NEG_INFINITY, f64::INFINITY), affected.len()));
    let opt = cfg.optimizer.with_bounds(bounds);

    let n_starts = starts(cfg);
    let mut runs = Vec::with_capacity(n_starts);
    for s in 0..n_starts {
        let phi0 = 2.0 * PI * s as f64 / n_starts as f64;
        let phi2 = (0.5 * (b.phi2_self.0 + b.phi2_self.1)).min(PI / 4.0);
        let er = 0.5 * (b.er_db.0 + b.er_db.1);
        let (r, _) = er_to_r(er);
        let mut x0 = vec![phi0, phi2, er];
        for (a, &(_, port)) in affected.iter().enumerate() {
            let mean: f64 =
                v_sq.iter().zip(&meas[a]).map(|(u, y)| y - factor_db(r, phi0 + phi2 * u, port).0).sum::<f64>();
            x0.push(mean / v_sq.len() as f64);
        }
        runs.push(lbfgs_minimize(objective, &x0, &opt)?);
    }
    let (_, best) = pick_best(runs).expect("at least one start");
    Ok(SweepFit { converged: best.converged(), iterations: best.iterations, trace: best.trace, x: best.x })
}
