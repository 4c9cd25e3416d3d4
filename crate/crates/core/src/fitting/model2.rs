use std::f64::consts::PI;
use std::time::Instant;

use serde_json::json;

use super::{lbfgs_minimize, median, pick_best, rmse_of, FitBounds, FitConfig, FitReport, Minimum};
use crate::chip::Sample;
use crate::error::{Error, Result};
use crate::mesh::{MeshTopology, ResolvedPath, WeightMatrixDb};
use crate::models::physics::{er_to_r, model2_path_eval, path_block_len};
use crate::models::{Model1Params, Model2, Model2Params, Model2Path, ModelKind, WeightModel};

/// Model 2 fit.
///
/// Every weight is first fitted on its own, over its path block and a private
/// ER, from several phase starts. The per-path ERs are then replaced by their
/// median and all parameters are polished jointly. With a Model 1 `prefit` the
/// starts are built around its phases (cross terms zero) and the Model 1
/// embedding is kept as a fallback, so the result never fits `train` worse
/// than Model 1 does. Without one, each path tries every combination of the
/// phase starts over its elements.
pub fn fit_model2(
    topology: &MeshTopology,
    train: &[Sample],
    cfg: &FitConfig,
    prefit: Option<&Model1Params>,
) -> Result<(Model2Params, FitReport)> {
    let started = Instant::now();
    if train.is_empty() {
        return Err(Error::Input("model 2 fit needs training samples".into()));
    }
    let paths = topology.resolve()?;
    let m = topology.n_mzis;
    if train.iter().any(|s| s.voltages.len() != m || s.weights_db.as_slice().len() != paths.len()) {
        return Err(Error::Shape("training samples do not match the topology".into()));
    }
    let embedding = prefit.map(Model2Params::from_model1).transpose()?;
    let v_sq: Vec<f64> = train.iter().flat_map(|s| s.voltages.as_slice().iter().map(|x| x * x)).collect();

    let mut blocks = Vec::with_capacity(paths.len());
    let mut ers = Vec::with_capacity(paths.len());
    let mut iterations = 0;
    let mut trace = Vec::new();
    for (w, path) in paths.iter().enumerate() {
        let meas: Vec<f64> = train.iter().map(|s| s.weights_db.as_slice()[w]).collect();
        let seed = embedding.as_ref().map(|e| (e.er_db, &e.paths[w], e.loss_db.as_slice()[w]));
        let best = fit_path(path, &v_sq, &meas, m, seed, cfg)?;
        ers.push(best.x[0]);
        blocks.push(best.x[1..].to_vec());
        iterations += best.iterations;
        trace.extend(best.trace);
    }

    let n_in = topology.n_inputs;
    let mut loss = Vec::with_capacity(paths.len());
    let mut p2 = Vec::with_capacity(paths.len());
    for (w, (block, path)) in blocks.iter().zip(&paths).enumerate() {
        loss.push(block[0]);
        p2.push(Model2Path {
            i: w % n_in + 1,
            j: w / n_in + 1,
            phi0: (0..path.len()).map(|e| block[1 + e * (1 + m)]).collect(),
            phi2: (0..path.len()).map(|e| block[2 + e * (1 + m)..1 + (e + 1) * (1 + m)].to_vec()).collect(),
        });
    }
    let er_db = median(&ers);
    let joint = Model2Params {
        topology: topology.clone(),
        er_db,
        loss_db: WeightMatrixDb::new(topology.n_outputs, n_in, loss)?,
        paths: p2,
    };

    let mut model = Model2::new(joint)?;
    let polished = polish(&model, train, cfg)?;
    let mut best = polished;
    if let Some(e) = embedding {
        let m1 = Model2::new(e)?;
        let (f_embed, _) = mse(&m1, train, &m1.param_vector());
        if f_embed < best.f {
            let alt = polish(&m1, train, cfg)?;
            if alt.f < best.f {
                best = alt;
            }
        }
    }
    model.set_param_vector(&best.x)?;
    iterations += best.iterations;
    let converged = best.converged();
    trace.extend(best.trace);

    let report = FitReport {
        model: ModelKind::Model2,
        train_rmse_db: rmse_of(&model, train)?,
        validation_rmse_db: None,
        test_rmse_db: None,
        iterations,
        converged,
        wall_time_s: started.elapsed().as_secs_f64(),
        hyperparameters: json!({
            "phase_starts": cfg.optimizer.restarts.max(1),
            "model1_prefit": prefit.is_some(),
            "er_per_path_db": ers,
        }),
        trace,
    };
    Ok((model.into_params(), report))
}

/// Box bounds for a full Model 2 parameter vector.
pub(crate) fn model2_bounds(model: &Model2, b: &FitBounds) -> Vec<(f64, f64)> {
    let m = model.n_voltages();
    let mut out = vec![b.er_db];
    for path in model.paths() {
        out.extend(path_bounds(path, m, b));
    }
    out
}

/// Bounds for one path block `[loss, (φ0, φ2[0..M]) per element]`.
fn path_bounds(path: &ResolvedPath, m: usize, b: &FitBounds) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(path_block_len(path.len(), m));
    out.push(b.loss_db);
    for &k in &path.mzis {
        out.push(b.phi0);
        out.extend((0..m).map(|q| if q == k { b.phi2_self } else { b.phi2_cross }));
    }
    out
}

fn mse(model: &Model2, train: &[Sample], x: &[f64]) -> (f64, Vec<f64>) {
    let mut m = model.clone();
    let mut g = vec![0.0; x.len()];
    let n = (train.len() * model.n_weights()) as f64;
    if m.set_param_vector(x).is_err() {
        return (f64::NAN, g);
    }
    match m.sse_grad(train, &mut g) {
        Ok(sse) => {
            g.iter_mut().for_each(|v| *v /= n);
            (sse / n, g)
        }
        Err(_) => (f64::NAN, g),
    }
}

fn polish(model: &Model2, train: &[Sample], cfg: &FitConfig) -> Result<Minimum> {
    let opt = cfg.optimizer.with_bounds(model2_bounds(model, &cfg.bounds));
    let mut scratch = model.clone();
    let n = (train.len() * model.n_weights()) as f64;
    lbfgs_minimize(
        |x, g| {
            if scratch.set_param_vector(x).is_err() {
                return f64::NAN;
            }
            match scratch.sse_grad(train, g) {
                Ok(sse) => {
                    g.iter_mut().for_each(|v| *v /= n);
                    sse / n
                }
                Err(_) => f64::NAN,
            }
        },
        &model.param_vector(),
        &opt,
    )
}

/// Fits one path. Variables: `[er_db, loss, (φ0, φ2[0..M]) per element]`.
fn fit_path(
    path: &ResolvedPath,
    v_sq: &[f64],
    meas: &[f64],
    m: usize,
    seed: Option<(f64, &Model2Path, f64)>,
    cfg: &FitConfig,
) -> Result<Minimum> {
    let len = path_block_len(path.len(), m);
    let n = meas.len() as f64;
    let objective = |x: &[f64], g: &mut [f64]| -> f64 {
        g.iter_mut().for_each(|v| *v = 0.0);
        let (r, dr_der) = er_to_r(x[0]);
        let mut local = vec![0.0; len];
        let mut sse = 0.0;
        for (u, &y) in v_sq.chunks_exact(m).zip(meas) {
            let (val, d_r) = model2_path_eval(path, &x[1..], r, u, Some(&mut local));
            let e = val - y;
            sse += e * e;
            g[0] += 2.0 * e * d_r * dr_der;
            for (gp, gl) in g[1..].iter_mut().zip(&local) {
                *gp += 2.0 * e * gl;
            }
        }
        g.iter_mut().for_each(|v| *v /= n);
        sse / n
    };

    let b = &cfg.bounds;
    let mut bounds = vec![b.er_db];
    bounds.extend(path_bounds(path, m, b));
    let opt = cfg.optimizer.with_bounds(bounds);
    let n_phase = cfg.optimizer.restarts.max(1);
    let shift = |s: usize| 2.0 * PI * s as f64 / n_phase as f64;

    let mut starts: Vec<Vec<f64>> = Vec::new();
    match seed {
        Some((er, p, loss)) => {
            for s in 0..n_phase {
                let mut x = vec![er.clamp(b.er_db.0, b.er_db.1), loss.clamp(b.loss_db.0, b.loss_db.1)];
                for (phi0, row) in p.phi0.iter().zip(&p.phi2) {
                    x.push(phi0 + shift(s));
                    x.extend_from_slice(row);
                }
                starts.push(x);
            }
        }
        None => {
            let er = 0.5 * (b.er_db.0 + b.er_db.1);
            let phi2 = (0.5 * (b.phi2_self.0 + b.phi2_self.1)).min(PI / 4.0);
            let combos = n_phase.pow(path.len() as u32);
            for c in 0..combos {
                let mut x = vec![er, 0.0];
                let mut code = c;
                for &k in &path.mzis {
                    x.push(shift(code % n_phase));
                    code /= n_phase;
                    x.extend((0..m).map(|q| if q == k { phi2 } else { 0.0 }));
                }
                // Start the loss at the mean residual of the phases alone.
                let (r, _) = er_to_r(er);
                let mut resid = 0.0;
                for (u, &y) in v_sq.chunks_exact(m).zip(meas) {
                    resid += y - model2_path_eval(path, &x[1..], r, u, None).0;
                }
                x[1] = (resid / n).clamp(b.loss_db.0, b.loss_db.1);
                starts.push(x);
            }
        }
    }

    let mut runs = Vec::with_capacity(starts.len());
    for x0 in &starts {
        runs.push(lbfgs_minimize(objective, x0, &opt)?);
    }
    Ok(pick_best(runs).expect("at least one start").1)
}
