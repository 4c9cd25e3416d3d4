use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::lbfgs::{lbfgs_minimize_observed, Control};
use super::{FitConfig, FitReport, TraceRow};
use crate::chip::Sample;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::models::{Model3, Model3Params, ModelKind, Normalizer, WeightModel};

/// Hidden-layer widths of one candidate network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Architecture(pub Vec<usize>);

impl Architecture {
    /// One and two hidden layers of 16, 32, 64 or 128 units.
    pub fn default_search_space() -> Vec<Architecture> {
        let widths = [16, 32, 64, 128];
        let one = widths.iter().map(|&w| Architecture(vec![w]));
        let two = widths.iter().map(|&w| Architecture(vec![w, w]));
        one.chain(two).collect()
    }
}

struct Candidate {
    arch: Architecture,
    x: Vec<f64>,
    val_rmse: f64,
    best_iteration: usize,
    iterations: usize,
    converged: bool,
    trace: Vec<TraceRow>,
}

/// Trains one network per architecture on `train` (full-batch L-BFGS on the
/// mean squared dB error) and keeps, for each, the parameters with the lowest
/// validation RMSE seen at the checkpoints (every `validation_every`
/// iterations, including the initialization). Returns the architecture with
/// the lowest validation RMSE; ties go to the earlier entry.
pub fn train_model3(
    train: &[Sample],
    validation: &[Sample],
    search_space: &[Architecture],
    cfg: &FitConfig,
) -> Result<(Model3Params, FitReport)> {
    let started = Instant::now();
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Size("model 3 needs non-empty training and validation sets".into()));
    }
    if search_space.is_empty() {
        return Err(Error::Input("empty architecture search space".into()));
    }
    let n_volt = train[0].voltages.len();
    let (n_out, n_in) = (train[0].weights_db.n_outputs(), train[0].weights_db.n_inputs());
    let normalizer = Normalizer::fit(train.iter().map(|s| s.voltages.as_slice()))?;
    let every = cfg.validation_every.max(1);

    let mut candidates = Vec::new();
    let mut failures = Vec::new();
    for (a, arch) in search_space.iter().enumerate() {
        let mut model = Model3::zeros(n_volt, &arch.0, n_in, n_out)?;
        model.set_normalizer(normalizer.clone())?;
        let mlp = model.mlp().clone();
        let feats = model.features(train.iter().map(|s| s.voltages.as_slice()))?;
        let targets = Model3::targets(train);
        let val_feats = model.features(validation.iter().map(|s| s.voltages.as_slice()))?;
        let val_targets = Model3::targets(validation);
        let n = targets.len() as f64;
        let n_val = val_targets.len() as f64;

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.optimizer.seed, a as u64));
        let x0 = mlp.init(&mut rng);
        let mut best: (f64, Vec<f64>, usize) = (f64::INFINITY, x0.clone(), 0);
        let result = lbfgs_minimize_observed(
            |x, g| {
                let sse = mlp.sse_grad(x, &feats, &targets, g);
                g.iter_mut().for_each(|v| *v /= n);
                sse / n
            },
            &x0,
            &cfg.optimizer,
            |p| {
                if p.iteration % every == 0 {
                    let y = mlp.forward(p.x, val_feats.clone()).pop().expect("output layer");
                    let val = ((&y - &val_targets).mapv(|e| e * e).sum() / n_val).sqrt();
                    if val < best.0 {
                        best = (val, p.x.to_vec(), p.iteration);
                    }
                }
                Control::Continue
            },
        );
        match result {
            Ok(min) => {
                // The final iterate is a checkpoint too.
                let y = mlp.forward(&min.x, val_feats.clone()).pop().expect("output layer");
                let val = ((&y - &val_targets).mapv(|e| e * e).sum() / n_val).sqrt();
                if val < best.0 {
                    best = (val, min.x.clone(), min.iterations);
                }
                candidates.push(Candidate {
                    arch: arch.clone(),
                    x: best.1,
                    val_rmse: best.0,
                    best_iteration: best.2,
                    iterations: min.iterations,
                    converged: min.converged(),
                    trace: min.trace,
                });
            }
            Err(e) if e.is_numerical() => failures.push(format!("{:?}: {e}", arch.0)),
            Err(e) => return Err(e),
        }
    }

    let search: Vec<_> = candidates
        .iter()
        .map(|c| json!({"hidden": c.arch.0, "validation_rmse_db": c.val_rmse, "best_iteration": c.best_iteration}))
        .collect();
    let Some(chosen) = candidates.into_iter().reduce(|a, b| if b.val_rmse < a.val_rmse { b } else { a }) else {
        return Err(Error::Training(format!("every model 3 run diverged: {}", failures.join("; "))));
    };

    let mut model = Model3::zeros(n_volt, &chosen.arch.0, n_in, n_out)?;
    model.set_normalizer(normalizer)?;
    model.set_param_vector(&chosen.x)?;
    let report = FitReport {
        model: ModelKind::Model3,
        train_rmse_db: super::rmse_of(&model, train)?,
        validation_rmse_db: Some(chosen.val_rmse),
        test_rmse_db: None,
        iterations: chosen.iterations,
        converged: chosen.converged,
        wall_time_s: started.elapsed().as_secs_f64(),
        hyperparameters: json!({
            "hidden": chosen.arch.0,
            "selected_iteration": chosen.best_iteration,
            "validation_every": every,
            "search": search,
            "diverged": failures,
        }),
        trace: chosen.trace,
    };
    Ok((model.to_params(), report))
}
