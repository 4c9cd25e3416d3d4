//! Training of the three models by minimizing the dB error.
//!
//! The optimizers work on the mean squared error, which has the same
//! minimizers as the RMSE but stays smooth at a perfect fit; reports and
//! [`rmse_objective`] use the RMSE itself.

pub mod lbfgs;
mod model1;
mod model2;
mod model3;
mod split;

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chip::Sample;
use crate::error::{Error, Result};
use crate::models::{ModelKind, WeightModel};

pub use lbfgs::{lbfgs_minimize, lbfgs_minimize_observed, Minimum, OptimizerConfig, TraceRow};
pub use model1::fit_model1;
pub use model2::fit_model2;
pub use model3::{train_model3, Architecture};
pub use split::{split_dataset, Split, SplitSpec};

/// Box bounds applied to the physics-model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitBounds {
    pub phi0: (f64, f64),
    pub phi2_self: (f64, f64),
    pub phi2_cross: (f64, f64),
    pub er_db: (f64, f64),
    pub loss_db: (f64, f64),
}

impl Default for FitBounds {
    fn default() -> Self {
        Self {
            phi0: (-2.0 * PI, 4.0 * PI),
            phi2_self: (0.0, 2.0),
            phi2_cross: (-0.5, 0.5),
            er_db: (10.0, 40.0),
            loss_db: (-20.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub optimizer: OptimizerConfig,
    pub bounds: FitBounds,
    /// Hidden-layer widths tried for Model 3.
    pub search_space: Vec<Architecture>,
    /// Validation RMSE is checked every this many L-BFGS iterations.
    pub validation_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig { memory: 20, ..OptimizerConfig::default() },
            bounds: FitBounds::default(),
            search_space: Architecture::default_search_space(),
            validation_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: ModelKind,
    pub train_rmse_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_rmse_db: Option<f64>,
    /// `None` until the model is scored on a test set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_rmse_db: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Wall-clock seconds. Kept out of report files so reruns are
    /// byte-identical.
    #[serde(skip)]
    pub wall_time_s: f64,
    pub hyperparameters: serde_json::Value,
    /// Optimizer traces of the runs that produced the result, concatenated;
    /// each run starts again at iteration 0.
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl FitReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::chip::write_pretty_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read fit report {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// RMSE in dB over all samples and weights, and its gradient with respect to
/// the model parameters. At a perfect fit the gradient is zero.
pub fn rmse_objective(model: &dyn WeightModel, samples: &[Sample]) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::Domain("RMSE over an empty sample set".into()));
    }
    let n = (samples.len() * model.n_weights()) as f64;
    let mut grad = vec![0.0; model.n_params()];
    let sse = model.sse_grad(samples, &mut grad)?;
    let rmse = (sse / n).sqrt();
    let scale = if rmse > 0.0 { 1.0 / (2.0 * n * rmse) } else { 0.0 };
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((rmse, grad))
}

/// RMSE of `model` on `samples` without gradients.
pub fn rmse_of(model: &dyn WeightModel, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("RMSE over an empty sample set".into()));
    }
    let nw = model.n_weights();
    let mut pred = vec![0.0; nw];
    let mut sse = 0.0;
    for s in samples {
        model.predict_into(s.voltages.as_slice(), &mut pred)?;
        for (p, m) in pred.iter().zip(s.weights_db.as_slice()) {
            sse += (p - m) * (p - m);
        }
    }
    Ok((sse / (samples.len() * nw) as f64).sqrt())
}

/// Best of several optimizer runs: lowest objective, then fewest iterations,
/// then lowest start index.
pub(crate) fn pick_best(runs: Vec<Minimum>) -> Option<(usize, Minimum)> {
    runs.into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.f.total_cmp(&b.f).then(a.iterations.cmp(&b.iterations)).then(ia.cmp(ib)))
}

/// Writes an optimizer trace as CSV.
pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "iteration,objective,gradient_norm,step_length")?;
    for r in trace {
        writeln!(w, "{},{},{},{}", r.iteration, r.objective, r.gradient_norm, r.step_length)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{MeshTopology, VoltageVector, WeightMatrixDb};
    use crate::models::{Model1, Model1Params};

    fn model() -> Model1 {
        Model1::new(Model1Params {
            topology: MeshTopology::default_3x3(),
            er_db: 22.0,
            loss_db: WeightMatrixDb::filled(3, 3, -4.0),
            phi0: vec![0.3, 1.0, 2.0, 4.0, 5.5],
            phi2: vec![0.8; 5],
        })
        .unwrap()
    }

    fn samples_from(m: &Model1, offset: f64) -> Vec<Sample> {
        (0..20)
            .map(|n| {
                let v = VoltageVector((0..5).map(|k| ((n * 7 + k * 3) % 11) as f64 / 5.5).collect());
                let mut w = m.predict(&v).unwrap();
                w.as_mut_slice().iter_mut().for_each(|x| *x -= offset);
                Sample { voltages: v, weights_db: w }
            })
            .collect()
    }

    #[test]
    fn rmse_zero_and_constant_offset() {
        let m = model();
        let (r, g) = rmse_objective(&m, &samples_from(&m, 0.0)).unwrap();
        assert_eq!(r, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
        let (r, _) = rmse_objective(&m, &samples_from(&m, 1.0)).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert!(matches!(rmse_objective(&m, &[]), Err(Error::Domain(_))));
    }

    #[test]
    fn pick_best_tie_breaks() {
        let mk = |f: f64, it: usize| Minimum {
            x: vec![],
            f,
            iterations: it,
            termination: lbfgs::Termination::GradientTolerance,
            trace: vec![],
        };
        let (i, _) = pick_best(vec![mk(1.0, 5), mk(0.5, 9), mk(0.5, 3), mk(0.5, 3)]).unwrap();
        assert_eq!(i, 2);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
