//! Forward models mapping heater voltages to predicted weight matrices (dB).

pub mod physics;
pub mod surrogate;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chip::Sample;
use crate::error::{Error, Result};
use crate::mesh::{VoltageVector, WeightMatrixDb};

pub use physics::{Model1, Model1Params, Model2, Model2Params, Model2Path};
pub use surrogate::{Model3, Model3Params, Normalizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Model1,
    Model2,
    Model3,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Model1, ModelKind::Model2, ModelKind::Model3];

    /// Short tag used in file names and CSV rows.
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Model1 => "m1",
            ModelKind::Model2 => "m2",
            ModelKind::Model3 => "m3",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Common interface of the three models, used by fitting and evaluation.
///
/// Predictions are flattened output-major (`w = j * n_inputs + i`, 0-based).
pub trait WeightModel {
    fn kind(&self) -> ModelKind;
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    /// Number of heater voltages (`M`).
    fn n_voltages(&self) -> usize;
    fn n_params(&self) -> usize;
    fn param_vector(&self) -> Vec<f64>;
    fn set_param_vector(&mut self, x: &[f64]) -> Result<()>;
    fn predict_into(&self, v: &[f64], out: &mut [f64]) -> Result<()>;

    /// Predictions and the dense Jacobian (`n_weights × n_params`,
    /// row-major).
    fn jacobian(&self, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;

    /// Sum of squared dB errors over all samples and weights; `grad` is
    /// overwritten with its gradient.
    fn sse_grad(&self, samples: &[Sample], grad: &mut [f64]) -> Result<f64>;

    fn n_weights(&self) -> usize {
        self.n_inputs() * self.n_outputs()
    }

    fn predict(&self, v: &VoltageVector) -> Result<WeightMatrixDb> {
        let mut out = vec![0.0; self.n_weights()];
        self.predict_into(v.as_slice(), &mut out)?;
        WeightMatrixDb::new(self.n_outputs(), self.n_inputs(), out)
    }
}

/// Jacobian of every predicted weight with respect to the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub predictions: Vec<f64>,
    pub n_params: usize,
    /// Row-major, one row per weight.
    pub jacobian: Vec<f64>,
}

impl ModelGradient {
    pub fn row(&self, w: usize) -> &[f64] {
        &self.jacobian[w * self.n_params..(w + 1) * self.n_params]
    }
}

/// Analytic gradient of each predicted `W_ij` (dB) at parameter vector `at`.
/// Entries clamped by the dB floor have zero gradient.
pub fn model_gradient<M: WeightModel + Clone>(model: &M, v: &VoltageVector, at: &[f64]) -> Result<ModelGradient> {
    let mut m = model.clone();
    m.set_param_vector(at)?;
    let (predictions, jacobian) = m.jacobian(v.as_slice())?;
    Ok(ModelGradient { predictions, n_params: m.n_params(), jacobian })
}

/// Parameters of any of the three models, as stored in model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelParams {
    Model1(Model1Params),
    Model2(Model2Params),
    Model3(Model3Params),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Model1(_) => ModelKind::Model1,
            ModelParams::Model2(_) => ModelKind::Model2,
            ModelParams::Model3(_) => ModelKind::Model3,
        }
    }

    pub fn build(&self) -> Result<AnyModel> {
        Ok(match self {
            ModelParams::Model1(p) => AnyModel::Model1(Model1::new(p.clone())?),
            ModelParams::Model2(p) => AnyModel::Model2(Model2::new(p.clone())?),
            ModelParams::Model3(p) => AnyModel::Model3(Model3::new(p.clone())?),
        })
    }
}

/// On-disk model: parameters plus the hash of the topology they were fitted
/// against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub topology_hash: String,
    #[serde(flatten)]
    pub params: ModelParams,
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read model file {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// A built model of any kind.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Model1(Model1),
    Model2(Model2),
    Model3(Model3),
}

impl AnyModel {
    pub fn as_dyn(&self) -> &dyn WeightModel {
        match self {
            AnyModel::Model1(m) => m,
            AnyModel::Model2(m) => m,
            AnyModel::Model3(m) => m,
        }
    }

    pub fn to_params(&self) -> ModelParams {
        match self {
            AnyModel::Model1(m) => ModelParams::Model1(m.params().clone()),
            AnyModel::Model2(m) => ModelParams::Model2(m.params().clone()),
            AnyModel::Model3(m) => ModelParams::Model3(m.to_params()),
        }
    }
}
