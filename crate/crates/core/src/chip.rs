//! Virtual chip: the ground-truth simulator that stands in for a fabricated
//! mesh, plus calibration/random dataset generation and dataset files.
//!
//! The phase of MZI `k` is
//! `φ_k = φ0_k + φ2_k·V_k² + Σ_{m≠k} xt_km·V_m² + φ4_k·V_k⁴`,
//! so the chip has thermal crosstalk (absent from Model 1) and a
//! non-quadratic heater response (absent from both physics models).

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{
    linear_to_db_floored, sha256_json, MeshTopology, ResolvedPath, VoltageVector, WeightMatrixDb, DEFAULT_V_MAX,
    DEFAULT_V_MIN,
};
use crate::models::physics::{er_to_r, factor_linear};

/// Knobs for building a chip from a seed. `quartic_share` is the fraction of
/// the 0→V_max phase swing produced by the quartic term; the total swing is
/// always π (one half-period).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChipRecipe {
    pub seed: u64,
    pub quartic_share: f64,
    /// `xt_km = crosstalk · (π/4) · exp(−|k − m|)`.
    pub crosstalk: f64,
    pub er_db: f64,
    pub loss_min_db: f64,
    pub loss_max_db: f64,
    pub noise_sigma_db: f64,
}

impl Default for ChipRecipe {
    fn default() -> Self {
        Self {
            seed: 2021,
            quartic_share: 0.9,
            crosstalk: 0.15,
            er_db: 25.0,
            loss_min_db: -6.0,
            loss_max_db: -3.0,
            noise_sigma_db: 0.05,
        }
    }
}

impl ChipRecipe {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualChipParams {
    pub topology: MeshTopology,
    /// rad
    pub phi0: Vec<f64>,
    /// rad/V²
    pub phi2: Vec<f64>,
    /// rad/V², `xt[k][m]` is the effect of heater `m` on MZI `k`.
    pub xt: Vec<Vec<f64>>,
    /// rad/V⁴
    pub phi4: Vec<f64>,
    pub er_db: f64,
    pub loss_db: WeightMatrixDb,
    pub noise_sigma_db: f64,
    pub seed: u64,
    pub v_min: f64,
    pub v_max: f64,
}

impl VirtualChipParams {
    pub fn from_recipe(topology: MeshTopology, recipe: &ChipRecipe) -> Result<Self> {
        let topology = topology.validated()?;
        let m = topology.n_mzis;
        let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
        let half_period = PI / (DEFAULT_V_MAX * DEFAULT_V_MAX);
        let phi0: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let phi2 = vec![half_period * (1.0 - recipe.quartic_share); m];
        let phi4 = vec![half_period * recipe.quartic_share / (DEFAULT_V_MAX * DEFAULT_V_MAX); m];
        let xt = (0..m)
            .map(|k| {
                (0..m)
                    .map(|j| if j == k { 0.0 } else { recipe.crosstalk * (PI / 4.0) * (-(k.abs_diff(j) as f64)).exp() })
                    .collect()
            })
            .collect();
        let losses: Vec<f64> = (0..topology.n_weights())
            .map(|_| {
                if recipe.loss_max_db > recipe.loss_min_db {
                    rng.random_range(recipe.loss_min_db..recipe.loss_max_db)
                } else {
                    recipe.loss_min_db
                }
            })
            .collect();
        let p = Self {
            loss_db: WeightMatrixDb::new(topology.n_outputs, topology.n_inputs, losses)?,
            topology,
            phi0,
            phi2,
            xt,
            phi4,
            er_db: recipe.er_db,
            noise_sigma_db: recipe.noise_sigma_db,
            seed: recipe.seed,
            v_min: DEFAULT_V_MIN,
            v_max: DEFAULT_V_MAX,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.topology.n_mzis;
        let bad = |msg: String| Err(Error::Input(format!("invalid chip config: {msg}")));
        if self.phi0.len() != m || self.phi2.len() != m || self.phi4.len() != m || self.xt.len() != m {
            return bad(format!("per-MZI arrays must have {m} entries"));
        }
        if self.xt.iter().any(|row| row.len() != m) {
            return bad("crosstalk matrix must be M x M".into());
        }
        if self.loss_db.n_outputs() != self.topology.n_outputs || self.loss_db.n_inputs() != self.topology.n_inputs {
            return bad("loss matrix does not match topology".into());
        }
        if self.phi2.iter().any(|&p| !(p > 0.0)) {
            return bad("phi2 must be positive".into());
        }
        if !(self.er_db > 0.0) {
            return bad("er_db must be positive".into());
        }
        if !(self.noise_sigma_db >= 0.0) {
            return bad("noise_sigma_db must be non-negative".into());
        }
        if self.loss_db.as_slice().iter().any(|&l| !(l <= 0.0)) {
            return bad("losses must be <= 0 dB".into());
        }
        if !(self.v_max > self.v_min) {
            return bad("empty voltage range".into());
        }
        for k in 0..m {
            if self.xt[k][k] != 0.0 {
                return bad(format!("crosstalk diagonal xt[{k}][{k}] must be zero"));
            }
            if self.xt[k].iter().any(|x| !(x.abs() < self.phi2[k])) {
                return bad(format!("crosstalk onto MZI {} is not weaker than its self-heating", k + 1));
            }
        }
        self.topology.resolve().map(|_| ())
    }

    /// Multiplies the crosstalk matrix by `scale`.
    pub fn scale_crosstalk(&mut self, scale: f64) {
        self.xt.iter_mut().flatten().for_each(|x| *x *= scale);
    }

    pub fn hash(&self) -> String {
        sha256_json(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read chip config {}: {e}", path.display())))?;
        let p: Self = serde_json::from_str(&s).map_err(|e| Error::Input(format!("bad chip config: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_pretty_json(path, self)
    }
}

pub(crate) fn write_pretty_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    #[serde(rename = "v")]
    pub voltages: VoltageVector,
    #[serde(rename = "w_db")]
    pub weights_db: WeightMatrixDb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum GenerationMode {
    /// One MZI swept, the others held at `rest`.
    Sweep {
        mzi: usize,
        n_points: usize,
        rest: Vec<f64>,
    },
    Random {
        seed: u64,
    },
    /// A partition of another dataset.
    Split {
        part: String,
        split_seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub chip_seed: u64,
    #[serde(flatten)]
    pub mode: GenerationMode,
    pub v_min: f64,
    pub v_max: f64,
    pub n_samples: usize,
    pub chip_config_hash: String,
    pub topology_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// A new dataset holding `samples`, relabelled as a split part.
    pub fn subset(&self, samples: Vec<Sample>, part: &str, split_seed: u64) -> Dataset {
        let mut meta = self.meta.clone();
        meta.mode = GenerationMode::Split { part: part.to_string(), split_seed };
        meta.n_samples = samples.len();
        Dataset { samples, meta }
    }

    /// Writes JSON lines to `path` and the metadata to the sidecar path.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        write_pretty_json(&meta_path(path), &self.meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let open =
            |p: &Path| File::open(p).map_err(|e| Error::Input(format!("cannot open dataset {}: {e}", p.display())));
        let mut samples = Vec::new();
        for (n, line) in BufReader::new(open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: Sample =
                serde_json::from_str(&line).map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), n + 1)))?;
            samples.push(s);
        }
        let meta: DatasetMeta = serde_json::from_reader(BufReader::new(open(&meta_path(path))?))
            .map_err(|e| Error::Input(format!("bad dataset metadata for {}: {e}", path.display())))?;
        if let Some(first) = samples.first() {
            let dims = (first.voltages.len(), first.weights_db.n_outputs(), first.weights_db.n_inputs());
            if samples.iter().any(|s| (s.voltages.len(), s.weights_db.n_outputs(), s.weights_db.n_inputs()) != dims) {
                return Err(Error::Input(format!("{}: samples have inconsistent dimensions", path.display())));
            }
        }
        Ok(Dataset { samples, meta })
    }
}

/// `data.jsonl` → `data.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// A chip instance: parameters plus the seeded generator used for
/// measurement noise.
#[derive(Debug, Clone)]
pub struct VirtualChip {
    params: VirtualChipParams,
    paths: Vec<ResolvedPath>,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
}

impl VirtualChip {
    pub fn new(params: VirtualChipParams) -> Result<Self> {
        params.validate()?;
        let paths = params.topology.resolve()?;
        let noise =
            Normal::new(0.0, params.noise_sigma_db).map_err(|e| Error::Input(format!("invalid noise level: {e}")))?;
        let rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x6e6f_6973_6500);
        Ok(Self { params, paths, rng, noise })
    }

    pub fn params(&self) -> &VirtualChipParams {
        &self.params
    }

    pub fn n_mzis(&self) -> usize {
        self.params.topology.n_mzis
    }

    /// Phase of every MZI at voltages `v`.
    pub fn phases(&self, v: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let v_sq: Vec<f64> = v.iter().map(|x| x * x).collect();
        (0..v.len())
            .map(|k| {
                let cross: f64 = p.xt[k].iter().zip(&v_sq).map(|(c, u)| c * u).sum();
                p.phi0[k] + p.phi2[k] * v_sq[k] + cross + p.phi4[k] * v_sq[k] * v_sq[k]
            })
            .collect()
    }

    /// Noise-free measurement; a pure function of the parameters and `v`.
    pub fn measure_clean(&self, v: &VoltageVector) -> Result<WeightMatrixDb> {
        let p = &self.params;
        if v.len() != p.topology.n_mzis {
            return Err(Error::Shape(format!("{} voltages for {} MZIs", v.len(), p.topology.n_mzis)));
        }
        v.check_range(p.v_min, p.v_max)?;
        let phi = self.phases(v.as_slice());
        let (r, _) = er_to_r(p.er_db);
        let values = self
            .paths
            .iter()
            .zip(p.loss_db.as_slice())
            .map(|(path, &loss_db)| {
                let lin: f64 =
                    path.mzis.iter().zip(&path.ports).map(|(&k, &port)| factor_linear(r, phi[k], port)).product();
                linear_to_db_floored(10f64.powf(loss_db / 10.0) * lin)
            })
            .collect();
        WeightMatrixDb::new(p.topology.n_outputs, p.topology.n_inputs, values)
    }

    pub fn measure(&mut self, v: &VoltageVector, noise: Noise) -> Result<WeightMatrixDb> {
        let mut w = self.measure_clean(v)?;
        if noise == Noise::On {
            for x in w.as_mut_slice() {
                *x += self.noise.sample(&mut self.rng);
            }
        }
        Ok(w)
    }

    fn meta(&self, mode: GenerationMode, n_samples: usize) -> DatasetMeta {
        DatasetMeta {
            chip_seed: self.params.seed,
            mode,
            v_min: self.params.v_min,
            v_max: self.params.v_max,
            n_samples,
            chip_config_hash: self.params.hash(),
            topology_hash: self.params.topology.hash(),
        }
    }

    /// Sweeps MZI `mzi` (1-based) over `[v_min, v_max]` in `n_points` steps
    /// with the other heaters at `rest`. Measurements include chip noise.
    pub fn sweep_dataset(&mut self, mzi: usize, n_points: usize, rest: &VoltageVector) -> Result<Dataset> {
        let m = self.n_mzis();
        if mzi == 0 || mzi > m {
            return Err(Error::Domain(format!("MZI index {mzi} outside [1, {m}]")));
        }
        if n_points < 2 {
            return Err(Error::Domain("a sweep needs at least 2 points".into()));
        }
        if rest.len() != m {
            return Err(Error::Shape(format!("rest vector has {} entries for {m} MZIs", rest.len())));
        }
        let (lo, hi) = (self.params.v_min, self.params.v_max);
        let mut samples = Vec::with_capacity(n_points);
        for n in 0..n_points {
            let mut v = rest.clone();
            v.0[mzi - 1] = lo + (hi - lo) * n as f64 / (n_points - 1) as f64;
            let w = self.measure(&v, Noise::On)?;
            samples.push(Sample { voltages: v, weights_db: w });
        }
        let mode = GenerationMode::Sweep { mzi, n_points, rest: rest.0.clone() };
        Ok(Dataset { meta: self.meta(mode, n_points), samples })
    }

    /// `n_samples` voltage vectors drawn uniformly from the voltage range with
    /// their own seeded generator; measurements include chip noise.
    pub fn random_dataset(&mut self, n_samples: usize, seed: u64) -> Result<Dataset> {
        let m = self.n_mzis();
        let (lo, hi) = (self.params.v_min, self.params.v_max);
        let mut vrng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let v = VoltageVector((0..m).map(|_| vrng.random_range(lo..=hi)).collect());
            let w = self.measure(&v, Noise::On)?;
            samples.push(Sample { voltages: v, weights_db: w });
        }
        Ok(Dataset { meta: self.meta(GenerationMode::Random { seed }, n_samples), samples })
    }
}
