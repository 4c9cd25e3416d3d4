//! Mesh topology, weight matrices and the elementary dB/linear conversions.
//!
//! Indices in files and in [`PathElement::mzi`] are 1-based to match the
//! usual MZI numbering. Everything exposed through Rust accessors
//! (`WeightMatrixDb::get`, [`ResolvedPath::mzis`]) is 0-based.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Linear power ratios below this are clamped before conversion to dB.
pub const LINEAR_FLOOR: f64 = 1e-9;
/// `linear_to_db(LINEAR_FLOOR)`.
pub const DB_FLOOR: f64 = -90.0;

pub const DEFAULT_V_MIN: f64 = 0.0;
pub const DEFAULT_V_MAX: f64 = 2.0;

pub fn db_to_linear(x_db: f64) -> Result<f64> {
    if !x_db.is_finite() {
        return Err(Error::Domain(format!("db_to_linear of non-finite value {x_db}")));
    }
    Ok(10f64.powf(x_db / 10.0))
}

pub fn linear_to_db(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("linear_to_db requires a finite x > 0, got {x}")));
    }
    Ok(10.0 * x.log10())
}

/// `linear_to_db` after clamping to [`LINEAR_FLOOR`]. Never fails for finite
/// or zero input.
pub fn linear_to_db_floored(x: f64) -> f64 {
    10.0 * x.max(LINEAR_FLOOR).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Port {
    /// Contributes `¼|r − e^{iφ}|²`.
    Cross,
    /// Complementary port, `¼|r + e^{iφ}|²`.
    Bar,
}

impl Port {
    /// Sign `s` in `¼(1 + r² − 2·s·r·cos φ)`.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Port::Cross => 1.0,
            Port::Bar => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathElement {
    /// 1-based MZI index.
    pub mzi: usize,
    pub port: Port,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyPath {
    /// 1-based input index.
    pub i: usize,
    /// 1-based output index.
    pub j: usize,
    pub elements: Vec<PathElement>,
}

/// Which MZIs (and which of their ports) light travels through from each
/// input to each output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshTopology {
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub n_mzis: usize,
    pub paths: Vec<TopologyPath>,
}

/// A path with 0-based MZI indices, ready for model evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPath {
    pub mzis: Vec<usize>,
    pub ports: Vec<Port>,
}

impl ResolvedPath {
    pub fn len(&self) -> usize {
        self.mzis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mzis.is_empty()
    }

    pub fn contains(&self, mzi: usize) -> bool {
        self.mzis.contains(&mzi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    MissingPath { i: usize, j: usize },
    EmptyPath { i: usize, j: usize },
    DuplicatePath { i: usize, j: usize },
    PathOutOfRange { i: usize, j: usize },
    MziOutOfRange { i: usize, j: usize, mzi: usize },
    RepeatedMzi { i: usize, j: usize, mzi: usize },
    NoMzis,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingPath { i, j } => write!(f, "no path for ({i},{j})"),
            Violation::EmptyPath { i, j } => write!(f, "path ({i},{j}) has no elements"),
            Violation::DuplicatePath { i, j } => write!(f, "path ({i},{j}) listed more than once"),
            Violation::PathOutOfRange { i, j } => write!(f, "path ({i},{j}) is outside the port range"),
            Violation::MziOutOfRange { i, j, mzi } => {
                write!(f, "path ({i},{j}) references MZI {mzi} outside [1, M]")
            }
            Violation::RepeatedMzi { i, j, mzi } => write!(f, "path ({i},{j}) repeats MZI {mzi}"),
            Violation::NoMzis => write!(f, "topology has no MZIs"),
        }
    }
}

pub fn validate_topology(t: &MeshTopology) -> Vec<Violation> {
    let mut out = Vec::new();
    if t.n_mzis == 0 {
        out.push(Violation::NoMzis);
    }
    let mut seen = BTreeSet::new();
    for p in &t.paths {
        let (i, j) = (p.i, p.j);
        if i == 0 || i > t.n_inputs || j == 0 || j > t.n_outputs {
            out.push(Violation::PathOutOfRange { i, j });
            continue;
        }
        if !seen.insert((i, j)) {
            out.push(Violation::DuplicatePath { i, j });
        }
        if p.elements.is_empty() {
            out.push(Violation::EmptyPath { i, j });
        }
        let mut used = BTreeSet::new();
        for e in &p.elements {
            if e.mzi == 0 || e.mzi > t.n_mzis {
                out.push(Violation::MziOutOfRange { i, j, mzi: e.mzi });
            } else if !used.insert(e.mzi) {
                out.push(Violation::RepeatedMzi { i, j, mzi: e.mzi });
            }
        }
    }
    for j in 1..=t.n_outputs {
        for i in 1..=t.n_inputs {
            if !seen.contains(&(i, j)) {
                out.push(Violation::MissingPath { i, j });
            }
        }
    }
    out
}

const DEFAULT_TOPOLOGY_JSON: &str = include_str!("../data/topology_3x3.json");

impl MeshTopology {
    /// The shipped 3×3, five-MZI topology.
    pub fn default_3x3() -> Self {
        serde_json::from_str(DEFAULT_TOPOLOGY_JSON).expect("shipped topology parses")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: MeshTopology = serde_json::from_str(s)?;
        t.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let v = validate_topology(&self);
        if v.is_empty() {
            Ok(self)
        } else {
            let msg: Vec<String> = v.iter().map(ToString::to_string).collect();
            Err(Error::Input(format!("invalid topology: {}", msg.join("; "))))
        }
    }

    pub fn n_weights(&self) -> usize {
        self.n_inputs * self.n_outputs
    }

    /// Row-major position of `(i, j)` (1-based) in a flattened weight matrix.
    pub fn flat_index(&self, i: usize, j: usize) -> usize {
        (j - 1) * self.n_inputs + (i - 1)
    }

    /// Paths in flattened weight order (output-major). Fails on invalid
    /// topologies.
    pub fn resolve(&self) -> Result<Vec<ResolvedPath>> {
        let v = validate_topology(self);
        if !v.is_empty() {
            return Err(Error::Input(format!("invalid topology: {}", v[0])));
        }
        let mut out = vec![ResolvedPath { mzis: vec![], ports: vec![] }; self.n_weights()];
        for p in &self.paths {
            out[self.flat_index(p.i, p.j)] = ResolvedPath {
                mzis: p.elements.iter().map(|e| e.mzi - 1).collect(),
                ports: p.elements.iter().map(|e| e.port).collect(),
            };
        }
        Ok(out)
    }

    /// Stable content hash, used to tie model files to the datasets they were
    /// fitted on.
    pub fn hash(&self) -> String {
        sha256_json(self)
    }
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn sha256_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    sha256_hex(&bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoltageVector(pub Vec<f64>);

impl VoltageVector {
    pub fn zeros(m: usize) -> Self {
        VoltageVector(vec![0.0; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn check_range(&self, v_min: f64, v_max: f64) -> Result<()> {
        for (k, &v) in self.0.iter().enumerate() {
            if !(v >= v_min && v <= v_max) {
                return Err(Error::Domain(format!("voltage V{} = {v} outside [{v_min}, {v_max}]", k + 1)));
            }
        }
        Ok(())
    }
}

impl From<Vec<f64>> for VoltageVector {
    fn from(v: Vec<f64>) -> Self {
        VoltageVector(v)
    }
}

/// Power-transmission weights in dB; `W[j, i]` maps input `i` to output `j`.
///
/// Serialized as a list of rows, one per output.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrixDb {
    n_outputs: usize,
    n_inputs: usize,
    values: Vec<f64>,
}

impl WeightMatrixDb {
    pub fn new(n_outputs: usize, n_inputs: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_outputs * n_inputs {
            return Err(Error::Shape(format!("{} values for a {n_outputs}x{n_inputs} matrix", values.len())));
        }
        Ok(Self { n_outputs, n_inputs, values })
    }

    pub fn filled(n_outputs: usize, n_inputs: usize, value_db: f64) -> Self {
        Self { n_outputs, n_inputs, values: vec![value_db; n_outputs * n_inputs] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_outputs = rows.len();
        let n_inputs = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_inputs) {
            return Err(Error::Shape("ragged weight matrix rows".into()));
        }
        Ok(Self { n_outputs, n_inputs, values: rows.into_iter().flatten().collect() })
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.n_inputs.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    /// 0-based `(output, input)` access.
    pub fn get(&self, out: usize, inp: usize) -> f64 {
        self.values[out * self.n_inputs + inp]
    }

    pub fn set(&mut self, out: usize, inp: usize, v: f64) {
        self.values[out * self.n_inputs + inp] = v;
    }

    /// Row-major (output-major) flat view.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl Serialize for WeightMatrixDb {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for WeightMatrixDb {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        WeightMatrixDb::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerVector(Vec<f64>);

impl PowerVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Domain("power vector entries must be finite and >= 0".into()));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `P_out = W · P_in` with `W` converted to linear units. Entries at or below
/// `-inf` contribute nothing.
pub fn apply_weights(w: &WeightMatrixDb, p_in: &PowerVector) -> Result<PowerVector> {
    if p_in.0.len() != w.n_inputs {
        return Err(Error::Shape(format!(
            "power vector of length {} for a matrix with {} inputs",
            p_in.0.len(),
            w.n_inputs
        )));
    }
    let out = (0..w.n_outputs)
        .map(|j| {
            (0..w.n_inputs)
                .map(|i| {
                    let db = w.get(j, i);
                    let lin = if db == f64::NEG_INFINITY { 0.0 } else { 10f64.powf(db / 10.0) };
                    lin * p_in.0[i]
                })
                .sum()
        })
        .collect();
    Ok(PowerVector(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn db_linear_examples() {
        assert_eq!(db_to_linear(0.0).unwrap(), 1.0);
        assert_relative_eq!(db_to_linear(-3.0103).unwrap(), 0.5, max_relative = 1e-5);
        assert_relative_eq!(db_to_linear(-20.828).unwrap(), 0.0082645, max_relative = 1e-4);
        assert_eq!(linear_to_db(1.0).unwrap(), 0.0);
        assert_relative_eq!(linear_to_db(0.5).unwrap(), -3.0103, max_relative = 1e-5);
        assert!(matches!(linear_to_db(0.0), Err(Error::Domain(_))));
        assert!(matches!(linear_to_db(-1.0), Err(Error::Domain(_))));
        assert!(matches!(db_to_linear(f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(db_to_linear(f64::INFINITY), Err(Error::Domain(_))));
    }

    #[test]
    fn floor_clamps() {
        assert_eq!(linear_to_db_floored(0.0), DB_FLOOR);
        assert_eq!(linear_to_db_floored(1e-12), DB_FLOOR);
        assert_relative_eq!(linear_to_db_floored(0.5), -3.0102999566, max_relative = 1e-9);
    }

    #[test]
    fn apply_weights_examples() {
        let ninf = f64::NEG_INFINITY;
        let eye = WeightMatrixDb::from_rows(vec![vec![0.0, ninf, ninf], vec![ninf, 0.0, ninf], vec![ninf, ninf, 0.0]])
            .unwrap();
        let p = PowerVector::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(apply_weights(&eye, &p).unwrap().as_slice(), &[1.0, 2.0, 3.0]);

        let half = WeightMatrixDb::filled(3, 3, -3.0103);
        let ones = PowerVector::new(vec![1.0; 3]).unwrap();
        for v in apply_weights(&half, &ones).unwrap().as_slice() {
            assert_relative_eq!(*v, 1.5, max_relative = 1e-4);
        }
        let zero = PowerVector::new(vec![0.0; 3]).unwrap();
        assert_eq!(apply_weights(&half, &zero).unwrap().as_slice(), &[0.0; 3]);

        let short = PowerVector::new(vec![1.0; 2]).unwrap();
        assert!(matches!(apply_weights(&half, &short), Err(Error::Shape(_))));
    }

    #[test]
    fn negative_power_rejected() {
        assert!(PowerVector::new(vec![1.0, -0.1]).is_err());
    }

    #[test]
    fn default_topology_is_valid() {
        let t = MeshTopology::default_3x3();
        assert!(validate_topology(&t).is_empty());
        assert_eq!((t.n_inputs, t.n_outputs, t.n_mzis), (3, 3, 5));
        let paths = t.resolve().unwrap();
        assert_eq!(paths[t.flat_index(1, 3)].mzis, vec![0, 2, 4]);
        assert_eq!(paths[t.flat_index(1, 3)].ports, vec![Port::Cross, Port::Bar, Port::Cross]);
        assert_eq!(paths[t.flat_index(3, 3)].mzis, vec![2, 3, 4]);
    }

    #[test]
    fn empty_path_is_one_violation() {
        let mut t = MeshTopology::default_3x3();
        let p = t.paths.iter_mut().find(|p| p.i == 1 && p.j == 1).unwrap();
        p.elements.clear();
        assert_eq!(validate_topology(&t), vec![Violation::EmptyPath { i: 1, j: 1 }]);
    }

    #[test]
    fn out_of_range_mzi_is_one_violation() {
        let mut t = MeshTopology::default_3x3();
        t.paths[0].elements[0].mzi = t.n_mzis + 1;
        assert_eq!(validate_topology(&t).len(), 1);
        assert!(t.clone().validated().is_err());
    }

    #[test]
    fn repeated_and_missing_paths_reported() {
        let mut t = MeshTopology::default_3x3();
        let e = t.paths[0].elements[0];
        t.paths[0].elements.push(e);
        t.paths.pop();
        let v = validate_topology(&t);
        assert!(v.iter().any(|x| matches!(x, Violation::RepeatedMzi { .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::MissingPath { .. })));
    }

    #[test]
    fn weight_matrix_json_is_row_nested() {
        let w = WeightMatrixDb::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = serde_json::to_string(&w).unwrap();
        assert_eq!(s, "[[1.0,2.0,3.0],[4.0,5.0,6.0]]");
        let back: WeightMatrixDb = serde_json::from_str(&s).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.get(1, 0), 4.0);
    }

    #[test]
    fn voltage_range_check() {
        assert!(VoltageVector(vec![0.0, 2.0]).check_range(0.0, 2.0).is_ok());
        assert!(VoltageVector(vec![0.0, 2.1]).check_range(0.0, 2.0).is_err());
        assert!(VoltageVector(vec![f64::NAN]).check_range(0.0, 2.0).is_err());
    }

    proptest! {
        #[test]
        fn db_round_trip(x in -60.0f64..=0.0) {
            let back = linear_to_db(db_to_linear(x).unwrap()).unwrap();
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1e-300) || back == x);
        }

        #[test]
        fn apply_weights_is_linear(
            w in proptest::collection::vec(-40.0f64..0.0, 9),
            p in proptest::collection::vec(0.0f64..5.0, 3),
            q in proptest::collection::vec(0.0f64..5.0, 3),
            a in 0.0f64..3.0,
            b in 0.0f64..3.0,
        ) {
            let w = WeightMatrixDb::new(3, 3, w).unwrap();
            let mix: Vec<f64> = p.iter().zip(&q).map(|(x, y)| a * x + b * y).collect();
            let lhs = apply_weights(&w, &PowerVector::new(mix).unwrap()).unwrap();
            let wp = apply_weights(&w, &PowerVector::new(p).unwrap()).unwrap();
            let wq = apply_weights(&w, &PowerVector::new(q).unwrap()).unwrap();
            for k in 0..3 {
                let rhs = a * wp.as_slice()[k] + b * wq.as_slice()[k];
                prop_assert!((lhs.as_slice()[k] - rhs).abs() <= 1e-12 * rhs.abs().max(1e-12));
            }
        }
    }
}
