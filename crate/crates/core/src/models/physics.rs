//! Physics-based weight models.
//!
//! Each MZI on a path contributes `¼|r ∓ e^{iφ}|² = ¼(1 + r² ∓ 2r·cos φ)`
//! with `r = (√ER − 1)/(√ER + 1)`; the path weight is the path loss times the
//! product of its MZI factors. In dB the product becomes a sum, so the loss
//! enters additively.
//!
//! Model 1 uses one phase law per MZI, `φ_k = φ0_k + φ2_k·V_k²`. Model 2 gives
//! every path its own phases and lets every heater act on every MZI:
//! `φ_{ij,k} = φ0_{ij,k} + Σ_m φ2_{ij,k,m}·V_m²`.

use std::f64::consts::LN_10;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{MeshTopology, Port, ResolvedPath, WeightMatrixDb, DB_FLOOR};

const DB_PER_LN: f64 = 10.0 / LN_10;

/// Field reflectivity-like coefficient `r` from an extinction ratio in dB, and
/// `dr/d(er_db)`.
#[inline]
pub fn er_to_r(er_db: f64) -> (f64, f64) {
    let s = 10f64.powf(er_db / 20.0);
    let r = (s - 1.0) / (s + 1.0);
    let dr_ds = 2.0 / ((s + 1.0) * (s + 1.0));
    let ds_der = s * LN_10 / 20.0;
    (r, dr_ds * ds_der)
}

/// Linear MZI transmission factor for one port.
#[inline]
pub fn factor_linear(r: f64, phi: f64, port: Port) -> f64 {
    0.25 * (1.0 + r * r - 2.0 * port.sign() * r * phi.cos())
}

/// MZI factor in dB with its derivatives w.r.t. `φ` and `r`.
#[inline]
pub fn factor_db(r: f64, phi: f64, port: Port) -> (f64, f64, f64) {
    let s = port.sign();
    let (sin, cos) = phi.sin_cos();
    let q = 1.0 + r * r - 2.0 * s * r * cos;
    let value = DB_PER_LN * (0.25 * q).ln();
    let d_phi = DB_PER_LN * 2.0 * s * r * sin / q;
    let d_r = DB_PER_LN * (2.0 * r - 2.0 * s * cos) / q;
    (value, d_phi, d_r)
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what}: expected {want} values, got {got}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model1Params {
    pub topology: MeshTopology,
    pub er_db: f64,
    /// Path losses `L_ij`, rows indexed by output.
    pub loss_db: WeightMatrixDb,
    pub phi0: Vec<f64>,
    pub phi2: Vec<f64>,
}

/// Model 1 evaluator. Parameter vector layout:
/// `[er_db, phi0[0..M], phi2[0..M], loss_db (output-major)]`.
#[derive(Debug, Clone)]
pub struct Model1 {
    params: Model1Params,
    paths: Vec<ResolvedPath>,
}

impl Model1 {
    pub fn new(params: Model1Params) -> Result<Self> {
        let paths = params.topology.resolve()?;
        let m = params.topology.n_mzis;
        check_len("phi0", params.phi0.len(), m)?;
        check_len("phi2", params.phi2.len(), m)?;
        if params.loss_db.n_outputs() != params.topology.n_outputs
            || params.loss_db.n_inputs() != params.topology.n_inputs
        {
            return Err(Error::Shape("loss matrix does not match topology".into()));
        }
        Ok(Self { params, paths })
    }

    pub fn params(&self) -> &Model1Params {
        &self.params
    }

    pub fn into_params(self) -> Model1Params {
        self.params
    }

    pub fn paths(&self) -> &[ResolvedPath] {
        &self.paths
    }

    /// Phase of MZI `k` (0-based) at voltage `v_k`.
    #[inline]
    pub fn phase(&self, k: usize, v_k: f64) -> f64 {
        self.params.phi0[k] + self.params.phi2[k] * v_k * v_k
    }

    /// Sum of the MZI factors of path `w` in dB, i.e. the weight without loss
    /// and without the floor.
    pub fn path_factors_db(&self, w: usize, v: &[f64]) -> f64 {
        let (r, _) = er_to_r(self.params.er_db);
        let p = &self.paths[w];
        p.mzis.iter().zip(&p.ports).map(|(&k, &port)| factor_db(r, self.phase(k, v[k]), port).0).sum()
    }
}

/// Per-path parameters of Model 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model2Path {
    /// 1-based input index.
    pub i: usize,
    /// 1-based output index.
    pub j: usize,
    /// One offset per path element, in path order.
    pub phi0: Vec<f64>,
    /// For each path element, the coefficients of every `V_m²`, `m = 1..M`.
    pub phi2: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model2Params {
    pub topology: MeshTopology,
    pub er_db: f64,
    pub loss_db: WeightMatrixDb,
    /// In flattened weight order (output-major).
    pub paths: Vec<Model2Path>,
}

impl Model2Params {
    /// Embeds Model 1 parameters: self terms copied, cross terms zero.
    pub fn from_model1(p: &Model1Params) -> Result<Self> {
        let resolved = p.topology.resolve()?;
        let m = p.topology.n_mzis;
        let n_in = p.topology.n_inputs;
        let paths = resolved
            .iter()
            .enumerate()
            .map(|(w, rp)| Model2Path {
                i: w % n_in + 1,
                j: w / n_in + 1,
                phi0: rp.mzis.iter().map(|&k| p.phi0[k]).collect(),
                phi2: rp
                    .mzis
                    .iter()
                    .map(|&k| {
                        let mut row = vec![0.0; m];
                        row[k] = p.phi2[k];
                        row
                    })
                    .collect(),
            })
            .collect();
        Ok(Self { topology: p.topology.clone(), er_db: p.er_db, loss_db: p.loss_db.clone(), paths })
    }
}

/// Model 2 evaluator. Parameter vector layout:
/// `[er_db, then per weight (output-major): loss_db, then per path element:
/// phi0, phi2[0..M]]`.
#[derive(Debug, Clone)]
pub struct Model2 {
    params: Model2Params,
    paths: Vec<ResolvedPath>,
    offsets: Vec<usize>,
}

impl Model2 {
    pub fn new(params: Model2Params) -> Result<Self> {
        let paths = params.topology.resolve()?;
        let m = params.topology.n_mzis;
        check_len("model 2 paths", params.paths.len(), paths.len())?;
        if params.loss_db.n_outputs() != params.topology.n_outputs
            || params.loss_db.n_inputs() != params.topology.n_inputs
        {
            return Err(Error::Shape("loss matrix does not match topology".into()));
        }
        let mut offsets = Vec::with_capacity(paths.len());
        let mut off = 1;
        for (w, (pp, rp)) in params.paths.iter().zip(&paths).enumerate() {
            let n_in = params.topology.n_inputs;
            if (pp.i, pp.j) != (w % n_in + 1, w / n_in + 1) {
                return Err(Error::Shape(format!("model 2 path {w} is labelled ({},{})", pp.i, pp.j)));
            }
            check_len("phi0", pp.phi0.len(), rp.len())?;
            check_len("phi2 rows", pp.phi2.len(), rp.len())?;
            for row in &pp.phi2 {
                check_len("phi2 row", row.len(), m)?;
            }
            offsets.push(off);
            off += path_block_len(rp.len(), m);
        }
        Ok(Self { params, paths, offsets })
    }

    pub fn params(&self) -> &Model2Params {
        &self.params
    }

    pub fn into_params(self) -> Model2Params {
        self.params
    }

    pub fn paths(&self) -> &[ResolvedPath] {
        &self.paths
    }

    /// Index of the `loss_db` entry of weight `w` in the parameter vector.
    pub fn block_offset(&self, w: usize) -> usize {
        self.offsets[w]
    }
}

/// Parameters per Model 2 path block: loss plus `(1 + M)` per element.
pub fn path_block_len(n_elements: usize, m: usize) -> usize {
    1 + n_elements * (1 + m)
}

/// Evaluates one Model 2 path from a block laid out as
/// `[loss, (phi0, phi2[0..M]) per element]`. When `grad` is given it receives
/// `∂W/∂block` and the return carries `∂W/∂r`.
pub fn model2_path_eval(
    path: &ResolvedPath,
    block: &[f64],
    r: f64,
    v_sq: &[f64],
    mut grad: Option<&mut [f64]>,
) -> (f64, f64) {
    let m = v_sq.len();
    let mut total = block[0];
    let mut d_r = 0.0;
    if let Some(g) = grad.as_deref_mut() {
        g[0] = 1.0;
    }
    for (e, &port) in path.ports.iter().enumerate() {
        let base = 1 + e * (1 + m);
        let coeffs = &block[base + 1..base + 1 + m];
        let phi = block[base] + coeffs.iter().zip(v_sq).map(|(c, u)| c * u).sum::<f64>();
        let (val, dphi, dr) = factor_db(r, phi, port);
        total += val;
        d_r += dr;
        if let Some(g) = grad.as_deref_mut() {
            g[base] = dphi;
            for (gm, u) in g[base + 1..base + 1 + m].iter_mut().zip(v_sq) {
                *gm = dphi * u;
            }
        }
    }
    if total < DB_FLOOR {
        if let Some(g) = grad {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
        return (DB_FLOOR, 0.0);
    }
    (total, d_r)
}

mod model_impls {
    use super::*;
    use crate::models::{ModelKind, WeightModel};

    impl WeightModel for Model1 {
        fn kind(&self) -> ModelKind {
            ModelKind::Model1
        }

        fn n_inputs(&self) -> usize {
            self.params.topology.n_inputs
        }

        fn n_outputs(&self) -> usize {
            self.params.topology.n_outputs
        }

        fn n_voltages(&self) -> usize {
            self.params.topology.n_mzis
        }

        fn n_params(&self) -> usize {
            1 + 2 * self.params.topology.n_mzis + self.paths.len()
        }

        fn param_vector(&self) -> Vec<f64> {
            let p = &self.params;
            let mut out = Vec::with_capacity(self.n_params());
            out.push(p.er_db);
            out.extend_from_slice(&p.phi0);
            out.extend_from_slice(&p.phi2);
            out.extend_from_slice(p.loss_db.as_slice());
            out
        }

        fn set_param_vector(&mut self, x: &[f64]) -> Result<()> {
            check_len("model 1 parameters", x.len(), self.n_params())?;
            let m = self.params.topology.n_mzis;
            self.params.er_db = x[0];
            self.params.phi0.copy_from_slice(&x[1..1 + m]);
            self.params.phi2.copy_from_slice(&x[1 + m..1 + 2 * m]);
            self.params.loss_db.as_mut_slice().copy_from_slice(&x[1 + 2 * m..]);
            Ok(())
        }

        fn predict_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
            check_len("voltages", v.len(), self.n_voltages())?;
            check_len("output", out.len(), self.paths.len())?;
            let (r, _) = er_to_r(self.params.er_db);
            let loss = self.params.loss_db.as_slice();
            for (w, o) in out.iter_mut().enumerate() {
                // Same summation order as `jacobian`, so both agree bitwise.
                let p = &self.paths[w];
                let mut total = loss[w];
                for (&k, &port) in p.mzis.iter().zip(&p.ports) {
                    total += factor_db(r, self.phase(k, v[k]), port).0;
                }
                *o = total.max(DB_FLOOR);
            }
            Ok(())
        }

        fn jacobian(&self, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
            check_len("voltages", v.len(), self.n_voltages())?;
            let m = self.params.topology.n_mzis;
            let np = self.n_params();
            let nw = self.paths.len();
            let (r, dr_der) = er_to_r(self.params.er_db);
            let mut pred = vec![0.0; nw];
            let mut jac = vec![0.0; nw * np];
            for (w, path) in self.paths.iter().enumerate() {
                let row = &mut jac[w * np..(w + 1) * np];
                let mut total = self.params.loss_db.as_slice()[w];
                let mut d_r = 0.0;
                for (&k, &port) in path.mzis.iter().zip(&path.ports) {
                    let (val, dphi, dr) = factor_db(r, self.phase(k, v[k]), port);
                    total += val;
                    d_r += dr;
                    row[1 + k] += dphi;
                    row[1 + m + k] += dphi * v[k] * v[k];
                }
                row[0] = d_r * dr_der;
                row[1 + 2 * m + w] = 1.0;
                if total < DB_FLOOR {
                    row.iter_mut().for_each(|x| *x = 0.0);
                    total = DB_FLOOR;
                }
                pred[w] = total;
            }
            Ok((pred, jac))
        }

        fn sse_grad(&self, samples: &[crate::chip::Sample], grad: &mut [f64]) -> Result<f64> {
            check_len("gradient", grad.len(), self.n_params())?;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let np = self.n_params();
            let mut sse = 0.0;
            for s in samples {
                let (pred, jac) = self.jacobian(s.voltages.as_slice())?;
                for (w, (p, meas)) in pred.iter().zip(s.weights_db.as_slice()).enumerate() {
                    let e = p - meas;
                    sse += e * e;
                    for (g, j) in grad.iter_mut().zip(&jac[w * np..(w + 1) * np]) {
                        *g += 2.0 * e * j;
                    }
                }
            }
            Ok(sse)
        }
    }

    impl WeightModel for Model2 {
        fn kind(&self) -> ModelKind {
            ModelKind::Model2
        }

        fn n_inputs(&self) -> usize {
            self.params.topology.n_inputs
        }

        fn n_outputs(&self) -> usize {
            self.params.topology.n_outputs
        }

        fn n_voltages(&self) -> usize {
            self.params.topology.n_mzis
        }

        fn n_params(&self) -> usize {
            let m = self.params.topology.n_mzis;
            1 + self.paths.iter().map(|p| path_block_len(p.len(), m)).sum::<usize>()
        }

        fn param_vector(&self) -> Vec<f64> {
            let p = &self.params;
            let mut out = Vec::with_capacity(self.n_params());
            out.push(p.er_db);
            for (w, pp) in p.paths.iter().enumerate() {
                out.push(p.loss_db.as_slice()[w]);
                for (phi0, row) in pp.phi0.iter().zip(&pp.phi2) {
                    out.push(*phi0);
                    out.extend_from_slice(row);
                }
            }
            out
        }

        fn set_param_vector(&mut self, x: &[f64]) -> Result<()> {
            check_len("model 2 parameters", x.len(), self.n_params())?;
            let m = self.params.topology.n_mzis;
            self.params.er_db = x[0];
            for w in 0..self.paths.len() {
                let off = self.offsets[w];
                self.params.loss_db.as_mut_slice()[w] = x[off];
                let pp = &mut self.params.paths[w];
                for e in 0..pp.phi0.len() {
                    let base = off + 1 + e * (1 + m);
                    pp.phi0[e] = x[base];
                    pp.phi2[e].copy_from_slice(&x[base + 1..base + 1 + m]);
                }
            }
            Ok(())
        }

        fn predict_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
            check_len("voltages", v.len(), self.n_voltages())?;
            check_len("output", out.len(), self.paths.len())?;
            let (r, _) = er_to_r(self.params.er_db);
            let v_sq: Vec<f64> = v.iter().map(|x| x * x).collect();
            let x = self.param_vector();
            let m = self.params.topology.n_mzis;
            for (w, o) in out.iter_mut().enumerate() {
                let off = self.offsets[w];
                let block = &x[off..off + path_block_len(self.paths[w].len(), m)];
                *o = model2_path_eval(&self.paths[w], block, r, &v_sq, None).0;
            }
            Ok(())
        }

        fn jacobian(&self, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
            check_len("voltages", v.len(), self.n_voltages())?;
            let m = self.params.topology.n_mzis;
            let np = self.n_params();
            let nw = self.paths.len();
            let (r, dr_der) = er_to_r(self.params.er_db);
            let v_sq: Vec<f64> = v.iter().map(|x| x * x).collect();
            let x = self.param_vector();
            let mut pred = vec![0.0; nw];
            let mut jac = vec![0.0; nw * np];
            for w in 0..nw {
                let off = self.offsets[w];
                let len = path_block_len(self.paths[w].len(), m);
                let row = &mut jac[w * np..(w + 1) * np];
                let (val, d_r) =
                    model2_path_eval(&self.paths[w], &x[off..off + len], r, &v_sq, Some(&mut row[off..off + len]));
                row[0] = d_r * dr_der;
                pred[w] = val;
            }
            Ok((pred, jac))
        }

        fn sse_grad(&self, samples: &[crate::chip::Sample], grad: &mut [f64]) -> Result<f64> {
            check_len("gradient", grad.len(), self.n_params())?;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let m = self.params.topology.n_mzis;
            let (r, dr_der) = er_to_r(self.params.er_db);
            let x = self.param_vector();
            let max_len = self.paths.iter().map(|p| path_block_len(p.len(), m)).max().unwrap_or(0);
            let mut local = vec![0.0; max_len];
            let mut v_sq = vec![0.0; m];
            let mut sse = 0.0;
            for s in samples {
                let v = s.voltages.as_slice();
                check_len("voltages", v.len(), m)?;
                for (u, x) in v_sq.iter_mut().zip(v) {
                    *u = x * x;
                }
                for (w, meas) in s.weights_db.as_slice().iter().enumerate() {
                    let off = self.offsets[w];
                    let len = path_block_len(self.paths[w].len(), m);
                    let g = &mut local[..len];
                    let (val, d_r) = model2_path_eval(&self.paths[w], &x[off..off + len], r, &v_sq, Some(g));
                    let e = val - meas;
                    sse += e * e;
                    grad[0] += 2.0 * e * d_r * dr_der;
                    for (gp, gl) in grad[off..off + len].iter_mut().zip(g.iter()) {
                        *gp += 2.0 * e * gl;
                    }
                }
            }
            Ok(sse)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::WeightModel;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    /// One MZI, one weight, cross port.
    fn single_mzi(er_db: f64, loss_db: f64, phi0: f64, phi2: f64) -> Model1 {
        let topology = MeshTopology {
            n_inputs: 1,
            n_outputs: 1,
            n_mzis: 1,
            paths: vec![crate::mesh::TopologyPath {
                i: 1,
                j: 1,
                elements: vec![crate::mesh::PathElement { mzi: 1, port: Port::Cross }],
            }],
        };
        Model1::new(Model1Params {
            topology,
            er_db,
            loss_db: WeightMatrixDb::filled(1, 1, loss_db),
            phi0: vec![phi0],
            phi2: vec![phi2],
        })
        .unwrap()
    }

    fn w11(m: &Model1, v: f64) -> f64 {
        m.predict(&vec![v].into()).unwrap().get(0, 0)
    }

    #[test]
    fn er_100_extrema() {
        let m = single_mzi(20.0, 0.0, 0.0, PI / 4.0);
        // r = 9/11 for ER = 100.
        let (r, _) = er_to_r(20.0);
        assert_abs_diff_eq!(r, 9.0 / 11.0, epsilon = 1e-15);
        let hi = 0.25 * (1.0 + 9.0 / 11.0f64).powi(2);
        let lo = 0.25 * (1.0 - 9.0 / 11.0f64).powi(2);
        assert_abs_diff_eq!(w11(&m, 2.0), 10.0 * hi.log10(), epsilon = 1e-12);
        assert_abs_diff_eq!(w11(&m, 0.0), 10.0 * lo.log10(), epsilon = 1e-12);
        assert_abs_diff_eq!(w11(&m, 2.0), -0.828, epsilon = 5e-4);
        assert_abs_diff_eq!(w11(&m, 0.0), -20.828, epsilon = 5e-4);
        assert_abs_diff_eq!(w11(&m, 2.0) - w11(&m, 0.0), 20.0, epsilon = 1e-9);
    }

    #[test]
    fn loss_is_additive() {
        let m = single_mzi(20.0, -3.0103, 0.0, PI / 4.0);
        assert_abs_diff_eq!(w11(&m, 2.0), -3.838, epsilon = 5e-4);
        let (_, jac) = m.jacobian(&[1.3]).unwrap();
        assert_eq!(jac[3], 1.0);
    }

    #[test]
    fn bar_port_is_complementary() {
        let (r, _) = er_to_r(25.0);
        for phi in [0.0, 0.4, 1.0, PI, 5.0] {
            let sum = factor_linear(r, phi, Port::Cross) + factor_linear(r, phi, Port::Bar);
            assert_abs_diff_eq!(sum, 0.5 * (1.0 + r * r), epsilon = 1e-15);
        }
    }

    #[test]
    fn floor_zeroes_gradient() {
        let m = single_mzi(20.0, -80.0, 0.0, 0.0);
        let (pred, jac) = m.jacobian(&[0.0]).unwrap();
        assert_eq!(pred[0], DB_FLOOR);
        assert!(jac.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn model2_embedding_matches_model1() {
        let m1 = single_mzi(23.0, -4.0, 1.1, 0.7);
        let m2 = Model2::new(Model2Params::from_model1(m1.params()).unwrap()).unwrap();
        for v in [0.0, 0.3, 1.2, 2.0] {
            let a = m1.predict(&vec![v].into()).unwrap();
            let b = m2.predict(&vec![v].into()).unwrap();
            assert_abs_diff_eq!(a.get(0, 0), b.get(0, 0), epsilon = 1e-12);
        }
    }

    #[test]
    fn model2_param_vector_round_trips() {
        let t = MeshTopology::default_3x3();
        let m1 = Model1Params {
            topology: t.clone(),
            er_db: 25.0,
            loss_db: WeightMatrixDb::filled(3, 3, -4.0),
            phi0: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            phi2: vec![0.7; 5],
        };
        let mut m2 = Model2::new(Model2Params::from_model1(&m1).unwrap()).unwrap();
        let mut x = m2.param_vector();
        assert_eq!(x.len(), m2.n_params());
        x.iter_mut().enumerate().for_each(|(n, v)| *v += n as f64 * 1e-3);
        m2.set_param_vector(&x).unwrap();
        assert_eq!(m2.param_vector(), x);
    }
}
