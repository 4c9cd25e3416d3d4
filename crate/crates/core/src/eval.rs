//! Test-set error statistics and the scatter/histogram exports.
//!
//! Errors are always `predicted − measured`, in dB.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chip::Sample;
use crate::error::{Error, Result};
use crate::models::WeightModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    pub bins: usize,
    pub min_db: f64,
    pub max_db: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self { bins: 81, min_db: -10.0, max_db: 10.0 }
    }
}

/// Error density over equal-width bins; `edges` has one more entry than
/// `densities`. Errors outside the range are counted in the edge bins, so the
/// densities always integrate to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub densities: Vec<f64>,
}

impl Histogram {
    pub fn from_values(values: &[f64], cfg: &HistogramConfig) -> Result<Self> {
        if cfg.bins == 0 || !(cfg.max_db > cfg.min_db) {
            return Err(Error::Input(format!("invalid histogram range {cfg:?}")));
        }
        if values.is_empty() {
            return Err(Error::Domain("histogram of no values".into()));
        }
        let width = (cfg.max_db - cfg.min_db) / cfg.bins as f64;
        let edges = (0..=cfg.bins).map(|b| cfg.min_db + b as f64 * width).collect();
        let mut counts = vec![0usize; cfg.bins];
        for &e in values {
            let b = ((e - cfg.min_db) / width).floor();
            let b = if b.is_nan() { 0 } else { b.clamp(0.0, (cfg.bins - 1) as f64) as usize };
            counts[b] += 1;
        }
        let norm = values.len() as f64 * width;
        Ok(Self { edges, densities: counts.into_iter().map(|c| c as f64 / norm).collect() })
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRmse {
    /// 1-based input index.
    pub i: usize,
    /// 1-based output index.
    pub j: usize,
    pub rmse_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub rmse_db: f64,
    pub mean_db: f64,
    pub max_abs_db: f64,
    pub n_samples: usize,
    pub histogram: Histogram,
    pub per_weight_rmse: Vec<WeightRmse>,
}

impl ErrorStats {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::chip::write_pretty_json(path, self)
    }
}

/// Signed errors, sample-major then output-major weight order.
pub fn errors(model: &dyn WeightModel, test: &[Sample]) -> Result<Vec<f64>> {
    let nw = model.n_weights();
    let mut pred = vec![0.0; nw];
    let mut out = Vec::with_capacity(test.len() * nw);
    for s in test {
        if s.weights_db.as_slice().len() != nw {
            return Err(Error::Shape(format!("sample has {} weights, model {nw}", s.weights_db.as_slice().len())));
        }
        model.predict_into(s.voltages.as_slice(), &mut pred)?;
        out.extend(pred.iter().zip(s.weights_db.as_slice()).map(|(p, m)| p - m));
    }
    Ok(out)
}

pub fn evaluate(model: &dyn WeightModel, test: &[Sample]) -> Result<ErrorStats> {
    evaluate_with(model, test, &HistogramConfig::default())
}

pub fn evaluate_with(model: &dyn WeightModel, test: &[Sample], hist: &HistogramConfig) -> Result<ErrorStats> {
    if test.is_empty() {
        return Err(Error::Domain("evaluation on an empty test set".into()));
    }
    let e = errors(model, test)?;
    let nw = model.n_weights();
    let n = e.len() as f64;
    let mut per_weight = vec![0.0; nw];
    for row in e.chunks_exact(nw) {
        for (acc, x) in per_weight.iter_mut().zip(row) {
            *acc += x * x;
        }
    }
    let n_in = model.n_inputs();
    Ok(ErrorStats {
        rmse_db: (e.iter().map(|x| x * x).sum::<f64>() / n).sqrt(),
        mean_db: e.iter().sum::<f64>() / n,
        max_abs_db: e.iter().fold(0.0, |m, x| m.max(x.abs())),
        n_samples: test.len(),
        histogram: Histogram::from_values(&e, hist)?,
        per_weight_rmse: per_weight
            .into_iter()
            .enumerate()
            .map(|(w, s)| WeightRmse { i: w % n_in + 1, j: w / n_in + 1, rmse_db: (s / test.len() as f64).sqrt() })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterRow {
    pub measured_db: f64,
    pub predicted_db: f64,
    pub i: usize,
    pub j: usize,
    pub sample: usize,
}

pub const SCATTER_HEADER: &str = "measured_db,predicted_db,i,j,sample";

/// One row per test sample and weight; `i`, `j` are 1-based, `sample` is
/// the 0-based index into `test`.
pub fn export_scatter(model: &dyn WeightModel, test: &[Sample], path: &Path) -> Result<()> {
    let nw = model.n_weights();
    let n_in = model.n_inputs();
    let mut pred = vec![0.0; nw];
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{SCATTER_HEADER}")?;
    for (n, s) in test.iter().enumerate() {
        model.predict_into(s.voltages.as_slice(), &mut pred)?;
        for (k, (p, m)) in pred.iter().zip(s.weights_db.as_slice()).enumerate() {
            writeln!(w, "{m},{p},{},{},{n}", k % n_in + 1, k / n_in + 1)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_scatter(path: &Path) -> Result<Vec<ScatterRow>> {
    let file = File::open(path).map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == SCATTER_HEADER => {}
        _ => return Err(Error::Input(format!("{}: missing scatter header", path.display()))),
    }
    let bad = |n: usize| Error::Input(format!("{}:{}: malformed scatter row", path.display(), n + 2));
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(n));
        }
        rows.push(ScatterRow {
            measured_db: f[0].parse().map_err(|_| bad(n))?,
            predicted_db: f[1].parse().map_err(|_| bad(n))?,
            i: f[2].parse().map_err(|_| bad(n))?,
            j: f[3].parse().map_err(|_| bad(n))?,
            sample: f[4].parse().map_err(|_| bad(n))?,
        });
    }
    Ok(rows)
}

pub fn export_histogram(stats: &ErrorStats, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "bin_center_db,density")?;
    for (c, d) in stats.histogram.centers().iter().zip(&stats.histogram.densities) {
        writeln!(w, "{c},{d}")?;
    }
    w.flush()?;
    Ok(())
}
