//! Neural-network surrogate (Model 3): a dense tanh network from normalized
//! `[V; V²]` features to the flattened weight matrix in dB.

use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chip::Sample;
use crate::error::{Error, Result};
use crate::models::{ModelKind, WeightModel};

/// Per-feature min-max map onto `[-1, 1]`, fitted on training data only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    /// Fits on the raw `[V; V²]` features of `voltages`.
    pub fn fit<'a, I>(voltages: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut min: Vec<f64> = Vec::new();
        let mut max: Vec<f64> = Vec::new();
        for v in voltages {
            let f = raw_features(v);
            if min.is_empty() {
                min = f.clone();
                max = f;
                continue;
            }
            if f.len() != min.len() {
                return Err(Error::Shape("voltage vectors of different lengths".into()));
            }
            for (k, x) in f.into_iter().enumerate() {
                min[k] = min[k].min(x);
                max[k] = max[k].max(x);
            }
        }
        if min.is_empty() {
            return Err(Error::Size("cannot fit a normalizer on zero samples".into()));
        }
        Ok(Self { min, max })
    }

    /// `x → 2(x − min)/(max − min) − 1`; constant features map to 0. Values
    /// outside the fitted range are passed through unclamped.
    pub fn transform_into(&self, v: &[f64], out: &mut [f64]) {
        let m = v.len();
        for k in 0..2 * m {
            let x = if k < m { v[k] } else { v[k - m] * v[k - m] };
            let span = self.max[k] - self.min[k];
            out[k] = if span > 0.0 { 2.0 * (x - self.min[k]) / span - 1.0 } else { 0.0 };
        }
    }

    pub fn n_features(&self) -> usize {
        self.min.len()
    }
}

fn raw_features(v: &[f64]) -> Vec<f64> {
    v.iter().copied().chain(v.iter().map(|x| x * x)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model3Params {
    pub n_inputs: usize,
    pub n_outputs: usize,
    /// `[2M, hidden..., n_outputs * n_inputs]`.
    pub layer_sizes: Vec<usize>,
    /// Per layer, `out × in` row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub normalizer: Option<Normalizer>,
}

/// Layer shapes of a dense network; the flat parameter layout is, per layer,
/// the `out × in` weights followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    n_params: usize,
}

impl Mlp {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        let mut offsets = Vec::with_capacity(sizes.len() - 1);
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            offsets.push(off);
            off += sizes[l + 1] * sizes[l] + sizes[l + 1];
        }
        Ok(Self { sizes, offsets, n_params: off })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    fn dims(&self, l: usize) -> (usize, usize, usize) {
        (self.offsets[l], self.sizes[l + 1], self.sizes[l])
    }

    fn weight<'a>(&self, x: &'a [f64], l: usize) -> ArrayView2<'a, f64> {
        let (off, out, inp) = self.dims(l);
        ArrayView2::from_shape((out, inp), &x[off..off + out * inp]).expect("layer shape")
    }

    fn bias<'a>(&self, x: &'a [f64], l: usize) -> &'a [f64] {
        let (off, out, inp) = self.dims(l);
        &x[off + out * inp..off + out * inp + out]
    }

    /// Activations of every layer for a batch, starting with the input.
    /// Hidden layers use tanh; the output layer is linear.
    pub fn forward(&self, x: &[f64], input: Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(input);
        for l in 0..self.n_layers() {
            let mut z = acts[l].dot(&self.weight(x, l).t());
            let b = self.bias(x, l);
            let last = l + 1 == self.n_layers();
            for mut row in z.rows_mut() {
                for (zv, bv) in row.iter_mut().zip(b) {
                    *zv += bv;
                    if !last {
                        *zv = zv.tanh();
                    }
                }
            }
            acts.push(z);
        }
        acts
    }

    /// Backpropagates `delta = ∂loss/∂output` through stored activations and
    /// writes the parameter gradient.
    pub fn backward(&self, x: &[f64], acts: &[Array2<f64>], mut delta: Array2<f64>, grad: &mut [f64]) {
        for l in (0..self.n_layers()).rev() {
            let (off, out, inp) = self.dims(l);
            {
                let mut gw =
                    ArrayViewMut2::from_shape((out, inp), &mut grad[off..off + out * inp]).expect("layer shape");
                gw.assign(&delta.t().dot(&acts[l]));
            }
            let gb = delta.sum_axis(Axis(0));
            grad[off + out * inp..off + out * inp + out].copy_from_slice(gb.as_slice().expect("contiguous"));
            if l > 0 {
                let mut next = delta.dot(&self.weight(x, l));
                next.zip_mut_with(&acts[l], |d, a| *d *= 1.0 - a * a);
                delta = next;
            }
        }
    }

    /// Sum of squared errors against `targets` and its gradient.
    pub fn sse_grad(&self, x: &[f64], input: &Array2<f64>, targets: &Array2<f64>, grad: &mut [f64]) -> f64 {
        let acts = self.forward(x, input.clone());
        let y = acts.last().expect("output layer");
        let mut delta = y - targets;
        let sse = delta.iter().map(|e| e * e).sum();
        delta.mapv_inplace(|e| 2.0 * e);
        self.backward(x, &acts, delta, grad);
        sse
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut x = vec![0.0; self.n_params];
        for l in 0..self.n_layers() {
            let (off, out, inp) = self.dims(l);
            let a = (6.0 / (inp + out) as f64).sqrt();
            for w in &mut x[off..off + out * inp] {
                *w = rng.random_range(-a..a);
            }
        }
        x
    }
}

/// Model 3 evaluator. Parameter vector layout follows [`Mlp`].
#[derive(Debug, Clone)]
pub struct Model3 {
    n_inputs: usize,
    n_outputs: usize,
    mlp: Mlp,
    x: Vec<f64>,
    normalizer: Option<Normalizer>,
}

impl Model3 {
    pub fn new(p: Model3Params) -> Result<Self> {
        let mlp = Mlp::new(p.layer_sizes.clone())?;
        let n_out = *p.layer_sizes.last().expect("checked by Mlp::new");
        if n_out != p.n_inputs * p.n_outputs {
            return Err(Error::Shape(format!(
                "output layer has {n_out} units for a {}x{} matrix",
                p.n_outputs, p.n_inputs
            )));
        }
        if !p.layer_sizes[0].is_multiple_of(2) {
            return Err(Error::Shape("input layer must hold [V; V^2]".into()));
        }
        if p.weights.len() != mlp.n_layers() || p.biases.len() != mlp.n_layers() {
            return Err(Error::Shape("layer count does not match layer sizes".into()));
        }
        let mut x = Vec::with_capacity(mlp.n_params());
        for l in 0..mlp.n_layers() {
            let (out, inp) = (p.layer_sizes[l + 1], p.layer_sizes[l]);
            if p.weights[l].len() != out * inp || p.biases[l].len() != out {
                return Err(Error::Shape(format!("layer {l} parameter count mismatch")));
            }
            x.extend_from_slice(&p.weights[l]);
            x.extend_from_slice(&p.biases[l]);
        }
        if let Some(n) = &p.normalizer {
            if n.n_features() != p.layer_sizes[0] || n.max.len() != n.min.len() {
                return Err(Error::Shape("normalizer width does not match input layer".into()));
            }
        }
        Ok(Self { n_inputs: p.n_inputs, n_outputs: p.n_outputs, mlp, x, normalizer: p.normalizer })
    }

    /// A network with the given hidden widths and all-zero parameters.
    pub fn zeros(n_voltages: usize, hidden: &[usize], n_inputs: usize, n_outputs: usize) -> Result<Self> {
        let mut sizes = vec![2 * n_voltages];
        sizes.extend_from_slice(hidden);
        sizes.push(n_inputs * n_outputs);
        let mlp = Mlp::new(sizes)?;
        let x = vec![0.0; mlp.n_params()];
        Ok(Self { n_inputs, n_outputs, mlp, x, normalizer: None })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn normalizer(&self) -> Option<&Normalizer> {
        self.normalizer.as_ref()
    }

    pub fn set_normalizer(&mut self, n: Normalizer) -> Result<()> {
        if n.n_features() != self.mlp.sizes()[0] {
            return Err(Error::Shape("normalizer width does not match input layer".into()));
        }
        self.normalizer = Some(n);
        Ok(())
    }

    pub fn to_params(&self) -> Model3Params {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..self.mlp.n_layers() {
            weights.push(self.mlp.weight(&self.x, l).iter().copied().collect());
            biases.push(self.mlp.bias(&self.x, l).to_vec());
        }
        Model3Params {
            n_inputs: self.n_inputs,
            n_outputs: self.n_outputs,
            layer_sizes: self.mlp.sizes().to_vec(),
            weights,
            biases,
            normalizer: self.normalizer.clone(),
        }
    }

    /// Normalized feature matrix, one row per voltage vector.
    pub fn features<'a, I>(&self, voltages: I) -> Result<Array2<f64>>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let norm =
            self.normalizer.as_ref().ok_or_else(|| Error::State("model 3 normalizer has not been fitted".into()))?;
        let width = norm.n_features();
        let mut data = Vec::new();
        let mut rows = 0;
        let mut buf = vec![0.0; width];
        for v in voltages {
            if 2 * v.len() != width {
                return Err(Error::Shape(format!("expected {} voltages, got {}", width / 2, v.len())));
            }
            norm.transform_into(v, &mut buf);
            data.extend_from_slice(&buf);
            rows += 1;
        }
        Ok(Array2::from_shape_vec((rows, width), data).expect("feature shape"))
    }

    pub fn targets(samples: &[Sample]) -> Array2<f64> {
        let width = samples.first().map_or(0, |s| s.weights_db.as_slice().len());
        let data: Vec<f64> = samples.iter().flat_map(|s| s.weights_db.as_slice().iter().copied()).collect();
        Array2::from_shape_vec((samples.len(), width), data).expect("target shape")
    }
}

impl WeightModel for Model3 {
    fn kind(&self) -> ModelKind {
        ModelKind::Model3
    }

    fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    fn n_voltages(&self) -> usize {
        self.mlp.sizes()[0] / 2
    }

    fn n_params(&self) -> usize {
        self.mlp.n_params()
    }

    fn param_vector(&self) -> Vec<f64> {
        self.x.clone()
    }

    fn set_param_vector(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.mlp.n_params() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", self.mlp.n_params(), x.len())));
        }
        self.x.copy_from_slice(x);
        Ok(())
    }

    fn predict_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        if out.len() != self.n_weights() {
            return Err(Error::Shape("output buffer size".into()));
        }
        let feats = self.features(std::iter::once(v))?;
        let acts = self.mlp.forward(&self.x, feats);
        out.copy_from_slice(acts.last().expect("output layer").as_slice().expect("contiguous"));
        Ok(())
    }

    fn jacobian(&self, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let feats = self.features(std::iter::once(v))?;
        let acts = self.mlp.forward(&self.x, feats);
        let pred = acts.last().expect("output layer").iter().copied().collect::<Vec<_>>();
        let np = self.n_params();
        let nw = self.n_weights();
        let mut jac = vec![0.0; nw * np];
        for w in 0..nw {
            let mut delta = Array2::zeros((1, nw));
            delta[[0, w]] = 1.0;
            self.mlp.backward(&self.x, &acts, delta, &mut jac[w * np..(w + 1) * np]);
        }
        Ok((pred, jac))
    }

    fn sse_grad(&self, samples: &[Sample], grad: &mut [f64]) -> Result<f64> {
        if grad.len() != self.n_params() {
            return Err(Error::Shape("gradient buffer size".into()));
        }
        let feats = self.features(samples.iter().map(|s| s.voltages.as_slice()))?;
        let targets = Model3::targets(samples);
        Ok(self.mlp.sse_grad(&self.x, &feats, &targets, grad))
    }
}
