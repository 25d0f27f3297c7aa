use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, Matrix, NnError};

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// Shape and options for one affine layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
    pub bias: bool,
    pub batch_norm: bool,
}

impl LayerSpec {
    pub fn new(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            input,
            output,
            activation,
            bias: true,
            batch_norm: false,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn with_batch_norm(mut self) -> Self {
        self.batch_norm = true;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

/// Affine map, optional batch normalization, then an elementwise activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `output × input`, row-major.
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
    pub batch_norm: Option<BatchNorm>,
    pub activation: Activation,
}

impl Dense {
    pub fn init<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Self {
        let bound = 1.0 / (spec.input.max(1) as f64).sqrt();
        let weight = Matrix::from_vec(
            spec.output,
            spec.input,
            (0..spec.output * spec.input)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
        )
        .expect("sized by construction");
        let bias = spec
            .bias
            .then(|| (0..spec.output).map(|_| rng.random_range(-bound..bound)).collect());
        Self {
            weight,
            bias,
            batch_norm: spec.batch_norm.then(|| BatchNorm::new(spec.output)),
            activation: spec.activation,
        }
    }

    /// Layer with all parameters zero except the given bias.
    pub fn zeroed(input: usize, output: usize, bias: Vec<f64>, activation: Activation) -> Self {
        assert_eq!(bias.len(), output);
        Self {
            weight: Matrix::zeros(output, input),
            bias: Some(bias),
            batch_norm: None,
            activation,
        }
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec {
            input: self.input_dim(),
            output: self.output_dim(),
            activation: self.activation,
            bias: self.bias.is_some(),
            batch_norm: self.batch_norm.is_some(),
        }
    }

    fn affine(&self, x: &Matrix) -> Matrix {
        let mut z = x.matmul_t(&self.weight);
        if let Some(b) = &self.bias {
            for i in 0..z.rows() {
                for (v, bj) in z.row_mut(i).iter_mut().zip(b) {
                    *v += bj;
                }
            }
        }
        z
    }
}

#[derive(Clone, Debug)]
struct BnTrace {
    xhat: Matrix,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

#[derive(Clone, Debug)]
struct LayerTrace {
    input: Matrix,
    bn: Option<BnTrace>,
    pre_act: Matrix,
    output: Matrix,
}

/// Gradient buffers for one layer, shaped like its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

/// Per-parameter gradients aligned with a [`DenseNet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: Matrix::zeros(l.output_dim(), l.input_dim()),
                    bias: l.bias.as_ref().map(|b| vec![0.0; b.len()]),
                    gamma: l.batch_norm.as_ref().map(|bn| vec![0.0; bn.gamma.len()]),
                    beta: l.batch_norm.as_ref().map(|bn| vec![0.0; bn.beta.len()]),
                })
                .collect(),
        }
    }

    /// Flat views in the same order as [`DenseNet::params`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &self.layers {
            out.push(l.weight.data());
            if let Some(b) = &l.bias {
                out.push(b.as_slice());
            }
            if let Some(g) = &l.gamma {
                out.push(g.as_slice());
            }
            if let Some(b) = &l.beta {
                out.push(b.as_slice());
            }
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &mut self.layers {
            out.push(l.weight.data_mut());
            if let Some(b) = &mut l.bias {
                out.push(b.as_mut_slice());
            }
            if let Some(g) = &mut l.gamma {
                out.push(g.as_mut_slice());
            }
            if let Some(b) = &mut l.beta {
                out.push(b.as_mut_slice());
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.slices_mut() {
            a.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&x| x == 0.0))
    }
}

/// A feed-forward stack of [`Dense`] layers.
///
/// `forward` records a trace that the next `backward` consumes; `infer` is
/// the trace-free evaluation path used for rollouts, targets and relabelling.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Dense>,
    #[serde(skip, default = "default_training")]
    training: bool,
    #[serde(skip)]
    trace: Option<Vec<LayerTrace>>,
}

fn default_training() -> bool {
    true
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl DenseNet {
    pub fn new<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self, NnError> {
        Self::check_chain(specs)?;
        Ok(Self::from_layers_unchecked(
            specs.iter().map(|&s| Dense::init(s, rng)).collect(),
        ))
    }

    /// Plain MLP: `input → hidden… → output`, `hidden_act` between layers.
    pub fn mlp<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        output_act: Activation,
        rng: &mut R,
    ) -> Self {
        let mut specs = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            specs.push(LayerSpec::new(prev, h, hidden_act));
            prev = h;
        }
        specs.push(LayerSpec::new(prev, output, output_act));
        Self::new(&specs, rng).expect("mlp dims chain by construction")
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self, NnError> {
        let specs: Vec<LayerSpec> = layers.iter().map(Dense::spec).collect();
        Self::check_chain(&specs)?;
        for (i, l) in layers.iter().enumerate() {
            if let Some(b) = &l.bias {
                if b.len() != l.output_dim() {
                    return Err(NnError::Shape {
                        layer: Some(i),
                        expected: l.output_dim(),
                        found: b.len(),
                    });
                }
            }
        }
        Ok(Self::from_layers_unchecked(layers))
    }

    fn from_layers_unchecked(layers: Vec<Dense>) -> Self {
        Self {
            layers,
            training: true,
            trace: None,
        }
    }

    fn check_chain(specs: &[LayerSpec]) -> Result<(), NnError> {
        for (i, w) in specs.windows(2).enumerate() {
            if w[0].output != w[1].input {
                return Err(NnError::Shape {
                    layer: Some(i + 1),
                    expected: w[0].output,
                    found: w[1].input,
                });
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Dense::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| l.batch_norm.is_some())
    }

    /// Same layer shapes, activations and options.
    pub fn same_architecture(&self, other: &DenseNet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.spec() == b.spec())
    }

    fn check_input(&self, x: &Matrix) -> Result<(), NnError> {
        if x.cols() != self.input_dim() {
            return Err(NnError::Shape {
                layer: Some(0),
                expected: self.input_dim(),
                found: x.cols(),
            });
        }
        Ok(())
    }

    /// Forward pass that records a trace for [`DenseNet::backward`].
    ///
    /// Batch normalization uses batch statistics and updates running
    /// statistics in training mode, and running statistics otherwise.
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix, NnError> {
        self.check_input(x)?;
        let training = self.training;
        let mut trace = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &mut self.layers {
            let z = layer.affine(&h);
            let (pre_act, bn) = match &mut layer.batch_norm {
                Some(bn) => {
                    let (out, t) = batch_norm_forward(bn, &z, training);
                    (out, Some(t))
                }
                None => (z, None),
            };
            let act = layer.activation;
            let output = pre_act.map(|v| act.apply(v));
            trace.push(LayerTrace {
                input: h,
                bn,
                pre_act,
                output: output.clone(),
            });
            h = output;
        }
        self.trace = Some(trace);
        Ok(h)
    }

    /// Trace-free forward pass with evaluation-mode batch normalization.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix, NnError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            let mut z = layer.affine(&h);
            if let Some(bn) = &layer.batch_norm {
                let n = bn.gamma.len();
                for i in 0..z.rows() {
                    let row = z.row_mut(i);
                    for j in 0..n {
                        let inv = 1.0 / (bn.running_var[j] + BATCH_NORM_EPS).sqrt();
                        row[j] = bn.gamma[j] * (row[j] - bn.running_mean[j]) * inv + bn.beta[j];
                    }
                }
            }
            let act = layer.activation;
            z.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            h = z;
        }
        Ok(h)
    }

    /// Single-input convenience wrapper over [`DenseNet::infer`].
    pub fn infer_one(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.infer(&Matrix::row_vector(x))?.into_vec())
    }

    /// Reverse pass for the most recent [`DenseNet::forward`].
    ///
    /// Returns parameter gradients and the gradient w.r.t. the input batch.
    /// The trace is consumed, so a second call without a new forward fails.
    pub fn backward(&mut self, upstream: &Matrix) -> Result<(Gradients, Matrix), NnError> {
        let trace = self.trace.take().ok_or(NnError::NoForward)?;
        let batch = trace.first().map_or(0, |t| t.input.rows());
        if upstream.rows() != batch || upstream.cols() != self.output_dim() {
            return Err(NnError::Shape {
                layer: Some(self.layers.len().saturating_sub(1)),
                expected: batch * self.output_dim(),
                found: upstream.rows() * upstream.cols(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for (layer, t) in self.layers.iter().zip(trace.iter()).rev() {
            let act = layer.activation;
            for (d, (&x, &y)) in delta
                .data_mut()
                .iter_mut()
                .zip(t.pre_act.data().iter().zip(t.output.data()))
            {
                *d *= act.derivative(x, y);
            }
            let (gamma, beta) = match (&layer.batch_norm, &t.bn) {
                (Some(bn), Some(bt)) => {
                    let (dg, db) = batch_norm_backward(bn, bt, &mut delta);
                    (Some(dg), Some(db))
                }
                _ => (None, None),
            };
            let weight = delta.t_matmul(&t.input);
            let bias = layer.bias.as_ref().map(|_| column_sums(&delta));
            let next = delta.matmul(&layer.weight);
            grads.push(LayerGrads {
                weight,
                bias,
                gamma,
                beta,
            });
            delta = next;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    pub fn has_trace(&self) -> bool {
        self.trace.is_some()
    }

    pub fn clear_trace(&mut self) {
        self.trace = None;
    }

    /// Flat parameter views: per layer weight, bias, gamma, beta.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &self.layers {
            out.push(l.weight.data());
            if let Some(b) = &l.bias {
                out.push(b.as_slice());
            }
            if let Some(bn) = &l.batch_norm {
                out.push(bn.gamma.as_slice());
                out.push(bn.beta.as_slice());
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &mut self.layers {
            out.push(l.weight.data_mut());
            if let Some(b) = &mut l.bias {
                out.push(b.as_mut_slice());
            }
            if let Some(bn) = &mut l.batch_norm {
                out.push(bn.gamma.as_mut_slice());
                out.push(bn.beta.as_mut_slice());
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), NnError> {
        let n = self.param_count();
        if flat.len() != n {
            return Err(NnError::Shape {
                layer: None,
                expected: n,
                found: flat.len(),
            });
        }
        let mut off = 0;
        for p in self.params_mut() {
            p.copy_from_slice(&flat[off..off + p.len()]);
            off += p.len();
        }
        Ok(())
    }

    /// Copies parameters and running statistics from an identically shaped net.
    pub fn copy_from(&mut self, other: &DenseNet) -> Result<(), NnError> {
        if !self.same_architecture(other) {
            return Err(NnError::Shape {
                layer: None,
                expected: self.param_count(),
                found: other.param_count(),
            });
        }
        self.layers.clone_from(&other.layers);
        self.trace = None;
        Ok(())
    }

    /// `self ← (1−tau)·self + tau·other`, parameters only.
    pub fn soft_update_from(&mut self, other: &DenseNet, tau: f64) {
        debug_assert!(self.same_architecture(other));
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (1.0 - tau) * *d + tau * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|x| x.is_finite()))
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    out
}

fn batch_norm_forward(bn: &mut BatchNorm, z: &Matrix, training: bool) -> (Matrix, BnTrace) {
    let (rows, cols) = (z.rows(), z.cols());
    let (mean, var) = if training {
        let mean: Vec<f64> = column_sums(z).into_iter().map(|s| s / rows as f64).collect();
        let mut var = vec![0.0; cols];
        for i in 0..rows {
            for (j, v) in z.row(i).iter().enumerate() {
                var[j] += (v - mean[j]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= rows as f64);
        let unbias = if rows > 1 {
            rows as f64 / (rows - 1) as f64
        } else {
            1.0
        };
        for j in 0..cols {
            bn.running_mean[j] =
                (1.0 - BATCH_NORM_MOMENTUM) * bn.running_mean[j] + BATCH_NORM_MOMENTUM * mean[j];
            bn.running_var[j] = (1.0 - BATCH_NORM_MOMENTUM) * bn.running_var[j]
                + BATCH_NORM_MOMENTUM * var[j] * unbias;
        }
        (mean, var)
    } else {
        (bn.running_mean.clone(), bn.running_var.clone())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
    let mut xhat = Matrix::zeros(rows, cols);
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let h = (z.get(i, j) - mean[j]) * inv_std[j];
            xhat.set(i, j, h);
            out.set(i, j, bn.gamma[j] * h + bn.beta[j]);
        }
    }
    (
        out,
        BnTrace {
            xhat,
            inv_std,
            batch_stats: training,
        },
    )
}

/// Rewrites `delta` from ∂L/∂(bn output) to ∂L/∂(bn input); returns (dγ, dβ).
fn batch_norm_backward(bn: &BatchNorm, t: &BnTrace, delta: &mut Matrix) -> (Vec<f64>, Vec<f64>) {
    let (rows, cols) = (delta.rows(), delta.cols());
    let mut dgamma = vec![0.0; cols];
    let mut dbeta = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            let d = delta.get(i, j);
            dgamma[j] += d * t.xhat.get(i, j);
            dbeta[j] += d;
        }
    }
    let n = rows as f64;
    for i in 0..rows {
        for j in 0..cols {
            let d = delta.get(i, j);
            let scale = bn.gamma[j] * t.inv_std[j];
            let v = if t.batch_stats {
                scale * (d - dbeta[j] / n - t.xhat.get(i, j) * dgamma[j] / n)
            } else {
                scale * d
            };
            delta.set(i, j, v);
        }
    }
    (dgamma, dbeta)
}
