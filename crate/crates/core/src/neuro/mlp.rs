use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NeuroError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer, weights stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Layer>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Activations recorded by a forward pass, input first.
#[derive(Debug, Clone)]
pub struct Trace {
    pub activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace holds the input at least")
    }
}

/// Activations of a batched forward pass, each row-major `rows x width`.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    pub rows: usize,
    pub activations: Vec<Vec<f64>>,
}

impl BatchTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace holds the input at least")
    }
}

/// Parameter gradients laid out like [`Mlp::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self { layers: net.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect() }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.biases.as_slice()])
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.biases.iter_mut()).for_each(|g| *g *= k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().flatten().all(|g| g.is_finite())
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Mlp {
    /// Uniform fan-in initialisation; the last layer is drawn from
    /// `±final_scale` so initial outputs sit near zero.
    pub fn new<R: Rng>(
        layer_sizes: &[usize],
        hidden: Activation,
        output: Activation,
        final_scale: f64,
        rng: &mut R,
    ) -> Self {
        assert!(layer_sizes.len() >= 2, "an MLP needs input and output sizes");
        let depth = layer_sizes.len() - 1;
        let layers = layer_sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = if k + 1 == depth { final_scale } else { 1.0 / (inputs as f64).sqrt() };
                let mut draw = || rng.random_range(-bound..=bound);
                Layer {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs).map(|_| draw()).collect(),
                    biases: (0..outputs).map(|_| draw()).collect(),
                }
            })
            .collect();
        Self { layer_sizes: layer_sizes.to_vec(), layers, hidden, output }
    }

    /// Builds a network with all parameters zero.
    pub fn zeros(layer_sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        let layers = layer_sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Self { layer_sizes: layer_sizes.to_vec(), layers, hidden, output }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("non-empty sizes")
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.biases.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.biases.as_mut_slice()])
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().flatten().all(|p| p.is_finite())
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layer_sizes == other.layer_sizes
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NeuroError> {
        if x.len() != self.input_dim() {
            return Err(NeuroError::Shape { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NeuroError> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            cur = self.affine(k, layer, &cur);
        }
        Ok(cur)
    }

    pub fn forward_traced(&self, x: &[f64]) -> Result<Trace, NeuroError> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let next = self.affine(k, layer, activations.last().expect("non-empty"));
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    fn activation(&self, k: usize) -> Activation {
        if k + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    fn affine(&self, k: usize, layer: &Layer, x: &[f64]) -> Vec<f64> {
        let act = self.activation(k);
        layer
            .weights
            .chunks_exact(layer.inputs)
            .zip(&layer.biases)
            .map(|(row, b)| act.apply(dot(row, x) + b))
            .collect()
    }

    /// Reverse pass for the scalar `output · upstream`. Parameter gradients
    /// are accumulated into `grads` when given; the input gradient is returned.
    pub fn backward(
        &self,
        trace: &Trace,
        upstream: &[f64],
        mut grads: Option<&mut Gradients>,
    ) -> Result<Vec<f64>, NeuroError> {
        if upstream.len() != self.output_dim() {
            return Err(NeuroError::Shape { expected: self.output_dim(), got: upstream.len() });
        }
        let mut delta: Vec<f64> = Vec::new();
        let mut carry = upstream.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let act = self.activation(k);
            let out = &trace.activations[k + 1];
            let input = &trace.activations[k];
            delta.clear();
            delta.extend(carry.iter().zip(out).map(|(g, y)| g * act.derivative_from_output(*y)));
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g.layers[k];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    gl.biases[o] += d;
                    let row = &mut gl.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter_mut().zip(input).for_each(|(w, x)| *w += d * x);
                }
            }
            carry = vec![0.0; layer.inputs];
            for (row, d) in layer.weights.chunks_exact(layer.inputs).zip(&delta) {
                carry.iter_mut().zip(row).for_each(|(c, w)| *c += w * d);
            }
        }
        Ok(carry)
    }

    /// Exact gradients of `forward(x) · upstream` w.r.t. parameters and input.
    pub fn gradients(&self, x: &[f64], upstream: &[f64]) -> Result<(Gradients, Vec<f64>), NeuroError> {
        let trace = self.forward_traced(x)?;
        let mut grads = Gradients::zeros_like(self);
        let dx = self.backward(&trace, upstream, Some(&mut grads))?;
        Ok((grads, dx))
    }

    /// Forward pass over `rows` inputs stored row-major in `x`.
    pub fn forward_batch(&self, x: &[f64], rows: usize) -> Result<BatchTrace, NeuroError> {
        if x.len() != rows * self.input_dim() {
            return Err(NeuroError::Shape { expected: rows * self.input_dim(), got: x.len() });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let input = activations.last().expect("non-empty");
            let mut z: Vec<f64> = layer.biases.iter().copied().cycle().take(rows * layer.outputs).collect();
            // z (rows x out) += input (rows x in) * W^T (in x out)
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    layer.inputs,
                    layer.outputs,
                    1.0,
                    input.as_ptr(),
                    layer.inputs as isize,
                    1,
                    layer.weights.as_ptr(),
                    1,
                    layer.inputs as isize,
                    1.0,
                    z.as_mut_ptr(),
                    layer.outputs as isize,
                    1,
                );
            }
            let act = self.activation(k);
            if act != Activation::Identity {
                z.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            activations.push(z);
        }
        Ok(BatchTrace { rows, activations })
    }

    /// Batched reverse pass for `Σ_rows output · upstream`; `upstream` is
    /// row-major `rows x output_dim`. Returns the row-major input gradient.
    pub fn backward_batch(
        &self,
        trace: &BatchTrace,
        upstream: &[f64],
        grads: Option<&mut Gradients>,
    ) -> Result<Vec<f64>, NeuroError> {
        self.backward_batch_impl(trace, upstream, grads, false)
    }

    /// Like [`Mlp::backward_batch`] but `upstream` is taken with respect to
    /// the output layer's pre-activation, skipping its squashing derivative.
    pub fn backward_batch_pre_output(
        &self,
        trace: &BatchTrace,
        upstream: &[f64],
        grads: Option<&mut Gradients>,
    ) -> Result<Vec<f64>, NeuroError> {
        self.backward_batch_impl(trace, upstream, grads, true)
    }

    fn backward_batch_impl(
        &self,
        trace: &BatchTrace,
        upstream: &[f64],
        mut grads: Option<&mut Gradients>,
        skip_output_derivative: bool,
    ) -> Result<Vec<f64>, NeuroError> {
        let rows = trace.rows;
        if upstream.len() != rows * self.output_dim() {
            return Err(NeuroError::Shape { expected: rows * self.output_dim(), got: upstream.len() });
        }
        let mut carry = upstream.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let act = self.activation(k);
            let out = &trace.activations[k + 1];
            let input = &trace.activations[k];
            let delta: Vec<f64> = if skip_output_derivative && k + 1 == self.layers.len() {
                carry.clone()
            } else {
                carry.iter().zip(out).map(|(g, y)| g * act.derivative_from_output(*y)).collect()
            };
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g.layers[k];
                for row in delta.chunks_exact(layer.outputs) {
                    gl.biases.iter_mut().zip(row).for_each(|(b, d)| *b += d);
                }
                // dW (out x in) += delta^T (out x rows) * input (rows x in)
                unsafe {
                    matrixmultiply::dgemm(
                        layer.outputs,
                        rows,
                        layer.inputs,
                        1.0,
                        delta.as_ptr(),
                        1,
                        layer.outputs as isize,
                        input.as_ptr(),
                        layer.inputs as isize,
                        1,
                        1.0,
                        gl.weights.as_mut_ptr(),
                        layer.inputs as isize,
                        1,
                    );
                }
            }
            carry = vec![0.0; rows * layer.inputs];
            // dX (rows x in) = delta (rows x out) * W (out x in)
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    layer.outputs,
                    layer.inputs,
                    1.0,
                    delta.as_ptr(),
                    layer.outputs as isize,
                    1,
                    layer.weights.as_ptr(),
                    layer.inputs as isize,
                    1,
                    0.0,
                    carry.as_mut_ptr(),
                    layer.inputs as isize,
                    1,
                );
            }
        }
        Ok(carry)
    }

    /// `self ← tau · online + (1 − tau) · self`.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) {
        debug_assert!(self.same_shape(online));
        for (t, o) in self.tensors_mut().zip(online.tensors()) {
            t.iter_mut().zip(o).for_each(|(t, o)| *t = tau * o + (1.0 - tau) * *t);
        }
    }
}
