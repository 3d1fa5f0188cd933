//! Dense feed-forward networks trained by backpropagation.
//!
//! Weights are stored `out x in`, so a batch `X` (rows are samples) maps to
//! `act(X W^T + b)` layer by layer. Everything runs in `f64`.

mod io;
mod loss;
mod optim;
mod train;

use std::hash::{DefaultHasher, Hash, Hasher};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from;

pub use io::{load_net, net_from_json, net_to_json, save_net, FORMAT_VERSION};
pub use loss::{distill_grad, loss_distill, loss_mse, mse_grad};
pub(crate) use loss::check_alpha;
pub use optim::{Adam, Optimizer, Sgd};
pub use train::{fit_dataset, fit_single, Dataset, SampleTarget, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Linear => 1.0,
        }
    }
}

/// Converts between network outputs and node counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    /// Population bound per output component.
    pub n_max: f64,
    /// Number of node types (outputs).
    pub types: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    scaling: Scaling,
}

/// Per-layer activations of a batch forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("network has at least one layer")
    }

    /// Pre-activation values, one batch matrix per layer.
    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|w| *w *= factor);
        self.biases.iter_mut().for_each(|b| *b *= factor);
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .fold(0.0, |m, &g| m.max(g.abs()))
    }
}

/// Layer sizes `(L_in, L, L/2, L/2, L_out)` with `L = L_in`.
pub fn pfd_layer_dims(input_len: usize, outputs: usize) -> Vec<usize> {
    let half = (input_len / 2).max(1);
    vec![input_len, input_len, half, half, outputs]
}

pub fn pfd_activations() -> Vec<Activation> {
    vec![
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Sigmoid,
        Activation::Linear,
    ]
}

/// Glorot-uniform weights, zero biases.
pub fn init_net(layer_dims: &[usize], activations: &[Activation], seed: u64) -> Result<DenseNet> {
    validate_dims(layer_dims, activations)?;
    let mut rng = rng_from(seed);
    let mut weights = Vec::with_capacity(activations.len());
    let mut biases = Vec::with_capacity(activations.len());
    for pair in layer_dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| {
            rng.random_range(-bound..bound)
        }));
        biases.push(Array1::zeros(fan_out));
    }
    let outputs = *layer_dims.last().unwrap();
    Ok(DenseNet {
        layer_dims: layer_dims.to_vec(),
        activations: activations.to_vec(),
        weights,
        biases,
        scaling: Scaling {
            n_max: 1.0,
            types: outputs,
        },
    })
}

fn validate_dims(layer_dims: &[usize], activations: &[Activation]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::spec("a network needs at least input and output dims"));
    }
    if layer_dims.contains(&0) {
        return Err(Error::spec("layer dims must be positive"));
    }
    if activations.len() + 1 != layer_dims.len() {
        return Err(Error::spec(format!(
            "{} layer dims need {} activations, got {}",
            layer_dims.len(),
            layer_dims.len() - 1,
            activations.len()
        )));
    }
    Ok(())
}

impl DenseNet {
    /// The four-layer regression architecture for a given input length.
    pub fn pfd(input_len: usize, scaling: Scaling, seed: u64) -> Result<Self> {
        let dims = pfd_layer_dims(input_len, scaling.types);
        let mut net = init_net(&dims, &pfd_activations(), seed)?;
        net.scaling = scaling;
        Ok(net)
    }

    pub(crate) fn from_parts(
        layer_dims: Vec<usize>,
        activations: Vec<Activation>,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        scaling: Scaling,
    ) -> Result<Self> {
        validate_dims(&layer_dims, &activations)?;
        if weights.len() != activations.len() || biases.len() != activations.len() {
            return Err(Error::spec("one weight matrix and bias per layer"));
        }
        for (i, pair) in layer_dims.windows(2).enumerate() {
            if weights[i].dim() != (pair[1], pair[0]) || biases[i].len() != pair[1] {
                return Err(Error::spec(format!("layer {i} parameter shape mismatch")));
            }
        }
        if weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(biases.iter().flat_map(|b| b.iter()))
            .any(|v| !v.is_finite())
        {
            return Err(Error::spec("non-finite parameter"));
        }
        Ok(Self {
            layer_dims,
            activations,
            weights,
            biases,
            scaling,
        })
    }

    pub fn with_scaling(mut self, scaling: Scaling) -> Self {
        self.scaling = scaling;
        self
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn input_len(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_len(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Hash of every parameter bit pattern.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.layer_dims.hash(&mut h);
        for v in self
            .weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
        {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// Raw network output for one input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_len() {
            return Err(Error::arg(format!(
                "input length {} does not match network input {}",
                x.len(),
                self.input_len()
            )));
        }
        let mut a = Array1::from(x.to_vec());
        for ((w, b), &act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let mut z = w.dot(&a) + b;
            z.mapv_inplace(|v| act.apply(v));
            a = z;
        }
        Ok(a.to_vec())
    }

    /// Output in node-count units, clamped to `[0, n_max]` per component.
    pub fn predict_counts(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n_max = self.scaling.n_max;
        Ok(self
            .forward(x)?
            .into_iter()
            .map(|y| (y * n_max).clamp(0.0, n_max))
            .collect())
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_len() {
            return Err(Error::arg(format!(
                "batch width {} does not match network input {}",
                x.ncols(),
                self.input_len()
            )));
        }
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.weights.len());
        for (i, ((w, b), &act)) in self
            .weights
            .iter()
            .zip(&self.biases)
            .zip(&self.activations)
            .enumerate()
        {
            let input = if i == 0 { x } else { post[i - 1].view() };
            let z = input.dot(&w.t()) + b;
            let a = z.mapv(|v| act.apply(v));
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardCache {
            input: x.to_owned(),
            pre,
            post,
        })
    }

    /// Parameter gradients summed over the batch, given `dL/d(output)` per row.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<'_, f64>) -> Result<Gradients> {
        if upstream.dim() != cache.output().dim() {
            return Err(Error::arg("upstream gradient shape does not match output"));
        }
        let layers = self.weights.len();
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        let mut delta = upstream.to_owned();
        for i in (0..layers).rev() {
            let act = self.activations[i];
            ndarray::Zip::from(&mut delta)
                .and(&cache.pre[i])
                .and(&cache.post[i])
                .for_each(|d, &z, &a| *d *= act.derivative(z, a));
            let input = if i == 0 {
                cache.input.view()
            } else {
                cache.post[i - 1].view()
            };
            weights.push(delta.t().dot(&input));
            biases.push(delta.sum_axis(Axis(0)));
            if i > 0 {
                delta = delta.dot(&self.weights[i]);
            }
        }
        weights.reverse();
        biases.reverse();
        Ok(Gradients { weights, biases })
    }

    pub(crate) fn apply_update(&mut self, f: impl Fn(usize, &mut Array2<f64>, &mut Array1<f64>)) {
        for (i, (w, b)) in self.weights.iter_mut().zip(self.biases.iter_mut()).enumerate() {
            f(i, w, b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_two_one() -> DenseNet {
        DenseNet::from_parts(
            vec![2, 2, 1],
            vec![Activation::Relu, Activation::Linear],
            vec![array![[1.0, -1.0], [0.5, 2.0]], array![[2.0, -3.0]]],
            vec![array![0.0, 1.0], array![0.5]],
            Scaling { n_max: 1.0, types: 1 },
        )
        .unwrap()
    }

    #[test]
    fn hand_built_forward() {
        // x = (1, 2): h = relu((-1, 5.5)) = (0, 5.5); y = 2*0 - 3*5.5 + 0.5 = -16.
        let net = two_two_one();
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![-16.0]);
        // x = (3, 1): h = relu((2, 4.5)); y = 4 - 13.5 + 0.5 = -9.
        assert_eq!(net.forward(&[3.0, 1.0]).unwrap(), vec![-9.0]);
    }

    #[test]
    fn identity_linear_net() {
        let net = DenseNet::from_parts(
            vec![3, 3],
            vec![Activation::Linear],
            vec![Array2::eye(3)],
            vec![Array1::zeros(3)],
            Scaling { n_max: 1.0, types: 3 },
        )
        .unwrap();
        assert_eq!(net.forward(&[1.5, -2.0, 7.0]).unwrap(), vec![1.5, -2.0, 7.0]);
    }

    #[test]
    fn forward_rejects_wrong_length() {
        assert!(matches!(
            two_two_one().forward(&[1.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let dims = pfd_layer_dims(31, 1);
        let a = init_net(&dims, &pfd_activations(), 5).unwrap();
        let b = init_net(&dims, &pfd_activations(), 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = init_net(&dims, &pfd_activations(), 6).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
        for (w, pair) in a.weights().iter().zip(dims.windows(2)) {
            let bound = (6.0 / (pair[0] + pair[1]) as f64).sqrt();
            assert!(w.iter().all(|v| v.abs() <= bound));
        }
        assert!(a.biases().iter().all(|b| b.iter().all(|&v| v == 0.0)));
        let out = a.forward(&vec![0.0; 31]).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn init_rejects_inconsistent_dims() {
        assert!(init_net(&[3, 2], &[Activation::Relu, Activation::Linear], 0).is_err());
        assert!(init_net(&[3], &[], 0).is_err());
        assert!(init_net(&[3, 0, 1], &[Activation::Relu, Activation::Linear], 0).is_err());
    }

    #[test]
    fn pfd_dims() {
        assert_eq!(pfd_layer_dims(101, 1), vec![101, 101, 50, 50, 1]);
        assert_eq!(pfd_layer_dims(301, 1), vec![301, 301, 150, 150, 1]);
        assert_eq!(pfd_layer_dims(803, 3), vec![803, 803, 401, 401, 3]);
    }

    #[test]
    fn batch_forward_matches_single() {
        let net = init_net(&[4, 5, 3, 2], &[Activation::Relu, Activation::Sigmoid, Activation::Linear], 1).unwrap();
        let x = array![[0.1, 0.2, -0.3, 0.4], [1.0, -1.0, 0.5, 0.0]];
        let cache = net.forward_batch(x.view()).unwrap();
        for (row, out) in x.rows().into_iter().zip(cache.output().rows()) {
            let single = net.forward(row.as_slice().unwrap()).unwrap();
            for (a, b) in single.iter().zip(out.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_one_one_gradient() {
        // loss (w x - y)^2 -> dL/dw = 2 (w x - y) x.
        let (w, x, y) = (1.5, 2.0, 1.0);
        let net = DenseNet::from_parts(
            vec![1, 1],
            vec![Activation::Linear],
            vec![array![[w]]],
            vec![array![0.0]],
            Scaling { n_max: 1.0, types: 1 },
        )
        .unwrap();
        let xb = array![[x]];
        let cache = net.forward_batch(xb.view()).unwrap();
        let up = array![[2.0 * (w * x - y)]];
        let g = net.backward(&cache, up.view()).unwrap();
        assert!((g.weights[0][[0, 0]] - 2.0 * (w * x - y) * x).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = init_net(&[3, 4, 1], &[Activation::Sigmoid, Activation::Linear], 2).unwrap();
        let x = array![[0.3, -0.2, 0.9]];
        let cache = net.forward_batch(x.view()).unwrap();
        let g = net.backward(&cache, Array2::zeros((1, 1)).view()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }
}
