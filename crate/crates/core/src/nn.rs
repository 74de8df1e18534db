//! Fully connected building blocks with hand-written backward passes.
//!
//! An [`Mlp`] is a chain of hidden blocks `Linear → BatchNorm → ReLU`
//! (batch norm optional per block) closed by a bare `Linear` output layer.
//! Forward passes are pure: they return a [`ForwardCache`] and never touch
//! the network. Batch-norm running statistics are folded in afterwards with
//! [`Mlp::update_running_stats`], so the optimizer loop decides which
//! subnetworks actually move.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in_dim × out_dim`, so a forward pass is `input · weight + bias`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Identity map with zero bias.
    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Matrix::identity(dim),
            bias: vec![0.0; dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear(Linear),
    BatchNorm(BatchNorm),
    Relu,
}

/// Layer sizes plus a batch-norm flag per hidden block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub dims: Vec<usize>,
    pub batchnorm: Vec<bool>,
}

impl MlpSpec {
    /// Every hidden block gets batch norm.
    pub fn with_batchnorm(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            batchnorm: vec![true; dims.len().saturating_sub(2)],
        }
    }

    pub fn plain(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            batchnorm: vec![false; dims.len().saturating_sub(2)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "an MLP needs at least an input and an output size, got {:?}",
                self.dims
            )));
        }
        if self.dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must be positive, got {:?}",
                self.dims
            )));
        }
        if self.batchnorm.len() != self.dims.len() - 2 {
            return Err(Error::InvalidArgument(format!(
                "{} hidden layers but {} batch-norm flags",
                self.dims.len() - 2,
                self.batchnorm.len()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Linear { input: Matrix },
    BatchNorm { x_hat: Matrix, inv_std: Vec<f64>, mean: Vec<f64>, var: Vec<f64> },
    Relu { input: Matrix },
    Eval,
}

/// Intermediates recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    layers: Vec<LayerCache>,
    out_shape: (usize, usize),
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrads {
    Linear { weight: Matrix, bias: Vec<f64> },
    BatchNorm { gamma: Vec<f64>, beta: Vec<f64> },
    None,
}

/// Parameter gradients of one [`Mlp`], laid out like its layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| match l {
                Layer::Linear(lin) => LayerGrads::Linear {
                    weight: Matrix::zeros(lin.in_dim(), lin.out_dim()),
                    bias: vec![0.0; lin.out_dim()],
                },
                Layer::BatchNorm(bn) => LayerGrads::BatchNorm {
                    gamma: vec![0.0; bn.dim()],
                    beta: vec![0.0; bn.dim()],
                },
                Layer::Relu => LayerGrads::None,
            })
            .collect();
        Self { layers }
    }

    /// Gradient buffers in the same order as [`Mlp::param_slices`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                LayerGrads::Linear { weight, bias } => {
                    out.push(weight.data());
                    out.push(bias.as_slice());
                }
                LayerGrads::BatchNorm { gamma, beta } => {
                    out.push(gamma.as_slice());
                    out.push(beta.as_slice());
                }
                LayerGrads::None => {}
            }
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                LayerGrads::Linear { weight, bias } => {
                    out.push(weight.data_mut());
                    out.push(bias.as_mut_slice());
                }
                LayerGrads::BatchNorm { gamma, beta } => {
                    out.push(gamma.as_mut_slice());
                    out.push(beta.as_mut_slice());
                }
                LayerGrads::None => {}
            }
        }
        out
    }

    /// `self += scale * other`. Both must come from the same network.
    pub fn accumulate(&mut self, other: &MlpGrads, scale: f64) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn squared_norm(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|v| v * v).sum()
    }
}

impl Mlp {
    /// Builds a network from explicit layers. The layer list must start and
    /// end with `Linear` and chain dimensions correctly.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let net = Self { layers };
        net.check_chain()?;
        Ok(net)
    }

    /// Identity network of a single square linear layer.
    pub fn identity(dim: usize) -> Self {
        Self {
            layers: vec![Layer::Linear(Linear::identity(dim))],
        }
    }

    /// Xavier-uniform weights, zero biases, fresh batch-norm statistics.
    pub fn init(spec: &MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let n_linear = spec.dims.len() - 1;
        for i in 0..n_linear {
            let (fan_in, fan_out) = (spec.dims[i], spec.dims[i + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weight = Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..=bound));
            layers.push(Layer::Linear(Linear {
                weight,
                bias: vec![0.0; fan_out],
            }));
            if i + 1 < n_linear {
                if spec.batchnorm[i] {
                    layers.push(Layer::BatchNorm(BatchNorm::new(fan_out)));
                }
                layers.push(Layer::Relu);
            }
        }
        Ok(Self { layers })
    }

    fn check_chain(&self) -> Result<()> {
        let linears: Vec<&Linear> = self
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::Linear(lin) => Some(lin),
                _ => None,
            })
            .collect();
        if linears.is_empty() || !matches!(self.layers.last(), Some(Layer::Linear(_))) {
            return Err(Error::InvalidArgument(
                "an MLP must contain at least one linear layer and end with one".into(),
            ));
        }
        let mut width: Option<usize> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Linear(lin) => {
                    if lin.bias.len() != lin.out_dim() {
                        return Err(Error::Shape(format!(
                            "layer {i}: bias length {} vs output width {}",
                            lin.bias.len(),
                            lin.out_dim()
                        )));
                    }
                    if let Some(w) = width {
                        if w != lin.in_dim() {
                            return Err(Error::Shape(format!(
                                "layer {i}: expects width {}, previous layer produces {w}",
                                lin.in_dim()
                            )));
                        }
                    }
                    width = Some(lin.out_dim());
                }
                Layer::BatchNorm(bn) => {
                    let d = bn.dim();
                    let consistent = bn.beta.len() == d
                        && bn.running_mean.len() == d
                        && bn.running_var.len() == d;
                    if !consistent || width != Some(d) {
                        return Err(Error::Shape(format!(
                            "layer {i}: batch norm of width {d} does not fit"
                        )));
                    }
                }
                Layer::Relu => {
                    if width.is_none() {
                        return Err(Error::InvalidArgument(format!(
                            "layer {i}: activation before any linear layer"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        match &self.layers[0] {
            Layer::Linear(l) => l.in_dim(),
            _ => unreachable!("first layer is linear"),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Linear(l)) => l.out_dim(),
            _ => unreachable!("last layer is linear"),
        }
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm(_)))
    }

    /// Recovers the architecture description. Only meaningful for networks
    /// built from a spec (hidden blocks followed by ReLU).
    pub fn spec(&self) -> MlpSpec {
        let mut dims = vec![self.input_dim()];
        let mut batchnorm = Vec::new();
        let mut pending_bn = false;
        for layer in &self.layers {
            match layer {
                Layer::Linear(l) => dims.push(l.out_dim()),
                Layer::BatchNorm(_) => pending_bn = true,
                Layer::Relu => {
                    batchnorm.push(pending_bn);
                    pending_bn = false;
                }
            }
        }
        MlpSpec { dims, batchnorm }
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Trainable parameter buffers: weight then bias for each linear layer,
    /// gamma then beta for each batch norm.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Linear(lin) => {
                    out.push(lin.weight.data());
                    out.push(lin.bias.as_slice());
                }
                Layer::BatchNorm(bn) => {
                    out.push(bn.gamma.as_slice());
                    out.push(bn.beta.as_slice());
                }
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Linear(lin) => {
                    out.push(lin.weight.data_mut());
                    out.push(lin.bias.as_mut_slice());
                }
                Layer::BatchNorm(bn) => {
                    out.push(bn.gamma.as_mut_slice());
                    out.push(bn.beta.as_mut_slice());
                }
                Layer::Relu => {}
            }
        }
        out
    }

    /// Running means and variances of every batch norm, in layer order.
    pub fn running_stat_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let Layer::BatchNorm(bn) = l {
                out.push(bn.running_mean.as_slice());
                out.push(bn.running_var.as_slice());
            }
        }
        out
    }

    pub fn forward(&self, input: &Matrix, mode: Mode) -> Result<(Matrix, ForwardCache)> {
        if input.cols() != self.input_dim() {
            return Err(Error::dims(
                "mlp_forward",
                input.shape(),
                (self.input_dim(), self.output_dim()),
            ));
        }
        if input.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if mode == Mode::Train && self.has_batchnorm() && input.rows() < 2 {
            return Err(Error::BatchTooSmall { got: input.rows() });
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let (y, cache) = match layer {
                Layer::Linear(lin) => {
                    let mut y = x.matmul(&lin.weight)?;
                    y.add_row_broadcast(&lin.bias)?;
                    let cache = match mode {
                        Mode::Train => LayerCache::Linear { input: x },
                        Mode::Eval => LayerCache::Eval,
                    };
                    (y, cache)
                }
                Layer::BatchNorm(bn) => match mode {
                    Mode::Train => batchnorm_train(bn, &x),
                    Mode::Eval => (batchnorm_eval(bn, &x), LayerCache::Eval),
                },
                Layer::Relu => {
                    let y = Matrix::new(
                        x.rows(),
                        x.cols(),
                        x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
                    )?;
                    let cache = match mode {
                        Mode::Train => LayerCache::Relu { input: x },
                        Mode::Eval => LayerCache::Eval,
                    };
                    (y, cache)
                }
            };
            caches.push(cache);
            x = y;
        }
        let out_shape = x.shape();
        Ok((
            x,
            ForwardCache {
                mode,
                layers: caches,
                out_shape,
            },
        ))
    }

    /// Eval-mode forward without a cache.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        Ok(self.forward(input, Mode::Eval)?.0)
    }

    /// Backpropagates `grad_output` through a train-mode forward.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Matrix) -> Result<(Matrix, MlpGrads)> {
        if cache.mode != Mode::Train {
            return Err(Error::EvalModeCache);
        }
        if cache.layers.len() != self.layers.len() {
            return Err(Error::CacheMismatch(format!(
                "cache has {} layers, network has {}",
                cache.layers.len(),
                self.layers.len()
            )));
        }
        if grad_output.shape() != cache.out_shape {
            return Err(Error::dims("mlp_backward", grad_output.shape(), cache.out_shape));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_output.clone();
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            let (g_in, lg) = match (layer, lc) {
                (Layer::Linear(lin), LayerCache::Linear { input }) => {
                    let gw = input.t_matmul(&g)?;
                    let gb = g.column_sums();
                    let g_in = g.matmul_t(&lin.weight)?;
                    (g_in, LayerGrads::Linear { weight: gw, bias: gb })
                }
                (Layer::BatchNorm(bn), LayerCache::BatchNorm { x_hat, inv_std, .. }) => {
                    batchnorm_backward(bn, x_hat, inv_std, &g)?
                }
                (Layer::Relu, LayerCache::Relu { input }) => {
                    let data = g
                        .data()
                        .iter()
                        .zip(input.data())
                        .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                        .collect();
                    (Matrix::new(g.rows(), g.cols(), data)?, LayerGrads::None)
                }
                _ => {
                    return Err(Error::CacheMismatch(
                        "layer kinds differ between cache and network".into(),
                    ))
                }
            };
            grads.push(lg);
            g = g_in;
        }
        grads.reverse();
        Ok((g, MlpGrads { layers: grads }))
    }

    /// Folds the batch statistics recorded in a train-mode cache into the
    /// running estimates. Eval-mode caches are ignored.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) -> Result<()> {
        if cache.mode != Mode::Train {
            return Ok(());
        }
        if cache.layers.len() != self.layers.len() {
            return Err(Error::CacheMismatch("layer count differs".into()));
        }
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            if let (Layer::BatchNorm(bn), LayerCache::BatchNorm { mean, var, .. }) = (layer, lc) {
                let m = bn.momentum;
                for (r, b) in bn.running_mean.iter_mut().zip(mean) {
                    *r = (1.0 - m) * *r + m * b;
                }
                for (r, b) in bn.running_var.iter_mut().zip(var) {
                    *r = (1.0 - m) * *r + m * b;
                }
            }
        }
        Ok(())
    }
}

fn batchnorm_train(bn: &BatchNorm, x: &Matrix) -> (Matrix, LayerCache) {
    let (n, d) = x.shape();
    let nf = n as f64;
    let mean: Vec<f64> = x.column_sums().into_iter().map(|s| s / nf).collect();
    let mut var = vec![0.0; d];
    for row in x.iter_rows() {
        for ((v, &xv), &mu) in var.iter_mut().zip(row).zip(&mean) {
            *v += (xv - mu) * (xv - mu);
        }
    }
    for v in &mut var {
        *v /= nf;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
    let x_hat = Matrix::from_fn(n, d, |i, j| (x.get(i, j) - mean[j]) * inv_std[j]);
    let y = Matrix::from_fn(n, d, |i, j| bn.gamma[j] * x_hat.get(i, j) + bn.beta[j]);
    (
        y,
        LayerCache::BatchNorm {
            x_hat,
            inv_std,
            mean,
            var,
        },
    )
}

fn batchnorm_eval(bn: &BatchNorm, x: &Matrix) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| {
        let norm = (x.get(i, j) - bn.running_mean[j]) / (bn.running_var[j] + bn.eps).sqrt();
        bn.gamma[j] * norm + bn.beta[j]
    })
}

fn batchnorm_backward(
    bn: &BatchNorm,
    x_hat: &Matrix,
    inv_std: &[f64],
    g: &Matrix,
) -> Result<(Matrix, LayerGrads)> {
    let (n, d) = g.shape();
    let nf = n as f64;
    let g_beta = g.column_sums();
    let mut g_gamma = vec![0.0; d];
    for (g_row, xh_row) in g.iter_rows().zip(x_hat.iter_rows()) {
        for ((acc, &gv), &xh) in g_gamma.iter_mut().zip(g_row).zip(xh_row) {
            *acc += gv * xh;
        }
    }
    // dx = γ/(N σ) · (N·dy − Σdy − x̂·Σ(dy·x̂))
    let g_in = Matrix::from_fn(n, d, |i, j| {
        bn.gamma[j] * inv_std[j] / nf * (nf * g.get(i, j) - g_beta[j] - x_hat.get(i, j) * g_gamma[j])
    });
    Ok((
        g_in,
        LayerGrads::BatchNorm {
            gamma: g_gamma,
            beta: g_beta,
        },
    ))
}
