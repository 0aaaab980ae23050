//! Dense feed-forward networks with activation recording and exact backprop.
//!
//! Each layer computes `z = W x + b` with `W` stored row-major as
//! `(out_dim, in_dim)`, so row `j` of `W` holds the incoming weights of
//! output neuron `j`. Hidden layers apply ReLU; the final layer feeds an
//! [`OutputHead`].

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::matrix::{gemm_a_b, gemm_a_bt, gemm_at_b, Matrix};
use crate::{Error, Result};

/// Bounds of the squashed log standard deviation of a Gaussian policy head.
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
}

/// Interpretation of the final layer's affine output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    /// Identity.
    Linear,
    /// First half is the mean; second half is squashed into
    /// `[LOG_STD_MIN, LOG_STD_MAX]` as `min + (max - min) * (tanh(x) + 1) / 2`.
    GaussianPolicy,
    /// Identity; consumers apply softmax.
    CategoricalLogits,
}

impl OutputHead {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputHead::Linear => "linear",
            OutputHead::GaussianPolicy => "gaussian_policy",
            OutputHead::CategoricalLogits => "categorical_logits",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `(out_dim, in_dim)`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidInput("layer dimensions must be positive".into()));
        }
        if weight.len() != in_dim * out_dim {
            return Err(Error::shape("Layer::new weight", in_dim * out_dim, weight.len()));
        }
        if bias.len() != out_dim {
            return Err(Error::shape("Layer::new bias", out_dim, bias.len()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    /// PyTorch `nn.Linear` default: weights and biases ~ U(-1/sqrt(in), 1/sqrt(in)).
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidInput("layer dimensions must be positive".into()));
        }
        let bound = 1.0 / (in_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let weight = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        let bias = (0..out_dim).map(|_| dist.sample(rng)).collect();
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Incoming weights of output neuron `j`.
    pub fn incoming(&self, j: usize) -> &[f64] {
        &self.weight[j * self.in_dim..(j + 1) * self.in_dim]
    }

    fn affine(&self, input: &Matrix) -> Matrix {
        let b = input.rows();
        let mut out = Matrix::zeros(b, self.out_dim);
        for i in 0..b {
            out.row_mut(i).copy_from_slice(&self.bias);
        }
        gemm_a_bt(b, self.in_dim, self.out_dim, input.data(), &self.weight, out.data_mut());
        out
    }
}

/// Per-layer activations of one forward pass: post-ReLU vectors of hidden
/// layers followed by the final layer's pre-head vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub layers: Vec<Vec<f64>>,
}

/// Everything a batched backward pass needs.
#[derive(Debug, Clone)]
pub struct BatchPass {
    pub input: Matrix,
    /// Post-ReLU output of every hidden layer.
    pub hidden: Vec<Matrix>,
    pub pre_head: Matrix,
    pub output: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

/// Parameter gradients; shapes mirror the owning [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    dw: vec![0.0; l.weight.len()],
                    db: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.dw.iter().chain(&g.db).all(|v| v.is_finite()))
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.dw.iter_mut().zip(&b.dw).for_each(|(x, y)| *x += y);
            a.db.iter_mut().zip(&b.db).for_each(|(x, y)| *x += y);
        }
    }

    /// Row `j` of `dW` and `db_j` of every layer scaled by the layer's mask entry `j`.
    pub fn masked(&self, mask: &NetMask) -> Result<Gradients> {
        mask.check_shape(self.layers.iter().map(|g| g.db.len()))?;
        let layers = self
            .layers
            .iter()
            .zip(&mask.layers)
            .map(|(g, m)| {
                let in_dim = g.dw.len() / g.db.len();
                let dw = g
                    .dw
                    .iter()
                    .enumerate()
                    .map(|(idx, v)| m[idx / in_dim] * v)
                    .collect();
                let db = g.db.iter().zip(m).map(|(v, s)| s * v).collect();
                LayerGrad { dw, db }
            })
            .collect();
        Ok(Gradients { layers })
    }
}

/// One multiplier per output neuron per layer of a single network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetMask {
    pub layers: Vec<Vec<f64>>,
}

impl NetMask {
    pub fn ones(net: &DenseNet) -> Self {
        Self::ones_for(&net.layer_sizes())
    }

    /// All-ones mask for layers with the given output sizes.
    pub fn ones_for(out_sizes: &[usize]) -> Self {
        Self {
            layers: out_sizes.iter().map(|&n| vec![1.0; n]).collect(),
        }
    }

    pub fn is_all_ones(&self) -> bool {
        self.layers.iter().flatten().all(|&v| v == 1.0)
    }

    pub(crate) fn check_shape(&self, out_sizes: impl ExactSizeIterator<Item = usize>) -> Result<()> {
        if out_sizes.len() != self.layers.len() {
            return Err(Error::shape("mask layer count", out_sizes.len(), self.layers.len()));
        }
        for (n, m) in out_sizes.zip(&self.layers) {
            if n != m.len() {
                return Err(Error::shape("mask layer width", n, m.len()));
            }
        }
        Ok(())
    }
}

/// A feed-forward network: ReLU hidden layers and a configurable output head.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
    hidden: HiddenActivation,
    head: OutputHead,
}

impl DenseNet {
    /// Randomly initialised network with layer widths `sizes = [in, h1, ..., out]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], head: OutputHead, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidInput("a network needs at least an input and an output size".into()));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Layer::init(w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers, head)
    }

    pub fn from_layers(layers: Vec<Layer>, head: OutputHead) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("a network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::shape("layer chaining", w[0].out_dim, w[1].in_dim));
            }
        }
        let last = layers.last().map(|l| l.out_dim).unwrap_or(0);
        if head == OutputHead::GaussianPolicy && last % 2 != 0 {
            return Err(Error::InvalidInput("gaussian policy head needs an even output width".into()));
        }
        if layers
            .iter()
            .any(|l| l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(Self {
            layers,
            hidden: HiddenActivation::Relu,
            head,
        })
    }

    #[inline]
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    #[inline]
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    #[inline]
    pub fn head(&self) -> OutputHead {
        self.head
    }

    #[inline]
    pub fn hidden_activation(&self) -> HiddenActivation {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Output width of every layer.
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.out_dim).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Forward pass for a single input, optionally recording per-layer activations.
    pub fn forward(&self, input: &[f64], record: bool) -> Result<(Vec<f64>, Option<ActivationRecord>)> {
        let pass = self.forward_batch(&Matrix::row_vector(input))?;
        let rec = record.then(|| ActivationRecord {
            layers: pass
                .hidden
                .iter()
                .map(|h| h.row(0).to_vec())
                .chain(std::iter::once(pass.pre_head.row(0).to_vec()))
                .collect(),
        });
        Ok((pass.output.into_vec(), rec))
    }

    /// Output only, without keeping intermediates.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut x = std::borrow::Cow::Borrowed(input);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(&x);
            if l < last {
                relu_in_place(&mut z);
            } else {
                self.apply_head(&mut z);
            }
            x = std::borrow::Cow::Owned(z);
        }
        Ok(x.into_owned())
    }

    /// Batched forward pass keeping everything [`DenseNet::backward_batch`] needs.
    pub fn forward_batch(&self, input: &Matrix) -> Result<BatchPass> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut hidden: Vec<Matrix> = Vec::with_capacity(last);
        for layer in &self.layers[..last] {
            let x = hidden.last().unwrap_or(input);
            let mut z = layer.affine(x);
            relu_in_place(&mut z);
            hidden.push(z);
        }
        let pre_head = self.layers[last].affine(hidden.last().unwrap_or(input));
        let mut output = pre_head.clone();
        self.apply_head(&mut output);
        Ok(BatchPass {
            input: input.clone(),
            hidden,
            pre_head,
            output,
        })
    }

    /// Backward pass for a single input given `dLoss/doutput`.
    pub fn backward(&self, input: &[f64], upstream_grad: &[f64]) -> Result<Gradients> {
        let pass = self.forward_batch(&Matrix::row_vector(input))?;
        let (grads, _) = self.backward_batch(&pass, &Matrix::row_vector(upstream_grad), true, false)?;
        Ok(grads.expect("parameter gradients requested"))
    }

    /// Reverse-mode pass over a recorded batch.
    ///
    /// `upstream` is `dLoss/doutput` (post-head), one row per sample; the
    /// returned gradients are summed over the batch. The ReLU subgradient at
    /// exactly zero is zero.
    pub fn backward_batch(
        &self,
        pass: &BatchPass,
        upstream: &Matrix,
        want_params: bool,
        want_input: bool,
    ) -> Result<(Option<Gradients>, Option<Matrix>)> {
        let b = pass.input.rows();
        if upstream.rows() != b {
            return Err(Error::shape("backward upstream rows", b, upstream.rows()));
        }
        if upstream.cols() != self.output_dim() {
            return Err(Error::shape("backward upstream width", self.output_dim(), upstream.cols()));
        }
        if !upstream.is_finite() {
            return Err(Error::NonFinite("upstream gradient"));
        }

        let mut delta = upstream.clone();
        self.head_backward(&pass.pre_head, &mut delta);

        let mut grads = want_params.then(|| Gradients::zeros_like(self));
        let mut input_grad = None;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x = if l == 0 { &pass.input } else { &pass.hidden[l - 1] };
            if let Some(g) = grads.as_mut() {
                let lg = &mut g.layers[l];
                gemm_at_b(layer.out_dim, b, layer.in_dim, delta.data(), x.data(), &mut lg.dw);
                for i in 0..b {
                    for (acc, d) in lg.db.iter_mut().zip(delta.row(i)) {
                        *acc += d;
                    }
                }
            }
            if l == 0 && !want_input {
                break;
            }
            let mut dx = Matrix::zeros(b, layer.in_dim);
            gemm_a_b(b, layer.out_dim, layer.in_dim, delta.data(), &layer.weight, dx.data_mut());
            if l == 0 {
                input_grad = Some(dx);
                break;
            }
            // ReLU gate: the post-activation is positive exactly where the pre-activation is.
            for (d, h) in dx.data_mut().iter_mut().zip(x.data()) {
                if *h <= 0.0 {
                    *d = 0.0;
                }
            }
            delta = dx;
        }
        Ok((grads, input_grad))
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), input.cols()));
        }
        if !input.is_finite() {
            return Err(Error::NonFinite("network input"));
        }
        Ok(())
    }

    fn apply_head(&self, z: &mut Matrix) {
        if self.head == OutputHead::GaussianPolicy {
            let half = z.cols() / 2;
            for i in 0..z.rows() {
                for v in &mut z.row_mut(i)[half..] {
                    *v = squash_log_std(*v);
                }
            }
        }
    }

    fn head_backward(&self, pre_head: &Matrix, delta: &mut Matrix) {
        if self.head == OutputHead::GaussianPolicy {
            let half = pre_head.cols() / 2;
            for i in 0..pre_head.rows() {
                let raw = &pre_head.row(i)[half..];
                for (d, x) in delta.row_mut(i)[half..].iter_mut().zip(raw) {
                    let t = x.tanh();
                    *d *= 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (1.0 - t * t);
                }
            }
        }
    }
}

#[inline]
fn squash_log_std(x: f64) -> f64 {
    LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (x.tanh() + 1.0)
}

#[inline]
fn relu_in_place(z: &mut Matrix) {
    for v in z.data_mut() {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn scalar_net(w: f64, b: f64) -> DenseNet {
        DenseNet::from_layers(vec![Layer::new(1, 1, vec![w], vec![b]).unwrap()], OutputHead::Linear).unwrap()
    }

    #[test]
    fn identity_layer_records_input() {
        let net = scalar_net(1.0, 0.0);
        let (y, rec) = net.forward(&[3.0], true).unwrap();
        assert_eq!(y, vec![3.0]);
        assert_eq!(rec.unwrap().layers, vec![vec![3.0]]);
    }

    #[test]
    fn single_final_layer_is_affine() {
        let net = scalar_net(-2.0, 1.0);
        let (y, rec) = net.forward(&[1.0], false).unwrap();
        assert_eq!(y, vec![-1.0]);
        assert!(rec.is_none());
    }

    #[test]
    fn recording_does_not_change_outputs() {
        let mut r = rng::stream(11, "test", 0);
        let net = DenseNet::new(&[3, 8, 2], OutputHead::Linear, &mut r).unwrap();
        let x = [0.3, -1.2, 0.7];
        let (a, _) = net.forward(&x, true).unwrap();
        let (b, _) = net.forward(&x, false).unwrap();
        assert_eq!(a, b);
        let c = net.predict(&Matrix::row_vector(&x)).unwrap();
        assert_eq!(a, c.into_vec());
    }

    #[test]
    fn rejects_wrong_input_width() {
        let net = scalar_net(1.0, 0.0);
        assert!(matches!(net.forward(&[1.0, 2.0], false), Err(Error::Shape { .. })));
    }

    #[test]
    fn rejects_unchained_layers() {
        let a = Layer::new(2, 3, vec![0.0; 6], vec![0.0; 3]).unwrap();
        let b = Layer::new(4, 1, vec![0.0; 4], vec![0.0; 1]).unwrap();
        assert!(DenseNet::from_layers(vec![a, b], OutputHead::Linear).is_err());
    }

    #[test]
    fn linear_gradient_is_input() {
        let net = scalar_net(0.7, 0.0);
        let g = net.backward(&[2.0], &[1.0]).unwrap();
        assert_eq!(g.layers[0].dw, vec![2.0]);
        assert_eq!(g.layers[0].db, vec![1.0]);
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        // Hidden unit pre-activation = 1*1 + (-2) = -1.
        let hidden = Layer::new(1, 1, vec![1.0], vec![-2.0]).unwrap();
        let out = Layer::new(1, 1, vec![3.0], vec![0.5]).unwrap();
        let net = DenseNet::from_layers(vec![hidden, out], OutputHead::Linear).unwrap();
        let g = net.backward(&[1.0], &[1.0]).unwrap();
        assert_eq!(g.layers[0].dw, vec![0.0]);
        assert_eq!(g.layers[0].db, vec![0.0]);
        assert_eq!(g.layers[1].dw, vec![0.0]);
        assert_eq!(g.layers[1].db, vec![1.0]);
    }

    #[test]
    fn non_finite_upstream_is_rejected() {
        let net = scalar_net(1.0, 0.0);
        assert!(matches!(net.backward(&[1.0], &[f64::NAN]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn masked_gradients_scale_rows() {
        let mut r = rng::stream(5, "test", 0);
        let net = DenseNet::new(&[2, 3, 1], OutputHead::Linear, &mut r).unwrap();
        let g = net.backward(&[0.5, -0.25], &[1.0]).unwrap();
        let mask = NetMask {
            layers: vec![vec![0.0, 0.5, 1.0], vec![0.25]],
        };
        let m = g.masked(&mask).unwrap();
        for j in 0..3 {
            for i in 0..2 {
                assert_eq!(m.layers[0].dw[j * 2 + i], mask.layers[0][j] * g.layers[0].dw[j * 2 + i]);
            }
            assert_eq!(m.layers[0].db[j], mask.layers[0][j] * g.layers[0].db[j]);
        }
        assert_eq!(m.layers[1].db[0], 0.25 * g.layers[1].db[0]);
    }

    #[test]
    fn gaussian_head_squashes_second_half() {
        let layer = Layer::new(1, 2, vec![0.0, 0.0], vec![0.3, 0.0]).unwrap();
        let net = DenseNet::from_layers(vec![layer], OutputHead::GaussianPolicy).unwrap();
        let (y, _) = net.forward(&[1.0], false).unwrap();
        assert_eq!(y[0], 0.3);
        assert!((y[1] - (LOG_STD_MIN + LOG_STD_MAX) / 2.0).abs() < 1e-15);
    }
}
