//! Dense feed-forward network with reverse-mode gradients.
//!
//! A `DenseNet` is a chain of affine layers `z W + b` with a smooth
//! hidden nonlinearity (SiLU, `x * sigmoid(x)`) and an identity final layer.
//! `forward_traced` returns the activations needed by `backward`, which
//! produces exact gradients for every parameter and for the input.
//!
//! Networks are immutable during inference and can be shared read-only;
//! training mutates one network from a single logical writer.

use ndarray::Axis;

use super::{ensure_finite, Matrix, NumError, Prng};

/// Hidden-layer nonlinearity. The final layer is always identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Sigmoid-weighted linear unit `x * sigmoid(x)`. Smooth everywhere, so
    /// finite-difference gradient checks are clean.
    Silu,
    Identity,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Silu => x * sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative with respect to the pre-activation.
    fn deriv(&self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn tag(&self) -> u8 {
        match self {
            Activation::Silu => 0,
            Activation::Identity => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Activation> {
        match tag {
            0 => Some(Activation::Silu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dense feed-forward network.
///
/// `sizes` lists layer widths `[in, h1, ..., out]`. Weights are stored
/// `in x out` so a batch `B x in` maps to `B x out` by right-multiplication.
#[derive(Debug, Clone)]
pub struct DenseNet {
    sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Matrix>,
    hidden_act: Activation,
}

/// Activations cached by [`DenseNet::forward_traced`] for the backward pass.
///
/// Backward takes the trace by reference, so calling it without a matching
/// forward is unrepresentable.
#[derive(Debug)]
pub struct ForwardTrace {
    /// Layer inputs: `post[0]` is the network input, `post[l]` the activated
    /// output of layer `l-1`.
    post: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.post.last().expect("trace has at least the input")
    }

    pub fn batch_size(&self) -> usize {
        self.post[0].nrows()
    }
}

/// Parameter gradients (and the input gradient) from a backward pass,
/// ordered like the layers.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub d_weights: Vec<Matrix>,
    pub d_biases: Vec<Matrix>,
    pub d_input: Matrix,
}

impl ParamGrads {
    /// All-zero gradients shaped like `net`, with a `batch x in` input slot.
    pub fn zeros_like(net: &DenseNet, batch: usize) -> ParamGrads {
        ParamGrads {
            d_weights: net.weights.iter().map(|w| Matrix::zeros(w.raw_dim())).collect(),
            d_biases: net.biases.iter().map(|b| Matrix::zeros(b.raw_dim())).collect(),
            d_input: Matrix::zeros((batch, net.input_dim())),
        }
    }

    /// `self += scale * other` over the parameter gradients.
    /// Input gradients are not combined (they may have different batch shapes).
    pub fn add_scaled(&mut self, other: &ParamGrads, scale: f64) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            a.scaled_add(scale, b);
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            a.scaled_add(scale, b);
        }
    }

    /// Flattened parameter gradient in the same order as
    /// [`DenseNet::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.d_weights.iter().zip(&self.d_biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

impl DenseNet {
    /// Zero-initialized network with SiLU hidden layers.
    pub fn zeros(sizes: &[usize]) -> Result<DenseNet, NumError> {
        Self::zeros_with(sizes, Activation::Silu)
    }

    /// Zero-initialized network with an explicit hidden activation.
    pub fn zeros_with(sizes: &[usize], hidden_act: Activation) -> Result<DenseNet, NumError> {
        Self::check_sizes(sizes)?;
        let weights = pairs(sizes).map(|(i, o)| Matrix::zeros((i, o))).collect();
        let biases = pairs(sizes).map(|(_, o)| Matrix::zeros((1, o))).collect();
        Ok(DenseNet {
            sizes: sizes.to_vec(),
            weights,
            biases,
            hidden_act,
        })
    }

    /// Xavier-normal initialized network (biases zero).
    pub fn random(sizes: &[usize], rng: &mut Prng) -> Result<DenseNet, NumError> {
        let mut net = Self::zeros(sizes)?;
        for w in net.weights.iter_mut() {
            let (fan_in, fan_out) = (w.nrows(), w.ncols());
            let sd = (2.0 / (fan_in + fan_out) as f64).sqrt();
            w.mapv_inplace(|_| 0.0);
            for v in w.iter_mut() {
                *v = sd * rng.normal();
            }
        }
        Ok(net)
    }

    fn check_sizes(sizes: &[usize]) -> Result<(), NumError> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(NumError::Config(format!(
                "layer sizes must list at least [in, out] with no zeros, got {sizes:?}"
            )));
        }
        Ok(())
    }

    /// Zeroes the last layer so the initial output is identically zero.
    /// Common for noise-prediction heads: training starts from ε̂ = 0.
    pub fn zero_output_layer(&mut self) {
        if let Some(w) = self.weights.last_mut() {
            w.fill(0.0);
        }
        if let Some(b) = self.biases.last_mut() {
            b.fill(0.0);
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_act
    }

    fn act_for_layer(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            Activation::Identity
        } else {
            self.hidden_act
        }
    }

    /// Pure forward pass.
    pub fn forward(&self, input: &Matrix) -> Result<Matrix, NumError> {
        Ok(self.forward_traced(input)?.0)
    }

    /// Forward pass that caches per-layer activations for [`Self::backward`].
    pub fn forward_traced(&self, input: &Matrix) -> Result<(Matrix, ForwardTrace), NumError> {
        if input.ncols() != self.input_dim() {
            return Err(NumError::Shape {
                context: "forward input".into(),
                expected: format!("cols = {}", self.input_dim()),
                got: format!("cols = {}", input.ncols()),
            });
        }
        ensure_finite(input, "forward input")?;
        let mut post = Vec::with_capacity(self.num_layers() + 1);
        let mut pre = Vec::with_capacity(self.num_layers());
        post.push(input.clone());
        for l in 0..self.num_layers() {
            let mut z = post[l].dot(&self.weights[l]);
            z += &self.biases[l];
            let act = self.act_for_layer(l);
            let a = if act == Activation::Identity {
                z.clone()
            } else {
                z.mapv(|x| act.apply(x))
            };
            pre.push(z);
            post.push(a);
        }
        let out = post.last().unwrap().clone();
        ensure_finite(&out, "forward output")?;
        Ok((out, ForwardTrace { post, pre }))
    }

    /// Reverse-mode pass: gradients of a scalar loss with respect to every
    /// parameter and the input, given `d loss / d output`.
    pub fn backward(&self, trace: &ForwardTrace, loss_grad: &Matrix) -> Result<ParamGrads, NumError> {
        let out = trace.output();
        if loss_grad.raw_dim() != out.raw_dim() {
            return Err(NumError::Shape {
                context: "backward loss gradient".into(),
                expected: format!("{:?}", out.raw_dim()),
                got: format!("{:?}", loss_grad.raw_dim()),
            });
        }
        let mut d_weights = Vec::with_capacity(self.num_layers());
        let mut d_biases = Vec::with_capacity(self.num_layers());
        let mut delta = loss_grad.clone();
        for l in (0..self.num_layers()).rev() {
            let act = self.act_for_layer(l);
            if act != Activation::Identity {
                // d loss / d pre = d loss / d post ⊙ act'(pre)
                delta.zip_mut_with(&trace.pre[l], |d, &z| *d *= act.deriv(z));
            }
            let dw = trace.post[l].t().dot(&delta);
            let db = delta
                .sum_axis(Axis(0))
                .into_shape_with_order((1, self.sizes[l + 1]))
                .expect("bias gradient shape");
            d_weights.push(dw);
            d_biases.push(db);
            delta = delta.dot(&self.weights[l].t());
        }
        d_weights.reverse();
        d_biases.reverse();
        let grads = ParamGrads {
            d_weights,
            d_biases,
            d_input: delta,
        };
        for (l, g) in grads.d_weights.iter().enumerate() {
            ensure_finite(g, &format!("layer {l} weight gradient"))?;
        }
        Ok(grads)
    }

    /// Number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters flattened layer by layer, weights then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    /// Overwrites parameters from a flat slice in [`Self::flat_params`] order.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), NumError> {
        if flat.len() != self.param_count() {
            return Err(NumError::Shape {
                context: "set_flat_params".into(),
                expected: format!("{} values", self.param_count()),
                got: format!("{} values", flat.len()),
            });
        }
        let mut idx = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v = flat[idx];
                idx += 1;
            }
            for v in b.iter_mut() {
                *v = flat[idx];
                idx += 1;
            }
        }
        Ok(())
    }

    pub(crate) fn param_tensors(&self) -> impl Iterator<Item = &Matrix> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b])
    }

    pub(crate) fn param_tensors_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
    }

    pub(crate) fn grad_tensors<'g>(grads: &'g ParamGrads) -> impl Iterator<Item = &'g Matrix> {
        grads
            .d_weights
            .iter()
            .zip(&grads.d_biases)
            .flat_map(|(w, b)| [w, b])
    }

    /// Direct access to one layer's weight matrix (`in x out`), mainly for
    /// hand-built nets in tests and analysis code.
    pub fn layer_weight_mut(&mut self, l: usize) -> &mut Matrix {
        &mut self.weights[l]
    }

    /// Direct access to one layer's bias row (`1 x out`).
    pub fn layer_bias_mut(&mut self, l: usize) -> &mut Matrix {
        &mut self.biases[l]
    }
}

fn pairs(sizes: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
    sizes.windows(2).map(|w| (w[0], w[1]))
}
