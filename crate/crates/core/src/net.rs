//! Dense multilayer networks with a separate feedback matrix per layer.
//!
//! Layer `l` (1-based) maps `y_{l-1}` to
//! `y_l = φ(W_l y_{l-1} + b_l)` and carries a feedback matrix `B_l` shaped
//! like `W_lᵀ`. Errors travel down through `B_l` in place of `W_lᵀ`;
//! whether `B_l` tracks `W_lᵀ`, and how, is the job of a
//! [`FeedbackRule`](crate::rules::FeedbackRule).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    /// `max(0, tanh(z))`.
    RectifiedTanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::RectifiedTanh => z.tanh().max(0.0),
        }
    }

    /// φ′(z). The ReLU and rectified-tanh derivatives at `z = 0` are 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::RectifiedTanh => {
                if z > 0.0 {
                    let t = z.tanh();
                    1.0 - t * t
                } else {
                    0.0
                }
            }
        }
    }

    pub fn is_non_negative(self) -> bool {
        matches!(self, Activation::Relu | Activation::RectifiedTanh)
    }

    /// Whether φ′ jumps somewhere (at 0 for the rectifiers).
    pub fn has_kink(self) -> bool {
        self.is_non_negative()
    }

    /// A bias `b` with `φ(b) = beta` and `φ′(b) > 0`, if one exists.
    pub fn default_bias(self, beta: f64) -> Result<f64> {
        let out_of_range = || {
            Error::Config(format!(
                "baseline {beta} is outside the responsive range of {self}"
            ))
        };
        match self {
            Activation::Linear => Ok(beta),
            Activation::Relu if beta > 0.0 => Ok(beta),
            Activation::Tanh if beta.abs() < 1.0 => Ok(beta.atanh()),
            Activation::RectifiedTanh if beta > 0.0 && beta < 1.0 => Ok(beta.atanh()),
            _ => Err(out_of_range()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::RectifiedTanh => "rectified_tanh",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" | "identity" => Ok(Activation::Linear),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "rectified_tanh" | "rectifiedtanh" | "rtanh" => Ok(Activation::RectifiedTanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// `W`, shape `n_out x n_in`.
    pub weights: Matrix,
    /// `b`, shape `n_out x 1`.
    pub bias: Matrix,
    /// `B`, shape `n_in x n_out`.
    pub feedback: Matrix,
    pub activation: Activation,
    cached_pre: Option<Matrix>,
    cached_post: Option<Matrix>,
}

impl DenseLayer {
    /// Forward weights drawn from `N(0, 1/n_in)`, zero bias, and `B = Wᵀ`
    /// until a feedback rule initializes it.
    pub fn new(
        n_in: usize,
        n_out: usize,
        activation: Activation,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::Shape(format!(
                "layer widths must be positive, got {n_in} -> {n_out}"
            )));
        }
        let weights = Matrix::gaussian(n_out, n_in, 0.0, 1.0 / (n_in as f64).sqrt(), rng)?;
        let feedback = weights.transpose();
        Ok(Self {
            weights,
            bias: Matrix::zeros(n_out, 1),
            feedback,
            activation,
            cached_pre: None,
            cached_post: None,
        })
    }

    pub fn from_parts(
        weights: Matrix,
        bias: Matrix,
        feedback: Matrix,
        activation: Activation,
    ) -> Result<Self> {
        let (n_out, n_in) = weights.shape();
        if bias.shape() != (n_out, 1) {
            return Err(Error::dimension(
                "layer bias",
                weights.shape(),
                bias.shape(),
            ));
        }
        if feedback.shape() != (n_in, n_out) {
            return Err(Error::dimension(
                "layer feedback",
                weights.shape(),
                feedback.shape(),
            ));
        }
        Ok(Self {
            weights,
            bias,
            feedback,
            activation,
            cached_pre: None,
            cached_post: None,
        })
    }

    pub fn n_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.rows()
    }

    /// `W x + b` (or `W x` when `with_bias` is false), without touching the cache.
    pub fn preactivation(&self, input: &Matrix, with_bias: bool) -> Result<Matrix> {
        let z = self.weights.matmul(input)?;
        if with_bias {
            z.add_column(&self.bias)
        } else {
            Ok(z)
        }
    }

    pub fn forward(&mut self, input: &Matrix) -> Result<Matrix> {
        let z = self.preactivation(input, true)?;
        let act = self.activation;
        let y = z.map(|v| act.apply(v));
        self.cached_pre = Some(z);
        self.cached_post = Some(y.clone());
        Ok(y)
    }

    /// Pre-activations `z` of the last forward batch.
    pub fn cached_pre(&self) -> Option<&Matrix> {
        self.cached_pre.as_ref()
    }

    /// Outputs `y` of the last forward batch.
    pub fn cached_post(&self) -> Option<&Matrix> {
        self.cached_post.as_ref()
    }

    pub fn clear_cache(&mut self) {
        self.cached_pre = None;
        self.cached_post = None;
    }

    /// φ′ evaluated at the cached pre-activations.
    pub fn cached_derivative(&self) -> Result<Matrix> {
        let z = self
            .cached_pre
            .as_ref()
            .ok_or_else(|| Error::State("no cached forward pass".into()))?;
        let act = self.activation;
        Ok(z.map(|v| act.derivative(v)))
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<DenseLayer>,
}

impl Network {
    /// `widths = [n_0, ..., n_L]`; every layer but the last uses `hidden`,
    /// the last uses `output`.
    pub fn new(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Shape(format!(
                "a network needs at least two widths, got {widths:?}"
            )));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::new(w[0], w[1], if i == last { output } else { hidden }, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("a network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].n_out() != pair[1].n_in() {
                return Err(Error::Shape(format!(
                    "layer {} outputs {} units but layer {} expects {}",
                    i + 1,
                    pair[0].n_out(),
                    i + 2,
                    pair[1].n_in()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// `[n_0, ..., n_L]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].n_in())
            .chain(self.layers.iter().map(DenseLayer::n_out))
            .collect()
    }

    /// Number of weight layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    fn check_input(&self, y0: &Matrix) -> Result<()> {
        if y0.rows() != self.layers[0].n_in() {
            return Err(Error::Shape(format!(
                "input has {} rows but the network expects {}",
                y0.rows(),
                self.layers[0].n_in()
            )));
        }
        Ok(())
    }

    /// Runs a batch (one example per column) forward and caches every
    /// layer's pre- and post-activations. Returns `[y_0, ..., y_L]`.
    pub fn forward(&mut self, y0: &Matrix) -> Result<Vec<Matrix>> {
        self.check_input(y0)?;
        let mut ys = Vec::with_capacity(self.layers.len() + 1);
        ys.push(y0.clone());
        for layer in &mut self.layers {
            let y = layer.forward(ys.last().expect("non-empty"))?;
            ys.push(y);
        }
        Ok(ys)
    }

    /// Forward pass with baseline modulation: `y_{l+1} = φ(W (y_l - β) + b)`.
    ///
    /// Every layer whose output feeds another layer must use a non-negative
    /// activation. Returns the unshifted `[y_0, ..., y_L]`.
    pub fn forward_baseline(&mut self, y0: &Matrix, beta: f64) -> Result<Vec<Matrix>> {
        self.check_input(y0)?;
        let hidden = &self.layers[..self.layers.len() - 1];
        if let Some((i, l)) = hidden
            .iter()
            .enumerate()
            .find(|(_, l)| !l.activation.is_non_negative())
        {
            return Err(Error::Config(format!(
                "baseline modulation needs non-negative activations; layer {} uses {}",
                i + 1,
                l.activation
            )));
        }
        let mut ys = Vec::with_capacity(self.layers.len() + 1);
        ys.push(y0.clone());
        for layer in &mut self.layers {
            let shifted = ys.last().expect("non-empty").map(|v| v - beta);
            let y = layer.forward(&shifted)?;
            ys.push(y);
        }
        Ok(ys)
    }

    /// Output for a batch without touching the caches.
    pub fn predict(&self, y0: &Matrix) -> Result<Matrix> {
        self.check_input(y0)?;
        let mut y = y0.clone();
        for layer in &self.layers {
            let act = layer.activation;
            y = layer.preactivation(&y, true)?.map(|v| act.apply(v));
        }
        Ok(y)
    }

    /// Same as [`predict`](Self::predict) with baseline modulation.
    pub fn predict_baseline(&self, y0: &Matrix, beta: f64) -> Result<Matrix> {
        self.check_input(y0)?;
        let mut y = y0.clone();
        for layer in &self.layers {
            let act = layer.activation;
            let shifted = y.map(|v| v - beta);
            y = layer.preactivation(&shifted, true)?.map(|v| act.apply(v));
        }
        Ok(y)
    }

    /// Error signal at the output pre-activations, `(y_L - y*) ⊙ φ′_L(z_L)`.
    /// With a linear readout this is exactly `y_L - y*`.
    pub fn output_delta(&self, target: &Matrix) -> Result<Matrix> {
        let last = self.layers.last().expect("non-empty");
        let y = last
            .cached_post()
            .ok_or_else(|| Error::State("output_delta called before forward".into()))?;
        let err = output_error(y, target)?;
        if last.activation == Activation::Linear {
            Ok(err)
        } else {
            err.hadamard(&last.cached_derivative()?)
        }
    }

    /// Propagates `delta_out = δ_L` down the feedback path,
    /// `δ_l = φ′(z_l) ⊙ (B_{l+1} δ_{l+1})`, or through `W_{l+1}ᵀ` when
    /// `use_true_transpose` is set.
    ///
    /// Returned in layer order: element `l - 1` is `δ_l`, the last element is
    /// `delta_out` itself.
    pub fn backward_deltas(
        &self,
        delta_out: &Matrix,
        use_true_transpose: bool,
    ) -> Result<Vec<Matrix>> {
        let depth = self.layers.len();
        let mut batch = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.cached_pre().ok_or_else(|| {
                Error::State(format!("layer {} has no cached forward pass", i + 1))
            })?;
            match batch {
                None => batch = Some(z.cols()),
                Some(b) if b != z.cols() => {
                    return Err(Error::State(format!(
                        "layer {} cache holds a different batch",
                        i + 1
                    )))
                }
                _ => {}
            }
        }
        let last = &self.layers[depth - 1];
        if delta_out.shape() != (last.n_out(), batch.expect("non-empty")) {
            return Err(Error::State(format!(
                "output error is {}x{} but the cached batch is {}x{}",
                delta_out.rows(),
                delta_out.cols(),
                last.n_out(),
                batch.expect("non-empty")
            )));
        }

        let mut deltas = vec![delta_out.clone(); depth];
        for k in (0..depth - 1).rev() {
            let upper = &self.layers[k + 1];
            let carried = if use_true_transpose {
                upper.weights.matmul_tn(&deltas[k + 1])?
            } else {
                upper.feedback.matmul(&deltas[k + 1])?
            };
            deltas[k] = carried.hadamard(&self.layers[k].cached_derivative()?)?;
        }
        Ok(deltas)
    }

    pub fn clear_caches(&mut self) {
        for l in &mut self.layers {
            l.clear_cache();
        }
    }
}

/// `δ_L = y_L - y*`.
pub fn output_error(y_out: &Matrix, target: &Matrix) -> Result<Matrix> {
    if !y_out.same_shape(target) {
        return Err(Error::dimension(
            "output_error",
            y_out.shape(),
            target.shape(),
        ));
    }
    y_out.sub(target)
}
