use crate::error::{Error, Result};
use crate::net::{DenseLayer, Network};
use crate::tensor::Matrix;

#[derive(Debug, Clone)]
struct Velocity {
    weights: Matrix,
    bias: Matrix,
    feedback: Matrix,
}

/// SGD with decoupled weight decay and Nesterov momentum.
///
/// A parameter `p` with batch-averaged gradient term `g` moves along the
/// direction `d = η·g + λ·p`:
///
/// ```text
/// v ← μ·v + d
/// p ← p − (d + μ·v)
/// ```
///
/// With `μ = 0` this is `p ← p − η·g − λ·p`, the plain decayed update.
/// Kolen-Pollack feedback matrices get their own velocity with the same
/// recursion so `W` and `Bᵀ` are treated identically.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub eta_w: f64,
    pub momentum: f64,
    pub lambda: f64,
    velocity: Vec<Velocity>,
}

impl OptimizerState {
    pub fn new(net: &Network, eta_w: f64, momentum: f64, lambda: f64) -> Self {
        let velocity = net
            .layers()
            .iter()
            .map(|l| Velocity {
                weights: Matrix::zeros(l.n_out(), l.n_in()),
                bias: Matrix::zeros(l.n_out(), 1),
                feedback: Matrix::zeros(l.n_in(), l.n_out()),
            })
            .collect();
        Self {
            eta_w,
            momentum,
            lambda,
            velocity,
        }
    }

    fn velocity_for(&mut self, index: usize, layer: &DenseLayer) -> Result<&mut Velocity> {
        let v = self.velocity.get_mut(index).ok_or_else(|| {
            Error::Shape(format!("optimizer has no buffers for layer index {index}"))
        })?;
        if v.weights.shape() != layer.weights.shape() {
            return Err(Error::dimension(
                "optimizer buffers",
                v.weights.shape(),
                layer.weights.shape(),
            ));
        }
        Ok(v)
    }

    /// Forward update of layer `index` (0-based) from the error at its
    /// output and the signal at its input, both one example per column:
    /// gradient term `δ y_prevᵀ / N` for `W` and `mean(δ)` for `b`.
    pub fn update_forward(
        &mut self,
        index: usize,
        layer: &mut DenseLayer,
        delta: &Matrix,
        y_prev: &Matrix,
    ) -> Result<()> {
        check_pair(layer, delta, y_prev)?;
        let (eta, mu, lambda) = (self.eta_w, self.momentum, self.lambda);
        let inv_n = 1.0 / delta.cols() as f64;
        let grad_w = delta.matmul_nt(y_prev)?.scale(inv_n);
        let grad_b = delta.row_means();
        let v = self.velocity_for(index, layer)?;
        nesterov_step(&mut layer.weights, &mut v.weights, &grad_w, eta, lambda, mu)?;
        nesterov_step(&mut layer.bias, &mut v.bias, &grad_b, eta, lambda, mu)
    }

    /// Kolen-Pollack feedback update with gradient term `y_prev δᵀ / N`,
    /// the exact transpose of the forward term.
    pub fn kp_update_feedback(
        &mut self,
        index: usize,
        layer: &mut DenseLayer,
        y_prev: &Matrix,
        delta: &Matrix,
        eta_b: f64,
        lambda: f64,
    ) -> Result<()> {
        check_pair(layer, delta, y_prev)?;
        let mu = self.momentum;
        let inv_n = 1.0 / delta.cols() as f64;
        let grad_b = y_prev.matmul_nt(delta)?.scale(inv_n);
        let v = self.velocity_for(index, layer)?;
        nesterov_step(
            &mut layer.feedback,
            &mut v.feedback,
            &grad_b,
            eta_b,
            lambda,
            mu,
        )
    }
}

fn check_pair(layer: &DenseLayer, delta: &Matrix, y_prev: &Matrix) -> Result<()> {
    if delta.rows() != layer.n_out()
        || y_prev.rows() != layer.n_in()
        || delta.cols() != y_prev.cols()
    {
        return Err(Error::dimension(
            "layer update",
            delta.shape(),
            y_prev.shape(),
        ));
    }
    Ok(())
}

fn nesterov_step(
    param: &mut Matrix,
    velocity: &mut Matrix,
    grad: &Matrix,
    eta: f64,
    lambda: f64,
    mu: f64,
) -> Result<()> {
    let direction = grad.zip_map(param, |g, p| eta * g + lambda * p)?;
    for ((p, v), &d) in param
        .data_mut()
        .iter_mut()
        .zip(velocity.data_mut().iter_mut())
        .zip(direction.data())
    {
        *v = mu * *v + d;
        *p -= d + mu * *v;
    }
    Ok(())
}
