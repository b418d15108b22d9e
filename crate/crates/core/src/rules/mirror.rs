//! Mirror mode: a noisy layer drives its successor and the feedback
//! matrix integrates the resulting input/output covariance.

use super::{MirrorParams, MirrorSchedule};
use crate::error::{Error, Result};
use crate::net::{DenseLayer, Network};
use crate::rng::RngStream;
use crate::tensor::Matrix;

/// What one mirror sweep over a network did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MirrorSweep {
    /// Number of separate noise injections (passes).
    pub injections: usize,
    /// 0-based indices of the layers whose `B` was updated, in order.
    pub updated_layers: Vec<usize>,
}

fn check_mirror_inputs(batch_size: usize, params: &MirrorParams) -> Result<()> {
    if batch_size < 2 {
        return Err(Error::Parameter(format!(
            "mirror batch size must be at least 2 (batch-mean subtraction), got {batch_size}"
        )));
    }
    if !(params.noise_std >= 0.0) || !(params.eta_b >= 0.0) || !(params.lambda_wm >= 0.0) {
        return Err(Error::Parameter(format!(
            "mirror parameters must be non-negative: {params:?}"
        )));
    }
    Ok(())
}

fn apply_mirror_update(
    layer: &mut DenseLayer,
    covariance: &Matrix,
    params: &MirrorParams,
) -> Result<()> {
    let mut next = layer.feedback.scale(1.0 - params.lambda_wm);
    next.add_scaled(params.eta_b, covariance)?;
    layer.feedback = next;
    Ok(())
}

/// One mirror step on a single layer with fresh `N(0, σ²)` noise of shape
/// `n_in x batch_size`.
///
/// Returns the batch covariance estimate `δ_in δ_outᵀ / N` that drove the
/// update, so `ΔB = η_B · covariance − λ_WM · B`.
pub fn mirror_layer(
    layer: &mut DenseLayer,
    batch_size: usize,
    rng: &mut RngStream,
    params: &MirrorParams,
) -> Result<Matrix> {
    check_mirror_inputs(batch_size, params)?;
    let noise = Matrix::gaussian(layer.n_in(), batch_size, 0.0, params.noise_std, rng)?;
    mirror_layer_with_noise(layer, &noise, params)
}

/// [`mirror_layer`] with caller-supplied noise.
///
/// The noise goes through the layer's forward map (without bias when
/// bias-blocking is on); input and output signals are centered on their
/// batch means, and `B ← (1 − λ_WM) B + η_B · δ_in δ_outᵀ / N`.
pub fn mirror_layer_with_noise(
    layer: &mut DenseLayer,
    noise: &Matrix,
    params: &MirrorParams,
) -> Result<Matrix> {
    check_mirror_inputs(noise.cols(), params)?;
    if noise.rows() != layer.n_in() {
        return Err(Error::dimension(
            "mirror noise",
            layer.weights.shape(),
            noise.shape(),
        ));
    }
    let act = layer.activation;
    let out = layer
        .preactivation(noise, !params.bias_blocking)?
        .map(|z| act.apply(z));
    let delta_in = noise.center_rows();
    let delta_out = out.center_rows();
    let covariance = delta_in
        .matmul_nt(&delta_out)?
        .scale(1.0 / noise.cols() as f64);
    apply_mirror_update(layer, &covariance, params)?;
    Ok(covariance)
}

/// Mirror step with baseline-modulated firing: noise has mean `beta`, the
/// bias is replaced by the default bias `b⁻` with `φ(b⁻) = beta`, and
/// `B ← (1 − λ_WM) B + η_B · (δ_in − β)(δ_out − β)ᵀ / N`.
pub fn mirror_baseline_update(
    layer: &mut DenseLayer,
    batch_size: usize,
    rng: &mut RngStream,
    beta: f64,
    params: &MirrorParams,
) -> Result<Matrix> {
    check_mirror_inputs(batch_size, params)?;
    let noise = Matrix::gaussian(layer.n_in(), batch_size, beta, params.noise_std, rng)?;
    mirror_baseline_with_noise(layer, &noise, beta, params)
}

/// [`mirror_baseline_update`] with caller-supplied noise (already centered
/// on `beta`).
pub fn mirror_baseline_with_noise(
    layer: &mut DenseLayer,
    noise: &Matrix,
    beta: f64,
    params: &MirrorParams,
) -> Result<Matrix> {
    check_mirror_inputs(noise.cols(), params)?;
    if noise.rows() != layer.n_in() {
        return Err(Error::dimension(
            "mirror noise",
            layer.weights.shape(),
            noise.shape(),
        ));
    }
    let act = layer.activation;
    let default_bias = act.default_bias(beta)?;
    let shifted_in = noise.map(|v| v - beta);
    let out = layer
        .weights
        .matmul(&shifted_in)?
        .map(|z| act.apply(z + default_bias));
    let shifted_out = out.map(|v| v - beta);
    let covariance = shifted_in
        .matmul_nt(&shifted_out)?
        .scale(1.0 / noise.cols() as f64);
    apply_mirror_update(layer, &covariance, params)?;
    Ok(covariance)
}

fn check_loss_inputs(x: &Matrix, y: &Matrix, b: &Matrix) -> Result<()> {
    if x.rows() != b.rows() || y.rows() != b.cols() || x.cols() != y.cols() {
        return Err(Error::dimension("mirror loss", x.shape(), y.shape()));
    }
    Ok(())
}

/// `f(x, y, B) = −xᵀ B y`, averaged over columns when `x` and `y` are batches.
pub fn mirror_loss(x: &Matrix, y: &Matrix, b: &Matrix) -> Result<f64> {
    check_loss_inputs(x, y, b)?;
    let by = b.matmul(y)?;
    Ok(-x.inner(&by)? / x.cols() as f64)
}

/// `∂f/∂B = −x yᵀ` (batch-averaged).
pub fn mirror_loss_grad(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    if x.cols() != y.cols() {
        return Err(Error::dimension("mirror loss grad", x.shape(), y.shape()));
    }
    Ok(x.matmul_nt(y)?.scale(-1.0 / x.cols() as f64))
}

/// `L = f + λ_WM / (2 η_B) · ‖B‖²`, whose gradient step of size `η_B` is the
/// decayed transposing rule.
pub fn regularized_mirror_loss(
    x: &Matrix,
    y: &Matrix,
    b: &Matrix,
    eta_b: f64,
    lambda_wm: f64,
) -> Result<f64> {
    if !(eta_b > 0.0) {
        return Err(Error::Parameter(format!("eta_B must be > 0, got {eta_b}")));
    }
    let norm = b.frobenius_norm();
    Ok(mirror_loss(x, y, b)? + lambda_wm / (2.0 * eta_b) * norm * norm)
}

/// `∂L/∂B = −x yᵀ + (λ_WM / η_B) B`.
pub fn regularized_mirror_loss_grad(
    x: &Matrix,
    y: &Matrix,
    b: &Matrix,
    eta_b: f64,
    lambda_wm: f64,
) -> Result<Matrix> {
    if !(eta_b > 0.0) {
        return Err(Error::Parameter(format!("eta_B must be > 0, got {eta_b}")));
    }
    check_loss_inputs(x, y, b)?;
    let mut g = mirror_loss_grad(x, y)?;
    g.add_scaled(lambda_wm / eta_b, b)?;
    Ok(g)
}

fn mirror_one(
    layer: &mut DenseLayer,
    batch_size: usize,
    rng: &mut RngStream,
    params: &MirrorParams,
) -> Result<()> {
    match params.baseline_beta {
        Some(beta) => mirror_baseline_update(layer, batch_size, rng, beta, params).map(|_| ()),
        None => mirror_layer(layer, batch_size, rng, params).map(|_| ()),
    }
}

/// One mirror sweep over the network.
///
/// Noise is injected into hidden layers `1..L-1`; noise in layer `l` trains
/// `B_{l+1}`. Layerwise mode visits them one at a time in ascending order;
/// alternate mode fires all odd layers in one pass and all even layers in a
/// second.
pub fn mirror_schedule(
    net: &mut Network,
    mode: MirrorSchedule,
    batch_size: usize,
    rng: &mut RngStream,
    params: &MirrorParams,
) -> Result<MirrorSweep> {
    check_mirror_inputs(batch_size, params)?;
    let depth = net.depth();
    // Noisy layer l (1-based) feeds layer index l (0-based).
    let noisy: Vec<usize> = (1..depth).collect();
    let passes: Vec<Vec<usize>> = match mode {
        MirrorSchedule::Layerwise => noisy.iter().map(|&l| vec![l]).collect(),
        MirrorSchedule::Alternate => {
            let odd: Vec<usize> = noisy.iter().copied().filter(|l| l % 2 == 1).collect();
            let even: Vec<usize> = noisy.iter().copied().filter(|l| l % 2 == 0).collect();
            [odd, even].into_iter().filter(|p| !p.is_empty()).collect()
        }
    };
    let mut sweep = MirrorSweep {
        injections: passes.len(),
        updated_layers: Vec::new(),
    };
    for pass in passes {
        for l in pass {
            mirror_one(&mut net.layers_mut()[l], batch_size, rng, params)?;
            sweep.updated_layers.push(l);
        }
    }
    Ok(sweep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::matrix_angle;
    use crate::net::Activation;

    fn layer(w: Matrix, act: Activation) -> DenseLayer {
        let (r, c) = w.shape();
        DenseLayer::from_parts(w, Matrix::zeros(r, 1), Matrix::zeros(c, r), act).unwrap()
    }

    #[test]
    fn zero_noise_is_pure_decay() {
        let mut rng = RngStream::new(0);
        let w = Matrix::gaussian(3, 4, 0.0, 1.0, &mut rng).unwrap();
        let mut l = layer(w, Activation::Tanh);
        l.feedback = Matrix::gaussian(4, 3, 0.0, 1.0, &mut rng).unwrap();
        let before = l.feedback.clone();
        let params = MirrorParams {
            noise_std: 0.0,
            lambda_wm: 0.3,
            ..MirrorParams::default()
        };
        mirror_layer(&mut l, 16, &mut rng, &params).unwrap();
        assert_eq!(l.feedback, before.scale(0.7));
    }

    #[test]
    fn rejects_single_sample_batches() {
        let mut rng = RngStream::new(0);
        let mut l = layer(Matrix::identity(2), Activation::Linear);
        assert!(matches!(
            mirror_layer(&mut l, 1, &mut rng, &MirrorParams::default()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn scalar_expectation_monte_carlo() {
        // W = [[2]], linear, bias-blocked: E[ΔB] = η_B σ² · 2 = 0.02.
        let params = MirrorParams {
            eta_b: 0.01,
            lambda_wm: 0.0,
            noise_std: 1.0,
            bias_blocking: true,
            ..MirrorParams::default()
        };
        let mut l = layer(Matrix::from_rows(&[[2.0]]).unwrap(), Activation::Linear);
        l.bias = Matrix::from_rows(&[[0.7]]).unwrap();
        let mut rng = RngStream::new(31);
        let (batches, batch) = (1000, 1000);
        for _ in 0..batches {
            mirror_layer(&mut l, batch, &mut rng, &params).unwrap();
        }
        let mean_delta = l.feedback.get(0, 0) / batches as f64;
        assert!((mean_delta - 0.02).abs() / 0.02 < 0.01, "{mean_delta}");
    }

    #[test]
    fn fixed_point_is_scaled_transpose() {
        // E-update B ← (1-λ)B + η σ² Wᵀ has fixed point (η σ²/λ) Wᵀ = 0.2 Wᵀ.
        let mut rng = RngStream::new(12);
        let w = Matrix::gaussian(3, 4, 0.0, 0.5, &mut rng).unwrap();
        let mut l = layer(w.clone(), Activation::Linear);
        let params = MirrorParams {
            eta_b: 0.1,
            lambda_wm: 0.5,
            noise_std: 1.0,
            bias_blocking: true,
            ..MirrorParams::default()
        };
        for _ in 0..400 {
            mirror_layer(&mut l, 4096, &mut rng, &params).unwrap();
        }
        let target = w.transpose().scale(0.2);
        let rel = l.feedback.sub(&target).unwrap().frobenius_norm() / target.frobenius_norm();
        assert!(rel < 0.05, "{rel}");
    }

    #[test]
    fn decay_only_shrinks_monotonically() {
        let mut rng = RngStream::new(4);
        let mut l = layer(
            Matrix::gaussian(5, 5, 0.0, 1.0, &mut rng).unwrap(),
            Activation::Tanh,
        );
        l.feedback = Matrix::gaussian(5, 5, 0.0, 1.0, &mut rng).unwrap();
        let params = MirrorParams {
            eta_b: 0.0,
            lambda_wm: 0.2,
            ..MirrorParams::default()
        };
        let mut prev = l.feedback.frobenius_norm();
        for _ in 0..200 {
            mirror_layer(&mut l, 8, &mut rng, &params).unwrap();
            let now = l.feedback.frobenius_norm();
            assert!(now < prev || now == 0.0);
            prev = now;
        }
        assert!(prev < 1e-15);
    }

    #[test]
    fn baseline_default_bias_and_reduction() {
        // Linear, beta = 0: b⁻ = 0, so with noise whose rows are already
        // zero-mean the baseline rule matches bias-blocked mirroring.
        let mut rng = RngStream::new(21);
        let w = Matrix::gaussian(3, 4, 0.0, 1.0, &mut rng).unwrap();
        let noise = Matrix::gaussian(4, 64, 0.0, 1.0, &mut rng)
            .unwrap()
            .center_rows();
        let params = MirrorParams {
            bias_blocking: true,
            ..MirrorParams::default()
        };
        let mut a = layer(w.clone(), Activation::Linear);
        let mut b = layer(w, Activation::Linear);
        a.bias = Matrix::filled(3, 1, 0.4);
        b.bias = Matrix::filled(3, 1, 0.4);
        mirror_layer_with_noise(&mut a, &noise, &params).unwrap();
        mirror_baseline_with_noise(&mut b, &noise, 0.0, &params).unwrap();
        assert!(a.feedback.sub(&b.feedback).unwrap().max_abs() < 1e-14);

        let mut relu = layer(Matrix::identity(2), Activation::Relu);
        assert!(mirror_baseline_update(&mut relu, 4, &mut rng, 0.0, &params).is_err());
        assert_eq!(Activation::Relu.default_bias(0.5).unwrap(), 0.5);
    }

    #[test]
    fn baseline_relu_monte_carlo() {
        // ReLU, W = [[2]], beta = 0.5, sigma = 0.1: the small-noise
        // linearization around b⁻ = 0.5 gives E[ΔB] ≈ η_B σ² · 2 = 2e-4.
        let params = MirrorParams {
            eta_b: 0.01,
            lambda_wm: 0.0,
            noise_std: 0.1,
            ..MirrorParams::default()
        };
        let mut l = layer(Matrix::from_rows(&[[2.0]]).unwrap(), Activation::Relu);
        let mut rng = RngStream::new(77);
        let batches = 1000;
        for _ in 0..batches {
            mirror_baseline_update(&mut l, 1000, &mut rng, 0.5, &params).unwrap();
        }
        let mean_delta = l.feedback.get(0, 0) / batches as f64;
        assert!((mean_delta - 2e-4).abs() / 2e-4 < 0.05, "{mean_delta}");
    }

    #[test]
    fn mirror_loss_examples() {
        let x = Matrix::column(&[1.0, 0.0]).unwrap();
        let y = Matrix::column(&[0.0, 1.0]).unwrap();
        let mut b = Matrix::zeros(2, 2);
        assert_eq!(mirror_loss(&x, &y, &b).unwrap(), 0.0);
        b.set(0, 1, 1.0);
        assert_eq!(mirror_loss(&x, &y, &b).unwrap(), -1.0);
        assert!(mirror_loss(&x, &Matrix::zeros(3, 1), &b).is_err());
    }

    #[test]
    fn mirror_loss_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(9);
        for (r, c) in [(1, 1), (3, 2), (5, 5), (2, 4)] {
            let x = Matrix::gaussian(r, 1, 0.0, 1.0, &mut rng).unwrap();
            let y = Matrix::gaussian(c, 1, 0.0, 1.0, &mut rng).unwrap();
            let b = Matrix::gaussian(r, c, 0.0, 1.0, &mut rng).unwrap();
            let g = mirror_loss_grad(&x, &y).unwrap();
            let eps = 1e-6;
            for i in 0..r {
                for j in 0..c {
                    let mut bp = b.clone();
                    bp.set(i, j, b.get(i, j) + eps);
                    let mut bm = b.clone();
                    bm.set(i, j, b.get(i, j) - eps);
                    let fd = (mirror_loss(&x, &y, &bp).unwrap()
                        - mirror_loss(&x, &y, &bm).unwrap())
                        / (2.0 * eps);
                    assert!((fd - g.get(i, j)).abs() < 1e-6, "{fd} vs {}", g.get(i, j));
                }
            }
        }
    }

    #[test]
    fn schedule_counts_injections() {
        let mut rng = RngStream::new(1);
        let params = MirrorParams::default();
        let mut net4 = Network::new(
            &[5, 6, 6, 6, 3],
            Activation::Tanh,
            Activation::Linear,
            &mut rng,
        )
        .unwrap();
        let lw =
            mirror_schedule(&mut net4, MirrorSchedule::Layerwise, 8, &mut rng, &params).unwrap();
        let alt =
            mirror_schedule(&mut net4, MirrorSchedule::Alternate, 8, &mut rng, &params).unwrap();
        assert_eq!(lw.injections, 3);
        assert_eq!(lw.updated_layers, vec![1, 2, 3]);
        assert_eq!(alt.injections, 2);
        assert_eq!(alt.updated_layers, vec![1, 3, 2]);
    }

    #[test]
    fn schedule_modes_coincide_on_two_layers() {
        let mut rng = RngStream::new(6);
        let net = Network::new(&[4, 5, 3], Activation::Tanh, Activation::Linear, &mut rng).unwrap();
        let params = MirrorParams::default();
        let (mut a, mut b) = (net.clone(), net);
        let sa = mirror_schedule(
            &mut a,
            MirrorSchedule::Layerwise,
            16,
            &mut RngStream::new(50),
            &params,
        )
        .unwrap();
        let sb = mirror_schedule(
            &mut b,
            MirrorSchedule::Alternate,
            16,
            &mut RngStream::new(50),
            &params,
        )
        .unwrap();
        assert_eq!(sa, sb);
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            assert_eq!(la.feedback, lb.feedback);
        }
    }

    #[test]
    fn both_schedules_align_a_linear_net() {
        for mode in [MirrorSchedule::Layerwise, MirrorSchedule::Alternate] {
            let mut rng = RngStream::new(13);
            let mut net = Network::new(
                &[6, 8, 8, 8, 4],
                Activation::Linear,
                Activation::Linear,
                &mut rng,
            )
            .unwrap();
            crate::rules::init_feedback(
                &mut net,
                &crate::rules::FeedbackRule::FeedbackAlignment,
                &mut rng,
                None,
            )
            .unwrap();
            let params = MirrorParams {
                bias_blocking: true,
                ..MirrorParams::default()
            };
            for _ in 0..200 {
                mirror_schedule(&mut net, mode, 512, &mut rng, &params).unwrap();
            }
            for l in &net.layers()[1..] {
                let angle = matrix_angle(&l.weights, &l.feedback).unwrap();
                assert!(angle < 10.0, "{mode:?}: {angle}");
            }
        }
    }
}
