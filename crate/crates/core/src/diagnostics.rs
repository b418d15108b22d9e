//! Measurements of how well feedback weights stand in for `Wᵀ`, plus the
//! numeric oracles used to verify the learning rules.

use crate::error::{Error, Result};
use crate::net::{Activation, DenseLayer, Network};
use crate::rng::RngStream;
use crate::rules::{
    init_feedback, mirror_layer, FeedbackRule, KpParams, MirrorParams, OptimizerState,
};
use crate::tensor::Matrix;

/// Angle in degrees between two same-shaped matrices viewed as vectors.
///
/// Computed as `2·atan2(‖â − b̂‖, ‖â + b̂‖)` on the unit vectors, which equals
/// `acos` of the clamped cosine but stays exact near 0° and 180°.
pub fn angle_between(a: &Matrix, b: &Matrix) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::dimension("angle_between", a.shape(), b.shape()));
    }
    let na = a.frobenius_norm();
    let nb = b.frobenius_norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("angle with a zero-norm operand".into()));
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Ok((2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees())
}

/// Angle between `vec(B)` and `vec(Wᵀ)`, in degrees.
pub fn matrix_angle(weights: &Matrix, feedback: &Matrix) -> Result<f64> {
    if feedback.shape() != (weights.cols(), weights.rows()) {
        return Err(Error::dimension(
            "matrix_angle",
            weights.shape(),
            feedback.shape(),
        ));
    }
    angle_between(feedback, &weights.transpose())
}

/// Per-layer matrix angles, `None` where either matrix is all zero.
pub fn matrix_angles(net: &Network) -> Vec<Option<f64>> {
    net.layers()
        .iter()
        .map(|l| matrix_angle(&l.weights, &l.feedback).ok())
        .collect()
}

/// Per-layer angle between the errors the feedback path computes and the
/// ones backprop would compute, each flattened over the whole probe batch.
///
/// Both passes start from the same output error. Element `l - 1` is the
/// angle at `δ_l`; the last layer is always 0. `baseline` selects
/// baseline-modulated forward semantics for the probe pass.
pub fn delta_angles(
    net: &Network,
    inputs: &Matrix,
    targets: &Matrix,
    baseline: Option<f64>,
) -> Result<Vec<f64>> {
    delta_angles_per_layer(net, inputs, targets, baseline)?
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            a.ok_or_else(|| Error::Degenerate(format!("zero error signal at layer {}", i + 1)))
        })
        .collect()
}

/// Like [`delta_angles`], with `None` for layers whose error signal is zero.
pub fn delta_angles_per_layer(
    net: &Network,
    inputs: &Matrix,
    targets: &Matrix,
    baseline: Option<f64>,
) -> Result<Vec<Option<f64>>> {
    let mut probe = net.clone();
    match baseline {
        Some(beta) => probe.forward_baseline(inputs, beta)?,
        None => probe.forward(inputs)?,
    };
    let delta_out = probe.output_delta(targets)?;
    let through_feedback = probe.backward_deltas(&delta_out, false)?;
    let through_transpose = probe.backward_deltas(&delta_out, true)?;
    Ok(through_feedback
        .iter()
        .zip(&through_transpose)
        .map(|(a, b)| angle_between(a, b).ok())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngleReport {
    pub step: usize,
    pub matrix_angle_deg: Vec<f64>,
    pub delta_angle_deg: Vec<f64>,
}

/// Matrix and δ angles for every layer. Fails on any degenerate layer.
pub fn angle_report(
    net: &Network,
    inputs: &Matrix,
    targets: &Matrix,
    step: usize,
) -> Result<AngleReport> {
    let matrix_angle_deg = net
        .layers()
        .iter()
        .map(|l| matrix_angle(&l.weights, &l.feedback))
        .collect::<Result<Vec<_>>>()?;
    let delta_angle_deg = delta_angles(net, inputs, targets, None)?;
    Ok(AngleReport {
        step,
        matrix_angle_deg,
        delta_angle_deg,
    })
}

/// Norms below this are treated as already converged by
/// [`kp_contraction_check`]; their ratios are not checked.
pub const CONTRACTION_FLOOR: f64 = 1e-12;

/// Tolerance on each step's ratio, relative to `1 - λ`.
pub const CONTRACTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub passed: bool,
    /// Largest `|ratio − (1−λ)| / (1−λ)` over checked steps.
    pub max_deviation: f64,
    pub steps_checked: usize,
    pub steps_below_floor: usize,
}

/// Checks that consecutive entries of `‖W − Bᵀ‖_F` shrink by exactly `1 − λ`.
pub fn kp_contraction_check(history: &[f64], lambda: f64) -> ContractionReport {
    let expected = 1.0 - lambda;
    let mut report = ContractionReport {
        passed: true,
        max_deviation: 0.0,
        steps_checked: 0,
        steps_below_floor: 0,
    };
    for pair in history.windows(2) {
        if pair[0] < CONTRACTION_FLOOR {
            report.steps_below_floor += 1;
            continue;
        }
        let dev = (pair[1] / pair[0] - expected).abs() / expected;
        report.max_deviation = report.max_deviation.max(dev);
        report.steps_checked += 1;
    }
    report.passed = report.max_deviation <= CONTRACTION_TOLERANCE;
    report
}

/// `‖W_l − B_lᵀ‖_F` for every layer.
pub fn transpose_gaps(net: &Network) -> Vec<f64> {
    net.layers()
        .iter()
        .map(|l| {
            l.weights
                .sub(&l.feedback.transpose())
                .expect("feedback is shaped like the transpose")
                .frobenius_norm()
        })
        .collect()
}

/// Trains a randomly initialized tanh network with Kolen-Pollack on random
/// regression data (matched `η_B = η_W`, shared `λ`, no momentum) and
/// records `‖W_l − B_lᵀ‖_F` before the first step and after every step.
/// Returns one history per layer.
pub fn kp_contraction_run(
    widths: &[usize],
    lambda: f64,
    eta: f64,
    steps: usize,
    batch: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = RngStream::new(seed);
    let mut net = Network::new(widths, Activation::Tanh, Activation::Linear, &mut rng)?;
    let rule = FeedbackRule::KolenPollack(KpParams::default());
    init_feedback(&mut net, &rule, &mut rng, None)?;
    let mut opt = OptimizerState::new(&net, eta, 0.0, lambda);
    let n_in = widths[0];
    let n_out = *widths.last().expect("validated by Network::new");

    let mut histories: Vec<Vec<f64>> = transpose_gaps(&net).into_iter().map(|g| vec![g]).collect();
    for _ in 0..steps {
        let x = Matrix::gaussian(n_in, batch, 0.0, 1.0, &mut rng)?;
        let target = Matrix::gaussian(n_out, batch, 0.0, 1.0, &mut rng)?;
        let ys = net.forward(&x)?;
        let delta_out = net.output_delta(&target)?;
        let deltas = net.backward_deltas(&delta_out, false)?;
        for (k, layer) in net.layers_mut().iter_mut().enumerate() {
            opt.update_forward(k, layer, &deltas[k], &ys[k])?;
            opt.kp_update_feedback(k, layer, &ys[k], &deltas[k], eta, lambda)?;
        }
        for (h, g) in histories.iter_mut().zip(transpose_gaps(&net)) {
            h.push(g);
        }
    }
    Ok(histories)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopRule {
    KolenPollack,
    WeightMirror,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopEstimate {
    /// Arithmetic operations per training example to adjust `B_{l+1}`.
    pub flops: u64,
    /// Random numbers drawn per example (mirror noise in layer `l`).
    pub noise_draws: u64,
}

/// Per-example cost model for adjusting one feedback matrix between layers
/// of widths `n_l` and `n_l1`.
///
/// Kolen-Pollack: `min(n_l, n_l1) + 4 n_l n_l1`. Weight mirror: the same,
/// plus `2 n_l n_l1` to push the noise forward, plus `n_l` noise draws.
pub fn flops_estimate(rule: FlopRule, n_l: u64, n_l1: u64) -> FlopEstimate {
    let kp = n_l.min(n_l1) + 4 * n_l * n_l1;
    match rule {
        FlopRule::KolenPollack => FlopEstimate {
            flops: kp,
            noise_draws: 0,
        },
        FlopRule::WeightMirror => FlopEstimate {
            flops: kp + 2 * n_l * n_l1,
            noise_draws: n_l,
        },
    }
}

/// Gradients smaller than this are compared on an absolute scale.
pub const FINITE_DIFF_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, FINITE_DIFF_FLOOR)`.
    pub max_rel_error: f64,
    pub compared: usize,
    /// Parameters skipped because a rectifier pre-activation they influence
    /// sits within `10·ε` of the kink.
    pub excluded: usize,
}

/// Batch loss `mean_n ½‖y_L − y*‖²`, the objective whose gradient the
/// backprop path computes.
pub fn half_squared_error(net: &Network, inputs: &Matrix, targets: &Matrix) -> Result<f64> {
    let y = net.predict(inputs)?;
    let err = y.sub(targets)?;
    let norm = err.frobenius_norm();
    Ok(0.5 * norm * norm / inputs.cols() as f64)
}

/// Analytic backprop gradients `(∂/∂W_l, ∂/∂b_l)` of [`half_squared_error`].
pub fn backprop_gradients(
    net: &Network,
    inputs: &Matrix,
    targets: &Matrix,
) -> Result<Vec<(Matrix, Matrix)>> {
    let mut probe = net.clone();
    let ys = probe.forward(inputs)?;
    let delta_out = probe.output_delta(targets)?;
    let deltas = probe.backward_deltas(&delta_out, true)?;
    let inv_n = 1.0 / inputs.cols() as f64;
    deltas
        .iter()
        .zip(&ys)
        .map(|(d, y)| Ok((d.matmul_nt(y)?.scale(inv_n), d.row_means())))
        .collect()
}

/// Compares backprop gradients against central differences of the loss
/// for every weight and bias.
///
/// A parameter of layer `l` is excluded when a rectifier pre-activation at
/// layer `l` (same unit) or any later layer lies within `10·ε` of zero for
/// some example, since the central difference may straddle the kink.
pub fn finite_diff_check(
    net: &Network,
    inputs: &Matrix,
    targets: &Matrix,
    epsilon: f64,
) -> Result<FiniteDiffReport> {
    if !(epsilon > 0.0) {
        return Err(Error::Parameter(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    let analytic = backprop_gradients(net, inputs, targets)?;

    let mut probe = net.clone();
    probe.forward(inputs)?;
    let near_kink: Vec<Vec<bool>> = probe
        .layers()
        .iter()
        .map(|l| {
            let z = l.cached_pre().expect("forward just ran");
            (0..z.rows())
                .map(|r| {
                    l.activation.has_kink() && z.row(r).iter().any(|v| v.abs() < 10.0 * epsilon)
                })
                .collect()
        })
        .collect();
    let downstream_kink: Vec<bool> = (0..near_kink.len())
        .map(|k| {
            near_kink[k + 1..]
                .iter()
                .any(|units| units.iter().any(|&b| b))
        })
        .collect();

    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        compared: 0,
        excluded: 0,
    };
    let mut perturbed = net.clone();
    for (k, (grad_w, grad_b)) in analytic.iter().enumerate() {
        let (rows, cols) = grad_w.shape();
        for r in 0..rows {
            let excluded = downstream_kink[k] || near_kink[k][r];
            for c in 0..=cols {
                if excluded {
                    report.excluded += 1;
                    continue;
                }
                let (a, param) = if c < cols {
                    (grad_w.get(r, c), Param::Weight(r, c))
                } else {
                    (grad_b.get(r, 0), Param::Bias(r))
                };
                let numeric =
                    central_difference(&mut perturbed, inputs, targets, epsilon, k, param)?;
                let denom = a.abs().max(numeric.abs()).max(FINITE_DIFF_FLOOR);
                report.max_rel_error = report.max_rel_error.max((a - numeric).abs() / denom);
                report.compared += 1;
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Copy)]
enum Param {
    Weight(usize, usize),
    Bias(usize),
}

fn param_mut(layer: &mut DenseLayer, param: Param) -> &mut f64 {
    match param {
        Param::Weight(r, c) => {
            let cols = layer.weights.cols();
            &mut layer.weights.data_mut()[r * cols + c]
        }
        Param::Bias(r) => &mut layer.bias.data_mut()[r],
    }
}

fn central_difference(
    net: &mut Network,
    inputs: &Matrix,
    targets: &Matrix,
    epsilon: f64,
    layer: usize,
    param: Param,
) -> Result<f64> {
    let original = *param_mut(&mut net.layers_mut()[layer], param);
    *param_mut(&mut net.layers_mut()[layer], param) = original + epsilon;
    let plus = half_squared_error(net, inputs, targets)?;
    *param_mut(&mut net.layers_mut()[layer], param) = original - epsilon;
    let minus = half_squared_error(net, inputs, targets)?;
    *param_mut(&mut net.layers_mut()[layer], param) = original;
    Ok((plus - minus) / (2.0 * epsilon))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MirrorCheckReport {
    pub samples: usize,
    /// Cosine between the mean of `ΔB / η_B` and `Wᵀ`.
    pub cosine: f64,
    /// `‖mean ΔB / η_B‖_F / (σ² ‖W‖_F)`.
    pub norm_ratio: f64,
}

/// Monte-Carlo estimate of the expected mirror update on one linear,
/// bias-blocked layer with no decay.
///
/// In that regime the expectation is exactly `η_B σ² Wᵀ`, so the cosine
/// should approach 1 and the norm ratio should approach 1.
pub fn mirror_expectation_check(
    n_out: usize,
    n_in: usize,
    noise_std: f64,
    samples: usize,
    batch: usize,
    seed: u64,
) -> Result<MirrorCheckReport> {
    if batch < 2 || samples < batch {
        return Err(Error::Parameter(format!(
            "need batch >= 2 and samples >= batch, got {samples}/{batch}"
        )));
    }
    let mut rng = RngStream::substream(seed, 0);
    let weights = Matrix::gaussian(n_out, n_in, 0.0, 1.0 / (n_in as f64).sqrt(), &mut rng)?;
    // A nonzero bias shows that bias-blocking removes it.
    let bias = Matrix::gaussian(n_out, 1, 0.0, 1.0, &mut rng)?;
    let mut layer = DenseLayer::from_parts(
        weights.clone(),
        bias,
        Matrix::zeros(n_in, n_out),
        Activation::Linear,
    )?;
    let params = MirrorParams {
        eta_b: 1.0,
        lambda_wm: 0.0,
        noise_std,
        bias_blocking: true,
        ..MirrorParams::default()
    };
    let mut noise_rng = RngStream::substream(seed, 1);
    let batches = samples / batch;
    let mut sum = Matrix::zeros(n_in, n_out);
    for _ in 0..batches {
        let cov = mirror_layer(&mut layer, batch, &mut noise_rng, &params)?;
        sum.add_scaled(1.0, &cov)?;
    }
    let mean = sum.scale(1.0 / batches as f64);
    let wt = weights.transpose();
    let cosine = mean.inner(&wt)? / (mean.frobenius_norm() * wt.frobenius_norm());
    let norm_ratio = mean.frobenius_norm() / (noise_std * noise_std * wt.frobenius_norm());
    Ok(MirrorCheckReport {
        samples: batches * batch,
        cosine,
        norm_ratio,
    })
}
