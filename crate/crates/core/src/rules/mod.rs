//! Credit-assignment rules: how each layer's feedback matrix `B` is
//! initialized and maintained while the forward weights learn.
//!
//! | rule | `B` at init | `B` during training |
//! |------|-------------|---------------------|
//! | backprop | `Wᵀ` | copied from `Wᵀ` after every update |
//! | feedback alignment | Gaussian | fixed |
//! | sign-symmetry | `sign(Wᵀ)·m` | re-synced after every update |
//! | weight mirror | Gaussian | noise-driven Hebbian updates in mirror mode |
//! | Kolen-Pollack | Gaussian | transposed forward update plus shared decay |

mod mirror;
mod optimizer;

use std::fmt;
use std::str::FromStr;

pub use mirror::{
    mirror_baseline_update, mirror_baseline_with_noise, mirror_layer, mirror_layer_with_noise,
    mirror_loss, mirror_loss_grad, mirror_schedule, regularized_mirror_loss,
    regularized_mirror_loss_grad, MirrorSweep,
};
pub use optimizer::OptimizerState;

use crate::error::{Error, Result};
use crate::net::{DenseLayer, Network};
use crate::rng::RngStream;
use crate::tensor::Matrix;

/// How sign-symmetry sets the magnitude of its feedback entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsMagnitude {
    /// Every entry is ±1 (or 0).
    Unit,
    /// Every entry has magnitude equal to the layer's mean `|W|`.
    MeanAbs,
}

impl FromStr for SsMagnitude {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "unit" => Ok(SsMagnitude::Unit),
            "mean_abs" => Ok(SsMagnitude::MeanAbs),
            other => Err(Error::Config(format!(
                "unknown sign-symmetry magnitude mode `{other}`"
            ))),
        }
    }
}

/// Order in which mirror mode visits the layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MirrorSchedule {
    /// One noisy layer at a time, ascending.
    Layerwise,
    /// All odd layers at once, then all even layers.
    Alternate,
}

impl FromStr for MirrorSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "layerwise" => Ok(MirrorSchedule::Layerwise),
            "alternate" => Ok(MirrorSchedule::Alternate),
            other => Err(Error::Config(format!("unknown mirror schedule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MirrorParams {
    pub eta_b: f64,
    pub lambda_wm: f64,
    pub noise_std: f64,
    /// Drop the forward bias while mirroring.
    pub bias_blocking: bool,
    /// Fire around a baseline rate instead of zero; requires non-negative
    /// activations and replaces the bias with the default bias `b⁻`.
    pub baseline_beta: Option<f64>,
    pub schedule: MirrorSchedule,
}

impl Default for MirrorParams {
    fn default() -> Self {
        Self {
            eta_b: 0.1,
            lambda_wm: 0.5,
            noise_std: 1.0,
            bias_blocking: false,
            baseline_beta: None,
            schedule: MirrorSchedule::Layerwise,
        }
    }
}

/// Kolen-Pollack feedback settings. `None` ties a value to the forward
/// optimizer (current learning rate, shared weight decay), which is what
/// the contraction argument needs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KpParams {
    pub eta_b: Option<f64>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Backprop,
    FeedbackAlignment,
    SignSymmetry,
    WeightMirror,
    KolenPollack,
}

impl RuleKind {
    pub const ALL: [RuleKind; 5] = [
        RuleKind::Backprop,
        RuleKind::FeedbackAlignment,
        RuleKind::SignSymmetry,
        RuleKind::WeightMirror,
        RuleKind::KolenPollack,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            RuleKind::Backprop => "bp",
            RuleKind::FeedbackAlignment => "fa",
            RuleKind::SignSymmetry => "ss",
            RuleKind::WeightMirror => "wm",
            RuleKind::KolenPollack => "kp",
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bp" | "backprop" => Ok(RuleKind::Backprop),
            "fa" | "feedback_alignment" => Ok(RuleKind::FeedbackAlignment),
            "ss" | "sign_symmetry" => Ok(RuleKind::SignSymmetry),
            "wm" | "weight_mirror" => Ok(RuleKind::WeightMirror),
            "kp" | "kolen_pollack" => Ok(RuleKind::KolenPollack),
            other => Err(Error::Config(format!(
                "unknown rule `{other}` (expected bp|fa|ss|wm|kp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeedbackRule {
    Backprop,
    FeedbackAlignment,
    SignSymmetry { magnitude: SsMagnitude },
    WeightMirror(MirrorParams),
    KolenPollack(KpParams),
}

impl FeedbackRule {
    /// The rule with its default parameters.
    pub fn with_defaults(kind: RuleKind) -> Self {
        match kind {
            RuleKind::Backprop => FeedbackRule::Backprop,
            RuleKind::FeedbackAlignment => FeedbackRule::FeedbackAlignment,
            RuleKind::SignSymmetry => FeedbackRule::SignSymmetry {
                magnitude: SsMagnitude::MeanAbs,
            },
            RuleKind::WeightMirror => FeedbackRule::WeightMirror(MirrorParams::default()),
            RuleKind::KolenPollack => FeedbackRule::KolenPollack(KpParams::default()),
        }
    }

    pub fn kind(&self) -> RuleKind {
        match self {
            FeedbackRule::Backprop => RuleKind::Backprop,
            FeedbackRule::FeedbackAlignment => RuleKind::FeedbackAlignment,
            FeedbackRule::SignSymmetry { .. } => RuleKind::SignSymmetry,
            FeedbackRule::WeightMirror(_) => RuleKind::WeightMirror,
            FeedbackRule::KolenPollack(_) => RuleKind::KolenPollack,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FeedbackRule::WeightMirror(p) => {
                if !(p.eta_b > 0.0) {
                    return Err(Error::Config(format!(
                        "mirror eta_B must be > 0, got {}",
                        p.eta_b
                    )));
                }
                if !(0.0..1.0).contains(&p.lambda_wm) {
                    return Err(Error::Config(format!(
                        "mirror lambda_WM must be in [0, 1), got {}",
                        p.lambda_wm
                    )));
                }
                if !(p.noise_std > 0.0) || !p.noise_std.is_finite() {
                    return Err(Error::Config(format!(
                        "mirror noise std must be > 0, got {}",
                        p.noise_std
                    )));
                }
                if let Some(beta) = p.baseline_beta {
                    if !beta.is_finite() {
                        return Err(Error::Config(format!(
                            "baseline must be finite, got {beta}"
                        )));
                    }
                }
            }
            FeedbackRule::KolenPollack(p) => {
                if let Some(eta) = p.eta_b {
                    if !(eta > 0.0) {
                        return Err(Error::Config(format!("KP eta_B must be > 0, got {eta}")));
                    }
                }
                if let Some(l) = p.lambda {
                    if !(l > 0.0 && l < 1.0) {
                        return Err(Error::Config(format!(
                            "KP lambda must be in (0, 1), got {l}"
                        )));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Restores the rule's invariant on `B` after the forward weights moved:
    /// backprop copies `Wᵀ`, sign-symmetry re-syncs signs, the rest do nothing.
    pub fn sync_after_update(&self, layer: &mut DenseLayer) {
        match self {
            FeedbackRule::Backprop => layer.feedback = layer.weights.transpose(),
            FeedbackRule::SignSymmetry { magnitude } => sign_symmetry_sync(layer, *magnitude),
            _ => {}
        }
    }
}

/// Sets every layer's `B` for the start of training.
///
/// Random rules draw `B` from `N(0, scale²)`; with `scale = None` each layer
/// uses `1/√n_out`, the fan-in of the feedback path.
pub fn init_feedback(
    net: &mut Network,
    rule: &FeedbackRule,
    rng: &mut RngStream,
    scale: Option<f64>,
) -> Result<()> {
    for layer in net.layers_mut() {
        match rule {
            FeedbackRule::Backprop => layer.feedback = layer.weights.transpose(),
            FeedbackRule::SignSymmetry { magnitude } => sign_symmetry_sync(layer, *magnitude),
            FeedbackRule::FeedbackAlignment
            | FeedbackRule::WeightMirror(_)
            | FeedbackRule::KolenPollack(_) => {
                let std = scale.unwrap_or(1.0 / (layer.n_out() as f64).sqrt());
                layer.feedback = Matrix::gaussian(layer.n_in(), layer.n_out(), 0.0, std, rng)?;
            }
        }
    }
    Ok(())
}

/// `B_ij = sign(Wᵀ_ij) · m` with `sign(0) = 0`.
pub fn sign_symmetry_sync(layer: &mut DenseLayer, magnitude: SsMagnitude) {
    let m = match magnitude {
        SsMagnitude::Unit => 1.0,
        SsMagnitude::MeanAbs => layer.weights.mean_abs(),
    };
    layer.feedback = layer.weights.transpose().map(|w| {
        if w > 0.0 {
            m
        } else if w < 0.0 {
            -m
        } else {
            0.0
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::matrix_angle;
    use crate::net::Activation;

    fn layer_with(w: Matrix) -> DenseLayer {
        let fb = w.transpose();
        let b = Matrix::zeros(w.rows(), 1);
        DenseLayer::from_parts(w, b, fb, Activation::Linear).unwrap()
    }

    #[test]
    fn sign_symmetry_examples() {
        // Wᵀ = [[3, -2]] means W = [[3], [-2]].
        let w = Matrix::column(&[3.0, -2.0]).unwrap();
        let mut layer = layer_with(w.clone());
        sign_symmetry_sync(&mut layer, SsMagnitude::Unit);
        assert_eq!(layer.feedback, Matrix::from_rows(&[[1.0, -1.0]]).unwrap());

        sign_symmetry_sync(&mut layer, SsMagnitude::MeanAbs);
        assert_eq!(layer.feedback, Matrix::from_rows(&[[2.5, -2.5]]).unwrap());

        let mut zero = layer_with(Matrix::column(&[0.0, 1.0]).unwrap());
        sign_symmetry_sync(&mut zero, SsMagnitude::Unit);
        assert_eq!(zero.feedback, Matrix::from_rows(&[[0.0, 1.0]]).unwrap());
    }

    #[test]
    fn init_backprop_gives_zero_angle() {
        let mut rng = RngStream::new(5);
        let mut net =
            Network::new(&[6, 5, 4], Activation::Tanh, Activation::Linear, &mut rng).unwrap();
        init_feedback(&mut net, &FeedbackRule::Backprop, &mut rng, None).unwrap();
        for l in net.layers() {
            assert_eq!(matrix_angle(&l.weights, &l.feedback).unwrap(), 0.0);
        }
    }

    #[test]
    fn init_random_rules_are_near_orthogonal() {
        // cos(angle) between independent Gaussian 600-vectors has std
        // 1/sqrt(600), about 2.3 degrees, so 10 degrees is > 4 sigma.
        for seed in 0..20 {
            let mut rng = RngStream::new(seed);
            let mut net =
                Network::new(&[20, 30], Activation::Linear, Activation::Linear, &mut rng).unwrap();
            init_feedback(
                &mut net,
                &FeedbackRule::FeedbackAlignment,
                &mut rng,
                Some(0.3),
            )
            .unwrap();
            let l = &net.layers()[0];
            let angle = matrix_angle(&l.weights, &l.feedback).unwrap();
            assert!((angle - 90.0).abs() < 10.0, "seed {seed}: {angle}");
        }
    }

    #[test]
    fn init_sign_symmetry_unit_entries() {
        let mut rng = RngStream::new(1);
        let mut net =
            Network::new(&[7, 4, 3], Activation::Relu, Activation::Linear, &mut rng).unwrap();
        let rule = FeedbackRule::SignSymmetry {
            magnitude: SsMagnitude::Unit,
        };
        init_feedback(&mut net, &rule, &mut rng, None).unwrap();
        for l in net.layers() {
            assert!(l
                .feedback
                .data()
                .iter()
                .all(|&v| v == 1.0 || v == -1.0 || v == 0.0));
        }
    }

    #[test]
    fn parse_rule_kinds() {
        for k in RuleKind::ALL {
            assert_eq!(k.short_name().parse::<RuleKind>().unwrap(), k);
            assert_eq!(FeedbackRule::with_defaults(k).kind(), k);
        }
        assert!("xx".parse::<RuleKind>().is_err());
    }

    #[test]
    fn validation() {
        assert!(FeedbackRule::with_defaults(RuleKind::WeightMirror)
            .validate()
            .is_ok());
        let bad = FeedbackRule::WeightMirror(MirrorParams {
            lambda_wm: 1.0,
            ..MirrorParams::default()
        });
        assert!(bad.validate().is_err());
        let bad = FeedbackRule::KolenPollack(KpParams {
            eta_b: None,
            lambda: Some(0.0),
        });
        assert!(bad.validate().is_err());
    }
}
