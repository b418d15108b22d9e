//! Feedback-weight learning rules for layered networks: backprop, feedback
//! alignment, sign-symmetry, weight mirroring and Kolen-Pollack, with the
//! tensor and network code they run on, alignment diagnostics and a
//! training harness.

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod net;
pub mod rng;
pub mod rules;
pub mod tensor;

pub use error::{Error, Result};
pub use net::{Activation, DenseLayer, Network};
pub use rng::RngStream;
pub use rules::{FeedbackRule, KpParams, MirrorParams, MirrorSchedule, RuleKind, SsMagnitude};
pub use tensor::Matrix;
