//! Training configuration and its flat `key = value` file format.
//!
//! ```text
//! # comments and blank lines are ignored
//! rule = kp
//! widths = 64,128,64,10
//! activation = tanh
//! eta_w = 0.05
//! ```
//!
//! Keys are the [`TrainConfig`] field names, flattened; rule-specific
//! settings carry a `wm_`, `kp_` or `ss_` prefix. Unknown or repeated keys
//! are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::net::Activation;
use crate::rules::{FeedbackRule, KpParams, MirrorParams, MirrorSchedule, RuleKind, SsMagnitude};

pub const KNOWN_KEYS: &[&str] = &[
    "rule",
    "widths",
    "activation",
    "output_activation",
    "eta_w",
    "momentum",
    "lambda",
    "batch_size",
    "epochs",
    "warmup_epochs",
    "decay_epochs",
    "decay_factor",
    "mirror_warmup_epochs",
    "mirror_batch_size",
    "feedback_init_scale",
    "seed",
    "metrics_path",
    "probe_size",
    "error_threshold",
    "ss_magnitude",
    "wm_eta_b",
    "wm_lambda",
    "wm_noise_std",
    "wm_bias_blocking",
    "wm_baseline_beta",
    "wm_schedule",
    "kp_eta_b",
    "kp_lambda",
    "dataset",
    "train_size",
    "test_size",
    "normalize",
    "input_std",
    "teacher_widths",
    "teacher_activation",
    "blob_separation",
    "blob_std",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
];

/// Parsed `key = value` pairs, validated against [`KNOWN_KEYS`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap(BTreeMap<String, String>);

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    i + 1
                ))
            })?;
            let key = canonical_key(key.trim());
            check_key(key)?;
            if map
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(Error::Config(format!(
                    "line {}: key `{key}` given twice",
                    i + 1
                )));
            }
        }
        Ok(Self(map))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::parse(&text)
    }

    /// Sets or replaces a value (command-line overrides).
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        let key = canonical_key(key);
        check_key(key)?;
        self.0.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("`{key} = {v}`: {e}")))
            })
            .transpose()
    }

    fn list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.get(key)
            .map(|v| {
                if v.is_empty() {
                    return Ok(Vec::new());
                }
                v.split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|e| Error::Config(format!("`{key} = {v}`: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }
}

/// `eta_W` is accepted as a spelling of `eta_w`.
fn canonical_key(key: &str) -> &str {
    if key == "eta_W" {
        "eta_w"
    } else {
        key
    }
}

fn check_key(key: &str) -> Result<()> {
    if KNOWN_KEYS.contains(&key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown key `{key}`")))
    }
}

/// Learning-rate schedule: linear warmup, then step decay at milestones.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub warmup_epochs: usize,
    /// Epoch indices (0-based) from which one more decay factor applies.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            warmup_epochs: 6,
            decay_epochs: vec![32, 62, 82],
            decay_factor: 0.1,
        }
    }
}

impl LrSchedule {
    pub fn constant() -> Self {
        Self {
            warmup_epochs: 0,
            decay_epochs: Vec::new(),
            decay_factor: 0.1,
        }
    }
}

/// Learning rate for 0-based `epoch`: `peak·(epoch+1)/warmup` during warmup,
/// then `peak` times one `decay_factor` per milestone already reached
/// (`epoch >= milestone`).
pub fn lr_at_epoch(schedule: &LrSchedule, epoch: usize, peak: f64) -> f64 {
    let ramp = if epoch < schedule.warmup_epochs {
        (epoch + 1) as f64 / schedule.warmup_epochs as f64
    } else {
        1.0
    };
    let decays = schedule
        .decay_epochs
        .iter()
        .filter(|&&m| epoch >= m)
        .count();
    peak * ramp * schedule.decay_factor.powi(decays as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Gaussian inputs labelled by a fixed random teacher network.
    Teacher {
        input_std: f64,
        /// Defaults to the student widths.
        teacher_widths: Option<Vec<usize>>,
        teacher_activation: Activation,
    },
    /// Class-conditional Gaussian clusters with one-hot targets.
    Blobs { separation: f64, cluster_std: f64 },
    /// IDX image/label files. Without test files the training file is split.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub source: DataSource,
    /// Number of training examples (for IDX: upper limit, 0 = all).
    pub train_size: usize,
    pub test_size: usize,
    /// Standardize each input dimension with training-set statistics.
    pub normalize: bool,
}

impl DatasetSpec {
    pub fn is_classification(&self) -> bool {
        !matches!(self.source, DataSource::Teacher { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub rule: FeedbackRule,
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub output_activation: Activation,
    pub eta_w: f64,
    pub momentum: f64,
    pub lambda: f64,
    pub batch_size: usize,
    /// Engaged-mode epochs, not counting mirror warmup.
    pub epochs: usize,
    pub schedule: LrSchedule,
    /// Pure mirror-mode epochs before engaged training (weight mirror only).
    pub mirror_warmup_epochs: usize,
    /// Noise batch size per mirrored layer; `None` uses `batch_size`.
    pub mirror_batch_size: Option<usize>,
    /// Std of random feedback initialization; `None` uses `1/√n_out`.
    pub feedback_init_scale: Option<f64>,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub metrics_path: Option<PathBuf>,
    /// Examples per split used to measure δ angles.
    pub probe_size: usize,
    /// Regression only: an example counts as an error when its per-output
    /// mean squared error exceeds this.
    pub error_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rule: FeedbackRule::Backprop,
            widths: vec![64, 128, 64, 10],
            activation: Activation::Tanh,
            output_activation: Activation::Linear,
            eta_w: 0.01,
            momentum: 0.9,
            lambda: 1e-4,
            batch_size: 32,
            epochs: 90,
            schedule: LrSchedule::default(),
            mirror_warmup_epochs: 2,
            mirror_batch_size: None,
            feedback_init_scale: None,
            seed: 0,
            dataset: DatasetSpec {
                source: DataSource::Blobs {
                    separation: 10.0,
                    cluster_std: 1.0,
                },
                train_size: 2000,
                test_size: 1000,
                normalize: true,
            },
            metrics_path: None,
            probe_size: 256,
            error_threshold: 0.01,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key} = {v}`: expected a boolean"))),
    }
}

fn optional_f64(map: &ConfigMap, key: &str) -> Result<Option<Option<f64>>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) if v.eq_ignore_ascii_case("none") || v.eq_ignore_ascii_case("auto") => {
            Ok(Some(None))
        }
        Some(_) => Ok(Some(map.parsed::<f64>(key)?)),
    }
}

impl TrainConfig {
    /// Defaults overridden by whatever keys `map` sets, then validated.
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let mut c = Self::default();

        let kind = map
            .parsed::<RuleKind>("rule")?
            .unwrap_or(RuleKind::Backprop);
        c.rule = match kind {
            RuleKind::SignSymmetry => FeedbackRule::SignSymmetry {
                magnitude: map
                    .parsed::<SsMagnitude>("ss_magnitude")?
                    .unwrap_or(SsMagnitude::MeanAbs),
            },
            RuleKind::WeightMirror => {
                let d = MirrorParams::default();
                FeedbackRule::WeightMirror(MirrorParams {
                    eta_b: map.parsed("wm_eta_b")?.unwrap_or(d.eta_b),
                    lambda_wm: map.parsed("wm_lambda")?.unwrap_or(d.lambda_wm),
                    noise_std: map.parsed("wm_noise_std")?.unwrap_or(d.noise_std),
                    bias_blocking: map
                        .get("wm_bias_blocking")
                        .map(|v| parse_bool("wm_bias_blocking", v))
                        .transpose()?
                        .unwrap_or(d.bias_blocking),
                    baseline_beta: optional_f64(map, "wm_baseline_beta")?
                        .unwrap_or(d.baseline_beta),
                    schedule: map
                        .parsed::<MirrorSchedule>("wm_schedule")?
                        .unwrap_or(d.schedule),
                })
            }
            RuleKind::KolenPollack => FeedbackRule::KolenPollack(KpParams {
                eta_b: optional_f64(map, "kp_eta_b")?.flatten(),
                lambda: optional_f64(map, "kp_lambda")?.flatten(),
            }),
            other => FeedbackRule::with_defaults(other),
        };

        if let Some(w) = map.list("widths")? {
            c.widths = w;
        }
        if let Some(a) = map.parsed("activation")? {
            c.activation = a;
        }
        if let Some(a) = map.parsed("output_activation")? {
            c.output_activation = a;
        }
        if let Some(v) = map.parsed("eta_w")? {
            c.eta_w = v;
        }
        if let Some(v) = map.parsed("momentum")? {
            c.momentum = v;
        }
        if let Some(v) = map.parsed("lambda")? {
            c.lambda = v;
        }
        if let Some(v) = map.parsed("batch_size")? {
            c.batch_size = v;
        }
        if let Some(v) = map.parsed("epochs")? {
            c.epochs = v;
        }
        if let Some(v) = map.parsed("warmup_epochs")? {
            c.schedule.warmup_epochs = v;
        }
        if let Some(v) = map.list("decay_epochs")? {
            c.schedule.decay_epochs = v;
        }
        if let Some(v) = map.parsed("decay_factor")? {
            c.schedule.decay_factor = v;
        }
        if let Some(v) = map.parsed("mirror_warmup_epochs")? {
            c.mirror_warmup_epochs = v;
        }
        if let Some(v) = map.get("mirror_batch_size") {
            c.mirror_batch_size =
                if v.eq_ignore_ascii_case("auto") || v.eq_ignore_ascii_case("none") {
                    None
                } else {
                    map.parsed("mirror_batch_size")?
                };
        }
        if let Some(v) = optional_f64(map, "feedback_init_scale")? {
            c.feedback_init_scale = v;
        }
        if let Some(v) = map.parsed("seed")? {
            c.seed = v;
        }
        if let Some(v) = map.get("metrics_path") {
            c.metrics_path = (!v.is_empty()).then(|| PathBuf::from(v));
        }
        if let Some(v) = map.parsed("probe_size")? {
            c.probe_size = v;
        }
        if let Some(v) = map.parsed("error_threshold")? {
            c.error_threshold = v;
        }

        c.dataset = dataset_from_map(map, &c.dataset)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.rule.validate()?;
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "widths must list at least two positive sizes, got {:?}",
                self.widths
            )));
        }
        let s = &self.schedule;
        if !(s.decay_factor > 0.0 && s.decay_factor < 1.0) {
            return Err(Error::Config(format!(
                "decay_factor must be in (0, 1), got {}",
                s.decay_factor
            )));
        }
        if !(self.eta_w >= 0.0) || !self.eta_w.is_finite() {
            return Err(Error::Config(format!(
                "eta_w must be finite and >= 0, got {}",
                self.eta_w
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must be in [0, 1), got {}",
                self.lambda
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let FeedbackRule::WeightMirror(p) = &self.rule {
            if self.mirror_batch_size.unwrap_or(self.batch_size) < 2 {
                return Err(Error::Config(
                    "weight mirroring needs a mirror batch size of at least 2".into(),
                ));
            }
            if let Some(beta) = p.baseline_beta {
                if !self.activation.is_non_negative() {
                    return Err(Error::Config(format!(
                        "baseline modulation needs a non-negative hidden activation, got {}",
                        self.activation
                    )));
                }
                self.activation.default_bias(beta)?;
            }
        }
        if let Some(s) = self.feedback_init_scale {
            if !(s > 0.0) {
                return Err(Error::Config(format!(
                    "feedback_init_scale must be > 0, got {s}"
                )));
            }
        }
        if self.probe_size == 0 {
            return Err(Error::Config("probe_size must be positive".into()));
        }
        let d = &self.dataset;
        match &d.source {
            DataSource::Teacher {
                teacher_widths: Some(tw),
                input_std,
                ..
            } => {
                if tw.len() < 2 || tw[0] != self.widths[0] || tw.last() != self.widths.last() {
                    return Err(Error::Config(format!(
                        "teacher widths {tw:?} must share input and output sizes with {:?}",
                        self.widths
                    )));
                }
                if !(*input_std > 0.0) {
                    return Err(Error::Config("input_std must be > 0".into()));
                }
            }
            DataSource::Blobs {
                separation,
                cluster_std,
            } => {
                if !(*separation >= 0.0) || !(*cluster_std > 0.0) {
                    return Err(Error::Config(
                        "blob separation must be >= 0 and blob_std > 0".into(),
                    ));
                }
            }
            _ => {}
        }
        if !matches!(d.source, DataSource::Idx { .. }) && (d.train_size == 0 || d.test_size == 0) {
            return Err(Error::Config(
                "synthetic datasets need positive train_size and test_size".into(),
            ));
        }
        Ok(())
    }

    /// Mirror warmup epochs that actually run (zero unless the rule mirrors).
    pub fn effective_mirror_warmup(&self) -> usize {
        match self.rule {
            FeedbackRule::WeightMirror(_) => self.mirror_warmup_epochs,
            _ => 0,
        }
    }
}

fn dataset_from_map(map: &ConfigMap, defaults: &DatasetSpec) -> Result<DatasetSpec> {
    let kind = map.get("dataset").unwrap_or(match defaults.source {
        DataSource::Teacher { .. } => "synthetic_teacher",
        DataSource::Blobs { .. } => "synthetic_blobs",
        DataSource::Idx { .. } => "idx_files",
    });
    let source = match kind {
        "synthetic_teacher" => DataSource::Teacher {
            input_std: map.parsed("input_std")?.unwrap_or(1.0),
            teacher_widths: map.list("teacher_widths")?,
            teacher_activation: map
                .parsed("teacher_activation")?
                .unwrap_or(Activation::Tanh),
        },
        "synthetic_blobs" => DataSource::Blobs {
            separation: map.parsed("blob_separation")?.unwrap_or(10.0),
            cluster_std: map.parsed("blob_std")?.unwrap_or(1.0),
        },
        "idx_files" => {
            let need = |k: &str| {
                map.get(k)
                    .map(PathBuf::from)
                    .ok_or_else(|| Error::Config(format!("dataset = idx_files needs `{k}`")))
            };
            DataSource::Idx {
                train_images: need("train_images")?,
                train_labels: need("train_labels")?,
                test_images: map.get("test_images").map(PathBuf::from),
                test_labels: map.get("test_labels").map(PathBuf::from),
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown dataset `{other}` (expected synthetic_teacher|synthetic_blobs|idx_files)"
            )))
        }
    };
    let idx = matches!(source, DataSource::Idx { .. });
    Ok(DatasetSpec {
        source,
        train_size: map
            .parsed("train_size")?
            .unwrap_or(if idx { 0 } else { defaults.train_size }),
        test_size: map
            .parsed("test_size")?
            .unwrap_or(if idx { 0 } else { defaults.test_size }),
        normalize: map
            .get("normalize")
            .map(|v| parse_bool("normalize", v))
            .transpose()?
            .unwrap_or(defaults.normalize),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_examples() {
        let s = LrSchedule {
            warmup_epochs: 6,
            decay_epochs: vec![32, 62, 82],
            decay_factor: 0.1,
        };
        assert!((lr_at_epoch(&s, 2, 0.6) - 0.3).abs() < 1e-15);
        assert!((lr_at_epoch(&s, 33, 0.6) - 0.06).abs() < 1e-15);
        assert!((lr_at_epoch(&s, 83, 0.6) - 0.0006).abs() < 1e-15);
        assert_eq!(lr_at_epoch(&s, 10, 0.6), 0.6);
        assert_eq!(lr_at_epoch(&LrSchedule::constant(), 0, 0.2), 0.2);
    }

    #[test]
    fn parse_and_build() {
        let text = "
            # a comment
            rule = wm
            widths = 8, 16, 4
            activation = relu
            wm_eta_b = 0.05
            wm_schedule = alternate
            dataset = synthetic_teacher
            train_size = 100   # inline comment
            test_size = 50
            seed = 17
            eta_W = 0.02
        ";
        let c = TrainConfig::from_map(&ConfigMap::parse(text).unwrap()).unwrap();
        assert_eq!(c.widths, vec![8, 16, 4]);
        assert_eq!(c.seed, 17);
        assert_eq!(c.eta_w, 0.02);
        assert_eq!(c.activation, Activation::Relu);
        match c.rule {
            FeedbackRule::WeightMirror(p) => {
                assert_eq!(p.eta_b, 0.05);
                assert_eq!(p.lambda_wm, 0.5);
                assert_eq!(p.schedule, MirrorSchedule::Alternate);
            }
            other => panic!("{other:?}"),
        }
        assert!(!c.dataset.is_classification());
    }

    #[test]
    fn unknown_and_duplicate_keys_fail() {
        assert!(ConfigMap::parse("learning_rate = 0.1").is_err());
        assert!(ConfigMap::parse("seed = 1\nseed = 2").is_err());
        assert!(ConfigMap::parse("seed 1").is_err());
        let mut m = ConfigMap::default();
        assert!(m.set("bogus", "1").is_err());
    }

    #[test]
    fn invariant_violations_fail() {
        let bad = [
            "decay_factor = 1.0",
            "rule = wm\nbatch_size = 1",
            "widths = 5",
            "rule = kp\nkp_lambda = 1.5",
        ];
        for text in bad {
            let map = ConfigMap::parse(text).unwrap();
            assert!(TrainConfig::from_map(&map).is_err(), "{text}");
        }
    }

    #[test]
    fn idx_dataset_requires_paths() {
        let map = ConfigMap::parse("dataset = idx_files\ntrain_images = a").unwrap();
        assert!(TrainConfig::from_map(&map).is_err());
    }
}
