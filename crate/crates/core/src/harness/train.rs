//! Minibatch training with any feedback rule.
//!
//! Random streams are split off the run seed: 0 dataset, 1 forward weights,
//! 2 feedback weights, 3 minibatch order, 4 mirror noise. The forward
//! network and the batch order are therefore the same for every rule.
//!
//! Each engaged-mode minibatch computes every `δ` with the current feedback
//! matrices, then updates each layer's `W` and `b`, then `B` (Kolen-Pollack
//! update, or backprop/sign-symmetry re-sync). Weight mirroring follows with
//! one mirror sweep per minibatch. Weight-mirror runs begin with
//! `mirror_warmup_epochs` pure mirror epochs in which `W` is frozen.

use crate::diagnostics::{delta_angles_per_layer, matrix_angles};
use crate::error::{Error, Result};
use crate::harness::config::{lr_at_epoch, TrainConfig};
use crate::harness::data::{load_dataset, Dataset, Split};
use crate::harness::metrics::{emit_metrics, MetricsRecord, SplitKind};
use crate::net::Network;
use crate::rng::RngStream;
use crate::rules::{init_feedback, mirror_schedule, FeedbackRule, MirrorParams, OptimizerState};
use crate::tensor::Matrix;

pub const STREAM_DATA: u64 = 0;
pub const STREAM_FORWARD_INIT: u64 = 1;
pub const STREAM_FEEDBACK_INIT: u64 = 2;
pub const STREAM_SHUFFLE: u64 = 3;
pub const STREAM_MIRROR: u64 = 4;

/// Loss and error rate of a network on one split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub error_rate: f64,
}

/// What one engaged minibatch step saw.
#[derive(Debug, Clone)]
pub struct StepTrace {
    /// Activations `[y_0, ..., y_L]` of the forward pass.
    pub activations: Vec<Matrix>,
    /// Error signals `[δ_1, ..., δ_L]` used for the updates.
    pub deltas: Vec<Matrix>,
    /// Mean squared error per output element on the batch, before the update.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<MetricsRecord>,
    pub network: Network,
}

impl TrainOutcome {
    /// The last record for `split`.
    pub fn final_record(&self, split: SplitKind) -> Option<&MetricsRecord> {
        self.records.iter().rev().find(|r| r.split == split)
    }
}

#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    data: Dataset,
    net: Network,
    opt: OptimizerState,
    shuffle_rng: RngStream,
    mirror_rng: RngStream,
    epoch: usize,
    forward_updates: usize,
    mirror_sweeps: usize,
    records: Vec<MetricsRecord>,
}

impl Trainer {
    /// Builds the dataset from the config and initializes the network.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut data_rng = RngStream::substream(config.seed, STREAM_DATA);
        let data = load_dataset(&config.dataset, &config.widths, &mut data_rng)?;
        Self::with_dataset(config, data)
    }

    /// Trains on a caller-supplied dataset.
    pub fn with_dataset(config: TrainConfig, data: Dataset) -> Result<Self> {
        config.validate()?;
        let n_in = config.widths[0];
        let n_out = *config.widths.last().expect("validated");
        for (name, s) in [("train", &data.train), ("test", &data.test)] {
            if s.inputs.rows() != n_in
                || s.targets.rows() != n_out
                || s.targets.cols() != s.inputs.cols()
            {
                return Err(Error::Config(format!(
                    "{name} split is {:?} -> {:?}, network expects {n_in} -> {n_out}",
                    s.inputs.shape(),
                    s.targets.shape()
                )));
            }
            if s.is_empty() {
                return Err(Error::Config(format!("{name} split is empty")));
            }
        }
        let seed = config.seed;
        let mut net = Network::new(
            &config.widths,
            config.activation,
            config.output_activation,
            &mut RngStream::substream(seed, STREAM_FORWARD_INIT),
        )?;
        init_feedback(
            &mut net,
            &config.rule,
            &mut RngStream::substream(seed, STREAM_FEEDBACK_INIT),
            config.feedback_init_scale,
        )?;
        let opt = OptimizerState::new(&net, config.eta_w, config.momentum, config.lambda);
        Ok(Self {
            data,
            net,
            opt,
            shuffle_rng: RngStream::substream(seed, STREAM_SHUFFLE),
            mirror_rng: RngStream::substream(seed, STREAM_MIRROR),
            epoch: 0,
            forward_updates: 0,
            mirror_sweeps: 0,
            records: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    /// Number of forward-weight updates applied so far.
    pub fn forward_updates(&self) -> usize {
        self.forward_updates
    }

    /// Number of mirror sweeps run so far.
    pub fn mirror_sweeps(&self) -> usize {
        self.mirror_sweeps
    }

    /// Next epoch index (0-based, counting mirror warmup epochs).
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn mirror_params(&self) -> Option<&MirrorParams> {
        match &self.config.rule {
            FeedbackRule::WeightMirror(p) => Some(p),
            _ => None,
        }
    }

    fn baseline(&self) -> Option<f64> {
        self.mirror_params().and_then(|p| p.baseline_beta)
    }

    fn mirror_batch(&self) -> usize {
        self.config
            .mirror_batch_size
            .unwrap_or(self.config.batch_size)
    }

    /// Draws this epoch's minibatch order: a fresh shuffle split into
    /// `batch_size` chunks (the last may be shorter).
    pub fn next_epoch_batches(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.data.train.len()).collect();
        self.shuffle_rng.shuffle(&mut order);
        order
            .chunks(self.config.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    fn batches_per_epoch(&self) -> usize {
        self.data.train.len().div_ceil(self.config.batch_size)
    }

    /// One engaged-mode step on the training examples `indices`.
    pub fn step(&mut self, indices: &[usize]) -> Result<StepTrace> {
        let batch = self.data.train.select(indices)?;
        self.step_on(&batch.inputs, &batch.targets)
    }

    /// One engaged-mode step on an explicit batch.
    pub fn step_on(&mut self, inputs: &Matrix, targets: &Matrix) -> Result<StepTrace> {
        let beta = self.baseline();
        let activations = match beta {
            Some(b) => self.net.forward_baseline(inputs, b)?,
            None => self.net.forward(inputs)?,
        };
        let delta_out = self.net.output_delta(targets)?;
        let err = crate::net::output_error(activations.last().expect("non-empty"), targets)?;
        let loss = err.frobenius_norm().powi(2) / err.data().len() as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch: self.epoch,
                message: format!("minibatch loss is {loss}"),
            });
        }
        let deltas = self.net.backward_deltas(&delta_out, false)?;

        let rule = self.config.rule;
        let (kp_eta, kp_lambda) = match rule {
            FeedbackRule::KolenPollack(p) => (
                p.eta_b.unwrap_or(self.opt.eta_w),
                p.lambda.unwrap_or(self.opt.lambda),
            ),
            _ => (0.0, 0.0),
        };
        for (k, layer) in self.net.layers_mut().iter_mut().enumerate() {
            let y_prev = match beta {
                Some(b) => activations[k].map(|v| v - b),
                None => activations[k].clone(),
            };
            self.opt.update_forward(k, layer, &deltas[k], &y_prev)?;
            if let FeedbackRule::KolenPollack(_) = rule {
                self.opt
                    .kp_update_feedback(k, layer, &y_prev, &deltas[k], kp_eta, kp_lambda)?;
            }
            rule.sync_after_update(layer);
        }
        self.forward_updates += 1;
        self.mirror_sweep()?;
        Ok(StepTrace {
            activations,
            deltas,
            loss,
        })
    }

    fn mirror_sweep(&mut self) -> Result<()> {
        if let Some(params) = self.mirror_params().copied() {
            let batch = self.mirror_batch();
            mirror_schedule(
                &mut self.net,
                params.schedule,
                batch,
                &mut self.mirror_rng,
                &params,
            )?;
            self.mirror_sweeps += 1;
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        for (i, l) in self.net.layers().iter().enumerate() {
            if !(l.weights.all_finite() && l.bias.all_finite() && l.feedback.all_finite()) {
                return Err(Error::Diverged {
                    epoch: self.epoch,
                    message: format!("non-finite parameters in layer {}", i + 1),
                });
            }
        }
        Ok(())
    }

    /// Runs one epoch (mirror warmup or engaged, depending on the epoch
    /// index), then evaluates and records both splits.
    pub fn run_epoch(&mut self) -> Result<&[MetricsRecord]> {
        let warmup = self.config.effective_mirror_warmup();
        let eta = if self.epoch < warmup {
            for _ in 0..self.batches_per_epoch() {
                self.mirror_sweep()?;
            }
            0.0
        } else {
            let eta = lr_at_epoch(
                &self.config.schedule,
                self.epoch - warmup,
                self.config.eta_w,
            );
            self.opt.eta_w = eta;
            for batch in self.next_epoch_batches() {
                self.step(&batch)?;
            }
            eta
        };
        self.check_finite()?;
        let start = self.records.len();
        for kind in [SplitKind::Train, SplitKind::Test] {
            let record = self.record(kind, eta)?;
            if !record.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: self.epoch,
                    message: format!("{kind} loss is {}", record.loss),
                });
            }
            self.records.push(record);
        }
        self.epoch += 1;
        Ok(&self.records[start..])
    }

    fn split(&self, kind: SplitKind) -> &Split {
        match kind {
            SplitKind::Train => &self.data.train,
            SplitKind::Test => &self.data.test,
        }
    }

    /// Loss and error rate on a split.
    pub fn evaluate(&self, kind: SplitKind) -> Result<Evaluation> {
        evaluate(
            &self.net,
            self.split(kind),
            self.data.classification,
            self.config.error_threshold,
            self.baseline(),
        )
    }

    fn record(&self, kind: SplitKind, eta: f64) -> Result<MetricsRecord> {
        let eval = self.evaluate(kind)?;
        let probe = self.split(kind).head(self.config.probe_size)?;
        Ok(MetricsRecord {
            epoch: self.epoch,
            split: kind,
            loss: eval.loss,
            error_rate: eval.error_rate,
            eta_w: eta,
            matrix_angles: matrix_angles(&self.net),
            delta_angles: delta_angles_per_layer(
                &self.net,
                &probe.inputs,
                &probe.targets,
                self.baseline(),
            )?,
        })
    }

    /// Runs all mirror warmup and engaged epochs.
    pub fn run(mut self) -> Result<TrainOutcome> {
        let total = self.config.effective_mirror_warmup() + self.config.epochs;
        while self.epoch < total {
            self.run_epoch()?;
        }
        Ok(TrainOutcome {
            records: self.records,
            network: self.net,
        })
    }
}

/// Mean squared error per output element and error rate of `net` on `split`.
///
/// Classification counts argmax mismatches; regression counts examples
/// whose per-output mean squared error exceeds `threshold`.
pub fn evaluate(
    net: &Network,
    split: &Split,
    classification: bool,
    threshold: f64,
    baseline: Option<f64>,
) -> Result<Evaluation> {
    let y = match baseline {
        Some(b) => net.predict_baseline(&split.inputs, b)?,
        None => net.predict(&split.inputs)?,
    };
    let err = crate::net::output_error(&y, &split.targets)?;
    let (rows, n) = err.shape();
    let loss = err.frobenius_norm().powi(2) / (rows * n) as f64;
    let mut wrong = 0usize;
    for j in 0..n {
        let bad = if classification {
            let col = y.col_vec(j);
            let pred = argmax(&col);
            let truth = split
                .labels
                .get(j)
                .copied()
                .unwrap_or_else(|| argmax(&split.targets.col_vec(j)));
            pred != truth
        } else {
            let mse = (0..rows).map(|i| err.get(i, j).powi(2)).sum::<f64>() / rows as f64;
            !(mse <= threshold)
        };
        wrong += bad as usize;
    }
    Ok(Evaluation {
        loss,
        error_rate: wrong as f64 / n as f64,
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] || v[best].is_nan() {
            best = i;
        }
    }
    best
}

/// Trains per `config` and writes the metrics CSV if `metrics_path` is set.
pub fn run_training(config: &TrainConfig) -> Result<TrainOutcome> {
    let outcome = Trainer::new(config.clone())?.run()?;
    if let Some(path) = &config.metrics_path {
        emit_metrics(&outcome.records, path, config.widths.len() - 1)?;
    }
    Ok(outcome)
}
