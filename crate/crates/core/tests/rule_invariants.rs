//! Properties that must hold for every feedback rule inside the harness.

use mirrorkp_core::diagnostics::{matrix_angles, transpose_gaps};
use mirrorkp_core::harness::{DataSource, DatasetSpec, LrSchedule, TrainConfig, Trainer};
use mirrorkp_core::{Activation, FeedbackRule, KpParams, Matrix, RuleKind, SsMagnitude};

fn config(rule: FeedbackRule) -> TrainConfig {
    TrainConfig {
        rule,
        widths: vec![6, 10, 8, 4],
        activation: Activation::Tanh,
        eta_w: 0.05,
        batch_size: 16,
        epochs: 2,
        schedule: LrSchedule::constant(),
        mirror_warmup_epochs: 1,
        dataset: DatasetSpec {
            source: DataSource::Blobs {
                separation: 6.0,
                cluster_std: 1.0,
            },
            train_size: 96,
            test_size: 32,
            normalize: true,
        },
        probe_size: 32,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn swapping_rules_keeps_data_and_first_forward_pass() {
    let mut reference = None;
    for kind in RuleKind::ALL {
        let mut t = Trainer::new(config(FeedbackRule::with_defaults(kind))).unwrap();
        let batches = t.next_epoch_batches();
        let data = t.dataset().clone();
        let weights: Vec<Matrix> = t
            .network()
            .layers()
            .iter()
            .map(|l| l.weights.clone())
            .collect();
        let trace = t.step(&batches[0]).unwrap();
        let snapshot = (data, weights, batches, trace.activations);
        match &reference {
            None => reference = Some(snapshot),
            Some(r) => assert!(r == &snapshot, "{kind} differs"),
        }
    }
}

#[test]
fn backprop_keeps_exact_transpose() {
    let out = Trainer::new(config(FeedbackRule::Backprop))
        .unwrap()
        .run()
        .unwrap();
    assert!(transpose_gaps(&out.network).iter().all(|&g| g == 0.0));
}

#[test]
fn feedback_alignment_never_changes_b() {
    let mut t = Trainer::new(config(FeedbackRule::FeedbackAlignment)).unwrap();
    let b0: Vec<Matrix> = t
        .network()
        .layers()
        .iter()
        .map(|l| l.feedback.clone())
        .collect();
    t.run_epoch().unwrap();
    t.run_epoch().unwrap();
    assert!(t.forward_updates() > 0);
    for (l, b) in t.network().layers().iter().zip(&b0) {
        assert_eq!(&l.feedback, b);
    }
}

#[test]
fn sign_symmetry_tracks_signs() {
    let rule = FeedbackRule::SignSymmetry {
        magnitude: SsMagnitude::Unit,
    };
    let out = Trainer::new(config(rule)).unwrap().run().unwrap();
    for l in out.network.layers() {
        let wt = l.weights.transpose();
        for (w, b) in wt.data().iter().zip(l.feedback.data()) {
            assert_eq!(
                *b,
                if *w > 0.0 {
                    1.0
                } else if *w < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            );
        }
    }
}

#[test]
fn kolen_pollack_gap_shrinks_geometrically_in_harness() {
    let lambda = 0.05;
    let mut cfg = config(FeedbackRule::KolenPollack(KpParams::default()));
    cfg.momentum = 0.0;
    cfg.lambda = lambda;
    let mut t = Trainer::new(cfg).unwrap();
    let batches = t.next_epoch_batches();
    let mut prev = transpose_gaps(t.network());
    for b in &batches {
        t.step(b).unwrap();
        let now = transpose_gaps(t.network());
        for (p, n) in prev.iter().zip(&now) {
            assert!((n / p - (1.0 - lambda)).abs() < 1e-9, "{n} / {p}");
        }
        prev = now;
    }
}

#[test]
fn mirror_warmup_leaves_forward_weights_bit_identical() {
    let mut t = Trainer::new(config(FeedbackRule::with_defaults(RuleKind::WeightMirror))).unwrap();
    let before: Vec<(Matrix, Matrix)> = t
        .network()
        .layers()
        .iter()
        .map(|l| (l.weights.clone(), l.bias.clone()))
        .collect();
    t.run_epoch().unwrap();
    assert_eq!(t.forward_updates(), 0);
    assert!(t.mirror_sweeps() > 0);
    for (l, (w, b)) in t.network().layers().iter().zip(&before) {
        assert_eq!(&l.weights, w);
        assert_eq!(&l.bias, b);
    }
    let angles = matrix_angles(t.network());
    assert!(angles[1].unwrap() < 60.0, "{angles:?}");
}

#[test]
fn runs_are_deterministic_for_every_rule() {
    for kind in RuleKind::ALL {
        let a = Trainer::new(config(FeedbackRule::with_defaults(kind)))
            .unwrap()
            .run()
            .unwrap();
        let b = Trainer::new(config(FeedbackRule::with_defaults(kind)))
            .unwrap()
            .run()
            .unwrap();
        assert_eq!(a.records, b.records, "{kind}");
    }
}
