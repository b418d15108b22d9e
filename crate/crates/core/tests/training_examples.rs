use mirrorkp_core::diagnostics::matrix_angles;
use mirrorkp_core::harness::data::teacher_split;
use mirrorkp_core::harness::{
    make_synthetic, parse_metrics, run_training, DataSource, DatasetSpec, LrSchedule, SplitKind,
    TrainConfig, Trainer,
};
use mirrorkp_core::{
    Activation, DenseLayer, FeedbackRule, KpParams, Matrix, MirrorParams, Network, RngStream,
};

fn teacher(widths: Option<Vec<usize>>, act: Activation, train: usize, test: usize) -> DatasetSpec {
    DatasetSpec {
        source: DataSource::Teacher {
            input_std: 1.0,
            teacher_widths: widths,
            teacher_activation: act,
        },
        train_size: train,
        test_size: test,
        normalize: false,
    }
}

#[test]
fn backprop_fits_linear_teacher() {
    let config = TrainConfig {
        rule: FeedbackRule::Backprop,
        widths: vec![8, 4],
        activation: Activation::Linear,
        eta_w: 0.05,
        momentum: 0.9,
        lambda: 0.0,
        batch_size: 16,
        epochs: 200,
        schedule: LrSchedule::constant(),
        dataset: teacher(None, Activation::Linear, 256, 64),
        seed: 5,
        ..TrainConfig::default()
    };
    let out = run_training(&config).unwrap();
    let train = out.final_record(SplitKind::Train).unwrap();
    assert!(train.loss < 1e-4, "train MSE {}", train.loss);
}

#[test]
fn kolen_pollack_aligns_within_fifty_epochs() {
    let config = TrainConfig {
        rule: FeedbackRule::KolenPollack(KpParams::default()),
        widths: vec![10, 16, 12, 4],
        activation: Activation::Tanh,
        eta_w: 0.1,
        momentum: 0.0,
        lambda: 1e-2,
        batch_size: 32,
        epochs: 50,
        schedule: LrSchedule::constant(),
        dataset: teacher(None, Activation::Tanh, 1024, 64),
        seed: 2,
        ..TrainConfig::default()
    };
    let out = run_training(&config).unwrap();
    let at_50 = out.records.iter().find(|r| r.epoch == 49).unwrap();
    for a in &at_50.matrix_angles {
        assert!(a.unwrap() < 1.0, "{:?}", at_50.matrix_angles);
    }
    assert!(out.records[0].matrix_angles[0].unwrap() > 1.0);
}

#[test]
fn mirror_warmup_aligns_before_engaged_training() {
    let config = TrainConfig {
        rule: FeedbackRule::WeightMirror(MirrorParams {
            eta_b: 0.02,
            lambda_wm: 0.1,
            ..MirrorParams::default()
        }),
        widths: vec![16, 32, 32, 8],
        activation: Activation::Tanh,
        batch_size: 256,
        epochs: 1,
        mirror_warmup_epochs: 2,
        dataset: DatasetSpec {
            source: DataSource::Blobs {
                separation: 10.0,
                cluster_std: 1.0,
            },
            train_size: 8192,
            test_size: 256,
            normalize: true,
        },
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(config).unwrap();
    let initial = matrix_angles(t.network());
    t.run_epoch().unwrap();
    t.run_epoch().unwrap();
    assert_eq!(t.forward_updates(), 0);
    let after = matrix_angles(t.network());
    for l in 1..3 {
        assert!((initial[l].unwrap() - 90.0).abs() < 10.0, "{initial:?}");
        assert!(after[l].unwrap() < 10.0, "{after:?}");
    }
    // The warmup rows are recorded with a zero learning rate.
    assert!(t.records().iter().all(|r| r.eta_w == 0.0));
}

#[test]
fn backprop_separates_wide_blobs() {
    let config = TrainConfig {
        rule: FeedbackRule::Backprop,
        widths: vec![20, 32, 5],
        activation: Activation::Tanh,
        eta_w: 0.05,
        batch_size: 32,
        epochs: 10,
        schedule: LrSchedule::constant(),
        dataset: DatasetSpec {
            source: DataSource::Blobs {
                separation: 10.0,
                cluster_std: 1.0,
            },
            train_size: 1000,
            test_size: 500,
            normalize: true,
        },
        ..TrainConfig::default()
    };
    let out = run_training(&config).unwrap();
    let test = out.final_record(SplitKind::Test).unwrap();
    assert!(test.error_rate < 0.01, "test error {}", test.error_rate);
}

#[test]
fn teacher_data_is_deterministic_per_seed() {
    let spec = teacher(Some(vec![6, 9, 3]), Activation::Tanh, 50, 20);
    let a = make_synthetic(&spec, &[6, 4, 3], &mut RngStream::new(7)).unwrap();
    let b = make_synthetic(&spec, &[6, 4, 3], &mut RngStream::new(7)).unwrap();
    let c = make_synthetic(&spec, &[6, 4, 3], &mut RngStream::new(8)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn identity_teacher_copies_inputs() {
    let layer = DenseLayer::from_parts(
        Matrix::identity(5),
        Matrix::zeros(5, 1),
        Matrix::identity(5),
        Activation::Linear,
    )
    .unwrap();
    let net = Network::from_layers(vec![layer]).unwrap();
    let split = teacher_split(&net, 40, 1.0, &mut RngStream::new(1)).unwrap();
    assert_eq!(split.inputs, split.targets);
}

#[test]
fn metrics_file_matches_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    let config = TrainConfig {
        widths: vec![4, 6, 3],
        epochs: 3,
        batch_size: 8,
        dataset: DatasetSpec {
            source: DataSource::Blobs {
                separation: 5.0,
                cluster_std: 1.0,
            },
            train_size: 40,
            test_size: 20,
            normalize: true,
        },
        metrics_path: Some(path.clone()),
        ..TrainConfig::default()
    };
    let out = run_training(&config).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("epoch,split,loss,error_rate,eta_W,angle_W_B_l1,angle_W_B_l2,angle_delta_l1,angle_delta_l2\n"));
    let parsed = parse_metrics(&text).unwrap();
    assert_eq!(parsed.len(), out.records.len());
    for (p, r) in parsed.iter().zip(&out.records) {
        assert_eq!((p.epoch, p.split), (r.epoch, r.split));
        assert!((p.loss - r.loss).abs() <= 1e-8 * r.loss.abs());
        // Warmup ramp: 6 epochs from eta/6.
        let expected = config.eta_w * (r.epoch + 1) as f64 / 6.0;
        assert!((p.eta_w - expected).abs() <= 1e-8 * expected);
    }
}
