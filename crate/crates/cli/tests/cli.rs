use std::path::Path;
use std::process::{Command, Output};

fn mirrorkp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mirrorkp"))
        .args(args)
        .output()
        .expect("spawn mirrorkp")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = "widths = 6,8,3\nbatch_size = 8\ndataset = synthetic_blobs\ntrain_size = 48\ntest_size = 24\n";

#[test]
fn flops_prints_cost_table() {
    let o = mirrorkp(&["flops", "--widths", "3,2"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "n_l,n_l1,rule,flops,noise_draws\n3,2,kp,26,0\n3,2,wm,38,3\n");
}

#[test]
fn kp_check_passes() {
    let o = mirrorkp(&["kp-check", "--steps", "30"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).matches("PASS").count(), 2);
}

#[test]
fn mirror_check_reports() {
    let o = mirrorkp(&["mirror-check", "--samples", "200000"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("cosine"));
    assert!(text.trim_end().ends_with("PASS"));
}

#[test]
fn train_writes_csv_and_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}epochs = 7\nrule = fa\n"));
    let out = dir.path().join("m.csv");
    let o = mirrorkp(&[
        "train",
        "--config",
        &cfg,
        "--rule",
        "kp",
        "--epochs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 2 * 2);
    assert_eq!(
        lines[0],
        "epoch,split,loss,error_rate,eta_W,angle_W_B_l1,angle_W_B_l2,angle_delta_l1,angle_delta_l2"
    );
    assert!(lines[4].starts_with("1,test,"));
}

#[test]
fn seeds_change_output_and_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}epochs = 2\n"));
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = mirrorkp(&["train", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        std::fs::read(out).unwrap()
    };
    let a = run("1", "a.csv");
    let b = run("1", "b.csv");
    let c = run("2", "c.csv");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "learning_rate = 0.1\n");
    let o = mirrorkp(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}

#[test]
fn bad_rule_flag_is_rejected() {
    let o = mirrorkp(&["train", "--rule", "hebb"]);
    assert!(!o.status.success());
}
