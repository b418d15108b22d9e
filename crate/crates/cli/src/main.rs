use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mirrorkp_core::diagnostics::{
    flops_estimate, kp_contraction_check, kp_contraction_run, mirror_expectation_check, FlopRule,
};
use mirrorkp_core::harness::{run_training, ConfigMap, SplitKind, TrainConfig};
use mirrorkp_core::RuleKind;

#[derive(Parser, Debug)]
#[command(
    name = "mirrorkp",
    version,
    about = "Train networks with alternative feedback-weight rules"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network and write per-epoch metrics as CSV.
    Train(TrainArgs),
    /// Monte-Carlo check that the mirror update averages to a multiple of Wᵀ.
    MirrorCheck(MirrorCheckArgs),
    /// Check that Kolen-Pollack shrinks ‖W − Bᵀ‖ by exactly 1 − λ per step.
    KpCheck(KpCheckArgs),
    /// Per-example cost of adjusting feedback weights.
    Flops(FlopsArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_rule)]
    rule: Option<RuleKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Metrics CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MirrorCheckArgs {
    #[arg(long, default_value_t = 10)]
    n_out: usize,
    #[arg(long, default_value_t = 8)]
    n_in: usize,
    #[arg(long, default_value_t = 1.0)]
    noise_std: f64,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 1000)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Minimum cosine with Wᵀ to pass.
    #[arg(long, default_value_t = 0.999)]
    min_cosine: f64,
    /// Allowed relative deviation of the norm ratio from 1.
    #[arg(long, default_value_t = 0.02)]
    norm_tolerance: f64,
}

#[derive(Args, Debug)]
struct KpCheckArgs {
    #[arg(long, value_delimiter = ',', default_value = "20,15,10")]
    widths: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FlopRuleArg {
    Kp,
    Wm,
}

#[derive(Args, Debug)]
struct FlopsArgs {
    /// Layer widths; one estimate per adjacent pair.
    #[arg(long, value_delimiter = ',', default_value = "3,2")]
    widths: Vec<usize>,
    /// Restrict output to one rule.
    #[arg(long, value_enum)]
    rule: Option<FlopRuleArg>,
}

fn parse_rule(s: &str) -> std::result::Result<RuleKind, String> {
    s.parse::<RuleKind>().map_err(|e| e.to_string())
}

fn train(args: TrainArgs) -> Result<bool> {
    let mut map = match &args.config {
        Some(path) => {
            ConfigMap::load(path).with_context(|| format!("reading config {}", path.display()))?
        }
        None => ConfigMap::default(),
    };
    if let Some(rule) = args.rule {
        map.set("rule", rule.short_name())?;
    }
    if let Some(seed) = args.seed {
        map.set("seed", seed.to_string())?;
    }
    if let Some(epochs) = args.epochs {
        map.set("epochs", epochs.to_string())?;
    }
    if let Some(out) = &args.out {
        map.set("metrics_path", out.to_string_lossy())?;
    }
    let config = TrainConfig::from_map(&map)?;
    let outcome = run_training(&config)?;
    for split in [SplitKind::Train, SplitKind::Test] {
        if let Some(r) = outcome.final_record(split) {
            println!(
                "epoch {} {split}: loss {:.6e} error_rate {:.4}",
                r.epoch, r.loss, r.error_rate
            );
        }
    }
    if let Some(path) = &config.metrics_path {
        println!("metrics written to {}", path.display());
    }
    Ok(true)
}

fn mirror_check(args: MirrorCheckArgs) -> Result<bool> {
    let r = mirror_expectation_check(
        args.n_out,
        args.n_in,
        args.noise_std,
        args.samples,
        args.batch,
        args.seed,
    )?;
    let passed = r.cosine >= args.min_cosine && (r.norm_ratio - 1.0).abs() <= args.norm_tolerance;
    println!("samples     {}", r.samples);
    println!("cosine      {:.6}", r.cosine);
    println!("norm_ratio  {:.6}", r.norm_ratio);
    println!("{}", if passed { "PASS" } else { "FAIL" });
    Ok(passed)
}

fn kp_check(args: KpCheckArgs) -> Result<bool> {
    if args.widths.len() < 2 {
        bail!("--widths needs at least two sizes");
    }
    let histories = kp_contraction_run(
        &args.widths,
        args.lambda,
        args.eta,
        args.steps,
        args.batch,
        args.seed,
    )?;
    let mut all = true;
    for (l, h) in histories.iter().enumerate() {
        let r = kp_contraction_check(h, args.lambda);
        all &= r.passed;
        println!(
            "layer {}: gap {:.6e} -> {:.6e}, max deviation {:.3e} over {} steps ({} below floor) {}",
            l + 1,
            h.first().copied().unwrap_or(0.0),
            h.last().copied().unwrap_or(0.0),
            r.max_deviation,
            r.steps_checked,
            r.steps_below_floor,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    Ok(all)
}

fn flops(args: FlopsArgs) -> Result<bool> {
    if args.widths.len() < 2 {
        bail!("--widths needs at least two sizes");
    }
    let rules: Vec<(FlopRule, &str)> = match args.rule {
        Some(FlopRuleArg::Kp) => vec![(FlopRule::KolenPollack, "kp")],
        Some(FlopRuleArg::Wm) => vec![(FlopRule::WeightMirror, "wm")],
        None => vec![
            (FlopRule::KolenPollack, "kp"),
            (FlopRule::WeightMirror, "wm"),
        ],
    };
    println!("n_l,n_l1,rule,flops,noise_draws");
    for pair in args.widths.windows(2) {
        for &(rule, name) in &rules {
            let e = flops_estimate(rule, pair[0] as u64, pair[1] as u64);
            println!(
                "{},{},{name},{},{}",
                pair[0], pair[1], e.flops, e.noise_draws
            );
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::MirrorCheck(a) => mirror_check(a),
        Command::KpCheck(a) => kp_check(a),
        Command::Flops(a) => flops(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
