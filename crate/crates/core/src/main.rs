//! Command-line entry point.
//!
//! One binary, four experiments. Each subcommand loads a JSON config (or
//! its built-in default), copies the resolved config into the output
//! directory, runs, and exits 0 on success, 1 on config errors, 2 on
//! verification failure, 3 when training terminated on a divergence (with
//! the partial trace flushed).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use artbp::harness::{
    cmd_char_lm, cmd_influence_balancing, cmd_schedule_stats, cmd_verify_unbiasedness,
    load_config, write_config_copy, CharLmConfig, HarnessError, InfluenceBalancingConfig,
    RunOutcome, ScheduleStatsConfig, VerifyConfig,
};

#[derive(Parser)]
#[command(
    name = "artbp",
    about = "Recurrent training with exact, truncated, and anticipated-reweighted truncated BPTT"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run config; the built-in default is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSVs and the config copy.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Influence balancing: truncated BPTT runs diverge, the reweighted
    /// estimator converges.
    InfluenceBalancing(CommonArgs),
    /// Monte-Carlo z-test of estimator unbiasedness against exact BPTT,
    /// plus bias detection with compensation disabled.
    VerifyUnbiased(CommonArgs),
    /// Character-level language model, truncated vs reweighted, on a text
    /// corpus.
    CharLm(CommonArgs),
    /// Subsequence-length statistics of a truncation policy.
    ScheduleStats(CommonArgs),
}

fn run(command: &Command) -> Result<RunOutcome, HarnessError> {
    match command {
        Command::InfluenceBalancing(args) => {
            let mut config: InfluenceBalancingConfig = load_config(args.config.as_deref())?;
            if let Some(seed) = args.seed {
                config.override_seed(seed);
            }
            write_config_copy(&args.out, "influence_balancing", &config)?;
            let (summary, outcome) = cmd_influence_balancing(&config, &args.out)?;
            for run in &summary.runs {
                println!(
                    "{}: steps={} final_cumulative_average={:.6e}{}",
                    run.label,
                    run.steps_recorded,
                    run.final_cumulative_average,
                    if run.diverged { " [diverged]" } else { "" }
                );
            }
            Ok(outcome)
        }
        Command::VerifyUnbiased(args) => {
            let mut config: VerifyConfig = load_config(args.config.as_deref())?;
            if let Some(seed) = args.seed {
                config.override_seed(seed);
            }
            write_config_copy(&args.out, "verify_unbiasedness", &config)?;
            let (report, outcome) = cmd_verify_unbiasedness(&config, &args.out)?;
            for leg in &report.legs {
                println!(
                    "{} / {} compensate={}: n={} max|z|={:.3} -> {}",
                    leg.case_label,
                    leg.policy_label,
                    leg.compensate,
                    leg.n_samples,
                    leg.max_abs_z,
                    if leg.pass { "pass" } else { "FAIL" }
                );
            }
            for p in &report.probes {
                println!(
                    "probe {} / {} t={}: max|z|={:.3} -> {}",
                    p.case_label,
                    p.policy_label,
                    p.timestep,
                    p.max_abs_z,
                    if p.pass { "pass" } else { "FAIL" }
                );
            }
            println!("overall: {}", if report.pass { "pass" } else { "FAIL" });
            Ok(outcome)
        }
        Command::CharLm(args) => {
            let mut config: CharLmConfig = load_config(args.config.as_deref())?;
            if let Some(seed) = args.seed {
                config.override_seed(seed);
            }
            write_config_copy(&args.out, "char_lm", &config)?;
            let (summary, outcome) = cmd_char_lm(&config, &args.out)?;
            println!(
                "vocabulary: {} symbols (log2 = {:.3} bpc)",
                summary.vocab_size,
                (summary.vocab_size as f64).log2()
            );
            for row in &summary.rows {
                println!(
                    "epoch {} seed {} {}: train {:.4} bpc, valid {:.4} bpc",
                    row.epoch, row.seed, row.algorithm, row.train_bpc, row.valid_bpc
                );
            }
            Ok(outcome)
        }
        Command::ScheduleStats(args) => {
            let mut config: ScheduleStatsConfig = load_config(args.config.as_deref())?;
            if let Some(seed) = args.seed {
                config.override_seed(seed);
            }
            write_config_copy(&args.out, "schedule_stats", &config)?;
            let (summary, outcome) = cmd_schedule_stats(&config, &args.out)?;
            let s = &summary.stats;
            println!(
                "lengths: n={} mean={:.4} variance={:.4} stderr={:.6}",
                s.count, s.mean, s.variance, s.stderr
            );
            for &(threshold, survival) in &s.tail {
                println!("P(length >= {threshold}) = {survival:.6}");
            }
            Ok(outcome)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(HarnessError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
