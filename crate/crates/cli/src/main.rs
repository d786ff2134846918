use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use sampling_mpc::analysis::verify_bounds_mc;
use sampling_mpc::io::experiment::ResultBundle;
use sampling_mpc::io::export::{read_bundle, read_run_summary, seed_dir, write_text};
use sampling_mpc::io::{parse_config, run_experiment};

#[derive(Parser)]
#[command(name = "sampling-mpc", version, about = "Sampling-based distributed MPC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment file.
    Run {
        config: PathBuf,
        /// Agent-count sweep, e.g. `N=4,8,16`.
        #[arg(long)]
        sweep: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Added to every seed of the file.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Monte Carlo check of the sample-complexity bounds for the file's
    /// weighting.
    VerifyBounds {
        config: PathBuf,
        /// Write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the aggregates of an output directory and check them against
    /// the per-seed files.
    Report { out_dir: PathBuf },
}

fn parse_sweep(spec: &str) -> Result<Vec<usize>> {
    let values = spec
        .strip_prefix("N=")
        .with_context(|| format!("sweep `{spec}` must look like N=4,8,16"))?;
    values
        .split(',')
        .map(|v| v.trim().parse::<usize>().with_context(|| format!("bad agent count `{v}`")))
        .collect()
}

fn print_bundle(bundle: &ResultBundle) {
    println!(
        "{} ({}, N={}): mean cost {:.4}, variance {:.4}, success {}/{} ({:.2})",
        bundle.scenario,
        bundle.mode,
        bundle.num_agents,
        bundle.mean_cost,
        bundle.cost_variance,
        bundle.runs.iter().filter(|r| r.success).count(),
        bundle.runs.len(),
        bundle.success_rate,
    );
    for r in &bundle.runs {
        let status = match (&r.aborted, r.success) {
            (Some(reason), _) => format!("aborted: {reason}"),
            (None, true) => "ok".into(),
            (None, false) => format!("{} violations", r.violations),
        };
        println!("  seed {:>6}  cost {:>14.4}  {status}", r.seed, r.mean_cost);
    }
    if bundle.timing.mean_runtime > 0.0 {
        println!(
            "  {:.4} s per MPC step, {:.4} s per agent solve",
            bundle.timing.mean_runtime, bundle.timing.mean_agent_solve_seconds
        );
    }
}

fn cmd_run(config: &Path, sweep: Option<&str>, out: Option<&Path>, seed_offset: u64) -> Result<bool> {
    let base = parse_config(config)?;
    let mut completed = true;
    match sweep {
        None => {
            let bundle = run_experiment(&base, seed_offset, out)?;
            print_bundle(&bundle);
            completed &= bundle.all_completed();
        }
        Some(spec) => {
            for n in parse_sweep(spec)? {
                let exp = base.file.with_agents(n).build()?;
                let dir = out.map(|d| d.join(format!("N_{n}")));
                let bundle = run_experiment(&exp, seed_offset, dir.as_deref())?;
                print_bundle(&bundle);
                completed &= bundle.all_completed();
            }
        }
    }
    Ok(completed)
}

fn cmd_verify(config: &Path, out: Option<&Path>) -> Result<bool> {
    let exp = parse_config(config)?;
    let b = &exp.bounds;
    let report = verify_bounds_mc(
        &b.problem,
        &exp.run.optimizer.shape,
        b.samples,
        b.trials,
        b.eps1,
        b.eps2,
        b.seed,
    )?;
    println!(
        "{}: M={} trials={} eps1={} eps2={}",
        report.shape, report.samples, report.trials, report.eps1, report.eps2
    );
    println!(
        "  E1={:.6} E2={:.6} psi={:.6}",
        report.e1, report.e2, report.psi
    );
    println!(
        "  freq1={:.6} <= rho1={:.6e} (literal form {:.6e}): {}",
        report.violation_freq1,
        report.rho1,
        report.rho1_literal,
        report.violation_freq1 <= report.rho1
    );
    println!(
        "  freq2={:.6} <= rho2={:.6e}: {}",
        report.violation_freq2,
        report.rho2,
        report.violation_freq2 <= report.rho2
    );
    println!(
        "  interval [{:.6}, {:.6}], coverage {:.4}",
        report.interval.0, report.interval.1, report.interval_coverage
    );
    if let Some(path) = out {
        write_text(path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(report.within_bounds())
}

fn cmd_report(out_dir: &Path) -> Result<bool> {
    let bundle = read_bundle(out_dir)?;
    print_bundle(&bundle);
    let runs = bundle
        .runs
        .iter()
        .map(|r| read_run_summary(&seed_dir(out_dir, r.seed).join("summary.json")))
        .collect::<sampling_mpc::Result<Vec<_>>>()?;
    let recomputed = ResultBundle::from_runs(
        bundle.scenario.clone(),
        match bundle.mode.as_str() {
            "centralized" => sampling_mpc::runtime::Mode::Centralized,
            _ => sampling_mpc::runtime::Mode::Distributed,
        },
        bundle.num_agents,
        runs,
        bundle.timing.clone(),
    );
    if recomputed != bundle {
        bail!("aggregates in summary.json do not match the per-seed files");
    }
    println!("  per-seed files agree with summary.json");
    Ok(bundle.all_completed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run {
            config,
            sweep,
            out,
            seed_offset,
        } => cmd_run(config, sweep.as_deref(), out.as_deref(), *seed_offset),
        Command::VerifyBounds { config, out } => cmd_verify(config, out.as_deref()),
        Command::Report { out_dir } => cmd_report(out_dir),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
