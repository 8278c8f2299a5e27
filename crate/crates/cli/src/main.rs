use std::path::PathBuf;
use std::process::ExitCode;

use cgm_core::harness::{parse_config, run_experiment, ExperimentSummary};
use clap::Parser;

/// Run constrained gradient method experiments and write CSV/SVG results.
///
/// Settings come from an optional `key = value` config file; flags override it.
/// The worker count is read from `CGM_WORKERS`.
#[derive(Debug, Parser)]
#[command(name = "cgm", version)]
struct Args {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `rap` or `hbg`.
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    d: Option<String>,
    /// Comma-separated list (hbg).
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Comma-separated horizons.
    #[arg(long)]
    iters: Option<String>,
    /// `constant`, `varying`, or both comma-separated (rap).
    #[arg(long)]
    schedule: Option<String>,
    /// Also run projected GDA and extragradient (hbg).
    #[arg(long)]
    baselines: bool,
    /// Evaluate the theoretical bounds; exit with status 1 if any fails.
    #[arg(long)]
    check_bounds: bool,
    #[arg(long)]
    no_plots: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for cached reference solutions.
    #[arg(long)]
    reference_cache: Option<PathBuf>,
}

impl Args {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                out.push((key.to_string(), v));
            }
        };
        push("problem", self.problem.clone());
        push("d", self.d.clone());
        push("beta", self.beta.clone());
        push("seed", self.seed.clone());
        push("iters", self.iters.clone());
        push("schedule", self.schedule.clone());
        push("baselines", self.baselines.then(|| "true".into()));
        push("check_bounds", self.check_bounds.then(|| "true".into()));
        push("plots", self.no_plots.then(|| "false".into()));
        push("out", self.out.as_ref().map(|p| p.display().to_string()));
        push(
            "reference_cache",
            self.reference_cache.as_ref().map(|p| p.display().to_string()),
        );
        out
    }
}

fn print_summary(summary: &ExperimentSummary) {
    println!(
        "{:<28} {:>6} {:>14} {:>14} {:>12}",
        "run", "T", "final_metric", "violation", "bounds"
    );
    for run in &summary.runs {
        let bounds = match &run.bounds {
            None => "-".to_string(),
            Some(b) if b.all_pass() => "pass".to_string(),
            Some(b) => format!("FAIL({})", b.failures().count()),
        };
        println!(
            "{:<28} {:>6} {:>14.6e} {:>14.6e} {:>12}",
            run.name, run.horizon, run.final_metric, run.final_violation, bounds
        );
        if let Some(b) = &run.bounds {
            for c in b.failures() {
                println!("  {} violated at t={:?}: {:.6e} > {:.6e}", c.name, c.iteration, c.lhs, c.rhs);
            }
        }
    }
    println!("summary: {}", summary.summary_csv.display());
    for fig in &summary.figures {
        println!("figure: {}", fig.display());
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let config = match parse_config(args.config.as_deref(), &args.overrides()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run_experiment(&config) {
        Ok(summary) => {
            print_summary(&summary);
            if config.check_bounds && !summary.certificates_pass() {
                eprintln!("error: bound certificates failed");
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
