//! Command-line front end: single runs, paired sweeps, the verification
//! battery, the reference size calculators, and the kernel lower-bound
//! harness. Exit codes: 0 success, 1 configuration error, 2 numerical
//! failure, 3 verification failure.

use clap::{Parser, Subcommand};
use quadfeat::bench::{
    records_to_csv, reference_calculators, run_single_detailed, run_sweep, run_verify,
    trace_to_csv, ExperimentConfig, ModelChoice, SweepAxis, VerifyLevel,
};
use quadfeat::kernel::{default_lambda_grid, lower_bound_run, InfiniteKernel, PhiPrimeKind};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "quadfeat", version, about = "Taylor models on random features: experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the optimizer iteration trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a paired sweep over one axis for several models and seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Axis to sweep: n, d, D, or m.
        #[arg(long)]
        axis: String,
        /// Comma-separated grid values.
        #[arg(long)]
        grid: String,
        /// Comma-separated seeds.
        #[arg(long)]
        seeds: String,
        /// Comma-separated models (defaults to the config's model).
        #[arg(long)]
        models: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the verification battery.
    Verify {
        /// fast or full.
        #[arg(long, default_value = "fast")]
        level: String,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
    },
    /// Print the reference size prescriptions for given knobs.
    Calc {
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        beta_norm: f64,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 1)]
        r_star: usize,
        #[arg(long, default_value_t = 4)]
        p: usize,
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        #[arg(long, default_value_t = 0.0)]
        m_ref: f64,
        #[arg(long, default_value_t = 1.0)]
        b_h: f64,
    },
    /// Kernel ridge lower-bound harness on a pure degree-p target.
    KernelLb {
        #[arg(long, default_value_t = 30)]
        d: usize,
        #[arg(long, default_value_t = 3)]
        p: usize,
        #[arg(long, default_value_t = 900)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// phi' of the kernel: indicator or relu.
        #[arg(long, default_value = "relu")]
        phi_prime: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|tok| tok.trim().parse::<T>().map_err(|_| format!("bad list entry: {tok}")))
        .collect()
}

fn emit(out: Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("configuration error: {msg}");
    ExitCode::from(1)
}

fn numerical_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("numerical failure: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, seed, trace } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => return config_error(e),
            };
            let mut parsed: ExperimentConfig = match serde_json::from_str(&text) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            if let Some(s) = seed {
                parsed.seed = s;
            }
            if let Err(e) = parsed.validate() {
                return config_error(e);
            }
            match run_single_detailed(&parsed) {
                Ok((record, artifacts)) => {
                    if let (Some(path), Some(art)) = (trace, artifacts.as_ref()) {
                        if std::fs::write(path, trace_to_csv(&art.trace)).is_err() {
                            return numerical_error("failed to write trace");
                        }
                    }
                    if emit(out, &records_to_csv(&[record])).is_err() {
                        return numerical_error("failed to write output");
                    }
                    ExitCode::SUCCESS
                }
                Err(quadfeat::Error::InvalidArgument(e)) => config_error(e),
                Err(e) => numerical_error(e),
            }
        }
        Command::Sweep { config, axis, grid, seeds, models, out } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => return config_error(e),
            };
            let base: ExperimentConfig = match serde_json::from_str(&text) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            let axis = match axis.as_str() {
                "n" => SweepAxis::SampleCount,
                "d" => SweepAxis::InputDim,
                "D" => SweepAxis::FeatureDim,
                "m" => SweepAxis::Width,
                other => return config_error(format!("unknown axis {other}")),
            };
            let grid: Vec<usize> = match parse_list(&grid) {
                Ok(g) => g,
                Err(e) => return config_error(e),
            };
            let seeds: Vec<u64> = match parse_list(&seeds) {
                Ok(s) => s,
                Err(e) => return config_error(e),
            };
            let models: Vec<ModelChoice> = match models {
                None => vec![base.model],
                Some(list) => {
                    let mut out = Vec::new();
                    for tok in list.split(',') {
                        match serde_json::from_value::<ModelChoice>(serde_json::Value::String(
                            tok.trim().to_string(),
                        )) {
                            Ok(m) => out.push(m),
                            Err(_) => return config_error(format!("unknown model {tok}")),
                        }
                    }
                    out
                }
            };
            match run_sweep(&base, axis, &grid, &seeds, &models) {
                Ok(records) => {
                    if emit(out, &records_to_csv(&records)).is_err() {
                        return numerical_error("failed to write output");
                    }
                    ExitCode::SUCCESS
                }
                Err(quadfeat::Error::InvalidArgument(e)) => config_error(e),
                Err(e) => numerical_error(e),
            }
        }
        Command::Verify { level, seed } => {
            let level = match level.as_str() {
                "fast" => VerifyLevel::Fast,
                "full" => VerifyLevel::Full,
                other => return config_error(format!("unknown level {other}")),
            };
            match run_verify(level, seed) {
                Ok(report) => {
                    print!("{}", report.to_text());
                    if report.passed() {
                        ExitCode::SUCCESS
                    } else {
                        eprintln!("verification failure");
                        ExitCode::from(3)
                    }
                }
                Err(e) => numerical_error(e),
            }
        }
        Command::Calc { k, beta_norm, eps, delta, r_star, p, tau, m_ref, b_h } => {
            match reference_calculators(k, beta_norm, eps, delta, r_star, p, tau, m_ref, b_h) {
                Ok(sizes) => {
                    println!("D_rule_chebyshev = {:.6e}", sizes.d_chebyshev);
                    println!("D_rule_stacked   = {:.6e}", sizes.d_stacked);
                    println!("m_rule           = {:.6e}", sizes.m_width);
                    println!("lambda0          = {:.6e}", sizes.lambda0);
                    println!("lambda           = {:.6e}", sizes.lambda);
                    ExitCode::SUCCESS
                }
                Err(e) => config_error(e),
            }
        }
        Command::KernelLb { d, p, n, seed, phi_prime, out } => {
            let kind = match phi_prime.as_str() {
                "indicator" => PhiPrimeKind::Indicator,
                "relu" => PhiPrimeKind::Relu,
                other => return config_error(format!("unknown phi' {other}")),
            };
            let kernel = InfiniteKernel::new(kind);
            let grid = default_lambda_grid();
            match lower_bound_run(kernel, d, p, n, &grid, seed) {
                Ok(report) => {
                    let mut text = String::from("lambda,train_mse,test_mse,ratio\n");
                    for row in &report.rows {
                        text.push_str(&format!(
                            "{:.16e},{:.16e},{:.16e},{:.16e}\n",
                            row.lambda, row.train_mse, row.test_mse, row.ratio
                        ));
                    }
                    text.push_str(&format!("# best_ratio = {:.6}\n", report.best_ratio));
                    if emit(out, &text).is_err() {
                        return numerical_error("failed to write output");
                    }
                    ExitCode::SUCCESS
                }
                Err(quadfeat::Error::InvalidArgument(e)) => config_error(e),
                Err(e) => numerical_error(e),
            }
        }
    }
}
