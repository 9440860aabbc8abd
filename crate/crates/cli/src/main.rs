#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod grid;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Finite-length scaling of LDPC codes on the binary erasure channel.
#[derive(Debug, Parser)]
#[command(name = "fss", version, about)]
pub struct Cli {
    /// Print results as one JSON object instead of key=value lines.
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads for simulations (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Base seed for randomized commands.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EnsembleArg {
    /// `l,k` for a regular ensemble or `lambda/rho` as degree:coefficient lists.
    #[arg(long, short = 'e')]
    pub ensemble: String,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Density evolution threshold.
    Threshold {
        #[command(flatten)]
        #[serde(flatten)]
        ensemble: EnsembleArg,
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
    },
    /// Critical point: threshold, fixed point and residual fraction.
    Critical {
        #[command(flatten)]
        #[serde(flatten)]
        ensemble: EnsembleArg,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Scaling parameter alpha from covariance evolution.
    Alpha {
        #[command(flatten)]
        #[serde(flatten)]
        ensemble: EnsembleArg,
        /// conditional (fixed number of erasures) or binomial (i.i.d. channel).
        #[arg(long, default_value = "conditional")]
        mode: String,
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        /// Write the mean trajectory at threshold as CSV (tau,v,s,t).
        #[arg(long)]
        #[serde(skip)]
        trajectory: Option<std::path::PathBuf>,
    },
    /// Evaluate the basic or refined scaling law.
    Predict {
        #[command(flatten)]
        #[serde(flatten)]
        ensemble: EnsembleArg,
        /// Blocklengths, comma separated.
        #[arg(long)]
        n: String,
        /// Single erasure probability.
        #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
        eps: Option<f64>,
        /// Erasure probabilities as lo:hi:step or a comma list.
        #[arg(long)]
        grid: Option<String>,
        /// Use the shifted threshold.
        #[arg(long)]
        refined: bool,
        /// Channel the prediction is for: iid or fixed_weight.
        #[arg(long, default_value = "iid")]
        channel: String,
        /// Alpha value; computed from covariance evolution when omitted.
        #[arg(long)]
        alpha: Option<f64>,
        /// Mode of the given alpha.
        #[arg(long, default_value = "conditional", requires = "alpha")]
        alpha_mode: String,
        /// Shift coefficient; tabulated value (or 0) when omitted.
        #[arg(long)]
        beta: Option<f64>,
        /// Scales a tabulated beta/omega entry.
        #[arg(long, default_value_t = 1.0)]
        omega: f64,
        /// Accept an alpha mode that does not match the channel.
        #[arg(long)]
        allow_mode_mismatch: bool,
        /// Write the grid as CSV.
        #[arg(long)]
        #[serde(skip)]
        out: Option<std::path::PathBuf>,
    },
    /// Monte Carlo sweep of the block and bit erasure probability.
    Simulate {
        #[command(flatten)]
        #[serde(flatten)]
        ensemble: EnsembleArg,
        /// Blocklengths, comma separated.
        #[arg(long)]
        n: String,
        /// Erasure probabilities as lo:hi:step or a comma list.
        #[arg(long)]
        eps: String,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        /// iid or fixed_weight.
        #[arg(long, default_value = "iid")]
        channel: String,
        /// Reuse one graph per blocklength instead of a fresh graph per trial.
        #[arg(long)]
        per_graph: bool,
        /// Flag points whose 95% interval is wider than this.
        #[arg(long)]
        precision: Option<f64>,
        #[arg(long)]
        #[serde(skip)]
        out: Option<std::path::PathBuf>,
        /// Also write z = sqrt(n)(eps*(n) - eps) against the estimate as CSV.
        #[arg(long)]
        #[serde(skip)]
        collapse: Option<std::path::PathBuf>,
    },
    /// Finite-length threshold by stochastic bisection.
    EstimateThreshold {
        #[command(flatten)]
        #[serde(flatten)]
        ensemble: EnsembleArg,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2000)]
        trials_per_probe: u64,
        #[arg(long)]
        max_trials_per_probe: Option<u64>,
        #[arg(long, default_value_t = 64)]
        max_probes: usize,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        #[arg(long, default_value = "iid")]
        channel: String,
    },
    /// Fit scaling parameters to a simulate CSV.
    Fit {
        #[arg(long)]
        data: std::path::PathBuf,
        /// Parameters to estimate, from epsilon_star, alpha, beta.
        #[arg(long, default_value = "epsilon_star,alpha,beta")]
        free: String,
        /// Fixed or starting values, e.g. epsilon_star=0.42944.
        #[arg(long, value_delimiter = ',')]
        fix: Vec<String>,
    },
    /// Toy random walk with a parabolic mean path.
    Toy {
        /// Scales, comma separated.
        #[arg(long)]
        n: String,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long)]
        #[serde(skip)]
        out: Option<std::path::PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(report) => {
            report.print(cli.json);
            ExitCode::SUCCESS
        }
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(commands::Failure::Compute(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
