use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cone_contraction::GaugeFunction;

/// Fixed default so that runs without `--seed` are reproducible.
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Parser)]
#[command(
    name = "cone-contraction",
    version,
    about = "Thompson-metric contraction analysis of Riccati flows and operators"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for every sampling step.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Command tolerance: residual for gare, relative step tolerance for integrate, rank tolerance for discrete.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Write the report (the trajectory CSV for integrate) to this file instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Add the elapsed wall time to the report. Reports are then no longer byte-reproducible.
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    /// Strongest applicable closed form, falling back to sampling.
    Auto,
    /// Sampled supremum formula only.
    General,
    /// Closed forms only; fails when none applies.
    Closed,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Thompson distance, and optionally a Finsler distance, between two matrices.
    Metric {
        a: PathBuf,
        b: PathBuf,
        /// Gauge of the Finsler metric: a p-norm exponent or `sup`.
        #[arg(long, value_parser = parse_gauge)]
        gauge: Option<GaugeFunction>,
    },
    /// Integrates a matrix flow and records the trajectory.
    Integrate {
        problem: PathBuf,
        /// Start matrix; defaults to `options.P0` of the problem file.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        t0: f64,
        #[arg(long, allow_negative_numbers = true)]
        t1: f64,
        /// Record at most one state per interval of this length.
        #[arg(long)]
        every: Option<f64>,
    },
    /// Contraction rate certificate for a matrix flow.
    Rate {
        problem: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
        method: MethodArg,
        /// Order interval to sample or certify on.
        #[arg(long)]
        domain: Option<PathBuf>,
        /// Upper end of the local domain `(0, P0]`.
        #[arg(long = "p0", visible_alias = "P0")]
        p0: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Solves the algebraic Riccati equation by integrating the flow to equilibrium.
    Gare {
        problem: PathBuf,
        /// Start matrix; a supersolution `2^j I` is searched for when omitted.
        #[arg(long = "p0", visible_alias = "P0")]
        p0: Option<PathBuf>,
    },
    /// Lipschitz constant of the discrete Riccati operator.
    Discrete {
        problem: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Searches the first-order condition for non-expansiveness in a Finsler metric.
    AuditFinsler {
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, value_parser = parse_gauge, default_value = "2")]
        gauge: GaugeFunction,
        /// `default` or a JSON file with `epsilons`, `lambdaLast` and optional `e`, `threshold`.
        #[arg(long, default_value = "default")]
        grid: String,
    },
    /// Sampled contraction rate of a flow on the positive orthant.
    OrthantRate {
        problem: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        /// Box with `lo` and `hi` vectors.
        #[arg(long)]
        domain: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Metric { .. } => "metric",
            Command::Integrate { .. } => "integrate",
            Command::Rate { .. } => "rate",
            Command::Gare { .. } => "gare",
            Command::Discrete { .. } => "discrete",
            Command::AuditFinsler { .. } => "audit-finsler",
            Command::OrthantRate { .. } => "orthant-rate",
        }
    }
}

fn parse_gauge(s: &str) -> Result<GaugeFunction, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "sup" | "inf" | "max" => Ok(GaugeFunction::SupNorm),
        other => {
            let p: f64 = other
                .trim_start_matches('p')
                .trim_start_matches('=')
                .parse()
                .map_err(|_| format!("expected a p-norm exponent or `sup`, got `{s}`"))?;
            GaugeFunction::p_norm(p).map_err(|e| e.to_string())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn gauge_spellings() {
        assert_eq!(parse_gauge("sup").unwrap(), GaugeFunction::SupNorm);
        assert_eq!(parse_gauge("2").unwrap(), GaugeFunction::PNorm { p: 2.0 });
        assert_eq!(parse_gauge("p=1").unwrap(), GaugeFunction::PNorm { p: 1.0 });
        assert!(parse_gauge("0.5").is_err());
        assert!(parse_gauge("two").is_err());
    }
}
