//! `nonconv`: rate functions, simulations and checks for nonconventional sums
//! over finite-alphabet models described in TOML.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use report::Format;

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 0x5EED_2024;

#[derive(Debug, Parser)]
#[command(name = "nonconv", version, about = "Large deviations of nonconventional sums on finite alphabets")]
pub struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
    /// Write the report here instead of standard output.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Backend {
    Markov,
    Iid,
    Cont,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum SourceKind {
    Iid,
    Markov,
    Cont,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum TailSide {
    Ge,
    Le,
}

/// `lo:hi:step`, or a single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        if self.step == 0.0 || self.hi == self.lo {
            return vec![self.lo];
        }
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.lo + i as f64 * self.step).collect()
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad number {p:?}: {e}")))
            .collect::<Result<_, _>>()?;
        let g = match parts[..] {
            [v] => Grid { lo: v, hi: v, step: 0.0 },
            [lo, hi, step] => Grid { lo, hi, step },
            _ => return Err("expected a value or lo:hi:step".into()),
        };
        if !(g.lo.is_finite() && g.hi.is_finite() && g.step.is_finite()) || g.hi < g.lo || g.step < 0.0 {
            return Err("need finite lo <= hi and step >= 0".into());
        }
        if g.hi > g.lo && g.step == 0.0 {
            return Err("a range needs a positive step".into());
        }
        if g.step > 0.0 && (g.hi - g.lo) / g.step > 1e7 {
            return Err("grid has more than 10^7 points".into());
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Subcommand, Serialize)]
pub enum Command {
    /// Check a model file and report its structure.
    Validate {
        #[serde(skip)]
        model: PathBuf,
        /// Largest power searched for a Doeblin certificate.
        #[arg(long, default_value_t = 64)]
        doeblin_max: usize,
    },
    /// Tabulate the rate function J(u) of S_N/N.
    Rate {
        backend: Backend,
        #[serde(skip)]
        model: PathBuf,
        /// Expected arity of the observable.
        #[arg(long)]
        k: Option<usize>,
        /// Levels kept in the i.i.d. series.
        #[arg(long, default_value_t = 40)]
        lmax: usize,
        /// Search window for the maximising λ.
        #[arg(long, default_value = "-20:20:0.1", allow_hyphen_values = true)]
        lambda: Grid,
        /// Points u; defaults to 41 points spanning the observable's range.
        #[arg(long, allow_hyphen_values = true)]
        u: Option<Grid>,
        #[arg(long)]
        observable: Option<String>,
        /// Time change α₁ of the first schedule entry (continuous backend).
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Evaluate the log-moment functional Q(λF).
    Q {
        #[serde(skip)]
        model: PathBuf,
        #[arg(long, value_enum)]
        backend: Option<Backend>,
        #[arg(long, default_value = "1", allow_hyphen_values = true)]
        lambda: Grid,
        #[arg(long, default_value_t = 40)]
        lmax: usize,
        #[arg(long)]
        observable: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Census of the multiplicative chains of {1..N} for the first k primes.
    Lattice {
        #[arg(long)]
        k: usize,
        #[arg(long = "N")]
        n: u64,
        /// Levels tabulated.
        #[arg(long, default_value_t = 8)]
        levels: usize,
    },
    /// Monte Carlo replicates of S_N (or S_T), or an empirical tail exponent.
    Simulate {
        #[serde(skip)]
        model: PathBuf,
        /// Horizon N (discrete) or T (continuous).
        #[arg(long = "N", visible_alias = "T")]
        horizon: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, value_enum)]
        source: Option<SourceKind>,
        #[arg(long)]
        observable: Option<String>,
        /// Threshold for S_N/N; switches to an empirical rate record.
        #[arg(long, allow_hyphen_values = true)]
        u: Option<f64>,
        #[arg(long, value_enum, default_value = "ge")]
        side: TailSide,
        /// Exponential tilt: a number, or `auto` for the tilt centred at u.
        #[arg(long, allow_hyphen_values = true)]
        tilt: Option<String>,
    },
    /// Topological pressure of the model's subshift and the dynamical Q.
    Pressure {
        #[serde(skip)]
        model: PathBuf,
        #[arg(long)]
        observable: Option<String>,
    },
    /// Slow motion driven by the model against its averaged path.
    Average {
        #[serde(skip)]
        model: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long = "T")]
        horizon: f64,
        #[arg(long)]
        observable: Option<String>,
        /// Initial slow state.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        xi0: f64,
        /// Instead compare both sides of the exponential-moment identity
        /// for the observable as a constant potential.
        #[arg(long)]
        moment: bool,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Moderate-deviation variance: series value and Monte Carlo estimate.
    Mdp {
        #[serde(skip)]
        model: PathBuf,
        #[arg(long = "N")]
        n: u64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0.25)]
        kappa: f64,
        #[arg(long, default_value_t = 40)]
        lmax: usize,
        #[arg(long)]
        observable: Option<String>,
    },
    /// Compare Q(W) with the supremum of the Donsker–Varadhan dual.
    Duality {
        #[serde(skip)]
        model: PathBuf,
        #[arg(long, value_enum)]
        backend: Option<Backend>,
        #[arg(long)]
        observable: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] nonconv::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use nonconv::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(E::NonConvergence { .. } | E::SupremumUnbounded { .. } | E::Degenerate | E::StepUnstable { .. }) => 3,
            CliError::Core(_) | CliError::Io { .. } => 2,
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("NONCONV_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("NONCONV_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))
}

fn run(cli: Cli) -> Result<bool, CliError> {
    configure_threads()?;
    let report = commands::dispatch(&cli)?;
    let text = report.render(cli.format);
    match &cli.output {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Io { path: path.display().to_string(), source })?,
        None => print!("{text}"),
    }
    eprintln!("{}", report.headline());
    Ok(report.flagged)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
