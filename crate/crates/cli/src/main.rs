mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "fwdshape", version, about = "Arbitrage-free shaping of power forward curves")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Estimate shaping coefficients from a quote file.
    Fit(FitCommand),
    /// Shape a parent price down a cascade of levels.
    Predict(PredictCommand),
    /// Compare methods in and out of sample.
    Backtest(BacktestCommand),
    /// List cases the robust fit downweights.
    Outliers(OutliersCommand),
    /// Report the no-arbitrage gap of a coefficient set.
    CheckArbitrage(CheckCommand),
    /// Write a synthetic quote file with known coefficients.
    Simulate(SimulateCommand),
}

#[derive(Args)]
pub struct DataArgs {
    /// Quote CSV with header `quote_date,contract,price`.
    #[arg(long)]
    pub quotes: PathBuf,
    /// Split config (TOML).
    #[arg(long)]
    pub split: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum WeightFn {
    Hampel,
    Bisquare,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Scale {
    Mad,
    Qn,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaArg {
    Auto,
    Fixed(f64),
}

fn parse_alpha(s: &str) -> Result<AlphaArg, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(AlphaArg::Auto);
    }
    match s.parse::<f64>() {
        Ok(a) if a >= 0.0 && a.is_finite() => Ok(AlphaArg::Fixed(a)),
        _ => Err(format!("expected `auto` or a non-negative number, got `{s}`")),
    }
}

#[derive(Args)]
pub struct FitArgs {
    /// Penalty weight: `auto` (multiplier x N x Qn of the child prices) or a number.
    #[arg(long, default_value = "auto", value_parser = parse_alpha)]
    pub alpha: AlphaArg,
    #[arg(long, default_value_t = 1.0)]
    pub alpha_multiplier: f64,
    #[arg(long, value_enum, default_value_t = WeightFn::Hampel)]
    pub weight_fn: WeightFn,
    /// Hampel cutoffs `a,b,r`.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub hampel: Option<Vec<f64>>,
    #[arg(long)]
    pub bisquare_k: Option<f64>,
    /// Scale used to standardize residual columns.
    #[arg(long, value_enum, default_value_t = Scale::Mad)]
    pub scale: Scale,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iterations: usize,
    /// Largest accepted no-arbitrage gap before the penalty is raised.
    #[arg(long, default_value_t = 1e-6)]
    pub gap_tol: f64,
    /// Times the penalty may be multiplied by 10 to reach `--gap-tol`.
    #[arg(long, default_value_t = 1)]
    pub escalations: u32,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum MatchArg {
    KeepIntercept,
    KeepSlope,
}

#[derive(Args)]
pub struct FitCommand {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "mcrm")]
    pub method: String,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Only use quotes on or after this date.
    #[arg(long)]
    pub from: Option<NaiveDate>,
    /// Only use quotes on or before this date.
    #[arg(long)]
    pub to: Option<NaiveDate>,
    /// Pin a child to traded coefficients: `LABEL=A,B` (repeatable).
    #[arg(long = "pin")]
    pub pins: Vec<String>,
    /// Match a traded child price: `LABEL=PRICE@PARENT` (repeatable).
    #[arg(long = "traded")]
    pub traded: Vec<String>,
    #[arg(long, value_enum, default_value_t = MatchArg::KeepIntercept)]
    pub match_mode: MatchArg,
    /// Report path (JSON); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictCommand {
    /// Cascade config (TOML).
    #[arg(long)]
    pub cascade: PathBuf,
    /// Fit report whose coefficients replace those of `--level`.
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
    /// Level receiving `--coeffs`; the first level when omitted.
    #[arg(long)]
    pub level: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub parent_price: f64,
    /// Period to price, e.g. `Q2-2014` or `H-2014-04-05-03`.
    #[arg(long)]
    pub target: String,
    /// Emit every period of this granularity inside the target instead.
    #[arg(long)]
    pub granularity: Option<String>,
    /// Contract quoted at `--parent-price`; the enclosing root period of the target when omitted.
    #[arg(long)]
    pub root: Option<String>,
    /// Curve path (CSV); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<(NaiveDate, NaiveDate), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected FROM..TO, got `{s}`"))?;
    let parse = |d: &str| d.trim().parse::<NaiveDate>().map_err(|e| format!("bad date `{d}`: {e}"));
    let (from, to) = (parse(a)?, parse(b)?);
    if from > to {
        return Err(format!("range `{s}` ends before it starts"));
    }
    Ok((from, to))
}

#[derive(Args)]
pub struct BacktestCommand {
    #[command(flatten)]
    pub data: DataArgs,
    /// Training quote dates `FROM..TO`.
    #[arg(long, value_parser = parse_range)]
    pub train: (NaiveDate, NaiveDate),
    /// Test quote dates `FROM..TO`.
    #[arg(long, value_parser = parse_range)]
    pub test: (NaiveDate, NaiveDate),
    #[arg(long, value_delimiter = ',', default_value = "mcrm,classical,ratio-average")]
    pub methods: Vec<String>,
    /// Refit before each test date on all earlier quotes.
    #[arg(long)]
    pub expanding: bool,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Comparison table path (CSV); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct OutliersCommand {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, default_value_t = 0.6)]
    pub threshold: f64,
    /// Flagged cases (CSV); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Every case with weight, prices and flag (CSV).
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
}

#[derive(Args)]
pub struct CheckCommand {
    #[arg(long)]
    pub split: PathBuf,
    /// Fit report (JSON).
    #[arg(long, conflicts_with = "gamma", required_unless_present = "gamma")]
    pub coeffs: Option<PathBuf>,
    /// Coefficients `A1,B1,A2,B2,...`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub gamma: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Args)]
pub struct SimulateCommand {
    /// Generator config (TOML); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_dates: Option<usize>,
    /// Uncontaminated business days appended after the main sample.
    #[arg(long)]
    pub clean_tail: Option<usize>,
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Outlier size in noise scales (vertical) or parent multiple (leverage).
    #[arg(long)]
    pub magnitude: Option<f64>,
    /// Noise scale, one value or one per child.
    #[arg(long, value_delimiter = ',')]
    pub noise: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub contamination: Option<ContaminationArg>,
    /// True coefficients `A1,B1,...`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub gamma: Option<Vec<f64>>,
    /// Quote CSV path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Contamination labels (CSV).
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ContaminationArg {
    Vertical,
    Leverage,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_USAGE } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
