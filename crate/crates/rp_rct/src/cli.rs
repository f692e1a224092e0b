//! Command-line interface: design reporting, closed-form power
//! calculations, trial simulation, and dataset analysis.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::dataio::{
    read_table, render_report, write_dataset, write_sidecar, DatasetSchema, DesignEcho,
    EstimateReport, ObservedTable, ReportFormat,
};
use crate::design::{self, DesignSpec};
use crate::error::{Error, Result};
use crate::estimate::{
    covariate_balance, AnalysisOptions, BootstrapConfig, LambdaMode,
};
use crate::glm::{FitConfig, Frame, SelectionDirection};
use crate::simulate::{run_trial, SimulationConfig};
use crate::rng::{substream, StreamKind};

#[derive(Debug, Parser)]
#[command(
    name = "rp-rct",
    version,
    about = "Design, simulate, and analyze randomized trials with privatized binary outcomes"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Report the privacy, identification, and efficiency properties of a design
    Design(DesignArgs),
    /// Closed-form sample sizes over a grid of privacy budgets and effects
    Power(PowerArgs),
    /// Generate a synthetic trial dataset plus a ground-truth sidecar
    Simulate(SimulateArgs),
    /// Estimate the cheater rate and treatment effects from a dataset
    Estimate(EstimateArgs),
}

fn parse_format(s: &str) -> Result<ReportFormat> {
    s.parse()
}

#[derive(Debug, Args)]
struct DesignArgs {
    /// Design file (JSON with delta, frr1, frr2)
    #[arg(long, conflicts_with_all = ["epsilon", "gap"])]
    spec: Option<PathBuf>,

    /// Privacy budget for a solved symmetric two-device design
    #[arg(long, requires = "gap")]
    epsilon: Option<f64>,

    /// Forcing-rate gap between the two devices
    #[arg(long, requires = "epsilon")]
    gap: Option<f64>,

    /// Treatment assignment probability
    #[arg(long, default_value_t = 0.5)]
    delta: f64,

    /// Control-arm outcome rate for the efficiency quote
    #[arg(long, default_value_t = 0.5)]
    tau0: f64,

    /// Treated-arm outcome rate for the efficiency quote
    #[arg(long, default_value_t = 0.5)]
    tau1: f64,

    #[arg(long, default_value = "markdown", value_parser = parse_format)]
    format: ReportFormat,
}

#[derive(Debug, Args)]
struct PowerArgs {
    /// Privacy budgets, comma separated
    #[arg(long, required = true, value_delimiter = ',')]
    epsilon: Vec<f64>,

    /// Effect sizes (treated minus control rate), comma separated
    #[arg(long, required = true, value_delimiter = ',')]
    effect: Vec<f64>,

    /// Control-arm outcome rate
    #[arg(long, required = true)]
    tau0: f64,

    #[arg(long, default_value_t = 0.5)]
    delta: f64,

    #[arg(long, default_value_t = 0.05)]
    alpha: f64,

    /// Target power
    #[arg(long, default_value_t = 0.8)]
    power: f64,

    /// Anticipated cheater rate
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,

    #[arg(long, default_value = "markdown", value_parser = parse_format)]
    format: ReportFormat,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Simulation configuration (JSON)
    #[arg(long)]
    config: PathBuf,

    /// Random seed
    #[arg(long)]
    seed: u64,

    /// Output dataset path (CSV)
    #[arg(long)]
    out: PathBuf,

    /// Ground-truth sidecar path; defaults to the dataset path with a
    /// .truth.csv suffix
    #[arg(long)]
    truth: Option<PathBuf>,

    #[arg(long, default_value = "markdown", value_parser = parse_format)]
    format: ReportFormat,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Dataset path (CSV)
    #[arg(long)]
    data: PathBuf,

    /// Design file (JSON with delta, frr1, frr2)
    #[arg(long)]
    design: PathBuf,

    /// Dataset schema (JSON); defaults to a single y_tilde outcome with no
    /// covariates
    #[arg(long)]
    schema: Option<PathBuf>,

    /// Treat the cheater rate as known instead of estimating it
    #[arg(long)]
    fixed_lambda: Option<f64>,

    /// Skip covariate-adjusted estimation
    #[arg(long)]
    no_adjust: bool,

    /// Stepwise covariate selection: backward, forward, or all (no selection)
    #[arg(long, default_value = "backward")]
    selection: String,

    /// Drop collinear covariate columns instead of failing
    #[arg(long)]
    drop_collinear: bool,

    /// Skip the naive unadjusted difference
    #[arg(long)]
    no_classical: bool,

    /// Bootstrap replicates for confidence intervals (0 disables)
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,

    /// Seed for bootstrap resampling
    #[arg(long, default_value_t = 0x5eed_b007)]
    bootstrap_seed: u64,

    /// Bootstrap confidence level
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,

    /// Include a covariate balance table
    #[arg(long)]
    balance: bool,

    #[arg(long, default_value = "markdown", value_parser = parse_format)]
    format: ReportFormat,
}

impl Cli {
    /// Execute the parsed command, returning the text to print.
    pub fn run(&self) -> Result<String> {
        match &self.command {
            Command::Design(args) => cmd_design(args),
            Command::Power(args) => cmd_power(args),
            Command::Simulate(args) => cmd_simulate(args),
            Command::Estimate(args) => cmd_estimate(args),
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn fmt_eps(pl: &crate::mechanism::PrivacyLoss) -> String {
    if pl.is_infinite() {
        "inf".to_string()
    } else {
        format!("{:.4}", pl.value())
    }
}

fn cmd_design(args: &DesignArgs) -> Result<String> {
    let spec = match (&args.spec, args.epsilon, args.gap) {
        (Some(path), None, None) => read_json::<DesignSpec>(path)?,
        (None, Some(epsilon), Some(gap)) => {
            DesignSpec::symmetric_for_epsilon(epsilon, gap, args.delta)?
        }
        _ => {
            return Err(Error::InvalidParameter(
                "provide either --spec or both --epsilon and --gap".into(),
            ))
        }
    };
    let report = design::design_report(&spec, args.tau0, args.tau1)?;
    match args.format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(&report)?),
        ReportFormat::Markdown => {
            let mut out = String::new();
            out.push_str("# Trial design\n\n");
            out.push_str(&format!("- treated share (design): {:.3}\n", report.delta));
            out.push_str(&format!(
                "- device 1: force-zero {}, force-one {}\n",
                report.frr1.r0(),
                report.frr1.r1()
            ));
            out.push_str(&format!(
                "- device 2: force-zero {}, force-one {}\n",
                report.frr2.r0(),
                report.frr2.r1()
            ));
            out.push_str(&format!(
                "- privacy loss: strict {}, dominant-forced {}, one-sided {}\n",
                fmt_eps(&report.epsilon.strict),
                fmt_eps(&report.epsilon.dominant_forced),
                fmt_eps(&report.epsilon.one_sided)
            ));
            out.push_str(&format!("- masking factor: {:.4}\n", report.masking_factor));
            out.push_str(&format!(
                "- cheater-rate determinant: {:.4}\n",
                report.cheater_determinant
            ));
            out.push_str(&format!(
                "- relative efficiency at ({:.2}, {:.2}): {:.4} (se inflation {:.3}, \
                 sample-size multiplier {:.3}; {} basis)\n",
                report.tau0,
                report.tau1,
                report.efficiency.relative_efficiency,
                report.efficiency.se_inflation,
                report.efficiency.sample_size_multiplier,
                report.efficiency_epsilon_basis
            ));
            for w in &report.warnings {
                out.push_str(&format!("- warning: {w}\n"));
            }
            Ok(out)
        }
        ReportFormat::Csv => Err(Error::InvalidParameter(
            "the design report has no flat CSV form; use json or markdown".into(),
        )),
    }
}

#[derive(Debug, Serialize)]
struct PowerRow {
    epsilon: f64,
    effect: f64,
    n_required: u64,
    se_inflation: f64,
    sample_size_multiplier: f64,
}

fn cmd_power(args: &PowerArgs) -> Result<String> {
    let mut rows = Vec::new();
    for &epsilon in &args.epsilon {
        for &effect in &args.effect {
            let tau1 = args.tau0 + effect;
            let n = design::sample_size(
                epsilon,
                args.delta,
                args.tau0,
                tau1,
                effect,
                args.alpha,
                args.power,
                args.lambda,
            )?;
            let quote = design::relative_efficiency(epsilon, args.delta, args.tau0, tau1)?;
            rows.push(PowerRow {
                epsilon,
                effect,
                n_required: n,
                se_inflation: quote.se_inflation,
                sample_size_multiplier: quote.sample_size_multiplier,
            });
        }
    }
    match args.format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(&rows)?),
        ReportFormat::Markdown => {
            let mut out = String::new();
            out.push_str("# Required sample sizes\n\n");
            out.push_str(&format!(
                "Two-sided alpha {}, power {}, control rate {}, treated share {}, \
                 anticipated cheater rate {}.\n\n",
                args.alpha, args.power, args.tau0, args.delta, args.lambda
            ));
            out.push_str("| epsilon | effect | n required | se inflation | n multiplier |\n");
            out.push_str("|---|---|---|---|---|\n");
            for r in &rows {
                out.push_str(&format!(
                    "| {} | {} | {} | {:.3} | {:.3} |\n",
                    r.epsilon, r.effect, r.n_required, r.se_inflation, r.sample_size_multiplier
                ));
            }
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut writer = csv::Writer::from_writer(Vec::new());
            writer.write_record([
                "epsilon",
                "effect",
                "n_required",
                "se_inflation",
                "sample_size_multiplier",
            ])?;
            for r in &rows {
                writer.write_record([
                    r.epsilon.to_string(),
                    r.effect.to_string(),
                    r.n_required.to_string(),
                    r.se_inflation.to_string(),
                    r.sample_size_multiplier.to_string(),
                ])?;
            }
            let bytes = writer.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Schema(e.to_string()))
        }
    }
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    rows: usize,
    outcome: String,
    data_path: String,
    truth_path: String,
    realized_cheater_rate: f64,
    realized_honest_effect: f64,
}

fn default_truth_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    out.with_file_name(format!("{stem}.truth.csv"))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<String> {
    let text = std::fs::read_to_string(&args.config)?;
    let config = SimulationConfig::from_json(&text)?;
    let mut rng = substream(args.seed, StreamKind::Replicate, 0);
    let trial = run_trial(&config, &mut rng)?;

    let truth_path = args.truth.clone().unwrap_or_else(|| default_truth_path(&args.out));
    let rows = trial.dataset.n();
    let table = ObservedTable::new(vec![trial.dataset])?;
    write_dataset(&args.out, &table)?;
    write_sidecar(&truth_path, &trial.sidecar)?;

    let summary = SimulateSummary {
        rows,
        outcome: config.outcome_name.clone(),
        data_path: args.out.display().to_string(),
        truth_path: truth_path.display().to_string(),
        realized_cheater_rate: trial.truth.lambda,
        realized_honest_effect: trial.truth.tau_h,
    };
    match args.format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(&summary)?),
        _ => {
            let mut out = String::new();
            out.push_str("# Simulated trial\n\n");
            out.push_str(&format!("- rows: {}\n", summary.rows));
            out.push_str(&format!("- outcome: {}\n", summary.outcome));
            out.push_str(&format!("- data: {}\n", summary.data_path));
            out.push_str(&format!("- truth sidecar: {}\n", summary.truth_path));
            out.push_str(&format!(
                "- realized cheater rate: {:.4}\n",
                summary.realized_cheater_rate
            ));
            out.push_str(&format!(
                "- realized honest effect: {:.4}\n",
                summary.realized_honest_effect
            ));
            Ok(out)
        }
    }
}

fn cmd_estimate(args: &EstimateArgs) -> Result<String> {
    let design: DesignSpec = read_json(&args.design)?;
    let schema = match &args.schema {
        Some(path) => {
            let schema: DatasetSchema = read_json(path)?;
            schema.validate()?;
            schema
        }
        None => DatasetSchema::default(),
    };
    let table = read_table(&args.data, &schema)?;

    let selection = match args.selection.as_str() {
        "backward" => Some(SelectionDirection::Backward),
        "forward" => Some(SelectionDirection::Forward),
        "all" => None,
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown selection {other:?} (expected backward, forward, or all)"
            )))
        }
    };
    let lambda_mode = match args.fixed_lambda {
        Some(v) => LambdaMode::Fixed(v),
        None => LambdaMode::Estimated,
    };
    let opts = AnalysisOptions {
        lambda_mode,
        adjust: !args.no_adjust,
        selection,
        fit: FitConfig {
            drop_collinear: args.drop_collinear,
            ..FitConfig::default()
        },
        classical: !args.no_classical,
        bootstrap: (args.bootstrap > 0).then(|| BootstrapConfig {
            replicates: args.bootstrap,
            seed: args.bootstrap_seed,
            confidence: args.confidence,
        }),
    };

    let mut outcomes = Vec::new();
    for dataset in table.outcomes() {
        let (report, _) = crate::estimate::analyze_outcome(dataset, &design, &opts)?;
        outcomes.push(report);
    }

    let first = &table.outcomes()[0];
    let balance = if args.balance && !first.covariates().is_empty() {
        let frame = Frame::from_covariates(first.covariates(), first.n())?;
        Some(covariate_balance(&frame, first.treatment()))
    } else {
        None
    };

    let report = EstimateReport {
        n: table.n(),
        design: DesignEcho {
            delta: design.delta(),
            frr1: *design.frr1(),
            frr2: *design.frr2(),
            epsilon: design.epsilon()?,
            masking_factor: design.masking_factor(),
        },
        outcomes,
        balance,
    };
    render_report(&report, args.format)
}

/// Entry point shared by the binary: parse, run, map errors to exit codes.
pub fn main_with_exit() -> ! {
    if let Some(workers) = std::env::var_os("RPRCT_WORKERS") {
        let parsed = workers
            .to_str()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&w| w >= 1);
        match parsed {
            Some(w) => {
                // Ignore the error if a pool was already installed.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
            }
            None => {
                eprintln!("error: RPRCT_WORKERS must be a positive integer");
                std::process::exit(2);
            }
        }
    }
    let cli = Cli::parse();
    match cli.run() {
        Ok(text) => {
            println!("{text}");
            std::process::exit(0);
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(if e.is_usage() { 2 } else { 1 });
        }
    }
}
