use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lobbench::harness::report::{emit_reports, load_report, RunManifest};
use lobbench::harness::{featurize, run_experiment, ExperimentConfig};
use lobbench::ingest::{self, QuoteFormat};
use lobbench::synth::{self, SynthConfig};

#[derive(Parser)]
#[command(name = "lobbench", version, about = "Limit order book movement-classification benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic quote file.
    Synth(SynthArgs),
    /// Parse and clean a quote file.
    Clean(CleanArgs),
    /// Build the feature matrix of a quote file as CSV.
    Featurize(FeaturizeArgs),
    /// Run a benchmark from a config file or a previous run's manifest.
    Experiment(ExperimentArgs),
    /// Rewrite the report tables from a saved report.json.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// TOML file with generator settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    events: Option<usize>,
    #[arg(long)]
    days: Option<u32>,
    /// Planted trend strength in [0, 1].
    #[arg(long)]
    strength: Option<f64>,
    #[arg(long, default_value = "SYN")]
    symbol: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InputArgs {
    /// Quote file in the delimited format.
    #[arg(long)]
    input: PathBuf,
    /// TOML file describing the column layout (defaults to the built-in layout).
    #[arg(long)]
    format: Option<PathBuf>,
}

#[derive(Args)]
struct CleanArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Where to write the surviving events.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "SYM")]
    symbol: String,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Experiment config supplying k, alpha and the FPCA settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Append the previous day's FPC scores.
    #[arg(long)]
    fpca: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    config: Option<PathBuf>,
    /// Rerun the exact config recorded in a manifest.json.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// report.json written by a previous experiment.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_format(path: Option<&Path>) -> Result<QuoteFormat> {
    match path {
        Some(p) => read_toml(p),
        None => Ok(QuoteFormat::default()),
    }
}

fn load_clean(input: &InputArgs) -> Result<(Vec<ingest::QuoteEvent>, ingest::CleaningReport)> {
    let format = load_format(input.format.as_deref())?;
    let parsed = ingest::parse_quote_file(&input.input, &format)?;
    for d in &parsed.diagnostics {
        log::warn!("{}:{}: {}", input.input.display(), d.line, d.message);
    }
    if !parsed.diagnostics.is_empty() {
        eprintln!("{} unparseable lines skipped", parsed.diagnostics.len());
    }
    Ok(ingest::clean(&parsed.records)?)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut c: SynthConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.events {
        c.n_events = v;
    }
    if let Some(v) = a.days {
        c.n_days = v;
    }
    if let Some(v) = a.strength {
        c.trend_signal_strength = v;
    }
    let events = synth::generate(&c)?;
    ingest::write_events_file(&a.out, &a.symbol, &events)?;
    eprintln!("wrote {} events to {}", events.len(), a.out.display());
    Ok(())
}

fn cmd_clean(a: CleanArgs) -> Result<()> {
    let (events, report) = load_clean(&a.input)?;
    ingest::write_events_file(&a.out, &a.symbol, &events)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_featurize(a: FeaturizeArgs) -> Result<()> {
    let mut c = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(k) = a.k {
        c.k = k;
    }
    if let Some(alpha) = a.alpha {
        c.alpha = alpha;
    }
    c.validate_features()?;
    let (events, report) = load_clean(&a.input)?;
    eprintln!("{} of {} records kept after cleaning", report.total_out, report.total_in);
    let (matrix, n_fpc, _, dropped) = featurize(&events, &c, a.fpca)?;
    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut w = BufWriter::new(file);
    matrix.write_csv(&mut w)?;
    w.flush()?;
    eprintln!(
        "wrote {} rows, {} FPC columns ({} rows without history dropped) to {}",
        matrix.len(),
        n_fpc,
        dropped,
        a.out.display()
    );
    Ok(())
}

/// Returns whether failed repeats stayed within the configured budget.
fn cmd_experiment(a: ExperimentArgs) -> Result<bool> {
    let mut c = match (&a.config, &a.manifest) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(m)) => RunManifest::load(m)?.config,
        (None, None) => bail!("either --config or --manifest is required"),
    };
    if let Some(seed) = a.seed {
        c.seed = seed;
    }
    c.validate()?;
    let report = run_experiment(&c, a.jobs)?;
    let written = emit_reports(&report, &a.out)?;
    for s in &report.stocks {
        if let Some(e) = &s.error {
            eprintln!("{}: {}", s.symbol, e);
        }
    }
    eprintln!(
        "{} files written to {}; {} failed repeats",
        written.len(),
        a.out.display(),
        report.failed_repeats()
    );
    Ok(report.within_failure_budget())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let report = load_report(&a.input)?;
    let written = emit_reports(&report, &a.out)?;
    eprintln!("{} files written to {}", written.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a).map(|_| true),
        Command::Clean(a) => cmd_clean(a).map(|_| true),
        Command::Featurize(a) => cmd_featurize(a).map(|_| true),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Report(a) => cmd_report(a).map(|_| true),
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
