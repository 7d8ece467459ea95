use clap::Parser;
use qsk_core::cli::{emit, run, Format, HarnessConfig, SUITES};
use std::path::PathBuf;
use std::process::ExitCode;

/// Runs the seeded verification suites described by a TOML config.
///
/// Exit status is 0 iff every record passes, 1 if some record fails and 2
/// on a config or I/O error. `VERIFY_THREADS` caps the worker count.
#[derive(Parser, Debug)]
#[command(name = "verify", version)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Restrict to these suites (repeatable); overrides the config list.
    #[arg(long = "suite", value_parser = clap::builder::PossibleValuesParser::new(SUITES))]
    suites: Vec<String>,
    #[arg(long)]
    seed_count: Option<usize>,
    /// Output file; stdout when neither this nor the config names one.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut cfg = match HarnessConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("verify: {e}");
            return ExitCode::from(2);
        }
    };
    if !args.suites.is_empty() {
        cfg.suites = args.suites;
    }
    if let Some(k) = args.seed_count {
        cfg.seed_count = k;
    }
    if args.out.is_some() {
        cfg.output = args.out;
    }
    if args.format.is_some() {
        cfg.format = args.format;
    }
    let report = match run(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("verify: {e}");
            return ExitCode::from(2);
        }
    };
    let format = cfg.format.unwrap_or(Format::Json);
    match emit(&report, format, cfg.output.as_deref()) {
        Ok(Some(text)) => print!("{text}"),
        Ok(None) => {}
        Err(e) => {
            eprintln!("verify: {e}");
            return ExitCode::from(2);
        }
    }
    let failed: usize = report.suites.values().map(|s| s.failed).sum();
    eprintln!(
        "verify: {} records, {failed} failed, {:.2} s",
        report.records.len(),
        report.runtime_seconds
    );
    if report.aggregate_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
