use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use floquet_defect::cli::{
    run_scenario, write_file, CliError, Format, Manifest, RunConfig, Scenario, EXIT_CONFIG,
    EXIT_VERIFY_FAILED,
};

#[derive(Debug, Parser)]
#[command(
    version,
    about = "Band structure, defect modes and scattering of 1D periodic stacks"
)]
struct Args {
    #[arg(value_enum)]
    subcommand: Scenario,
    /// JSON run configuration (not needed for `verify`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; stdout when absent. A manifest is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Worker threads; defaults to the machine parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

fn run(args: &Args) -> Result<bool, CliError> {
    let start = Instant::now();
    if let Some(j) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }
    let cfg = match (&args.config, args.subcommand) {
        (Some(p), _) => Some(RunConfig::load(p)?),
        (None, Scenario::Verify) => None,
        (None, _) => {
            return Err(CliError::Config(
                "--config is required for this subcommand".into(),
            ))
        }
    };
    let mut notes = Vec::new();
    let table = match &cfg {
        Some(c) => run_scenario(args.subcommand, c, &mut notes)?,
        None => floquet_defect::cli::verify_table(&floquet_defect::verify::run_all()),
    };
    let passed = args.subcommand != Scenario::Verify
        || table
            .rows
            .iter()
            .all(|r| r[2] == floquet_defect::cli::Cell::S("PASS".into()));
    let text = table.render(args.format);
    for n in &notes {
        eprintln!("note: {n}");
    }
    match &args.out {
        None => print!("{text}"),
        Some(path) => {
            write_file(path, &text)?;
            let manifest = Manifest {
                tool: env!("CARGO_PKG_NAME"),
                version: env!("CARGO_PKG_VERSION"),
                scenario: args.subcommand,
                output: path.display().to_string(),
                config: cfg.as_ref(),
                notes: &notes,
                wall_time_seconds: start.elapsed().as_secs_f64(),
            };
            let mut mpath = path.clone().into_os_string();
            mpath.push(".manifest.json");
            let body =
                serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
            write_file(&PathBuf::from(mpath), &body)?;
        }
    }
    Ok(passed)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VERIFY_FAILED as u8),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
