use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use crve_cli::commands::{cmd_diagnose, cmd_fit, cmd_oracle_check, cmd_simulate, preset_listing};
use crve_cli::config::{Cli, Command, FileConfig};
use crve_cli::error::{CliError, Result};

fn run(cli: Cli) -> Result<i32> {
    let file = match &cli.config {
        Some(path) => FileConfig::read(path)?,
        None => FileConfig::default(),
    };
    let format = cli.format.or(file.format).unwrap_or_default();
    let output = cli.output.clone().or(file.output.clone());
    if let Some(threads) = cli.threads.or(file.threads) {
        if threads == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start thread pool: {e}")))?;
    }
    crve_core::use_sequential_linalg();

    let mut code = 0;
    let text = match cli.command {
        Command::Fit { data, infer } => {
            cmd_fit(&data.merged(&file.data), &infer.merged(&file.infer))?.render(format)?
        }
        Command::Diagnose { data } => cmd_diagnose(&data.merged(&file.data))?.render(format)?,
        Command::Simulate(args) => match cmd_simulate(&args.merged(&file.simulate))? {
            Some(report) => report.render(format)?,
            None => preset_listing(),
        },
        Command::OracleCheck(args) => {
            let report = cmd_oracle_check(&args.merged(&file.oracle))?;
            if !report.passed {
                code = 4;
            }
            report.render(format)?
        }
    };
    match output {
        Some(path) => std::fs::write(&path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
