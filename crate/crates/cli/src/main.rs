use std::process::ExitCode;

use clap::Parser;
use deda_cli::config::{log_level, BACKEND_ENV};
use deda_cli::{commands, resolve, Cli, FileConfig, EXIT_INPUT};

fn run(cli: &Cli) -> anyhow::Result<u8> {
    let file = match &cli.global.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    env_logger::Builder::new().filter_level(log_level(cli, &file)?).format_timestamp(None).init();
    let env_backend = std::env::var(BACKEND_ENV).ok().filter(|s| !s.is_empty());
    let resolved = resolve(cli, &file, env_backend.as_deref())?;
    Ok(commands::execute(&resolved)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
