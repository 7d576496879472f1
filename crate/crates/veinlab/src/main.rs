use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

/// Numerical laboratory for a coupled transport network model: simulate
/// the system, verify its derived identities, run convergence studies,
/// profile De Giorgi truncation levels, and probe heat-potential bounds.
///
/// Exit status: 0 when every mode-specific check passes, 1 when the run
/// finished but a check failed (or a runtime error occurred), 2 for
/// configuration or usage errors.
#[derive(Parser)]
#[command(name = "veinlab", version)]
struct Cli {
    /// Run configuration file (one `key = value` per line).
    #[arg(long)]
    config: PathBuf,

    /// Override the mode from the config file
    /// (simulate | verify | mms | degiorgi | heatpot).
    #[arg(long)]
    mode: Option<String>,

    /// Output directory; wins over both the config file and the
    /// VEINLAB_OUT environment variable.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match veinlab::run::execute(&cli.config, cli.mode.as_deref(), cli.out.as_deref()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(failure) => {
            eprintln!("{failure}");
            match failure {
                veinlab::run::Failure::Usage(_) => ExitCode::from(2),
                veinlab::run::Failure::Runtime(_) => ExitCode::from(1),
            }
        }
    }
}
