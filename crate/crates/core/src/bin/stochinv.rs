use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use stochinv::cli::{configure_workers, run, Cli, EXIT_ERROR};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_workers() {
        eprintln!("stochinv: {e}");
        return ExitCode::from(EXIT_ERROR as u8);
    }
    let outcome = run(&cli);
    // a closed pipe is not worth a panic
    let _ = writeln!(std::io::stdout().lock(), "{}", outcome.render());
    ExitCode::from(outcome.code as u8)
}
