use clap::Parser;
use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = volterra_cli::Cli::parse();
    match volterra_cli::run(&cli) {
        Ok(outcome) => {
            print!("{}", outcome.stdout);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
