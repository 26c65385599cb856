use clap::Parser;

use sitaware_cli::{execute, Cli, CliError};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = execute(&cli.command) {
        eprintln!("sitaware {}: {e}", cli.command.name());
        if let CliError::Core(sitaware_core::Error::Validation(v)) = &e {
            for violation in v {
                eprintln!("  - {violation}");
            }
        }
        std::process::exit(e.exit_code());
    }
}
