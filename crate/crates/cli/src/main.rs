use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use hudcalib_cli::error::CliError;
use hudcalib_cli::Cli;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp
            | ErrorKind::DisplayVersion
            | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => e.exit(),
            _ => {
                let err = CliError::usage("invalid arguments", e.render().to_string().trim());
                eprintln!("{}", err.to_line());
                return ExitCode::from(err.exit);
            }
        },
    };
    match hudcalib_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit)
        }
    }
}
