use clap::error::ErrorKind;
use clap::Parser;

use simulseg::cli::{self, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help/--version are not failures
            if matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) {
                print!("{}", err);
                std::process::exit(0);
            }
            eprint!("{}", err);
            std::process::exit(1);
        }
    };
    if let Err(err) = cli::run(cli) {
        eprintln!("error: {}", err.message());
        std::process::exit(err.exit_code());
    }
}
