use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use qlevel_cli::failure::{CliError, EXIT_OK};
use qlevel_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::from(EXIT_OK as u8);
        }
        Err(e) => fail(CliError::usage(e.render().to_string().trim().to_string())),
    };
    match run(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::from(EXIT_OK as u8)
        }
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ! {
    eprintln!("{}", e.to_json());
    std::process::exit(e.code)
}
