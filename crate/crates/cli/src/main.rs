use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = ave_cli::Cli::parse();
    let (mut out, mut err) = (std::io::stdout(), std::io::stderr());
    let mut io = ave_cli::commands::Io {
        out: &mut out,
        err: &mut err,
    };
    match ave_cli::run(cli, &mut io) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
