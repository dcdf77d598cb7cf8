use std::process::ExitCode;

fn main() -> ExitCode {
    match intentkg_gateway::cli::main(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
