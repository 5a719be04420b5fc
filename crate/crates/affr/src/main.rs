use std::process::ExitCode;

fn main() -> ExitCode {
    match affr::cli::run(std::env::args()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
