use std::process::ExitCode;

fn main() -> ExitCode {
    match waterline::cli::run(std::env::args()) {
        Ok(message) => {
            println!("{message}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
