use std::process::ExitCode;

fn main() -> ExitCode {
    singleprop::cli::run()
}
