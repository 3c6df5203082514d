use std::process::ExitCode;

fn main() -> ExitCode {
    byzline::cli::main()
}
