use std::process::ExitCode;

fn main() -> ExitCode {
    pkgrec::cli::main_entry()
}
