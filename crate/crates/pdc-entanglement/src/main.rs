use std::process::ExitCode;

fn main() -> ExitCode {
    pdc_entanglement::cli::run()
}
