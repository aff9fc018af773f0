use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(ppgbench_cli::dispatch(std::env::args_os()))
}
