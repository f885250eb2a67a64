use std::process::ExitCode;

use clap::Parser;
use matchkit_cli::{configure_threads, run, Cli, EXIT_INPUT, EXIT_OK, THREADS_ENV};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    // clap's own usage exit code would collide with the non-convergence code
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { EXIT_OK });
        }
    };
    if let Err(e) = configure_threads(std::env::var(THREADS_ENV).ok().as_deref()) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_INPUT);
    }
    let code = run(&cli, &mut std::io::stdout().lock());
    ExitCode::from(code)
}
