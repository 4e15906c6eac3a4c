use clap::Parser;
use eot_cli::{run, threads_from_env, Command, RunOptions};
use std::path::PathBuf;
use std::process::ExitCode;

/// Entropic optimal transport experiments.
///
/// Exit status: 0 when every assertion passes, 1 when one fails, 2 on a
/// solver error, 3 on a config or I/O error. Set EOT_THREADS to use more
/// than one worker thread.
#[derive(Debug, Parser)]
#[command(name = "eot", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Seed for random instances; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = threads_from_env();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        eprintln!("eot: cannot start {threads} worker threads: {e}");
        return ExitCode::from(3);
    }
    let opts = RunOptions {
        command: cli.command,
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        threads,
    };
    match run(&opts) {
        Ok(outcome) => {
            let m = &outcome.manifest;
            println!("{} {:?} run {}", cli.command.name(), m.status, m.run_id);
            if let Some(err) = &m.error {
                eprintln!("eot: {}", err.message);
            }
            for a in m.assertions.iter().filter(|a| !a.passed) {
                eprintln!("eot: assertion failed: {} = {:?}", a.metric, a.value);
            }
            ExitCode::from(outcome.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("eot: {e}");
            ExitCode::from(3)
        }
    }
}
