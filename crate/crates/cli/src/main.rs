use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vofrac_cli::{compare_files, run, CliError, RunOptions, Task};

#[derive(Parser, Debug)]
#[command(name = "vofrac", version, about = "Variable-order time-fractional diffusion: forward solves, DtN maps and coefficient recovery")]
struct Args {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Replace one configuration value, e.g. `solver.theta=2.0`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Seed for randomized sampling; overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the forward problem and write `solution.csv`.
    Solve,
    /// Compute DtN records and write `dtn.csv`.
    Dtn,
    /// Recover alpha, rho and q from Laplace-domain DtN data.
    Invert,
    /// Check the sectorial resolvent bound at random shifts.
    VerifyResolvent,
    /// Run a reference solver (eigen or L1) with the solver's output schema.
    Oracle,
    /// Compare two result CSVs column by column.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tolerance: f64,
    },
}

fn dispatch(args: Args) -> Result<(), CliError> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("--threads: {e}")))?;
    }
    let task = match args.command {
        Command::Compare { a, b, tolerance } => {
            let report = compare_files(&a, &b, tolerance)?;
            let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
            println!("{text}");
            if !report.pass {
                return Err(CliError::Runtime(format!("files differ beyond tolerance {tolerance}")));
            }
            return Ok(());
        }
        Command::Solve => Task::Solve,
        Command::Dtn => Task::Dtn,
        Command::Invert => Task::Invert,
        Command::VerifyResolvent => Task::VerifyResolvent,
        Command::Oracle => Task::Oracle,
    };
    let config = args
        .config
        .ok_or_else(|| CliError::config("--config is required for this subcommand"))?;
    let options = RunOptions {
        overrides: args.overrides,
        out_dir: args.out_dir,
        seed: args.seed,
    };
    let outcome = run(task, &config, &options)?;
    for f in &outcome.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vofrac: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
