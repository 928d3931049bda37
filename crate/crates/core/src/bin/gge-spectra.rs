use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gge_spectra::cli;

#[derive(Parser)]
#[command(name = "gge-spectra", version, about = "Generalized Gibbs ensembles: sampling, transfer operators and CLT checks")]
struct Args {
    /// Worker threads (overridden by GGE_SPECTRA_THREADS; default: all logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML/JSON spec file or a preset name.
    Run {
        spec: String,
        /// Root directory of the results.
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// List the built-in experiments.
    Presets {
        #[arg(long)]
        json: bool,
    },
    /// Seed inspection.
    Seeds {
        #[command(subcommand)]
        command: SeedsCommand,
    },
}

#[derive(Subcommand)]
enum SeedsCommand {
    /// Print the seed and weed of Tr P(L) as JSON.
    Print {
        #[arg(long)]
        model: String,
        #[arg(long)]
        potential: String,
        /// Lattice size.
        #[arg(long, default_value_t = 12)]
        n: usize,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    match cli::thread_count(args.threads) {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("error: thread pool: {e}");
                return ExitCode::from(2);
            }
        }
        Ok(None) => {}
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match args.command {
        Command::Run { spec, out } => {
            let spec = match cli::resolve_spec(&spec) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let outcome = cli::run(&spec, &out);
            for line in &outcome.log {
                eprintln!("{line}");
            }
            println!("{}", outcome.dir.display());
            ExitCode::from(outcome.exit_code as u8)
        }
        Command::Presets { json } => {
            if json {
                match cli::to_json(&cli::presets()) {
                    Ok(s) => print!("{s}"),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(1);
                    }
                }
            } else {
                print!("{}", cli::preset_table());
            }
            ExitCode::SUCCESS
        }
        Command::Seeds { command: SeedsCommand::Print { model, potential, n } } => {
            match cli::seed_report(&model, &potential, n).and_then(|v| cli::to_json(&v)) {
                Ok(s) => {
                    print!("{s}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
