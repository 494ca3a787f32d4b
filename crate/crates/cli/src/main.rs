use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rdsgd_cli::{commands, CliError, Source};

/// Simulate and analyse private, Byzantine-robust decentralized SGD.
#[derive(Parser)]
#[command(name = "rdsgd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a leaf, e.g. `noise.C=0`. Repeatable; later ones win.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory, replacing `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run seed, applied after every `--set`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn source(self) -> Source {
        Source { config: self.config, sets: self.sets, seed: self.seed, out: self.out }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics, mixing and privacy reports.
    Run(Common),
    /// Run once per value of one configuration leaf.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Leaf to vary, e.g. `noise.C` or `rule.name`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
    /// Mixing analysis (λ, χ², ρ bounds) of every rule on the configured graph.
    Analyze(Common),
    /// Privacy budget over noise multipliers and iteration counts.
    Privacy {
        #[command(flatten)]
        common: Common,
        /// Noise multipliers; defaults to `noise.C`.
        #[arg(long = "c", value_delimiter = ',')]
        cs: Vec<f64>,
        /// Iteration counts; defaults to `run.K`.
        #[arg(long = "k", value_delimiter = ',')]
        ks: Vec<u64>,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(common) => {
            let o = commands::run_experiment(&common.source().experiment()?)?;
            println!(
                "wrote {}: final f_best {:.6e}, H {:.6e}, epsilon {:.6}",
                o.out_dir.display(),
                o.final_f_best,
                o.final_h,
                o.epsilon
            );
        }
        Command::Sweep { common, axis, values } => {
            let outcomes = commands::sweep(&common.source(), &axis, &values)?;
            for (v, o) in values.iter().zip(&outcomes) {
                println!(
                    "{axis}={v}: final f_best {:.6e}, H {:.6e}, epsilon {:.6}",
                    o.final_f_best, o.final_h, o.epsilon
                );
            }
        }
        Command::Analyze(common) => {
            let (csv, skipped) = commands::analyze(&common.source().experiment()?)?;
            print!("{csv}");
            for s in skipped {
                eprintln!("skipped {s}");
            }
        }
        Command::Privacy { common, cs, ks } => {
            let source = common.source();
            let table = commands::privacy_table(&source.experiment()?, &cs, &ks)?;
            if let Some(dir) = &source.out {
                std::fs::create_dir_all(dir).map_err(|e| CliError::Io { path: dir.clone(), source: e })?;
                let path = dir.join("privacy_table.csv");
                std::fs::write(&path, &table).map_err(|e| CliError::Io { path, source: e })?;
            }
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
