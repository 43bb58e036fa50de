use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use instassoc::{commands, exit, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "instassoc", version, about = "Synthetic instance-association engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML); defaults apply when omitted.
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write evaluation sequences: scenes, detections, ground truth.
    Simulate(Common),
    /// Train an embedding head; writes head.bin and loss.csv.
    Train(Common),
    /// Track a detection file; writes tracks.csv.
    Track {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        detections: PathBuf,
        /// Embedding head; without it the file's embeddings are used directly.
        #[arg(long)]
        head: Option<PathBuf>,
    },
    /// Score track files against ground truth; writes report.txt and metrics.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Ground-truth file; repeat and pair with --tracks in order.
        #[arg(long, required = true)]
        gt: Vec<PathBuf>,
        #[arg(long, required = true)]
        tracks: Vec<PathBuf>,
        /// Row label in metrics.csv.
        #[arg(long, default_value = "run")]
        label: String,
    },
    /// Sweep proposal caps (64/128/256) or augmentation (basic/full).
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["proposals", "augmentation"])]
        axis: String,
    },
    /// Finite-difference checks of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(path: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => Ok(RunConfig::from_path(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn list(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(c) => list(&commands::simulate(&load(&c.config)?, &c.out)?),
        Command::Train(c) => list(&commands::train(&load(&c.config)?, &c.out)?),
        Command::Track { common, detections, head } => list(&commands::track(
            &load(&common.config)?,
            &detections,
            head.as_deref(),
            &common.out,
        )?),
        Command::Eval { common, gt, tracks, label } => {
            if gt.len() != tracks.len() {
                return Err(CliError::Usage(format!(
                    "{} --gt files but {} --tracks files",
                    gt.len(),
                    tracks.len()
                )));
            }
            let pairs: Vec<_> = gt.into_iter().zip(tracks).collect();
            let (report, written) = commands::eval(&load(&common.config)?, &pairs, &label, &common.out)?;
            print!("{}", String::from_utf8_lossy(&instassoc::formats::write_report(&report)));
            list(&written);
        }
        Command::Ablate { common, axis } => {
            let (means, written) = commands::ablate(&load(&common.config)?, commands::parse_axis(&axis)?, &common.out)?;
            for (label, idf1) in means {
                println!("{label:>8}  mean IDF1 {idf1:.4}");
            }
            list(&written);
        }
        Command::Gradcheck { seed } => {
            let suites = commands::gradcheck(seed)?;
            for s in suites {
                println!(
                    "{:<20} cases {:>2}  max rel err {:.3e}  (tol {:.0e})",
                    s.name, s.cases, s.max_relative_error, s.tolerance
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
