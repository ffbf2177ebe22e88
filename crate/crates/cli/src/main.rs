use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use modgate_cli::{
    run_classify, run_compare, run_evaluate, run_prepare, ClassifyArgs, CliError, CompareArgs,
    EvaluateArgs, PrepareArgs,
};
use modgate_core::evalkit::percent;

#[derive(Parser)]
#[command(
    name = "modgate",
    about = "Classify developer-forum comments against a 12-category taxonomy and evaluate the runs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a balanced sample from a raw labeled corpus
    Prepare {
        /// Raw corpus file, one JSON record per line
        #[arg(long)]
        corpus: PathBuf,
        /// Output path for the balanced corpus
        #[arg(long)]
        out: PathBuf,
        /// Comments to draw per harmful category
        #[arg(long, default_value_t = 40)]
        per_category: usize,
        /// Neutral comments to draw
        #[arg(long, default_value_t = 1000)]
        neutral: usize,
        /// Sampling seed; the only source of randomness
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Classify a corpus through a model provider into a run-record file
    Classify {
        /// Corpus to classify (usually the output of prepare)
        #[arg(long)]
        corpus: PathBuf,
        /// Prompt version id (P00, P01, P18, P19) or path to a spec file
        #[arg(long)]
        prompt: String,
        /// Model configuration file (TOML)
        #[arg(long)]
        model_config: PathBuf,
        /// Response cache file; required for replay, enables resume for live
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Output path for the run-record file
        #[arg(long)]
        out: PathBuf,
        /// Override the configured request concurrency
        #[arg(long)]
        concurrency: Option<usize>,
    },
    /// Compute the metric suite and error report for one finished run
    Evaluate {
        /// Run-record file produced by classify
        #[arg(long)]
        run: PathBuf,
        /// Output path for the markdown report (JSON twin at <out>.json)
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare finished runs across prompt versions and models
    Compare {
        /// Run-record files to compare
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        /// Output path for the text table (CSV twin at <out>.csv)
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    // Clap's default failure exit code is 2, which this tool reserves for
    // provider and transport errors; usage problems are user errors.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Prepare {
            corpus,
            out,
            per_category,
            neutral,
            seed,
        } => {
            let stats = run_prepare(&PrepareArgs {
                corpus,
                out,
                per_category,
                neutral,
                seed,
            })?;
            let total: usize = stats.values().sum();
            println!("prepared {total} comments (seed {seed})");
            for (category, count) in &stats {
                println!("  {:<24} {count}", category.canonical_name());
            }
            Ok(())
        }
        Command::Classify {
            corpus,
            prompt,
            model_config,
            cache,
            out,
            concurrency,
        } => {
            let summary = run_classify(&ClassifyArgs {
                corpus,
                prompt,
                model_config,
                cache,
                out,
                concurrency,
            })?;
            println!(
                "run {}: {} records ({} from cache, {} parse failures)",
                summary.run_id, summary.records, summary.from_cache, summary.parse_failures
            );
            Ok(())
        }
        Command::Evaluate { run, out } => {
            let record = run_evaluate(&EvaluateArgs { run, out })?;
            let m = &record.metrics;
            println!(
                "run {}: accuracy {:.2}%, MCC {:.3}, binary F1 {:.2}%",
                record.run_id,
                percent(m.accuracy),
                m.mcc,
                percent(m.binary.f1)
            );
            Ok(())
        }
        Command::Compare { runs, out } => {
            let table = run_compare(&CompareArgs { runs, out })?;
            print!("{table}");
            Ok(())
        }
    }
}
