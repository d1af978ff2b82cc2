use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rankone_core::construction::CATALOG_NAMES;
use rankone_lab::{emit_report, parse_config_with, run_plan, OutputFormat, Overrides};

#[derive(Parser)]
#[command(name = "rankone", version, about = "Run rank-one construction experiments from a config file")]
struct Cli {
    /// Print the catalog of named constructions and exit.
    #[arg(long)]
    list_catalog: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and run a plan.
    Run {
        config: PathBuf,
        /// Output directory; overrides output.dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Seed for stochastic schedules; overrides plan.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Symbol (or flow segment) budget; overrides plan.depth and plan.budget.
        #[arg(long)]
        budget: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_EXPERIMENT: u8 = 2;
const EXIT_IO: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list_catalog {
        for name in CATALOG_NAMES {
            println!("{name}");
        }
        return ExitCode::SUCCESS;
    }
    let Some(Command::Run { config, out, format, seed, budget }) = cli.command else {
        eprintln!("nothing to do; try `rankone run <config>` or `rankone --list-catalog`");
        return ExitCode::from(EXIT_VALIDATION);
    };
    let text = match std::fs::read_to_string(&config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", config.display());
            return ExitCode::from(EXIT_IO);
        }
    };
    let overrides = Overrides {
        seed,
        budget,
        out,
        format: format.map(|f| match f {
            Format::Json => OutputFormat::Json,
            Format::Csv => OutputFormat::Csv,
            Format::Both => OutputFormat::Both,
        }),
    };
    let plan = match parse_config_with(&text, &overrides) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{}: {e}", config.display());
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    let report = run_plan(&plan);
    for e in report.experiments.iter().filter(|e| e.error.is_some()) {
        eprintln!("experiment {} failed: {}", e.name, e.error.as_deref().unwrap_or_default());
    }
    match emit_report(&report, &plan.output_dir, plan.output_format) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
        }
        Err(e) => {
            eprintln!("writing {}: {e}", plan.output_dir.display());
            return ExitCode::from(EXIT_IO);
        }
    }
    if report.failures() > 0 {
        ExitCode::from(EXIT_EXPERIMENT)
    } else {
        ExitCode::SUCCESS
    }
}
