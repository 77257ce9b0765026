use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use funflow_cli::{run_pipeline, write_synthetic, CliError, RunConfig, Verb};

#[derive(Parser)]
#[command(name = "funflow", version, about = "Functional linear models for daily hydrological series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Worker thread cap.
    #[arg(long, env = "FUNFLOW_THREADS", global = true, hide_env_values = true)]
    threads: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the configured output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest inputs and write them back in normalized form.
    Ingest(RunArgs),
    /// Smooth covariate and response series.
    Smooth(RunArgs),
    /// Fit the scalar-response model.
    FitScalar(RunArgs),
    /// Fit the function-on-function model with leave-one-curve-out CV.
    FitFunctional(RunArgs),
    /// Fit the configured baselines.
    Baseline(RunArgs),
    /// Fit the configured models and write the comparison table only.
    Evaluate(RunArgs),
    /// Full pipeline.
    Run(RunArgs),
    /// Generate a synthetic scenario.
    Synth {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn load(args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.cv.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(command: Command) -> Result<(), CliError> {
    let (verb, args) = match command {
        Command::Synth { scenario, n, seed, out } => {
            for f in write_synthetic(&scenario, seed, n, &out)? {
                println!("{}", out.join(f).display());
            }
            return Ok(());
        }
        Command::Ingest(a) => (Verb::Ingest, a),
        Command::Smooth(a) => (Verb::Smooth, a),
        Command::FitScalar(a) => (Verb::FitScalar, a),
        Command::FitFunctional(a) => (Verb::FitFunctional, a),
        Command::Baseline(a) => (Verb::Baseline, a),
        Command::Evaluate(a) => (Verb::Evaluate, a),
        Command::Run(a) => (Verb::Run, a),
    };
    let summary = run_pipeline(&load(&args)?, verb)?;
    println!("{} labels, outputs in {}", summary.n, summary.out_dir.display());
    for row in &summary.criteria {
        println!("{:<5} bias {:>10.4} rmse {:>10.4} cv {:>10.4} r2 {:>7.4}", row.model_name, row.bias, row.rmse, row.cv, row.r2);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread cap ignored: {e}");
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::to_string(&e.report()).unwrap_or_else(|_| format!("{{\"message\":{:?}}}", e.to_string()));
            eprintln!("{report}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
