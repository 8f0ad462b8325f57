use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nlos_weighting::activation::ActivationKind;
use nlos_weighting::pipeline::commands::{
    cmd_ingest, cmd_label, cmd_position, cmd_predict, cmd_report, cmd_run, cmd_simulate, cmd_sweep, cmd_train,
};
use nlos_weighting::pipeline::config::ConstellationSelection;
use nlos_weighting::pipeline::{ExperimentConfig, PipelineError};

#[derive(Parser)]
#[command(name = "nlos-weighting", version, about = "Ensemble-scored signal weighting for GNSS positioning")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Experiment config (TOML). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    #[arg(long, global = true)]
    constellations: Option<ConstellationSelection>,
    #[arg(long, global = true)]
    activation: Option<ActivationKind>,
    /// Sigmoid steepness.
    #[arg(long, global = true)]
    b: Option<f64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a split's RINEX or canonical input into ingested CSVs.
    Ingest {
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Write simulated train, test and validation splits.
    Simulate,
    /// Best-set labels for a split.
    Label {
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Fit one model per constellation.
    Train,
    /// Score the test signals.
    Predict,
    /// Position the test split and write the evaluation report.
    Position,
    /// Sweep the sigmoid steepness.
    Sweep,
    /// Print the method comparison.
    Report,
    /// Run every stage in order.
    Run,
}

fn load_config(g: &GlobalArgs) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = g.seed_override {
        cfg.seed = seed;
    }
    if let Some(c) = g.constellations {
        cfg.constellations = c;
    }
    if let Some(kind) = g.activation {
        cfg.activation.kind = kind;
    }
    if let Some(b) = g.b {
        cfg.activation.b = b;
    }
    if let Some(dir) = &g.output_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    if cli.global.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.global.threads)
            .build_global()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Ingest { split } => {
            let rows = cmd_ingest(&cfg, &split)?;
            println!("{split}: {rows} signals");
        }
        Command::Simulate => cmd_simulate(&cfg)?,
        Command::Label { split } => {
            let n = cmd_label(&cfg, &split)?;
            println!("{split}: {n} labeled samples");
        }
        Command::Train => {
            let report = cmd_train(&cfg)?;
            for m in &report.models {
                let acc = m.accuracy.map_or("-".to_string(), |a| format!("{a:.4}"));
                println!("{}: {} samples, training accuracy {acc}", m.constellation, m.samples);
            }
        }
        Command::Predict => {
            let n = cmd_predict(&cfg)?;
            println!("{n} signals scored");
        }
        Command::Position => {
            let report = cmd_position(&cfg)?;
            for (m, s) in &report.summary {
                let rmse = s.rmse_3d_m.map_or("-".to_string(), |r| format!("{r:.3}"));
                println!("{m}: rmse {rmse} m, availability {:.3}", s.availability_fraction);
            }
        }
        Command::Sweep => {
            let r = cmd_sweep(&cfg)?;
            println!("b* = {} (rmse {:.3} m)", r.best_b, r.best_rmse_3d_m);
        }
        Command::Report => print!("{}", cmd_report(&cfg)?),
        Command::Run => print!("{}", cmd_run(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
