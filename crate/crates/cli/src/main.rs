use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stainlab_cli::{commands, create_run_dir, stains_for, CliError, Method, Overrides, Result, RunConfig};
use stainlab_core::eval::Category;
use stainlab_core::Stain;

#[derive(Debug, Parser)]
#[command(name = "stainlab", version, about = "Triplex-to-singleplex stain unmixing pipeline")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root for timestamped run directories.
    #[arg(long, global = true, env = "STAINLAB_OUT", default_value = "runs")]
    out: PathBuf,
    /// Marker: Tamra, QM-Dabsyl or Green.
    #[arg(long, global = true)]
    stain: Option<Stain>,
    /// 1586x1540 fields and 256x256 patches.
    #[arg(long, global = true)]
    paper_scale: bool,
    /// Act on all three markers; `train` runs one thread per marker.
    #[arg(long, global = true)]
    all_stains: bool,
    /// Existing dataset directory written by `synth`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Directory of trained checkpoints.
    #[arg(long, global = true)]
    models: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Synth,
    /// Train a cycle-GAN per marker.
    Train,
    /// Turn one triplex PNG into a synthetic singleplex plus a triptych.
    Unmix {
        #[arg(long)]
        input: PathBuf,
        /// Ground-truth singleplex shown as the third triptych panel.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value = "gan")]
        method: Method,
    },
    /// Histogram-correlation comparison of GAN and NMF on the evaluation fields.
    Eval,
    /// Train OD and RGB arms from one seed and compare them.
    Ablate,
    /// Run the blinded reader-study service.
    Serve {
        /// Existing study directory; otherwise one is built from the evaluation fields.
        #[arg(long)]
        study: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Consensus report from an exported score log.
    Consensus {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "strong_moderate")]
        category: Category,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Unmix { .. } => "unmix",
            Command::Eval => "eval",
            Command::Ablate => "ablate",
            Command::Serve { .. } => "serve",
            Command::Consensus { .. } => "consensus",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let config = base.resolve(&Overrides {
        seed: cli.seed,
        stain: cli.stain,
        paper_scale: cli.paper_scale,
        data_dir: cli.data.clone(),
        models_dir: cli.models.clone(),
    })?;
    let stains = stains_for(&config, cli.all_stains);
    let out = create_run_dir(&cli.out, cli.command.name(), &config)?;
    println!("run directory: {}", out.display());
    match cli.command {
        Command::Synth => {
            let dir = commands::synth(&config, &out)?;
            println!("dataset: {}", dir.display());
        }
        Command::Train => {
            for s in commands::train(&config, &stains, &out)? {
                println!(
                    "{}: {} steps, cycle loss {:.4} -> {:.4}, checkpoint {}",
                    s.stain,
                    s.steps,
                    s.first_cycle_loss,
                    s.final_cycle_loss,
                    s.checkpoint.display()
                );
            }
        }
        Command::Unmix { input, truth, method } => {
            let path = commands::unmix(&config, method, &input, truth.as_deref(), &out)?;
            println!("singleplex: {}", path.display());
        }
        Command::Eval => print!("{}", commands::eval(&config, &stains, &out)?.to_text()),
        Command::Ablate => print!("{}", commands::ablate(&config, &out)?.to_text()),
        Command::Serve { study, addr } => {
            let dir = match study {
                Some(d) => d,
                None => {
                    let d = out.join("study");
                    commands::build_study(&config, &stains, &d)?;
                    d
                }
            };
            commands::serve(&dir, addr)?;
        }
        Command::Consensus { log, category } => {
            let r = commands::consensus(&log, category, &out)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_byte(&e))
        }
    }
}

fn exit_byte(e: &CliError) -> u8 {
    u8::try_from(e.exit_code()).unwrap_or(1)
}
