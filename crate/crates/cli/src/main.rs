use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scalepinn::reference::load_field;
use scalepinn::{Error, Result};
use scalepinn_cli::config::resolve;
use scalepinn_cli::run::{
    cmd_ablate, cmd_eval, cmd_reference, cmd_train, exit_code, reference_grid, RunOptions,
};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Sequentially corrected PINN training, ablation and reference solutions.
///
/// Exit codes: 0 ok, 2 configuration error, 3 integrity error, 4 numeric
/// failure.
#[derive(Parser, Debug)]
#[command(name = "scalepinn", version)]
struct Cli {
    /// Config file, or the name of a bundled preset.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Seed for both network initialisation and batch sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (train, ablate, eval) or grid file (reference).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override one config value, e.g. `--set train.iterations=100`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Allow writing into an existing output.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one network.
    Train {
        /// Also write a two-column `wall_time_s rel_l2` file for gnuplot.
        #[arg(long)]
        plot_export: bool,
    },
    /// Five seeds with the correction on and off.
    Ablate {
        #[arg(long)]
        plot_export: bool,
        /// Run the ten trainings concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Generate a reference grid.
    Reference {
        /// Benchmark name; selects the preset of the same name unless
        /// `--config` is given.
        #[arg(long)]
        problem: Option<String>,
    },
    /// Evaluate a checkpoint against a reference grid.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Grid file; defaults to the config's reference.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Write the predicted fields on the reference grid (needs `--out`).
        #[arg(long)]
        export_prediction: bool,
    },
}

fn config_arg(cli: &Cli) -> Result<String> {
    if let Command::Reference { problem: Some(p) } = &cli.command {
        if cli.config.is_none() {
            return Ok(p.clone());
        }
    }
    cli.config
        .clone()
        .ok_or_else(|| Error::config("--config", "a config file or preset name is required"))
}

fn execute(cli: &Cli) -> Result<()> {
    let (cfg, spec) = resolve(&config_arg(cli)?, &cli.sets, cli.seed)?;
    let mut log = std::io::stderr();
    let out_dir = || cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    match &cli.command {
        Command::Train { plot_export } => {
            let opts = RunOptions {
                force: cli.force,
                plot_export: *plot_export,
            };
            let mut cfg = cfg.clone();
            let dir = out_dir();
            cfg.output_dir = dir.display().to_string();
            let summary = cmd_train(&cfg, &spec, &dir, opts, &mut log)?;
            eprintln!("wrote {}", summary.dir.display());
        }
        Command::Ablate { plot_export, parallel } => {
            let opts = RunOptions {
                force: cli.force,
                plot_export: *plot_export,
            };
            cmd_ablate(&cfg, &spec, &out_dir(), opts, *parallel, &mut log)?;
        }
        Command::Reference { .. } => {
            let out = cli
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("{}.grid", spec.name)));
            cmd_reference(&cfg, &spec, &out, cli.force, &mut log)?;
        }
        Command::Eval {
            checkpoint,
            reference,
            export_prediction,
        } => {
            let grid = match reference {
                Some(p) => load_field(p)?,
                None => reference_grid(&cfg, &spec, &mut log)?
                    .ok_or_else(|| Error::config("--reference", "no reference grid given or configured"))?,
            };
            cmd_eval(
                &cfg,
                &spec,
                checkpoint,
                &grid,
                cli.out.as_deref().map(Path::new),
                *export_prediction,
                cli.force,
                &mut log,
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
