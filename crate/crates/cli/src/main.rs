use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use hwgrape::optimizer::JacobianMode;
use hwgrape_cli::{commands, preset, ExperimentConfig, Outcome, Overrides, PRESETS, VERSION};

#[derive(Parser)]
#[command(name = "hwgrape", version = VERSION, about = "Distortion-aware pulse optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Jacobian {
    ZeroOrder,
    Exact,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config file, or `preset:<name>`.
    #[arg(long)]
    config: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    jacobian: Option<Jacobian>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    threads: Option<usize>,
    /// Input pulse CSV.
    #[arg(long)]
    pulse: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimizer and write the pulse, distorted pulse and run record.
    Optimize(Common),
    /// Apply the distortion to a pulse or to square inputs.
    Distort(Common),
    /// Fidelity of a fixed pulse across a parameter grid.
    Scan(Common),
    /// Repeated optimizations across amplitude bounds.
    Landscape(Common),
    /// Settled resonator response to constant drives.
    SteadyState(Common),
    /// List the built-in presets.
    Presets,
}

fn load(spec: &str) -> Result<ExperimentConfig> {
    match spec.strip_prefix("preset:") {
        Some(name) => {
            let text = preset(name).with_context(|| format!("unknown preset {name:?}"))?;
            ExperimentConfig::from_json(text).with_context(|| format!("in preset {name}"))
        }
        None => ExperimentConfig::load(Path::new(spec)),
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let (c, which) = match cli.command {
        Command::Presets => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
            return Ok(Outcome::Success);
        }
        Command::Optimize(c) => (c, "optimize"),
        Command::Distort(c) => (c, "distort"),
        Command::Scan(c) => (c, "scan"),
        Command::Landscape(c) => (c, "landscape"),
        Command::SteadyState(c) => (c, "steady-state"),
    };
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let ov = Overrides {
        seed: c.seed,
        jacobian: c.jacobian.map(|j| match j {
            Jacobian::ZeroOrder => JacobianMode::ZeroOrder,
            Jacobian::Exact => JacobianMode::Exact,
        }),
        pulse: c.pulse.clone(),
    };
    let cfg = commands::resolve(load(&c.config)?, &ov);
    let (out, outcome) = match which {
        "optimize" => {
            let (out, outcome, record) = commands::optimize(&cfg, &ov)?;
            log::info!(
                "{:?} after {} iterations: average fidelity {:.6}, {} distortion calls",
                record.status,
                record.iterations.len().saturating_sub(1),
                record.final_average_fidelity,
                record.distortion_calls
            );
            (out, outcome)
        }
        "distort" => (commands::distort(&cfg, &ov)?, Outcome::Success),
        "scan" => (commands::scan(&cfg, &ov)?, Outcome::Success),
        "landscape" => (commands::landscape(&cfg)?, Outcome::Success),
        _ => (commands::steady_state(&cfg)?, Outcome::Success),
    };
    let names: Vec<String> = out.names().map(str::to_string).collect();
    out.commit(&c.out)?;
    for n in names {
        println!("{}", c.out.join(n).display());
    }
    Ok(outcome)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Ok(Outcome::Aborted) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let unsettled = matches!(
                e.downcast_ref::<hwgrape::Error>(),
                Some(hwgrape::Error::Convergence(_))
            );
            ExitCode::from(if unsettled { 2 } else { 1 })
        }
    }
}
