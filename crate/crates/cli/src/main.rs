//! `cosymlab`: command-line front end of the cosymplectic laboratory.
//!
//! Exit status: 0 when every check passes, 1 when a check fails or a
//! computation breaks down, 2 for a malformed configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cosymplectic::{Error, ModelManifold};
use serde_json::json;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "cosymlab", version, about = "Numerical checks on cosymplectic model manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults to the standard 3-torus.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for random sample sets.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the command's pass tolerance.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    /// Override the command's integrator step count.
    #[arg(long, global = true)]
    steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Reeb periodicity, or the monodromy of a mapping torus.
    ReebCheck,
    /// Flux classes of translation loops and their lattice.
    Flux,
    /// Chart-local splitting of a bump Hamiltonian flow.
    Fragment,
    /// Symplecticity of lifted flows and mixed-cycle periods.
    Lift,
    /// Commuting integrals and their conservation.
    Integrals,
    /// Order of the flow commutator.
    Commutator,
    /// Nondegeneracy of the volume form.
    Volume,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::ReebCheck => "reeb-check",
            Command::Flux => "flux",
            Command::Fragment => "fragment",
            Command::Lift => "lift",
            Command::Integrals => "integrals",
            Command::Commutator => "commutator",
            Command::Volume => "volume",
        }
    }
}

enum Failure {
    BadConfig(String),
    Runtime(String),
}

fn load_config(cli: &Cli) -> Result<(RunConfig, ModelManifold), Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::BadConfig(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str::<RunConfig>(&text).map_err(|e| Failure::BadConfig(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    let manifold = ModelManifold::try_from(cfg.manifold.clone()).map_err(|e| Failure::BadConfig(e.to_string()))?;
    if let Some(t) = cli.tolerance {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::BadConfig(format!("tolerance must be positive, got {t}")));
        }
        cfg.reeb_check.tolerance = t;
        cfg.flux.tolerance = t;
        cfg.fragment.tolerance = t;
        cfg.lift.tolerance = t;
        cfg.integrals.tolerance = t;
        cfg.commutator.tolerance = t;
        cfg.volume.tolerance = t;
    }
    if let Some(s) = cli.steps {
        if s == 0 {
            return Err(Failure::BadConfig("steps must be at least 1".into()));
        }
        cfg.flux.steps = s;
        cfg.fragment.steps = s;
        cfg.lift.steps = s;
        cfg.integrals.steps = s;
    }
    Ok((cfg, manifold))
}

fn classify(e: Error) -> Failure {
    match e {
        Error::Domain(_) | Error::Config(_) => Failure::BadConfig(e.to_string()),
        other => Failure::Runtime(other.to_string()),
    }
}

fn run(cli: &Cli) -> Result<bool, Failure> {
    let (cfg, m) = load_config(cli)?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let (passed, details) = match cli.command {
        Command::ReebCheck => commands::reeb_check(&m, &cfg.reeb_check, seed),
        Command::Flux => commands::flux(&m, &cfg.flux),
        Command::Fragment => commands::fragment(&m, &cfg.fragment),
        Command::Lift => commands::lift(&m, &cfg.lift, seed),
        Command::Integrals => commands::integrals(&m, &cfg.integrals, seed),
        Command::Commutator => commands::commutator(&m, &cfg.commutator),
        Command::Volume => commands::volume(&m, &cfg.volume, seed),
    }
    .map_err(classify)?;
    let report = json!({
        "command": cli.command.name(),
        "manifold": m.to_config(),
        "seed": seed,
        "passed": passed,
        "details": details,
    });
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match &cli.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}: check failed", cli.command.name());
            ExitCode::from(1)
        }
        Err(Failure::BadConfig(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("{}: {msg}", cli.command.name());
            ExitCode::from(1)
        }
    }
}
