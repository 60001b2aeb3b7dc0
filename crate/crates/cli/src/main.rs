use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use pnpfas_core::harness::{
    self, config::ExperimentConfig, run::build_mesh, ConfigError, HarnessError, Sweep,
};

#[derive(Parser)]
#[command(
    name = "pnpfas",
    version,
    about = "PNP solver experiments on the manufactured cube problem"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configuration or a sweep and write CSV rows.
    Run(Box<RunArgs>),
    /// Build a mesh and write it in the ASCII mesh format.
    Mesh(MeshArgs),
}

/// Every option is also accepted as `key = value` in the config file;
/// flags win.
#[derive(Args)]
struct RunArgs {
    /// Plain-text `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// uniform | kershaw | perturbed | file
    #[arg(long)]
    mesh: Option<String>,
    #[arg(long = "mesh-file")]
    mesh_file: Option<String>,
    /// Lattice size; a comma-separated list sweeps.
    #[arg(long)]
    n: Option<String>,
    #[arg(long = "n-coarse")]
    n_coarse: Option<String>,
    /// Mesh distortion.
    #[arg(long)]
    s: Option<String>,
    /// L²; a comma-separated list sweeps.
    #[arg(long = "Lsq", alias = "lsq")]
    l_sq: Option<String>,
    /// gummel | relaxed | accel1 | accel2 | adaptive | gfas | afas | tg
    #[arg(long)]
    alg: Option<String>,
    #[arg(long)]
    nu1: Option<String>,
    #[arg(long)]
    nu2: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long = "tol-coarse")]
    tol_coarse: Option<String>,
    #[arg(long = "max-iter")]
    max_iter: Option<String>,
    /// Under-relaxation factor.
    #[arg(long)]
    alpha: Option<String>,
    /// adaptive-a | adaptive-b
    #[arg(long)]
    preset: Option<String>,
    #[arg(long = "theta-alpha")]
    theta_alpha: Option<String>,
    /// Adaptive bands as `r:theta1:theta2,...`.
    #[arg(long)]
    bands: Option<String>,
    #[arg(long)]
    theta1: Option<String>,
    #[arg(long)]
    theta2: Option<String>,
    /// Coarsening passes.
    #[arg(long)]
    passes: Option<String>,
    /// Smoother inside FAS.
    #[arg(long)]
    smoother: Option<String>,
    /// Gummel variant for the FAS coarse solve.
    #[arg(long = "coarse-solver")]
    coarse_solver: Option<String>,
    /// galerkin | rediscretize
    #[arg(long = "coarse-operator")]
    coarse_operator: Option<String>,
    /// relative | absolute | increment
    #[arg(long)]
    stop: Option<String>,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn flag_pairs(&self) -> Vec<(&'static str, String)> {
        let flags = [
            ("mesh", &self.mesh),
            ("mesh-file", &self.mesh_file),
            ("n", &self.n),
            ("n-coarse", &self.n_coarse),
            ("s", &self.s),
            ("Lsq", &self.l_sq),
            ("alg", &self.alg),
            ("nu1", &self.nu1),
            ("nu2", &self.nu2),
            ("tol", &self.tol),
            ("tol-coarse", &self.tol_coarse),
            ("max-iter", &self.max_iter),
            ("alpha", &self.alpha),
            ("preset", &self.preset),
            ("theta-alpha", &self.theta_alpha),
            ("bands", &self.bands),
            ("theta1", &self.theta1),
            ("theta2", &self.theta2),
            ("passes", &self.passes),
            ("smoother", &self.smoother),
            ("coarse-solver", &self.coarse_solver),
            ("coarse-operator", &self.coarse_operator),
            ("stop", &self.stop),
        ];
        flags
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k, v.clone())))
            .collect()
    }
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long, default_value = "uniform")]
    mesh: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.2)]
    s: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn sweep_from(args: &RunArgs) -> Result<Sweep, CliError> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.clone(),
            source,
        })?;
        pairs.extend(harness::parse_pairs(&text)?);
    }
    pairs.extend(
        args.flag_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v)),
    );
    Ok(Sweep::from_pairs(
        pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())),
    )?)
}

/// Returns whether every run converged.
fn run(args: &RunArgs) -> Result<bool, CliError> {
    let sweep = sweep_from(args)?;
    let mut rows = Vec::new();
    for config in sweep.configs() {
        let outcome = harness::run_experiment(&config)?;
        let r = &outcome.row;
        info!(
            "{} h={} Lsq={} iters={} converged={}",
            r.algorithm, r.h_label, r.l_sq, r.iterations, r.converged
        );
        if let Some(why) = &outcome.report.failure {
            info!("  stopped: {why}");
        }
        rows.push(outcome.row);
    }
    match &args.out {
        Some(path) => harness::write_csv(&rows, path)?,
        None => print!("{}", harness::to_csv(&rows)),
    }
    Ok(rows.iter().all(|r| r.converged))
}

fn mesh(args: &MeshArgs) -> Result<(), CliError> {
    let mut config = ExperimentConfig::default();
    config.set("mesh", &args.mesh)?;
    config.set("s", &args.s.to_string())?;
    let mesh = build_mesh(&config, args.n)?;
    mesh.export(&args.out).map_err(HarnessError::from)?;
    info!(
        "wrote {} vertices, {} tets to {}",
        mesh.n_vertices(),
        mesh.n_tets(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Mesh(args) => mesh(args).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
