//! Mesh → assembly → solver → error norms for one configuration.

use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use super::config::{Algorithm, CoarseOperator, ConfigError, ExperimentConfig, MeshChoice};
use super::example31::example31;
use super::output::ResultRow;
use crate::discretization::{Discretization, ExactSolution};
use crate::fas::{fas_solve, FasContext, FasSettings, GalerkinLevel};
use crate::gummel::{gummel_solve, IterationReport};
use crate::level::{MeshLevel, PnpLevel, SolveError, SystemState};
use crate::mesh::{Mesh, MeshError};
use crate::transfer::{TransferError, TransferLevel};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("cannot write {path}: {source}")]
    Output {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A finished run: the table row plus the solver report.
pub struct Outcome {
    pub row: ResultRow,
    pub report: IterationReport,
}

pub fn build_mesh(config: &ExperimentConfig, n: usize) -> Result<Mesh, HarnessError> {
    Ok(match &config.mesh {
        MeshChoice::Uniform => Mesh::build_uniform(n)?,
        MeshChoice::Kershaw => Mesh::build_kershaw(n, config.s)?,
        MeshChoice::Perturbed => Mesh::build_perturbed(n, config.s)?,
        MeshChoice::File(path) => Mesh::import(path)?,
    })
}

fn fas_settings(config: &ExperimentConfig) -> FasSettings {
    FasSettings {
        nu1: config.nu1,
        nu2: config.nu2,
        mode: config.algorithm.fas_mode().expect("FAS algorithm"),
        smoother: config.smoother,
        coarse_solver: config.coarse_solver,
        solver: config.solver.clone(),
    }
}

/// Six error norms `(L²: φ, p, n; H¹: φ, p, n)` of a fine state.
pub fn error_norms(level: &MeshLevel, exact: &ExactSolution, u: &SystemState) -> [f64; 6] {
    let full = level.expand(u);
    let disc = level.discretization();
    let mut out = [0.0; 6];
    for k in 0..3 {
        let (l2, h1) = disc.error_norms(&full[k], &*exact.values[k], &*exact.gradients[k]);
        out[k] = l2;
        out[k + 3] = h1;
    }
    out
}

/// Solve the manufactured problem for one configuration.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    config.validate()?;
    let start = Instant::now();
    let (coeffs, exact) = example31(config.l_sq);
    let (u, report, fine_level, h_label) = match config.algorithm {
        Algorithm::Gummel(variant) => {
            let mesh = build_mesh(config, config.n)?;
            let label = h_label(&mesh, None);
            let level = MeshLevel::new(Arc::new(Discretization::new(Arc::new(mesh))), coeffs)?;
            let b = level.loads();
            let (u, rep) = gummel_solve(
                &level,
                &b,
                SystemState::zeros(level.n()),
                &config.solver,
                variant,
            )?;
            (u, rep, level, label)
        }
        Algorithm::Gfas | Algorithm::Tg => {
            let (nc, levels) = config.geometric_pair()?;
            let coarse_mesh = build_mesh(config, nc)?;
            let (transfer, fine_mesh) = TransferLevel::geometric(coarse_mesh, levels)?;
            let coarse_disc = transfer
                .coarse
                .clone()
                .expect("geometric transfer keeps its coarse mesh");
            let label = h_label(&fine_mesh, Some(coarse_disc.mesh()));
            let fine = MeshLevel::new(
                Arc::new(Discretization::new(Arc::new(fine_mesh))),
                coeffs.clone(),
            )?;
            let coarse = MeshLevel::new(coarse_disc, coeffs)?;
            let galerkin = match config.coarse_operator() {
                CoarseOperator::Galerkin => Some(GalerkinLevel::new(&fine, &transfer)?),
                CoarseOperator::Rediscretize => None,
            };
            let coarse_level: &dyn PnpLevel = match &galerkin {
                Some(g) => g,
                None => &coarse,
            };
            let ctx = FasContext {
                fine: &fine,
                coarse: coarse_level,
                transfer: &transfer,
                settings: fas_settings(config),
            };
            let b = fine.loads();
            let (u, rep) = fas_solve(&ctx, &b, SystemState::zeros(fine.n()))?;
            drop(ctx);
            drop(galerkin);
            (u, rep, fine, label)
        }
        Algorithm::Afas => {
            let mesh = build_mesh(config, config.n)?;
            let label = h_label(&mesh, None);
            let disc = Arc::new(Discretization::new(Arc::new(mesh)));
            let transfer =
                TransferLevel::algebraic(disc.laplacian(), disc.lumped_mass(), &config.amg)?;
            let fine = MeshLevel::new(disc, coeffs)?;
            let coarse = GalerkinLevel::new(&fine, &transfer)?;
            let ctx = FasContext {
                fine: &fine,
                coarse: &coarse,
                transfer: &transfer,
                settings: fas_settings(config),
            };
            let b = fine.loads();
            let (u, rep) = fas_solve(&ctx, &b, SystemState::zeros(fine.n()))?;
            drop(ctx);
            drop(coarse);
            (u, rep, fine, label)
        }
    };
    let errors = report
        .converged
        .then(|| error_norms(&fine_level, &exact, &u));
    let coarse_iters_avg = average_coarse(&report.coarse_iterations);
    let row = ResultRow {
        algorithm: config.algorithm.name().to_string(),
        h_label,
        l_sq: config.l_sq,
        iterations: if report.converged {
            report.iterations
        } else {
            config.solver.max_iter
        },
        coarse_iters_avg,
        errors,
        converged: report.converged,
        runtime_s: start.elapsed().as_secs_f64(),
    };
    Ok(Outcome { row, report })
}

/// Total coarse iterations over cycles, rounded; `None` for one-level runs.
pub fn average_coarse(per_cycle: &[usize]) -> Option<usize> {
    if per_cycle.is_empty() {
        return None;
    }
    let total: usize = per_cycle.iter().sum();
    Some((total as f64 / per_cycle.len() as f64).round() as usize)
}

/// `1/16`, or `1/16(1/8)` for a fine/coarse pair.
pub fn h_label(fine: &Mesh, coarse: Option<&Mesh>) -> String {
    let one = |m: &Mesh| match m.lattice() {
        Some(n) => format!("1/{n}"),
        None => super::output::format_g(m.h()),
    };
    match coarse {
        Some(c) => format!("{}({})", one(fine), one(c)),
        None => one(fine),
    }
}
