//! Edge-averaged finite element solvers for the steady Poisson–Nernst–Planck
//! system, with Gummel-type decoupled iterations and two-level full
//! approximation storage (FAS) multigrid on geometric or algebraic hierarchies.

pub mod discretization;
pub mod fas;
pub mod gummel;
pub mod harness;
pub mod level;
pub mod mesh;
pub mod sparse;
pub mod transfer;

pub use discretization::{Discretization, ExactSolution, PnpCoefficients};
pub use fas::{fas_solve, FasContext, FasMode, FasSettings, GalerkinLevel};
pub use gummel::{gummel_solve, IterationReport, SolverSettings, StopMode, Variant};
pub use level::{MeshLevel, PnpLevel, SolveError, SystemState};
pub use mesh::{DofMap, Mesh, MeshError, MeshKind, Parent, ParentMap};
pub use sparse::{Cholesky, CholeskyAnalysis, CsrMatrix, LuFactorization, SparseError};
pub use transfer::{
    CfLabel, CfMarker, StrengthGraph, StrengthParams, TransferError, TransferKind, TransferLevel,
};
