//! Two-level full approximation storage (FAS) cycle over either a
//! rediscretized coarse mesh or a Galerkin coarse level, plus the two-grid
//! (TG) special case.

use std::sync::Mutex;
use std::time::Instant;

use crate::gummel::{
    gummel_solve_with_tol, IterationReport, SolverSettings, StopMode, Variant, MAX_ITER_REACHED,
};
use crate::level::{fields_norm, Fields, MeshLevel, PnpLevel, SolveError, SystemState};
use crate::sparse::{Cholesky, CsrMatrix, LuFactorization};
use crate::transfer::TransferLevel;

/// Coarse level of the algebraic flavor: every operator is the fine one
/// sandwiched between `R = Pᵀ` and `P`.
pub struct GalerkinLevel<'a> {
    fine: &'a MeshLevel,
    transfer: &'a TransferLevel,
    poisson: Cholesky,
    /// `R` applied to the fine Poisson boundary coupling.
    lift_phi: Vec<f64>,
    weights: Vec<f64>,
    /// Last factorization per species; the symbolic analysis is reused.
    lu: Mutex<[Option<LuFactorization>; 2]>,
}

impl<'a> GalerkinLevel<'a> {
    pub fn new(fine: &'a MeshLevel, transfer: &'a TransferLevel) -> Result<Self, SolveError> {
        let n = fine.n();
        if transfer.n_fine() != n {
            return Err(SolveError::Config(format!(
                "transfer expects {} fine unknowns, level has {n}",
                transfer.n_fine()
            )));
        }
        let zero = [vec![0.0; n], vec![0.0; n]];
        let fine_lift = fine.apply_poisson(&vec![0.0; n], &zero);
        let lift_phi = transfer.r.matvec(&fine_lift)?;
        let poisson = Cholesky::new(&transfer.a_phi_coarse)?;
        let weights = transfer.m_coarse.matvec(&vec![1.0; transfer.n_coarse()])?;
        Ok(Self {
            fine,
            transfer,
            poisson,
            lift_phi,
            weights,
            lu: Mutex::new([None, None]),
        })
    }

    fn prolong(&self, x: &[f64]) -> Vec<f64> {
        self.transfer
            .p
            .matvec(x)
            .expect("coarse vector has the coarse size")
    }

    fn restrict(&self, x: &[f64]) -> Vec<f64> {
        self.transfer
            .r
            .matvec(x)
            .expect("fine vector has the fine size")
    }

    fn mass_term(&self, p: &[Vec<f64>; 2]) -> Vec<f64> {
        let q = self.fine.charges();
        let c: Vec<f64> = p[0]
            .iter()
            .zip(&p[1])
            .map(|(a, b)| q[0] * a + q[1] * b)
            .collect();
        self.transfer.m_coarse.matvec(&c).expect("sizes agree")
    }
}

impl PnpLevel for GalerkinLevel<'_> {
    fn n(&self) -> usize {
        self.transfer.n_coarse()
    }

    fn charges(&self) -> [f64; 2] {
        self.fine.charges()
    }

    fn apply_poisson(&self, phi: &[f64], p: &[Vec<f64>; 2]) -> Vec<f64> {
        let mut out = self.transfer.a_phi_coarse.matvec(phi).expect("sizes agree");
        let m = self.mass_term(p);
        for k in 0..out.len() {
            out[k] += self.lift_phi[k] - m[k];
        }
        out
    }

    fn apply_concentrations(
        &self,
        phi: &[f64],
        p: &[Vec<f64>; 2],
    ) -> Result<[Vec<f64>; 2], SolveError> {
        let fine_p = [self.prolong(&p[0]), self.prolong(&p[1])];
        let [a, b] = self
            .fine
            .apply_concentrations(&self.prolong(phi), &fine_p)?;
        Ok([self.restrict(&a), self.restrict(&b)])
    }

    fn solve_poisson(&self, b_phi: &[f64], p: &[Vec<f64>; 2]) -> Result<Vec<f64>, SolveError> {
        let m = self.mass_term(p);
        let rhs: Vec<f64> = (0..self.n())
            .map(|k| b_phi[k] - self.lift_phi[k] + m[k])
            .collect();
        Ok(self.poisson.solve(&rhs)?)
    }

    fn solve_concentrations(
        &self,
        phi: &[f64],
        b: &[Vec<f64>; 2],
    ) -> Result<[Vec<f64>; 2], SolveError> {
        let fine_phi = self.prolong(phi);
        let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for i in 0..2 {
            let (a, lift) = self.fine.concentration_block(&fine_phi, i);
            let coarse = CsrMatrix::triple_product(&self.transfer.r, &a, &self.transfer.p)?;
            let lift = self.restrict(&lift);
            let rhs: Vec<f64> = b[i].iter().zip(&lift).map(|(b, l)| b - l).collect();
            let mut cache = self.lu.lock().unwrap_or_else(|e| e.into_inner());
            match &mut cache[i] {
                Some(lu) => lu.refactor(&coarse)?,
                slot => *slot = Some(LuFactorization::new(&coarse)?),
            }
            out[i] = cache[i].as_ref().expect("just factored").solve(&rhs)?;
        }
        Ok(out)
    }

    fn mass_weights(&self) -> &[f64] {
        &self.weights
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FasMode {
    /// Repeated cycles until the fine residual meets the tolerance.
    Cycle,
    /// A single cycle from zero with `ν₁ = 0`, `ν₂ = 1`.
    TwoGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FasSettings {
    pub nu1: usize,
    pub nu2: usize,
    pub mode: FasMode,
    /// Smoother used for pre- and post-smoothing.
    pub smoother: Variant,
    /// Iteration used for the coarse nonlinear solve.
    pub coarse_solver: Variant,
    /// Outer tolerance, coarse tolerance, iteration caps and stopping mode.
    pub solver: SolverSettings,
}

impl Default for FasSettings {
    fn default() -> Self {
        Self {
            nu1: 1,
            nu2: 1,
            mode: FasMode::Cycle,
            smoother: Variant::Plain,
            coarse_solver: Variant::Plain,
            solver: SolverSettings::default(),
        }
    }
}

/// Everything one FAS solve needs; the coarse level is either a
/// rediscretized [`MeshLevel`] or a [`GalerkinLevel`].
pub struct FasContext<'a> {
    pub fine: &'a dyn PnpLevel,
    pub coarse: &'a dyn PnpLevel,
    pub transfer: &'a TransferLevel,
    pub settings: FasSettings,
}

/// Apply a matrix to each of the three fields.
pub fn apply_fields(m: &CsrMatrix, u: &SystemState) -> Result<SystemState, SolveError> {
    Ok(SystemState {
        phi: m.matvec(&u.phi)?,
        p: [m.matvec(&u.p[0])?, m.matvec(&u.p[1])?],
    })
}

/// Restricted state `y₂ = R̄_u U` and coarse right-hand side
/// `τ̃₂ = N₂(y₂) + R̄ (b₁ - N₁(U))`.
pub fn coarse_rhs(
    ctx: &FasContext,
    b1: &Fields,
    u_fs: &SystemState,
) -> Result<(SystemState, Fields), SolveError> {
    let r1 = ctx.fine.residual(b1, u_fs)?;
    let y2 = apply_fields(&ctx.transfer.r_u, u_fs)?;
    let n2 = ctx.coarse.apply(&y2)?;
    let mut tau = n2;
    for (t, r) in tau.iter_mut().zip(&r1) {
        let rr = ctx.transfer.r.matvec(r)?;
        t.iter_mut().zip(&rr).for_each(|(t, r)| *t += r);
    }
    Ok((y2, tau))
}

/// Gummel (plain unless configured otherwise) on the coarse system
/// `N₂(U₂) = τ̃₂` from `y₂`, stopped on the absolute coarse residual `tol`.
pub fn coarse_gummel(
    ctx: &FasContext,
    tau2: &Fields,
    y2: SystemState,
    tol: f64,
) -> Result<(SystemState, IterationReport), SolveError> {
    let settings = SolverSettings {
        stop: Some(StopMode::Residual),
        ..ctx.settings.solver.clone()
    };
    gummel_solve_with_tol(
        ctx.coarse,
        tau2,
        y2,
        &settings,
        ctx.settings.coarse_solver,
        tol,
    )
}

/// `ν` smoothing sweeps; `Err` text if the smoother broke down.
fn smooth(
    ctx: &FasContext,
    b1: &Fields,
    u: SystemState,
    nu: usize,
) -> Result<(SystemState, Option<String>), SolveError> {
    if nu == 0 {
        return Ok((u, None));
    }
    let settings = SolverSettings {
        max_iter: nu,
        stop: Some(StopMode::Residual),
        ..ctx.settings.solver.clone()
    };
    let (u, rep) = gummel_solve_with_tol(
        ctx.fine,
        b1,
        u,
        &settings,
        ctx.settings.smoother,
        f64::MIN_POSITIVE,
    )?;
    let failure = rep.failure.filter(|f| f != MAX_ITER_REACHED);
    Ok((u, failure))
}

/// Run FAS cycles from `init`. The report counts outer cycles and records
/// the coarse Gummel iterations of each cycle.
pub fn fas_solve(
    ctx: &FasContext,
    b1: &Fields,
    init: SystemState,
) -> Result<(SystemState, IterationReport), SolveError> {
    let start = Instant::now();
    let s = &ctx.settings;
    s.solver.validate()?;
    let (nu1, nu2, max_cycles, mut u) = match s.mode {
        FasMode::Cycle => (s.nu1, s.nu2, s.solver.max_iter, init),
        FasMode::TwoGrid => (0, 1, 1, SystemState::zeros(ctx.fine.n())),
    };
    let mode = s.solver.stop.unwrap_or(StopMode::RelativeResidual);
    let mut report = IterationReport::default();
    let r0 = fields_norm(&ctx.fine.residual(b1, &u)?);
    report.residual_history.push(r0);
    // Every tolerance is measured in the same units as the fine residual.
    let scale = if mode == StopMode::RelativeResidual && r0 > 0.0 {
        r0
    } else {
        1.0
    };
    let coarse_tol = s.solver.tol_coarse * scale;

    while report.iterations < max_cycles {
        report.iterations += 1;
        let (u_fs, failure) = smooth(ctx, b1, u.clone(), nu1)?;
        if let Some(f) = failure {
            report.failure = Some(format!("pre-smoothing: {f}"));
            u = u_fs;
            break;
        }
        let (y2, tau2) = coarse_rhs(ctx, b1, &u_fs)?;
        let (u2, coarse) = match coarse_gummel(ctx, &tau2, y2.clone(), coarse_tol) {
            Ok(x) => x,
            Err(e) => {
                report.failure = Some(format!("coarse solve: {e}"));
                u = u_fs;
                break;
            }
        };
        report.coarse_iterations.push(coarse.iterations);
        if coarse.diverged() {
            report.failure = Some(format!(
                "coarse solve: {}",
                coarse.failure.unwrap_or_default()
            ));
            u = u_fs;
            break;
        }
        let corr = apply_fields(
            &ctx.transfer.p,
            &SystemState {
                phi: sub(&u2.phi, &y2.phi),
                p: [sub(&u2.p[0], &y2.p[0]), sub(&u2.p[1], &y2.p[1])],
            },
        )?;
        let u_bs = SystemState {
            phi: add(&u_fs.phi, &corr.phi),
            p: [add(&u_fs.p[0], &corr.p[0]), add(&u_fs.p[1], &corr.p[1])],
        };
        let (next, failure) = smooth(ctx, b1, u_bs, nu2)?;
        let prev = std::mem::replace(&mut u, next);
        if let Some(f) = failure {
            report.failure = Some(format!("post-smoothing: {f}"));
            break;
        }
        let r = if u.is_finite() {
            fields_norm(&ctx.fine.residual(b1, &u)?)
        } else {
            f64::NAN
        };
        report.residual_history.push(r);
        if !r.is_finite() || r > s.solver.divergence_cap {
            report.failure = Some(format!("diverged: residual {r:e}"));
            break;
        }
        if crate::gummel::stopping_test(ctx.fine, r / scale, &u, &prev, s.solver.tol, mode) {
            report.converged = true;
            break;
        }
    }
    if s.mode == FasMode::TwoGrid && report.failure.is_none() {
        // a single cycle is the whole method
        report.converged = true;
    }
    if !report.converged && report.failure.is_none() {
        report.failure = Some(MAX_ITER_REACHED.into());
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((u, report))
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
