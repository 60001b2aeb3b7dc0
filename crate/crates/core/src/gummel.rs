//! Gummel decoupling for `N(U) = b` and its under-relaxed, accelerated and
//! adaptive variants.

use std::time::Instant;

use crate::level::{blend, fields_norm, weighted_norm, Fields, PnpLevel, SolveError, SystemState};
use crate::sparse::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Plain,
    Relaxed,
    Accel1,
    Accel2,
    Adaptive,
}

impl Variant {
    /// Every variant stops on the residual relative to the initial one.
    pub fn default_stop(self) -> StopMode {
        StopMode::RelativeResidual
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "gummel" | "plain" => Some(Self::Plain),
            "relaxed" => Some(Self::Relaxed),
            "accel1" => Some(Self::Accel1),
            "accel2" => Some(Self::Accel2),
            "adaptive" => Some(Self::Adaptive),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopMode {
    /// Euclidean norm of the algebraic residual `b - N(U)`.
    Residual,
    /// Residual norm relative to that of the initial state.
    RelativeResidual,
    /// Lumped-mass L² norm of the potential update.
    Increment,
}

/// Residual band `(r, θ₁, θ₂)` of the adaptive update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub r: f64,
    pub theta1: f64,
    pub theta2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveParams {
    /// Relaxation of the first adaptive step.
    pub alpha: f64,
    /// Probe threshold below which the banded update is used.
    pub theta_alpha: f64,
    /// Bands with strictly decreasing `r`.
    pub bands: Vec<Band>,
}

impl AdaptiveParams {
    pub fn preset_a() -> Self {
        Self {
            alpha: 0.1,
            theta_alpha: 1e-3,
            bands: vec![
                Band {
                    r: 1e-3,
                    theta1: 1e-1,
                    theta2: 5e-1,
                },
                Band {
                    r: 1e-4,
                    theta1: 1e-2,
                    theta2: 1e-1,
                },
                Band {
                    r: 1e-6,
                    theta1: 0.0,
                    theta2: 100.0,
                },
            ],
        }
    }

    pub fn preset_b() -> Self {
        Self {
            alpha: 0.1,
            theta_alpha: 1e-3,
            bands: vec![
                Band {
                    r: 1e-2,
                    theta1: 1e-1,
                    theta2: 5e-1,
                },
                Band {
                    r: 1e-3,
                    theta1: 1e-2,
                    theta2: 1e-1,
                },
                Band {
                    r: 1e-5,
                    theta1: 1e-4,
                    theta2: 1e-3,
                },
                Band {
                    r: 1e-6,
                    theta1: 1e-5,
                    theta2: 1e-4,
                },
            ],
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "adaptive-a" | "a" => Some(Self::preset_a()),
            "adaptive-b" | "b" => Some(Self::preset_b()),
            _ => None,
        }
    }

    /// Band for a residual norm: `(r_i, r_{i-1}]` with `r_0 = ∞`; anything
    /// below the last `r` uses the last band.
    pub fn band(&self, residual: f64) -> Band {
        self.bands
            .iter()
            .copied()
            .find(|b| residual > b.r)
            .unwrap_or_else(|| *self.bands.last().expect("at least one band"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub tol: f64,
    pub tol_coarse: f64,
    pub max_iter: usize,
    pub relax_alpha: f64,
    pub adaptive: AdaptiveParams,
    pub divergence_cap: f64,
    /// Overrides the variant's default stopping test.
    pub stop: Option<StopMode>,
    /// Replace every computed `α*` by this value.
    pub force_alpha: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            tol_coarse: 1e-7,
            max_iter: 1000,
            relax_alpha: 0.5,
            adaptive: AdaptiveParams::preset_a(),
            divergence_cap: 1e12,
            stop: None,
            force_alpha: None,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::Config(m.to_string()));
        if !(self.tol > 0.0) || !(self.tol_coarse > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.relax_alpha > 0.0 && self.relax_alpha <= 1.0) {
            return bad("relaxation alpha must lie in (0, 1]");
        }
        let bands = &self.adaptive.bands;
        if bands.is_empty() {
            return bad("at least one adaptive band is required");
        }
        if bands.windows(2).any(|w| w[1].r >= w[0].r) {
            return bad("adaptive band thresholds must decrease strictly");
        }
        if bands.iter().any(|b| b.theta1 > b.theta2) {
            return bad("adaptive bands need theta1 <= theta2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationReport {
    pub converged: bool,
    pub iterations: usize,
    /// Full residual norm of the initial state and after every iteration.
    pub residual_history: Vec<f64>,
    pub alpha_history: Vec<f64>,
    /// Coarse solve iterations per cycle (FAS only).
    pub coarse_iterations: Vec<usize>,
    pub wall_time_s: f64,
    /// Why the iteration stopped without converging.
    pub failure: Option<String>,
}

impl IterationReport {
    pub fn diverged(&self) -> bool {
        !self.converged
            && self
                .failure
                .as_deref()
                .is_some_and(|f| f != MAX_ITER_REACHED)
    }

    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::NAN)
    }
}

pub const MAX_ITER_REACHED: &str = "maximum iterations reached";

/// Minimizer over `[0, 1]` of `‖α r̂ + (1 - α) r‖²`.
pub fn alpha_star(r_hat: &[f64], r_prev: &[f64]) -> f64 {
    let rr = dot(r_prev, r_prev);
    let hh = dot(r_hat, r_hat);
    let hr = dot(r_hat, r_prev);
    let a = hh + rr - 2.0 * hr;
    let b = 2.0 * (hr - rr);
    if a <= 1e-30 * hh.max(rr).max(1.0) {
        return 1.0;
    }
    (-b / (2.0 * a)).clamp(0.0, 1.0)
}

/// One plain Gummel sweep: Poisson with frozen concentrations, then both
/// concentration equations with the new potential.
pub fn gummel_step(
    level: &dyn PnpLevel,
    b: &Fields,
    u: &SystemState,
) -> Result<SystemState, SolveError> {
    let phi = level.solve_poisson(&b[0], &u.p)?;
    let p = level.solve_concentrations(&phi, &[b[1].clone(), b[2].clone()])?;
    Ok(SystemState { phi, p })
}

/// Stopping test on a pair of consecutive states. For the residual modes
/// `residual_norm` is the already scaled residual.
pub fn stopping_test(
    level: &dyn PnpLevel,
    residual_norm: f64,
    state: &SystemState,
    prev: &SystemState,
    tol: f64,
    mode: StopMode,
) -> bool {
    match mode {
        StopMode::Residual | StopMode::RelativeResidual => residual_norm <= tol,
        StopMode::Increment => {
            let d: Vec<f64> = state
                .phi
                .iter()
                .zip(&prev.phi)
                .map(|(a, b)| a - b)
                .collect();
            weighted_norm(&d, level.mass_weights()) <= tol
        }
    }
}

struct Run<'a> {
    level: &'a dyn PnpLevel,
    b: &'a Fields,
    settings: &'a SolverSettings,
    report: IterationReport,
    start: Instant,
    /// Divisor applied to residual norms before comparing with tolerances.
    scale: f64,
}

enum Outcome {
    Continue,
    Stop,
}

impl<'a> Run<'a> {
    fn new(level: &'a dyn PnpLevel, b: &'a Fields, settings: &'a SolverSettings) -> Self {
        Self {
            level,
            b,
            settings,
            report: IterationReport::default(),
            start: Instant::now(),
            scale: 1.0,
        }
    }

    fn residual_norm(&self, u: &SystemState) -> Result<f64, SolveError> {
        Ok(fields_norm(&self.level.residual(self.b, u)?))
    }

    fn poisson_residual(&self, u: &SystemState) -> Vec<f64> {
        self.level.poisson_residual(&self.b[0], &u.phi, &u.p)
    }

    fn alpha(&self, r_hat: &[f64], r_prev: &[f64]) -> f64 {
        self.settings
            .force_alpha
            .unwrap_or_else(|| alpha_star(r_hat, r_prev))
    }

    fn fail(&mut self, why: String) -> Outcome {
        log::debug!("iteration stopped: {why}");
        self.report.failure = Some(why);
        Outcome::Stop
    }

    /// Record a completed iteration and decide whether to stop.
    fn finish_iteration(
        &mut self,
        u: &SystemState,
        prev: &SystemState,
        mode: StopMode,
        tol: f64,
    ) -> Outcome {
        self.report.iterations += 1;
        if !u.is_finite() {
            self.report.residual_history.push(f64::NAN);
            return self.fail("non-finite iterate".into());
        }
        let r = match self.residual_norm(u) {
            Ok(r) => r,
            Err(e) => return self.fail(e.to_string()),
        };
        self.report.residual_history.push(r);
        if !r.is_finite() || r > self.settings.divergence_cap {
            return self.fail(format!("diverged: residual {r:e}"));
        }
        if stopping_test(self.level, r / self.scale, u, prev, tol, mode) {
            self.report.converged = true;
            return Outcome::Stop;
        }
        Outcome::Continue
    }

    fn into_report(mut self) -> IterationReport {
        if !self.report.converged && self.report.failure.is_none() {
            self.report.failure = Some(MAX_ITER_REACHED.into());
        }
        self.report.wall_time_s = self.start.elapsed().as_secs_f64();
        self.report
    }
}

/// Solve `N(U) = b` from `init` with the given variant.
pub fn gummel_solve(
    level: &dyn PnpLevel,
    b: &Fields,
    init: SystemState,
    settings: &SolverSettings,
    variant: Variant,
) -> Result<(SystemState, IterationReport), SolveError> {
    gummel_solve_with_tol(level, b, init, settings, variant, settings.tol)
}

pub fn gummel_solve_with_tol(
    level: &dyn PnpLevel,
    b: &Fields,
    init: SystemState,
    settings: &SolverSettings,
    variant: Variant,
    tol: f64,
) -> Result<(SystemState, IterationReport), SolveError> {
    settings.validate()?;
    if init.n() != level.n() || b.iter().any(|f| f.len() != level.n()) {
        return Err(SolveError::Config(
            "state or right-hand side has the wrong size".into(),
        ));
    }
    let mut run = Run::new(level, b, settings);
    let mode = settings.stop.unwrap_or(variant.default_stop());
    let r0 = run.residual_norm(&init)?;
    run.report.residual_history.push(r0);
    if mode == StopMode::RelativeResidual && r0 > 0.0 {
        run.scale = r0;
    }
    if mode == StopMode::Residual && r0 <= tol {
        run.report.converged = true;
        return Ok((init, run.into_report()));
    }
    let u = if variant == Variant::Adaptive {
        adaptive(&mut run, init, mode, tol)
    } else {
        iterate(&mut run, init, variant, mode, tol, 0)
    };
    Ok((u, run.into_report()))
}

/// Plain, relaxed and accelerated iterations. `k0` is the index of the
/// first iteration (nonzero when continuing an adaptive probe).
fn iterate(
    run: &mut Run,
    mut u: SystemState,
    variant: Variant,
    mode: StopMode,
    tol: f64,
    k0: usize,
) -> SystemState {
    let max_iter = run.settings.max_iter;
    let mut k = k0;
    while run.report.iterations < max_iter {
        let next = match sweep(run, &u, variant, k) {
            Ok(next) => next,
            Err(e) => {
                run.report.iterations += 1;
                run.fail(e.to_string());
                return u;
            }
        };
        let prev = std::mem::replace(&mut u, next);
        k += 1;
        if let Outcome::Stop = run.finish_iteration(&u, &prev, mode, tol) {
            break;
        }
    }
    u
}

fn sweep(
    run: &mut Run,
    u: &SystemState,
    variant: Variant,
    k: usize,
) -> Result<SystemState, SolveError> {
    let level = run.level;
    let b = run.b;
    let loads = [b[1].clone(), b[2].clone()];
    match variant {
        Variant::Plain => gummel_step(level, b, u),
        Variant::Relaxed => {
            let alpha = run.settings.relax_alpha;
            let phi_hat = level.solve_poisson(&b[0], &u.p)?;
            let phi = blend(alpha, &phi_hat, &u.phi);
            let p_hat = level.solve_concentrations(&phi, &loads)?;
            let p = [
                blend(alpha, &p_hat[0], &u.p[0]),
                blend(alpha, &p_hat[1], &u.p[1]),
            ];
            run.report.alpha_history.push(alpha);
            Ok(SystemState { phi, p })
        }
        Variant::Accel1 | Variant::Accel2 => {
            let hat = gummel_step(level, b, u)?;
            if k < ACCEL_START {
                return Ok(hat);
            }
            let r_hat = run.poisson_residual(&hat);
            let r_prev = run.poisson_residual(u);
            let alpha = run.alpha(&r_hat, &r_prev);
            run.report.alpha_history.push(alpha);
            let phi = blend(alpha, &hat.phi, &u.phi);
            if variant == Variant::Accel1 {
                let p = [
                    blend(alpha, &hat.p[0], &u.p[0]),
                    blend(alpha, &hat.p[1], &u.p[1]),
                ];
                Ok(SystemState { phi, p })
            } else if alpha == 1.0 {
                Ok(hat)
            } else {
                let p = level.solve_concentrations(&phi, &loads)?;
                Ok(SystemState { phi, p })
            }
        }
        Variant::Adaptive => unreachable!("handled by adaptive()"),
    }
}

/// Zero-based index of the first iteration that blends with `α*`; the
/// first sweep has no previous residual worth comparing against.
const ACCEL_START: usize = 1;

/// Number of accelerated iterations used to probe `α*`.
const PROBE_ITERATIONS: usize = 2;

fn adaptive(run: &mut Run, init: SystemState, mode: StopMode, tol: f64) -> SystemState {
    let settings = run.settings;
    let params = &settings.adaptive;

    // Probe with the accelerated iteration; its last sweep yields the α*
    // that selects the strategy.
    let full_max = settings.max_iter;
    let probe_max = PROBE_ITERATIONS.min(full_max);
    let mut u = init.clone();
    let mut k = 0;
    while run.report.iterations < probe_max {
        let next = match sweep(run, &u, Variant::Accel2, k) {
            Ok(n) => n,
            Err(e) => {
                run.report.iterations += 1;
                run.fail(e.to_string());
                return u;
            }
        };
        let prev = std::mem::replace(&mut u, next);
        k += 1;
        if let Outcome::Stop = run.finish_iteration(&u, &prev, mode, tol) {
            return u;
        }
    }
    let probe_alpha = run.report.alpha_history.last().copied().unwrap_or(1.0);
    if probe_alpha >= params.theta_alpha {
        return iterate(run, u, Variant::Accel2, mode, tol, k);
    }
    log::debug!("probe alpha {probe_alpha:e} below threshold, switching to banded updates");

    let level = run.level;
    let b = run.b;
    let loads = [b[1].clone(), b[2].clone()];
    let w = level.mass_weights();
    let mut u = init;
    let mut first = true;
    let mut prev_residual = run.report.residual_history[0];
    let scale = run.scale;
    while run.report.iterations < full_max {
        let step = || -> Result<(SystemState, f64), SolveError> {
            let phi_hat = level.solve_poisson(&b[0], &u.p)?;
            if first {
                let phi = blend(params.alpha, &phi_hat, &u.phi);
                let p = level.solve_concentrations(&phi, &loads)?;
                return Ok((SystemState { phi, p }, params.alpha));
            }
            let p_hat = level.solve_concentrations(&phi_hat, &loads)?;
            let hat = SystemState {
                phi: phi_hat,
                p: p_hat,
            };
            let r_hat = level.poisson_residual(&b[0], &hat.phi, &hat.p);
            let r_prev = level.poisson_residual(&b[0], &u.phi, &u.p);
            let alpha0 = settings
                .force_alpha
                .unwrap_or_else(|| alpha_star(&r_hat, &r_prev));
            if settings.force_alpha == Some(1.0) {
                return Ok((hat, 1.0));
            }
            let diff: Vec<f64> = hat.phi.iter().zip(&u.phi).map(|(a, b)| a - b).collect();
            // Relative to the new potential when the old one vanishes.
            let base = weighted_norm(&u.phi, w);
            let hat_norm = weighted_norm(&hat.phi, w);
            let base = if base > 1e-12 * hat_norm {
                base
            } else {
                hat_norm
            };
            let uc = weighted_norm(&diff, w) / base;
            let band = params.band(prev_residual / scale);
            let alpha = search_alpha(alpha0, uc, band);
            let phi = blend(alpha, &hat.phi, &u.phi);
            let p = level.solve_concentrations(&phi, &loads)?;
            Ok((SystemState { phi, p }, alpha))
        };
        let (next, alpha) = match step() {
            Ok(n) => n,
            Err(e) => {
                run.report.iterations += 1;
                run.fail(e.to_string());
                return u;
            }
        };
        run.report.alpha_history.push(alpha);
        first = false;
        let prev = std::mem::replace(&mut u, next);
        if let Outcome::Stop = run.finish_iteration(&u, &prev, mode, tol) {
            break;
        }
        prev_residual = run.report.final_residual();
    }
    u
}

/// Doubling/halving search for a relaxation whose relative update
/// `α · uc` lands in `[θ₁, θ₂]`.
pub fn search_alpha(alpha0: f64, uc: f64, band: Band) -> f64 {
    const MAX_STEPS: usize = 60;
    let mut alpha = alpha0;
    for _ in 0..MAX_STEPS {
        let uc_hat = alpha * uc;
        if uc_hat < 1e-10 {
            alpha = 0.5;
        } else if uc_hat < band.theta1 {
            alpha *= 2.0;
        } else if uc_hat > band.theta2 {
            alpha *= 0.5;
        } else {
            return alpha;
        }
    }
    log::warn!("alpha search did not settle after {MAX_STEPS} steps, keeping alpha = {alpha:e}");
    alpha
}
