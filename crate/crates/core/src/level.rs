//! The discrete PNP system on one level: state vectors, the nonlinear
//! operator `N(U)` with its right-hand side, and the two decoupled linear
//! solves Gummel-type iterations are built from.

use std::sync::Arc;

use thiserror::Error;

use crate::discretization::{Discretization, PnpCoefficients};
use crate::sparse::{Cholesky, CholeskyAnalysis, CsrMatrix, LuFactorization, SparseError};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("linear solve failed: {0}")]
    Linear(#[from] SparseError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Potential and the two concentrations at the interior unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub phi: Vec<f64>,
    pub p: [Vec<f64>; 2],
}

/// Three equally long vectors ordered `(Φ, P¹, P²)`.
pub type Fields = [Vec<f64>; 3];

impl SystemState {
    pub fn zeros(n: usize) -> Self {
        Self {
            phi: vec![0.0; n],
            p: [vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn from_fields([phi, p1, p2]: Fields) -> Self {
        Self { phi, p: [p1, p2] }
    }

    pub fn into_fields(self) -> Fields {
        let [p1, p2] = self.p;
        [self.phi, p1, p2]
    }

    pub fn fields(&self) -> [&[f64]; 3] {
        [&self.phi, &self.p[0], &self.p[1]]
    }

    pub fn n(&self) -> usize {
        self.phi.len()
    }

    /// Concatenation `(Φ, P¹, P²)`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.n());
        for f in self.fields() {
            v.extend_from_slice(f);
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.fields()
            .iter()
            .all(|f| f.iter().all(|x| x.is_finite()))
    }
}

/// `alpha * a + (1 - alpha) * b`.
pub fn blend(alpha: f64, a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
        .collect()
}

pub fn fields_norm(f: &Fields) -> f64 {
    f.iter()
        .flat_map(|v| v.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

pub fn fields_sub(a: &Fields, b: &Fields) -> Fields {
    std::array::from_fn(|k| a[k].iter().zip(&b[k]).map(|(x, y)| x - y).collect())
}

/// Norm weighted by a (lumped) mass diagonal.
pub fn weighted_norm(v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(x, m)| m * x * x).sum::<f64>().sqrt()
}

/// One level of the nonlinear system `N(U) = b`.
///
/// Poisson rows: `A_φ Φ - Σ qᵢ M Pⁱ (+ boundary coupling)`; concentration
/// rows: `Āᵢ(Φ) Pⁱ (+ boundary coupling)`.
pub trait PnpLevel: Send + Sync {
    fn n(&self) -> usize;

    fn charges(&self) -> [f64; 2];

    /// Poisson rows of `N(U)`.
    fn apply_poisson(&self, phi: &[f64], p: &[Vec<f64>; 2]) -> Vec<f64>;

    /// Concentration rows of `N(U)`.
    fn apply_concentrations(
        &self,
        phi: &[f64],
        p: &[Vec<f64>; 2],
    ) -> Result<[Vec<f64>; 2], SolveError>;

    /// Solve the Poisson rows for `Φ` with the concentrations frozen.
    fn solve_poisson(&self, b_phi: &[f64], p: &[Vec<f64>; 2]) -> Result<Vec<f64>, SolveError>;

    /// Solve both concentration rows for `Pⁱ` with the potential frozen.
    fn solve_concentrations(
        &self,
        phi: &[f64],
        b: &[Vec<f64>; 2],
    ) -> Result<[Vec<f64>; 2], SolveError>;

    /// Diagonal weights of the discrete L² norm.
    fn mass_weights(&self) -> &[f64];

    fn apply(&self, u: &SystemState) -> Result<Fields, SolveError> {
        let phi = self.apply_poisson(&u.phi, &u.p);
        let [p1, p2] = self.apply_concentrations(&u.phi, &u.p)?;
        Ok([phi, p1, p2])
    }

    /// `b - N(U)`.
    fn residual(&self, b: &Fields, u: &SystemState) -> Result<Fields, SolveError> {
        Ok(fields_sub(b, &self.apply(u)?))
    }

    fn poisson_residual(&self, b_phi: &[f64], phi: &[f64], p: &[Vec<f64>; 2]) -> Vec<f64> {
        let n = self.apply_poisson(phi, p);
        b_phi.iter().zip(&n).map(|(b, a)| b - a).collect()
    }
}

/// The finite element system on one mesh, with Dirichlet data eliminated.
pub struct MeshLevel {
    disc: Arc<Discretization>,
    coeffs: PnpCoefficients,
    /// Boundary traces of `(φ, p₁, p₂)` on all vertices, zero inside.
    boundary: Fields,
    lift_phi: Vec<f64>,
    poisson: Cholesky,
    concentration_analysis: Option<CholeskyAnalysis>,
}

impl MeshLevel {
    pub fn new(disc: Arc<Discretization>, coeffs: PnpCoefficients) -> Result<Self, SolveError> {
        if !(coeffs.c_lambda > 0.0) || coeffs.tau < 0.0 {
            return Err(SolveError::Config(
                "c_lambda must be positive and tau nonnegative".into(),
            ));
        }
        let boundary: Fields = std::array::from_fn(|k| disc.boundary_values(&*coeffs.dirichlet[k]));
        let lift_phi = disc.laplacian_lifting(&boundary[0]);
        let poisson = Cholesky::new(disc.laplacian())?;
        let concentration_analysis = CholeskyAnalysis::new(disc.laplacian()).ok();
        Ok(Self {
            disc,
            coeffs,
            boundary,
            lift_phi,
            poisson,
            concentration_analysis,
        })
    }

    pub fn discretization(&self) -> &Arc<Discretization> {
        &self.disc
    }

    pub fn coefficients(&self) -> &PnpCoefficients {
        &self.coeffs
    }

    /// Steady right-hand side `((f, ψ), (F¹, ψ), (F², ψ))`.
    pub fn loads(&self) -> Fields {
        [
            self.disc.load(&*self.coeffs.f),
            self.disc.load(&*self.coeffs.sources[0]),
            self.disc.load(&*self.coeffs.sources[1]),
        ]
    }

    /// Backward Euler right-hand side for one step from `prev`:
    /// concentration rows `M Pⁿ + τ (Fⁱ, ψ)`.
    pub fn transient_loads(&self, prev: &SystemState) -> Fields {
        let [f, g1, g2] = self.loads();
        let m = self.disc.lumped_mass();
        let tau = self.coeffs.tau;
        let step = |g: Vec<f64>, p: &[f64]| -> Vec<f64> {
            g.iter()
                .zip(p)
                .zip(m)
                .map(|((g, p), m)| m * p + tau * g)
                .collect()
        };
        [f, step(g1, &prev.p[0]), step(g2, &prev.p[1])]
    }

    /// Potential on all vertices including the Dirichlet values.
    pub fn phi_full(&self, phi: &[f64]) -> Vec<f64> {
        self.disc.dofs().expand(phi, &self.boundary[0])
    }

    /// Full-vertex state, for error norms and output.
    pub fn expand(&self, u: &SystemState) -> Fields {
        let d = self.disc.dofs();
        [
            d.expand(&u.phi, &self.boundary[0]),
            d.expand(&u.p[0], &self.boundary[1]),
            d.expand(&u.p[1], &self.boundary[2]),
        ]
    }

    fn convection_potential(&self, phi: &[f64]) -> Vec<f64> {
        let c = self.coeffs.c_lambda;
        self.phi_full(phi).iter().map(|x| c * x).collect()
    }

    /// Concentration block of species `i` and its boundary coupling.
    pub fn concentration_block(&self, phi: &[f64], i: usize) -> (CsrMatrix, Vec<f64>) {
        let scaled = self.convection_potential(phi);
        self.disc.assemble_np_block(
            &scaled,
            self.coeffs.q[i],
            self.coeffs.tau,
            &self.boundary[i + 1],
        )
    }

    /// Solve `Ā x = b` through the Slotboom-symmetrized matrix
    /// `Ā diag(e^{-q(φ - s)})`, falling back to LU if that is not positive
    /// definite.
    fn solve_block(
        &self,
        a: &CsrMatrix,
        scaled_interior: &[f64],
        q: f64,
        b: &[f64],
    ) -> Result<Vec<f64>, SolveError> {
        let (lo, hi) = scaled_interior
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(q * x), hi.max(q * x))
            });
        let shift = if lo.is_finite() { 0.5 * (lo + hi) } else { 0.0 };
        let d: Vec<f64> = scaled_interior
            .iter()
            .map(|&x| (shift - q * x).exp())
            .collect();
        if d.iter().all(|x| x.is_finite() && *x > 0.0) {
            let sym = a.scale_columns(&d);
            let chol = match &self.concentration_analysis {
                Some(an) => Cholesky::with_analysis(an, &sym),
                None => Cholesky::new(&sym),
            };
            if let Ok(y) = chol.and_then(|c| c.solve(b)) {
                return Ok(y.iter().zip(&d).map(|(y, d)| y * d).collect());
            }
        }
        log::debug!("Slotboom Cholesky unavailable, using LU");
        Ok(LuFactorization::new(a)?.solve(b)?)
    }
}

impl PnpLevel for MeshLevel {
    fn n(&self) -> usize {
        self.disc.n_interior()
    }

    fn charges(&self) -> [f64; 2] {
        self.coeffs.q
    }

    fn apply_poisson(&self, phi: &[f64], p: &[Vec<f64>; 2]) -> Vec<f64> {
        let mut out = self.disc.laplacian().matvec(phi).expect("sizes agree");
        let m = self.disc.lumped_mass();
        let q = self.coeffs.q;
        for k in 0..out.len() {
            out[k] += self.lift_phi[k] - m[k] * (q[0] * p[0][k] + q[1] * p[1][k]);
        }
        out
    }

    fn apply_concentrations(
        &self,
        phi: &[f64],
        p: &[Vec<f64>; 2],
    ) -> Result<[Vec<f64>; 2], SolveError> {
        let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for i in 0..2 {
            let (a, lift) = self.concentration_block(phi, i);
            let mut y = a.matvec(&p[i])?;
            y.iter_mut().zip(&lift).for_each(|(y, l)| *y += l);
            out[i] = y;
        }
        Ok(out)
    }

    fn solve_poisson(&self, b_phi: &[f64], p: &[Vec<f64>; 2]) -> Result<Vec<f64>, SolveError> {
        let m = self.disc.lumped_mass();
        let q = self.coeffs.q;
        let rhs: Vec<f64> = (0..self.n())
            .map(|k| b_phi[k] + m[k] * (q[0] * p[0][k] + q[1] * p[1][k]) - self.lift_phi[k])
            .collect();
        Ok(self.poisson.solve(&rhs)?)
    }

    fn solve_concentrations(
        &self,
        phi: &[f64],
        b: &[Vec<f64>; 2],
    ) -> Result<[Vec<f64>; 2], SolveError> {
        let scaled = self.convection_potential(phi);
        let interior = self.disc.dofs().restrict(&scaled);
        let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for i in 0..2 {
            let q = self.coeffs.q[i];
            let (a, lift) =
                self.disc
                    .assemble_np_block(&scaled, q, self.coeffs.tau, &self.boundary[i + 1]);
            let rhs: Vec<f64> = b[i].iter().zip(&lift).map(|(b, l)| b - l).collect();
            out[i] = self.solve_block(&a, &interior, q, &rhs)?;
        }
        Ok(out)
    }

    fn mass_weights(&self) -> &[f64] {
        self.disc.lumped_mass()
    }
}
