//! Manufactured steady PNP problem on `[-0.5, 0.5]^3` with
//! `u = cos πx cos πy cos πz`, `p = 3π²(1 + u/2)`, `n = 3π²(1 - u/2)`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::discretization::{ExactSolution, PnpCoefficients};
use crate::mesh::Point;

/// Convection coefficient per unit `L²`.
pub const C_LAMBDA_PER_LSQ: f64 = 0.179;

fn u(x: Point) -> f64 {
    (PI * x[0]).cos() * (PI * x[1]).cos() * (PI * x[2]).cos()
}

fn grad_u(x: Point) -> Point {
    let c = x.map(|t| (PI * t).cos());
    let s = x.map(|t| (PI * t).sin());
    [
        -PI * s[0] * c[1] * c[2],
        -PI * c[0] * s[1] * c[2],
        -PI * c[0] * c[1] * s[2],
    ]
}

fn p(x: Point) -> f64 {
    3.0 * PI * PI * (1.0 + 0.5 * u(x))
}

fn n(x: Point) -> f64 {
    3.0 * PI * PI * (1.0 - 0.5 * u(x))
}

fn grad_p(x: Point) -> Point {
    grad_u(x).map(|g| 1.5 * PI * PI * g)
}

fn grad_n(x: Point) -> Point {
    grad_u(x).map(|g| -1.5 * PI * PI * g)
}

fn norm_sq(g: Point) -> f64 {
    g[0] * g[0] + g[1] * g[1] + g[2] * g[2]
}

/// `-Δp - c ∇·(p ∇u)` with `Δu = -3π² u`.
pub fn source_p(x: Point, c: f64) -> f64 {
    let pi2 = PI * PI;
    let uu = u(x);
    let div = 1.5 * pi2 * norm_sq(grad_u(x)) - 3.0 * pi2 * p(x) * uu;
    4.5 * pi2 * pi2 * uu - c * div
}

/// `-Δn + c ∇·(n ∇u)`.
pub fn source_n(x: Point, c: f64) -> f64 {
    let pi2 = PI * PI;
    let uu = u(x);
    let div = -1.5 * pi2 * norm_sq(grad_u(x)) - 3.0 * pi2 * n(x) * uu;
    -4.5 * pi2 * pi2 * uu + c * div
}

/// Coefficients (charges `±1`, `c_λ = 0.179 L²`, zero Poisson source) and
/// the exact solution of the manufactured problem.
pub fn example31(l_sq: f64) -> (PnpCoefficients, ExactSolution) {
    let c = C_LAMBDA_PER_LSQ * l_sq;
    let coeffs = PnpCoefficients {
        q: [1.0, -1.0],
        c_lambda: c,
        tau: 0.0,
        f: Arc::new(|_| 0.0),
        sources: [
            Arc::new(move |x| source_p(x, c)),
            Arc::new(move |x| source_n(x, c)),
        ],
        dirichlet: [Arc::new(u), Arc::new(p), Arc::new(n)],
    };
    let exact = ExactSolution {
        values: [Arc::new(u), Arc::new(p), Arc::new(n)],
        gradients: [Arc::new(grad_u), Arc::new(grad_p), Arc::new(grad_n)],
    };
    (coeffs, exact)
}
