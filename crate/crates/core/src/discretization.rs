//! P1 finite element assembly for the PNP system: Poisson stiffness, lumped
//! mass, loads with Dirichlet lifting, and the edge-averaged (EAFE)
//! drift-diffusion operator written with Bernoulli edge weights.

use std::sync::Arc;

use crate::mesh::{det3, sub, DofMap, Mesh, Point};
use crate::sparse::{CsrMatrix, SparseError};

pub type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(Point) -> Point + Send + Sync>;

/// Data of a two-species PNP problem
/// `-Δφ = f + Σ qᵢ pᵢ`, `-∇·(∇pᵢ + qᵢ c_λ pᵢ ∇φ) = Fᵢ`.
#[derive(Clone)]
pub struct PnpCoefficients {
    pub q: [f64; 2],
    pub c_lambda: f64,
    /// Backward Euler step; zero selects the steady problem.
    pub tau: f64,
    pub f: ScalarFn,
    pub sources: [ScalarFn; 2],
    /// Boundary traces of `(φ, p₁, p₂)`.
    pub dirichlet: [ScalarFn; 3],
}

/// Exact solution with gradients, for error measurement.
#[derive(Clone)]
pub struct ExactSolution {
    pub values: [ScalarFn; 3],
    pub gradients: [VectorFn; 3],
}

/// Bernoulli function `t / (e^t - 1)`.
pub fn bernoulli(t: f64) -> f64 {
    if t.abs() < 1e-4 {
        // t/(e^t-1) = 1 - t/2 + t²/12 - t⁴/720 + t⁶/30240 - t⁸/1209600
        let t2 = t * t;
        1.0 - 0.5 * t + t2 / 12.0 * (1.0 - t2 / 60.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 40.0)))
    } else if t > 700.0 {
        t * (-t).exp()
    } else {
        t / t.exp_m1()
    }
}

/// Geometry of one tetrahedron.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub volume: f64,
    /// Gradients of the four barycentric coordinates.
    pub gradients: [Point; 4],
}

impl ElementGeometry {
    pub fn new(p: &[Point; 4]) -> Self {
        let e1 = sub(p[1], p[0]);
        let e2 = sub(p[2], p[0]);
        let e3 = sub(p[3], p[0]);
        let det = det3(e1, e2, e3);
        // Rows of the inverse Jacobian are the gradients of λ1..λ3.
        let g1 = scale(cross(e2, e3), 1.0 / det);
        let g2 = scale(cross(e3, e1), 1.0 / det);
        let g3 = scale(cross(e1, e2), 1.0 / det);
        let g0 = [
            -(g1[0] + g2[0] + g3[0]),
            -(g1[1] + g2[1] + g3[1]),
            -(g1[2] + g2[2] + g3[2]),
        ];
        Self {
            volume: det.abs() / 6.0,
            gradients: [g0, g1, g2, g3],
        }
    }

    /// Local stiffness entry `(∇λ_a, ∇λ_b)_K`.
    pub fn stiffness(&self, a: usize, b: usize) -> f64 {
        dot3(self.gradients[a], self.gradients[b]) * self.volume
    }

    /// Local EAFE edge weight `ω_E^K = -(∇λ_a, ∇λ_b)_K`.
    pub fn edge_weight(&self, a: usize, b: usize) -> f64 {
        -self.stiffness(a, b)
    }
}

/// Local vertex pairs of the six edges of a tetrahedron.
pub const TET_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Quadrature point on a tetrahedron in barycentric coordinates with a
/// weight relative to the element volume.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub bary: [f64; 4],
    pub weight: f64,
}

/// Symmetric 4-point rule, exact for quadratics.
pub fn quadrature_order2() -> Vec<QuadPoint> {
    let a = 0.585_410_196_624_968_5;
    let b = 0.138_196_601_125_010_5;
    (0..4)
        .map(|i| {
            let mut bary = [b; 4];
            bary[i] = a;
            QuadPoint { bary, weight: 0.25 }
        })
        .collect()
}

/// Collapsed-cube (Duffy) product of `m`-point Gauss–Legendre rules, exact
/// for polynomials of degree `2m - 3` on the tetrahedron.
pub fn quadrature_collapsed(m: usize) -> Vec<QuadPoint> {
    let (x, w) = gauss_legendre(m);
    let mut out = Vec::with_capacity(m * m * m);
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let (u, v, s) = (x[i], x[j], x[k]);
                let l1 = u;
                let l2 = (1.0 - u) * v;
                let l3 = (1.0 - u) * (1.0 - v) * s;
                let jac = (1.0 - u) * (1.0 - u) * (1.0 - v);
                out.push(QuadPoint {
                    bary: [1.0 - l1 - l2 - l3, l1, l2, l3],
                    // reference tet volume is 1/6
                    weight: 6.0 * jac * w[i] * w[j] * w[k],
                });
            }
        }
    }
    out
}

/// Gauss–Legendre nodes and weights on `[0, 1]` by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { z } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (z * pm - pm1) / (z * z - 1.0);
            let dz = pm / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// A mesh edge with its accumulated EAFE weight and the slots its four
/// matrix contributions occupy.
#[derive(Debug, Clone, Copy)]
struct Edge {
    v: usize,
    w: usize,
    omega: f64,
    /// Value index of (v, w) in the interior block, when both are interior.
    vw: Option<usize>,
    wv: Option<usize>,
    /// Value index of the diagonal entries of v and w, when interior.
    vv: Option<usize>,
    ww: Option<usize>,
}

/// Precomputed geometry and sparsity of a P1 discretization on one mesh.
pub struct Discretization {
    mesh: Arc<Mesh>,
    dofs: DofMap,
    elements: Vec<ElementGeometry>,
    edges: Vec<Edge>,
    /// Interior block sparsity shared by every operator on this mesh.
    pattern: CsrMatrix,
    laplacian: CsrMatrix,
    lumped_full: Vec<f64>,
    lumped: Vec<f64>,
}

impl Discretization {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let dofs = DofMap::new(&mesh);
        let elements: Vec<_> = (0..mesh.n_tets())
            .map(|t| ElementGeometry::new(&mesh.tet_points(t)))
            .collect();

        let mut lumped_full = vec![0.0; mesh.n_vertices()];
        let mut raw_edges: Vec<(usize, usize, f64)> = Vec::with_capacity(6 * mesh.n_tets());
        for (tet, geo) in mesh.tets().iter().zip(&elements) {
            for &v in tet {
                lumped_full[v] += geo.volume / 4.0;
            }
            for &(a, b) in &TET_EDGES {
                let (v, w) = (tet[a].min(tet[b]), tet[a].max(tet[b]));
                raw_edges.push((v, w, geo.edge_weight(a, b)));
            }
        }
        raw_edges.sort_by_key(|&(v, w, _)| (v, w));
        let mut merged: Vec<(usize, usize, f64)> = Vec::new();
        for (v, w, om) in raw_edges {
            match merged.last_mut() {
                Some(last) if last.0 == v && last.1 == w => last.2 += om,
                _ => merged.push((v, w, om)),
            }
        }

        let n = dofs.n_interior();
        let mut triplets = Vec::with_capacity(n + 2 * merged.len());
        for i in 0..n {
            triplets.push((i, i, 1.0));
        }
        for &(v, w, _) in &merged {
            if let (Some(i), Some(j)) = (dofs.interior_index(v), dofs.interior_index(w)) {
                triplets.push((i, j, 1.0));
                triplets.push((j, i, 1.0));
            }
        }
        // Entries are all 1 so nothing cancels; values get overwritten.
        let pattern = CsrMatrix::from_triplets(n, n, &triplets).expect("indices in range");
        let slot = |i: usize, j: usize| {
            let (cols, _) = pattern.row(i);
            pattern.row_ptr()[i] + cols.binary_search(&j).expect("entry in pattern")
        };
        let edges: Vec<Edge> = merged
            .iter()
            .map(|&(v, w, omega)| {
                let (iv, iw) = (dofs.interior_index(v), dofs.interior_index(w));
                let both = iv.zip(iw);
                Edge {
                    v,
                    w,
                    omega,
                    vw: both.map(|(i, j)| slot(i, j)),
                    wv: both.map(|(i, j)| slot(j, i)),
                    vv: iv.map(|i| slot(i, i)),
                    ww: iw.map(|j| slot(j, j)),
                }
            })
            .collect();

        let lumped = dofs.restrict(&lumped_full);
        let mut disc = Self {
            mesh,
            dofs,
            elements,
            edges,
            pattern,
            laplacian: CsrMatrix::zeros(0, 0),
            lumped_full,
            lumped,
        };
        disc.laplacian = disc.assemble_laplacian();
        disc
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    pub fn n_interior(&self) -> usize {
        self.dofs.n_interior()
    }

    pub fn elements(&self) -> &[ElementGeometry] {
        &self.elements
    }

    /// Interior Poisson stiffness `A_φ`.
    pub fn laplacian(&self) -> &CsrMatrix {
        &self.laplacian
    }

    /// Lumped mass diagonal on interior vertices.
    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped
    }

    /// Lumped mass diagonal on all vertices.
    pub fn lumped_mass_full(&self) -> &[f64] {
        &self.lumped_full
    }

    /// Element-by-element stiffness assembly on the interior block.
    fn assemble_laplacian(&self) -> CsrMatrix {
        let mut values = vec![0.0; self.pattern.nnz()];
        for (tet, geo) in self.mesh.tets().iter().zip(&self.elements) {
            for a in 0..4 {
                let Some(i) = self.dofs.interior_index(tet[a]) else {
                    continue;
                };
                for b in 0..4 {
                    if let Some(j) = self.dofs.interior_index(tet[b]) {
                        let (cols, _) = self.pattern.row(i);
                        let k = self.pattern.row_ptr()[i] + cols.binary_search(&j).unwrap();
                        values[k] += geo.stiffness(a, b);
                    }
                }
            }
        }
        self.with_values(values)
    }

    /// Full-vertex stiffness matrix before boundary elimination.
    pub fn laplacian_full(&self) -> CsrMatrix {
        let mut t = Vec::with_capacity(16 * self.mesh.n_tets());
        for (tet, geo) in self.mesh.tets().iter().zip(&self.elements) {
            for a in 0..4 {
                for b in 0..4 {
                    t.push((tet[a], tet[b], geo.stiffness(a, b)));
                }
            }
        }
        let nv = self.mesh.n_vertices();
        CsrMatrix::from_triplets(nv, nv, &t).expect("indices in range")
    }

    fn with_values(&self, values: Vec<f64>) -> CsrMatrix {
        let n = self.n_interior();
        CsrMatrix::from_raw(
            n,
            n,
            self.pattern.row_ptr().to_vec(),
            self.pattern.col_idx().to_vec(),
            values,
        )
        .expect("pattern is valid")
    }

    /// Stiffness coupling of interior rows to boundary values: `A_IB g`.
    pub fn laplacian_lifting(&self, full: &[f64]) -> Vec<f64> {
        let mut lift = vec![0.0; self.n_interior()];
        for e in &self.edges {
            // Laplacian off-diagonal entry is -ω
            match (self.dofs.interior_index(e.v), self.dofs.interior_index(e.w)) {
                (Some(i), None) => lift[i] -= e.omega * full[e.w],
                (None, Some(j)) => lift[j] -= e.omega * full[e.v],
                _ => {}
            }
        }
        lift
    }

    /// EAFE operator for one species at the (already scaled) nodal
    /// potential `phi_full`, restricted to interior rows and columns, plus
    /// the boundary coupling applied to `boundary_full`.
    pub fn assemble_eafe(
        &self,
        phi_full: &[f64],
        q: f64,
        boundary_full: &[f64],
    ) -> (CsrMatrix, Vec<f64>) {
        assert_eq!(phi_full.len(), self.mesh.n_vertices());
        let mut values = vec![0.0; self.pattern.nnz()];
        let mut lift = vec![0.0; self.n_interior()];
        for e in &self.edges {
            let t = q * (phi_full[e.v] - phi_full[e.w]);
            let b_vw = e.omega * bernoulli(t);
            let b_wv = e.omega * bernoulli(-t);
            if let Some(k) = e.vv {
                values[k] += b_wv;
            }
            if let Some(k) = e.ww {
                values[k] += b_vw;
            }
            match (e.vw, e.wv) {
                (Some(kvw), Some(kwv)) => {
                    values[kvw] -= b_vw;
                    values[kwv] -= b_wv;
                }
                _ => {
                    if let Some(i) = self.dofs.interior_index(e.v) {
                        lift[i] -= b_vw * boundary_full[e.w];
                    }
                    if let Some(j) = self.dofs.interior_index(e.w) {
                        lift[j] -= b_wv * boundary_full[e.v];
                    }
                }
            }
        }
        (self.with_values(values), lift)
    }

    /// Full-vertex EAFE matrix before boundary elimination.
    pub fn assemble_eafe_full(&self, phi_full: &[f64], q: f64) -> CsrMatrix {
        let mut t = Vec::with_capacity(4 * self.edges.len());
        for e in &self.edges {
            let s = q * (phi_full[e.v] - phi_full[e.w]);
            let b_vw = e.omega * bernoulli(s);
            let b_wv = e.omega * bernoulli(-s);
            t.push((e.v, e.v, b_wv));
            t.push((e.w, e.w, b_vw));
            t.push((e.v, e.w, -b_vw));
            t.push((e.w, e.v, -b_wv));
        }
        let nv = self.mesh.n_vertices();
        CsrMatrix::from_triplets(nv, nv, &t).expect("indices in range")
    }

    /// Concentration block: `Ā(Φ)` in the steady case, `M + τĀ(Φ)` otherwise.
    /// The lifting is scaled consistently.
    pub fn assemble_np_block(
        &self,
        phi_full: &[f64],
        q: f64,
        tau: f64,
        boundary_full: &[f64],
    ) -> (CsrMatrix, Vec<f64>) {
        let (mut a, mut lift) = self.assemble_eafe(phi_full, q, boundary_full);
        if tau > 0.0 {
            for v in a.values_mut() {
                *v *= tau;
            }
            for (i, m) in self.lumped.iter().enumerate() {
                let (cols, _) = a.row(i);
                let k = a.row_ptr()[i] + cols.binary_search(&i).unwrap();
                a.values_mut()[k] += m;
            }
            lift.iter_mut().for_each(|l| *l *= tau);
        }
        (a, lift)
    }

    /// `(g, ψ_k)` for every vertex, by the 4-point rule.
    pub fn load_full(&self, g: &dyn Fn(Point) -> f64) -> Vec<f64> {
        let rule = quadrature_order2();
        let mut out = vec![0.0; self.mesh.n_vertices()];
        for (t, geo) in self.elements.iter().enumerate() {
            let pts = self.mesh.tet_points(t);
            let tet = self.mesh.tets()[t];
            for qp in &rule {
                let val = g(bary_to_point(&pts, &qp.bary)) * qp.weight * geo.volume;
                for a in 0..4 {
                    out[tet[a]] += val * qp.bary[a];
                }
            }
        }
        out
    }

    pub fn load(&self, g: &dyn Fn(Point) -> f64) -> Vec<f64> {
        self.dofs.restrict(&self.load_full(g))
    }

    /// Nodal interpolant on all vertices.
    pub fn interpolate(&self, g: &dyn Fn(Point) -> f64) -> Vec<f64> {
        self.mesh.vertices().iter().map(|&p| g(p)).collect()
    }

    /// Nodal values on the boundary, zero inside.
    pub fn boundary_values(&self, g: &dyn Fn(Point) -> f64) -> Vec<f64> {
        self.mesh
            .vertices()
            .iter()
            .enumerate()
            .map(|(v, &p)| if self.mesh.is_boundary(v) { g(p) } else { 0.0 })
            .collect()
    }

    /// L² and H¹ norms of `u_h - u` for one P1 field given on all vertices.
    pub fn error_norms(
        &self,
        full: &[f64],
        exact: &dyn Fn(Point) -> f64,
        grad: &dyn Fn(Point) -> Point,
    ) -> (f64, f64) {
        let rule = quadrature_collapsed(4);
        let (mut l2, mut semi) = (0.0, 0.0);
        for (t, geo) in self.elements.iter().enumerate() {
            let pts = self.mesh.tet_points(t);
            let tet = self.mesh.tets()[t];
            let mut gh = [0.0; 3];
            for a in 0..4 {
                for d in 0..3 {
                    gh[d] += full[tet[a]] * geo.gradients[a][d];
                }
            }
            for qp in &rule {
                let x = bary_to_point(&pts, &qp.bary);
                let uh: f64 = (0..4).map(|a| full[tet[a]] * qp.bary[a]).sum();
                let e = uh - exact(x);
                let g = grad(x);
                let de = [gh[0] - g[0], gh[1] - g[1], gh[2] - g[2]];
                let w = qp.weight * geo.volume;
                l2 += w * e * e;
                semi += w * dot3(de, de);
            }
        }
        (l2.sqrt(), (l2 + semi).sqrt())
    }

    /// `F_φ = (f, ψ) - A_IB g_φ`: the Poisson right-hand side without the
    /// concentration coupling.
    pub fn poisson_rhs(&self, coeffs: &PnpCoefficients) -> Vec<f64> {
        let load = self.load(&*coeffs.f);
        let g = self.boundary_values(&*coeffs.dirichlet[0]);
        let lift = self.laplacian_lifting(&g);
        load.iter().zip(&lift).map(|(a, b)| a - b).collect()
    }

    /// Check that every interior row of a matrix lies in the shared pattern.
    pub fn same_pattern(&self, a: &CsrMatrix) -> Result<(), SparseError> {
        if a.row_ptr() == self.pattern.row_ptr() && a.col_idx() == self.pattern.col_idx() {
            Ok(())
        } else {
            Err(SparseError::DimensionMismatch("pattern differs".into()))
        }
    }
}

pub fn bary_to_point(pts: &[Point; 4], bary: &[f64; 4]) -> Point {
    let mut x = [0.0; 3];
    for a in 0..4 {
        for d in 0..3 {
            x[d] += bary[a] * pts[a][d];
        }
    }
    x
}

fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot3(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
