//! Tetrahedral meshes of the cube `[-0.5, 0.5]^3`.
//!
//! Generated meshes live on a logical `(n+1)^3` lattice and split every
//! lattice cell into the six Kuhn tetrahedra sharing the cell's main
//! diagonal. The Kuhn split is nested under midpoint refinement, which is
//! what the geometric two-level solvers rely on.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

pub type Point = [f64; 3];

const LO: f64 = -0.5;
const HI: f64 = 0.5;
const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid mesh parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("tetrahedron {tet} is inverted or degenerate (signed volume {volume:e})")]
    InvertedElement { tet: usize, volume: f64 },
    #[error("vertex {0} does not belong to any tetrahedron")]
    OrphanVertex(usize),
    #[error("mesh has no structured lattice; refinement needs a generated mesh")]
    Unstructured,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// How a mesh was produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeshKind {
    Uniform,
    Kershaw {
        s: f64,
    },
    Perturbed {
        s: f64,
    },
    /// Midpoint refinement of a structured mesh.
    Refined,
    Imported,
}

/// Tetrahedral partition of the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point>,
    tets: Vec<[usize; 4]>,
    boundary: Vec<bool>,
    h: f64,
    /// Lattice subdivisions per axis for generated meshes.
    lattice: Option<usize>,
    kind: MeshKind,
}

/// Location of a fine vertex inside the coarse mesh it was refined from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parent {
    /// Coarse tetrahedron containing the vertex.
    pub tet: usize,
    /// Barycentric coordinates, ordered like the coarse tet's vertices.
    pub bary: [f64; 4],
}

pub type ParentMap = Vec<Parent>;

/// Numbering of the non-Dirichlet (interior) vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    interior_index: Vec<Option<usize>>,
    interior: Vec<usize>,
    boundary: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> Self {
        let mut interior_index = vec![None; mesh.n_vertices()];
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        for (v, &on_boundary) in mesh.boundary.iter().enumerate() {
            if on_boundary {
                boundary.push(v);
            } else {
                interior_index[v] = Some(interior.len());
                interior.push(v);
            }
        }
        Self {
            interior_index,
            interior,
            boundary,
        }
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.interior_index.len()
    }

    /// Interior unknown index of vertex `v`, `None` on the Dirichlet boundary.
    pub fn interior_index(&self, v: usize) -> Option<usize> {
        self.interior_index[v]
    }

    /// Vertex ids of the interior unknowns, in unknown order.
    pub fn interior_vertices(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary_vertices(&self) -> &[usize] {
        &self.boundary
    }

    /// Scatter interior values and boundary values into a full vertex vector.
    pub fn expand(&self, interior: &[f64], boundary_values: &[f64]) -> Vec<f64> {
        assert_eq!(interior.len(), self.n_interior());
        assert_eq!(boundary_values.len(), self.n_vertices());
        let mut full = boundary_values.to_vec();
        for (k, &v) in self.interior.iter().enumerate() {
            full[v] = interior[k];
        }
        full
    }

    /// Gather the interior entries of a full vertex vector.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&v| full[v]).collect()
    }
}

impl Mesh {
    /// Build a mesh from raw data, normalizing tet orientation and checking
    /// every invariant.
    pub fn new(
        vertices: Vec<Point>,
        mut tets: Vec<[usize; 4]>,
        boundary: Vec<bool>,
        kind: MeshKind,
    ) -> Result<Self, MeshError> {
        if boundary.len() != vertices.len() {
            return Err(MeshError::InvalidParameter(format!(
                "{} boundary flags for {} vertices",
                boundary.len(),
                vertices.len()
            )));
        }
        let mut used = vec![false; vertices.len()];
        for (t, tet) in tets.iter_mut().enumerate() {
            for &v in tet.iter() {
                if v >= vertices.len() {
                    return Err(MeshError::InvalidParameter(format!(
                        "tet {t} references vertex {v} of {}",
                        vertices.len()
                    )));
                }
                used[v] = true;
            }
            let vol = signed_volume(&vertices, tet);
            if vol < 0.0 {
                tet.swap(2, 3);
            }
            let vol = vol.abs();
            let scale = edge_lengths(&vertices, tet)
                .iter()
                .fold(0.0f64, |m, &l| m.max(l));
            if !(vol > 1e-14 * scale.powi(3)) {
                return Err(MeshError::InvertedElement {
                    tet: t,
                    volume: vol,
                });
            }
        }
        if let Some(v) = used.iter().position(|&u| !u) {
            return Err(MeshError::OrphanVertex(v));
        }
        let h = tets
            .iter()
            .flat_map(|t| edge_lengths(&vertices, t))
            .fold(0.0f64, f64::max);
        Ok(Self {
            vertices,
            tets,
            boundary,
            h,
            lattice: None,
            kind,
        })
    }

    /// `(n+1)^3` lattice with every cube cell split into six tetrahedra.
    pub fn build_uniform(n: usize) -> Result<Self, MeshError> {
        if n == 0 {
            return Err(MeshError::InvalidParameter("n must be at least 1".into()));
        }
        let coord = |i: usize| LO + (HI - LO) * i as f64 / n as f64;
        Self::from_lattice(n, MeshKind::Uniform, |i, j, k| {
            [coord(i), coord(j), coord(k)]
        })
    }

    /// Kershaw-type mesh: each lattice column `(i, j)` has its z-levels
    /// split piecewise linearly at a sheared mid-height. `s = 0.5` gives the
    /// uniform mesh; smaller `s` shears harder.
    pub fn build_kershaw(n: usize, s: f64) -> Result<Self, MeshError> {
        check_distorted(n, s)?;
        let coord = |i: usize| LO + (HI - LO) * i as f64 / n as f64;
        // Zig-zag in [-1, 1]: +1 on the cube faces, -1 on the mid-plane.
        let zigzag = |i: usize| {
            let xi = i as f64 / n as f64;
            if xi <= 0.5 {
                1.0 - 4.0 * xi
            } else {
                4.0 * xi - 3.0
            }
        };
        let half = n / 2;
        Self::from_lattice(n, MeshKind::Kershaw { s }, |i, j, k| {
            let t = 0.5 + (0.5 - s) * zigzag(i) * zigzag(j);
            let z_mid = LO + (HI - LO) * t;
            let z = if k <= half {
                LO + (z_mid - LO) * k as f64 / half as f64
            } else {
                z_mid + (HI - z_mid) * (k - half) as f64 / half as f64
            };
            [coord(i), coord(j), z]
        })
    }

    /// Tensor-product mesh with internal nodes pulled towards one corner.
    pub fn build_perturbed(n: usize, s: f64) -> Result<Self, MeshError> {
        check_distorted(n, s)?;
        let xs = perturbed_axis(n, 1.0 - s);
        let zs = perturbed_axis(n, s);
        Self::from_lattice(n, MeshKind::Perturbed { s }, |i, j, k| {
            [xs[i], xs[j], zs[k]]
        })
    }

    fn from_lattice(
        n: usize,
        kind: MeshKind,
        coords: impl Fn(usize, usize, usize) -> Point,
    ) -> Result<Self, MeshError> {
        let m = n + 1;
        let mut vertices = Vec::with_capacity(m * m * m);
        let mut boundary = Vec::with_capacity(m * m * m);
        for k in 0..m {
            for j in 0..m {
                for i in 0..m {
                    let p = coords(i, j, k);
                    boundary.push(on_cube_boundary(&p));
                    vertices.push(p);
                }
            }
        }
        let mut tets = Vec::with_capacity(6 * n * n * n);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    for perm in &KUHN_PERMS {
                        tets.push(kuhn_tet(m, [i, j, k], perm));
                    }
                }
            }
        }
        let mut mesh = Self::new(vertices, tets, boundary, kind)?;
        mesh.lattice = Some(n);
        Ok(mesh)
    }

    /// Midpoint refinement of a generated mesh. Every fine vertex is the
    /// midpoint of a coarse Kuhn edge (or a coarse vertex), so the fine mesh
    /// is nested in the coarse one with a 1:8 element ratio.
    pub fn refine_uniform(&self) -> Result<(Mesh, ParentMap), MeshError> {
        let n = self.lattice.ok_or(MeshError::Unstructured)?;
        let mc = n + 1;
        let nf = 2 * n;
        let coarse_id = |c: [usize; 3]| c[0] + mc * (c[1] + mc * c[2]);

        let mut parents = Vec::with_capacity((nf + 1).pow(3));
        let mut fine = Self::from_lattice(nf, MeshKind::Refined, |i, j, k| {
            let f = [i, j, k];
            let base = f.map(|x| x / 2);
            let mut tip = base;
            for a in 0..3 {
                tip[a] += f[a] % 2;
            }
            let p = self.vertices[coarse_id(base)];
            let q = self.vertices[coarse_id(tip)];
            [
                0.5 * (p[0] + q[0]),
                0.5 * (p[1] + q[1]),
                0.5 * (p[2] + q[2]),
            ]
        })?;
        // Kuhn-edge midpoints are exact only up to rounding; keep the
        // boundary classification of the coarse lattice.
        for k in 0..=nf {
            for j in 0..=nf {
                for i in 0..=nf {
                    let f = [i, j, k];
                    let v = i + (nf + 1) * (j + (nf + 1) * k);
                    fine.boundary[v] = f.iter().any(|&x| x == 0 || x == nf);
                    parents.push(self.parent_of(n, f));
                }
            }
        }
        fine.kind = MeshKind::Refined;
        Ok((fine, parents))
    }

    /// Coarse tet and barycentric weights for fine lattice index `f`.
    fn parent_of(&self, n: usize, f: [usize; 3]) -> Parent {
        let mc = n + 1;
        // `odd` axes move along the coarse Kuhn edge; `upper` axes sit on the
        // far side of the (clamped) coarse cell.
        let mut cell = [0usize; 3];
        let mut upper = Vec::new();
        let mut odd = Vec::new();
        for a in 0..3 {
            let base = f[a] / 2;
            if f[a] % 2 == 1 {
                cell[a] = base;
                odd.push(a);
            } else if base == n {
                cell[a] = n - 1;
                upper.push(a);
            } else {
                cell[a] = base;
            }
        }
        let mut perm = Vec::with_capacity(3);
        perm.extend(&upper);
        perm.extend(&odd);
        for a in 0..3 {
            if !perm.contains(&a) {
                perm.push(a);
            }
        }
        let perm = [perm[0], perm[1], perm[2]];
        let p_idx = KUHN_PERMS.iter().position(|p| *p == perm).unwrap();
        let tet_id = 6 * (cell[0] + n * (cell[1] + n * cell[2])) + p_idx;

        let mut from = cell;
        for &a in &upper {
            from[a] += 1;
        }
        let mut to = from;
        for &a in &odd {
            to[a] += 1;
        }
        let id = |c: [usize; 3]| c[0] + mc * (c[1] + mc * c[2]);
        let (a, b) = (id(from), id(to));
        let tet = self.tets[tet_id];
        let mut bary = [0.0; 4];
        for (slot, &v) in tet.iter().enumerate() {
            if v == a {
                bary[slot] += if a == b { 1.0 } else { 0.5 };
            } else if v == b {
                bary[slot] += 0.5;
            }
        }
        Parent { tet: tet_id, bary }
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    /// Longest edge over all elements.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Lattice spacing `1/n` for generated meshes, `h` otherwise. This is the
    /// value used to label results.
    pub fn h_label(&self) -> f64 {
        match self.lattice {
            Some(n) => 1.0 / n as f64,
            None => self.h,
        }
    }

    pub fn lattice(&self) -> Option<usize> {
        self.lattice
    }

    pub fn kind(&self) -> MeshKind {
        self.kind
    }

    pub fn tet_points(&self, t: usize) -> [Point; 4] {
        self.tets[t].map(|v| self.vertices[v])
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        signed_volume(&self.vertices, &self.tets[t])
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.n_tets()).map(|t| self.tet_volume(t)).sum()
    }

    /// Serialize in the ASCII exchange format.
    pub fn to_ascii(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.n_vertices(), self.n_tets());
        for (p, &b) in self.vertices.iter().zip(&self.boundary) {
            let _ = writeln!(
                out,
                "{:.16e} {:.16e} {:.16e} {}",
                p[0],
                p[1],
                p[2],
                u8::from(b)
            );
        }
        for t in &self.tets {
            let _ = writeln!(out, "{} {} {} {}", t[0], t[1], t[2], t[3]);
        }
        out
    }

    /// Parse the ASCII exchange format: `nv nt`, then `x y z b` lines, then
    /// `v0 v1 v2 v3` lines with 0-based indices.
    pub fn from_ascii(text: &str) -> Result<Self, MeshError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line, header) = lines.next().ok_or(MeshError::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
        let counts = parse_fields::<usize>(header, 2, line)?;
        let (nv, nt) = (counts[0], counts[1]);

        let mut vertices = Vec::with_capacity(nv);
        let mut boundary = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (line, text) = lines.next().ok_or(MeshError::Parse {
                line: line + 1,
                msg: format!("expected {nv} vertex lines"),
            })?;
            let f = parse_fields::<f64>(text, 4, line)?;
            let flag = match f[3] {
                0.0 => false,
                1.0 => true,
                b => {
                    return Err(MeshError::Parse {
                        line,
                        msg: format!("boundary flag must be 0 or 1, got {b}"),
                    })
                }
            };
            vertices.push([f[0], f[1], f[2]]);
            boundary.push(flag);
        }
        let mut tets = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (line, text) = lines.next().ok_or(MeshError::Parse {
                line: line + 1,
                msg: format!("expected {nt} tetrahedron lines"),
            })?;
            let f = parse_fields::<usize>(text, 4, line)?;
            if let Some(&bad) = f.iter().find(|&&v| v >= nv) {
                return Err(MeshError::Parse {
                    line,
                    msg: format!("vertex index {bad} out of range (nv = {nv})"),
                });
            }
            tets.push([f[0], f[1], f[2], f[3]]);
        }
        if let Some((line, _)) = lines.next() {
            return Err(MeshError::Parse {
                line,
                msg: "trailing data after the last tetrahedron".into(),
            });
        }
        Self::new(vertices, tets, boundary, MeshKind::Imported)
    }

    pub fn import(path: impl AsRef<Path>) -> Result<Self, MeshError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_ascii(&text)
    }

    pub fn export(&self, path: impl AsRef<Path>) -> Result<(), MeshError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_ascii()).map_err(|source| MeshError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Axis permutations of the six Kuhn tetrahedra of a cell.
const KUHN_PERMS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

fn kuhn_tet(m: usize, cell: [usize; 3], perm: &[usize; 3]) -> [usize; 4] {
    let id = |c: [usize; 3]| c[0] + m * (c[1] + m * c[2]);
    let mut c = cell;
    let v0 = id(c);
    c[perm[0]] += 1;
    let v1 = id(c);
    c[perm[1]] += 1;
    let v2 = id(c);
    c[perm[2]] += 1;
    let v3 = id(c);
    [v0, v1, v2, v3]
}

fn check_distorted(n: usize, s: f64) -> Result<(), MeshError> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(MeshError::InvalidParameter(format!(
            "n must be even and positive, got {n}"
        )));
    }
    if !(s > 0.0 && s <= 0.5) {
        return Err(MeshError::InvalidParameter(format!(
            "distortion s must lie in (0, 0.5], got {s}"
        )));
    }
    Ok(())
}

/// Node coordinates along one axis of the perturbed grid. The first half of
/// the cells covers `[a, a + (b - a) * frac / 2]` uniformly, the second half
/// the rest. Index `i` here is zero-based.
fn perturbed_axis(n: usize, frac: f64) -> Vec<f64> {
    let (a, b) = (LO, HI);
    let half = n / 2;
    let mid = a + (b - a) * frac / 2.0;
    (0..=n)
        .map(|i| {
            if i == 0 {
                a
            } else if i == n {
                b
            } else if i <= half {
                a + (b - a) * frac * i as f64 / n as f64
            } else {
                mid + (b - mid) * (i - half) as f64 / half as f64
            }
        })
        .collect()
}

fn on_cube_boundary(p: &Point) -> bool {
    p.iter()
        .any(|&x| (x - LO).abs() <= BOUNDARY_TOL || (x - HI).abs() <= BOUNDARY_TOL)
}

pub(crate) fn signed_volume(vertices: &[Point], tet: &[usize; 4]) -> f64 {
    let [a, b, c, d] = tet.map(|v| vertices[v]);
    let u = sub(b, a);
    let v = sub(c, a);
    let w = sub(d, a);
    det3(u, v, w) / 6.0
}

fn edge_lengths(vertices: &[Point], tet: &[usize; 4]) -> [f64; 6] {
    let p = tet.map(|v| vertices[v]);
    let mut out = [0.0; 6];
    let mut e = 0;
    for a in 0..4 {
        for b in a + 1..4 {
            let d = sub(p[b], p[a]);
            out[e] = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            e += 1;
        }
    }
    out
}

pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn det3(u: Point, v: Point, w: Point) -> f64 {
    u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0])
        + u[2] * (v[0] * w[1] - v[1] * w[0])
}

fn parse_fields<T: std::str::FromStr>(
    text: &str,
    expected: usize,
    line: usize,
) -> Result<Vec<T>, MeshError> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != expected {
        return Err(MeshError::Parse {
            line,
            msg: format!("expected {expected} fields, found {}", fields.len()),
        });
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<T>().map_err(|_| MeshError::Parse {
                line,
                msg: format!("cannot parse {f:?}"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_counts() {
        let m = Mesh::build_uniform(1).unwrap();
        assert_eq!((m.n_vertices(), m.n_tets()), (8, 6));
        let m = Mesh::build_uniform(2).unwrap();
        assert_eq!((m.n_vertices(), m.n_tets()), (27, 48));
        for t in 0..m.n_tets() {
            assert!((m.tet_volume(t) - 1.0 / 48.0).abs() < 1e-15);
        }
        assert!((m.total_volume() - 1.0).abs() < 1e-12);
        assert!((m.h() - 3f64.sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(m.h_label(), 0.5);
    }

    #[test]
    fn uniform_boundary_flags() {
        let m = Mesh::build_uniform(2).unwrap();
        let interior: Vec<usize> = (0..m.n_vertices()).filter(|&v| !m.is_boundary(v)).collect();
        assert_eq!(interior, vec![13]);
        assert_eq!(m.vertices()[13], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn kershaw_half_is_uniform() {
        let k = Mesh::build_kershaw(4, 0.5).unwrap();
        let u = Mesh::build_uniform(4).unwrap();
        assert_eq!(k.vertices(), u.vertices());
        assert_eq!(k.tets(), u.tets());
    }

    #[test]
    fn kershaw_sheared_volumes() {
        let k = Mesh::build_kershaw(4, 0.3).unwrap();
        assert!((0..k.n_tets()).all(|t| k.tet_volume(t) > 0.0));
        assert!((k.total_volume() - 1.0).abs() < 1e-12);
        assert!(k.vertices() != Mesh::build_uniform(4).unwrap().vertices());
    }

    #[test]
    fn distorted_meshes_reject_odd_n() {
        assert!(Mesh::build_kershaw(3, 0.3).is_err());
        assert!(Mesh::build_perturbed(5, 0.2).is_err());
        assert!(Mesh::build_perturbed(4, 0.0).is_err());
        assert!(Mesh::build_kershaw(4, 0.6).is_err());
    }

    #[test]
    fn perturbed_coordinates() {
        let m = Mesh::build_perturbed(4, 0.2).unwrap();
        // lattice index 1 is the formula's i = 2
        let v = m.vertices()[1];
        assert!((v[0] - (-0.3)).abs() < 1e-15);
        let v = m.vertices()[25];
        assert!((v[2] - (-0.45)).abs() < 1e-15);
        assert!((m.total_volume() - 1.0).abs() < 1e-12);
        let axis = perturbed_axis(4, 0.8);
        assert!(axis.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn perturbed_boundary_unmoved() {
        let u = Mesh::build_uniform(6).unwrap();
        let p = Mesh::build_perturbed(6, 0.2).unwrap();
        for v in 0..u.n_vertices() {
            assert_eq!(u.is_boundary(v), p.is_boundary(v));
            if u.is_boundary(v) {
                let (a, b) = (u.vertices()[v], p.vertices()[v]);
                for d in 0..3 {
                    let on_face = (a[d].abs() - 0.5).abs() < 1e-15;
                    if on_face {
                        assert_eq!(a[d], b[d]);
                    }
                }
            }
        }
    }

    #[test]
    fn refinement_matches_finer_lattice() {
        let coarse = Mesh::build_uniform(2).unwrap();
        let (fine, parents) = coarse.refine_uniform().unwrap();
        let direct = Mesh::build_uniform(4).unwrap();
        assert_eq!(fine.vertices(), direct.vertices());
        assert_eq!(fine.tets(), direct.tets());
        assert_eq!(fine.boundary_flags(), direct.boundary_flags());
        assert_eq!(parents.len(), fine.n_vertices());
    }

    #[test]
    fn parents_are_consistent() {
        for coarse in [
            Mesh::build_uniform(2).unwrap(),
            Mesh::build_kershaw(4, 0.3).unwrap(),
            Mesh::build_perturbed(4, 0.2).unwrap(),
        ] {
            let (fine, parents) = coarse.refine_uniform().unwrap();
            for (v, par) in parents.iter().enumerate() {
                let s: f64 = par.bary.iter().sum();
                assert!((s - 1.0).abs() < 1e-15);
                assert!(par.bary.iter().all(|&w| (0.0..=1.0).contains(&w)));
                let pts = coarse.tet_points(par.tet);
                let mut x = [0.0; 3];
                for (slot, p) in pts.iter().enumerate() {
                    for d in 0..3 {
                        x[d] += par.bary[slot] * p[d];
                    }
                }
                for d in 0..3 {
                    assert!((x[d] - fine.vertices()[v][d]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn coarse_vertices_map_to_themselves() {
        let coarse = Mesh::build_uniform(3).unwrap();
        let (fine, parents) = coarse.refine_uniform().unwrap();
        let nf = 7;
        for k in 0..4 {
            for j in 0..4 {
                for i in 0..4 {
                    let fv = 2 * i + nf * (2 * j + nf * 2 * k);
                    let cv = i + 4 * (j + 4 * k);
                    let par = parents[fv];
                    let slot = coarse.tets()[par.tet]
                        .iter()
                        .position(|&v| v == cv)
                        .unwrap();
                    assert_eq!(par.bary[slot], 1.0);
                    assert_eq!(fine.vertices()[fv], coarse.vertices()[cv]);
                }
            }
        }
    }

    #[test]
    fn refine_rejects_imported() {
        let m = Mesh::build_uniform(2).unwrap();
        let back = Mesh::from_ascii(&m.to_ascii()).unwrap();
        assert!(matches!(
            back.refine_uniform(),
            Err(MeshError::Unstructured)
        ));
    }

    #[test]
    fn ascii_round_trip() {
        let m = Mesh::build_uniform(2).unwrap();
        let back = Mesh::from_ascii(&m.to_ascii()).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.tets(), m.tets());
        assert_eq!(back.boundary_flags(), m.boundary_flags());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        m.export(&path).unwrap();
        assert_eq!(Mesh::import(&path).unwrap().vertices(), m.vertices());
    }

    #[test]
    fn degenerate_tet_is_rejected() {
        let text = "4 1\n0 0 0 1\n1 0 0 1\n0 1 0 1\n1 1 0 1\n0 1 2 3\n";
        match Mesh::from_ascii(text) {
            Err(MeshError::InvertedElement { tet, .. }) => assert_eq!(tet, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_index_is_a_parse_error() {
        let text = "4 1\n0 0 0 1\n1 0 0 1\n0 1 0 1\n0 0 1 1\n0 1 2 4\n";
        match Mesh::from_ascii(text) {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = Mesh::build_kershaw(6, 0.25).unwrap();
        let b = Mesh::build_kershaw(6, 0.25).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dofmap_is_a_bijection() {
        let m = Mesh::build_uniform(4).unwrap();
        let d = DofMap::new(&m);
        assert_eq!(d.n_interior(), 27);
        for (k, &v) in d.interior_vertices().iter().enumerate() {
            assert_eq!(d.interior_index(v), Some(k));
        }
        for &v in d.boundary_vertices() {
            assert_eq!(d.interior_index(v), None);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn distorted_meshes_fill_the_cube(n in 1usize..5, s in 0.05..0.5f64) {
                for m in [Mesh::build_kershaw(2 * n, s).unwrap(), Mesh::build_perturbed(2 * n, s).unwrap()] {
                    let vol: f64 = (0..m.n_tets())
                        .map(|t| {
                            let p = m.tet_points(t);
                            let e: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|k| p[i + 1][k] - p[0][k]));
                            let det = e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1])
                                - e[0][1] * (e[1][0] * e[2][2] - e[1][2] * e[2][0])
                                + e[0][2] * (e[1][0] * e[2][1] - e[1][1] * e[2][0]);
                            prop_assert!(det.abs() > 0.0);
                            Ok(det.abs() / 6.0)
                        })
                        .sum::<Result<f64, TestCaseError>>()?;
                    prop_assert!((vol - 1.0).abs() < 1e-12);
                }
            }

            #[test]
            fn refinement_parents_reproduce_vertices(n in 1usize..4, s in 0.05..0.5f64) {
                let coarse = Mesh::build_perturbed(2 * n, s).unwrap();
                let (fine, parents) = coarse.refine_uniform().unwrap();
                for (v, par) in parents.iter().enumerate() {
                    let p = coarse.tet_points(par.tet);
                    for k in 0..3 {
                        let x: f64 = (0..4).map(|a| par.bary[a] * p[a][k]).sum();
                        prop_assert!((x - fine.vertices()[v][k]).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
