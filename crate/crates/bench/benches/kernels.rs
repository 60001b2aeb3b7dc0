use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use pnpfas_core::gummel::gummel_step;
use pnpfas_core::harness::example31::example31;
use pnpfas_core::{
    Cholesky, CholeskyAnalysis, Discretization, LuFactorization, Mesh, MeshLevel, PnpLevel,
    SystemState,
};

fn potential(d: &Discretization) -> Vec<f64> {
    d.mesh()
        .vertices()
        .iter()
        .map(|p| 2.0 * (3.0 * p[0]).sin() * (2.0 * p[1]).cos() + p[2])
        .collect()
}

fn assembly(c: &mut Criterion) {
    let d = Discretization::new(Arc::new(Mesh::build_uniform(16).unwrap()));
    let phi = potential(&d);
    let boundary = vec![1.0; phi.len()];
    c.bench_function("eafe_assemble_n16", |b| {
        b.iter(|| d.assemble_eafe(black_box(&phi), 1.0, &boundary))
    });
    c.bench_function("discretization_setup_n16", |b| {
        let mesh = Arc::new(Mesh::build_uniform(16).unwrap());
        b.iter(|| Discretization::new(black_box(mesh.clone())))
    });
}

fn factorization(c: &mut Criterion) {
    let d = Discretization::new(Arc::new(Mesh::build_uniform(16).unwrap()));
    let lap = d.laplacian().clone();
    let rhs = vec![1.0; lap.n_rows()];
    let analysis = CholeskyAnalysis::new(&lap).unwrap();
    c.bench_function("cholesky_numeric_n16", |b| {
        b.iter(|| Cholesky::with_analysis(&analysis, black_box(&lap)).unwrap())
    });
    let chol = Cholesky::with_analysis(&analysis, &lap).unwrap();
    c.bench_function("cholesky_solve_n16", |b| {
        b.iter(|| chol.solve(black_box(&rhs)).unwrap())
    });

    let (a, _) = d.assemble_eafe(&potential(&d), 1.0, &vec![0.0; d.mesh().n_vertices()]);
    c.bench_function("lu_factor_eafe_n16", |b| {
        b.iter(|| LuFactorization::new(black_box(&a)).unwrap())
    });
    let mut lu = LuFactorization::new(&a).unwrap();
    c.bench_function("lu_refactor_eafe_n16", |b| {
        b.iter(|| lu.refactor(black_box(&a)).unwrap())
    });
}

fn gummel(c: &mut Criterion) {
    let (coeffs, _) = example31(2.0);
    let disc = Arc::new(Discretization::new(Arc::new(
        Mesh::build_uniform(8).unwrap(),
    )));
    let level = MeshLevel::new(disc, coeffs).unwrap();
    let b = level.loads();
    let u = gummel_step(&level, &b, &SystemState::zeros(level.n())).unwrap();
    c.bench_function("gummel_step_n8", |bch| {
        bch.iter_batched(
            || u.clone(),
            |u| gummel_step(&level, &b, &u).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, assembly, factorization, gummel);
criterion_main!(benches);
