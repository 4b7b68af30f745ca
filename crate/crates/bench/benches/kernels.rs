use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dides_bench::{dynamic_baseline, instance, ppml_problem};
use dides_core::dynamics::{dynamic_hat_counterfactual, FundamentalHats};
use dides_core::hat_algebra::invert_shares;
use dides_core::incidence::solve_counterfactual_equilibrium;
use dides_core::labor_supply::{elasticity_from_ln_x, shares_from_ln_x};
use dides_core::spectral::eigendecompose;
use dides_core::SolverOptions;
use nalgebra::DVector;
use std::hint::black_box;

const SIZES: [usize; 3] = [10, 50, 200];

fn static_kernels(c: &mut Criterion) {
    let mut g = c.benchmark_group("static");
    for n in SIZES {
        let inst = instance(n, 1);
        let pi = inst.shares();
        let theta_m = elasticity_from_ln_x(&inst.ln_x, &inst.skills, inst.theta).unwrap();
        g.bench_with_input(BenchmarkId::new("shares", n), &n, |b, _| {
            b.iter(|| shares_from_ln_x(black_box(&inst.ln_x), &inst.skills).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("elasticity_matrix", n), &n, |b, _| {
            b.iter(|| elasticity_from_ln_x(black_box(&inst.ln_x), &inst.skills, inst.theta).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("invert_shares", n), &n, |b, _| {
            b.iter(|| invert_shares(black_box(&pi), &inst.skills).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("eigendecompose", n), &n, |b, _| {
            b.iter(|| eigendecompose(black_box(&theta_m)).unwrap())
        });
        let alpha_hat = DVector::from_fn(n, |o, _| 1.0 + 0.2 * ((o % 7) as f64 / 7.0 - 0.5));
        g.bench_with_input(BenchmarkId::new("equilibrium", n), &n, |b, _| {
            b.iter(|| {
                solve_counterfactual_equilibrium(
                    &pi,
                    &pi,
                    black_box(&alpha_hat),
                    1.34,
                    &inst.skills,
                    inst.theta,
                    &SolverOptions::default(),
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

fn estimation_kernels(c: &mut Criterion) {
    let mut g = c.benchmark_group("ppml");
    for n in [20, 100] {
        let problem = ppml_problem(n, 8, 2);
        let rho = DVector::from_vec(vec![0.5, 0.4, 0.4]);
        g.bench_with_input(BenchmarkId::new("deviance", n), &n, |b, _| {
            b.iter(|| problem.deviance(black_box(1.1), &rho).unwrap())
        });
    }
    g.finish();
}

fn dynamic_kernels(c: &mut Criterion) {
    let mut g = c.benchmark_group("dynamics");
    g.sample_size(10);
    for n in [5, 20] {
        let skills = instance(n, 3).skills;
        let horizon = 40;
        let (params, base) = dynamic_baseline(&skills, horizon);
        let ratios: Vec<DVector<f64>> = (0..=horizon)
            .map(|t| DVector::from_fn(n, |o, _| if t == 0 { 1.0 } else { 1.0 + 0.1 * (o % 3) as f64 }))
            .collect();
        let ones = vec![DVector::from_element(n, 1.0); horizon + 1];
        let hats = FundamentalHats::from_level_ratios(ratios, ones, vec![1.0; horizon + 1]).unwrap();
        g.bench_with_input(BenchmarkId::new("hat_counterfactual", n), &n, |b, _| {
            b.iter(|| {
                dynamic_hat_counterfactual(&base.panel, black_box(&hats), &params, 1.34, &SolverOptions::default())
                    .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, static_kernels, estimation_kernels, dynamic_kernels);
criterion_main!(benches);
