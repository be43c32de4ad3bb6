use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use relaxsing::adjoint::solve_adjoint_regression;
use relaxsing::dynamics::{simulate_forward, CoefficientModel, PointTable, Scenarios};
use relaxsing::maxprinciple::expected_linearization;
use relaxsing::measures::{ActionGrid, RelaxedControl, SingularControl};
use relaxsing::par;
use relaxsing::problem::{AffineY, Problem, RunningCost, StateFunction, StepVector, TimeGrid};
use relaxsing::regression::RegressionOptions;

const STEPS: usize = 50;
const SCENARIOS: usize = 8000;

fn problem() -> Problem {
    Problem {
        time: TimeGrid::new(1.0, STEPS).unwrap(),
        action_grid: ActionGrid::scalar(&[0.0, 0.5, 1.0, 1.5, 2.0]).unwrap(),
        brownian_dim: 2,
        coefficients: CoefficientModel::BrownianModulated {
            base: PointTable {
                upsilon: vec![0.0, 0.5, 1.0, 1.5, 2.0],
                phi: vec![0.1, 0.05, 0.0, -0.05, -0.1],
                chi: vec![vec![0.1, 0.0]; 5],
                psi: vec![vec![0.2, 0.1]; 5],
            },
            phi_loading: 0.2,
            component: 0,
        },
        y_dynamics: AffineY::geometric(0.05, vec![0.0, 0.2]),
        x0: 1.0,
        y0: 1.0,
        singular_dim: 2,
        gain_x: StepVector::Constant(vec![0.99, -1.0]),
        gain_y: StepVector::Constant(vec![-1.0, 0.99]),
        running_cost: RunningCost {
            action_cost: vec![0.0, 0.125, 0.5, 1.125, 2.0],
            discount_rate: 0.05,
            state: StateFunction::Zero,
            state_weight: None,
        },
        singular_cost: StepVector::Constant(vec![0.01, 0.01]),
        terminal_cost: StateFunction::Saturating {
            weight: 1.0,
            scale: 5.0,
            x_weight: 1.0,
            y_weight: 1.0,
        },
        singular_cap: 1.0,
        rate_cap: None,
    }
}

fn pools() -> Vec<(String, usize)> {
    let all = par::current_threads();
    let mut v = vec![("sequential".to_string(), 1)];
    if all > 1 {
        v.push((format!("pool-{all}"), all));
    }
    v
}

fn bench_stages(c: &mut Criterion) {
    let p = problem();
    let sc = Scenarios::generate(&p, SCENARIOS, 1).unwrap();
    let mu = RelaxedControl::uniform(STEPS, 5);
    let xi = SingularControl::zeros(STEPS, 2);
    let bundle = simulate_forward(&p, sc.clone(), &mu, &xi).unwrap();
    let opts = RegressionOptions::default();
    let adjoint = solve_adjoint_regression(&p, &bundle, &opts).unwrap();

    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    for (name, threads) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| par::with_threads(threads, || simulate_forward(&p, sc.clone(), &mu, &xi).unwrap()))
        });
    }
    group.finish();

    let mut group = c.benchmark_group("adjoint");
    group.sample_size(10);
    for (name, threads) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| par::with_threads(threads, || solve_adjoint_regression(&p, &bundle, &opts).unwrap()))
        });
    }
    group.finish();

    let mut group = c.benchmark_group("hamiltonian");
    group.sample_size(10);
    for (name, threads) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| par::with_threads(threads, || expected_linearization(&p, &bundle, &adjoint).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_stages);
criterion_main!(benches);
