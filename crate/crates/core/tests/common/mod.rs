#![allow(dead_code)]

use rand::Rng;
use relaxsing::dynamics::{CoefficientModel, PointTable};
use relaxsing::measures::{ActionGrid, RelaxedControl, SingularControl};
use relaxsing::problem::{AffineY, Problem, RunningCost, StateFunction, StepVector, TimeGrid};

/// Scalar action grid, one Brownian motion, one singular component pushing `x` up.
pub fn base_problem(steps: usize, grid: &[f64], table: PointTable) -> Problem {
    let count = grid.len();
    Problem {
        time: TimeGrid::new(1.0, steps).unwrap(),
        action_grid: ActionGrid::scalar(grid).unwrap(),
        brownian_dim: 1,
        coefficients: CoefficientModel::Constant(table),
        y_dynamics: AffineY::still(1),
        x0: 1.0,
        y0: 1.0,
        singular_dim: 1,
        gain_x: StepVector::Constant(vec![1.0]),
        gain_y: StepVector::Constant(vec![0.0]),
        running_cost: RunningCost::zero(count),
        singular_cost: StepVector::Constant(vec![0.0]),
        terminal_cost: StateFunction::Zero,
        singular_cap: 10.0,
        rate_cap: None,
    }
}

/// Constant coefficients at a single grid point.
pub fn constant_problem(steps: usize, upsilon: f64, phi: f64, chi: f64, psi: f64) -> Problem {
    base_problem(steps, &[0.0], PointTable::uniform(1, upsilon, phi, vec![chi], vec![psi]))
}

/// Drift `υ(u) = u` on `{0, 0.25, …, 1.75}`, `ψ = 0.2`, `h = ½u²`,
/// `g = −50 tanh(x/50)`, `G^x = 1`, `k = 10`.
pub fn fixed_point_toy(steps: usize) -> Problem {
    let grid: Vec<f64> = (0..8).map(|j| 0.25 * j as f64).collect();
    let table = PointTable {
        upsilon: grid.clone(),
        phi: vec![0.0; 8],
        chi: vec![vec![0.0]; 8],
        psi: vec![vec![0.2]; 8],
    };
    let mut p = base_problem(steps, &grid, table);
    p.running_cost.action_cost = grid.iter().map(|u| 0.5 * u * u).collect();
    p.terminal_cost = StateFunction::Saturating {
        weight: 1.0,
        scale: 50.0,
        x_weight: 1.0,
        y_weight: 0.0,
    };
    p.singular_cost = StepVector::Constant(vec![10.0]);
    p
}

/// Three actions with action-dependent `υ`, `φ` and state cost weights, a
/// geometric `y` that the singular control also moves, and a saturating
/// terminal cost.
pub fn gradient_toy(steps: usize) -> Problem {
    let table = PointTable {
        upsilon: vec![0.0, 1.0, 2.0],
        phi: vec![0.1, 0.0, -0.1],
        chi: vec![vec![0.1]; 3],
        psi: vec![vec![0.2]; 3],
    };
    let mut p = base_problem(steps, &[0.0, 1.0, 2.0], table);
    p.y_dynamics = AffineY::geometric(0.05, vec![0.1]);
    p.gain_y = StepVector::Constant(vec![-0.5]);
    p.running_cost = RunningCost {
        action_cost: vec![0.0, 0.5, 2.0],
        discount_rate: 0.1,
        state: StateFunction::Linear {
            x: 0.3,
            y: -0.1,
            constant: 0.0,
        },
        state_weight: Some(vec![1.0, 0.5, 2.0]),
    };
    p.terminal_cost = StateFunction::Saturating {
        weight: 1.0,
        scale: 4.0,
        x_weight: 1.0,
        y_weight: 1.0,
    };
    p.singular_cost = StepVector::Constant(vec![0.3]);
    p.singular_cap = 2.0;
    p
}

/// Random probability rows (a Dirac row with probability ¼).
pub fn random_relaxed<R: Rng>(rng: &mut R, steps: usize, count: usize) -> RelaxedControl {
    let rows: Vec<Vec<f64>> = (0..steps)
        .map(|_| {
            if rng.random_bool(0.25) {
                let mut r = vec![0.0; count];
                r[rng.random_range(0..count)] = 1.0;
                r
            } else {
                let w: Vec<f64> = (0..count).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|v| v / s).collect()
            }
        })
        .collect();
    RelaxedControl::from_rows(&rows).unwrap()
}

/// Sparse random increments within the per-step cap.
pub fn random_singular<R: Rng>(rng: &mut R, problem: &Problem) -> SingularControl {
    let n = problem.time.steps;
    let m = problem.singular_dim;
    let cap = problem.increment_cap();
    let inc = (0..n * m)
        .map(|_| if rng.random_bool(0.3) { rng.random_range(0.0..cap) } else { 0.0 })
        .collect();
    SingularControl::from_flat(n, m, inc).unwrap()
}
