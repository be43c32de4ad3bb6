//! Empirical moment checks on simulated bundles.

use serde::{Deserialize, Serialize};

use super::{CoeffSlice, TrajectoryBundle};
use crate::par;
use crate::problem::Problem;

/// Estimates above this magnitude are flagged as exploding.
pub const EXPLOSION_LEVEL: f64 = 1e50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn of(samples: &[f64]) -> Self {
        let (mean, se) = par::mean_and_se(samples);
        Estimate { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub p: f64,
    /// `E sup_t |x_t|^p` (pre- and post-jump values both enter the sup).
    pub sup_x: Estimate,
    pub sup_y: Estimate,
    /// `E |x_T|^p`.
    pub terminal_x: Estimate,
    pub terminal_y: Estimate,
    /// `sup_u max(E e^{p∫φ(u)dt}, E e^{−p∫φ(u)dt})` over grid points.
    pub exp_phi: f64,
    /// Grid index attaining `exp_phi`.
    pub exp_phi_point: usize,
    pub clamp_events: usize,
    pub non_finite: bool,
    pub exploding: bool,
}

impl MomentReport {
    pub fn healthy(&self) -> bool {
        !self.non_finite && !self.exploding
    }
}

pub fn moment_diagnostics(problem: &Problem, bundle: &TrajectoryBundle, p: f64) -> MomentReport {
    let s_count = bundle.count();
    let n = bundle.steps();
    let dt = problem.time.dt();
    let count = problem.action_grid.len();
    let d = problem.brownian_dim;

    let per_scenario = par::map_indexed(s_count, |s| {
        let mut sx = 0.0f64;
        let mut sy = 0.0f64;
        for k in 0..=n {
            sx = sx.max(bundle.x(s, k).abs()).max(bundle.x_plus(s, k).abs());
            sy = sy.max(bundle.y(s, k).abs()).max(bundle.y_plus(s, k).abs());
        }
        let field = bundle.scenarios.field(problem, s);
        let mut slice = CoeffSlice::zeros(count, d);
        let mut integral = vec![0.0; count];
        for k in 0..n {
            field.slice(k, &mut slice);
            for (acc, phi) in integral.iter_mut().zip(&slice.phi) {
                *acc += phi * dt;
            }
        }
        (
            sx.powf(p),
            sy.powf(p),
            bundle.x(s, n).abs().powf(p),
            bundle.y(s, n).abs().powf(p),
            integral,
        )
    });

    let col = |f: &dyn Fn(&(f64, f64, f64, f64, Vec<f64>)) -> f64| -> Vec<f64> { per_scenario.iter().map(f).collect() };
    let sup_x = Estimate::of(&col(&|r| r.0));
    let sup_y = Estimate::of(&col(&|r| r.1));
    let terminal_x = Estimate::of(&col(&|r| r.2));
    let terminal_y = Estimate::of(&col(&|r| r.3));

    let mut exp_phi = f64::NEG_INFINITY;
    let mut exp_phi_point = 0;
    for j in 0..count {
        for sign in [1.0, -1.0] {
            let v = col(&|r| (sign * p * r.4[j]).exp());
            let m = par::mean_and_se(&v).0;
            if m > exp_phi || m.is_nan() {
                exp_phi = m;
                exp_phi_point = j;
            }
        }
    }

    let estimates = [sup_x.mean, sup_y.mean, terminal_x.mean, terminal_y.mean, exp_phi];
    let non_finite = estimates.iter().any(|v| !v.is_finite());
    let exploding = estimates.iter().any(|v| v.abs() > EXPLOSION_LEVEL);
    if non_finite || exploding {
        log::warn!("moment diagnostics flagged: non_finite={non_finite} exploding={exploding}");
    }
    MomentReport {
        p,
        sup_x,
        sup_y,
        terminal_x,
        terminal_y,
        exp_phi,
        exp_phi_point,
        clamp_events: bundle.scenarios.coefficients.clamp_events,
        non_finite,
        exploding,
    }
}

#[cfg(test)]
mod tests {
    use super::super::testkit::constant_problem;
    use super::super::{simulate_forward, Scenarios};
    use super::*;
    use crate::measures::{RelaxedControl, SingularControl};
    use crate::problem::AffineY;

    #[test]
    fn zero_coefficients_give_exact_moment() {
        let mut p = constant_problem(10, 0.0, 0.0, 0.0, 0.0);
        p.x0 = 1.5;
        p.y0 = -2.0;
        let sc = Scenarios::generate(&p, 50, 1).unwrap();
        let b = simulate_forward(&p, sc, &RelaxedControl::uniform(10, 1), &SingularControl::zeros(10, 1)).unwrap();
        let r = moment_diagnostics(&p, &b, 3.0);
        assert_eq!(r.sup_x.mean, 1.5f64.powf(3.0));
        assert_eq!(r.sup_y.mean, 8.0);
        assert_eq!(r.sup_x.se, 0.0);
        assert_eq!(r.exp_phi, 1.0);
        assert!(r.healthy());
    }

    #[test]
    fn geometric_second_moment() {
        let (lambda, rho, n) = (0.2, 0.3, 40);
        let mut p = constant_problem(n, 0.0, 0.0, 0.0, 0.0);
        p.y_dynamics = AffineY::geometric(lambda, vec![rho]);
        let sc = Scenarios::generate(&p, 40_000, 8).unwrap();
        let b = simulate_forward(&p, sc, &RelaxedControl::uniform(n, 1), &SingularControl::zeros(n, 1)).unwrap();
        let r = moment_diagnostics(&p, &b, 2.0);
        let dt = 1.0 / n as f64;
        // E y_{k+1}^2 = E y_k^2 ((1+λdt)^2 + ρ^2 dt) under the Euler scheme
        let euler = ((1.0 + lambda * dt).powi(2) + rho * rho * dt).powi(n as i32);
        let exact = (2.0 * lambda + rho * rho).exp();
        assert!((r.terminal_y.mean - euler).abs() < 3.0 * r.terminal_y.se, "{:?} vs {euler}", r.terminal_y);
        assert!((euler - exact).abs() < 0.05 * exact);
        assert!(r.sup_y.mean >= r.terminal_y.mean);
        assert!(r.healthy());
    }

    #[test]
    fn huge_drift_flags_explosion() {
        let p = constant_problem(10, 0.0, 150.0, 0.0, 0.0);
        let sc = Scenarios::generate(&p, 4, 1).unwrap();
        let b = simulate_forward(&p, sc, &RelaxedControl::uniform(10, 1), &SingularControl::zeros(10, 1)).unwrap();
        let r = moment_diagnostics(&p, &b, 2.0);
        assert!(r.exploding || r.non_finite);
        assert!(!r.healthy());
    }
}
