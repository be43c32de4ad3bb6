//! Hamiltonian, pointwise maximization over the action grid, the integral
//! form of the variational derivative, and the three optimality conditions.
//!
//! Controls are deterministic (open loop), so the conditions are checked on
//! expectations: the relaxed condition compares `E[H(u)]` across grid points
//! at each step and the singular conditions use the expected slack
//! `E[k + G^x p^x + G^y p^y]`. Pathwise versions are reported alongside.

use serde::{Deserialize, Serialize};

use crate::adjoint::AdjointSolution;
use crate::dynamics::{CoeffSlice, TrajectoryBundle};
use crate::error::{Error, Result};
use crate::measures::{integrate_against, RelaxedControl, SingularControl};
use crate::par;
use crate::problem::{Problem, RunningCost};

/// `H` at every grid point for fixed `(t, x, y, p, P)`, and at the current measure.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSlice {
    pub values: Vec<f64>,
    pub current: f64,
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn fill_hamiltonian(
    t: f64,
    x: f64,
    y: f64,
    p: f64,
    big_p: &[f64],
    coeff: &CoeffSlice,
    running: &RunningCost,
    out: &mut [f64],
) {
    for (j, o) in out.iter_mut().enumerate() {
        let chi = coeff.chi_at(j);
        let psi = coeff.psi_at(j);
        let mut diffusion = 0.0;
        for c in 0..big_p.len() {
            diffusion += big_p[c] * (chi[c] + psi[c] * x);
        }
        *o = -p * (coeff.upsilon[j] + coeff.phi[j] * x) - diffusion - running.point_value(t, x, y, j);
    }
}

/// `H(u_j) = −p(υ_j + φ_j x) − P·(χ_j + ψ_j x) − h(t, x, y, δ_{u_j})`.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian_slice(
    t: f64,
    x: f64,
    y: f64,
    p: f64,
    big_p: &[f64],
    coeff: &CoeffSlice,
    running: &RunningCost,
    mu_row: &[f64],
) -> Result<HamiltonianSlice> {
    if big_p.len() != coeff.d || mu_row.len() != coeff.count {
        return Err(Error::dim("hamiltonian inputs", coeff.count, mu_row.len()));
    }
    if ![t, x, y, p].iter().chain(big_p).all(|v| v.is_finite()) {
        return Err(Error::invalid("hamiltonian inputs", "non-finite state or adjoint"));
    }
    let mut values = vec![0.0; coeff.count];
    fill_hamiltonian(t, x, y, p, big_p, coeff, running, &mut values);
    let current = integrate_against(&values, mu_row)?;
    Ok(HamiltonianSlice { values, current })
}

/// Lowest index attaining `max_j H(u_j)`, and `H(u*) − H(μ)`.
pub fn pointwise_maximizer(slice: &HamiltonianSlice) -> (usize, f64) {
    let (idx, best) = argmax(&slice.values);
    (idx, best - slice.current)
}

fn argmax(values: &[f64]) -> (usize, f64) {
    let mut idx = 0;
    let mut best = values[0];
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > best {
            best = v;
            idx = j;
        }
    }
    (idx, best)
}

/// Step-wise expectations of the Hamiltonian and the singular slack under
/// the current controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedLinearization {
    pub steps: usize,
    pub count: usize,
    pub singular_dim: usize,
    /// `E[H_k(u_j)]`, `N × J`.
    pub mean_h: Vec<f64>,
    /// `E[H_k(μ_k)]`.
    pub mean_h_current: Vec<f64>,
    /// `E[k + G^x p^x + G^y p^y]`, `N × m`.
    pub mean_slack: Vec<f64>,
    /// Smallest slack over scenarios, steps and components.
    pub pathwise_slack_min: f64,
    /// `E Σ_k (max_j H_k(u_j) − H_k(μ_k)) dt` with a per-scenario maximizer.
    pub pathwise_gap: f64,
}

impl ExpectedLinearization {
    pub fn mean_h_row(&self, k: usize) -> &[f64] {
        &self.mean_h[k * self.count..(k + 1) * self.count]
    }

    pub fn slack_row(&self, k: usize) -> &[f64] {
        &self.mean_slack[k * self.singular_dim..(k + 1) * self.singular_dim]
    }

    /// Per-step maximizer of the expected Hamiltonian (lowest index on ties).
    pub fn maximizers(&self) -> Vec<usize> {
        (0..self.steps).map(|k| argmax(self.mean_h_row(k)).0).collect()
    }

    pub fn slack_min(&self) -> f64 {
        self.mean_slack.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn check_inputs(problem: &Problem, bundle: &TrajectoryBundle, adjoint: &AdjointSolution) -> Result<()> {
    if adjoint.steps != bundle.steps() || adjoint.scenarios != bundle.count() || bundle.steps() != problem.time.steps {
        return Err(Error::dim("adjoint/bundle shape", bundle.count(), adjoint.scenarios));
    }
    Ok(())
}

/// Visits `(k, H_k(u_·), H_k(μ_k), slack_k)` along one scenario.
fn for_each_step<F>(problem: &Problem, bundle: &TrajectoryBundle, adjoint: &AdjointSolution, s: usize, mut f: F)
where
    F: FnMut(usize, &[f64], f64, &[f64]),
{
    let n = problem.time.steps;
    let count = problem.action_grid.len();
    let m = problem.singular_dim;
    let field = bundle.scenarios.field(problem, s);
    let mut slice = CoeffSlice::zeros(count, problem.brownian_dim);
    let mut h = vec![0.0; count];
    let mut slack = vec![0.0; m];
    for k in 0..n {
        field.slice(k, &mut slice);
        let t = problem.time.time(k);
        fill_hamiltonian(
            t,
            bundle.x_plus(s, k),
            bundle.y_plus(s, k),
            adjoint.px_ahead(s, k),
            adjoint.big_px(s, k),
            &slice,
            &problem.running_cost,
            &mut h,
        );
        let current = crate::measures::integrate_unchecked(&h, bundle.mu.row(k));
        let (gx, gy, kc) = (problem.gain_x.at(k), problem.gain_y.at(k), problem.singular_cost.at(k));
        let (px, py) = (adjoint.px(s, k), adjoint.py(s, k));
        for i in 0..m {
            slack[i] = kc[i] + gx[i] * px + gy[i] * py;
        }
        f(k, &h, current, &slack);
    }
}

pub fn expected_linearization(
    problem: &Problem,
    bundle: &TrajectoryBundle,
    adjoint: &AdjointSolution,
) -> Result<ExpectedLinearization> {
    check_inputs(problem, bundle, adjoint)?;
    let n = problem.time.steps;
    let count = problem.action_grid.len();
    let m = problem.singular_dim;
    let dt = problem.time.dt();
    let s_count = bundle.count();
    // accumulator: mean_h (n·count), current (n), slack (n·m), gap sum, slack min
    let width = n * count + n + n * m + 2;
    let acc = par::chunked_reduce(
        s_count,
        || {
            let mut v = vec![0.0; width];
            v[width - 1] = f64::INFINITY;
            v
        },
        |acc, s| {
            let mut gap = 0.0;
            let mut smin = acc[width - 1];
            for_each_step(problem, bundle, adjoint, s, |k, h, cur, slack| {
                for j in 0..count {
                    acc[k * count + j] += h[j];
                }
                acc[n * count + k] += cur;
                for i in 0..m {
                    acc[n * count + n + k * m + i] += slack[i];
                    smin = smin.min(slack[i]);
                }
                gap += (argmax(h).1 - cur) * dt;
            });
            acc[width - 2] += gap;
            acc[width - 1] = smin;
        },
        |a, b| {
            for i in 0..width - 1 {
                a[i] += b[i];
            }
            a[width - 1] = a[width - 1].min(b[width - 1]);
        },
    );
    let inv = 1.0 / s_count as f64;
    let lin = ExpectedLinearization {
        steps: n,
        count,
        singular_dim: m,
        mean_h: acc[..n * count].iter().map(|v| v * inv).collect(),
        mean_h_current: acc[n * count..n * count + n].iter().map(|v| v * inv).collect(),
        mean_slack: acc[n * count + n..n * count + n + n * m].iter().map(|v| v * inv).collect(),
        pathwise_slack_min: acc[width - 1],
        pathwise_gap: acc[width - 2] * inv,
    };
    if lin.mean_h.iter().chain(&lin.mean_slack).any(|v| !v.is_finite()) {
        return Err(Error::invalid("hamiltonian", "non-finite expectation"));
    }
    Ok(lin)
}

/// Monte Carlo estimate of the integral-form directional derivative and its two addends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationalDerivative {
    pub value: f64,
    pub se: f64,
    /// `E Σ (k + G^x p^x + G^y p^y)·(Δη − Δξ)`.
    pub singular: f64,
    pub singular_se: f64,
    /// `E Σ (H(μ) − H(q)) dt`.
    pub relaxed: f64,
    pub relaxed_se: f64,
}

pub fn variational_derivative(
    problem: &Problem,
    bundle: &TrajectoryBundle,
    adjoint: &AdjointSolution,
    q: &RelaxedControl,
    eta: &SingularControl,
) -> Result<VariationalDerivative> {
    check_inputs(problem, bundle, adjoint)?;
    let n = problem.time.steps;
    let m = problem.singular_dim;
    if q.steps() != n || q.count() != problem.action_grid.len() {
        return Err(Error::dim("direction q shape", n * problem.action_grid.len(), q.steps() * q.count()));
    }
    if eta.steps() != n || eta.dim() != m {
        return Err(Error::dim("direction eta shape", n * m, eta.steps() * eta.dim()));
    }
    let dt = problem.time.dt();
    let diff: Vec<f64> = eta.increments().iter().zip(bundle.xi.increments()).map(|(a, b)| a - b).collect();
    let per = par::map_indexed(bundle.count(), |s| {
        let mut sing = 0.0;
        let mut rel = 0.0;
        for_each_step(problem, bundle, adjoint, s, |k, h, cur, slack| {
            for i in 0..m {
                sing += slack[i] * diff[k * m + i];
            }
            rel += (cur - crate::measures::integrate_unchecked(h, q.row(k))) * dt;
        });
        (sing, rel)
    });
    let sing: Vec<f64> = per.iter().map(|p| p.0).collect();
    let rel: Vec<f64> = per.iter().map(|p| p.1).collect();
    let total: Vec<f64> = per.iter().map(|p| p.0 + p.1).collect();
    let (singular, singular_se) = par::mean_and_se(&sing);
    let (relaxed, relaxed_se) = par::mean_and_se(&rel);
    let (value, se) = par::mean_and_se(&total);
    Ok(VariationalDerivative {
        value,
        se,
        singular,
        singular_se,
        relaxed,
        relaxed_se,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Gap tolerance in Monte Carlo standard errors.
    pub gap_se: f64,
    /// Absolute floor on the gap tolerance (covers deterministic problems).
    pub gap_abs: f64,
    /// Slack tolerance relative to `max(sup|p^x|, sup|p^y|)`.
    pub slack_rel: f64,
    /// Complementarity tolerance relative to the total singular mass.
    pub complementarity_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            gap_se: 3.0,
            gap_abs: 1e-10,
            slack_rel: 1e-6,
            complementarity_rel: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    /// `Σ_k (max_j E[H_k(u_j)] − E[H_k(μ_k)]) dt`.
    pub hamiltonian_gap: f64,
    pub hamiltonian_gap_se: f64,
    /// Gap with a per-scenario maximizer (the adapted-control version).
    pub pathwise_gap: f64,
    /// `min_{k,i} E[k + G^x p^x + G^y p^y]`.
    pub slack_min: f64,
    pub pathwise_slack_min: f64,
    /// Slack minimum over cells whose increment is below the per-step cap,
    /// where negative slack is not excused by the box constraint.
    pub slack_min_below_cap: f64,
    /// `Σ_{k,i} 1{E slack > tol_slack} Δξ`.
    pub complementarity_violation: f64,
    pub tol_gap: f64,
    pub tol_slack: f64,
    pub tol_complementarity: f64,
    pub max1: bool,
    pub max2: bool,
    pub max3: bool,
    pub passed: bool,
}

impl OptimalityReport {
    /// Plain-text pass/fail table.
    pub fn render(&self) -> String {
        let mark = |b: bool| if b { "PASS" } else { "FAIL" };
        format!(
            "condition         statistic        tolerance        result\n\
             hamiltonian gap   {:<16.6e} {:<16.6e} {}\n\
             slack min         {:<16.6e} {:<16.6e} {}\n\
             complementarity   {:<16.6e} {:<16.6e} {}\n",
            self.hamiltonian_gap,
            self.tol_gap,
            mark(self.max1),
            self.slack_min,
            -self.tol_slack,
            mark(self.max2),
            self.complementarity_violation,
            self.tol_complementarity,
            mark(self.max3),
        )
    }
}

pub fn check_max_principle(
    problem: &Problem,
    bundle: &TrajectoryBundle,
    adjoint: &AdjointSolution,
    tol: &Tolerances,
) -> Result<OptimalityReport> {
    let lin = expected_linearization(problem, bundle, adjoint)?;
    let best = lin.maximizers();
    let dt = problem.time.dt();
    let samples = par::map_indexed(bundle.count(), |s| {
        let mut g = 0.0;
        for_each_step(problem, bundle, adjoint, s, |k, h, cur, _| g += (h[best[k]] - cur) * dt);
        g
    });
    let (_, gap_se) = par::mean_and_se(&samples);
    let gap: f64 = (0..lin.steps)
        .map(|k| (lin.mean_h_row(k)[best[k]] - lin.mean_h_current[k]) * dt)
        .sum();
    let tol_gap = tol.gap_se * gap_se + tol.gap_abs;
    let tol_slack = tol.slack_rel * adjoint.scale();
    let mass = bundle.xi.total_variation();
    let tol_comp = tol.complementarity_rel * mass;
    let m = problem.singular_dim;
    let cap = problem.increment_cap();
    let mut violation = 0.0;
    let mut below_cap = f64::INFINITY;
    for k in 0..lin.steps {
        for i in 0..m {
            let (slack, inc) = (lin.slack_row(k)[i], bundle.xi.row(k)[i]);
            if slack > tol_slack {
                violation += inc;
            }
            if inc < cap * (1.0 - 1e-9) {
                below_cap = below_cap.min(slack);
            }
        }
    }
    let slack_min = if m == 0 { 0.0 } else { lin.slack_min() };
    let max1 = gap <= tol_gap;
    let max2 = slack_min >= -tol_slack;
    let max3 = violation <= tol_comp;
    Ok(OptimalityReport {
        hamiltonian_gap: gap,
        hamiltonian_gap_se: gap_se,
        pathwise_gap: lin.pathwise_gap,
        slack_min,
        pathwise_slack_min: lin.pathwise_slack_min,
        slack_min_below_cap: if below_cap.is_finite() { below_cap } else { 0.0 },
        complementarity_violation: violation,
        tol_gap,
        tol_slack,
        tol_complementarity: tol_comp,
        max1,
        max2,
        max3,
        passed: max1 && max2 && max3,
    })
}
