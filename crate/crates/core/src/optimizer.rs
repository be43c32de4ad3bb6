//! Cost evaluation, the first-variation processes, finite differences, and
//! conditional-gradient (Frank–Wolfe) iterations over `(μ, ξ)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adjoint::{compare_adjoints, solve_adjoint, AdjointMethod, AdjointSolution};
use crate::dynamics::{mixed_paths, simulate_forward, Estimate, Scenarios, TrajectoryBundle};
use crate::error::{Error, Result};
use crate::maxprinciple::{
    check_max_principle, expected_linearization, variational_derivative, ExpectedLinearization, OptimalityReport,
    Tolerances,
};
use crate::measures::{combine_singular, convex_combine, RelaxedControl, SingularControl};
use crate::par;
use crate::problem::{dot, Problem, YDynamics};
use crate::regression::RegressionOptions;

/// Monte Carlo cost with the number of scenarios dropped for non-finite values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub se: f64,
    pub excluded: usize,
}

/// Per-scenario `Σ h(t_k, x_k^+, y_k^+, μ_k) dt + Σ k_k·Δξ_k + g(x_N, y_N)`.
pub fn scenario_costs(problem: &Problem, bundle: &TrajectoryBundle) -> Vec<f64> {
    let n = bundle.steps();
    let dt = problem.time.dt();
    let singular: f64 = (0..n).map(|k| dot(problem.singular_cost.at(k), bundle.xi.row(k))).sum();
    par::map_indexed(bundle.count(), |s| {
        let mut running = 0.0;
        for k in 0..n {
            let t = problem.time.time(k);
            running += problem.running_cost.value(t, bundle.x_plus(s, k), bundle.y_plus(s, k), bundle.mu.row(k)) * dt;
        }
        running + singular + problem.terminal_cost.value(bundle.x(s, n), bundle.y(s, n))
    })
}

fn finite_estimate(samples: &[f64]) -> CostEstimate {
    let kept: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
    let excluded = samples.len() - kept.len();
    if excluded > 0 {
        log::warn!("{excluded} scenario(s) with non-finite cost excluded");
    }
    let (mean, se) = par::mean_and_se(&kept);
    CostEstimate { mean, se, excluded }
}

pub fn evaluate_cost(problem: &Problem, bundle: &TrajectoryBundle) -> CostEstimate {
    finite_estimate(&scenario_costs(problem, bundle))
}

/// `(J(μ^θ, ξ^θ) − J(μ, ξ)) / θ` on common random numbers.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_derivative(
    problem: &Problem,
    scenarios: &Arc<Scenarios>,
    mu: &RelaxedControl,
    xi: &SingularControl,
    q: &RelaxedControl,
    eta: &SingularControl,
    theta: f64,
) -> Result<CostEstimate> {
    if !(theta > 0.0) {
        return Err(Error::invalid("theta", "finite differences need theta > 0"));
    }
    let base = simulate_forward(problem, scenarios.clone(), mu, xi)?;
    let moved = simulate_forward(
        problem,
        scenarios.clone(),
        &convex_combine(mu, q, theta)?,
        &combine_singular(xi, eta, theta)?,
    )?;
    let a = scenario_costs(problem, &base);
    let b = scenario_costs(problem, &moved);
    let quotients: Vec<f64> = a.iter().zip(&b).map(|(u, v)| (v - u) / theta).collect();
    Ok(finite_estimate(&quotients))
}

/// State sensitivities along a convex perturbation, stored as left limits
/// (`S × (N+1)`). `alpha_*` respond to the singular direction, `beta` to the
/// measure direction (`y` does not depend on the measure).
#[derive(Debug, Clone, PartialEq)]
pub struct FirstVariation {
    pub steps: usize,
    pub scenarios: usize,
    pub alpha_x: Vec<f64>,
    pub alpha_y: Vec<f64>,
    pub beta: Vec<f64>,
    /// `G^x_k·(Δη − Δξ)_k` and `G^y_k·(Δη − Δξ)_k`.
    pub kick_x: Vec<f64>,
    pub kick_y: Vec<f64>,
}

impl FirstVariation {
    #[inline]
    pub fn alpha_x(&self, s: usize, k: usize) -> f64 {
        self.alpha_x[s * (self.steps + 1) + k]
    }

    #[inline]
    pub fn alpha_y(&self, s: usize, k: usize) -> f64 {
        self.alpha_y[s * (self.steps + 1) + k]
    }

    #[inline]
    pub fn beta(&self, s: usize, k: usize) -> f64 {
        self.beta[s * (self.steps + 1) + k]
    }
}

fn check_direction(problem: &Problem, q: &RelaxedControl, eta: &SingularControl) -> Result<()> {
    let n = problem.time.steps;
    if q.steps() != n || q.count() != problem.action_grid.len() {
        return Err(Error::dim("direction q shape", n * problem.action_grid.len(), q.steps() * q.count()));
    }
    if eta.steps() != n || eta.dim() != problem.singular_dim {
        return Err(Error::dim("direction eta shape", n * problem.singular_dim, eta.steps() * eta.dim()));
    }
    Ok(())
}

/// Euler scheme for the linearized state equations on the bundle's noise:
/// `α^+ = α + G·(Δη − Δξ)`, `α_{k+1} = α^+(1 + φ dt + ψ·dB)`, and
/// `β_{k+1} = β(1 + φ dt + ψ·dB) + (b(q) − b(μ)) dt + (σ(q) − σ(μ))·dB` at `x^+`.
pub fn solve_first_variation(
    problem: &Problem,
    bundle: &TrajectoryBundle,
    q: &RelaxedControl,
    eta: &SingularControl,
) -> Result<FirstVariation> {
    check_direction(problem, q, eta)?;
    let n = problem.time.steps;
    let d = problem.brownian_dim;
    let dt = problem.time.dt();
    let m = problem.singular_dim;
    let mut kick_x = vec![0.0; n];
    let mut kick_y = vec![0.0; n];
    for k in 0..n {
        let diff: Vec<f64> = eta.row(k).iter().zip(bundle.xi.row(k)).map(|(a, b)| a - b).collect();
        debug_assert_eq!(diff.len(), m);
        kick_x[k] = dot(problem.gain_x.at(k), &diff);
        kick_y[k] = dot(problem.gain_y.at(k), &diff);
    }
    let cur = mixed_paths(problem, &bundle.scenarios, &bundle.mu);
    let dir = mixed_paths(problem, &bundle.scenarios, q);
    let ydyn = &problem.y_dynamics;
    let per = par::map_indexed(bundle.count(), |s| {
        let mut ax = vec![0.0; n + 1];
        let mut ay = vec![0.0; n + 1];
        let mut be = vec![0.0; n + 1];
        let mut sy = vec![0.0; d];
        for k in 0..n {
            let t = problem.time.time(k);
            let db = bundle.increment(s, k);
            let (u0, f0, c0, p0) = cur.at(s, k);
            let (u1, f1, c1, p1) = dir.at(s, k);
            let xp = bundle.x_plus(s, k);
            let grow_x = 1.0 + f0 * dt + dot(p0, db);
            ydyn.diffusion_dy(t, bundle.y_plus(s, k), &mut sy);
            let grow_y = 1.0 + ydyn.drift_dy(t, bundle.y_plus(s, k)) * dt + dot(&sy, db);
            ax[k + 1] = (ax[k] + kick_x[k]) * grow_x;
            ay[k + 1] = (ay[k] + kick_y[k]) * grow_y;
            let mut forcing = ((u1 - u0) + (f1 - f0) * xp) * dt;
            for c in 0..d {
                forcing += ((c1[c] - c0[c]) + (p1[c] - p0[c]) * xp) * db[c];
            }
            be[k + 1] = be[k] * grow_x + forcing;
        }
        (ax, ay, be)
    });
    let mut fv = FirstVariation {
        steps: n,
        scenarios: bundle.count(),
        alpha_x: Vec::with_capacity(bundle.count() * (n + 1)),
        alpha_y: Vec::with_capacity(bundle.count() * (n + 1)),
        beta: Vec::with_capacity(bundle.count() * (n + 1)),
        kick_x,
        kick_y,
    };
    for (ax, ay, be) in per {
        fv.alpha_x.extend(ax);
        fv.alpha_y.extend(ay);
        fv.beta.extend(be);
    }
    if fv.alpha_x.iter().chain(&fv.alpha_y).chain(&fv.beta).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            quantity: "first variation",
            step: n,
            scenario: 0,
        });
    }
    Ok(fv)
}

/// `E[g_x(α^x_N + β_N) + g_y α^y_N + Σ(h_x(α^{x+} + β) + h_y α^{y+}) dt + Σ k·(Δη − Δξ) + Σ(h(q) − h(μ)) dt]`.
pub fn first_variation_derivative(
    problem: &Problem,
    bundle: &TrajectoryBundle,
    fv: &FirstVariation,
    q: &RelaxedControl,
    eta: &SingularControl,
) -> Result<Estimate> {
    check_direction(problem, q, eta)?;
    if fv.steps != bundle.steps() || fv.scenarios != bundle.count() {
        return Err(Error::dim("first variation shape", bundle.count(), fv.scenarios));
    }
    let n = problem.time.steps;
    let dt = problem.time.dt();
    let rc = &problem.running_cost;
    let singular: f64 = (0..n)
        .map(|k| {
            let diff: Vec<f64> = eta.row(k).iter().zip(bundle.xi.row(k)).map(|(a, b)| a - b).collect();
            dot(problem.singular_cost.at(k), &diff)
        })
        .sum();
    let samples = par::map_indexed(bundle.count(), |s| {
        let mut v = singular;
        for k in 0..n {
            let t = problem.time.time(k);
            let (xp, yp) = (bundle.x_plus(s, k), bundle.y_plus(s, k));
            let (hx, hy) = rc.gradient(xp, yp, bundle.mu.row(k));
            let ax = fv.alpha_x(s, k) + fv.kick_x[k];
            let ay = fv.alpha_y(s, k) + fv.kick_y[k];
            v += (hx * (ax + fv.beta(s, k)) + hy * ay) * dt;
            v += (rc.value(t, xp, yp, q.row(k)) - rc.value(t, xp, yp, bundle.mu.row(k))) * dt;
        }
        let (gx, gy) = problem.terminal_cost.gradient(bundle.x(s, n), bundle.y(s, n));
        v + gx * (fv.alpha_x(s, n) + fv.beta(s, n)) + gy * fv.alpha_y(s, n)
    });
    Ok(Estimate::of(&samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// `θ_n = 2/(n+2)`, halved until the Armijo condition holds.
    Schedule,
    /// Backtracking from `θ = 1`.
    Armijo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerOptions {
    pub max_iterations: usize,
    pub step_rule: StepRule,
    pub armijo_c1: f64,
    pub max_halvings: usize,
    /// Absolute floor on the convergence threshold for the Frank–Wolfe gap.
    pub tol_abs: f64,
    /// Multiple of the gap's standard error below which the state counts as converged.
    pub gap_se: f64,
    pub adjoint: AdjointMethod,
    /// Also solve with the other adjoint method every this many iterations (0 = never).
    pub phi_check_every: usize,
    pub regression: RegressionOptions,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            max_iterations: 50,
            step_rule: StepRule::Schedule,
            armijo_c1: 1e-4,
            max_halvings: 30,
            tol_abs: 1e-10,
            gap_se: 3.0,
            adjoint: AdjointMethod::Regression,
            phi_check_every: 0,
            regression: RegressionOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterationState {
    pub scenarios: Arc<Scenarios>,
    pub mu: RelaxedControl,
    pub xi: SingularControl,
    pub cost: CostEstimate,
    /// Frank–Wolfe gap `−dJ` along the last computed direction.
    pub gap: Estimate,
    pub iteration: usize,
    pub theta: f64,
    pub converged: bool,
    /// No step length passed the descent test.
    pub stalled: bool,
}

impl IterationState {
    pub fn new(problem: &Problem, scenarios: Arc<Scenarios>, mu: RelaxedControl, xi: SingularControl) -> Result<Self> {
        let bundle = simulate_forward(problem, scenarios.clone(), &mu, &xi)?;
        let cost = evaluate_cost(problem, &bundle);
        Ok(IterationState {
            scenarios,
            mu,
            xi,
            cost,
            gap: Estimate {
                mean: f64::NAN,
                se: f64::NAN,
            },
            iteration: 0,
            theta: f64::NAN,
            converged: false,
            stalled: false,
        })
    }
}

/// One row of the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub cost_se: f64,
    pub gap: f64,
    pub gap_se: f64,
    pub theta: f64,
    pub accepted: bool,
    pub halvings: usize,
    pub singular_mass: f64,
    pub phi_drift: Option<f64>,
    pub excluded: usize,
}

/// Bang-bang minimizer of `Σ E[slack]·Δη` over increments in `[0, cap_k]`
/// with total mass at most `M`, filling the most negative slack first.
pub fn singular_direction(problem: &Problem, lin: &ExpectedLinearization, tol_slack: f64) -> SingularControl {
    let n = problem.time.steps;
    let m = problem.singular_dim;
    let mut cells: Vec<(f64, usize)> = (0..n * m)
        .map(|i| (lin.mean_slack[i], i))
        .filter(|(v, _)| *v < -tol_slack)
        .collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let cap = problem.increment_cap();
    let mut remaining = problem.singular_cap;
    let mut inc = vec![0.0; n * m];
    for (_, i) in cells {
        if remaining <= 0.0 {
            break;
        }
        let v = cap.min(remaining);
        inc[i] = v;
        remaining -= v;
    }
    SingularControl::from_flat(n, m, inc).expect("increments are nonnegative and finite")
}

/// One conditional-gradient step on a fixed scenario bank.
pub fn frank_wolfe_iterate(
    state: IterationState,
    problem: &Problem,
    options: &OptimizerOptions,
    tolerances: &Tolerances,
) -> Result<(IterationState, IterationRecord)> {
    let bundle = simulate_forward(problem, state.scenarios.clone(), &state.mu, &state.xi)?;
    let base = scenario_costs(problem, &bundle);
    let cost = finite_estimate(&base);
    let adjoint = solve_adjoint(problem, &bundle, options.adjoint, &options.regression)?;
    let phi_drift = if options.phi_check_every > 0 && state.iteration % options.phi_check_every == 0 {
        let other = match options.adjoint {
            AdjointMethod::Regression => AdjointMethod::PhiConstruction,
            AdjointMethod::PhiConstruction => AdjointMethod::Regression,
        };
        let check = solve_adjoint(problem, &bundle, other, &options.regression)?;
        Some(compare_adjoints(&adjoint, &check)?.relative)
    } else {
        None
    };
    let lin = expected_linearization(problem, &bundle, &adjoint)?;
    let q = RelaxedControl::from_strict(&lin.maximizers(), problem.action_grid.len())?;
    let eta = singular_direction(problem, &lin, tolerances.slack_rel * adjoint.scale());
    let vd = variational_derivative(problem, &bundle, &adjoint, &q, &eta)?;
    let gap = Estimate {
        mean: -vd.value,
        se: vd.se,
    };
    let mut record = IterationRecord {
        iteration: state.iteration,
        cost: cost.mean,
        cost_se: cost.se,
        gap: gap.mean,
        gap_se: gap.se,
        theta: 0.0,
        accepted: false,
        halvings: 0,
        singular_mass: state.xi.total_variation(),
        phi_drift,
        excluded: cost.excluded,
    };
    let mut next = IterationState { cost, gap, ..state };
    if gap.mean <= (options.gap_se * gap.se).max(options.tol_abs) {
        next.converged = true;
        return Ok((next, record));
    }
    let mut theta = match options.step_rule {
        StepRule::Schedule => 2.0 / (next.iteration as f64 + 2.0),
        StepRule::Armijo => 1.0,
    };
    for halvings in 0..=options.max_halvings {
        let mu = convex_combine(&next.mu, &q, theta)?;
        let xi = combine_singular(&next.xi, &eta, theta)?;
        let moved = match simulate_forward(problem, next.scenarios.clone(), &mu, &xi) {
            Ok(b) => b,
            Err(e) if e.is_numerical() => {
                theta *= 0.5;
                continue;
            }
            Err(e) => return Err(e),
        };
        let trial = scenario_costs(problem, &moved);
        let diffs: Vec<f64> = trial.iter().zip(&base).map(|(a, b)| a - b).collect();
        let change = finite_estimate(&diffs);
        if change.mean.is_finite() && change.mean <= options.armijo_c1 * theta * vd.value {
            record.theta = theta;
            record.accepted = true;
            record.halvings = halvings;
            next.mu = mu;
            next.xi = xi;
            next.cost = finite_estimate(&trial);
            next.theta = theta;
            next.iteration += 1;
            return Ok((next, record));
        }
        theta *= 0.5;
    }
    record.halvings = options.max_halvings;
    next.stalled = true;
    Ok((next, record))
}

/// Result of a full optimization run.
#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub state: IterationState,
    pub records: Vec<IterationRecord>,
    pub bundle: TrajectoryBundle,
    pub adjoint: AdjointSolution,
    pub report: OptimalityReport,
}

/// Iterates until convergence, a stall, or `max_iterations` accepted steps,
/// then checks the maximum principle at the final controls.
pub fn optimize(
    problem: &Problem,
    scenarios: Arc<Scenarios>,
    mu: RelaxedControl,
    xi: SingularControl,
    options: &OptimizerOptions,
    tolerances: &Tolerances,
) -> Result<OptimizeOutcome> {
    xi.check_admissible(problem.singular_cap)?;
    let mut state = IterationState::new(problem, scenarios, mu, xi)?;
    let mut records = Vec::new();
    while state.iteration < options.max_iterations {
        let (next, record) = frank_wolfe_iterate(state, problem, options, tolerances)?;
        log::info!(
            "iteration {}: J = {:.6e} ± {:.2e}, gap = {:.3e}, theta = {}",
            record.iteration,
            record.cost,
            record.cost_se,
            record.gap,
            record.theta
        );
        records.push(record);
        state = next;
        if state.converged || state.stalled {
            break;
        }
    }
    let bundle = simulate_forward(problem, state.scenarios.clone(), &state.mu, &state.xi)?;
    state.cost = evaluate_cost(problem, &bundle);
    let adjoint = solve_adjoint(problem, &bundle, options.adjoint, &options.regression)?;
    let report = check_max_principle(problem, &bundle, &adjoint, tolerances)?;
    Ok(OptimizeOutcome {
        state,
        records,
        bundle,
        adjoint,
        report,
    })
}

/// Writes the iteration log as CSV.
pub fn write_iterations_csv<W: std::io::Write>(records: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "iteration",
        "cost",
        "cost_se",
        "gap",
        "gap_se",
        "theta",
        "accepted",
        "halvings",
        "singular_mass",
        "phi_drift",
        "excluded",
    ])?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            r.cost.to_string(),
            r.cost_se.to_string(),
            r.gap.to_string(),
            r.gap_se.to_string(),
            r.theta.to_string(),
            r.accepted.to_string(),
            r.halvings.to_string(),
            r.singular_mass.to_string(),
            r.phi_drift.map(|v| v.to_string()).unwrap_or_default(),
            r.excluded.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
