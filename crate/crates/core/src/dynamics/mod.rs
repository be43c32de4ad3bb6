//! Forward simulation of the controlled state `(x, y)` by Euler–Maruyama over
//! Monte Carlo scenarios.
//!
//! Convention: the singular jump of step `k` is applied at the start of the
//! step, so the stored `x_k` is the left limit and `x_k^+ = x_k + G^x_k·Δξ_k`
//! is the state the drift and diffusion see.

mod coefficients;
mod diagnostics;
pub mod export;
mod noise;

use std::sync::Arc;

pub use coefficients::{
    sample_coefficients, CoeffSlice, CoefficientField, CoefficientModel, MixedCoeffs, PointTable,
    SampledCoefficients, TimeTable,
};
pub use diagnostics::{moment_diagnostics, Estimate, MomentReport, EXPLOSION_LEVEL};
pub use noise::NoiseBank;

use crate::error::{Error, Result};
use crate::measures::{RelaxedControl, SingularControl};
use crate::par;
use crate::problem::{Problem, TimeGrid, YDynamics};

/// Brownian increments plus the coefficient drivers they generate. Shared by
/// every pass of one optimization run (common random numbers).
#[derive(Debug, Clone)]
pub struct Scenarios {
    pub noise: NoiseBank,
    pub coefficients: SampledCoefficients,
    pub seed: u64,
}

impl Scenarios {
    pub fn generate(problem: &Problem, count: usize, seed: u64) -> Result<Arc<Scenarios>> {
        if count == 0 {
            return Err(Error::invalid("scenarios", "must be >= 1"));
        }
        let tg = problem.time;
        let noise = NoiseBank::generate(count, tg.steps, problem.brownian_dim, tg.dt(), seed);
        Scenarios::from_noise(problem, noise, seed)
    }

    pub fn from_noise(problem: &Problem, noise: NoiseBank, seed: u64) -> Result<Arc<Scenarios>> {
        problem.validate()?;
        if noise.dim() != problem.brownian_dim {
            return Err(Error::dim("noise bank dimension", problem.brownian_dim, noise.dim()));
        }
        let coefficients = sample_coefficients(&problem.coefficients, &problem.time, &problem.action_grid, &noise)?;
        Ok(Arc::new(Scenarios {
            noise,
            coefficients,
            seed,
        }))
    }

    pub fn count(&self) -> usize {
        self.noise.scenarios()
    }

    pub fn field<'a>(&'a self, problem: &'a Problem, scenario: usize) -> CoefficientField<'a> {
        CoefficientField {
            model: &problem.coefficients,
            grid: &problem.action_grid,
            time: &problem.time,
            sampled: &self.coefficients,
            scenario,
        }
    }
}

/// Simulated paths of every scenario under one pair of controls.
#[derive(Debug, Clone)]
pub struct TrajectoryBundle {
    pub scenarios: Arc<Scenarios>,
    pub time: TimeGrid,
    /// `S × (N+1)`, left limits at each grid time.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `G^x_k·Δξ_k` per step (the controls are deterministic, so these are
    /// shared by all scenarios).
    pub jump_x: Vec<f64>,
    pub jump_y: Vec<f64>,
    pub mu: RelaxedControl,
    pub xi: SingularControl,
}

impl TrajectoryBundle {
    pub fn count(&self) -> usize {
        self.scenarios.count()
    }

    pub fn steps(&self) -> usize {
        self.time.steps
    }

    #[inline]
    pub fn x(&self, s: usize, k: usize) -> f64 {
        self.x[s * (self.time.steps + 1) + k]
    }

    #[inline]
    pub fn y(&self, s: usize, k: usize) -> f64 {
        self.y[s * (self.time.steps + 1) + k]
    }

    /// State right after the jump of step `k` (`k < N`); `x_N` at `k = N`.
    #[inline]
    pub fn x_plus(&self, s: usize, k: usize) -> f64 {
        self.x(s, k) + self.jump_x.get(k).copied().unwrap_or(0.0)
    }

    #[inline]
    pub fn y_plus(&self, s: usize, k: usize) -> f64 {
        self.y(s, k) + self.jump_y.get(k).copied().unwrap_or(0.0)
    }

    pub fn x_path(&self, s: usize) -> &[f64] {
        let n = self.time.steps + 1;
        &self.x[s * n..(s + 1) * n]
    }

    pub fn y_path(&self, s: usize) -> &[f64] {
        let n = self.time.steps + 1;
        &self.y[s * n..(s + 1) * n]
    }

    #[inline]
    pub fn increment(&self, s: usize, k: usize) -> &[f64] {
        self.scenarios.noise.increment(s, k)
    }
}

/// One Euler step from the post-jump state; strict and relaxed simulations
/// share it so that Dirac rows reproduce strict paths bit for bit.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn euler_step(
    xp: f64,
    yp: f64,
    t: f64,
    dt: f64,
    c: &MixedCoeffs,
    ydyn: &dyn YDynamics,
    db: &[f64],
    sig_y: &mut [f64],
) -> (f64, f64) {
    let mut noise_x = 0.0;
    for ((chi, psi), dbi) in c.chi.iter().zip(&c.psi).zip(db) {
        noise_x += (chi + psi * xp) * dbi;
    }
    let x = xp + (c.upsilon + c.phi * xp) * dt + noise_x;
    ydyn.diffusion(t, yp, sig_y);
    let noise_y: f64 = sig_y.iter().zip(db).map(|(s, b)| s * b).sum();
    let y = yp + ydyn.drift(t, yp) * dt + noise_y;
    (x, y)
}

enum ControlRows<'a> {
    Relaxed(&'a RelaxedControl),
    Strict(&'a [usize]),
}

fn simulate(
    problem: &Problem,
    scenarios: Arc<Scenarios>,
    rows: ControlRows<'_>,
    xi: &SingularControl,
    ydyn: &dyn YDynamics,
) -> Result<TrajectoryBundle> {
    let tg = problem.time;
    let n = tg.steps;
    let d = problem.brownian_dim;
    let count = problem.action_grid.len();
    if xi.steps() != n || xi.dim() != problem.singular_dim {
        return Err(Error::dim("singular control shape", n * problem.singular_dim, xi.steps() * xi.dim()));
    }
    if scenarios.noise.steps() != n || scenarios.noise.dim() != d {
        return Err(Error::dim("noise bank shape", n * d, scenarios.noise.steps() * scenarios.noise.dim()));
    }
    let mu = match rows {
        ControlRows::Relaxed(mu) => {
            if mu.steps() != n || mu.count() != count {
                return Err(Error::dim("relaxed control shape", n * count, mu.steps() * mu.count()));
            }
            mu.clone()
        }
        ControlRows::Strict(path) => RelaxedControl::from_strict(path, count)?,
    };
    if mu.steps() != n {
        return Err(Error::dim("strict control length", n, mu.steps()));
    }
    let (jump_x, jump_y) = problem.jump_sizes(xi);
    let dt = tg.dt();
    let s_count = scenarios.count();
    let paths = par::try_map_indexed(s_count, |s| {
        let field = scenarios.field(problem, s);
        let mut slice = CoeffSlice::zeros(count, d);
        let mut mixed = MixedCoeffs::zeros(d);
        let mut sig_y = vec![0.0; d];
        let mut xs = Vec::with_capacity(n + 1);
        let mut ys = Vec::with_capacity(n + 1);
        let (mut x, mut y) = (problem.x0, problem.y0);
        xs.push(x);
        ys.push(y);
        for k in 0..n {
            field.slice(k, &mut slice);
            match &rows {
                ControlRows::Relaxed(_) => slice.mix(mu.row(k), &mut mixed),
                ControlRows::Strict(path) => slice.pick(path[k], &mut mixed),
            }
            let xp = x + jump_x[k];
            let yp = y + jump_y[k];
            (x, y) = euler_step(xp, yp, tg.time(k), dt, &mixed, ydyn, scenarios.noise.increment(s, k), &mut sig_y);
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::NonFinite {
                    quantity: "state",
                    step: k + 1,
                    scenario: s,
                });
            }
            xs.push(x);
            ys.push(y);
        }
        Ok((xs, ys))
    })?;
    let mut x = Vec::with_capacity(s_count * (n + 1));
    let mut y = Vec::with_capacity(s_count * (n + 1));
    for (xs, ys) in paths {
        x.extend(xs);
        y.extend(ys);
    }
    Ok(TrajectoryBundle {
        scenarios,
        time: tg,
        x,
        y,
        jump_x,
        jump_y,
        mu,
        xi: xi.clone(),
    })
}

/// Simulates the relaxed state equation under `(μ, ξ)`.
pub fn simulate_forward(
    problem: &Problem,
    scenarios: Arc<Scenarios>,
    mu: &RelaxedControl,
    xi: &SingularControl,
) -> Result<TrajectoryBundle> {
    simulate(problem, scenarios, ControlRows::Relaxed(mu), xi, &problem.y_dynamics)
}

/// As [`simulate_forward`] with caller-supplied `(b^y, σ^y)`.
pub fn simulate_forward_with(
    problem: &Problem,
    scenarios: Arc<Scenarios>,
    mu: &RelaxedControl,
    xi: &SingularControl,
    ydyn: &dyn YDynamics,
) -> Result<TrajectoryBundle> {
    simulate(problem, scenarios, ControlRows::Relaxed(mu), xi, ydyn)
}

/// Simulates the strict state equation along the grid-index path `u_k`.
pub fn simulate_strict(
    problem: &Problem,
    scenarios: Arc<Scenarios>,
    path: &[usize],
    xi: &SingularControl,
) -> Result<TrajectoryBundle> {
    if path.len() != problem.time.steps {
        return Err(Error::dim("strict control length", problem.time.steps, path.len()));
    }
    simulate(problem, scenarios, ControlRows::Strict(path), xi, &problem.y_dynamics)
}

/// Coefficients integrated against a relaxed control along every scenario
/// (`S × N`, vectors `S × N × d`).
#[derive(Debug, Clone)]
pub(crate) struct MixedPaths {
    pub steps: usize,
    pub d: usize,
    pub upsilon: Vec<f64>,
    pub phi: Vec<f64>,
    pub chi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl MixedPaths {
    #[inline]
    pub fn at(&self, s: usize, k: usize) -> (f64, f64, &[f64], &[f64]) {
        let i = s * self.steps + k;
        let v = i * self.d..(i + 1) * self.d;
        (self.upsilon[i], self.phi[i], &self.chi[v.clone()], &self.psi[v])
    }
}

pub(crate) fn mixed_paths(problem: &Problem, scenarios: &Scenarios, mu: &RelaxedControl) -> MixedPaths {
    let n = problem.time.steps;
    let d = problem.brownian_dim;
    let count = problem.action_grid.len();
    let per = par::map_indexed(scenarios.count(), |s| {
        let field = scenarios.field(problem, s);
        let mut slice = CoeffSlice::zeros(count, d);
        let mut m = MixedCoeffs::zeros(d);
        let mut out = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n * d), Vec::with_capacity(n * d));
        for k in 0..n {
            field.slice(k, &mut slice);
            slice.mix(mu.row(k), &mut m);
            out.0.push(m.upsilon);
            out.1.push(m.phi);
            out.2.extend_from_slice(&m.chi);
            out.3.extend_from_slice(&m.psi);
        }
        out
    });
    let mut mp = MixedPaths {
        steps: n,
        d,
        upsilon: Vec::new(),
        phi: Vec::new(),
        chi: Vec::new(),
        psi: Vec::new(),
    };
    for (u, ph, c, ps) in per {
        mp.upsilon.extend(u);
        mp.phi.extend(ph);
        mp.chi.extend(c);
        mp.psi.extend(ps);
    }
    mp
}
