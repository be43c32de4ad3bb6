//! Backward adjoint processes `(p^x, P^x)` and `(p^y, P^y)`.
//!
//! Two solvers share one discretization. The regression solver runs the
//! backward recursion
//!
//! ```text
//! p̄_k = E[p_{k+1} | ℱ_k],   P_k = E[p_{k+1} dB_k | ℱ_k] / dt,
//! p_k = (1 + φ_k dt) p̄_k + ψ_k·P_k dt + h_x(k) dt,   p_N = g_x(x_N, y_N),
//! ```
//!
//! which is the exact gradient of the Euler cost with respect to the
//! post-jump state. The fundamental-solution solver builds `Φ`, `Φ^{-1}` and
//! the terminal variable `Φ_N g_x + Σ Φ_j h_x(j) dt`, then reads `p` off its
//! conditional expectation and `P` off the martingale increment.

use serde::{Deserialize, Serialize};

use crate::dynamics::{mixed_paths, MixedPaths, TrajectoryBundle};
use crate::error::{Error, Result};
use crate::par;
use crate::problem::{Problem, YDynamics};
use crate::regression::{project, RegressionOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AdjointMethod {
    PhiConstruction,
    #[default]
    Regression,
}

/// `Φ` and `Φ^{-1}` along every scenario (`S × (N+1)`).
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalPair {
    pub steps: usize,
    pub phi: Vec<f64>,
    pub phi_inv: Vec<f64>,
}

impl FundamentalPair {
    #[inline]
    pub fn phi(&self, s: usize, k: usize) -> f64 {
        self.phi[s * (self.steps + 1) + k]
    }

    #[inline]
    pub fn phi_inv(&self, s: usize, k: usize) -> f64 {
        self.phi_inv[s * (self.steps + 1) + k]
    }

    /// `max_{s,k} |Φ_k Φ^{-1}_k − 1|`.
    pub fn max_product_error(&self) -> f64 {
        self.phi
            .iter()
            .zip(&self.phi_inv)
            .map(|(a, b)| (a * b - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `max_k |E[Φ_k Φ^{-1}_k] − 1|` over the scenario sample.
    pub fn max_mean_product_error(&self) -> f64 {
        let s_count = self.phi.len() / (self.steps + 1);
        (0..=self.steps)
            .map(|k| {
                let prods: Vec<f64> = (0..s_count).map(|s| self.phi(s, k) * self.phi_inv(s, k)).collect();
                (par::mean_and_se(&prods).0 - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Per-scenario quantities the backward equations need, all evaluated at the
/// post-jump state of each step.
pub(crate) struct Linearization {
    pub steps: usize,
    pub d: usize,
    pub mixed: MixedPaths,
    /// `b^y_y` (`S × N`) and `σ^y_y` (`S × N × d`).
    pub by_y: Vec<f64>,
    pub sy_y: Vec<f64>,
    pub hx: Vec<f64>,
    pub hy: Vec<f64>,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

impl Linearization {
    pub fn new(problem: &Problem, bundle: &TrajectoryBundle) -> Self {
        let n = problem.time.steps;
        let d = problem.brownian_dim;
        let mixed = mixed_paths(problem, &bundle.scenarios, &bundle.mu);
        let ydyn = &problem.y_dynamics;
        let per = par::map_indexed(bundle.count(), |s| {
            let mut by = Vec::with_capacity(n);
            let mut sy = vec![0.0; n * d];
            let mut hx = Vec::with_capacity(n);
            let mut hy = Vec::with_capacity(n);
            for k in 0..n {
                let t = problem.time.time(k);
                let (xp, yp) = (bundle.x_plus(s, k), bundle.y_plus(s, k));
                by.push(ydyn.drift_dy(t, yp));
                ydyn.diffusion_dy(t, yp, &mut sy[k * d..(k + 1) * d]);
                let (a, b) = problem.running_cost.gradient(xp, yp, bundle.mu.row(k));
                hx.push(a);
                hy.push(b);
            }
            let (gx, gy) = problem.terminal_cost.gradient(bundle.x(s, n), bundle.y(s, n));
            (by, sy, hx, hy, gx, gy)
        });
        let mut lin = Linearization {
            steps: n,
            d,
            mixed,
            by_y: Vec::new(),
            sy_y: Vec::new(),
            hx: Vec::new(),
            hy: Vec::new(),
            gx: Vec::new(),
            gy: Vec::new(),
        };
        for (by, sy, hx, hy, gx, gy) in per {
            lin.by_y.extend(by);
            lin.sy_y.extend(sy);
            lin.hx.extend(hx);
            lin.hy.extend(hy);
            lin.gx.push(gx);
            lin.gy.push(gy);
        }
        lin
    }

    #[inline]
    fn x_coeffs(&self, s: usize, k: usize) -> (f64, &[f64]) {
        let (_, phi, _, psi) = self.mixed.at(s, k);
        (phi, psi)
    }

    #[inline]
    fn y_coeffs(&self, s: usize, k: usize) -> (f64, &[f64]) {
        let i = s * self.steps + k;
        (self.by_y[i], &self.sy_y[i * self.d..(i + 1) * self.d])
    }

    /// One-step growth factor `1 + a dt + b·dB` of the homogeneous equation.
    #[inline]
    fn factor(a: f64, b: &[f64], dt: f64, db: &[f64]) -> f64 {
        1.0 + a * dt + b.iter().zip(db).map(|(u, v)| u * v).sum::<f64>()
    }

    #[inline]
    fn inverse_factor(a: f64, b: &[f64], dt: f64, db: &[f64]) -> f64 {
        let b2: f64 = b.iter().map(|v| v * v).sum();
        1.0 + (b2 - a) * dt - b.iter().zip(db).map(|(u, v)| u * v).sum::<f64>()
    }
}

/// Adjoint paths of every scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSolution {
    pub method: AdjointMethod,
    pub steps: usize,
    pub scenarios: usize,
    pub dim: usize,
    /// `S × (N+1)`.
    pub px: Vec<f64>,
    pub py: Vec<f64>,
    /// `S × (N+1) × d`; the terminal entry is zero.
    pub big_px: Vec<f64>,
    pub big_py: Vec<f64>,
    /// One-step-ahead conditional means `E[p_{k+1} | ℱ_k]` (`S × N`).
    pub px_ahead: Vec<f64>,
    pub py_ahead: Vec<f64>,
}

impl AdjointSolution {
    fn zeros(method: AdjointMethod, scenarios: usize, steps: usize, dim: usize) -> Self {
        let m = scenarios * (steps + 1);
        AdjointSolution {
            method,
            steps,
            scenarios,
            dim,
            px: vec![0.0; m],
            py: vec![0.0; m],
            big_px: vec![0.0; m * dim],
            big_py: vec![0.0; m * dim],
            px_ahead: vec![0.0; scenarios * steps],
            py_ahead: vec![0.0; scenarios * steps],
        }
    }

    #[inline]
    fn idx(&self, s: usize, k: usize) -> usize {
        s * (self.steps + 1) + k
    }

    #[inline]
    pub fn px(&self, s: usize, k: usize) -> f64 {
        self.px[self.idx(s, k)]
    }

    #[inline]
    pub fn py(&self, s: usize, k: usize) -> f64 {
        self.py[self.idx(s, k)]
    }

    #[inline]
    pub fn big_px(&self, s: usize, k: usize) -> &[f64] {
        let i = self.idx(s, k);
        &self.big_px[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn big_py(&self, s: usize, k: usize) -> &[f64] {
        let i = self.idx(s, k);
        &self.big_py[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn px_ahead(&self, s: usize, k: usize) -> f64 {
        self.px_ahead[s * self.steps + k]
    }

    #[inline]
    pub fn py_ahead(&self, s: usize, k: usize) -> f64 {
        self.py_ahead[s * self.steps + k]
    }

    /// `max(sup |p^x|, sup |p^y|)`, the scale used for slack tolerances.
    pub fn scale(&self) -> f64 {
        self.px.iter().chain(&self.py).fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_finite(&self) -> Result<()> {
        let n1 = self.steps + 1;
        for (name, v) in [("adjoint p^x", &self.px), ("adjoint p^y", &self.py)] {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    quantity: name,
                    step: i % n1,
                    scenario: i / n1,
                });
            }
        }
        for (name, v) in [("adjoint P^x", &self.big_px), ("adjoint P^y", &self.big_py)] {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                let j = i / self.dim;
                return Err(Error::NonFinite {
                    quantity: name,
                    step: j % n1,
                    scenario: j / n1,
                });
            }
        }
        Ok(())
    }

    /// Writes `scenario,step,t,px,Px_1..Px_d,py,Py_1..Py_d`.
    pub fn write_csv<W: std::io::Write>(&self, horizon: f64, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["scenario".to_string(), "step".into(), "t".into(), "px".into()];
        header.extend((1..=self.dim).map(|i| format!("Px_{i}")));
        header.push("py".into());
        header.extend((1..=self.dim).map(|i| format!("Py_{i}")));
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for s in 0..self.scenarios {
            for k in 0..=self.steps {
                row.clear();
                row.push(s.to_string());
                row.push(k.to_string());
                row.push((horizon * k as f64 / self.steps as f64).to_string());
                row.push(self.px(s, k).to_string());
                row.extend(self.big_px(s, k).iter().map(|v| v.to_string()));
                row.push(self.py(s, k).to_string());
                row.extend(self.big_py(s, k).iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Arrays for the binary cache.
    pub fn cache_arrays(&self) -> Vec<(String, Vec<f64>)> {
        vec![
            ("px".into(), self.px.clone()),
            ("Px".into(), self.big_px.clone()),
            ("py".into(), self.py.clone()),
            ("Py".into(), self.big_py.clone()),
        ]
    }
}

/// Fundamental solutions of the homogeneous x- and y-equations, reusing the
/// bundle's increments.
pub fn solve_fundamental(problem: &Problem, bundle: &TrajectoryBundle) -> Result<(FundamentalPair, FundamentalPair)> {
    let lin = Linearization::new(problem, bundle);
    fundamental_from(&lin, bundle, problem.time.dt())
}

fn fundamental_from(
    lin: &Linearization,
    bundle: &TrajectoryBundle,
    dt: f64,
) -> Result<(FundamentalPair, FundamentalPair)> {
    let n = lin.steps;
    let per = par::try_map_indexed(bundle.count(), |s| {
        let mut out = [
            Vec::with_capacity(n + 1),
            Vec::with_capacity(n + 1),
            Vec::with_capacity(n + 1),
            Vec::with_capacity(n + 1),
        ];
        let (mut fx, mut ix, mut fy, mut iy) = (1.0f64, 1.0f64, 1.0f64, 1.0f64);
        for k in 0..=n {
            for (o, v) in out.iter_mut().zip([fx, ix, fy, iy]) {
                o.push(v);
            }
            if ![fx, ix, fy, iy].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    quantity: "fundamental solution",
                    step: k,
                    scenario: s,
                });
            }
            if k == n {
                break;
            }
            let db = bundle.increment(s, k);
            let (a, b) = lin.x_coeffs(s, k);
            fx *= Linearization::factor(a, b, dt, db);
            ix *= Linearization::inverse_factor(a, b, dt, db);
            let (a, b) = lin.y_coeffs(s, k);
            fy *= Linearization::factor(a, b, dt, db);
            iy *= Linearization::inverse_factor(a, b, dt, db);
        }
        Ok(out)
    })?;
    let mut x = FundamentalPair {
        steps: n,
        phi: Vec::new(),
        phi_inv: Vec::new(),
    };
    let mut y = x.clone();
    for [a, b, c, d] in per {
        x.phi.extend(a);
        x.phi_inv.extend(b);
        y.phi.extend(c);
        y.phi_inv.extend(d);
    }
    Ok((x, y))
}

/// Regression features at step `k`: post-jump state plus the stochastic
/// coefficient drivers (which are part of the Markov state).
fn features(problem: &Problem, bundle: &TrajectoryBundle, k: usize) -> Vec<Vec<f64>> {
    let s_count = bundle.count();
    let mut cols = vec![
        (0..s_count).map(|s| bundle.x_plus(s, k)).collect::<Vec<_>>(),
        (0..s_count).map(|s| bundle.y_plus(s, k)).collect::<Vec<_>>(),
    ];
    for i in problem.coefficients.stochastic_drivers() {
        cols.push((0..s_count).map(|s| bundle.scenarios.coefficients.drivers(s, k)[i]).collect());
    }
    cols
}

fn regress(
    problem: &Problem,
    bundle: &TrajectoryBundle,
    k: usize,
    targets: &[Vec<f64>],
    opts: &RegressionOptions,
) -> Result<Vec<Vec<f64>>> {
    let cols = features(problem, bundle, k);
    let fr: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    let tr: Vec<&[f64]> = targets.iter().map(|c| c.as_slice()).collect();
    project(&fr, &tr, opts, k)
}

/// Conditional means of `values` and of their martingale increments
/// `(v − E[v | ℱ_k]) dB_k^c`, indexed `v · d + c`. Centering first makes the
/// covariance estimate vanish exactly for targets known at step `k`.
fn regress_with_increments(
    problem: &Problem,
    bundle: &TrajectoryBundle,
    k: usize,
    values: &[Vec<f64>],
    opts: &RegressionOptions,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let d = problem.brownian_dim;
    let means = regress(problem, bundle, k, values, opts)?;
    let mut products = Vec::with_capacity(values.len() * d);
    for (v, m) in values.iter().zip(&means) {
        for c in 0..d {
            products.push(
                (0..v.len())
                    .map(|s| (v[s] - m[s]) * bundle.increment(s, k)[c])
                    .collect::<Vec<f64>>(),
            );
        }
    }
    let covs = regress(problem, bundle, k, &products, opts)?;
    Ok((means, covs))
}

fn check_bundle(problem: &Problem, bundle: &TrajectoryBundle) -> Result<()> {
    if bundle.steps() != problem.time.steps || bundle.scenarios.noise.dim() != problem.brownian_dim {
        return Err(Error::dim("bundle shape", problem.time.steps, bundle.steps()));
    }
    Ok(())
}

/// Backward regression scheme.
pub fn solve_adjoint_regression(
    problem: &Problem,
    bundle: &TrajectoryBundle,
    opts: &RegressionOptions,
) -> Result<AdjointSolution> {
    check_bundle(problem, bundle)?;
    let lin = Linearization::new(problem, bundle);
    let (n, d, s_count) = (lin.steps, lin.d, bundle.count());
    let dt = problem.time.dt();
    let mut sol = AdjointSolution::zeros(AdjointMethod::Regression, s_count, n, d);
    for s in 0..s_count {
        let i = sol.idx(s, n);
        sol.px[i] = lin.gx[s];
        sol.py[i] = lin.gy[s];
    }
    for k in (0..n).rev() {
        let next = vec![
            (0..s_count).map(|s| sol.px(s, k + 1)).collect::<Vec<_>>(),
            (0..s_count).map(|s| sol.py(s, k + 1)).collect::<Vec<_>>(),
        ];
        let (means, covs) = regress_with_increments(problem, bundle, k, &next, opts)?;
        for s in 0..s_count {
            let lin_i = s * n + k;
            let i = sol.idx(s, k);
            let (phi, psi) = lin.x_coeffs(s, k);
            let (by, sy) = lin.y_coeffs(s, k);
            let pbx = means[0][s];
            let pby = means[1][s];
            let mut corr_x = 0.0;
            let mut corr_y = 0.0;
            for c in 0..d {
                let bx = covs[c][s] / dt;
                let byc = covs[d + c][s] / dt;
                sol.big_px[i * d + c] = bx;
                sol.big_py[i * d + c] = byc;
                corr_x += psi[c] * bx;
                corr_y += sy[c] * byc;
            }
            sol.px_ahead[lin_i] = pbx;
            sol.py_ahead[lin_i] = pby;
            sol.px[i] = (1.0 + phi * dt) * pbx + corr_x * dt + lin.hx[lin_i] * dt;
            sol.py[i] = (1.0 + by * dt) * pby + corr_y * dt + lin.hy[lin_i] * dt;
        }
    }
    sol.check_finite()?;
    Ok(sol)
}

/// Construction through the fundamental solutions and the conditional
/// expectation of the terminal variable.
pub fn solve_adjoint_phi(problem: &Problem, bundle: &TrajectoryBundle, opts: &RegressionOptions) -> Result<AdjointSolution> {
    check_bundle(problem, bundle)?;
    let lin = Linearization::new(problem, bundle);
    let (n, d, s_count) = (lin.steps, lin.d, bundle.count());
    let dt = problem.time.dt();
    let (fx, fy) = fundamental_from(&lin, bundle, dt)?;
    // tail_k = Φ_N g + Σ_{j≥k} Φ_j h(j) dt
    let n1 = n + 1;
    let mut tail_x = vec![0.0; s_count * n1];
    let mut tail_y = vec![0.0; s_count * n1];
    for s in 0..s_count {
        let b = s * n1;
        tail_x[b + n] = fx.phi(s, n) * lin.gx[s];
        tail_y[b + n] = fy.phi(s, n) * lin.gy[s];
        for k in (0..n).rev() {
            tail_x[b + k] = tail_x[b + k + 1] + fx.phi(s, k) * lin.hx[s * n + k] * dt;
            tail_y[b + k] = tail_y[b + k + 1] + fy.phi(s, k) * lin.hy[s * n + k] * dt;
        }
    }
    let mut sol = AdjointSolution::zeros(AdjointMethod::PhiConstruction, s_count, n, d);
    for s in 0..s_count {
        let i = sol.idx(s, n);
        sol.px[i] = lin.gx[s];
        sol.py[i] = lin.gy[s];
    }
    // steps are independent of each other; each is one cross-scenario regression
    let fits = (0..n)
        .map(|k| {
            // per component: Φ^{-1}_k tail_k, Φ^{-1}_{k+1} tail_{k+1}, Φ^{-1}_k tail_{k+1}
            let mut values = vec![vec![0.0; s_count]; 6];
            for s in 0..s_count {
                let b = s * n1;
                for (off, pair, tail) in [(0, &fx, &tail_x), (3, &fy, &tail_y)] {
                    let inv = pair.phi_inv(s, k);
                    values[off][s] = inv * tail[b + k];
                    values[off + 1][s] = pair.phi_inv(s, k + 1) * tail[b + k + 1];
                    values[off + 2][s] = inv * tail[b + k + 1];
                }
            }
            regress_with_increments(problem, bundle, k, &values, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    for (k, (means, covs)) in fits.into_iter().enumerate() {
        for s in 0..s_count {
            let i = sol.idx(s, k);
            let (_, psi) = lin.x_coeffs(s, k);
            let (_, sy) = lin.y_coeffs(s, k);
            let (px, py) = (means[0][s], means[3][s]);
            sol.px[i] = px;
            sol.py[i] = py;
            sol.px_ahead[s * n + k] = means[1][s];
            sol.py_ahead[s * n + k] = means[4][s];
            for c in 0..d {
                sol.big_px[i * d + c] = covs[2 * d + c][s] / dt - psi[c] * px;
                sol.big_py[i * d + c] = covs[5 * d + c][s] / dt - sy[c] * py;
            }
        }
    }
    sol.check_finite()?;
    Ok(sol)
}

pub fn solve_adjoint(
    problem: &Problem,
    bundle: &TrajectoryBundle,
    method: AdjointMethod,
    opts: &RegressionOptions,
) -> Result<AdjointSolution> {
    match method {
        AdjointMethod::Regression => solve_adjoint_regression(problem, bundle, opts),
        AdjointMethod::PhiConstruction => solve_adjoint_phi(problem, bundle, opts),
    }
}

/// Discrepancy between two solutions' `p^x` paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjointComparison {
    /// `max_k` of the cross-scenario RMS of `p^x_a − p^x_b`.
    pub sup_rms_difference: f64,
    /// RMS of `p^x_a` over all scenarios and steps.
    pub signal_rms: f64,
    pub relative: f64,
}

pub fn compare_adjoints(a: &AdjointSolution, b: &AdjointSolution) -> Result<AdjointComparison> {
    if a.px.len() != b.px.len() || a.steps != b.steps {
        return Err(Error::dim("adjoint comparison", a.px.len(), b.px.len()));
    }
    let n1 = a.steps + 1;
    let mut sup = 0.0f64;
    for k in 0..n1 {
        let ms = (0..a.scenarios).map(|s| (a.px(s, k) - b.px(s, k)).powi(2)).sum::<f64>() / a.scenarios as f64;
        sup = sup.max(ms.sqrt());
    }
    let signal = (a.px.iter().map(|v| v * v).sum::<f64>() / a.px.len() as f64).sqrt();
    Ok(AdjointComparison {
        sup_rms_difference: sup,
        signal_rms: signal,
        relative: if signal > 0.0 { sup / signal } else { sup },
    })
}
