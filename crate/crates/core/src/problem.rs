//! Problem definition: time grid, action grid, coefficients, the second state
//! component's dynamics, jump gains and the three cost terms.

use serde::{Deserialize, Serialize};

use crate::dynamics::CoefficientModel;
use crate::error::{Error, Result};
use crate::measures::{ActionGrid, DEFAULT_SINGULAR_CAP};

/// Uniform grid `t_k = k T / N`, `k = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        let tg = TimeGrid { horizon, steps };
        tg.validate()?;
        Ok(tg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("time.steps", "must be >= 1"));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::invalid("time.horizon", format!("{} is not a positive finite horizon", self.horizon)));
        }
        Ok(())
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.steps as f64
    }
}

/// A per-step ℝ^m quantity: either constant in time or tabulated per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepVector {
    Constant(Vec<f64>),
    Tabulated(Vec<Vec<f64>>),
}

impl StepVector {
    #[inline]
    pub fn at(&self, k: usize) -> &[f64] {
        match self {
            StepVector::Constant(v) => v,
            StepVector::Tabulated(rows) => &rows[k],
        }
    }

    pub fn validate(&self, name: &str, steps: usize, dim: usize) -> Result<()> {
        let bad = |got: usize| Error::invalid(name, format!("expected {dim} components per step, got {got}"));
        match self {
            StepVector::Constant(v) => {
                if v.len() != dim {
                    return Err(bad(v.len()));
                }
                check_finite(name, v)
            }
            StepVector::Tabulated(rows) => {
                if rows.len() != steps {
                    return Err(Error::invalid(name, format!("expected {steps} rows, got {}", rows.len())));
                }
                for r in rows {
                    if r.len() != dim {
                        return Err(bad(r.len()));
                    }
                    check_finite(name, r)?;
                }
                Ok(())
            }
        }
    }

    /// Dense `steps × dim` copy.
    pub fn dense(&self, steps: usize) -> Vec<f64> {
        (0..steps).flat_map(|k| self.at(k).to_vec()).collect()
    }

    pub fn scaled(&self, c: f64) -> StepVector {
        match self {
            StepVector::Constant(v) => StepVector::Constant(v.iter().map(|x| x * c).collect()),
            StepVector::Tabulated(rows) => {
                StepVector::Tabulated(rows.iter().map(|r| r.iter().map(|x| x * c).collect()).collect())
            }
        }
    }
}

pub(crate) fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(name, "contains a non-finite value"));
    }
    Ok(())
}

fn one() -> f64 {
    1.0
}

/// Smooth function of the state `(x, y)` used for terminal and running costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateFunction {
    #[default]
    Zero,
    /// `c + a x + b y`
    Linear {
        #[serde(default)]
        x: f64,
        #[serde(default)]
        y: f64,
        #[serde(default)]
        constant: f64,
    },
    /// `c + a x + b y + ½ a₂ x² + ½ b₂ y² + m x y`
    Quadratic {
        #[serde(default)]
        xx: f64,
        #[serde(default)]
        yy: f64,
        #[serde(default)]
        xy: f64,
        #[serde(default)]
        x: f64,
        #[serde(default)]
        y: f64,
        #[serde(default)]
        constant: f64,
    },
    /// `−w s tanh((a x + b y)/s)`: a bounded, saturating disutility of wealth.
    Saturating {
        weight: f64,
        scale: f64,
        #[serde(default = "one")]
        x_weight: f64,
        #[serde(default = "one")]
        y_weight: f64,
    },
}

impl StateFunction {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        match *self {
            StateFunction::Zero => 0.0,
            StateFunction::Linear { x: a, y: b, constant } => constant + a * x + b * y,
            StateFunction::Quadratic {
                xx,
                yy,
                xy,
                x: a,
                y: b,
                constant,
            } => constant + a * x + b * y + 0.5 * xx * x * x + 0.5 * yy * y * y + xy * x * y,
            StateFunction::Saturating {
                weight,
                scale,
                x_weight,
                y_weight,
            } => -weight * scale * ((x_weight * x + y_weight * y) / scale).tanh(),
        }
    }

    /// `(∂/∂x, ∂/∂y)`.
    pub fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            StateFunction::Zero => (0.0, 0.0),
            StateFunction::Linear { x: a, y: b, .. } => (a, b),
            StateFunction::Quadratic {
                xx, yy, xy, x: a, y: b, ..
            } => (a + xx * x + xy * y, b + yy * y + xy * x),
            StateFunction::Saturating {
                weight,
                scale,
                x_weight,
                y_weight,
            } => {
                let th = ((x_weight * x + y_weight * y) / scale).tanh();
                let sech2 = 1.0 - th * th;
                (-weight * x_weight * sech2, -weight * y_weight * sech2)
            }
        }
    }

    pub fn scaled(&self, c: f64) -> StateFunction {
        match *self {
            StateFunction::Zero => StateFunction::Zero,
            StateFunction::Linear { x, y, constant } => StateFunction::Linear {
                x: c * x,
                y: c * y,
                constant: c * constant,
            },
            StateFunction::Quadratic {
                xx,
                yy,
                xy,
                x,
                y,
                constant,
            } => StateFunction::Quadratic {
                xx: c * xx,
                yy: c * yy,
                xy: c * xy,
                x: c * x,
                y: c * y,
                constant: c * constant,
            },
            StateFunction::Saturating {
                weight,
                scale,
                x_weight,
                y_weight,
            } => StateFunction::Saturating {
                weight: c * weight,
                scale,
                x_weight,
                y_weight,
            },
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if let StateFunction::Saturating { scale, .. } = self {
            if !(*scale > 0.0) {
                return Err(Error::invalid(name, "saturating scale must be positive"));
            }
        }
        Ok(())
    }
}

/// Running cost `h(t, x, y, u_j) = e^{−δt} ℓ_j + w_j s(x, y)`.
///
/// The relaxed cost is its integral against the measure, so `h` is affine in μ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunningCost {
    /// `ℓ_j`, one entry per action grid point.
    pub action_cost: Vec<f64>,
    #[serde(default)]
    pub discount_rate: f64,
    #[serde(default)]
    pub state: StateFunction,
    /// `w_j`; all ones when absent.
    #[serde(default)]
    pub state_weight: Option<Vec<f64>>,
}

impl RunningCost {
    pub fn zero(count: usize) -> Self {
        RunningCost {
            action_cost: vec![0.0; count],
            discount_rate: 0.0,
            state: StateFunction::Zero,
            state_weight: None,
        }
    }

    #[inline]
    pub fn discount(&self, t: f64) -> f64 {
        if self.discount_rate == 0.0 {
            1.0
        } else {
            (-self.discount_rate * t).exp()
        }
    }

    #[inline]
    fn weight(&self, j: usize) -> f64 {
        self.state_weight.as_ref().map_or(1.0, |w| w[j])
    }

    /// `h(t, x, y, δ_{u_j})`.
    #[inline]
    pub fn point_value(&self, t: f64, x: f64, y: f64, j: usize) -> f64 {
        self.discount(t) * self.action_cost[j] + self.weight(j) * self.state.value(x, y)
    }

    /// `h(t, x, y, μ)`.
    pub fn value(&self, t: f64, x: f64, y: f64, weights: &[f64]) -> f64 {
        let disc = self.discount(t);
        let s = self.state.value(x, y);
        let mut acc = 0.0;
        for (j, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                acc += w * (disc * self.action_cost[j] + self.weight(j) * s);
            }
        }
        acc
    }

    /// `(h_x, h_y)` at the measure `weights`.
    pub fn gradient(&self, x: f64, y: f64, weights: &[f64]) -> (f64, f64) {
        let (sx, sy) = self.state.gradient(x, y);
        let w: f64 = match &self.state_weight {
            None => 1.0,
            Some(ws) => ws.iter().zip(weights).map(|(a, b)| a * b).sum(),
        };
        (w * sx, w * sy)
    }

    pub fn scaled(&self, c: f64) -> RunningCost {
        RunningCost {
            action_cost: self.action_cost.iter().map(|v| v * c).collect(),
            discount_rate: self.discount_rate,
            state: self.state.scaled(c),
            state_weight: self.state_weight.clone(),
        }
    }

    fn validate(&self, count: usize) -> Result<()> {
        if self.action_cost.len() != count {
            return Err(Error::dim("running_cost.action_cost", count, self.action_cost.len()));
        }
        check_finite("running_cost.action_cost", &self.action_cost)?;
        if let Some(w) = &self.state_weight {
            if w.len() != count {
                return Err(Error::dim("running_cost.state_weight", count, w.len()));
            }
            check_finite("running_cost.state_weight", w)?;
        }
        self.state.validate("running_cost.state")
    }
}

/// Dynamics `b^y(t, y)`, `σ^y(t, y) ∈ ℝ^d` of the second state component and
/// their `y`-derivatives.
pub trait YDynamics: Sync {
    fn drift(&self, t: f64, y: f64) -> f64;
    fn diffusion(&self, t: f64, y: f64, out: &mut [f64]);
    fn drift_dy(&self, t: f64, y: f64) -> f64;
    fn diffusion_dy(&self, t: f64, y: f64, out: &mut [f64]);
}

/// `b^y = a + λ y`, `σ^y = c + ρ y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineY {
    #[serde(default)]
    pub drift_level: f64,
    #[serde(default)]
    pub drift_slope: f64,
    pub vol_level: Vec<f64>,
    pub vol_slope: Vec<f64>,
}

impl AffineY {
    /// `dy = λ y dt + ρ y dB` (geometric Brownian motion).
    pub fn geometric(drift: f64, vol: Vec<f64>) -> Self {
        AffineY {
            drift_level: 0.0,
            drift_slope: drift,
            vol_level: vec![0.0; vol.len()],
            vol_slope: vol,
        }
    }

    pub fn still(d: usize) -> Self {
        AffineY::geometric(0.0, vec![0.0; d])
    }
}

impl YDynamics for AffineY {
    #[inline]
    fn drift(&self, _t: f64, y: f64) -> f64 {
        self.drift_level + self.drift_slope * y
    }

    #[inline]
    fn diffusion(&self, _t: f64, y: f64, out: &mut [f64]) {
        for ((o, c), r) in out.iter_mut().zip(&self.vol_level).zip(&self.vol_slope) {
            *o = c + r * y;
        }
    }

    #[inline]
    fn drift_dy(&self, _t: f64, _y: f64) -> f64 {
        self.drift_slope
    }

    #[inline]
    fn diffusion_dy(&self, _t: f64, _y: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.vol_slope);
    }
}

fn default_cap() -> f64 {
    DEFAULT_SINGULAR_CAP
}

/// Full control problem in the canonical linear-coefficient form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub time: TimeGrid,
    pub action_grid: ActionGrid,
    /// Dimension `d` of the driving Brownian motion.
    pub brownian_dim: usize,
    pub coefficients: CoefficientModel,
    pub y_dynamics: AffineY,
    pub x0: f64,
    pub y0: f64,
    /// Number of singular control components.
    pub singular_dim: usize,
    pub gain_x: StepVector,
    pub gain_y: StepVector,
    pub running_cost: RunningCost,
    /// `k_t`, one entry per singular component.
    pub singular_cost: StepVector,
    pub terminal_cost: StateFunction,
    /// Total-variation cap `M` on singular controls.
    #[serde(default = "default_cap")]
    pub singular_cap: f64,
    /// Largest singular increment per unit time in each component; defaults to `M / T`.
    #[serde(default)]
    pub rate_cap: Option<f64>,
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        self.time.validate()?;
        let d = self.brownian_dim;
        let n = self.time.steps;
        let m = self.singular_dim;
        if d == 0 {
            return Err(Error::invalid("brownian_dim", "must be >= 1"));
        }
        self.coefficients.validate(&self.action_grid, d, n)?;
        if self.y_dynamics.vol_level.len() != d || self.y_dynamics.vol_slope.len() != d {
            return Err(Error::dim("y_dynamics volatility", d, self.y_dynamics.vol_slope.len()));
        }
        if !self.x0.is_finite() || !self.y0.is_finite() {
            return Err(Error::invalid("x0/y0", "initial state must be finite"));
        }
        self.gain_x.validate("gain_x", n, m)?;
        self.gain_y.validate("gain_y", n, m)?;
        self.singular_cost.validate("singular_cost", n, m)?;
        self.running_cost.validate(self.action_grid.len())?;
        self.terminal_cost.validate("terminal_cost")?;
        if !(self.singular_cap >= 0.0) || !self.singular_cap.is_finite() {
            return Err(Error::invalid("singular_cap", "must be a finite nonnegative number"));
        }
        if let Some(r) = self.rate_cap {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(Error::invalid("rate_cap", "must be a finite nonnegative number"));
            }
        }
        Ok(())
    }

    /// Largest singular increment allowed in one step for one component.
    pub fn increment_cap(&self) -> f64 {
        let rate = self.rate_cap.unwrap_or(self.singular_cap / self.time.horizon);
        rate * self.time.dt()
    }

    /// `(G^x_k · Δξ_k, G^y_k · Δξ_k)` for every step.
    pub(crate) fn jump_sizes(&self, increments: &crate::measures::SingularControl) -> (Vec<f64>, Vec<f64>) {
        let n = self.time.steps;
        let mut jx = vec![0.0; n];
        let mut jy = vec![0.0; n];
        for k in 0..n {
            let inc = increments.row(k);
            jx[k] = dot(self.gain_x.at(k), inc);
            jy[k] = dot(self.gain_y.at(k), inc);
        }
        (jx, jy)
    }

    /// Copy with `h`, `g` and `k` multiplied by `c`.
    pub fn with_costs_scaled(&self, c: f64) -> Problem {
        let mut p = self.clone();
        p.running_cost = self.running_cost.scaled(c);
        p.terminal_cost = self.terminal_cost.scaled(c);
        p.singular_cost = self.singular_cost.scaled(c);
        p
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
