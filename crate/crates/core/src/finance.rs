//! Bond-portfolio / consumption problem with proportional transaction costs.
//!
//! The investor holds `x` in a continuum of zero-coupon bonds (relative
//! weights `q` over times to maturity) and `y` in a stock. The action grid is
//! the product of a maturity grid and a consumption grid, indexed
//! `i · |C| + j` for maturity `i` and consumption `j`. The Brownian motion is
//! two-dimensional: component 0 drives the bonds, component 1 the stock.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dynamics::{CoeffSlice, NoiseBank};
use crate::error::{Error, Result};
use crate::measures::ActionGrid;
use crate::problem::{check_finite, AffineY, Problem, RunningCost, StateFunction, StepVector, TimeGrid};

/// Integrated volatility `v(u)` of a bond with time to maturity `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Volatility {
    /// `σ_t(u) = σ`, hence `v(u) = −σu`.
    HoLee { sigma: f64 },
    /// `σ_t(u) = σ e^{−cu}`, hence `v(u) = (σ/c)(e^{−cu} − 1)`.
    HullWhite { sigma: f64, c: f64 },
}

impl Volatility {
    pub fn sigma(&self) -> f64 {
        match *self {
            Volatility::HoLee { sigma } | Volatility::HullWhite { sigma, .. } => sigma,
        }
    }

    #[inline]
    pub fn v(&self, u: f64) -> f64 {
        match *self {
            Volatility::HoLee { sigma } => -sigma * u,
            Volatility::HullWhite { sigma, c } => sigma / c * (-c * u).exp_m1(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigma = self.sigma();
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("volatility.sigma", "must be positive"));
        }
        if let Volatility::HullWhite { c, .. } = *self {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::invalid("volatility.c", "hull-white needs c > 0"));
            }
        }
        Ok(())
    }
}

/// `v_t(u)` on the time and maturity grids (`steps × maturities`).
pub fn volatility_field(model: &Volatility, maturities: &[f64], tg: &TimeGrid) -> Result<Vec<Vec<f64>>> {
    model.validate()?;
    let row: Vec<f64> = maturities.iter().map(|&u| model.v(u)).collect();
    Ok(vec![row; tg.steps])
}

/// Generator of the short rate `r⁰`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShortRate {
    /// Gaussian short rate consistent with the volatility model, driven by
    /// the bond Brownian motion: Ho-Lee `dr = a dt + σ dB`; Hull-White
    /// `dr = (a + c(m − r)) dt + σ dB` with `m` defaulting to `r0`.
    Gaussian {
        r0: f64,
        #[serde(default)]
        drift: f64,
        #[serde(default)]
        mean: Option<f64>,
        /// Two-sided tail probability at which samples are clamped.
        #[serde(default)]
        tail_clamp: Option<f64>,
    },
    /// Deterministic path, one value per step.
    Tabulated(Vec<f64>),
}

/// Market price of risk `Θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarketPriceOfRisk {
    Constant(f64),
    Tabulated(Vec<f64>),
}

impl MarketPriceOfRisk {
    fn at(&self, k: usize) -> f64 {
        match self {
            MarketPriceOfRisk::Constant(v) => *v,
            MarketPriceOfRisk::Tabulated(v) => v[k],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketModel {
    pub volatility: Volatility,
    pub short_rate: ShortRate,
    pub market_price_of_risk: MarketPriceOfRisk,
    /// Times to maturity `U` (years).
    pub maturities: Vec<f64>,
    /// Consumption rates `C`.
    pub consumptions: Vec<f64>,
}

impl Default for MarketModel {
    fn default() -> Self {
        MarketModel {
            volatility: Volatility::HoLee { sigma: 0.02 },
            short_rate: ShortRate::Gaussian {
                r0: 0.03,
                drift: 0.0,
                mean: None,
                tail_clamp: None,
            },
            market_price_of_risk: MarketPriceOfRisk::Constant(0.1),
            maturities: vec![0.5, 1.0, 2.0, 5.0, 10.0],
            consumptions: vec![0.0, 0.02, 0.05, 0.1],
        }
    }
}

impl MarketModel {
    /// Per-step drivers: short rate and market price of risk.
    pub const DRIVERS: usize = 2;

    /// Brownian component driving the bonds.
    pub const BOND_NOISE: usize = 0;

    pub fn validate(&self) -> Result<()> {
        self.volatility.validate()?;
        if self.maturities.is_empty() || self.consumptions.is_empty() {
            return Err(Error::invalid("market grids", "maturity and consumption grids must be nonempty"));
        }
        check_finite("maturities", &self.maturities)?;
        check_finite("consumptions", &self.consumptions)?;
        if self.maturities.iter().chain(&self.consumptions).any(|&v| v < 0.0) {
            return Err(Error::invalid("market grids", "maturities and consumptions must be nonnegative"));
        }
        match &self.short_rate {
            ShortRate::Gaussian {
                r0,
                drift,
                mean,
                tail_clamp,
            } => {
                check_finite("short_rate", &[*r0, *drift, mean.unwrap_or(0.0)])?;
                if let Some(p) = tail_clamp {
                    if !(*p > 0.0 && *p < 1.0) {
                        return Err(Error::invalid("short_rate.tail_clamp", "must lie in (0, 1)"));
                    }
                }
            }
            ShortRate::Tabulated(v) => check_finite("short_rate", v)?,
        }
        match &self.market_price_of_risk {
            MarketPriceOfRisk::Constant(v) => check_finite("market_price_of_risk", &[*v]),
            MarketPriceOfRisk::Tabulated(v) => check_finite("market_price_of_risk", v),
        }
    }

    pub fn action_grid(&self) -> Result<ActionGrid> {
        ActionGrid::product(&self.maturities, &self.consumptions)
    }

    pub(crate) fn validate_against(&self, grid: &ActionGrid, d: usize, steps: usize) -> Result<()> {
        self.validate()?;
        if d != 2 {
            return Err(Error::dim("finance brownian dimension", 2, d));
        }
        let expected = self.action_grid()?;
        if expected.points() != grid.points() {
            return Err(Error::invalid(
                "action_grid",
                "finance problems need the maturity × consumption product grid",
            ));
        }
        if let ShortRate::Tabulated(v) = &self.short_rate {
            if v.len() != steps {
                return Err(Error::dim("tabulated short rate", steps, v.len()));
            }
        }
        if let MarketPriceOfRisk::Tabulated(v) = &self.market_price_of_risk {
            if v.len() != steps {
                return Err(Error::dim("tabulated market price of risk", steps, v.len()));
            }
        }
        Ok(())
    }

    pub(crate) fn stochastic_drivers(&self) -> Vec<usize> {
        match self.short_rate {
            ShortRate::Gaussian { .. } => vec![0],
            ShortRate::Tabulated(_) => Vec::new(),
        }
    }

    /// Short-rate path at steps `0..steps` from bond increments `dbx`;
    /// returns the number of tail clamps applied.
    pub fn short_rate_path(&self, tg: &TimeGrid, dbx: &[f64], out: &mut [f64]) -> usize {
        match &self.short_rate {
            ShortRate::Tabulated(v) => {
                out.copy_from_slice(&v[..tg.steps]);
                0
            }
            ShortRate::Gaussian {
                r0,
                drift,
                mean,
                tail_clamp,
            } => {
                let dt = tg.dt();
                let sigma = self.volatility.sigma();
                let (c, m) = match self.volatility {
                    Volatility::HoLee { .. } => (0.0, 0.0),
                    Volatility::HullWhite { c, .. } => (c, mean.unwrap_or(*r0)),
                };
                let z = tail_clamp.map(|p| Normal::standard().inverse_cdf(1.0 - p / 2.0));
                let mut clamps = 0;
                let mut r = *r0;
                // exact mean and variance of the Euler recursion, for clamping
                let (mut mk, mut vk) = (*r0, 0.0f64);
                for k in 0..tg.steps {
                    if let Some(z) = z {
                        let half = z * vk.sqrt();
                        if r > mk + half || r < mk - half {
                            r = r.clamp(mk - half, mk + half);
                            clamps += 1;
                        }
                    }
                    out[k] = r;
                    r += (drift + c * (m - r)) * dt + sigma * dbx[k];
                    mk += (drift + c * (m - mk)) * dt;
                    vk = (1.0 - c * dt).powi(2) * vk + sigma * sigma * dt;
                }
                clamps
            }
        }
    }

    pub(crate) fn sample_drivers(&self, tg: &TimeGrid, d: usize, noise: &[f64], out: &mut [f64]) -> usize {
        let dbx: Vec<f64> = (0..tg.steps).map(|k| noise[k * d + Self::BOND_NOISE]).collect();
        let mut r = vec![0.0; tg.steps];
        let clamps = self.short_rate_path(tg, &dbx, &mut r);
        for k in 0..tg.steps {
            out[k * Self::DRIVERS] = r[k];
            out[k * Self::DRIVERS + 1] = self.market_price_of_risk.at(k);
        }
        clamps
    }

    /// `φ = r⁰ − v(u)Θ − c`, `ψ = (v(u), 0)`, `υ = χ = 0`.
    pub(crate) fn fill_slice(&self, grid: &ActionGrid, _t: f64, drivers: &[f64], out: &mut CoeffSlice) {
        let (r, theta) = (drivers[0], drivers[1]);
        out.upsilon.iter_mut().for_each(|v| *v = 0.0);
        out.chi.iter_mut().for_each(|v| *v = 0.0);
        for (j, p) in grid.points().iter().enumerate() {
            let v = self.volatility.v(p[0]);
            out.phi[j] = r - v * theta - p[1];
            out.psi[j * 2] = v;
            out.psi[j * 2 + 1] = 0.0;
        }
    }
}

/// Consumption utility `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Utility {
    #[default]
    Sqrt,
    Power {
        exponent: f64,
    },
    Linear,
}

impl Utility {
    pub fn value(&self, c: f64) -> f64 {
        match *self {
            Utility::Sqrt => c.sqrt(),
            Utility::Power { exponent } => c.powf(exponent),
            Utility::Linear => c,
        }
    }
}

fn default_terminal() -> StateFunction {
    StateFunction::Saturating {
        weight: 1.0,
        scale: 5.0,
        x_weight: 1.0,
        y_weight: 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PortfolioParams {
    pub horizon: f64,
    pub steps: usize,
    pub x0: f64,
    pub y0: f64,
    /// Stock drift `λ`.
    pub lambda: f64,
    /// Stock volatility `ρ`.
    pub rho: f64,
    /// Proportional cost of moving money into bonds.
    pub k1: f64,
    /// Proportional cost of moving money into the stock.
    pub k2: f64,
    /// Discount rate `β` of consumption utility.
    pub beta: f64,
    pub utility: Utility,
    /// Terminal cost `g` (a disutility, since the problem is a minimization).
    pub terminal: StateFunction,
    pub singular_cap: f64,
    pub rate_cap: Option<f64>,
}

impl Default for PortfolioParams {
    fn default() -> Self {
        PortfolioParams {
            horizon: 1.0,
            steps: 50,
            x0: 1.0,
            y0: 1.0,
            lambda: 0.05,
            rho: 0.2,
            k1: 0.01,
            k2: 0.01,
            beta: 0.05,
            utility: Utility::Sqrt,
            terminal: default_terminal(),
            singular_cap: crate::measures::DEFAULT_SINGULAR_CAP,
            rate_cap: None,
        }
    }
}

/// The assembled problem together with the inputs it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioProblem {
    pub market: MarketModel,
    pub params: PortfolioParams,
    pub problem: Problem,
}

impl PortfolioProblem {
    /// Grid index of (maturity `i`, consumption `j`).
    pub fn index(&self, maturity: usize, consumption: usize) -> usize {
        maturity * self.market.consumptions.len() + consumption
    }
}

pub fn build_portfolio_problem(market: MarketModel, params: PortfolioParams) -> Result<PortfolioProblem> {
    market.validate()?;
    for (name, k) in [("k1", params.k1), ("k2", params.k2)] {
        if !(0.0..1.0).contains(&k) {
            return Err(Error::invalid(name, "proportional cost must lie in [0, 1)"));
        }
    }
    let grid = market.action_grid()?;
    let action_cost = grid.sample(|p| -params.utility.value(p[1]));
    check_finite("utility", &action_cost)?;
    let problem = Problem {
        time: TimeGrid::new(params.horizon, params.steps)?,
        action_grid: grid,
        brownian_dim: 2,
        coefficients: crate::dynamics::CoefficientModel::Finance(market.clone()),
        y_dynamics: AffineY::geometric(params.lambda, vec![0.0, params.rho]),
        x0: params.x0,
        y0: params.y0,
        singular_dim: 2,
        gain_x: StepVector::Constant(vec![1.0 - params.k1, -1.0]),
        gain_y: StepVector::Constant(vec![-1.0, 1.0 - params.k2]),
        running_cost: RunningCost {
            action_cost,
            discount_rate: params.beta,
            state: StateFunction::Zero,
            state_weight: None,
        },
        singular_cost: StepVector::Constant(vec![0.0, 0.0]),
        terminal_cost: params.terminal.clone(),
        singular_cap: params.singular_cap,
        rate_cap: params.rate_cap,
    };
    problem.validate()?;
    Ok(PortfolioProblem {
        market,
        params,
        problem,
    })
}

/// Forward rate `r_t(u)` used by [`bond_price_path`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardRateSpec {
    /// `r_t(u) = f`.
    Flat(f64),
    /// `r_t(u) = r⁰_t + s`.
    Spread(f64),
    /// One value per step.
    Tabulated(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceScheme {
    Euler,
    LogEuler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BondPath {
    /// Price at steps `0..=N`, starting at 1.
    pub price: Vec<f64>,
    pub short_rate: Vec<f64>,
    /// Steps at which the Euler price went negative.
    pub negative_steps: Vec<usize>,
}

/// Simulates `dp = p(r⁰ − r(u) − v(u)Θ) dt + p v(u) dB^x` for a fixed time to
/// maturity `u`, using bond increments drawn from `seed`.
pub fn bond_price_path(
    market: &MarketModel,
    maturity: f64,
    forward: &ForwardRateSpec,
    tg: &TimeGrid,
    seed: u64,
    scheme: PriceScheme,
) -> Result<BondPath> {
    let noise = NoiseBank::generate(1, tg.steps, 1, tg.dt(), seed);
    bond_price_path_with(market, maturity, forward, tg, noise.scenario(0), scheme)
}

/// As [`bond_price_path`] with explicit bond increments.
pub fn bond_price_path_with(
    market: &MarketModel,
    maturity: f64,
    forward: &ForwardRateSpec,
    tg: &TimeGrid,
    dbx: &[f64],
    scheme: PriceScheme,
) -> Result<BondPath> {
    market.validate()?;
    tg.validate()?;
    if dbx.len() != tg.steps {
        return Err(Error::dim("bond increments", tg.steps, dbx.len()));
    }
    if let ForwardRateSpec::Tabulated(v) = forward {
        if v.len() != tg.steps {
            return Err(Error::dim("tabulated forward rate", tg.steps, v.len()));
        }
    }
    let mut r = vec![0.0; tg.steps];
    market.short_rate_path(tg, dbx, &mut r);
    let v = market.volatility.v(maturity);
    let dt = tg.dt();
    let mut price = Vec::with_capacity(tg.steps + 1);
    let mut negative_steps = Vec::new();
    let mut p = 1.0;
    price.push(p);
    for k in 0..tg.steps {
        let fwd = match forward {
            ForwardRateSpec::Flat(f) => *f,
            ForwardRateSpec::Spread(s) => r[k] + s,
            ForwardRateSpec::Tabulated(t) => t[k],
        };
        let a = r[k] - fwd - v * market.market_price_of_risk.at(k);
        p = match scheme {
            PriceScheme::Euler => p * (1.0 + a * dt + v * dbx[k]),
            PriceScheme::LogEuler => p * ((a - 0.5 * v * v) * dt + v * dbx[k]).exp(),
        };
        if p < 0.0 {
            negative_steps.push(k + 1);
        }
        price.push(p);
    }
    if !negative_steps.is_empty() {
        log::warn!("bond price went negative at {} steps", negative_steps.len());
    }
    Ok(BondPath {
        price,
        short_rate: r,
        negative_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate_forward, Scenarios};
    use crate::measures::{RelaxedControl, SingularControl};
    use approx::assert_relative_eq;

    #[test]
    fn ho_lee_volatility() {
        let v = Volatility::HoLee { sigma: 0.02 };
        assert_eq!(v.v(3.0), -0.06);
    }

    #[test]
    fn hull_white_volatility() {
        let v = Volatility::HullWhite { sigma: 0.01, c: 0.1 };
        let oracle = 0.1 * ((-1.0f64).exp() - 1.0);
        assert_relative_eq!(v.v(10.0), oracle, epsilon = 1e-15);
        assert!((v.v(10.0) + 0.06321).abs() < 1e-5);
    }

    #[test]
    fn hull_white_small_c_recovers_ho_lee() {
        let (sigma, u) = (0.02, 4.0);
        let ho = Volatility::HoLee { sigma }.v(u);
        let mut prev = f64::INFINITY;
        for c in [1e-2, 1e-3, 1e-4] {
            let err = (Volatility::HullWhite { sigma, c }.v(u) - ho).abs();
            // (σ/c)(e^{−cu}−1) = −σu + σcu²/2 + O(c²)
            assert!((err - sigma * c * u * u / 2.0).abs() < sigma * c * c * u.powi(3));
            assert!(err < prev);
            prev = err;
        }
    }

    #[test]
    fn hull_white_rejects_zero_c() {
        assert!(Volatility::HullWhite { sigma: 0.01, c: 0.0 }.validate().is_err());
        let tg = TimeGrid::new(1.0, 4).unwrap();
        assert!(volatility_field(&Volatility::HullWhite { sigma: 0.01, c: 0.0 }, &[1.0], &tg).is_err());
        let f = volatility_field(&Volatility::HoLee { sigma: 0.02 }, &[1.0, 3.0], &tg).unwrap();
        assert_eq!(f.len(), 4);
        assert_eq!(f[2][1], -0.06);
    }

    #[test]
    fn frictionless_gains() {
        let params = PortfolioParams {
            k1: 0.0,
            k2: 0.0,
            ..Default::default()
        };
        let pp = build_portfolio_problem(MarketModel::default(), params).unwrap();
        assert_eq!(pp.problem.gain_x, StepVector::Constant(vec![1.0, -1.0]));
        assert_eq!(pp.problem.gain_y, StepVector::Constant(vec![-1.0, 1.0]));
    }

    #[test]
    fn rejects_bad_costs_and_grids() {
        let bad = PortfolioParams {
            k1: 1.0,
            ..Default::default()
        };
        assert!(build_portfolio_problem(MarketModel::default(), bad).is_err());
        let market = MarketModel {
            maturities: vec![],
            ..Default::default()
        };
        assert!(build_portfolio_problem(market, PortfolioParams::default()).is_err());
    }

    #[test]
    fn constant_rate_grows_exponentially() {
        let r = 0.05;
        let n = 400;
        let market = MarketModel {
            short_rate: ShortRate::Tabulated(vec![r; n]),
            market_price_of_risk: MarketPriceOfRisk::Constant(0.0),
            maturities: vec![0.0],
            consumptions: vec![0.0],
            ..Default::default()
        };
        let params = PortfolioParams {
            steps: n,
            ..Default::default()
        };
        let pp = build_portfolio_problem(market, params).unwrap();
        let sc = Scenarios::generate(&pp.problem, 4, 1).unwrap();
        let b = simulate_forward(&pp.problem, sc, &RelaxedControl::uniform(n, 1), &SingularControl::zeros(n, 2)).unwrap();
        for s in 0..4 {
            assert!((b.x(s, n) - r.exp()).abs() < r * r / n as f64);
        }
    }

    #[test]
    fn product_measure_integrates_coefficients() {
        let pp = build_portfolio_problem(MarketModel::default(), PortfolioParams::default()).unwrap();
        let p = &pp.problem;
        let sc = Scenarios::generate(p, 3, 4).unwrap();
        let field = sc.field(p, 2);
        let mut slice = CoeffSlice::zeros(p.action_grid.len(), 2);
        field.slice(7, &mut slice);
        let q = [0.1, 0.2, 0.3, 0.15, 0.25];
        let cj = 2;
        let mut row = vec![0.0; p.action_grid.len()];
        for (i, w) in q.iter().enumerate() {
            row[pp.index(i, cj)] = *w;
        }
        let mut mixed = crate::dynamics::MixedCoeffs::zeros(2);
        slice.mix(&row, &mut mixed);
        let drivers = sc.coefficients.drivers(2, 7);
        let vq: f64 = q.iter().zip(&pp.market.maturities).map(|(w, u)| w * pp.market.volatility.v(*u)).sum();
        let expected = drivers[0] - vq * drivers[1] - pp.market.consumptions[cj];
        assert_relative_eq!(mixed.phi, expected, epsilon = 1e-15);
        assert_relative_eq!(mixed.psi[0], vq, epsilon = 1e-15);
        assert_eq!(mixed.psi[1], 0.0);
    }

    #[test]
    fn stock_ignores_the_relaxed_control() {
        let pp = build_portfolio_problem(MarketModel::default(), PortfolioParams::default()).unwrap();
        let p = &pp.problem;
        let n = p.time.steps;
        let sc = Scenarios::generate(p, 20, 6).unwrap();
        let xi = SingularControl::zeros(n, 2);
        let a = simulate_forward(p, sc.clone(), &RelaxedControl::uniform(n, 20), &xi).unwrap();
        let b = simulate_forward(p, sc, &RelaxedControl::constant_dirac(n, 20, 13).unwrap(), &xi).unwrap();
        assert_eq!(a.y, b.y);
        assert_ne!(a.x, b.x);
    }

    #[test]
    fn round_trip_transfer_loses_value() {
        let pp = build_portfolio_problem(MarketModel::default(), PortfolioParams::default()).unwrap();
        let mut p = pp.problem.clone();
        // freeze the market so only the transfers move wealth
        p.coefficients = crate::dynamics::CoefficientModel::Constant(crate::dynamics::PointTable::uniform(
            20,
            0.0,
            0.0,
            vec![0.0, 0.0],
            vec![0.0, 0.0],
        ));
        p.y_dynamics = AffineY::still(2);
        let n = p.time.steps;
        let rows = (0..n)
            .map(|k| match k {
                3 => vec![0.5, 0.0],
                4 => vec![0.0, 0.5],
                _ => vec![0.0, 0.0],
            })
            .collect::<Vec<_>>();
        let xi = SingularControl::from_rows(&rows, 2).unwrap();
        let sc = Scenarios::generate(&p, 2, 1).unwrap();
        let b = simulate_forward(&p, sc, &RelaxedControl::uniform(n, 20), &xi).unwrap();
        let before = p.x0 + p.y0;
        let after = b.x(0, n) + b.y(0, n);
        assert!(after < before);
        assert_relative_eq!(before - after, 0.5 * 0.01 + 0.5 * 0.01, epsilon = 1e-14);
    }

    #[test]
    fn short_rate_clamp_counts_events() {
        let tg = TimeGrid::new(1.0, 50).unwrap();
        let mut market = MarketModel {
            short_rate: ShortRate::Gaussian {
                r0: 0.03,
                drift: 0.0,
                mean: None,
                tail_clamp: Some(0.5),
            },
            ..Default::default()
        };
        let noise = NoiseBank::generate(200, 50, 1, tg.dt(), 2);
        let mut out = vec![0.0; 50];
        let clamps: usize = (0..200).map(|s| market.short_rate_path(&tg, noise.scenario(s), &mut out)).sum();
        assert!(clamps > 0);
        market.short_rate = ShortRate::Gaussian {
            r0: 0.03,
            drift: 0.0,
            mean: None,
            tail_clamp: None,
        };
        let clamps: usize = (0..200).map(|s| market.short_rate_path(&tg, noise.scenario(s), &mut out)).sum();
        assert_eq!(clamps, 0);
    }

    #[test]
    fn hull_white_short_rate_mean_reverts() {
        let tg = TimeGrid::new(20.0, 400).unwrap();
        let market = MarketModel {
            volatility: Volatility::HullWhite { sigma: 0.0001, c: 1.0 },
            short_rate: ShortRate::Gaussian {
                r0: 0.1,
                drift: 0.0,
                mean: Some(0.02),
                tail_clamp: None,
            },
            ..Default::default()
        };
        let mut out = vec![0.0; 400];
        market.short_rate_path(&tg, &vec![0.0; 400], &mut out);
        assert!((out[399] - 0.02).abs() < 1e-6);
    }

    #[test]
    fn bond_price_constant_when_rates_match() {
        let tg = TimeGrid::new(1.0, 100).unwrap();
        let market = MarketModel::default();
        let path = bond_price_path(&market, 0.0, &ForwardRateSpec::Spread(0.0), &tg, 3, PriceScheme::Euler).unwrap();
        assert!(path.price.iter().all(|&p| p == 1.0));
        assert!(path.negative_steps.is_empty());
    }

    #[test]
    fn bond_price_deterministic_drift() {
        let n = 200;
        let tg = TimeGrid::new(1.0, n).unwrap();
        let rates: Vec<f64> = (0..n).map(|k| 0.02 + 0.03 * tg.time(k)).collect();
        let market = MarketModel {
            short_rate: ShortRate::Tabulated(rates.clone()),
            market_price_of_risk: MarketPriceOfRisk::Constant(0.0),
            ..Default::default()
        };
        let fwd = 0.01;
        let path = bond_price_path(&market, 0.0, &ForwardRateSpec::Flat(fwd), &tg, 1, PriceScheme::Euler).unwrap();
        // ∫(r⁰ − f) dt with r⁰ = 0.02 + 0.03t
        let integral = 0.02 + 0.015 - fwd;
        assert!((path.price[n] - integral.exp()).abs() < 1e-3);
    }

    #[test]
    fn euler_and_log_euler_agree_to_first_order() {
        let market = MarketModel {
            volatility: Volatility::HoLee { sigma: 0.05 },
            ..Default::default()
        };
        let mut diffs = Vec::new();
        for n in [100, 200, 400] {
            let tg = TimeGrid::new(1.0, n).unwrap();
            let mut acc = 0.0;
            for seed in 0..20 {
                let fwd = ForwardRateSpec::Flat(0.02);
                let a = bond_price_path(&market, 5.0, &fwd, &tg, seed, PriceScheme::Euler).unwrap();
                let b = bond_price_path(&market, 5.0, &fwd, &tg, seed, PriceScheme::LogEuler).unwrap();
                acc += (a.price[n] - b.price[n]).abs();
            }
            diffs.push(acc / 20.0);
        }
        assert!(diffs[0] < 0.01);
        assert!(diffs[2] < diffs[0]);
    }

    #[test]
    fn market_round_trips_through_json() {
        let m = MarketModel {
            volatility: Volatility::HullWhite { sigma: 0.01, c: 0.1 },
            ..Default::default()
        };
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("hull-white"));
        let back: MarketModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        let params = PortfolioParams::default();
        let back: PortfolioParams = serde_json::from_str(&serde_json::to_string(&params).unwrap()).unwrap();
        assert_eq!(back, params);
    }
}
