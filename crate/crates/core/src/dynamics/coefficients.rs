//! Random coefficient processes `(υ, φ, χ, ψ)` sampled over (step, grid point).
//!
//! A model exposes a small set of per-scenario driver paths (for instance the
//! short rate); coefficient slices are evaluated from those drivers on demand
//! instead of materializing `scenarios × steps × grid` arrays.

use serde::{Deserialize, Serialize};

use super::noise::NoiseBank;
use crate::error::{Error, Result};
use crate::finance::MarketModel;
use crate::measures::{integrate_unchecked, integrate_vector_unchecked, ActionGrid};
use crate::par;
use crate::problem::{check_finite, TimeGrid};

/// Time-invariant coefficients, one entry per grid point (`chi`, `psi` are ℝ^d per point).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointTable {
    pub upsilon: Vec<f64>,
    pub phi: Vec<f64>,
    pub chi: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
}

impl PointTable {
    /// Same coefficients at every grid point.
    pub fn uniform(count: usize, upsilon: f64, phi: f64, chi: Vec<f64>, psi: Vec<f64>) -> Self {
        PointTable {
            upsilon: vec![upsilon; count],
            phi: vec![phi; count],
            chi: vec![chi; count],
            psi: vec![psi; count],
        }
    }

    /// Coefficients as functions of the action point.
    pub fn from_fn<F>(grid: &ActionGrid, f: F) -> Self
    where
        F: Fn(&[f64]) -> (f64, f64, Vec<f64>, Vec<f64>),
    {
        let mut t = PointTable {
            upsilon: Vec::new(),
            phi: Vec::new(),
            chi: Vec::new(),
            psi: Vec::new(),
        };
        for p in grid.points() {
            let (u, ph, c, ps) = f(p);
            t.upsilon.push(u);
            t.phi.push(ph);
            t.chi.push(c);
            t.psi.push(ps);
        }
        t
    }

    fn validate(&self, count: usize, d: usize) -> Result<()> {
        if self.upsilon.len() != count || self.phi.len() != count || self.chi.len() != count || self.psi.len() != count {
            return Err(Error::dim("coefficient table points", count, self.phi.len()));
        }
        check_finite("coefficients.upsilon", &self.upsilon)?;
        check_finite("coefficients.phi", &self.phi)?;
        for (c, p) in self.chi.iter().zip(&self.psi) {
            if c.len() != d || p.len() != d {
                return Err(Error::dim("coefficient chi/psi components", d, c.len().min(p.len())));
            }
            check_finite("coefficients.chi", c)?;
            check_finite("coefficients.psi", p)?;
        }
        Ok(())
    }

    fn fill(&self, out: &mut CoeffSlice) {
        out.upsilon.copy_from_slice(&self.upsilon);
        out.phi.copy_from_slice(&self.phi);
        let d = out.d;
        for j in 0..out.count {
            out.chi[j * d..(j + 1) * d].copy_from_slice(&self.chi[j]);
            out.psi[j * d..(j + 1) * d].copy_from_slice(&self.psi[j]);
        }
    }
}

/// Deterministic coefficients tabulated per step and grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeTable {
    pub upsilon: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub chi: Vec<Vec<Vec<f64>>>,
    pub psi: Vec<Vec<Vec<f64>>>,
}

impl TimeTable {
    fn validate(&self, count: usize, d: usize, steps: usize) -> Result<()> {
        if self.upsilon.len() != steps || self.phi.len() != steps || self.chi.len() != steps || self.psi.len() != steps {
            return Err(Error::dim("tabulated coefficient steps", steps, self.phi.len()));
        }
        for k in 0..steps {
            PointTable {
                upsilon: self.upsilon[k].clone(),
                phi: self.phi[k].clone(),
                chi: self.chi[k].clone(),
                psi: self.psi[k].clone(),
            }
            .validate(count, d)?;
        }
        Ok(())
    }

    fn fill(&self, k: usize, out: &mut CoeffSlice) {
        out.upsilon.copy_from_slice(&self.upsilon[k]);
        out.phi.copy_from_slice(&self.phi[k]);
        let d = out.d;
        for j in 0..out.count {
            out.chi[j * d..(j + 1) * d].copy_from_slice(&self.chi[k][j]);
            out.psi[j * d..(j + 1) * d].copy_from_slice(&self.psi[k][j]);
        }
    }
}

/// Source of the coefficient processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientModel {
    /// Deterministic and constant in time.
    Constant(PointTable),
    /// Deterministic, tabulated per step.
    Tabulated(TimeTable),
    /// `φ_t(u) = φ(u) + loading · B^{component}_t`; other fields as in `base`.
    BrownianModulated {
        base: PointTable,
        phi_loading: f64,
        component: usize,
    },
    /// Bond-portfolio coefficients driven by a short-rate model.
    Finance(MarketModel),
}

impl CoefficientModel {
    pub fn validate(&self, grid: &ActionGrid, d: usize, steps: usize) -> Result<()> {
        match self {
            CoefficientModel::Constant(t) => t.validate(grid.len(), d),
            CoefficientModel::Tabulated(t) => t.validate(grid.len(), d, steps),
            CoefficientModel::BrownianModulated {
                base,
                phi_loading,
                component,
            } => {
                if *component >= d {
                    return Err(Error::IndexOutOfRange {
                        index: *component,
                        count: d,
                    });
                }
                check_finite("phi_loading", &[*phi_loading])?;
                base.validate(grid.len(), d)
            }
            CoefficientModel::Finance(m) => m.validate_against(grid, d, steps),
        }
    }

    /// True when every scenario sees the same coefficient field.
    pub fn is_deterministic(&self) -> bool {
        self.stochastic_drivers().is_empty()
    }

    /// Number of per-step driver values each scenario carries.
    pub fn driver_count(&self) -> usize {
        match self {
            CoefficientModel::Constant(_) | CoefficientModel::Tabulated(_) => 0,
            CoefficientModel::BrownianModulated { .. } => 1,
            CoefficientModel::Finance(_) => MarketModel::DRIVERS,
        }
    }

    /// Indices of drivers that vary across scenarios. These enter the
    /// regression basis of the adjoint solvers as extra Markov state.
    pub fn stochastic_drivers(&self) -> Vec<usize> {
        match self {
            CoefficientModel::Constant(_) | CoefficientModel::Tabulated(_) => Vec::new(),
            CoefficientModel::BrownianModulated { phi_loading, .. } => {
                if *phi_loading != 0.0 {
                    vec![0]
                } else {
                    Vec::new()
                }
            }
            CoefficientModel::Finance(m) => m.stochastic_drivers(),
        }
    }

    /// Writes the driver path (`steps × driver_count`) of one scenario.
    /// Values at step `k` only use increments `dB_0..dB_{k-1}`.
    fn sample_drivers(&self, tg: &TimeGrid, d: usize, noise: &[f64], out: &mut [f64]) -> usize {
        match self {
            CoefficientModel::Constant(_) | CoefficientModel::Tabulated(_) => 0,
            CoefficientModel::BrownianModulated { component, .. } => {
                let mut b = 0.0;
                for k in 0..tg.steps {
                    out[k] = b;
                    b += noise[k * d + component];
                }
                0
            }
            CoefficientModel::Finance(m) => m.sample_drivers(tg, d, noise, out),
        }
    }

    /// Coefficients at step `k` for every grid point.
    pub fn fill_slice(&self, grid: &ActionGrid, tg: &TimeGrid, k: usize, drivers: &[f64], out: &mut CoeffSlice) {
        match self {
            CoefficientModel::Constant(t) => t.fill(out),
            CoefficientModel::Tabulated(t) => t.fill(k, out),
            CoefficientModel::BrownianModulated { base, phi_loading, .. } => {
                base.fill(out);
                let shift = phi_loading * drivers[0];
                out.phi.iter_mut().for_each(|p| *p += shift);
            }
            CoefficientModel::Finance(m) => m.fill_slice(grid, tg.time(k), drivers, out),
        }
    }
}

/// Coefficients of every grid point at one (scenario, step).
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffSlice {
    pub count: usize,
    pub d: usize,
    pub upsilon: Vec<f64>,
    pub phi: Vec<f64>,
    /// Point-major `count × d`.
    pub chi: Vec<f64>,
    /// Point-major `count × d`.
    pub psi: Vec<f64>,
}

impl CoeffSlice {
    pub fn zeros(count: usize, d: usize) -> Self {
        CoeffSlice {
            count,
            d,
            upsilon: vec![0.0; count],
            phi: vec![0.0; count],
            chi: vec![0.0; count * d],
            psi: vec![0.0; count * d],
        }
    }

    #[inline]
    pub fn chi_at(&self, j: usize) -> &[f64] {
        &self.chi[j * self.d..(j + 1) * self.d]
    }

    #[inline]
    pub fn psi_at(&self, j: usize) -> &[f64] {
        &self.psi[j * self.d..(j + 1) * self.d]
    }

    /// Integrates every coefficient against a measure row.
    #[inline]
    pub fn mix(&self, weights: &[f64], out: &mut MixedCoeffs) {
        out.upsilon = integrate_unchecked(&self.upsilon, weights);
        out.phi = integrate_unchecked(&self.phi, weights);
        integrate_vector_unchecked(&self.chi, weights, &mut out.chi);
        integrate_vector_unchecked(&self.psi, weights, &mut out.psi);
    }

    /// Coefficients of a single grid point (the strict-control path).
    #[inline]
    pub fn pick(&self, j: usize, out: &mut MixedCoeffs) {
        out.upsilon = self.upsilon[j];
        out.phi = self.phi[j];
        out.chi.copy_from_slice(self.chi_at(j));
        out.psi.copy_from_slice(self.psi_at(j));
    }
}

/// Coefficients integrated against a measure: `(υ(μ), φ(μ), χ(μ), ψ(μ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedCoeffs {
    pub upsilon: f64,
    pub phi: f64,
    pub chi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl MixedCoeffs {
    pub fn zeros(d: usize) -> Self {
        MixedCoeffs {
            upsilon: 0.0,
            phi: 0.0,
            chi: vec![0.0; d],
            psi: vec![0.0; d],
        }
    }
}

/// Driver paths of every scenario, sampled from a shared [`NoiseBank`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCoefficients {
    scenarios: usize,
    steps: usize,
    drivers: usize,
    dim: usize,
    values: Vec<f64>,
    /// Number of tail-clamp events applied while sampling.
    pub clamp_events: usize,
}

impl SampledCoefficients {
    pub fn scenarios(&self) -> usize {
        self.scenarios
    }

    pub fn driver_count(&self) -> usize {
        self.drivers
    }

    /// Brownian dimension the drivers were sampled with.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Driver values of scenario `s` at step `k`.
    #[inline]
    pub fn drivers(&self, s: usize, k: usize) -> &[f64] {
        let base = (s * self.steps + k) * self.drivers;
        &self.values[base..base + self.drivers]
    }
}

/// Samples the coefficient drivers of every scenario.
pub fn sample_coefficients(
    model: &CoefficientModel,
    tg: &TimeGrid,
    grid: &ActionGrid,
    noise: &NoiseBank,
) -> Result<SampledCoefficients> {
    model.validate(grid, noise.dim(), tg.steps)?;
    if noise.steps() != tg.steps {
        return Err(Error::dim("noise bank steps", tg.steps, noise.steps()));
    }
    let nd = model.driver_count();
    let per = tg.steps * nd;
    let results = par::map_indexed(noise.scenarios(), |s| {
        let mut out = vec![0.0; per];
        let clamps = model.sample_drivers(tg, noise.dim(), noise.scenario(s), &mut out);
        (out, clamps)
    });
    let mut values = Vec::with_capacity(per * noise.scenarios());
    let mut clamp_events = 0;
    for (s, (v, c)) in results.into_iter().enumerate() {
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "coefficient driver",
                step: i / nd.max(1),
                scenario: s,
            });
        }
        values.extend(v);
        clamp_events += c;
    }
    Ok(SampledCoefficients {
        scenarios: noise.scenarios(),
        steps: tg.steps,
        drivers: nd,
        dim: noise.dim(),
        values,
        clamp_events,
    })
}

/// The coefficient field seen by one scenario.
#[derive(Debug, Clone, Copy)]
pub struct CoefficientField<'a> {
    pub model: &'a CoefficientModel,
    pub grid: &'a ActionGrid,
    pub time: &'a TimeGrid,
    pub sampled: &'a SampledCoefficients,
    pub scenario: usize,
}

impl CoefficientField<'_> {
    #[inline]
    pub fn slice(&self, k: usize, out: &mut CoeffSlice) {
        self.model
            .fill_slice(self.grid, self.time, k, self.sampled.drivers(self.scenario, k), out);
    }

    /// Full `(step, point)` arrays of this scenario, in the tabulated layout.
    pub fn materialize(&self) -> TimeTable {
        let d = self.sampled.dim();
        let count = self.grid.len();
        let mut slice = CoeffSlice::zeros(count, d);
        let mut t = TimeTable {
            upsilon: Vec::new(),
            phi: Vec::new(),
            chi: Vec::new(),
            psi: Vec::new(),
        };
        for k in 0..self.time.steps {
            self.slice(k, &mut slice);
            t.upsilon.push(slice.upsilon.clone());
            t.phi.push(slice.phi.clone());
            t.chi.push((0..count).map(|j| slice.chi_at(j).to_vec()).collect());
            t.psi.push((0..count).map(|j| slice.psi_at(j).to_vec()).collect());
        }
        t
    }
}
