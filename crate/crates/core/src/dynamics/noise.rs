use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::par;

/// Brownian increments for every scenario, stored scenario-major
/// (`scenarios × steps × dim`).
///
/// Scenario `s` draws from a ChaCha stream selected by `s`, so any subset of
/// scenarios can be regenerated independently of the others.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    scenarios: usize,
    steps: usize,
    dim: usize,
    dt: f64,
    increments: Vec<f64>,
}

impl NoiseBank {
    pub fn generate(scenarios: usize, steps: usize, dim: usize, dt: f64, seed: u64) -> Self {
        let sqrt_dt = dt.sqrt();
        let per = steps * dim;
        let chunks = par::map_indexed(scenarios, |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            (0..per)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * sqrt_dt
                })
                .collect::<Vec<f64>>()
        });
        NoiseBank {
            scenarios,
            steps,
            dim,
            dt,
            increments: chunks.concat(),
        }
    }

    /// Wraps increments supplied by the caller (e.g. a fixed test path).
    pub fn from_increments(scenarios: usize, steps: usize, dim: usize, dt: f64, increments: Vec<f64>) -> Self {
        assert_eq!(increments.len(), scenarios * steps * dim, "noise bank shape");
        NoiseBank {
            scenarios,
            steps,
            dim,
            dt,
            increments,
        }
    }

    pub fn scenarios(&self) -> usize {
        self.scenarios
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// All increments of scenario `s` (`steps × dim`).
    #[inline]
    pub fn scenario(&self, s: usize) -> &[f64] {
        let per = self.steps * self.dim;
        &self.increments[s * per..(s + 1) * per]
    }

    /// `dB_k` of scenario `s`.
    #[inline]
    pub fn increment(&self, s: usize, k: usize) -> &[f64] {
        let base = (s * self.steps + k) * self.dim;
        &self.increments[base..base + self.dim]
    }

    pub fn raw(&self) -> &[f64] {
        &self.increments
    }
}
