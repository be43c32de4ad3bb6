//! Cross-scenario least-squares projection onto polynomials of the Markov
//! state, used as the conditional expectation `E[· | ℱ_k]` by the adjoint
//! solvers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionOptions {
    /// Total degree of the polynomial basis.
    pub degree: usize,
    /// Ridge penalty added to the normalized Gram matrix (the intercept is
    /// not penalized, so constants are reproduced exactly).
    pub ridge: f64,
}

impl Default for RegressionOptions {
    fn default() -> Self {
        RegressionOptions {
            degree: 2,
            ridge: 1e-8,
        }
    }
}

/// Standardized feature columns with constant columns dropped.
struct Features {
    samples: usize,
    columns: Vec<Vec<f64>>,
}

impl Features {
    fn new(raw: &[&[f64]], samples: usize) -> Self {
        let mut columns = Vec::new();
        for col in raw {
            let (mean, se) = par::mean_and_se(col);
            let sd = se * (samples as f64).sqrt();
            if !(sd > 1e-12 * (1.0 + mean.abs())) {
                continue;
            }
            columns.push(col.iter().map(|v| (v - mean) / sd).collect());
        }
        Features { samples, columns }
    }

    /// Monomials of total degree ≤ `degree` (at most 2) as index lists.
    fn monomials(&self, degree: usize) -> Vec<Vec<usize>> {
        let f = self.columns.len();
        let mut out = vec![vec![]];
        if degree >= 1 {
            out.extend((0..f).map(|i| vec![i]));
        }
        if degree >= 2 {
            for i in 0..f {
                for j in i..f {
                    out.push(vec![i, j]);
                }
            }
        }
        out
    }

    #[inline]
    fn eval(&self, terms: &[Vec<usize>], s: usize, out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(terms) {
            *o = t.iter().map(|&i| self.columns[i][s]).product();
        }
    }
}

/// Projects each target onto the span of the basis and returns the fitted
/// values at every sample. Falls back to lower degrees when the normal
/// equations cannot be factored.
pub fn project(features: &[&[f64]], targets: &[&[f64]], opts: &RegressionOptions, step: usize) -> Result<Vec<Vec<f64>>> {
    let samples = targets.first().map_or(0, |t| t.len());
    if samples == 0 {
        return Err(Error::Regression {
            step,
            reason: "no samples".into(),
        });
    }
    if let Some(bad) = features.iter().chain(targets).find(|c| c.len() != samples) {
        return Err(Error::dim("regression column length", samples, bad.len()));
    }
    let feats = Features::new(features, samples);
    let mut degree = opts.degree.min(2);
    loop {
        let terms = feats.monomials(degree);
        if terms.len() <= samples {
            match solve(&feats, &terms, targets, opts.ridge) {
                Some(fitted) => return Ok(fitted),
                None if degree == 0 => break,
                None => {}
            }
        }
        if degree == 0 {
            break;
        }
        log::warn!("regression at step {step}: degree {degree} basis is singular, retrying with degree {}", degree - 1);
        degree -= 1;
    }
    Err(Error::Regression {
        step,
        reason: "design matrix is singular even for the constant basis".into(),
    })
}

fn solve(feats: &Features, terms: &[Vec<usize>], targets: &[&[f64]], ridge: f64) -> Option<Vec<Vec<f64>>> {
    let b = terms.len();
    let t = targets.len();
    let n = feats.samples;
    // accumulator layout: Gram (b×b) then right-hand sides (t×b)
    let acc = par::chunked_reduce(
        n,
        || vec![0.0; b * b + t * b],
        |acc, s| {
            let mut phi = vec![0.0; b];
            feats.eval(terms, s, &mut phi);
            for i in 0..b {
                for j in i..b {
                    acc[i * b + j] += phi[i] * phi[j];
                }
            }
            for (ti, target) in targets.iter().enumerate() {
                let y = target[s];
                for i in 0..b {
                    acc[b * b + ti * b + i] += phi[i] * y;
                }
            }
        },
        |a, c| a.iter_mut().zip(c).for_each(|(x, y)| *x += y),
    );
    let scale = 1.0 / n as f64;
    let gram = DMatrix::from_fn(b, b, |i, j| {
        let v = if i <= j { acc[i * b + j] } else { acc[j * b + i] };
        v * scale + if i == j && i > 0 { ridge } else { 0.0 }
    });
    let chol = gram.cholesky()?;
    let mut coefs = Vec::with_capacity(t);
    for ti in 0..t {
        let rhs = DVector::from_fn(b, |i, _| acc[b * b + ti * b + i] * scale);
        let beta = chol.solve(&rhs);
        if beta.iter().any(|v| !v.is_finite()) {
            return None;
        }
        coefs.push(beta);
    }
    let fitted = par::map_indexed(n, |s| {
        let mut phi = vec![0.0; b];
        feats.eval(terms, s, &mut phi);
        coefs
            .iter()
            .map(|beta| phi.iter().zip(beta.iter()).map(|(p, c)| p * c).sum::<f64>())
            .collect::<Vec<f64>>()
    });
    let mut out = vec![vec![0.0; n]; t];
    for (s, row) in fitted.into_iter().enumerate() {
        for (ti, v) in row.into_iter().enumerate() {
            out[ti][s] = v;
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reproduces_quadratic_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 500;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let target: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 1.0 + 2.0 * a - b + 0.5 * a * b + a * a).collect();
        let fit = project(&[&x, &y], &[&target], &RegressionOptions::default(), 0).unwrap();
        for (f, t) in fit[0].iter().zip(&target) {
            assert!((f - t).abs() < 1e-6, "{f} vs {t}");
        }
    }

    #[test]
    fn constant_features_reduce_to_mean() {
        let x = vec![3.0; 10];
        let target: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let fit = project(&[&x], &[&target], &RegressionOptions::default(), 0).unwrap();
        assert!(fit[0].iter().all(|v| (v - 4.5).abs() < 1e-6));
    }

    #[test]
    fn residuals_are_orthogonal_to_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 2000;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = x.iter().map(|v: &f64| v.sin() + rng.random_range(-0.1..0.1)).collect();
        let fit = project(&[&x], &[&target], &RegressionOptions::default(), 0).unwrap();
        for power in 0..3 {
            let dot: f64 = (0..n).map(|s| (target[s] - fit[0][s]) * x[s].powi(power)).sum::<f64>() / n as f64;
            assert!(dot.abs() < 1e-6, "power {power}: {dot}");
        }
    }

    #[test]
    fn few_samples_fall_back_to_lower_degree() {
        let x = vec![0.0, 1.0, 2.0];
        let y = vec![1.0, 0.0, 5.0];
        let target = vec![1.0, 2.0, 3.0];
        // degree 2 in two features needs 6 terms; only 3 samples are available
        let fit = project(&[&x, &y], &[&target], &RegressionOptions::default(), 4).unwrap();
        for (f, t) in fit[0].iter().zip(&target) {
            assert!((f - t).abs() < 1e-5);
        }
    }

    #[test]
    fn deterministic_in_sample_order() {
        let x: Vec<f64> = (0..3000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let t: Vec<f64> = x.iter().map(|v| v.cos()).collect();
        let a = project(&[&x], &[&t], &RegressionOptions::default(), 0).unwrap();
        let b = project(&[&x], &[&t], &RegressionOptions::default(), 0).unwrap();
        assert_eq!(a, b);
    }
}
