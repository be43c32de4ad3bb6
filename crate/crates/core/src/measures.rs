//! Probability measures on a discretized action space and admissible
//! singular (nondecreasing, left-continuous) control paths.
//!
//! Every relaxed control lives on a fixed [`ActionGrid`]: a row of a
//! [`RelaxedControl`] is a probability vector over the grid points. Strict
//! controls embed as Dirac rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for probability vectors.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Default total-variation cap on singular controls.
pub const DEFAULT_SINGULAR_CAP: f64 = 10.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionGridDoc {
    points: Vec<Vec<f64>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Finite, lexicographically ordered discretization of the compact action set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ActionGridDoc", into = "ActionGridDoc")]
pub struct ActionGrid {
    points: Vec<Vec<f64>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<ActionGridDoc> for ActionGrid {
    type Error = Error;

    fn try_from(doc: ActionGridDoc) -> Result<Self> {
        ActionGrid::new(doc.points, doc.lower, doc.upper)
    }
}

impl From<ActionGrid> for ActionGridDoc {
    fn from(g: ActionGrid) -> Self {
        ActionGridDoc {
            points: g.points,
            lower: g.lower,
            upper: g.upper,
        }
    }
}

impl ActionGrid {
    /// Builds a grid inside the box `[lower, upper]`.
    ///
    /// Points must be strictly increasing in lexicographic order, share one
    /// dimension, and lie inside the box.
    pub fn new(points: Vec<Vec<f64>>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("action_grid.points", "grid needs at least one point"));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::invalid("action_grid.points", "points must have dimension >= 1"));
        }
        if lower.len() != dim || upper.len() != dim {
            return Err(Error::dim("action grid bounding box", dim, lower.len().min(upper.len())));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::dim("action grid point", dim, p.len()));
            }
            for (c, &v) in p.iter().enumerate() {
                if !v.is_finite() || v < lower[c] || v > upper[c] {
                    return Err(Error::invalid(
                        "action_grid.points",
                        format!("point {i} component {c} = {v} outside [{}, {}]", lower[c], upper[c]),
                    ));
                }
            }
            if i > 0 && !lex_less(&points[i - 1], p) {
                return Err(Error::invalid(
                    "action_grid.points",
                    format!("points {} and {i} are not strictly increasing", i - 1),
                ));
            }
        }
        Ok(ActionGrid {
            points,
            lower,
            upper,
        })
    }

    /// One-dimensional grid bounded by its own extreme values.
    pub fn scalar(values: &[f64]) -> Result<Self> {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        ActionGrid::new(values.iter().map(|&v| vec![v]).collect(), vec![lo], vec![hi])
    }

    /// Lexicographic product of two scalar grids: point `(a_i, b_j)` sits at
    /// index `i * b.len() + j`.
    pub fn product(a: &[f64], b: &[f64]) -> Result<Self> {
        let mut points = Vec::with_capacity(a.len() * b.len());
        for &u in a {
            for &c in b {
                points.push(vec![u, c]);
            }
        }
        let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        ActionGrid::new(points, vec![min(a), min(b)], vec![max(a), max(b)])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Dimension of each action point.
    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Samples a real function on the grid.
    pub fn sample<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        self.points.iter().map(|p| f(p)).collect()
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// `Σ_j f(u_j) w_j` over the grid.
///
/// Zero weights are skipped, so a Dirac row returns `f(u_j)` bit for bit.
pub fn integrate_against(f: &[f64], weights: &[f64]) -> Result<f64> {
    if f.len() != weights.len() {
        return Err(Error::dim("integrate_against", weights.len(), f.len()));
    }
    Ok(integrate_unchecked(f, weights))
}

#[inline]
pub(crate) fn integrate_unchecked(f: &[f64], weights: &[f64]) -> f64 {
    let mut acc = 0.0;
    let mut first = true;
    for (&v, &w) in f.iter().zip(weights) {
        if w != 0.0 {
            if first {
                acc = v * w;
                first = false;
            } else {
                acc += v * w;
            }
        }
    }
    acc
}

/// Integrates an ℝ^d-valued grid function stored point-major (`count × d`).
pub fn integrate_vector(f: &[f64], weights: &[f64], out: &mut [f64]) -> Result<()> {
    let d = out.len();
    if f.len() != weights.len() * d {
        return Err(Error::dim("integrate_vector", weights.len() * d, f.len()));
    }
    integrate_vector_unchecked(f, weights, out);
    Ok(())
}

#[inline]
pub(crate) fn integrate_vector_unchecked(f: &[f64], weights: &[f64], out: &mut [f64]) {
    let d = out.len();
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut first = true;
    for (j, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let row = &f[j * d..(j + 1) * d];
        if first {
            for (o, &v) in out.iter_mut().zip(row) {
                *o = v * w;
            }
            first = false;
        } else {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v * w;
            }
        }
    }
}

/// Unit mass at grid index `index`.
pub fn dirac(count: usize, index: usize) -> Result<Vec<f64>> {
    if index >= count {
        return Err(Error::IndexOutOfRange { index, count });
    }
    let mut row = vec![0.0; count];
    row[index] = 1.0;
    Ok(row)
}

/// Time-indexed probability vectors on an action grid (`steps × count`).
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedControl {
    steps: usize,
    count: usize,
    weights: Vec<f64>,
}

impl RelaxedControl {
    pub fn uniform(steps: usize, count: usize) -> Self {
        RelaxedControl {
            steps,
            count,
            weights: vec![1.0 / count as f64; steps * count],
        }
    }

    /// The strict control that plays grid point `index` at every step.
    pub fn constant_dirac(steps: usize, count: usize, index: usize) -> Result<Self> {
        let row = dirac(count, index)?;
        Ok(RelaxedControl {
            steps,
            count,
            weights: row.repeat(steps),
        })
    }

    /// Embeds a strict (grid-index valued) control path.
    pub fn from_strict(path: &[usize], count: usize) -> Result<Self> {
        let mut weights = vec![0.0; path.len() * count];
        for (k, &j) in path.iter().enumerate() {
            if j >= count {
                return Err(Error::IndexOutOfRange { index: j, count });
            }
            weights[k * count + j] = 1.0;
        }
        Ok(RelaxedControl {
            steps: path.len(),
            count,
            weights,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let count = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut weights = Vec::with_capacity(rows.len() * count);
        for r in rows {
            if r.len() != count {
                return Err(Error::dim("relaxed control row", count, r.len()));
            }
            weights.extend_from_slice(r);
        }
        Self::from_flat(rows.len(), count, weights)
    }

    pub fn from_flat(steps: usize, count: usize, weights: Vec<f64>) -> Result<Self> {
        if count == 0 || steps == 0 {
            return Err(Error::invalid("relaxed control", "needs at least one step and one grid point"));
        }
        if weights.len() != steps * count {
            return Err(Error::dim("relaxed control weights", steps * count, weights.len()));
        }
        let c = RelaxedControl {
            steps,
            count,
            weights,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        for k in 0..self.steps {
            let row = self.row(k);
            if row.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                return Err(Error::invalid("relaxed control", format!("row {k} has a negative or non-finite weight")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid("relaxed control", format!("row {k} sums to {s}")));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn count(&self) -> usize {
        self.count
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.weights[k * self.count..(k + 1) * self.count]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.weights.chunks(self.count).map(|r| r.to_vec()).collect()
    }

    /// If every row is a Dirac, the supporting grid index per step.
    pub fn strict_path(&self) -> Option<Vec<usize>> {
        (0..self.steps)
            .map(|k| {
                let row = self.row(k);
                row.iter().position(|&w| w == 1.0).filter(|_| row.iter().filter(|&&w| w != 0.0).count() == 1)
            })
            .collect()
    }
}

/// `(1 − θ) μ + θ q`, row by row.
pub fn convex_combine(mu: &RelaxedControl, q: &RelaxedControl, theta: f64) -> Result<RelaxedControl> {
    check_theta(theta)?;
    if mu.steps != q.steps || mu.count != q.count {
        return Err(Error::dim("convex_combine", mu.weights.len(), q.weights.len()));
    }
    let weights = mu
        .weights
        .iter()
        .zip(&q.weights)
        .map(|(&a, &b)| (1.0 - theta) * a + theta * b)
        .collect();
    Ok(RelaxedControl {
        steps: mu.steps,
        count: mu.count,
        weights,
    })
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid("theta", format!("{theta} is outside [0, 1]")));
    }
    Ok(())
}

/// Nondecreasing step path with `ξ_0 = 0`, stored as per-step increments
/// (`steps × dim`). Increment `k` is applied at the start of step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularControl {
    steps: usize,
    dim: usize,
    increments: Vec<f64>,
}

impl SingularControl {
    pub fn zeros(steps: usize, dim: usize) -> Self {
        SingularControl {
            steps,
            dim,
            increments: vec![0.0; steps * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], dim: usize) -> Result<Self> {
        let mut inc = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::dim("singular control row", dim, r.len()));
            }
            inc.extend_from_slice(r);
        }
        Self::from_flat(rows.len(), dim, inc)
    }

    pub fn from_flat(steps: usize, dim: usize, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != steps * dim {
            return Err(Error::dim("singular control increments", steps * dim, increments.len()));
        }
        if let Some(i) = increments.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(
                "singular control",
                format!("increment at step {} component {} is negative or non-finite", i / dim.max(1), i % dim.max(1)),
            ));
        }
        Ok(SingularControl {
            steps,
            dim,
            increments,
        })
    }

    /// A single jump of `size` in component `component` at step `step`.
    pub fn single_jump(steps: usize, dim: usize, step: usize, component: usize, size: f64) -> Result<Self> {
        let mut c = Self::zeros(steps, dim);
        if step >= steps || component >= dim {
            return Err(Error::IndexOutOfRange {
                index: step * dim + component,
                count: steps * dim,
            });
        }
        c.increments[step * dim + component] = size;
        Self::from_flat(steps, dim, c.increments)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        if self.dim == 0 {
            return vec![Vec::new(); self.steps];
        }
        self.increments.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    /// `|ξ_T|`: total mass over all components.
    pub fn total_variation(&self) -> f64 {
        self.increments.iter().sum()
    }

    /// Path values `ξ_{t_k}` for `k = 0..=steps` (left limits, so `ξ_{t_0} = 0`).
    pub fn path(&self) -> Vec<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        let mut out = Vec::with_capacity(self.steps + 1);
        out.push(acc.clone());
        for k in 0..self.steps {
            for (a, &d) in acc.iter_mut().zip(self.row(k)) {
                *a += d;
            }
            out.push(acc.clone());
        }
        out
    }

    /// Checks nonnegativity and the total-variation cap.
    pub fn check_admissible(&self, cap: f64) -> Result<()> {
        let tv = self.total_variation();
        if tv > cap * (1.0 + 1e-12) {
            return Err(Error::invalid("singular control", format!("total variation {tv} exceeds cap {cap}")));
        }
        Ok(())
    }
}

/// `ξ + θ(η − ξ)` on increments.
pub fn combine_singular(xi: &SingularControl, eta: &SingularControl, theta: f64) -> Result<SingularControl> {
    check_theta(theta)?;
    if xi.steps != eta.steps || xi.dim != eta.dim {
        return Err(Error::dim("combine_singular", xi.increments.len(), eta.increments.len()));
    }
    let increments = xi
        .increments
        .iter()
        .zip(&eta.increments)
        .map(|(&a, &b)| ((1.0 - theta) * a + theta * b).max(0.0))
        .collect();
    Ok(SingularControl {
        steps: xi.steps,
        dim: xi.dim,
        increments,
    })
}

/// `Σ_k f(t_k) · Δξ_k` with `f` stored as `steps × dim`.
pub fn stieltjes_integral(f: &[f64], xi: &SingularControl) -> Result<f64> {
    if f.len() != xi.increments.len() {
        return Err(Error::dim("stieltjes_integral", xi.increments.len(), f.len()));
    }
    Ok(f.iter().zip(&xi.increments).map(|(a, b)| a * b).sum())
}

/// On-disk form of a control pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlsDocument {
    pub schema: String,
    pub horizon: f64,
    pub steps: usize,
    pub grid_points: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    pub increments: Vec<Vec<f64>>,
}

pub const CONTROLS_SCHEMA: &str = "relaxsing/controls-v1";

impl ControlsDocument {
    pub fn new(horizon: f64, grid: &ActionGrid, mu: &RelaxedControl, xi: &SingularControl) -> Self {
        ControlsDocument {
            schema: CONTROLS_SCHEMA.to_string(),
            horizon,
            steps: mu.steps(),
            grid_points: grid.points().to_vec(),
            weights: mu.rows(),
            increments: xi.rows(),
        }
    }

    /// Validates the document against a grid and singular dimension.
    pub fn into_controls(
        &self,
        grid: &ActionGrid,
        horizon: f64,
        steps: usize,
        singular_dim: usize,
    ) -> Result<(RelaxedControl, SingularControl)> {
        if self.schema != CONTROLS_SCHEMA {
            return Err(Error::invalid("schema", format!("expected {CONTROLS_SCHEMA}, found {}", self.schema)));
        }
        if self.steps != steps || self.weights.len() != steps || self.increments.len() != steps {
            return Err(Error::dim("controls steps", steps, self.weights.len()));
        }
        if (self.horizon - horizon).abs() > 1e-12 * horizon.abs().max(1.0) {
            return Err(Error::invalid("horizon", format!("controls use {} but problem uses {horizon}", self.horizon)));
        }
        if self.grid_points != grid.points() {
            return Err(Error::invalid("grid_points", "controls were written for a different action grid"));
        }
        let mu = RelaxedControl::from_rows(&self.weights)?;
        if mu.count() != grid.len() {
            return Err(Error::dim("controls weights", grid.len(), mu.count()));
        }
        let xi = SingularControl::from_rows(&self.increments, singular_dim)?;
        Ok((mu, xi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_of_identity() {
        let g = ActionGrid::scalar(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        let f = g.sample(|u| u[0]);
        let m = RelaxedControl::uniform(1, 4);
        assert_eq!(integrate_against(&f, m.row(0)).unwrap(), 1.5);
    }

    #[test]
    fn ho_lee_integrand_uniform() {
        let g = ActionGrid::scalar(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let f = g.sample(|u| -0.02 * u[0]);
        let v = integrate_against(&f, &[0.25; 4]).unwrap();
        assert!((v + 0.05).abs() < 1e-15);
    }

    #[test]
    fn dirac_picks_value() {
        let f = [3.5, -1.0, 7.25, 0.1];
        assert_eq!(dirac(4, 2).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(integrate_against(&f, &dirac(4, 0).unwrap()).unwrap(), 3.5);
        assert!(matches!(dirac(4, 4), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn dirac_mixture() {
        let a = RelaxedControl::from_rows(&[dirac(4, 0).unwrap()]).unwrap();
        let b = RelaxedControl::from_rows(&[dirac(4, 1).unwrap()]).unwrap();
        let c = convex_combine(&a, &b, 0.5).unwrap();
        assert_eq!(c.row(0), &[0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn mismatched_sizes_rejected() {
        assert!(matches!(integrate_against(&[1.0, 2.0], &[1.0]), Err(Error::Dimension { .. })));
        let mut out = [0.0; 2];
        assert!(integrate_vector(&[1.0; 3], &[0.5, 0.5], &mut out).is_err());
    }

    #[test]
    fn combine_endpoints_and_interior() {
        let mu = RelaxedControl::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let q = RelaxedControl::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert_eq!(convex_combine(&mu, &q, 0.0).unwrap(), mu);
        assert_eq!(convex_combine(&mu, &q, 1.0).unwrap(), q);
        assert_eq!(convex_combine(&mu, &q, 0.25).unwrap().row(0), &[0.75, 0.25]);
        assert!(convex_combine(&mu, &q, 1.5).is_err());
        assert!(convex_combine(&mu, &q, -0.1).is_err());
        let other = RelaxedControl::uniform(2, 2);
        assert!(convex_combine(&mu, &other, 0.5).is_err());
    }

    #[test]
    fn singular_combination() {
        let xi = SingularControl::from_rows(&[vec![1.0, 0.0]], 2).unwrap();
        let eta = SingularControl::from_rows(&[vec![0.0, 2.0]], 2).unwrap();
        assert_eq!(combine_singular(&xi, &eta, 0.0).unwrap(), xi);
        assert_eq!(combine_singular(&xi, &eta, 1.0).unwrap(), eta);
        assert_eq!(combine_singular(&xi, &eta, 0.5).unwrap().row(0), &[0.5, 1.0]);
        assert!(combine_singular(&xi, &eta, 2.0).is_err());
    }

    #[test]
    fn stieltjes_examples() {
        let jump = SingularControl::single_jump(5, 1, 2, 0, 2.0).unwrap();
        assert_eq!(stieltjes_integral(&[1.0; 5], &jump).unwrap(), 2.0);
        assert_eq!(stieltjes_integral(&[1.0; 5], &SingularControl::zeros(5, 1)).unwrap(), 0.0);
        let two = SingularControl::from_rows(&[vec![0.0], vec![1.0], vec![0.0], vec![1.0], vec![0.0]], 1).unwrap();
        let f: Vec<f64> = (0..5).map(|k| k as f64).collect();
        assert_eq!(stieltjes_integral(&f, &two).unwrap(), 4.0);
        assert!(stieltjes_integral(&[1.0; 4], &two).is_err());
    }

    #[test]
    fn invalid_controls_rejected() {
        assert!(RelaxedControl::from_rows(&[vec![0.5, 0.6]]).is_err());
        assert!(RelaxedControl::from_rows(&[vec![1.5, -0.5]]).is_err());
        assert!(SingularControl::from_rows(&[vec![-1.0]], 1).is_err());
        let big = SingularControl::from_rows(&[vec![6.0], vec![6.0]], 1).unwrap();
        assert!(big.check_admissible(10.0).is_err());
        assert!(big.check_admissible(12.0).is_ok());
    }

    #[test]
    fn grid_ordering_and_bounds() {
        assert!(ActionGrid::new(vec![vec![1.0], vec![1.0]], vec![0.0], vec![2.0]).is_err());
        assert!(ActionGrid::new(vec![vec![1.0], vec![3.0]], vec![0.0], vec![2.0]).is_err());
        let p = ActionGrid::product(&[1.0, 2.0], &[0.0, 0.5]).unwrap();
        assert_eq!(p.point(1), &[1.0, 0.5]);
        assert_eq!(p.point(2), &[2.0, 0.0]);
        let json = serde_json::to_string(&p).unwrap();
        let back: ActionGrid = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<ActionGrid>(r#"{"points":[[2.0],[1.0]],"lower":[0.0],"upper":[3.0]}"#).is_err());
    }

    #[test]
    fn path_is_left_continuous_from_zero() {
        let xi = SingularControl::from_rows(&[vec![1.0], vec![0.0], vec![2.0]], 1).unwrap();
        let path = xi.path();
        assert_eq!(path[0], vec![0.0]);
        assert_eq!(path[1], vec![1.0]);
        assert_eq!(path[3], vec![3.0]);
    }

    #[test]
    fn controls_document_round_trip() {
        let g = ActionGrid::scalar(&[0.0, 1.0]).unwrap();
        let mu = RelaxedControl::from_rows(&[vec![0.3, 0.7], vec![1.0, 0.0]]).unwrap();
        let xi = SingularControl::from_rows(&[vec![0.0], vec![0.5]], 1).unwrap();
        let doc = ControlsDocument::new(2.0, &g, &mu, &xi);
        let text = serde_json::to_string(&doc).unwrap();
        let back: ControlsDocument = serde_json::from_str(&text).unwrap();
        let (m2, x2) = back.into_controls(&g, 2.0, 2, 1).unwrap();
        assert_eq!(m2, mu);
        assert_eq!(x2, xi);
        assert!(back.into_controls(&g, 1.0, 2, 1).is_err());
    }

    fn row_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum::<f64>() + 1e-9;
            let mut r: Vec<f64> = v.iter().map(|x| (x + 1e-9 / v.len() as f64) / s).collect();
            let t: f64 = r.iter().sum();
            r.iter_mut().for_each(|x| *x /= t);
            r
        })
    }

    proptest! {
        #[test]
        fn combination_stays_on_simplex(a in row_strategy(6), b in row_strategy(6), theta in 0.0f64..=1.0) {
            let mu = RelaxedControl::from_rows(&[a]).unwrap();
            let q = RelaxedControl::from_rows(&[b]).unwrap();
            let c = convex_combine(&mu, &q, theta).unwrap();
            let s: f64 = c.row(0).iter().sum();
            prop_assert!((s - 1.0).abs() <= ROW_SUM_TOL);
            prop_assert!(c.row(0).iter().all(|&w| w >= 0.0));
        }

        #[test]
        fn integration_is_linear(
            f in prop::collection::vec(-10.0f64..10.0, 5),
            g in prop::collection::vec(-10.0f64..10.0, 5),
            m in row_strategy(5),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let comb: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
            let lhs = integrate_against(&comb, &m).unwrap();
            let rhs = a * integrate_against(&f, &m).unwrap() + b * integrate_against(&g, &m).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }

        #[test]
        fn singular_combination_nondecreasing(
            a in prop::collection::vec(0.0f64..2.0, 8),
            b in prop::collection::vec(0.0f64..2.0, 8),
            theta in 0.0f64..=1.0,
        ) {
            let xi = SingularControl::from_flat(4, 2, a).unwrap();
            let eta = SingularControl::from_flat(4, 2, b).unwrap();
            let c = combine_singular(&xi, &eta, theta).unwrap();
            prop_assert!(c.increments().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn stieltjes_linear_and_additive(
            f in prop::collection::vec(-5.0f64..5.0, 6),
            g in prop::collection::vec(-5.0f64..5.0, 6),
            inc in prop::collection::vec(0.0f64..1.0, 6),
            a in -2.0f64..2.0,
            split in 0usize..6,
        ) {
            let xi = SingularControl::from_flat(6, 1, inc.clone()).unwrap();
            let comb: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + y).collect();
            let lhs = stieltjes_integral(&comb, &xi).unwrap();
            let rhs = a * stieltjes_integral(&f, &xi).unwrap() + stieltjes_integral(&g, &xi).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
            let mut early = inc.clone();
            early[split..].iter_mut().for_each(|v| *v = 0.0);
            let mut late = inc.clone();
            late[..split].iter_mut().for_each(|v| *v = 0.0);
            let whole = stieltjes_integral(&f, &xi).unwrap();
            let parts = stieltjes_integral(&f, &SingularControl::from_flat(6, 1, early).unwrap()).unwrap()
                + stieltjes_integral(&f, &SingularControl::from_flat(6, 1, late).unwrap()).unwrap();
            prop_assert!((whole - parts).abs() <= 1e-12);
        }
    }
}
