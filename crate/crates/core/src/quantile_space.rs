//! Univariate distributions represented by their quantile functions on a
//! fixed midpoint grid `p_k = (k − 0.5)/M`.
//!
//! On this representation the 2-Wasserstein distance is the (grid) L² distance
//! between quantile functions, weighted averages are taken pointwise, and the
//! nearest valid quantile function to an arbitrary vector is its isotonic
//! projection.

use crate::error::{NptError, Result};

pub const DEFAULT_GRID_SIZE: usize = 200;

/// Equispaced midpoint grid on (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantileGrid {
    m: usize,
}

impl Default for QuantileGrid {
    fn default() -> Self {
        QuantileGrid {
            m: DEFAULT_GRID_SIZE,
        }
    }
}

impl QuantileGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(NptError::validation("grid size must be positive"));
        }
        Ok(QuantileGrid { m })
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn point(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.m as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.m).map(|k| self.point(k)).collect()
    }
}

/// Optional `[lower, upper]` support constraint for a marginal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub lower: f64,
    pub upper: f64,
}

impl Support {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(NptError::validation(format!("invalid support [{lower}, {upper}]")));
        }
        Ok(Support { lower, upper })
    }

    fn clip(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }
}

/// Nondecreasing quantile values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFunction {
    grid: QuantileGrid,
    values: Vec<f64>,
    support: Option<Support>,
}

impl QuantileFunction {
    pub fn new(grid: QuantileGrid, values: Vec<f64>, support: Option<Support>) -> Result<Self> {
        if values.len() != grid.size() {
            return Err(NptError::DimensionMismatch {
                expected: grid.size(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NptError::validation("quantile values must be finite"));
        }
        if let Some(k) = values.windows(2).position(|w| w[1] < w[0]) {
            return Err(NptError::validation(format!(
                "quantile values decrease at grid index {}",
                k + 1
            )));
        }
        if let Some(s) = support {
            if values.iter().any(|&v| v < s.lower || v > s.upper) {
                return Err(NptError::validation("quantile values leave the support"));
            }
        }
        Ok(QuantileFunction {
            grid,
            values,
            support,
        })
    }

    /// Builds a quantile function by sampling `q` at every grid point.
    pub fn from_fn(grid: QuantileGrid, q: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.points().into_iter().map(q).collect(), None)
    }

    pub fn grid(&self) -> QuantileGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support(&self) -> Option<Support> {
        self.support
    }

    /// Grid variance `(1/M) Σ (q_k − q̄)²`.
    pub fn grid_variance(&self) -> f64 {
        let m = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / m;
        self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m
    }

    /// True unless the function is a point mass.
    pub fn is_nondegenerate(&self) -> bool {
        self.values[self.values.len() - 1] > self.values[0]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Evaluates the quantile at an arbitrary probability by linear
    /// interpolation between grid points, constant beyond the outer points.
    pub fn eval(&self, p: f64) -> f64 {
        let m = self.values.len();
        let pos = p * m as f64 - 0.5;
        if !(pos > 0.0) {
            return self.values[0];
        }
        if pos >= (m - 1) as f64 {
            return self.values[m - 1];
        }
        let k = pos.floor() as usize;
        let frac = pos - k as f64;
        self.values[k] + frac * (self.values[k + 1] - self.values[k])
    }

    /// Quantile function of `a·X + b` for `a > 0`.
    pub fn affine(&self, a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(NptError::validation("affine scale must be positive"));
        }
        Self::new(self.grid, self.values.iter().map(|v| a * v + b).collect(), None)
    }
}

/// Left-continuous empirical quantiles: the value at `p_k` is the smallest
/// order statistic `x_(i)` with `i/N ≥ p_k`.
pub fn from_samples(xs: &[f64], grid: QuantileGrid) -> Result<QuantileFunction> {
    if xs.is_empty() {
        return Err(NptError::validation("cannot build a quantile function from no samples"));
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(NptError::validation("samples must be finite"));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantiles_of_sorted(&sorted, grid))
}

pub(crate) fn quantiles_of_sorted(sorted: &[f64], grid: QuantileGrid) -> QuantileFunction {
    let n = sorted.len() as u128;
    let m = grid.size() as u128;
    // i = ceil(p_k N) with p_k = (2k + 1) / 2M, in exact integer arithmetic.
    let values = (0..grid.size() as u128)
        .map(|k| {
            let num = (2 * k + 1) * n;
            let i = num.div_ceil(2 * m).max(1);
            sorted[(i - 1) as usize]
        })
        .collect();
    QuantileFunction {
        grid,
        values,
        support: None,
    }
}

fn check_grid(a: QuantileGrid, b: QuantileGrid) -> Result<()> {
    if a != b {
        return Err(NptError::DimensionMismatch {
            expected: a.size(),
            got: b.size(),
        });
    }
    Ok(())
}

pub fn w2_sq(a: &QuantileFunction, b: &QuantileFunction) -> Result<f64> {
    check_grid(a.grid, b.grid)?;
    let m = a.values.len() as f64;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / m)
}

/// Univariate 2-Wasserstein distance on the grid representation.
pub fn w2(a: &QuantileFunction, b: &QuantileFunction) -> Result<f64> {
    w2_sq(a, b).map(f64::sqrt)
}

/// Pool-adjacent-violators: least-squares nondecreasing fit to `ys`.
pub fn pava(ys: &[f64]) -> Vec<f64> {
    // Blocks as (sum, count); the mean of each block is nondecreasing left to right.
    let mut sums: Vec<f64> = Vec::with_capacity(ys.len());
    let mut counts: Vec<usize> = Vec::with_capacity(ys.len());
    for &y in ys {
        sums.push(y);
        counts.push(1);
        while sums.len() > 1 {
            let k = sums.len() - 1;
            let last = sums[k] / counts[k] as f64;
            let prev = sums[k - 1] / counts[k - 1] as f64;
            if prev <= last {
                break;
            }
            sums[k - 1] += sums[k];
            counts[k - 1] += counts[k];
            sums.pop();
            counts.pop();
        }
    }
    let mut out = Vec::with_capacity(ys.len());
    for (s, c) in sums.into_iter().zip(counts) {
        let mean = s / c as f64;
        out.extend(std::iter::repeat_n(mean, c));
    }
    // Block means can round into a tiny decrease; enforce exact monotonicity.
    for k in 1..out.len() {
        if out[k] < out[k - 1] {
            out[k] = out[k - 1];
        }
    }
    out
}

/// Euclidean projection of `ys` onto the monotone cone, then clipped to the support.
pub fn isotonic_project(ys: &[f64], support: Option<Support>) -> Result<QuantileFunction> {
    if ys.is_empty() {
        return Err(NptError::validation("cannot project an empty vector"));
    }
    if ys.iter().any(|v| !v.is_finite()) {
        return Err(NptError::validation("values to project must be finite"));
    }
    let mut values = pava(ys);
    if let Some(s) = support {
        values.iter_mut().for_each(|v| *v = s.clip(*v));
    }
    Ok(QuantileFunction {
        grid: QuantileGrid::new(ys.len())?,
        values,
        support,
    })
}

/// Pointwise weighted sum `Σ w_i q_i` (not yet monotone).
pub fn weighted_mean(qs: &[&QuantileFunction], weights: &[f64]) -> Result<Vec<f64>> {
    if qs.is_empty() {
        return Err(NptError::validation("no quantile functions to average"));
    }
    if qs.len() != weights.len() {
        return Err(NptError::DimensionMismatch {
            expected: qs.len(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(NptError::validation("weights must be finite"));
    }
    let grid = qs[0].grid;
    let mut out = vec![0.0; grid.size()];
    for (q, &w) in qs.iter().zip(weights) {
        check_grid(grid, q.grid)?;
        for (o, v) in out.iter_mut().zip(&q.values) {
            *o += w * v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(m: usize) -> QuantileGrid {
        QuantileGrid::new(m).unwrap()
    }

    #[test]
    fn grid_points_are_midpoints() {
        let g = grid(4);
        assert_eq!(g.points(), vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn empirical_quantiles() {
        let q = from_samples(&[3.0; 5], grid(10)).unwrap();
        assert!(q.values().iter().all(|&v| v == 3.0));
        let q = from_samples(&[1.0, 0.0], grid(4)).unwrap();
        assert_eq!(q.values(), &[0.0, 0.0, 1.0, 1.0]);
        assert!(from_samples(&[], grid(4)).is_err());
    }

    #[test]
    fn empirical_quantiles_order_invariant() {
        let xs = [0.3, -1.2, 4.0, 2.2, 0.0, 0.7, -0.1];
        let mut ys = xs;
        ys.reverse();
        let a = from_samples(&xs, grid(50)).unwrap();
        let b = from_samples(&ys, grid(50)).unwrap();
        assert_eq!(w2(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn w2_shift() {
        let a = from_samples(&[0.0, 1.0, 5.0], grid(20)).unwrap();
        assert_eq!(w2(&a, &a).unwrap(), 0.0);
        let b = a.affine(1.0, -2.5).unwrap();
        assert!((w2(&a, &b).unwrap() - 2.5).abs() < 1e-14);
        assert!(w2(&a, &from_samples(&[0.0], grid(21)).unwrap()).is_err());
    }

    #[test]
    fn pava_by_hand() {
        assert_eq!(pava(&[3.0, 1.0]), vec![2.0, 2.0]);
        assert_eq!(pava(&[1.0, 3.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(pava(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn projection_clips_to_support() {
        let s = Support::new(0.0, 1.0).unwrap();
        let q = isotonic_project(&[-1.0, 0.5, 2.0, 1.5], Some(s)).unwrap();
        assert_eq!(q.values(), &[0.0, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn weighted_means() {
        let g = grid(5);
        let zero = QuantileFunction::new(g, vec![0.0; 5], None).unwrap();
        let one = QuantileFunction::new(g, vec![1.0; 5], None).unwrap();
        assert_eq!(weighted_mean(&[&zero, &one], &[0.5, 0.5]).unwrap(), vec![0.5; 5]);
        let q2 = from_samples(&[1.0, 2.0, 7.0], g).unwrap();
        assert_eq!(weighted_mean(&[&zero, &q2], &[0.0 / 2.0, 2.0 / 2.0]).unwrap(), q2.values());
        assert_eq!(weighted_mean(&[&q2], &[1.0]).unwrap(), q2.values());
        assert!(weighted_mean(&[&zero], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn interpolated_eval() {
        let q = QuantileFunction::new(grid(4), vec![0.0, 1.0, 2.0, 3.0], None).unwrap();
        assert_eq!(q.eval(0.01), 0.0);
        assert_eq!(q.eval(0.99), 3.0);
        assert_eq!(q.eval(0.375), 1.0);
        assert!((q.eval(0.5) - 1.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn from_samples_is_monotone(xs in prop::collection::vec(-1e3f64..1e3, 1..60), m in 1usize..40) {
            let q = from_samples(&xs, grid(m)).unwrap();
            prop_assert!(q.values().windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn projection_idempotent_and_contractive(
            pair in (1usize..30).prop_flat_map(|m| (
                prop::collection::vec(-10.0f64..10.0, m),
                prop::collection::vec(-10.0f64..10.0, m),
            ))
        ) {
            let (y1, y2) = pair;
            let p1 = pava(&y1);
            let p2 = pava(&y2);
            let again = pava(&p1);
            for (a, b) in p1.iter().zip(&again) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            let dp: f64 = p1.iter().zip(&p2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let dy: f64 = y1.iter().zip(&y2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(dp <= dy + 1e-12);
        }
    }
}
