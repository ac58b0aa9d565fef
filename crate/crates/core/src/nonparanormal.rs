//! Nonparanormal (Gaussian copula) distributions: `d` marginal quantile
//! functions plus a latent Gaussian correlation matrix.
//!
//! Estimation uses empirical marginal quantiles and the sine-transformed
//! Kendall's τ matrix. The NPT distance combines marginal W2 distances with the
//! BW distance between latent correlations.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use libm::erfc;

use crate::bw_geometry::{
    bw_distance_sq, project_correlation, CorrelationMatrix, SpdMatrix, SymMatrix, DEFAULT_EIGEN_FLOOR,
};
use crate::error::{NptError, Result};
use crate::quantile_space::{quantiles_of_sorted, w2_sq, QuantileFunction, QuantileGrid};

/// Eigenvalue floor applied when repairing an indefinite sine-Kendall matrix.
pub const KENDALL_REPAIR_FLOOR: f64 = 1e-8;

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

const ACKLAM_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const ACKLAM_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const ACKLAM_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const ACKLAM_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];

fn lower_half_inverse(p: f64) -> f64 {
    let x = if p < 0.02425 {
        let q = (-2.0 * p.ln()).sqrt();
        let c = &ACKLAM_C;
        let d = &ACKLAM_D;
        (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        let a = &ACKLAM_A;
        let b = &ACKLAM_B;
        (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    };
    if x == 0.0 {
        return x;
    }
    // One Halley step brings the rational approximation to full precision.
    let e = phi(x) - p;
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Standard normal quantile function on (0, 1).
pub fn phi_inv(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(NptError::validation(format!("probability {p} must lie in (0, 1)")));
    }
    if p > 0.5 {
        Ok(-lower_half_inverse(1.0 - p))
    } else {
        Ok(lower_half_inverse(p))
    }
}

/// Gaussian–Sobolev seminorm of the transport map `x ↦ m + sd·x`.
pub fn h1_seminorm_gaussian(sd: f64) -> f64 {
    sd
}

/// Gaussian–Sobolev seminorm of `x ↦ exp(mu0 + sd·x)`: `√(sd² e^{2(mu0 + sd²)})`.
pub fn h1_seminorm_lognormal(mu0: f64, sd: f64) -> f64 {
    (sd * sd * (2.0 * (mu0 + sd * sd)).exp()).sqrt()
}

/// `N` observations of a `d`-dimensional random vector, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl RawSample {
    pub fn new(d: usize, data: Vec<f64>) -> Result<Self> {
        if d == 0 || data.len() % d != 0 {
            return Err(NptError::validation(format!(
                "sample data of length {} does not split into rows of width {d}",
                data.len()
            )));
        }
        let n = data.len() / d;
        if n < 2 {
            return Err(NptError::validation(format!("need at least 2 observations, got {n}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NptError::validation("sample has non-finite entries"));
        }
        Ok(RawSample { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(NptError::validation("sample rows have unequal lengths"));
        }
        Self::new(d, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for r in self.rows() {
            for (a, v) in m.iter_mut().zip(r) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= self.n as f64);
        m
    }

    /// Covariance with divisor `N`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.column_means();
        let mut c = DMatrix::zeros(self.d, self.d);
        for r in self.rows() {
            let centered = DVector::from_iterator(self.d, r.iter().zip(&mean).map(|(v, m)| v - m));
            c += &centered * centered.transpose();
        }
        c / self.n as f64
    }
}

/// Counts strict inversions of `ys` by merge sort, sorting it in place.
fn count_inversions(ys: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = ys.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = count_inversions(&mut ys[..mid], buf) + count_inversions(&mut ys[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if ys[i] <= ys[j] {
            buf.push(ys[i]);
            i += 1;
        } else {
            buf.push(ys[j]);
            inv += (mid - i) as u64;
            j += 1;
        }
    }
    buf.extend_from_slice(&ys[i..mid]);
    buf.extend_from_slice(&ys[j..n]);
    ys.copy_from_slice(buf);
    inv
}

/// Number of pairs tied within runs of equal values in a sorted slice.
fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Kendall's τ-a with its tie indicator, in O(N log N).
pub fn kendall_tau_a(x: &[f64], y: &[f64]) -> Result<(f64, bool)> {
    if x.len() != y.len() {
        return Err(NptError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(NptError::validation("Kendall's tau needs at least 2 observations"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let ties_x = tied_pairs(&xs);
    let mut ties_xy = 0u64;
    let mut run = 1u64;
    for k in 1..n {
        if xs[k] == xs[k - 1] && ys[k] == ys[k - 1] {
            run += 1;
        } else {
            ties_xy += run * (run - 1) / 2;
            run = 1;
        }
    }
    ties_xy += run * (run - 1) / 2;

    let mut buf = Vec::with_capacity(n);
    let discordant = count_inversions(&mut ys, &mut buf);
    let ties_y = tied_pairs(&ys);

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let untied = n0 - ties_x - ties_y + ties_xy;
    let diff = untied as f64 - 2.0 * discordant as f64;
    Ok((diff / n0 as f64, ties_x > 0 || ties_y > 0))
}

/// Sine-transformed Kendall matrix `sin(π τ̂ / 2)` and whether ties were seen.
#[derive(Debug, Clone, PartialEq)]
pub struct KendallMatrix {
    pub matrix: SymMatrix,
    pub ties_detected: bool,
}

pub fn kendall_tau_matrix(s: &RawSample) -> Result<KendallMatrix> {
    let d = s.dim();
    let cols: Vec<Vec<f64>> = (0..d).map(|j| s.column(j)).collect();
    for (j, c) in cols.iter().enumerate() {
        if c.iter().all(|&v| v == c[0]) {
            return Err(NptError::DegenerateMarginal { column: j });
        }
    }
    let mut m = DMatrix::identity(d, d);
    let mut ties = false;
    for j in 0..d {
        for k in (j + 1)..d {
            let (tau, t) = kendall_tau_a(&cols[j], &cols[k])?;
            ties |= t;
            let v = (0.5 * PI * tau).sin();
            m[(j, k)] = v;
            m[(k, j)] = v;
        }
    }
    Ok(KendallMatrix {
        matrix: SymMatrix::new(m)?,
        ties_detected: ties,
    })
}

/// A nonparanormal distribution: marginals plus latent correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct Nonparanormal {
    marginals: Vec<QuantileFunction>,
    latent: CorrelationMatrix,
}

impl Nonparanormal {
    pub fn new(marginals: Vec<QuantileFunction>, latent: CorrelationMatrix) -> Result<Self> {
        if marginals.is_empty() {
            return Err(NptError::validation("a nonparanormal needs at least one marginal"));
        }
        if latent.dim() != marginals.len() {
            return Err(NptError::DimensionMismatch {
                expected: marginals.len(),
                got: latent.dim(),
            });
        }
        let grid = marginals[0].grid();
        for (j, q) in marginals.iter().enumerate() {
            if q.grid() != grid {
                return Err(NptError::DimensionMismatch {
                    expected: grid.size(),
                    got: q.grid().size(),
                });
            }
            if !q.is_nondegenerate() {
                return Err(NptError::PointMassMarginal {
                    component: j,
                    value: q.values()[0],
                });
            }
        }
        Ok(Nonparanormal { marginals, latent })
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn grid(&self) -> QuantileGrid {
        self.marginals[0].grid()
    }

    pub fn marginals(&self) -> &[QuantileFunction] {
        &self.marginals
    }

    pub fn marginal(&self, j: usize) -> &QuantileFunction {
        &self.marginals[j]
    }

    pub fn latent(&self) -> &CorrelationMatrix {
        &self.latent
    }
}

/// Diagnostics collected while estimating a nonparanormal from raw data.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub distribution: Nonparanormal,
    pub ties_detected: bool,
    /// Whether the sine-Kendall matrix was indefinite and had to be repaired.
    pub repaired: bool,
}

/// Estimates marginals by empirical quantiles and the latent correlation by the
/// PSD-repaired sine-Kendall matrix.
pub fn estimate(s: &RawSample, grid: QuantileGrid) -> Result<Nonparanormal> {
    estimate_with_report(s, grid).map(|r| r.distribution)
}

pub fn estimate_with_report(s: &RawSample, grid: QuantileGrid) -> Result<EstimateReport> {
    let kendall = kendall_tau_matrix(s)?;
    let mut marginals = Vec::with_capacity(s.dim());
    for j in 0..s.dim() {
        let mut col = s.column(j);
        col.sort_by(f64::total_cmp);
        marginals.push(quantiles_of_sorted(&col, grid));
    }
    let (latent, repaired) = repair_correlation(kendall.matrix)?;
    Ok(EstimateReport {
        distribution: Nonparanormal::new(marginals, latent)?,
        ties_detected: kendall.ties_detected,
        repaired,
    })
}

/// Clips eigenvalues of an indefinite unit-diagonal matrix at
/// `KENDALL_REPAIR_FLOOR` and renormalizes to an exact unit diagonal.
fn repair_correlation(m: SymMatrix) -> Result<(CorrelationMatrix, bool)> {
    let eig = m.as_matrix().clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min >= -1e-12 {
        return Ok((CorrelationMatrix::from_matrix(m.into_matrix())?, false));
    }
    let clipped = eig.eigenvalues.map(|l| l.max(KENDALL_REPAIR_FLOOR));
    let v = &eig.eigenvectors;
    let rebuilt = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    let spd = SpdMatrix::new(SymMatrix::symmetrized(rebuilt))?;
    Ok((project_correlation(&spd, DEFAULT_EIGEN_FLOOR)?, true))
}

/// Per-component squared distances: marginal W2² for each j, and the BW² term.
pub fn npt_components(a: &Nonparanormal, b: &Nonparanormal) -> Result<(Vec<f64>, f64)> {
    if a.dim() != b.dim() {
        return Err(NptError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let marg = a
        .marginals
        .iter()
        .zip(&b.marginals)
        .map(|(x, y)| w2_sq(x, y))
        .collect::<Result<Vec<_>>>()?;
    let bw = bw_distance_sq(a.latent.as_spd(), b.latent.as_spd())?;
    Ok((marg, bw))
}

pub fn npt_distance(a: &Nonparanormal, b: &Nonparanormal) -> Result<f64> {
    let (marg, bw) = npt_components(a, b)?;
    Ok((marg.iter().sum::<f64>() + bw).sqrt())
}

/// Draws `n` rows `x_j = quantile(j, Φ(Z_j))` with `Z ~ N(0, latent)`.
pub fn sample_copula<R: Rng + ?Sized>(
    latent: &CorrelationMatrix,
    n: usize,
    eigen_floor: f64,
    rng: &mut R,
    quantile: impl Fn(usize, f64) -> f64,
) -> Result<RawSample> {
    let d = latent.dim();
    let min = latent.as_spd().min_eigenvalue();
    if min < eigen_floor {
        return Err(NptError::Singular {
            eigenvalue: min,
            floor: eigen_floor,
        });
    }
    let chol = Cholesky::new(latent.as_matrix().clone()).ok_or(NptError::Singular {
        eigenvalue: min,
        floor: eigen_floor,
    })?;
    let l = chol.l();
    let mut data = Vec::with_capacity(n * d);
    let mut eps = DVector::zeros(d);
    for _ in 0..n {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        let z = &l * &eps;
        for (j, &zj) in z.iter().enumerate() {
            data.push(quantile(j, phi(zj)));
        }
    }
    RawSample::new(d, data)
}

/// Samples from a nonparanormal, evaluating marginals by grid interpolation.
pub fn sample<R: Rng + ?Sized>(m: &Nonparanormal, n: usize, rng: &mut R) -> Result<RawSample> {
    sample_copula(&m.latent, n, DEFAULT_EIGEN_FLOOR, rng, |j, u| m.marginals[j].eval(u))
}
