//! Bures–Wasserstein geometry on covariance and correlation matrices.
//!
//! The BW distance between PSD matrices
//!
//! ```text
//! B(Σ, Q)² = Tr[Σ + Q − 2 (Σ^{1/2} Q Σ^{1/2})^{1/2}]
//! ```
//!
//! is the 2-Wasserstein distance between the centered Gaussians `N(0, Σ)` and
//! `N(0, Q)`. This module provides the distance, the Gaussian transport map,
//! the BW projection onto correlation matrices (symmetric normalization) and
//! weighted Fréchet mean solvers on both the correlation set and the full SPD
//! cone. Weighted means accept negative weights, as produced by the global
//! Fréchet regression weight function.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{NptError, Result};

/// Maximum tolerated asymmetry `|a_ij − a_ji|` for symmetric inputs.
pub const SYM_TOL: f64 = 1e-12;
/// Smallest eigenvalue still accepted as positive semidefinite.
pub const PSD_TOL: f64 = 1e-10;
pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-10;
/// Correlation used in place of ±1 when a bivariate solution sits on the boundary.
pub const BOUNDARY_CLAMP: f64 = 1.0 - 1e-8;

/// Dense symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(NptError::validation(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(NptError::validation("matrix has non-finite entries"));
        }
        let d = m.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                let gap = (m[(i, j)] - m[(j, i)]).abs();
                if gap > SYM_TOL {
                    return Err(NptError::validation(format!(
                        "matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {gap:e}"
                    )));
                }
            }
        }
        Ok(SymMatrix(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(NptError::validation("matrix rows must all have length d"));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    /// Averages `m` with its transpose; used for matrices produced by arithmetic
    /// that is symmetric up to rounding.
    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(d: usize) -> Self {
        SymMatrix(DMatrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Symmetric positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    base: SymMatrix,
    min_eig: f64,
}

impl SpdMatrix {
    pub fn new(base: SymMatrix) -> Result<Self> {
        let min_eig = base.min_eigenvalue();
        if min_eig < -PSD_TOL {
            return Err(NptError::validation(format!(
                "matrix is indefinite: smallest eigenvalue {min_eig:e}"
            )));
        }
        Ok(SpdMatrix { base, min_eig })
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        Self::new(SymMatrix::new(m)?)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(SymMatrix::from_rows(rows)?)
    }

    pub fn identity(d: usize) -> Self {
        SpdMatrix {
            base: SymMatrix::identity(d),
            min_eig: 1.0,
        }
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        Self::from_matrix(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(values)))
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.base
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.base.as_matrix()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.base.to_rows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eig
    }

    pub fn is_strictly_pd(&self, eigen_floor: f64) -> bool {
        self.min_eig >= eigen_floor
    }
}

/// Correlation matrix: PSD with an exact unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    base: SpdMatrix,
}

impl CorrelationMatrix {
    pub fn new(base: SpdMatrix) -> Result<Self> {
        let m = base.as_matrix();
        let d = m.nrows();
        for i in 0..d {
            if m[(i, i)] != 1.0 {
                return Err(NptError::validation(format!(
                    "correlation matrix diagonal entry {i} is {} (must be exactly 1)",
                    m[(i, i)]
                )));
            }
            for j in 0..d {
                if m[(i, j)].abs() > 1.0 {
                    return Err(NptError::validation(format!(
                        "correlation entry ({i}, {j}) = {} lies outside [-1, 1]",
                        m[(i, j)]
                    )));
                }
            }
        }
        Ok(CorrelationMatrix { base })
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        Self::new(SpdMatrix::from_matrix(m)?)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(SpdMatrix::from_rows(rows)?)
    }

    pub fn identity(d: usize) -> Self {
        CorrelationMatrix {
            base: SpdMatrix::identity(d),
        }
    }

    /// The 2×2 correlation matrix `[[1, ρ], [ρ, 1]]`.
    pub fn bivariate(rho: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&rho) {
            return Err(NptError::validation(format!("correlation {rho} outside [-1, 1]")));
        }
        Self::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]))
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn as_spd(&self) -> &SpdMatrix {
        &self.base
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.base.as_matrix()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.base.to_rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.as_matrix()[(i, j)]
    }
}

/// Settings for the Riemannian gradient descent solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub step: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub eigen_floor: f64,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig {
            step: 1.0,
            max_iter: 100,
            tol: 1e-10,
            eigen_floor: DEFAULT_EIGEN_FLOOR,
        }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.tol > 0.0) || self.max_iter == 0 || !(self.eigen_floor >= 0.0)
        {
            return Err(NptError::validation(format!(
                "invalid solver config: step={}, tol={}, max_iter={}, eigen_floor={}",
                self.step, self.tol, self.max_iter, self.eigen_floor
            )));
        }
        Ok(())
    }
}

/// Output of a Fréchet mean solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FrechetSolution<T> {
    pub estimate: T,
    pub iterations: usize,
    pub converged: bool,
    /// Frobenius norm of `I − Σ w_i T_S^{S_i}` at the last evaluated iterate.
    pub grad_norm: f64,
    /// Set when the averaged transport `Σ w_i T` failed to be positive definite,
    /// which happens when the minimizer lies on the boundary of the domain.
    pub boundary: bool,
}

fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let fl = f(lam);
        scaled.column_mut(j).scale_mut(fl);
    }
    let out = scaled * v.transpose();
    let t = out.transpose();
    (out + t) * 0.5
}

/// Principal square root of a PSD matrix (eigenvalues clamped at zero).
pub fn mat_sqrt(a: &SpdMatrix) -> SpdMatrix {
    let r = spectral_map(a.as_matrix(), |l| l.max(0.0).sqrt());
    let min_eig = a.min_eigenvalue().max(0.0).sqrt();
    SpdMatrix {
        base: SymMatrix(r),
        min_eig,
    }
}

fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(NptError::DimensionMismatch {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

fn trace_sqrt_product(sqrt_a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let inner = sqrt_a * b * sqrt_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    inner
        .symmetric_eigenvalues()
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum()
}

/// Squared Bures–Wasserstein distance, clamped at zero.
pub fn bw_distance_sq(sigma: &SpdMatrix, q: &SpdMatrix) -> Result<f64> {
    check_same_dim(sigma.dim(), q.dim())?;
    let root = mat_sqrt(sigma);
    let cross = trace_sqrt_product(root.as_matrix(), q.as_matrix());
    let val = sigma.as_matrix().trace() + q.as_matrix().trace() - 2.0 * cross;
    Ok(val.max(0.0))
}

pub fn bw_distance(sigma: &SpdMatrix, q: &SpdMatrix) -> Result<f64> {
    bw_distance_sq(sigma, q).map(f64::sqrt)
}

/// Cached square root and inverse square root of a base point, so that
/// transport maps to many targets share one eigendecomposition.
struct TransportBase {
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
}

impl TransportBase {
    fn new(sigma: &DMatrix<f64>, eigen_floor: f64) -> Result<Self> {
        let eig = SymmetricEigen::new(sigma.clone());
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min >= eigen_floor) || min <= 0.0 {
            return Err(NptError::Singular {
                eigenvalue: min,
                floor: eigen_floor,
            });
        }
        let v = &eig.eigenvectors;
        let mut s = v.clone();
        let mut si = v.clone();
        for (j, &lam) in eig.eigenvalues.iter().enumerate() {
            let r = lam.sqrt();
            s.column_mut(j).scale_mut(r);
            si.column_mut(j).scale_mut(1.0 / r);
        }
        let sqrt = s * v.transpose();
        let inv_sqrt = si * v.transpose();
        Ok(TransportBase {
            sqrt: (&sqrt + sqrt.transpose()) * 0.5,
            inv_sqrt: (&inv_sqrt + inv_sqrt.transpose()) * 0.5,
        })
    }

    fn transport_to(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let inner = &self.sqrt * q * &self.sqrt;
        let inner = (&inner + inner.transpose()) * 0.5;
        let root = spectral_map(&inner, |l| l.max(0.0).sqrt());
        let t = &self.inv_sqrt * root * &self.inv_sqrt;
        (&t + t.transpose()) * 0.5
    }
}

/// Optimal transport matrix `T` pushing `N(0, Σ)` onto `N(0, Q)`, i.e. `T Σ T = Q`.
pub fn bw_transport(sigma: &SpdMatrix, q: &SpdMatrix, eigen_floor: f64) -> Result<SymMatrix> {
    check_same_dim(sigma.dim(), q.dim())?;
    let base = TransportBase::new(sigma.as_matrix(), eigen_floor)?;
    Ok(SymMatrix(base.transport_to(q.as_matrix())))
}

/// BW projection onto correlation matrices: `D(Σ)^{-1/2} Σ D(Σ)^{-1/2}`.
pub fn project_correlation(sigma: &SpdMatrix, eigen_floor: f64) -> Result<CorrelationMatrix> {
    project_matrix(sigma.as_matrix(), eigen_floor)
}

fn project_matrix(m: &DMatrix<f64>, eigen_floor: f64) -> Result<CorrelationMatrix> {
    let d = m.nrows();
    let mut scale = Vec::with_capacity(d);
    for i in 0..d {
        let v = m[(i, i)];
        if !(v > eigen_floor) {
            return Err(NptError::DegenerateScale { index: i, value: v });
        }
        scale.push(1.0 / v.sqrt());
    }
    let mut out = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            1.0
        } else {
            (m[(i, j)] * scale[i] * scale[j]).clamp(-1.0, 1.0)
        }
    });
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    let base = SymMatrix(out);
    let min_eig = base.min_eigenvalue();
    Ok(CorrelationMatrix {
        base: SpdMatrix {
            base,
            min_eig,
        },
    })
}

/// Weighted objective `Σ w_i B²(S_i, S)`.
pub fn frechet_objective<'a, I>(mats: I, weights: &[f64], s: &SpdMatrix) -> Result<f64>
where
    I: IntoIterator<Item = &'a SpdMatrix>,
{
    let root = mat_sqrt(s);
    let tr_s = s.as_matrix().trace();
    let mut total = 0.0;
    let mut count = 0;
    for (m, &w) in mats.into_iter().zip(weights) {
        check_same_dim(s.dim(), m.dim())?;
        let b2 = (tr_s + m.as_matrix().trace() - 2.0 * trace_sqrt_product(root.as_matrix(), m.as_matrix()))
            .max(0.0);
        total += w * b2;
        count += 1;
    }
    if count != weights.len() {
        return Err(NptError::DimensionMismatch {
            expected: weights.len(),
            got: count,
        });
    }
    Ok(total)
}

fn check_weights(n_mats: usize, weights: &[f64]) -> Result<()> {
    if n_mats == 0 {
        return Err(NptError::validation("at least one matrix is required"));
    }
    if weights.len() != n_mats {
        return Err(NptError::DimensionMismatch {
            expected: n_mats,
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(NptError::validation("weights must be finite"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(NptError::validation(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Riemannian gradient descent on the BW manifold, started from the first
/// input matrix. With `project` set, every iterate is mapped back onto the
/// correlation set by symmetric normalization.
fn riemannian_descent(
    mats: &[&SpdMatrix],
    weights: &[f64],
    cfg: &GdConfig,
    project: bool,
) -> Result<(DMatrix<f64>, usize, bool, f64, bool)> {
    cfg.validate()?;
    check_weights(mats.len(), weights)?;
    let d = mats[0].dim();
    for m in mats {
        check_same_dim(d, m.dim())?;
    }
    let ident = DMatrix::<f64>::identity(d, d);
    let mut s = mats[0].as_matrix().clone();
    let mut grad_norm = f64::NAN;
    let mut boundary = false;
    let mut converged = false;
    let mut iterations = 0;

    for t in 1..=cfg.max_iter {
        iterations = t;
        let base = TransportBase::new(&s, cfg.eigen_floor).map_err(|e| NptError::Optimization {
            iteration: t,
            reason: format!("iterate lost positive definiteness ({e})"),
        })?;
        let mut avg = DMatrix::<f64>::zeros(d, d);
        for (m, &w) in mats.iter().zip(weights) {
            if w != 0.0 {
                avg += base.transport_to(m.as_matrix()) * w;
            }
        }
        let euclid_grad = &ident - &avg;
        grad_norm = euclid_grad.norm();
        let g = &ident - euclid_grad * cfg.step;
        if g.clone().symmetric_eigenvalues().iter().any(|&l| l <= 0.0) {
            boundary = true;
        }
        let next = &g * &s * &g;
        let next = (&next + next.transpose()) * 0.5;
        let next = if project {
            project_matrix(&next, cfg.eigen_floor)
                .map_err(|e| NptError::Optimization {
                    iteration: t,
                    reason: format!("projection failed ({e})"),
                })?
                .as_matrix()
                .clone()
        } else {
            next
        };
        let change = (&next - &s).norm();
        s = next;
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok((s, iterations, converged, grad_norm, boundary))
}

/// Weighted Fréchet mean of correlation matrices under the BW metric, by
/// projected Riemannian gradient descent.
pub fn fit_correlation_frechet(
    mats: &[CorrelationMatrix],
    weights: &[f64],
    cfg: &GdConfig,
) -> Result<FrechetSolution<CorrelationMatrix>> {
    let refs: Vec<&SpdMatrix> = mats.iter().map(|m| m.as_spd()).collect();
    let (s, iterations, converged, grad_norm, boundary) = riemannian_descent(&refs, weights, cfg, true)?;
    let estimate = project_matrix(&s, cfg.eigen_floor)?;
    Ok(FrechetSolution {
        estimate,
        iterations,
        converged,
        grad_norm,
        boundary,
    })
}

/// Weighted BW barycenter on the full SPD cone (no unit-diagonal constraint).
pub fn fit_covariance_frechet(
    mats: &[SpdMatrix],
    weights: &[f64],
    cfg: &GdConfig,
) -> Result<FrechetSolution<SpdMatrix>> {
    let refs: Vec<&SpdMatrix> = mats.iter().collect();
    let (s, iterations, converged, grad_norm, boundary) = riemannian_descent(&refs, weights, cfg, false)?;
    let base = SymMatrix::symmetrized(s);
    let min_eig = base.min_eigenvalue();
    Ok(FrechetSolution {
        estimate: SpdMatrix { base, min_eig },
        iterations,
        converged,
        grad_norm,
        boundary,
    })
}

/// The `A` and `D` coefficients of the bivariate objective
/// `F(ρ) = 4 − 2A√(1+ρ) − 2D√(1−ρ)`.
pub fn bivariate_coefficients(rhos: &[f64], weights: &[f64]) -> Result<(f64, f64)> {
    if rhos.len() != weights.len() {
        return Err(NptError::DimensionMismatch {
            expected: rhos.len(),
            got: weights.len(),
        });
    }
    if rhos.is_empty() {
        return Err(NptError::validation("at least one correlation is required"));
    }
    let mut a = 0.0;
    let mut d = 0.0;
    for (&r, &w) in rhos.iter().zip(weights) {
        if !(r > -1.0 && r < 1.0) {
            return Err(NptError::validation(format!("correlation {r} must lie in (-1, 1)")));
        }
        a += w * (1.0 + r).sqrt();
        d += w * (1.0 - r).sqrt();
    }
    Ok((a, d))
}

/// Closed-form weighted BW Fréchet mean of bivariate correlations,
/// `(A² − D²) / (A² + D²)`. Fails when `A ≤ 0` or `D ≤ 0`.
pub fn bivariate_closed_form(rhos: &[f64], weights: &[f64]) -> Result<f64> {
    let (a, d) = bivariate_coefficients(rhos, weights)?;
    if a <= 0.0 || d <= 0.0 {
        return Err(NptError::BoundarySolution { a, d });
    }
    Ok((a * a - d * d) / (a * a + d * d))
}

/// Boundary correlation minimizing the bivariate objective when `A ≤ 0` or `D ≤ 0`,
/// clamped to `±BOUNDARY_CLAMP`.
pub fn bivariate_boundary_rho(a: f64, d: f64) -> f64 {
    // F(1) = 4 − 2√2·A and F(−1) = 4 − 2√2·D; the larger coefficient wins.
    if a >= d {
        BOUNDARY_CLAMP
    } else {
        -BOUNDARY_CLAMP
    }
}

/// Closed form with boundary clamping. The flag reports whether clamping happened.
pub fn bivariate_closed_form_clamped(rhos: &[f64], weights: &[f64]) -> Result<(f64, bool)> {
    match bivariate_closed_form(rhos, weights) {
        Ok(r) => Ok((r, false)),
        Err(NptError::BoundarySolution { a, d }) => Ok((bivariate_boundary_rho(a, d), true)),
        Err(e) => Err(e),
    }
}

/// Isometric embedding of 2×2 correlation matrices onto a quarter circle of radius √2.
pub fn sphere_embed_bivariate(rho: f64) -> (f64, f64) {
    let r = rho.clamp(-1.0, 1.0);
    ((1.0 + r).sqrt(), (1.0 - r).sqrt())
}
