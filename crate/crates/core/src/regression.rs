//! Global Fréchet regression of nonparanormal responses on Euclidean predictors.
//!
//! The NPT objective decouples: each marginal is fitted by a weighted
//! quantile average followed by isotonic projection, and the latent
//! correlation by a weighted BW barycenter. Weights come from the global
//! (linear) Fréchet weight function
//!
//! ```text
//! s_n(Z_i, z) = 1 + (Z_i − Z̄)ᵀ ĉov(Z)^{-1} (z − Z̄)
//! ```
//!
//! Two baselines share the same machinery: `Marginal` pins the latent fit to
//! the identity, `Gaussian` treats every response as a multivariate Gaussian.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bw_geometry::{
    bivariate_boundary_rho, bivariate_coefficients, bw_distance_sq, fit_correlation_frechet,
    fit_covariance_frechet, project_correlation, CorrelationMatrix, GdConfig, SpdMatrix, SymMatrix,
};
use crate::error::{NptError, Result};
use crate::nonparanormal::{estimate, phi_inv, Nonparanormal, RawSample};
use crate::quantile_space::{isotonic_project, w2_sq, weighted_mean, QuantileFunction, QuantileGrid, Support};
use crate::substream;

/// Largest accepted condition number of the (ridged) predictor covariance.
pub const MAX_CONDITION: f64 = 1e12;

/// Predictor matrix with its mean and inverse covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorTable {
    rows: Vec<Vec<f64>>,
    zbar: Vec<f64>,
    cov_inv: DMatrix<f64>,
    ridge: f64,
}

impl PredictorTable {
    pub fn new(rows: Vec<Vec<f64>>, ridge: f64) -> Result<Self> {
        let (n, p) = check_rows(&rows)?;
        if !(ridge >= 0.0) || !ridge.is_finite() {
            return Err(NptError::validation(format!("ridge must be a nonnegative number, got {ridge}")));
        }
        let mut zbar = vec![0.0; p];
        for r in &rows {
            for (m, v) in zbar.iter_mut().zip(r) {
                *m += v;
            }
        }
        zbar.iter_mut().for_each(|m| *m /= n as f64);

        let mut cov = DMatrix::<f64>::zeros(p, p);
        for r in &rows {
            let c = DVector::from_iterator(p, r.iter().zip(&zbar).map(|(v, m)| v - m));
            cov += &c * c.transpose();
        }
        cov /= n as f64;
        for k in 0..p {
            cov[(k, k)] += ridge;
        }
        let eig = SymmetricEigen::new(cov);
        let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(condition < MAX_CONDITION) {
            return Err(NptError::SingularPredictors { condition });
        }
        let v = &eig.eigenvectors;
        let inv = v * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l)) * v.transpose();
        let cov_inv = (&inv + inv.transpose()) * 0.5;
        Ok(PredictorTable {
            rows,
            zbar,
            cov_inv,
            ridge,
        })
    }

    /// Rebuilds a table from stored summaries without recomputing them.
    pub fn from_parts(rows: Vec<Vec<f64>>, zbar: Vec<f64>, cov_inv: Vec<Vec<f64>>, ridge: f64) -> Result<Self> {
        let (_, p) = check_rows(&rows)?;
        if zbar.len() != p || cov_inv.len() != p || cov_inv.iter().any(|r| r.len() != p) {
            return Err(NptError::validation("predictor summary dimensions do not match"));
        }
        let cov_inv = DMatrix::from_fn(p, p, |i, j| cov_inv[i][j]);
        Ok(PredictorTable {
            rows,
            zbar,
            cov_inv,
            ridge,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn p(&self) -> usize {
        self.zbar.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn mean(&self) -> &[f64] {
        &self.zbar
    }

    pub fn cov_inv(&self) -> Vec<Vec<f64>> {
        self.cov_inv.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Global Fréchet regression weights `s_n(Z_i, z)` for every subject.
    pub fn weights_at(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.p() {
            return Err(NptError::DimensionMismatch {
                expected: self.p(),
                got: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(NptError::validation("evaluation point must be finite"));
        }
        let dz = DVector::from_iterator(self.p(), z.iter().zip(&self.zbar).map(|(a, b)| a - b));
        let v = &self.cov_inv * dz;
        Ok(self
            .rows
            .iter()
            .map(|r| {
                let dot: f64 = r.iter().zip(&self.zbar).zip(v.iter()).map(|((a, m), c)| (a - m) * c).sum();
                1.0 + dot
            })
            .collect())
    }

    /// Reassigns predictor rows: subject `i` receives row `perm[i]`. Mean and
    /// covariance are permutation invariant and are reused as-is.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n() {
            return Err(NptError::DimensionMismatch {
                expected: self.n(),
                got: perm.len(),
            });
        }
        let mut seen = vec![false; self.n()];
        for &k in perm {
            if k >= self.n() || std::mem::replace(&mut seen[k], true) {
                return Err(NptError::validation("not a permutation"));
            }
        }
        Ok(PredictorTable {
            rows: perm.iter().map(|&k| self.rows[k].clone()).collect(),
            zbar: self.zbar.clone(),
            cov_inv: self.cov_inv.clone(),
            ridge: self.ridge,
        })
    }
}

fn check_rows(rows: &[Vec<f64>]) -> Result<(usize, usize)> {
    let n = rows.len();
    if n < 2 {
        return Err(NptError::validation(format!("need at least 2 subjects, got {n}")));
    }
    let p = rows[0].len();
    if p == 0 {
        return Err(NptError::validation("predictors must have at least one column"));
    }
    if rows.iter().any(|r| r.len() != p) {
        return Err(NptError::validation("predictor rows have unequal lengths"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(NptError::validation("predictors must be finite"));
    }
    Ok((n, p))
}

/// First two moments of one response, used by the Gaussian baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: Vec<f64>,
    pub cov: SpdMatrix,
}

impl GaussianSummary {
    pub fn from_sample(s: &RawSample) -> Result<Self> {
        let cov = SpdMatrix::new(SymMatrix::new(s.covariance())?)?;
        Ok(GaussianSummary {
            mean: s.column_means(),
            cov,
        })
    }
}

/// Paired predictors and distributional responses.
#[derive(Debug, Clone)]
pub struct DistributionalDataset {
    predictors: PredictorTable,
    responses: Arc<[Nonparanormal]>,
    gaussian: Option<Arc<[GaussianSummary]>>,
}

impl DistributionalDataset {
    pub fn new(predictors: PredictorTable, responses: Vec<Nonparanormal>) -> Result<Self> {
        if predictors.n() != responses.len() {
            return Err(NptError::DimensionMismatch {
                expected: predictors.n(),
                got: responses.len(),
            });
        }
        let d = responses[0].dim();
        let grid = responses[0].grid();
        for (i, r) in responses.iter().enumerate() {
            if r.dim() != d || r.grid() != grid {
                return Err(NptError::validation("responses must share dimension and grid").at_subject(i));
            }
        }
        Ok(DistributionalDataset {
            predictors,
            responses: responses.into(),
            gaussian: None,
        })
    }

    pub fn with_gaussian(mut self, summaries: Vec<GaussianSummary>) -> Result<Self> {
        if summaries.len() != self.responses.len() {
            return Err(NptError::DimensionMismatch {
                expected: self.responses.len(),
                got: summaries.len(),
            });
        }
        if let Some(i) = summaries.iter().position(|g| g.mean.len() != self.dim()) {
            return Err(NptError::validation("Gaussian summary has the wrong dimension").at_subject(i));
        }
        self.gaussian = Some(summaries.into());
        Ok(self)
    }

    /// Estimates one nonparanormal response (and its Gaussian moments) per sample.
    pub fn from_samples(predictors: PredictorTable, samples: &[RawSample], grid: QuantileGrid) -> Result<Self> {
        let per_subject: Vec<(Nonparanormal, GaussianSummary)> = samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let np = estimate(s, grid).map_err(|e| e.at_subject(i))?;
                let g = GaussianSummary::from_sample(s).map_err(|e| e.at_subject(i))?;
                Ok((np, g))
            })
            .collect::<Result<Vec<_>>>()?;
        let (responses, gaussian): (Vec<_>, Vec<_>) = per_subject.into_iter().unzip();
        Self::new(predictors, responses)?.with_gaussian(gaussian)
    }

    pub fn predictors(&self) -> &PredictorTable {
        &self.predictors
    }

    pub fn responses(&self) -> &[Nonparanormal] {
        &self.responses
    }

    pub fn gaussian(&self) -> Option<&[GaussianSummary]> {
        self.gaussian.as_deref()
    }

    pub fn n(&self) -> usize {
        self.responses.len()
    }

    pub fn dim(&self) -> usize {
        self.responses[0].dim()
    }

    pub fn grid(&self) -> QuantileGrid {
        self.responses[0].grid()
    }

    fn with_predictors(&self, predictors: PredictorTable) -> Self {
        DistributionalDataset {
            predictors,
            responses: Arc::clone(&self.responses),
            gaussian: self.gaussian.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Npt,
    Marginal,
    Gaussian,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Npt, Method::Marginal, Method::Gaussian];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Npt => "npt",
            Method::Marginal => "marginal",
            Method::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = NptError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "npt" => Ok(Method::Npt),
            "marginal" => Ok(Method::Marginal),
            "gaussian" => Ok(Method::Gaussian),
            other => Err(NptError::validation(format!(
                "unknown method '{other}' (expected npt, marginal or gaussian)"
            ))),
        }
    }
}

/// Convergence details of the latent correlation solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSolve {
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub boundary: bool,
}

impl LatentSolve {
    fn trivial() -> Self {
        LatentSolve {
            iterations: 0,
            converged: true,
            grad_norm: 0.0,
            boundary: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub distribution: Nonparanormal,
    pub latent_solve: LatentSolve,
    pub warnings: Vec<String>,
}

/// A fitted regression, able to predict at any predictor value.
#[derive(Debug, Clone)]
pub struct NptFit {
    data: DistributionalDataset,
    cfg: GdConfig,
    method: Method,
    supports: Vec<Option<Support>>,
    mean_fit: Prediction,
}

pub fn fit(ds: &DistributionalDataset, cfg: &GdConfig, method: Method) -> Result<NptFit> {
    fit_with_supports(ds, cfg, method, vec![None; ds.dim()])
}

/// Fits with per-marginal support constraints applied after isotonic projection.
pub fn fit_with_supports(
    ds: &DistributionalDataset,
    cfg: &GdConfig,
    method: Method,
    supports: Vec<Option<Support>>,
) -> Result<NptFit> {
    cfg.validate()?;
    if supports.len() != ds.dim() {
        return Err(NptError::DimensionMismatch {
            expected: ds.dim(),
            got: supports.len(),
        });
    }
    if method == Method::Gaussian && ds.gaussian.is_none() {
        return Err(NptError::validation(
            "the Gaussian baseline needs per-response means and covariances",
        ));
    }
    let zbar = ds.predictors.mean().to_vec();
    let mean_fit = predict_impl(ds, cfg, method, &supports, &zbar)?;
    Ok(NptFit {
        data: ds.clone(),
        cfg: *cfg,
        method,
        supports,
        mean_fit,
    })
}

impl NptFit {
    pub fn dataset(&self) -> &DistributionalDataset {
        &self.data
    }

    pub fn config(&self) -> &GdConfig {
        &self.cfg
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn supports(&self) -> &[Option<Support>] {
        &self.supports
    }

    /// The fit at the predictor mean, computed once at construction.
    pub fn mean_fit(&self) -> &Prediction {
        &self.mean_fit
    }

    pub fn predict(&self, z: &[f64]) -> Result<Prediction> {
        predict_impl(&self.data, &self.cfg, self.method, &self.supports, z)
    }

    fn refit(&self, predictors: PredictorTable) -> NptFit {
        // The predictor mean is permutation invariant, so the mean fit carries over.
        NptFit {
            data: self.data.with_predictors(predictors),
            cfg: self.cfg,
            method: self.method,
            supports: self.supports.clone(),
            mean_fit: self.mean_fit.clone(),
        }
    }

    /// Component-wise and global generalized R².
    pub fn r2_components(&self) -> Result<R2Report> {
        let d = self.data.dim();
        let n = self.data.n();
        let residuals: Vec<(Vec<f64>, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let pred = self.predict(self.data.predictors.row(i)).map_err(|e| e.at_subject(i))?;
                residual(&self.data.responses[i], &pred.distribution)
            })
            .collect::<Result<Vec<_>>>()?;
        let null: Vec<(Vec<f64>, f64)> = self
            .data
            .responses
            .iter()
            .map(|r| residual(r, &self.mean_fit.distribution))
            .collect::<Result<Vec<_>>>()?;

        let mut num = vec![0.0; d + 1];
        let mut den = vec![0.0; d + 1];
        for ((rm, rb), (nm, nb)) in residuals.iter().zip(&null) {
            for j in 0..d {
                num[j] += rm[j];
                den[j] += nm[j];
            }
            num[d] += rb;
            den[d] += nb;
        }
        let mut marginal = Vec::with_capacity(d);
        for j in 0..d {
            if !(den[j] > 0.0) {
                return Err(NptError::DegenerateVariance {
                    component: format!("marginal {}", j + 1),
                });
            }
            marginal.push(1.0 - num[j] / den[j]);
        }
        let latent = if d >= 2 {
            if !(den[d] > 0.0) {
                return Err(NptError::DegenerateVariance {
                    component: "latent correlation".into(),
                });
            }
            Some(1.0 - num[d] / den[d])
        } else {
            None
        };
        let total_num: f64 = num.iter().sum();
        let total_den: f64 = den.iter().sum();
        Ok(R2Report {
            marginal,
            latent,
            global: 1.0 - total_num / total_den,
            inference: None,
        })
    }

    /// Permutation test of "no predictor effect" per component, with
    /// Westfall–Young min-p adjustment across components.
    pub fn permutation_test(&self, replicates: usize, seed: u64) -> Result<R2Report> {
        if replicates == 0 {
            return Err(NptError::validation("at least one permutation replicate is required"));
        }
        let n = self.data.n();
        let perms: Vec<Vec<usize>> = (0..replicates)
            .map(|b| {
                let mut rng = substream(seed, b as u64);
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng);
                perm
            })
            .collect();
        self.permutation_test_with(&perms)
    }

    /// Permutation test over an explicit list of predictor permutations.
    pub fn permutation_test_with(&self, perms: &[Vec<usize>]) -> Result<R2Report> {
        let observed = self.r2_components()?;
        let obs = observed.components();
        let outcomes: Vec<Result<Vec<f64>>> = perms
            .par_iter()
            .map(|perm| {
                let table = self.data.predictors.permuted(perm)?;
                self.refit(table).r2_components().map(|r| r.components())
            })
            .collect();
        let total = outcomes.len();
        let null: Vec<Vec<f64>> = outcomes.into_iter().filter_map(|r| r.ok()).collect();
        let failed = total - null.len();
        if failed * 10 > total || null.is_empty() {
            return Err(NptError::TooManyFailures { failed, total });
        }
        let (raw, adjusted) = westfall_young(&obs, &null);
        Ok(R2Report {
            inference: Some(PermutationInference {
                raw_p: raw,
                adjusted_p: adjusted,
                replicates: null.len(),
                failed_replicates: failed,
            }),
            ..observed
        })
    }
}

/// Single-step min-p adjustment. The observed statistic and the null
/// replicates form one exchangeable reference set, so every p-value lies in
/// `[1/(B+1), 1]`.
pub fn westfall_young(observed: &[f64], null: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let b = null.len();
    let denom = (b + 1) as f64;
    let k = observed.len();
    let raw: Vec<f64> = (0..k)
        .map(|j| (1 + null.iter().filter(|r| r[j] >= observed[j]).count()) as f64 / denom)
        .collect();
    let min_p: Vec<f64> = (0..b)
        .map(|bi| {
            (0..k)
                .map(|j| {
                    let stat = null[bi][j];
                    let others = null
                        .iter()
                        .enumerate()
                        .filter(|&(bo, r)| bo != bi && r[j] >= stat)
                        .count();
                    let with_obs = usize::from(observed[j] >= stat);
                    (1 + others + with_obs) as f64 / denom
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let adjusted = raw
        .iter()
        .map(|&p| ((1 + min_p.iter().filter(|&&m| m <= p).count()) as f64 / denom).min(1.0))
        .collect();
    (raw, adjusted)
}

fn residual(obs: &Nonparanormal, fitted: &Nonparanormal) -> Result<(Vec<f64>, f64)> {
    let marg = obs
        .marginals()
        .iter()
        .zip(fitted.marginals())
        .map(|(a, b)| w2_sq(a, b))
        .collect::<Result<Vec<_>>>()?;
    let bw = bw_distance_sq(obs.latent().as_spd(), fitted.latent().as_spd())?;
    Ok((marg, bw))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationInference {
    /// One entry per component, marginals first, then the latent correlation.
    pub raw_p: Vec<f64>,
    pub adjusted_p: Vec<f64>,
    pub replicates: usize,
    pub failed_replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Report {
    pub marginal: Vec<f64>,
    /// Absent for univariate responses, where the latent part is trivial.
    pub latent: Option<f64>,
    pub global: f64,
    pub inference: Option<PermutationInference>,
}

impl R2Report {
    /// Tested components in order: marginals, then the latent correlation.
    pub fn components(&self) -> Vec<f64> {
        let mut v = self.marginal.clone();
        v.extend(self.latent);
        v
    }
}

fn predict_impl(
    ds: &DistributionalDataset,
    cfg: &GdConfig,
    method: Method,
    supports: &[Option<Support>],
    z: &[f64],
) -> Result<Prediction> {
    let n = ds.n() as f64;
    let w: Vec<f64> = ds.predictors.weights_at(z)?.into_iter().map(|s| s / n).collect();
    let d = ds.dim();
    let grid = ds.grid();
    let mut warnings = Vec::new();

    let (marginals, latent, latent_solve) = match method {
        Method::Npt | Method::Marginal => {
            let marginals = fit_marginals(ds, &w, supports)?;
            if method == Method::Marginal {
                (marginals, CorrelationMatrix::identity(d), LatentSolve::trivial())
            } else {
                let lats: Vec<CorrelationMatrix> = ds.responses.iter().map(|r| r.latent().clone()).collect();
                let (latent, solve) = solve_latent(&lats, &w, cfg, &mut warnings)?;
                (marginals, latent, solve)
            }
        }
        Method::Gaussian => {
            let gs = ds.gaussian.as_deref().ok_or_else(|| {
                NptError::validation("the Gaussian baseline needs per-response means and covariances")
            })?;
            let mut mean = vec![0.0; d];
            for (g, &wi) in gs.iter().zip(&w) {
                for (m, v) in mean.iter_mut().zip(&g.mean) {
                    *m += wi * v;
                }
            }
            let covs: Vec<SpdMatrix> = gs.iter().map(|g| g.cov.clone()).collect();
            let sol = fit_covariance_frechet(&covs, &w, cfg)?;
            if sol.boundary {
                warnings.push("averaged covariance transport is not positive definite".to_string());
            }
            if !sol.converged {
                warnings.push(format!("covariance solve did not converge in {} iterations", sol.iterations));
            }
            let cov = sol.estimate.as_matrix();
            let mut marginals = Vec::with_capacity(d);
            for j in 0..d {
                let sd = cov[(j, j)].max(0.0).sqrt();
                let q = QuantileFunction::from_fn(grid, |p| mean[j] + sd * phi_inv(p).unwrap_or(0.0))?;
                if !q.is_nondegenerate() {
                    return Err(NptError::PointMassMarginal {
                        component: j,
                        value: mean[j],
                    });
                }
                marginals.push(q);
            }
            let latent = project_correlation(&sol.estimate, cfg.eigen_floor)?;
            let solve = LatentSolve {
                iterations: sol.iterations,
                converged: sol.converged,
                grad_norm: sol.grad_norm,
                boundary: sol.boundary,
            };
            (marginals, latent, solve)
        }
    };
    Ok(Prediction {
        distribution: Nonparanormal::new(marginals, latent)?,
        latent_solve,
        warnings,
    })
}

fn fit_marginals(
    ds: &DistributionalDataset,
    w: &[f64],
    supports: &[Option<Support>],
) -> Result<Vec<QuantileFunction>> {
    (0..ds.dim())
        .map(|j| {
            let qs: Vec<&QuantileFunction> = ds.responses.iter().map(|r| r.marginal(j)).collect();
            let avg = weighted_mean(&qs, w)?;
            let q = isotonic_project(&avg, supports[j])?;
            if !q.is_nondegenerate() {
                return Err(NptError::PointMassMarginal {
                    component: j,
                    value: q.values()[0],
                });
            }
            Ok(q)
        })
        .collect()
}

fn solve_latent(
    lats: &[CorrelationMatrix],
    w: &[f64],
    cfg: &GdConfig,
    warnings: &mut Vec<String>,
) -> Result<(CorrelationMatrix, LatentSolve)> {
    let d = lats[0].dim();
    if d == 1 {
        return Ok((CorrelationMatrix::identity(1), LatentSolve::trivial()));
    }
    if d == 2 {
        let rhos: Vec<f64> = lats.iter().map(|s| s.get(0, 1)).collect();
        if rhos.iter().all(|r| r.abs() < 1.0) {
            let (a, dd) = bivariate_coefficients(&rhos, w)?;
            if a <= 0.0 || dd <= 0.0 {
                let rho = bivariate_boundary_rho(a, dd);
                warnings.push(format!(
                    "boundary correlation: A = {a:e}, D = {dd:e}; latent clamped to rho = {rho}"
                ));
                let solve = LatentSolve {
                    boundary: true,
                    ..LatentSolve::trivial()
                };
                return Ok((CorrelationMatrix::bivariate(rho)?, solve));
            }
        }
    }
    let sol = fit_correlation_frechet(lats, w, cfg)?;
    if sol.boundary {
        warnings.push("averaged transport is not positive definite; the latent fit may sit on the boundary".into());
    }
    if !sol.converged {
        warnings.push(format!("latent solve did not converge in {} iterations", sol.iterations));
    }
    let solve = LatentSolve {
        iterations: sol.iterations,
        converged: sol.converged,
        grad_norm: sol.grad_norm,
        boundary: sol.boundary,
    };
    Ok((sol.estimate, solve))
}

/// Ground truth for one test point.
#[derive(Debug, Clone)]
pub struct TestPoint {
    pub z: Vec<f64>,
    pub marginals: Vec<QuantileFunction>,
    pub latent: CorrelationMatrix,
}

/// Decoupled prediction errors `(MSPE_marg, MSPE_corr)`.
pub fn mspe(fit: &NptFit, test: &[TestPoint]) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(NptError::validation("empty test set"));
    }
    let d = fit.data.dim();
    let per_point: Vec<(f64, f64)> = test
        .par_iter()
        .map(|t| {
            if t.marginals.len() != d {
                return Err(NptError::DimensionMismatch {
                    expected: d,
                    got: t.marginals.len(),
                });
            }
            let pred = fit.predict(&t.z)?;
            let mut marg = 0.0;
            for (q, truth) in pred.distribution.marginals().iter().zip(&t.marginals) {
                marg += w2_sq(q, truth)?;
            }
            let corr = bw_distance_sq(pred.distribution.latent().as_spd(), t.latent.as_spd())?;
            Ok((marg, corr))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_te = test.len() as f64;
    let marg = per_point.iter().map(|p| p.0).sum::<f64>() / (d as f64 * n_te);
    let corr = per_point.iter().map(|p| p.1).sum::<f64>() / n_te;
    Ok((marg, corr))
}

/// Permutation test of an NPT fit on `ds`.
pub fn permutation_test(ds: &DistributionalDataset, replicates: usize, seed: u64, cfg: &GdConfig) -> Result<R2Report> {
    fit(ds, cfg, Method::Npt)?.permutation_test(replicates, seed)
}
