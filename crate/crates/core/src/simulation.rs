//! Synthetic designs comparing NPT regression against the marginal-only and
//! Gaussian baselines.
//!
//! Predictors are uniform on `[−1, 1]²`. Marginal `j` is a signed Gamma law,
//! `(−1)^j Y_j ~ Gamma(2, θ_j)`, with `θ_j` itself Gamma distributed around
//! `σ + β_jᵀZ`. The latent correlation follows one of three models.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::bw_geometry::{project_correlation, CorrelationMatrix, GdConfig, SpdMatrix, SymMatrix};
use crate::error::{NptError, Result};
use crate::nonparanormal::{phi_inv, sample_copula, RawSample};
use crate::quantile_space::{QuantileFunction, QuantileGrid};
use crate::regression::{fit, mspe, DistributionalDataset, Method, PredictorTable, TestPoint};
use crate::substream;

const SIGMA: f64 = 3.0;
const C: f64 = 1.0;
const MARGINAL_SHAPE: f64 = 2.0;
const LINEAR_CLAMP: f64 = 0.999;
const NOISE_SD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrModel {
    Linear,
    Tanh,
    MatrixExp,
}

/// Named scenario: `d2-linear`, `d2-tanh` or `d10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioKind {
    pub d: usize,
    pub model: CorrModel,
}

impl FromStr for ScenarioKind {
    type Err = NptError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "d2-linear" => Ok(ScenarioKind { d: 2, model: CorrModel::Linear }),
            "d2-tanh" => Ok(ScenarioKind { d: 2, model: CorrModel::Tanh }),
            "d10" => Ok(ScenarioKind { d: 10, model: CorrModel::MatrixExp }),
            other => Err(NptError::validation(format!(
                "unknown scenario '{other}' (expected d2-linear, d2-tanh or d10)"
            ))),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.model {
            CorrModel::Linear => f.write_str("d2-linear"),
            CorrModel::Tanh => f.write_str("d2-tanh"),
            CorrModel::MatrixExp => f.write_str("d10"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub d: usize,
    pub model: CorrModel,
    /// Subjects per training set.
    pub n: usize,
    /// Observations per subject.
    pub big_n: usize,
    pub reps: usize,
    pub n_test: usize,
    pub seed: u64,
    pub grid: usize,
}

impl Scenario {
    pub fn new(kind: ScenarioKind, n: usize, big_n: usize, reps: usize, seed: u64) -> Result<Self> {
        let s = Scenario {
            d: kind.d,
            model: kind.model,
            n,
            big_n,
            reps,
            n_test: 500,
            seed,
            grid: crate::quantile_space::DEFAULT_GRID_SIZE,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok_model = match self.model {
            CorrModel::Linear | CorrModel::Tanh => self.d == 2,
            CorrModel::MatrixExp => self.d >= 2,
        };
        if !ok_model {
            return Err(NptError::validation(format!(
                "correlation model {:?} is not defined for d = {}",
                self.model, self.d
            )));
        }
        if self.n < 4 {
            return Err(NptError::validation("need at least 4 training subjects"));
        }
        if self.big_n < 2 {
            return Err(NptError::validation("need at least 2 observations per subject"));
        }
        if self.reps == 0 || self.n_test == 0 {
            return Err(NptError::validation("reps and test size must be positive"));
        }
        QuantileGrid::new(self.grid)?;
        Ok(())
    }

    pub fn kind(&self) -> ScenarioKind {
        ScenarioKind {
            d: self.d,
            model: self.model,
        }
    }
}

/// Draws `n` predictor rows i.i.d. uniform on `[−1, 1]²`.
pub fn gen_predictors(n: usize, seed: u64) -> Result<PredictorTable> {
    let mut rng = substream(seed, 0);
    PredictorTable::new(draw_z(n, &mut rng), 0.0)
}

fn draw_z(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| vec![rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])
        .collect()
}

/// `(P(X ≤ x), P(X > x))` for a unit-scale Gamma variable.
fn gamma_cdf_sf_unit(shape: f64, x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    // Integer shapes have a finite Poisson-sum form, much cheaper than the series.
    if shape.fract() == 0.0 && shape <= 32.0 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for m in 1..shape as usize {
            term *= x / m as f64;
            sum += term;
        }
        let sf = (-x).exp() * sum;
        if sf < 0.5 {
            return (1.0 - sf, sf);
        }
    }
    (gamma_lr(shape, x), gamma_ur(shape, x))
}

fn gamma_pdf_unit(shape: f64, x: f64) -> f64 {
    ((shape - 1.0) * x.ln() - x - ln_gamma(shape)).exp()
}

/// Quantile of Gamma(shape, scale) at `p ∈ (0, 1)`.
pub fn gamma_quantile(shape: f64, scale: f64, p: f64) -> Result<f64> {
    if !(shape > 0.0) || !(scale > 0.0) || !shape.is_finite() || !scale.is_finite() {
        return Err(NptError::validation(format!(
            "Gamma parameters must be positive, got shape {shape}, scale {scale}"
        )));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(NptError::validation(format!("probability must lie in (0, 1), got {p}")));
    }
    let z = phi_inv(p)?;
    let a = 1.0 / (9.0 * shape);
    let wh = shape * (1.0 - a + z * a.sqrt()).powi(3);
    let mut x = if wh > 0.0 {
        wh
    } else {
        // Small-x behaviour: F(x) ≈ x^k / Γ(k + 1).
        ((p.ln() + ln_gamma(shape + 1.0)) / shape).exp()
    };
    // Upper-tail targets are matched through the survival function so that
    // probabilities near 1 keep their relative precision.
    let upper = p > 0.5;
    let q = 1.0 - p;
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    for _ in 0..200 {
        let (cdf, sf) = gamma_cdf_sf_unit(shape, x);
        let f = if upper { q - sf } else { cdf - p };
        if f == 0.0 {
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let pdf = gamma_pdf_unit(shape, x);
        let mut next = x - f / pdf;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * x.max(lo) + 1.0 };
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs() {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x * scale)
}

/// Matrix exponential of a symmetric matrix.
pub fn matrix_exp(a: &SymMatrix) -> SpdMatrix {
    let eig = SymmetricEigen::new(a.as_matrix().clone());
    let v = &eig.eigenvectors;
    let e = v * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::exp)) * v.transpose();
    let e = (&e + e.transpose()) * 0.5;
    SpdMatrix::new(SymMatrix::new(e).expect("symmetrized exponential is symmetric"))
        .expect("exponential of a symmetric matrix is positive definite")
}

/// Quantities drawn once per experiment and shared by every replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentParams {
    pub betas: Vec<[f64; 2]>,
    pub m1: Option<DMatrix<f64>>,
    pub m2: Option<DMatrix<f64>>,
}

impl ExperimentParams {
    pub fn draw(s: &Scenario) -> Self {
        let mut rng = substream(s.seed, 0);
        let mut betas = vec![[0.5, 0.0], [0.4, -0.3]];
        while betas.len() < s.d {
            betas.push([rng.random_range(-0.5..=0.5), rng.random_range(-0.5..=0.5)]);
        }
        betas.truncate(s.d);
        let (m1, m2) = if s.model == CorrModel::MatrixExp {
            let mut draw = || {
                let mut m = DMatrix::zeros(s.d, s.d);
                for i in 0..s.d {
                    for j in (i + 1)..s.d {
                        let v = rng.random_range(-0.5..=0.5);
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
                m
            };
            let m1 = draw();
            (Some(m1), Some(draw()))
        } else {
            (None, None)
        };
        ExperimentParams { betas, m1, m2 }
    }
}

/// A generated response law with exact (signed Gamma) marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueResponse {
    pub z: Vec<f64>,
    pub thetas: Vec<f64>,
    pub latent: CorrelationMatrix,
}

impl TrueResponse {
    /// Exact quantile of marginal `j` (0-based) at `p`. Odd 1-based indices are
    /// negated, and the quantile of `−X` at `p` is `−q_X(1 − p)`.
    pub fn quantile(&self, j: usize, p: f64) -> f64 {
        let q = |u: f64| gamma_quantile(MARGINAL_SHAPE, self.thetas[j], u).expect("valid Gamma parameters");
        if j % 2 == 0 {
            -q(1.0 - p)
        } else {
            q(p)
        }
    }

    pub fn marginals(&self, grid: QuantileGrid) -> Result<Vec<QuantileFunction>> {
        (0..self.thetas.len())
            .map(|j| QuantileFunction::from_fn(grid, |p| self.quantile(j, p)))
            .collect()
    }

    pub fn test_point(&self, grid: QuantileGrid) -> Result<TestPoint> {
        Ok(TestPoint {
            z: self.z.clone(),
            marginals: self.marginals(grid)?,
            latent: self.latent.clone(),
        })
    }

    /// Draws `n` observations from the response law.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<RawSample> {
        let eps = f64::EPSILON;
        sample_copula(&self.latent, n, 0.0, rng, |j, u| self.quantile(j, u.clamp(eps, 1.0 - eps)))
    }
}

/// Correlation before noise enters, as a function of the noise draw.
pub fn bivariate_rho(model: CorrModel, z: &[f64], eps: f64) -> f64 {
    match model {
        CorrModel::Linear => (0.3 * z[0] + eps).clamp(-LINEAR_CLAMP, LINEAR_CLAMP),
        CorrModel::Tanh => (2.0 * z[1] + eps).tanh(),
        CorrModel::MatrixExp => panic!("matrix-exponential model has no scalar correlation"),
    }
}

/// Draws one response law at predictor value `z`.
pub fn gen_response<R: Rng + ?Sized>(
    z: &[f64],
    s: &Scenario,
    params: &ExperimentParams,
    rng: &mut R,
) -> Result<TrueResponse> {
    let mut thetas = Vec::with_capacity(s.d);
    for beta in &params.betas {
        let loc = SIGMA + beta[0] * z[0] + beta[1] * z[1];
        if !(loc > 0.0) {
            return Err(NptError::validation(format!("Gamma location {loc} is not positive")));
        }
        let dist = Gamma::new(loc * loc / C, C / loc)
            .map_err(|e| NptError::validation(format!("invalid Gamma draw: {e}")))?;
        let theta = (0..100)
            .map(|_| dist.sample(rng))
            .find(|t| *t > 0.0)
            .ok_or_else(|| NptError::validation("Gamma scale draw kept returning zero"))?;
        thetas.push(theta);
    }
    let noise = Normal::new(0.0, NOISE_SD).expect("valid noise sd");
    let latent = match s.model {
        CorrModel::Linear | CorrModel::Tanh => {
            CorrelationMatrix::bivariate(bivariate_rho(s.model, z, noise.sample(rng)))?
        }
        CorrModel::MatrixExp => {
            let (m1, m2) = match (&params.m1, &params.m2) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(NptError::validation("matrix-exponential model needs M1 and M2")),
            };
            let mut a = m1 * z[0] + m2 * z[1];
            for i in 0..s.d {
                for j in (i + 1)..s.d {
                    let e = noise.sample(rng);
                    a[(i, j)] += e;
                    a[(j, i)] += e;
                }
            }
            project_correlation(&matrix_exp(&SymMatrix::new(a)?), 0.0)?
        }
    };
    Ok(TrueResponse {
        z: z.to_vec(),
        thetas,
        latent,
    })
}

/// One training set: predictors, the true laws and the observed samples.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub predictors: PredictorTable,
    pub truth: Vec<TrueResponse>,
    pub samples: Vec<RawSample>,
}

pub fn gen_training_set(s: &Scenario, params: &ExperimentParams, rng: &mut ChaCha8Rng) -> Result<TrainingSet> {
    let zs = draw_z(s.n, rng);
    let mut truth = Vec::with_capacity(s.n);
    let mut samples = Vec::with_capacity(s.n);
    for z in &zs {
        let t = gen_response(z, s, params, rng)?;
        samples.push(t.sample(s.big_n, rng)?);
        truth.push(t);
    }
    Ok(TrainingSet {
        predictors: PredictorTable::new(zs, 0.0)?,
        truth,
        samples,
    })
}

pub fn gen_test_set(s: &Scenario, params: &ExperimentParams, rng: &mut ChaCha8Rng) -> Result<Vec<TrueResponse>> {
    draw_z(s.n_test, rng)
        .iter()
        .map(|z| gen_response(z, s, params, rng))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub rep: usize,
    pub method: Method,
    pub mspe_marg: f64,
    pub mspe_corr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub rep: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<ReplicateFailure>,
}

/// Runs one replicate: generate, fit all three methods, score on the test set.
pub fn run_replicate(s: &Scenario, params: &ExperimentParams, rep: usize) -> Result<Vec<ResultRow>> {
    let grid = QuantileGrid::new(s.grid)?;
    let mut rng = substream(s.seed, rep as u64 + 1);
    let train = gen_training_set(s, params, &mut rng)?;
    let test: Vec<TestPoint> = gen_test_set(s, params, &mut rng)?
        .iter()
        .map(|t| t.test_point(grid))
        .collect::<Result<_>>()?;
    let ds = DistributionalDataset::from_samples(train.predictors, &train.samples, grid)?;
    let cfg = GdConfig::default();
    Method::ALL
        .iter()
        .map(|&method| {
            let f = fit(&ds, &cfg, method)?;
            let (mspe_marg, mspe_corr) = mspe(&f, &test)?;
            Ok(ResultRow {
                rep,
                method,
                mspe_marg,
                mspe_corr,
            })
        })
        .collect()
}

/// Runs every replicate. Rows come back in `(rep, method)` order; failed
/// replicates are skipped and listed separately.
pub fn run_experiment(s: &Scenario) -> Result<ExperimentResult> {
    s.validate()?;
    let params = ExperimentParams::draw(s);
    let outcomes: Vec<Result<Vec<ResultRow>>> = (0..s.reps)
        .into_par_iter()
        .map(|rep| run_replicate(s, &params, rep))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => rows.extend(r),
            Err(e) => failures.push(ReplicateFailure {
                rep,
                message: e.to_string(),
            }),
        }
    }
    Ok(ExperimentResult { rows, failures })
}
