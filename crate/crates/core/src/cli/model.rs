use serde::{Deserialize, Serialize};

use crate::bw_geometry::{CorrelationMatrix, GdConfig, SpdMatrix};
use crate::error::{NptError, Result};
use crate::nonparanormal::Nonparanormal;
use crate::quantile_space::{QuantileFunction, QuantileGrid, Support};
use crate::regression::{
    fit_with_supports, DistributionalDataset, GaussianSummary, LatentSolve, Method, NptFit, Prediction,
    PredictorTable,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorBlock {
    pub z: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub cov_inv: Vec<Vec<f64>>,
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectBlock {
    pub id: String,
    /// One row of grid quantiles per marginal.
    pub quantiles: Vec<Vec<f64>>,
    pub latent: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

/// `[lower, upper]`; `null` marks an unbounded side.
pub type SupportBlock = Option<[Option<f64>; 2]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub grid: usize,
    pub method: Method,
    pub config: GdConfig,
    pub predictors: PredictorBlock,
    pub subjects: Vec<SubjectBlock>,
    pub supports: Vec<SupportBlock>,
}

fn support_block(s: &Option<Support>) -> SupportBlock {
    s.map(|s| {
        let side = |v: f64| v.is_finite().then_some(v);
        [side(s.lower), side(s.upper)]
    })
}

fn support_from_block(b: &SupportBlock) -> Result<Option<Support>> {
    b.map(|[lo, hi]| Support::new(lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY)))
        .transpose()
}

impl ModelFile {
    pub fn from_fit(fit: &NptFit, ids: &[String]) -> Result<Self> {
        let ds = fit.dataset();
        let gaussian = ds
            .gaussian()
            .ok_or_else(|| NptError::validation("model export needs per-subject moments"))?;
        if ids.len() != ds.n() {
            return Err(NptError::DimensionMismatch {
                expected: ds.n(),
                got: ids.len(),
            });
        }
        let t = ds.predictors();
        let subjects = ids
            .iter()
            .zip(ds.responses())
            .zip(gaussian)
            .map(|((id, r), g)| SubjectBlock {
                id: id.clone(),
                quantiles: r.marginals().iter().map(|q| q.values().to_vec()).collect(),
                latent: r.latent().to_rows(),
                mean: g.mean.clone(),
                cov: g.cov.to_rows(),
            })
            .collect();
        Ok(ModelFile {
            format_version: FORMAT_VERSION,
            grid: ds.grid().size(),
            method: fit.method(),
            config: *fit.config(),
            predictors: PredictorBlock {
                z: t.rows().to_vec(),
                mean: t.mean().to_vec(),
                cov_inv: t.cov_inv(),
                ridge: t.ridge(),
            },
            subjects,
            supports: fit.supports().iter().map(support_block).collect(),
        })
    }

    pub fn ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.id.clone()).collect()
    }

    /// Rebuilds the fit exactly as it was when saved.
    pub fn to_fit(&self) -> Result<NptFit> {
        if self.format_version != FORMAT_VERSION {
            return Err(NptError::validation(format!(
                "unsupported model format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let grid = QuantileGrid::new(self.grid)?;
        let pb = &self.predictors;
        let table = PredictorTable::from_parts(pb.z.clone(), pb.mean.clone(), pb.cov_inv.clone(), pb.ridge)?;
        let mut responses = Vec::with_capacity(self.subjects.len());
        let mut gaussian = Vec::with_capacity(self.subjects.len());
        for (i, s) in self.subjects.iter().enumerate() {
            let build = || -> Result<(Nonparanormal, GaussianSummary)> {
                let marginals = s
                    .quantiles
                    .iter()
                    .map(|q| QuantileFunction::new(grid, q.clone(), None))
                    .collect::<Result<Vec<_>>>()?;
                let np = Nonparanormal::new(marginals, CorrelationMatrix::from_rows(&s.latent)?)?;
                let g = GaussianSummary {
                    mean: s.mean.clone(),
                    cov: SpdMatrix::from_rows(&s.cov)?,
                };
                Ok((np, g))
            };
            let (np, g) = build().map_err(|e| e.at_subject(i))?;
            responses.push(np);
            gaussian.push(g);
        }
        let ds = DistributionalDataset::new(table, responses)?.with_gaussian(gaussian)?;
        let supports = self.supports.iter().map(support_from_block).collect::<Result<Vec<_>>>()?;
        fit_with_supports(&ds, &self.config, self.method, supports)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBlock {
    pub z: Vec<f64>,
    pub quantiles: Vec<Vec<f64>>,
    pub latent: Vec<Vec<f64>>,
    pub latent_solve: LatentSolve,
    pub warnings: Vec<String>,
}

impl PredictionBlock {
    pub fn new(z: &[f64], p: &Prediction) -> Self {
        PredictionBlock {
            z: z.to_vec(),
            quantiles: p.distribution.marginals().iter().map(|q| q.values().to_vec()).collect(),
            latent: p.distribution.latent().to_rows(),
            latent_solve: p.latent_solve.clone(),
            warnings: p.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub format_version: u32,
    pub method: Method,
    pub probabilities: Vec<f64>,
    pub predictions: Vec<PredictionBlock>,
}
