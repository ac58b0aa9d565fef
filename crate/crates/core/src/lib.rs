//! Fréchet regression for multivariate distributional responses modelled as
//! nonparanormal laws: univariate marginals plus a latent Gaussian copula
//! correlation, compared through the NPT metric.

pub mod bw_geometry;
pub mod cli;
pub mod error;
pub mod nonparanormal;
pub mod ot_oracle;
pub mod quantile_space;
pub mod regression;
pub mod simulation;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use bw_geometry::{CorrelationMatrix, GdConfig, SpdMatrix, SymMatrix};
pub use error::{NptError, Result};
pub use nonparanormal::{Nonparanormal, RawSample};
pub use quantile_space::{QuantileFunction, QuantileGrid, Support};
pub use regression::{DistributionalDataset, Method, NptFit, PredictorTable, R2Report};

/// Independent random stream `stream` under master seed `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
