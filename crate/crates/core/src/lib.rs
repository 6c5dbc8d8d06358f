pub mod chain;
pub mod error;
pub mod gibbs;
pub mod model;
pub mod priors;
pub mod rng;
pub use chain::McmcChain;
pub use error::{Error, Result};
pub use gibbs::run_chain;
pub use model::{compile, summarize, Dataset, Intercepts, ModelSpec, RegressionType, Table};
pub use priors::{default_priors, theta_init, validate_state, ParamState, PriorSpec};
pub use rng::{CovMatrix, Rng, Side};
