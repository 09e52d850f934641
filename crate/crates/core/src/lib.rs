//! Bayesian principal stratification for survival outcomes under
//! treatment noncompliance.
//!
//! Units are mixtures over latent compliance strata. A multinomial logit
//! gives stratum membership, a Weibull proportional-hazards (or lognormal
//! AFT) model gives survival within each stratum and arm, and Hamiltonian
//! Monte Carlo draws from the marginal posterior. Survival curves, survival
//! probability causal effects and restricted average causal effects are
//! computed per posterior draw.

pub mod cli;
pub mod data;
pub mod error;
pub mod estimands;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod sampler;
pub mod simulate;
pub mod special;

pub use data::{Dataset, ObservedUnit, StrataConfig, Stratum};
pub use error::{Error, Result};
pub use model::{Family, Model, PriorSpec};
pub use sampler::{HmcConfig, PosteriorDraws};
