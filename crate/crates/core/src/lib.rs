//! Parameter estimation for unnormalised statistical models through the
//! Poisson transform and its noise-contrastive logistic approximation.
//!
//! The crate is organised bottom-up:
//!
//! | module | contents |
//! |--------|----------|
//! | [`model`] | parameters, domain, energy models, samples, reference densities |
//! | [`quadrature`] | Gauss-Legendre rules, log-partitions, exact likelihood and ML fit |
//! | [`objective`] | Poisson-transformed objectives `M`, `M_seq`, `M_chi` and their fitters |
//! | [`kernel`] | Gaussian kernels and representer expansions |
//! | [`mc`] | unbiased Monte Carlo gradients and stochastic gradient ascent |
//! | [`ncd`] | noise-contrastive logistic regression, four variants |
//! | [`chain`] | exact chain sampler and the estimation benchmark |
//! | [`checks`] | invariant suite run by the `check` subcommand |

pub mod chain;
pub mod checks;
pub mod error;
pub mod fit;
pub mod kernel;
pub mod mc;
pub mod model;
pub mod ncd;
pub mod objective;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
pub use fit::{FitOptions, FitResult, NuEstimate};
pub use kernel::{Kernel, KernelExpansion};
pub use model::{Domain, EnergyModel, ParamVector, ReferenceDensity, SampleSet, ToyChain, ToyIid};
pub use quadrature::QuadratureRule;
