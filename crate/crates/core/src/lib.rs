//! Copula variational inference.
//!
//! A mean-field variational family `∏ q_i(z_i; λ_i)` is augmented with a
//! regular-vine copula `c(Q_1(z_1), …, Q_d(z_d); η)` and both parameter blocks
//! are fitted by alternating stochastic gradient ascent on the ELBO.
//!
//! Module map:
//!
//! * [`bicop`] – bivariate copula families and their derivatives
//! * [`marginal`] – univariate factors `q_i`
//! * [`vine`] – regular-vine structure, evaluation plan and joint log-density
//! * [`sampler`] – inverse Rosenblatt sampling and path derivatives
//! * [`grad`] – ELBO value, score-function and reparameterized gradients
//! * [`cvi`] – the alternating optimizer
//! * [`select`] – Kendall's τ structure learning and family selection
//! * [`models`] – built-in targets
//! * [`io`] – posterior files and CSV helpers

pub mod bicop;
pub mod cvi;
pub mod dist;
pub mod error;
pub mod grad;
pub mod io;
pub mod marginal;
pub mod models;
pub mod rng;
pub mod sampler;
pub mod select;
pub mod special;
pub mod vine;

pub use bicop::{Family, PairCopula, Rotation};
pub use dist::CopulaVariationalDist;
pub use error::{Error, Result};
pub use marginal::{Marginal, MarginalSet};
pub use vine::{Vine, VineEdge};
