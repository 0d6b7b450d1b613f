//! The copula-augmented variational family
//! `q(z; λ, η) = c(Q_1(z_1), …, Q_d(z_d); η) ∏ q_i(z_i; λ_i)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginal::MarginalSet;
use crate::vine::Vine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaVariationalDist {
    pub marginals: MarginalSet,
    pub vine: Vine,
}

/// `log q` with its gradients in λ and η at a fixed `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogQGrad {
    pub log_q: f64,
    pub d_lambda: Vec<f64>,
    pub d_eta: Vec<f64>,
}

impl CopulaVariationalDist {
    pub fn new(marginals: MarginalSet, vine: Vine) -> Result<Self> {
        if marginals.dim() != vine.dim() {
            return Err(Error::Structure(format!(
                "{} marginals but a {}-dimensional vine",
                marginals.dim(),
                vine.dim()
            )));
        }
        Ok(CopulaVariationalDist { marginals, vine })
    }

    /// Mean-field distribution: an all-independence vine.
    pub fn mean_field(marginals: MarginalSet) -> Self {
        let vine = Vine::independence(marginals.dim());
        CopulaVariationalDist { marginals, vine }
    }

    pub fn dim(&self) -> usize {
        self.marginals.dim()
    }

    pub fn n_lambda(&self) -> usize {
        self.marginals.n_params()
    }

    pub fn n_eta(&self) -> usize {
        self.vine.n_eta()
    }

    pub fn lambda(&self) -> Vec<f64> {
        self.marginals.lambda()
    }

    pub fn eta(&self) -> Vec<f64> {
        self.vine.eta()
    }

    pub fn set_lambda(&mut self, lambda: &[f64]) -> Result<()> {
        self.marginals.set_lambda(lambda)
    }

    pub fn set_eta(&mut self, eta: &[f64]) -> Result<()> {
        self.vine.set_eta(eta)
    }

    /// Copula arguments `Q_i(z_i)`.
    pub fn uniforms(&self, z: &[f64]) -> Result<Vec<f64>> {
        z.iter().zip(self.marginals.iter()).map(|(&x, m)| m.cdf(x)).collect()
    }

    pub fn log_q(&self, z: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (&x, m) in z.iter().zip(self.marginals.iter()) {
            total += m.logpdf(x)?;
        }
        Ok(total + self.vine.log_density(&self.uniforms(z)?))
    }

    /// `log q` and `∇_z log q`: the marginal score plus `q_i(z_i)` times the
    /// copula derivative in its `i`-th argument.
    pub fn grad_log_q_z(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let u = self.uniforms(z)?;
        let vg = self.vine.grad_log_density(&u);
        let mut log_q = vg.log_density;
        let mut g = Vec::with_capacity(z.len());
        for (i, (&x, m)) in z.iter().zip(self.marginals.iter()).enumerate() {
            log_q += m.logpdf(x)?;
            g.push(m.dlogpdf_dz(x)? + m.pdf(x)? * vg.du[i]);
        }
        Ok((log_q, g))
    }

    /// `log q` and its parameter gradients at fixed `z` (the score).
    pub fn grad_log_q_params(&self, z: &[f64]) -> Result<LogQGrad> {
        let u = self.uniforms(z)?;
        let vg = self.vine.grad_log_density(&u);
        let mut log_q = vg.log_density;
        let mut d_lambda = vec![0.0; self.n_lambda()];
        for (i, (&x, m)) in z.iter().zip(self.marginals.iter()).enumerate() {
            log_q += m.logpdf(x)?;
            let dl = m.dlogpdf_dlambda(x)?;
            let dc = m.dcdf_dlambda(x)?;
            for (j, slot) in self.marginals.slice(i).enumerate() {
                d_lambda[slot] = dl[j] + vg.du[i] * dc[j];
            }
        }
        let d_eta = self
            .vine
            .free_edges()
            .into_iter()
            .zip(self.vine.dparam_deta())
            .map(|(id, dt)| vg.dparam[id] * dt)
            .collect();
        Ok(LogQGrad {
            log_q,
            d_lambda,
            d_eta,
        })
    }
}
