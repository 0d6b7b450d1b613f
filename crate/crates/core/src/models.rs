//! Built-in targets: a correlated Gaussian with known posterior, a Gaussian
//! mixture with the assignments summed out, and a finite-difference adapter
//! for densities that lack a gradient.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::grad::{fd_gradient, LogDensity, TargetModel};
use crate::special::log_sum_exp;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Multivariate normal `N(mean, cov)`.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_det: f64,
}

impl GaussianTarget {
    pub fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.len() != d || cov.iter().any(|r| r.len() != d) {
            return Err(Error::Config(format!("covariance must be {d}x{d}")));
        }
        let cov = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
        for i in 0..d {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * (1.0 + cov[(i, j)].abs()) {
                    return Err(Error::Config(format!("covariance is not symmetric at ({i}, {j})")));
                }
            }
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Config("covariance is not positive definite".into()))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        Ok(GaussianTarget {
            mean: DVector::from_vec(mean),
            precision: chol.inverse(),
            cov,
            log_det,
        })
    }

    /// Two standard normals with correlation `rho`.
    pub fn correlated_pair(rho: f64) -> Result<Self> {
        Self::new(vec![0.0, 0.0], vec![vec![1.0, rho], vec![rho, 1.0]])
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    fn centered(&self, z: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(z) - &self.mean
    }
}

impl LogDensity for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn logp(&self, z: &[f64]) -> Result<f64> {
        let r = self.centered(z);
        let quad = r.dot(&(&self.precision * &r));
        Ok(-0.5 * (self.dim() as f64 * LN_2PI + self.log_det + quad))
    }
}

impl TargetModel for GaussianTarget {
    fn grad_logp(&self, z: &[f64]) -> Result<Vec<f64>> {
        let r = self.centered(z);
        Ok((-(&self.precision * r)).as_slice().to_vec())
    }
}

/// Conjugate prior on each mean/precision pair:
/// `λ ~ Gamma(a0, rate b0)`, `μ | λ ~ N(m0, 1 / (beta0 λ))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalGammaPrior {
    pub m0: f64,
    pub beta0: f64,
    pub a0: f64,
    pub b0: f64,
}

impl Default for NormalGammaPrior {
    fn default() -> Self {
        NormalGammaPrior {
            m0: 0.0,
            beta0: 0.1,
            a0: 1.0,
            b0: 1.0,
        }
    }
}

impl NormalGammaPrior {
    /// Log density of `(μ, ℓ = log λ)` including the log-transform Jacobian.
    fn log_density(&self, mu: f64, ell: f64) -> f64 {
        let lam = ell.exp();
        let gamma = self.a0 * self.b0.ln() - ln_gamma(self.a0) + self.a0 * ell - self.b0 * lam;
        let normal = 0.5 * (self.beta0.ln() + ell - LN_2PI) - 0.5 * self.beta0 * lam * (mu - self.m0).powi(2);
        gamma + normal
    }
}

/// Gaussian mixture with diagonal precisions and the component labels summed
/// out.
///
/// Latent layout: `K - 1` stick-breaking logits, then the `K × P` means, then
/// the `K × P` log precisions, each block component-major.
#[derive(Debug, Clone)]
pub struct MixtureTarget {
    data: Vec<Vec<f64>>,
    k: usize,
    p: usize,
    alpha: f64,
    prior: NormalGammaPrior,
}

/// Constrained mixture parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub precisions: Vec<Vec<f64>>,
}

fn ln_sigmoid(x: f64) -> f64 {
    -crate::special::softplus(-x)
}

impl MixtureTarget {
    pub fn new(data: Vec<Vec<f64>>, k: usize, alpha: f64, prior: NormalGammaPrior) -> Result<Self> {
        let p = data.first().map_or(0, Vec::len);
        if data.is_empty() || p == 0 || data.iter().any(|r| r.len() != p) {
            return Err(Error::Config("mixture data must be a non-empty rectangular table".into()));
        }
        if data.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Config("mixture data contains non-finite values".into()));
        }
        if k == 0 {
            return Err(Error::Config("need at least one component".into()));
        }
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(Error::Config(format!("Dirichlet concentration must be positive, got {alpha}")));
        }
        if !(prior.beta0 > 0.0 && prior.a0 > 0.0 && prior.b0 > 0.0 && prior.m0.is_finite()) {
            return Err(Error::Config(format!("invalid normal-gamma prior {prior:?}")));
        }
        Ok(MixtureTarget {
            data,
            k,
            p,
            alpha,
            prior,
        })
    }

    pub fn n_components(&self) -> usize {
        self.k
    }

    pub fn data_dim(&self) -> usize {
        self.p
    }

    pub fn stick_index(&self, j: usize) -> usize {
        j
    }

    pub fn mean_index(&self, k: usize, p: usize) -> usize {
        self.k - 1 + k * self.p + p
    }

    pub fn log_precision_index(&self, k: usize, p: usize) -> usize {
        self.k - 1 + self.k * self.p + k * self.p + p
    }

    fn stick_offset(&self, j: usize) -> f64 {
        ((self.k - 1 - j) as f64).ln()
    }

    /// Stick fractions `b_j` and log weights `log π_k`.
    fn log_weights(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut b = Vec::with_capacity(self.k - 1);
        let mut log_pi = Vec::with_capacity(self.k);
        let mut log_rest = 0.0;
        for j in 0..self.k - 1 {
            let x = z[j] - self.stick_offset(j);
            b.push(1.0 / (1.0 + (-x).exp()));
            log_pi.push(log_rest + ln_sigmoid(x));
            log_rest += ln_sigmoid(-x);
        }
        log_pi.push(log_rest);
        (b, log_pi)
    }

    /// Map an unconstrained latent vector to weights, means and precisions.
    pub fn params(&self, z: &[f64]) -> MixtureParams {
        let (_, log_pi) = self.log_weights(z);
        let block = |idx: &dyn Fn(usize, usize) -> usize, f: fn(f64) -> f64| {
            (0..self.k)
                .map(|k| (0..self.p).map(|p| f(z[idx(k, p)])).collect())
                .collect()
        };
        MixtureParams {
            weights: log_pi.iter().map(|l| l.exp()).collect(),
            means: block(&|k, p| self.mean_index(k, p), |x| x),
            precisions: block(&|k, p| self.log_precision_index(k, p), f64::exp),
        }
    }

    /// Inverse of [`MixtureTarget::params`].
    pub fn unconstrained(&self, params: &MixtureParams) -> Vec<f64> {
        let mut z = vec![0.0; LogDensity::dim(self)];
        let mut rest = 1.0;
        for j in 0..self.k - 1 {
            let b = params.weights[j] / rest;
            z[j] = (b / (1.0 - b)).ln() + self.stick_offset(j);
            rest -= params.weights[j];
        }
        for k in 0..self.k {
            for p in 0..self.p {
                z[self.mean_index(k, p)] = params.means[k][p];
                z[self.log_precision_index(k, p)] = params.precisions[k][p].ln();
            }
        }
        z
    }

    fn evaluate(&self, z: &[f64], mut grad: Option<&mut [f64]>) -> Result<f64> {
        if z.len() != LogDensity::dim(self) {
            return Err(Error::Structure(format!(
                "mixture latent has length {}, expected {}",
                z.len(),
                LogDensity::dim(self)
            )));
        }
        let (k_n, p_n) = (self.k, self.p);
        let (b, log_pi) = self.log_weights(z);
        let mu = |k: usize, p: usize| z[self.mean_index(k, p)];
        let ell = |k: usize, p: usize| z[self.log_precision_index(k, p)];
        // per-component normalizing constant of the diagonal Gaussian
        let log_norm: Vec<f64> = (0..k_n)
            .map(|k| (0..p_n).map(|p| 0.5 * (ell(k, p) - LN_2PI)).sum())
            .collect();
        let mut total = 0.0;
        let mut resp_sum = vec![0.0; k_n];
        let mut a = vec![0.0; k_n];
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        for x in &self.data {
            for k in 0..k_n {
                let mut quad = 0.0;
                for (p, &xp) in x.iter().enumerate() {
                    quad += ell(k, p).exp() * (xp - mu(k, p)).powi(2);
                }
                a[k] = log_pi[k] + log_norm[k] - 0.5 * quad;
            }
            let lse = log_sum_exp(&a);
            total += lse;
            if let Some(g) = grad.as_deref_mut() {
                for k in 0..k_n {
                    let r = (a[k] - lse).exp();
                    resp_sum[k] += r;
                    for (p, &xp) in x.iter().enumerate() {
                        let lam = ell(k, p).exp();
                        let diff = xp - mu(k, p);
                        g[self.mean_index(k, p)] += r * lam * diff;
                        g[self.log_precision_index(k, p)] += r * 0.5 * (1.0 - lam * diff * diff);
                    }
                }
            }
        }
        // Dirichlet prior on the weights plus the stick-breaking Jacobian
        let kf = k_n as f64;
        total += ln_gamma(kf * self.alpha) - kf * ln_gamma(self.alpha);
        total += (self.alpha - 1.0) * log_pi.iter().sum::<f64>();
        for (j, &bj) in b.iter().enumerate() {
            let x = z[j] - self.stick_offset(j);
            total += ln_sigmoid(x) + (k_n - 1 - j) as f64 * ln_sigmoid(-x);
            if let Some(g) = grad.as_deref_mut() {
                let gk = |k: usize| resp_sum[k] + self.alpha - 1.0;
                let later: f64 = (j + 1..k_n).map(gk).sum();
                g[j] = gk(j) * (1.0 - bj) - bj * later + (1.0 - bj) - (k_n - 1 - j) as f64 * bj;
            }
        }
        let pr = &self.prior;
        for k in 0..k_n {
            for p in 0..p_n {
                total += pr.log_density(mu(k, p), ell(k, p));
                if let Some(g) = grad.as_deref_mut() {
                    let lam = ell(k, p).exp();
                    let dm = mu(k, p) - pr.m0;
                    g[self.mean_index(k, p)] -= pr.beta0 * lam * dm;
                    g[self.log_precision_index(k, p)] += 0.5 - 0.5 * pr.beta0 * lam * dm * dm + pr.a0 - pr.b0 * lam;
                }
            }
        }
        Ok(total)
    }
}

impl LogDensity for MixtureTarget {
    fn dim(&self) -> usize {
        self.k - 1 + 2 * self.k * self.p
    }

    fn logp(&self, z: &[f64]) -> Result<f64> {
        self.evaluate(z, None)
    }
}

impl TargetModel for MixtureTarget {
    fn grad_logp(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; z.len()];
        self.evaluate(z, Some(&mut g))?;
        Ok(g)
    }
}

/// A log density given as a closure.
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

pub fn from_fn<F: Fn(&[f64]) -> Result<f64> + Sync>(dim: usize, f: F) -> FnDensity<F> {
    FnDensity { dim, f }
}

impl<F: Fn(&[f64]) -> Result<f64> + Sync> LogDensity for FnDensity<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn logp(&self, z: &[f64]) -> Result<f64> {
        (self.f)(z)
    }
}

/// A target whose gradient is taken by central finite differences.
pub struct FdWrap<M>(pub M);

pub fn fd_wrap<M: LogDensity>(model: M) -> FdWrap<M> {
    FdWrap(model)
}

impl<M: LogDensity> LogDensity for FdWrap<M> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn logp(&self, z: &[f64]) -> Result<f64> {
        self.0.logp(z)
    }
}

impl<M: LogDensity> TargetModel for FdWrap<M> {
    fn grad_logp(&self, z: &[f64]) -> Result<Vec<f64>> {
        fd_gradient(
            |x| {
                let v = self.0.logp(x)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::numerical("log density near the gradient point", v))
                }
            },
            z,
        )
    }
}

fn default_alpha() -> f64 {
    1.0
}

/// JSON description of a built-in model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
    Mixture {
        data_csv: PathBuf,
        #[serde(rename = "K")]
        k: usize,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        nw: NormalGammaPrior,
    },
}

impl ModelSpec {
    /// Build the model; a relative `data_csv` is resolved against `base`.
    pub fn build(&self, base: &Path) -> Result<Box<dyn TargetModel>> {
        match self {
            ModelSpec::Gaussian { mean, cov } => Ok(Box::new(GaussianTarget::new(mean.clone(), cov.clone())?)),
            ModelSpec::Mixture { data_csv, k, alpha, nw } => {
                let data = crate::io::read_matrix_csv(&base.join(data_csv))?;
                Ok(Box::new(MixtureTarget::new(data, *k, *alpha, *nw)?))
            }
        }
    }
}
