//! Univariate mean-field factors `q_i(z_i; λ_i)`.
//!
//! Each factor is location-scale in `(mu, log_sigma)`; the log-normal factor
//! applies the location-scale map on the log scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{clamp_unit, norm_cdf, norm_pdf, norm_ppf, LN_SQRT_2PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Marginal {
    #[serde(rename = "gaussian")]
    Gaussian { mu: f64, log_sigma: f64 },
    #[serde(rename = "lognormal")]
    LogNormal { mu: f64, log_sigma: f64 },
}

/// Number of entries of λ owned by every marginal kind.
pub const PARAMS_PER_MARGINAL: usize = 2;

impl Marginal {
    pub fn gaussian(mu: f64, sigma: f64) -> Self {
        Marginal::Gaussian {
            mu,
            log_sigma: sigma.ln(),
        }
    }

    pub fn lognormal(mu: f64, sigma: f64) -> Self {
        Marginal::LogNormal {
            mu,
            log_sigma: sigma.ln(),
        }
    }

    pub fn mu(&self) -> f64 {
        match *self {
            Marginal::Gaussian { mu, .. } | Marginal::LogNormal { mu, .. } => mu,
        }
    }

    pub fn log_sigma(&self) -> f64 {
        match *self {
            Marginal::Gaussian { log_sigma, .. } | Marginal::LogNormal { log_sigma, .. } => log_sigma,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma().exp()
    }

    pub fn n_params(&self) -> usize {
        PARAMS_PER_MARGINAL
    }

    pub fn params(&self) -> [f64; 2] {
        [self.mu(), self.log_sigma()]
    }

    pub fn with_params(&self, p: &[f64]) -> Self {
        match self {
            Marginal::Gaussian { .. } => Marginal::Gaussian {
                mu: p[0],
                log_sigma: p[1],
            },
            Marginal::LogNormal { .. } => Marginal::LogNormal {
                mu: p[0],
                log_sigma: p[1],
            },
        }
    }

    /// Standardized location of `z`: `(g(z) - mu) / sigma` with `g` the
    /// identity or the logarithm.
    fn standardize(&self, z: f64) -> Result<f64> {
        match *self {
            Marginal::Gaussian { mu, log_sigma } => Ok((z - mu) / log_sigma.exp()),
            Marginal::LogNormal { mu, log_sigma } => {
                if z <= 0.0 {
                    return Err(Error::domain("lognormal", format!("support is z > 0, got {z}")));
                }
                Ok((z.ln() - mu) / log_sigma.exp())
            }
        }
    }

    pub fn logpdf(&self, z: f64) -> Result<f64> {
        let s = self.standardize(z)?;
        let base = -0.5 * s * s - LN_SQRT_2PI - self.log_sigma();
        Ok(match self {
            Marginal::Gaussian { .. } => base,
            Marginal::LogNormal { .. } => base - z.ln(),
        })
    }

    pub fn pdf(&self, z: f64) -> Result<f64> {
        Ok(self.logpdf(z)?.exp())
    }

    pub fn cdf(&self, z: f64) -> Result<f64> {
        Ok(norm_cdf(self.standardize(z)?))
    }

    pub fn quantile(&self, v: f64) -> f64 {
        let x = norm_ppf(clamp_unit(v));
        let loc = self.mu() + self.sigma() * x;
        match self {
            Marginal::Gaussian { .. } => loc,
            Marginal::LogNormal { .. } => loc.exp(),
        }
    }

    /// `∂z/∂(mu, log_sigma)` of the quantile map at fixed `v`.
    pub fn dquantile_dlambda(&self, v: f64) -> [f64; 2] {
        let x = norm_ppf(clamp_unit(v));
        let sigma = self.sigma();
        match self {
            Marginal::Gaussian { .. } => [1.0, sigma * x],
            Marginal::LogNormal { .. } => {
                let z = (self.mu() + sigma * x).exp();
                [z, z * sigma * x]
            }
        }
    }

    /// `∂z/∂v` of the quantile map, i.e. `1 / q(z)`.
    pub fn dquantile_dv(&self, v: f64) -> f64 {
        let x = norm_ppf(clamp_unit(v));
        let z = self.quantile(v);
        let base = self.sigma() / norm_pdf(x);
        match self {
            Marginal::Gaussian { .. } => base,
            Marginal::LogNormal { .. } => base * z,
        }
    }

    pub fn dlogpdf_dz(&self, z: f64) -> Result<f64> {
        let s = self.standardize(z)?;
        let sigma = self.sigma();
        Ok(match self {
            Marginal::Gaussian { .. } => -s / sigma,
            Marginal::LogNormal { .. } => (-s / sigma - 1.0) / z,
        })
    }

    /// `∂ log q(z)/∂(mu, log_sigma)` at fixed `z`.
    pub fn dlogpdf_dlambda(&self, z: f64) -> Result<[f64; 2]> {
        let s = self.standardize(z)?;
        Ok([s / self.sigma(), s * s - 1.0])
    }

    /// `∂Q(z)/∂(mu, log_sigma)` at fixed `z`.
    pub fn dcdf_dlambda(&self, z: f64) -> Result<[f64; 2]> {
        let s = self.standardize(z)?;
        let phi = norm_pdf(s);
        Ok([-phi / self.sigma(), -phi * s])
    }

    pub fn validate(&self) -> Result<()> {
        let [mu, ls] = self.params();
        if !mu.is_finite() || !ls.is_finite() {
            return Err(Error::domain("marginal", "parameters must be finite"));
        }
        Ok(())
    }
}

/// The `d` mean-field factors together with their slices of the flat λ vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Marginal>", into = "Vec<Marginal>")]
pub struct MarginalSet {
    marginals: Vec<Marginal>,
    offsets: Vec<usize>,
}

impl TryFrom<Vec<Marginal>> for MarginalSet {
    type Error = Error;

    fn try_from(m: Vec<Marginal>) -> Result<Self> {
        MarginalSet::new(m)
    }
}

impl From<MarginalSet> for Vec<Marginal> {
    fn from(s: MarginalSet) -> Self {
        s.marginals
    }
}

impl MarginalSet {
    pub fn new(marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::Structure("a marginal set needs at least one factor".into()));
        }
        for m in &marginals {
            m.validate()?;
        }
        let mut offsets = Vec::with_capacity(marginals.len() + 1);
        let mut acc = 0;
        for m in &marginals {
            offsets.push(acc);
            acc += m.n_params();
        }
        offsets.push(acc);
        Ok(MarginalSet { marginals, offsets })
    }

    pub fn standard_normal(d: usize) -> Self {
        Self::new(vec![Marginal::gaussian(0.0, 1.0); d]).expect("d >= 1")
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn n_params(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn get(&self, i: usize) -> &Marginal {
        &self.marginals[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Marginal> {
        self.marginals.iter()
    }

    /// Range of λ owned by marginal `i`.
    pub fn slice(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn lambda(&self) -> Vec<f64> {
        self.marginals.iter().flat_map(|m| m.params()).collect()
    }

    pub fn set_lambda(&mut self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.n_params() {
            return Err(Error::Structure(format!(
                "lambda has length {}, expected {}",
                lambda.len(),
                self.n_params()
            )));
        }
        for i in 0..self.dim() {
            let updated = self.marginals[i].with_params(&lambda[self.slice(i)]);
            updated.validate()?;
            self.marginals[i] = updated;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::integrate_composite;

    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6 * (1.0 + x.abs());
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn logpdf_examples() {
        let std = Marginal::gaussian(0.0, 1.0);
        assert!((std.logpdf(0.0).unwrap() + HALF_LN_2PI).abs() < 1e-15);
        let m = Marginal::Gaussian {
            mu: 1.0,
            log_sigma: 2f64.ln(),
        };
        assert!((m.logpdf(3.0).unwrap() - (-HALF_LN_2PI - 2f64.ln() - 0.5)).abs() < 1e-14);
        let ln = Marginal::lognormal(0.0, 1.0);
        assert!((ln.logpdf(1.0).unwrap() + HALF_LN_2PI).abs() < 1e-15);
        assert!(ln.logpdf(-1.0).is_err());
    }

    #[test]
    fn densities_normalize() {
        let g = Marginal::gaussian(0.3, 0.7);
        let total = integrate_composite(-10.0, 10.0, 32, |z| g.pdf(z).unwrap());
        assert!((total - 1.0).abs() < 1e-6);
        // log-normal in log-space: ∫ q(e^t) e^t dt
        let ln = Marginal::lognormal(0.2, 0.5);
        let total = integrate_composite(-6.0, 6.0, 32, |t| ln.pdf(t.exp()).unwrap() * t.exp());
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cdf_quantile_inverse() {
        let std = Marginal::gaussian(0.0, 1.0);
        assert!((std.cdf(0.0).unwrap() - 0.5).abs() < 1e-16);
        for m in [std, Marginal::gaussian(-1.0, 2.5), Marginal::lognormal(0.4, 0.3)] {
            for i in -3..=3 {
                let z = match m {
                    Marginal::Gaussian { .. } => i as f64,
                    Marginal::LogNormal { .. } => (i as f64 * 0.3).exp(),
                };
                assert!((m.quantile(m.cdf(z).unwrap()) - z).abs() < 1e-9 * (1.0 + z.abs()));
            }
        }
        let m = Marginal::Gaussian {
            mu: 2.0,
            log_sigma: 3f64.ln(),
        };
        assert!((m.quantile(0.5) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn derivative_examples() {
        let std = Marginal::gaussian(0.0, 1.0);
        assert_eq!(std.dquantile_dlambda(0.5), [1.0, 0.0]);
        let d = std.dquantile_dlambda(0.8413);
        assert!((d[0] - 1.0).abs() < 1e-15 && (d[1] - 1.0).abs() < 1e-3);
        let ln = Marginal::lognormal(0.0, 1.0);
        let d = ln.dquantile_dlambda(0.5);
        assert!((d[0] - 1.0).abs() < 1e-15 && d[1].abs() < 1e-15);
        assert!((std.dlogpdf_dz(1.0).unwrap() + 1.0).abs() < 1e-15);
        let g = std.dcdf_dlambda(0.0).unwrap();
        assert!((g[0] + 0.398_942_280_401_432_7).abs() < 1e-15 && g[1] == 0.0);
        assert_eq!(std.dlogpdf_dlambda(2.0).unwrap(), [2.0, 3.0]);
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mu = rng.random_range(-2.0..2.0);
            let ls = rng.random_range(-1.0..1.0);
            let v: f64 = rng.random_range(0.02..0.98);
            for m in [
                Marginal::Gaussian { mu, log_sigma: ls },
                Marginal::LogNormal { mu, log_sigma: ls },
            ] {
                let z = m.quantile(v);
                let rel = |a: f64, b: f64| (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-3);
                let dq = m.dquantile_dlambda(v);
                let dl = m.dlogpdf_dlambda(z).unwrap();
                let dc = m.dcdf_dlambda(z).unwrap();
                for k in 0..2 {
                    let at = |x: f64| {
                        let mut p = m.params();
                        p[k] = x;
                        m.with_params(&p)
                    };
                    let p0 = m.params()[k];
                    assert!(rel(dq[k], fd(|x| at(x).quantile(v), p0)));
                    assert!(rel(dl[k], fd(|x| at(x).logpdf(z).unwrap(), p0)));
                    assert!(rel(dc[k], fd(|x| at(x).cdf(z).unwrap(), p0)));
                }
                assert!(rel(m.dlogpdf_dz(z).unwrap(), fd(|x| m.logpdf(x).unwrap(), z)));
                assert!(rel(m.dquantile_dv(v), fd(|x| m.quantile(x), v)));
                assert!(rel(m.dquantile_dv(v), 1.0 / m.pdf(z).unwrap()));
            }
        }
    }

    #[test]
    fn marginal_set_offsets_partition_lambda() {
        let mut set = MarginalSet::new(vec![Marginal::gaussian(1.0, 2.0), Marginal::lognormal(0.0, 1.0)]).unwrap();
        assert_eq!(set.n_params(), 4);
        assert_eq!(set.slice(1), 2..4);
        let mut lam = set.lambda();
        lam[2] = 0.5;
        set.set_lambda(&lam).unwrap();
        assert_eq!(set.get(1).mu(), 0.5);
        assert!(set.set_lambda(&[0.0]).is_err());
        assert!(MarginalSet::new(vec![]).is_err());
        let json = serde_json::to_string(&set).unwrap();
        assert!(json.contains(r#""kind":"lognormal""#));
        let back: MarginalSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, set);
    }
}
