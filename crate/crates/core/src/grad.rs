//! Monte Carlo ELBO estimates and their gradients in `(λ, η)`.
//!
//! Sample `s` always uses the uniforms of stream `s` under the given seed, and
//! per-sample results are reduced in index order, so every estimate is
//! bitwise reproducible regardless of the thread count.

use std::sync::OnceLock;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::dist::CopulaVariationalDist;
use crate::error::{Error, Result};
use crate::rng::uniforms;
use crate::sampler::{path_grad_eta, path_grad_lambda, sample, SamplePath};

/// Default Monte Carlo batch size.
pub const DEFAULT_SAMPLES: usize = 1024;

/// Unnormalized log joint `log p(x, z)` with the data held inside.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn logp(&self, z: &[f64]) -> Result<f64>;
}

/// A log density that also provides `∇_z log p(x, z)`.
pub trait TargetModel: LogDensity {
    fn grad_logp(&self, z: &[f64]) -> Result<Vec<f64>>;
}

impl<T: LogDensity + ?Sized> LogDensity for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn logp(&self, z: &[f64]) -> Result<f64> {
        (**self).logp(z)
    }
}

impl<T: TargetModel + ?Sized> TargetModel for Box<T> {
    fn grad_logp(&self, z: &[f64]) -> Result<Vec<f64>> {
        (**self).grad_logp(z)
    }
}

/// Central difference of `f` at `z` with step `1e-5 (1 + |z_i|)`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> Result<f64>, z: &[f64]) -> Result<Vec<f64>> {
    let mut x = z.to_vec();
    let mut g = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        let h = 1e-5 * (1.0 + z[i].abs());
        x[i] = z[i] + h;
        let fp = f(&x)?;
        x[i] = z[i] - h;
        let fm = f(&x)?;
        x[i] = z[i];
        let d = (fp - fm) / (2.0 * h);
        if !d.is_finite() {
            return Err(Error::numerical(format!("finite difference in coordinate {i}"), d));
        }
        g.push(d);
    }
    Ok(g)
}

/// `|a - b| / max(|a|, |b|, 1)`: relative for large values, absolute near zero.
pub fn scaled_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Outcome of comparing a model gradient with finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_error: f64,
    /// Point and coordinate of the worst disagreement.
    pub worst: (usize, usize),
}

/// Compare `grad_logp` with finite differences at `n_points` points drawn
/// around `center` with per-coordinate spread `scale`.
pub fn verify_model_gradient<M: TargetModel + ?Sized>(
    model: &M,
    center: &[f64],
    scale: f64,
    n_points: usize,
    seed: u64,
) -> Result<GradientCheck> {
    let mut check = GradientCheck {
        max_error: 0.0,
        worst: (0, 0),
    };
    for p in 0..n_points {
        let u = uniforms(seed, p as u64, center.len());
        let z: Vec<f64> = center
            .iter()
            .zip(&u)
            .map(|(c, x)| c + scale * crate::special::norm_ppf(*x))
            .collect();
        let analytic = model.grad_logp(&z)?;
        let fd = fd_gradient(|x| model.logp(x), &z)?;
        for (i, (a, b)) in analytic.iter().zip(&fd).enumerate() {
            let e = scaled_error(*a, *b);
            if e > check.max_error || e.is_nan() {
                check.max_error = e;
                check.worst = (p, i);
            }
        }
    }
    Ok(check)
}

/// A Monte Carlo ELBO estimate with optional gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub elbo: f64,
    pub grad_lambda: Vec<f64>,
    pub grad_eta: Vec<f64>,
    pub n_samples: usize,
    pub elbo_std_err: f64,
    /// Standard errors of the gradient coordinates.
    pub lambda_std_err: Vec<f64>,
    pub eta_std_err: Vec<f64>,
}

impl GradEstimate {
    /// Per-coordinate sample variance of the single-sample estimator.
    pub fn sample_variance(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_samples as f64;
        let var = |se: &Vec<f64>| se.iter().map(|s| s * s * n).collect();
        (var(&self.lambda_std_err), var(&self.eta_std_err))
    }
}

fn pool() -> &'static ThreadPool {
    static POOL: OnceLock<ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = std::env::var("CVI_THREADS").ok().and_then(|s| s.trim().parse::<usize>().ok()) {
            if n > 0 {
                builder = builder.num_threads(n);
            }
        }
        builder.build().expect("thread pool")
    })
}

/// Evaluate `f` for samples `0..m`, in parallel, returning results in order.
fn per_sample<T: Send>(m: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    pool().install(|| (0..m).into_par_iter().map(&f).collect())
}

fn draw(dist: &CopulaVariationalDist, seed: u64, s: usize) -> Result<SamplePath> {
    sample(dist, &uniforms(seed, s as u64, dist.dim()))
}

fn model_value(value: Result<f64>, s: usize) -> Result<f64> {
    match value {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(Error::Model {
            sample: s,
            message: format!("log density is {v}"),
        }),
        Err(e) => Err(Error::Model {
            sample: s,
            message: e.to_string(),
        }),
    }
}

fn model_grad(value: Result<Vec<f64>>, s: usize) -> Result<Vec<f64>> {
    match value {
        Ok(g) if g.iter().all(|x| x.is_finite()) => Ok(g),
        Ok(_) => Err(Error::Model {
            sample: s,
            message: "non-finite gradient".into(),
        }),
        Err(e) => Err(Error::Model {
            sample: s,
            message: e.to_string(),
        }),
    }
}

fn check_dim<M: LogDensity + ?Sized>(dist: &CopulaVariationalDist, model: &M, m: usize, min_m: usize) -> Result<()> {
    if model.dim() != dist.dim() {
        return Err(Error::Structure(format!(
            "model has dimension {} but the variational family {}",
            model.dim(),
            dist.dim()
        )));
    }
    if m < min_m {
        return Err(Error::Config(format!("need at least {min_m} samples, got {m}")));
    }
    Ok(())
}

fn mean_and_std_err(xs: impl ExactSizeIterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0) / n).sqrt())
}

/// Mean and standard errors of the columns of per-sample rows.
fn column_stats(rows: &[Vec<f64>], width: usize) -> (Vec<f64>, Vec<f64>) {
    (0..width)
        .map(|c| mean_and_std_err(rows.iter().map(|r| r[c])))
        .unzip()
}

/// ELBO estimate `mean(log p(x, z) - log q(z))` from `m` draws.
pub fn elbo<M: LogDensity + ?Sized>(dist: &CopulaVariationalDist, model: &M, m: usize, seed: u64) -> Result<GradEstimate> {
    check_dim(dist, model, m, 1)?;
    let values = per_sample(m, |s| {
        let path = draw(dist, seed, s)?;
        let lp = model_value(model.logp(&path.z), s)?;
        Ok(lp - dist.log_q(&path.z)?)
    })?;
    let (elbo, elbo_std_err) = mean_and_std_err(values.iter().copied());
    Ok(GradEstimate {
        elbo,
        grad_lambda: Vec::new(),
        grad_eta: Vec::new(),
        n_samples: m,
        elbo_std_err,
        lambda_std_err: Vec::new(),
        eta_std_err: Vec::new(),
    })
}

/// Score-function gradient with a leave-one-out baseline.
pub fn grad_score<M: LogDensity + ?Sized>(
    dist: &CopulaVariationalDist,
    model: &M,
    m: usize,
    seed: u64,
) -> Result<GradEstimate> {
    check_dim(dist, model, m, 2)?;
    let draws = per_sample(m, |s| {
        let path = draw(dist, seed, s)?;
        let lp = model_value(model.logp(&path.z), s)?;
        let score = dist.grad_log_q_params(&path.z)?;
        Ok((lp - score.log_q, score))
    })?;
    let total: f64 = draws.iter().map(|(f, _)| f).sum();
    let mf = m as f64;
    let (n_lambda, n_eta) = (dist.n_lambda(), dist.n_eta());
    let rows: Vec<Vec<f64>> = draws
        .iter()
        .map(|(f, score)| {
            let signal = f - (total - f) / (mf - 1.0);
            score.d_lambda.iter().chain(&score.d_eta).map(|g| g * signal).collect()
        })
        .collect();
    let (mean, se) = column_stats(&rows, n_lambda + n_eta);
    let (elbo, elbo_std_err) = mean_and_std_err(draws.iter().map(|(f, _)| *f));
    Ok(GradEstimate {
        elbo,
        grad_lambda: mean[..n_lambda].to_vec(),
        grad_eta: mean[n_lambda..].to_vec(),
        n_samples: m,
        elbo_std_err,
        lambda_std_err: se[..n_lambda].to_vec(),
        eta_std_err: se[n_lambda..].to_vec(),
    })
}

/// Reparameterized gradient: `(∇_z log p - ∇_z log q)` pushed through the
/// sampling path `z(u; λ, η)`.
pub fn grad_reparam<M: TargetModel + ?Sized>(
    dist: &CopulaVariationalDist,
    model: &M,
    m: usize,
    seed: u64,
) -> Result<GradEstimate> {
    reparam_blocks(dist, model, m, seed, true)
}

/// As [`grad_reparam`]; with `with_eta = false` the η gradient is left at zero
/// and its path derivative is not computed.
pub(crate) fn reparam_blocks<M: TargetModel + ?Sized>(
    dist: &CopulaVariationalDist,
    model: &M,
    m: usize,
    seed: u64,
    with_eta: bool,
) -> Result<GradEstimate> {
    check_dim(dist, model, m, 1)?;
    let (n_lambda, n_eta) = (dist.n_lambda(), dist.n_eta());
    let draws = per_sample(m, |s| {
        let path = draw(dist, seed, s)?;
        let lp = model_value(model.logp(&path.z), s)?;
        let gp = model_grad(model.grad_logp(&path.z), s)?;
        let (lq, gq) = dist.grad_log_q_z(&path.z)?;
        let gz: Vec<f64> = gp.iter().zip(&gq).map(|(a, b)| a - b).collect();
        let mut row = vec![0.0; n_lambda + n_eta];
        for (i, dz) in path_grad_lambda(&path, dist).into_iter().enumerate() {
            for (j, slot) in dist.marginals.slice(i).enumerate() {
                row[slot] = gz[i] * dz[j];
            }
        }
        if with_eta && n_eta > 0 {
            for (i, dz) in path_grad_eta(&path, dist)?.into_iter().enumerate() {
                for (c, x) in dz.into_iter().enumerate() {
                    row[n_lambda + c] += gz[i] * x;
                }
            }
        }
        Ok((lp - lq, row))
    })?;
    let (values, rows): (Vec<f64>, Vec<Vec<f64>>) = draws.into_iter().unzip();
    let (mean, se) = column_stats(&rows, n_lambda + n_eta);
    let (elbo, elbo_std_err) = mean_and_std_err(values.into_iter());
    Ok(GradEstimate {
        elbo,
        grad_lambda: mean[..n_lambda].to_vec(),
        grad_eta: mean[n_lambda..].to_vec(),
        n_samples: m,
        elbo_std_err,
        lambda_std_err: se[..n_lambda].to_vec(),
        eta_std_err: se[n_lambda..].to_vec(),
    })
}

/// Common-random-number average of `log p(z) - log q_fixed(z)` over the
/// sampling path of `moved`.
///
/// Differencing this in the parameters of `moved` (with `fixed` held at the
/// base point) reproduces the reparameterized gradient sample by sample.
pub fn path_objective<M: LogDensity + ?Sized>(
    moved: &CopulaVariationalDist,
    fixed: &CopulaVariationalDist,
    model: &M,
    m: usize,
    seed: u64,
) -> Result<f64> {
    check_dim(moved, model, m, 1)?;
    let values = per_sample(m, |s| {
        let z = draw(moved, seed, s)?.z;
        Ok(model_value(model.logp(&z), s)? - fixed.log_q(&z)?)
    })?;
    Ok(values.iter().sum::<f64>() / m as f64)
}
