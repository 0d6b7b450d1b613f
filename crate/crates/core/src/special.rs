//! Scalar special functions shared by the copula, marginal and model code.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::sync::OnceLock;

use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::ln_gamma;

/// Lower and upper clamp applied to every unit-interval argument.
pub const UNIT_EPS: f64 = 1e-10;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn clamp_unit(u: f64) -> f64 {
    u.clamp(UNIT_EPS, 1.0 - UNIT_EPS)
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

#[inline]
pub fn norm_ppf(p: f64) -> f64 {
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    // One Halley step against the erfc-based CDF.
    let e = norm_cdf(x) - p;
    let u = e / norm_pdf(x);
    x - u / (1.0 + 0.5 * x * u)
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log density of Student's t with `nu` degrees of freedom.
pub fn t_ln_pdf(x: f64, nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu * PI).ln()
        - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
}

pub fn t_pdf(x: f64, nu: f64) -> f64 {
    t_ln_pdf(x, nu).exp()
}

/// CDF of Student's t with real-valued degrees of freedom.
pub fn t_cdf(x: f64, nu: f64) -> f64 {
    if x == 0.0 {
        return 0.5;
    }
    let x2 = x * x;
    // Pick the incomplete-beta argument that avoids cancellation.
    let tail = if x2 < nu {
        let half_central = 0.5 * beta_reg(0.5, 0.5 * nu, x2 / (nu + x2));
        0.5 - half_central
    } else {
        0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + x2))
    };
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Quantile of Student's t; normal start refined by safeguarded Newton steps.
pub fn t_ppf(p: f64, nu: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        return -t_ppf(1.0 - p, nu);
    }
    let q = 1.0 - p;
    // Initial guess from the incomplete-beta inverse.
    let y = statrs::function::beta::inv_beta_reg(0.5 * nu, 0.5, 2.0 * q);
    let mut x = if y > 0.0 && y < 1.0 {
        (nu * (1.0 - y) / y).sqrt()
    } else {
        norm_ppf(p)
    };
    if !x.is_finite() || x < 0.0 {
        x = norm_ppf(p).max(0.0);
    }
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    for _ in 0..100 {
        let f = t_cdf(x, nu);
        let resid = f - p;
        if resid > 0.0 {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
        let dens = t_pdf(x, nu);
        let mut next = x - resid / dens;
        if !next.is_finite() || next <= lo || next >= hi {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * x + 1.0 };
        }
        if (next - x).abs() <= 1e-14 * (1.0 + x.abs()) {
            return next;
        }
        x = next;
    }
    x
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Cached 64-point rule.
pub fn gauss_legendre_64() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(64))
}

fn cached_rule(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static R6: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static R12: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static R16: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static R20: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    match n {
        6 => R6.get_or_init(|| gauss_legendre(6)),
        12 => R12.get_or_init(|| gauss_legendre(12)),
        16 => R16.get_or_init(|| gauss_legendre(16)),
        20 => R20.get_or_init(|| gauss_legendre(20)),
        64 => gauss_legendre_64(),
        _ => panic!("no cached Gauss-Legendre rule of order {n}"),
    }
}

/// Integrate `f` over `[a, b]` with the 64-point Gauss-Legendre rule.
pub fn integrate_gl64(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    integrate_with(cached_rule(64), a, b, f)
}

/// Composite 16-point Gauss-Legendre over `panels` equal sub-intervals.
pub fn integrate_composite(a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
    let rule = cached_rule(16);
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let lo = a + p as f64 * h;
            integrate_with(rule, lo, lo + h, &f)
        })
        .sum()
}

fn integrate_with(rule: &(Vec<f64>, Vec<f64>), a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (nodes, weights) = rule;
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    nodes
        .iter()
        .zip(weights)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Debye function of order one, `D1(x) = (1/x) ∫_0^x t / (e^t - 1) dt`.
pub fn debye1(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        return 1.0 - x / 4.0;
    }
    let integral = integrate_gl64(0.0, x, |t| {
        if t.abs() < 1e-12 {
            1.0 - t / 2.0
        } else {
            t / t.exp_m1()
        }
    });
    integral / x
}

/// Upper orthant probability `P(X > h, Y > k)` of a standard bivariate normal
/// with correlation `r` (Drezner-Wesolowsky as refined by Genz).
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    let (rule, lg) = if r.abs() < 0.3 {
        (cached_rule(6), 3)
    } else if r.abs() < 0.75 {
        (cached_rule(12), 6)
    } else {
        (cached_rule(20), 10)
    };
    // Negative half of the symmetric rule.
    let xs = &rule.0[..lg];
    let ws = &rule.1[..lg];
    let two_pi = 2.0 * PI;

    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = r.asin();
        for (x, w) in xs.iter().zip(ws) {
            for sign in [-1.0, 1.0] {
                let sn = (asr * (sign * x + 1.0) / 2.0).sin();
                bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        return bvn * asr / (2.0 * two_pi) + norm_cdf(-h) * norm_cdf(-k);
    }
    let mut k = k;
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let as_ = (1.0 - r) * (1.0 + r);
        let mut a = as_.sqrt();
        let bs = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a
            * (-(bs / as_ + hk) / 2.0).exp()
            * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
        if hk > -160.0 {
            let b = bs.sqrt();
            bvn -= (-hk / 2.0).exp()
                * two_pi.sqrt()
                * norm_cdf(-b / a)
                * b
                * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for (x, w) in xs.iter().zip(ws) {
            for sign in [-1.0, 1.0] {
                let xs2 = (a * (sign * x + 1.0)).powi(2);
                let rs = (1.0 - xs2).sqrt();
                bvn += a
                    * w
                    * ((-bs / (2.0 * xs2) - hk / (1.0 + rs)).exp() / rs
                        - (-(bs / xs2 + hk) / 2.0).exp() * (1.0 + c * xs2 * (1.0 + d * xs2)));
            }
        }
        bvn = -bvn / two_pi;
    }
    if r > 0.0 {
        bvn + norm_cdf(-h.max(k))
    } else {
        let mut out = -bvn;
        if k > h {
            out += norm_cdf(k) - norm_cdf(h);
        }
        out
    }
}

/// `P(X <= x, Y <= y)` for a standard bivariate normal with correlation `r`.
pub fn bvn_cdf(x: f64, y: f64, r: f64) -> f64 {
    bvn_upper(-x, -y, r).clamp(0.0, 1.0)
}

/// Ranks (1-based, ties averaged) scaled to `rank / (n + 1)`.
pub fn pseudo_obs(column: &[f64]) -> Vec<f64> {
    let n = column.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| column[a].total_cmp(&column[b]));
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && column[idx[end]] == column[idx[start]] {
            end += 1;
        }
        let avg_rank = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            out[i] = avg_rank / (n as f64 + 1.0);
        }
        start = end;
    }
    out
}
