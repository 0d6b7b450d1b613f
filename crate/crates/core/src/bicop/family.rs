//! Closed forms for the unrotated families. All arguments are assumed to be
//! clamped into the open unit square and parameters to be valid.

use crate::error::{Error, Result};
use crate::special::{
    bvn_cdf, integrate_composite, norm_cdf, norm_pdf, norm_ppf, t_cdf, t_ln_pdf, t_ppf, UNIT_EPS,
};

use super::Family;

/// Derivatives of `log c` and of `h(u|v)` in the base orientation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Partials {
    pub d_logc_du: f64,
    pub d_logc_dv: f64,
    pub d_logc_dtheta: f64,
    pub dh_du: f64,
    pub dh_dv: f64,
    pub dh_dtheta: f64,
}

/// `ln(u^-θ + v^-θ - 1)` without overflow, given `a = -θ ln u`, `b = -θ ln v`.
fn clayton_ln_a(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m < 30.0 {
        (a.exp_m1() + b.exp_m1()).ln_1p()
    } else {
        m + ((a - m).exp() + (b - m).exp() - (-m).exp()).ln()
    }
}

fn ln_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

struct GumbelTerms {
    ln_x: f64,
    ln_y: f64,
    ln_a: f64,
    a_pow: f64, // A^{1/θ}
}

fn gumbel_terms(theta: f64, u: f64, v: f64) -> GumbelTerms {
    let ln_x = (-u.ln()).ln();
    let ln_y = (-v.ln()).ln();
    let ln_a = ln_add_exp(theta * ln_x, theta * ln_y);
    GumbelTerms {
        ln_x,
        ln_y,
        ln_a,
        a_pow: (ln_a / theta).exp(),
    }
}

struct JoeTerms {
    ln_ub: f64,
    ln_vb: f64,
    a: f64,
}

fn joe_terms(theta: f64, u: f64, v: f64) -> JoeTerms {
    let ln_ub = (-u).ln_1p();
    let ln_vb = (-v).ln_1p();
    let ub_t = (theta * ln_ub).exp();
    let vb_t = (theta * ln_vb).exp();
    JoeTerms {
        ln_ub,
        ln_vb,
        a: ub_t + vb_t - ub_t * vb_t,
    }
}

pub fn log_density(family: Family, th: &[f64], u: f64, v: f64) -> f64 {
    match family {
        Family::Independence => 0.0,
        Family::Gaussian => {
            let rho = th[0];
            let (x, y) = (norm_ppf(u), norm_ppf(v));
            let s2 = 1.0 - rho * rho;
            -0.5 * s2.ln() - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * s2)
        }
        Family::StudentT => {
            let (rho, nu) = (th[0], th[1]);
            student_t_ln_density_xy(rho, nu, t_ppf(u, nu), t_ppf(v, nu))
        }
        Family::Clayton => {
            let t = th[0];
            let (lu, lv) = (u.ln(), v.ln());
            let ln_a = clayton_ln_a(-t * lu, -t * lv);
            t.ln_1p() - (1.0 + t) * (lu + lv) - (2.0 + 1.0 / t) * ln_a
        }
        Family::Gumbel => {
            let t = th[0];
            let g = gumbel_terms(t, u, v);
            -g.a_pow - u.ln() - v.ln()
                + (t - 1.0) * (g.ln_x + g.ln_y)
                + (2.0 / t - 2.0) * g.ln_a
                + ((t - 1.0) / g.a_pow).ln_1p()
        }
        Family::Frank => {
            let t = th[0];
            let g = -(-t).exp_m1();
            let den = g - (-(-t * u).exp_m1()) * (-(-t * v).exp_m1());
            t.ln() + g.ln() - t * (u + v) - 2.0 * den.ln()
        }
        Family::Joe => {
            let t = th[0];
            let j = joe_terms(t, u, v);
            (1.0 / t - 2.0) * j.a.ln() + (t - 1.0) * (j.ln_ub + j.ln_vb) + (t - 1.0 + j.a).ln()
        }
    }
}

pub fn cdf(family: Family, th: &[f64], u: f64, v: f64) -> f64 {
    match family {
        Family::Independence => u * v,
        Family::Gaussian => bvn_cdf(norm_ppf(u), norm_ppf(v), th[0]),
        Family::StudentT => student_t_cdf(th[0], th[1], u, v),
        Family::Clayton => {
            let t = th[0];
            (-clayton_ln_a(-t * u.ln(), -t * v.ln()) / t).exp()
        }
        Family::Gumbel => (-gumbel_terms(th[0], u, v).a_pow).exp(),
        Family::Frank => {
            let t = th[0];
            let ratio = (-t * u).exp_m1() * (-t * v).exp_m1() / (-t).exp_m1();
            -ratio.ln_1p() / t
        }
        Family::Joe => {
            let t = th[0];
            let j = joe_terms(t, u, v);
            -((j.a.ln() / t).exp_m1())
        }
    }
}

/// Bivariate t copula CDF by quadrature of the conditional distribution
/// over the second coordinate, `w = y - s/(1-s)` on `s ∈ [0, 1)`.
/// Student-t copula log density at t quantiles `x`, `y`.
pub(crate) fn student_t_ln_density_xy(rho: f64, nu: f64, x: f64, y: f64) -> f64 {
    let s2 = 1.0 - rho * rho;
    let joint = -(2.0 * std::f64::consts::PI).ln()
        - 0.5 * s2.ln()
        - 0.5 * (nu + 2.0) * ((x * x + y * y - 2.0 * rho * x * y) / (nu * s2)).ln_1p();
    joint - t_ln_pdf(x, nu) - t_ln_pdf(y, nu)
}

fn student_t_cdf(rho: f64, nu: f64, u: f64, v: f64) -> f64 {
    let x = t_ppf(u, nu);
    let y = t_ppf(v, nu);
    let s2 = 1.0 - rho * rho;
    let value = integrate_composite(0.0, 1.0, 16, |s| {
        if s >= 1.0 {
            return 0.0;
        }
        let w = y - s / (1.0 - s);
        let scale = ((nu + w * w) * s2 / (nu + 1.0)).sqrt();
        let cond = t_cdf((x - rho * w) / scale, nu + 1.0);
        cond * t_ln_pdf(w, nu).exp() / ((1.0 - s) * (1.0 - s))
    });
    value.clamp(0.0, u.min(v))
}

/// `h(u|v) = ∂C(u,v)/∂v`.
pub fn hfunc(family: Family, th: &[f64], u: f64, v: f64) -> f64 {
    let h = match family {
        Family::Independence => u,
        Family::Gaussian => {
            let rho = th[0];
            norm_cdf((norm_ppf(u) - rho * norm_ppf(v)) / (1.0 - rho * rho).sqrt())
        }
        Family::StudentT => {
            let (rho, nu) = (th[0], th[1]);
            let (x, y) = (t_ppf(u, nu), t_ppf(v, nu));
            let scale = ((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0)).sqrt();
            t_cdf((x - rho * y) / scale, nu + 1.0)
        }
        Family::Clayton => {
            let t = th[0];
            let (lu, lv) = (u.ln(), v.ln());
            let ln_a = clayton_ln_a(-t * lu, -t * lv);
            (-(t + 1.0) * lv - (1.0 + 1.0 / t) * ln_a).exp()
        }
        Family::Gumbel => {
            let t = th[0];
            let g = gumbel_terms(t, u, v);
            (-g.a_pow + (1.0 / t - 1.0) * g.ln_a + (t - 1.0) * g.ln_y - v.ln()).exp()
        }
        Family::Frank => {
            let t = th[0];
            let num = (-t * v).exp() * (-t * u).exp_m1();
            let den = (-t).exp_m1() + (-t * u).exp_m1() * (-t * v).exp_m1();
            num / den
        }
        Family::Joe => {
            let t = th[0];
            let j = joe_terms(t, u, v);
            ((1.0 / t - 1.0) * j.a.ln() + (t - 1.0) * j.ln_vb).exp() * (-(t * j.ln_ub).exp_m1())
        }
    };
    h.clamp(0.0, 1.0)
}

/// Closed-form inverse of `h(·|v)` where one exists.
pub fn hinv_closed(family: Family, th: &[f64], w: f64, v: f64) -> Option<f64> {
    let u = match family {
        Family::Independence => w,
        Family::Gaussian => {
            let rho = th[0];
            norm_cdf(norm_ppf(w) * (1.0 - rho * rho).sqrt() + rho * norm_ppf(v))
        }
        Family::StudentT => {
            let (rho, nu) = (th[0], th[1]);
            let y = t_ppf(v, nu);
            let scale = ((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0)).sqrt();
            t_cdf(t_ppf(w, nu + 1.0) * scale + rho * y, nu)
        }
        Family::Clayton => {
            let t = th[0];
            let b = -t * v.ln();
            let big_w = (-t / (1.0 + t) * w.ln()).exp_m1();
            let s = b + big_w.ln();
            let ln_inner = if s > 30.0 {
                s + (-s).exp().ln_1p()
            } else {
                (b.exp() * big_w).ln_1p()
            };
            (-ln_inner / t).exp()
        }
        Family::Frank => {
            let t = th[0];
            let g = (-t).exp_m1();
            let b = (-t * v).exp_m1();
            let a = w * g / ((-t * v).exp() - w * b);
            -a.ln_1p() / t
        }
        Family::Gumbel | Family::Joe => return None,
    };
    Some(u)
}

/// Safeguarded Newton iteration for `h(u|v) = w`; uses `∂h/∂u = c(u,v)`.
pub fn hinv_numeric(family: Family, th: &[f64], w: f64, v: f64) -> Result<f64> {
    hinv_newton(family, th, w, v, w)
}

/// Newton iteration for `h(u|v) = w` from `start`, bracketed on the unit interval.
pub fn hinv_newton(family: Family, th: &[f64], w: f64, v: f64, start: f64) -> Result<f64> {
    let (mut lo, mut hi) = (UNIT_EPS, 1.0 - UNIT_EPS);
    let h_lo = hfunc(family, th, lo, v);
    let h_hi = hfunc(family, th, hi, v);
    if w <= h_lo {
        return Ok(lo);
    }
    if w >= h_hi {
        return Ok(hi);
    }
    let mut u = if start.is_finite() { start.clamp(lo, hi) } else { w.clamp(lo, hi) };
    let mut resid = f64::INFINITY;
    for _ in 0..200 {
        resid = hfunc(family, th, u, v) - w;
        if resid.abs() < 1e-15 {
            return Ok(u);
        }
        if resid > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let dens = log_density(family, th, u, v).exp();
        let mut next = u - resid / dens;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() < 1e-16 || hi - lo < 1e-16 {
            return Ok(next);
        }
        u = next;
    }
    if resid.abs() < 1e-10 {
        Ok(u)
    } else {
        Err(Error::numerical(format!("{family:?} h-inverse"), resid))
    }
}

/// Analytic partials where available; `None` selects the finite-difference path.
pub fn analytic_partials(family: Family, th: &[f64], u: f64, v: f64) -> Option<Partials> {
    match family {
        Family::Independence => Some(Partials {
            dh_du: 1.0,
            ..Partials::default()
        }),
        Family::Gaussian => {
            let rho = th[0];
            let (x, y) = (norm_ppf(u), norm_ppf(v));
            let s2 = 1.0 - rho * rho;
            let s = s2.sqrt();
            let (px, py) = (norm_pdf(x), norm_pdf(y));
            let q = rho * rho * (x * x + y * y) - 2.0 * rho * x * y;
            let dq = 2.0 * rho * (x * x + y * y) - 2.0 * x * y;
            let a = (x - rho * y) / s;
            let pa = norm_pdf(a);
            Some(Partials {
                d_logc_du: -(rho * rho * x - rho * y) / s2 / px,
                d_logc_dv: -(rho * rho * y - rho * x) / s2 / py,
                d_logc_dtheta: rho / s2 - (dq * s2 + 2.0 * rho * q) / (2.0 * s2 * s2),
                dh_du: pa / (s * px),
                dh_dv: -rho * pa / (s * py),
                dh_dtheta: pa * (rho * x - y) / (s2 * s),
            })
        }
        Family::Clayton => {
            let t = th[0];
            let (lu, lv) = (u.ln(), v.ln());
            let (a, b) = (-t * lu, -t * lv);
            let ln_a = clayton_ln_a(a, b);
            let ru = (a - ln_a).exp();
            let rv = (b - ln_a).exp();
            // A'/A with respect to θ
            let da_over_a = -(ru * lu + rv * lv);
            let h = (-(t + 1.0) * lv - (1.0 + 1.0 / t) * ln_a).exp();
            let dlogh_du = (1.0 + t) * ru / u;
            let dlogh_dv = (-(t + 1.0) + (1.0 + t) * rv) / v;
            let dlogh_dt = -lv + ln_a / (t * t) - (1.0 + 1.0 / t) * da_over_a;
            Some(Partials {
                d_logc_du: (-(1.0 + t) + (2.0 * t + 1.0) * ru) / u,
                d_logc_dv: (-(1.0 + t) + (2.0 * t + 1.0) * rv) / v,
                d_logc_dtheta: 1.0 / (1.0 + t) - (lu + lv) + ln_a / (t * t)
                    - (2.0 + 1.0 / t) * da_over_a,
                dh_du: h * dlogh_du,
                dh_dv: h * dlogh_dv,
                dh_dtheta: h * dlogh_dt,
            })
        }
        _ => None,
    }
}
