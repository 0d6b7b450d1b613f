//! Kendall's τ ↔ parameter maps for the unrotated families.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::special::{debye1, integrate_gl64};

use super::Family;

/// Bracket and tolerance for the families without a closed-form inverse.
const BISECT_LO: f64 = 1e-4;
const BISECT_HI: f64 = 50.0;
const BISECT_TOL: f64 = 1e-8;

pub fn frank_tau(theta: f64) -> f64 {
    if theta.abs() < 1e-6 {
        return theta / 9.0;
    }
    1.0 - 4.0 / theta * (1.0 - debye1(theta))
}

/// Joe τ from the Archimedean generator integral
/// `τ = 1 + (4/θ) ∫_0^1 (1 - s^θ) ln(1 - s^θ) s^{1-θ} ds`,
/// integrated on geometrically graded panels towards the log singularity at 1.
pub fn joe_tau(theta: f64) -> f64 {
    let f = |s: f64| {
        let st = s.powf(theta);
        if st >= 1.0 {
            return 0.0;
        }
        (1.0 - st) * (-st).ln_1p() * s.powf(1.0 - theta)
    };
    let mut integral = integrate_gl64(0.0, 0.5, f);
    let mut lo = 0.5;
    let mut width = 0.5;
    for _ in 0..45 {
        width *= 0.5;
        let hi = lo + width;
        integral += integrate_gl64(lo, hi, f);
        lo = hi;
    }
    1.0 + 4.0 / theta * integral
}

/// τ of the unrotated family at parameters `theta`.
pub fn tau_from_theta_base(family: Family, theta: &[f64]) -> f64 {
    match family {
        Family::Independence => 0.0,
        Family::Gaussian | Family::StudentT => 2.0 / PI * theta[0].asin(),
        Family::Clayton => theta[0] / (theta[0] + 2.0),
        Family::Gumbel => 1.0 - 1.0 / theta[0],
        Family::Frank => frank_tau(theta[0]),
        Family::Joe => joe_tau(theta[0]),
    }
}

/// Parameter of the unrotated family with Kendall's τ equal to `tau`.
pub fn theta_from_tau(family: Family, tau: f64) -> Result<f64> {
    let out_of_range = |range: &str| {
        Err(Error::domain(
            family.to_string(),
            format!("tau {tau} outside attainable range {range}; use a rotated family for negative dependence"),
        ))
    };
    if !tau.is_finite() {
        return out_of_range("(finite)");
    }
    match family {
        Family::Independence => Ok(0.0),
        Family::Gaussian | Family::StudentT => {
            if tau.abs() >= 1.0 {
                return out_of_range("(-1, 1)");
            }
            Ok((PI / 2.0 * tau).sin())
        }
        Family::Clayton => {
            if tau <= 0.0 || tau >= 1.0 {
                return out_of_range("(0, 1)");
            }
            Ok(2.0 * tau / (1.0 - tau))
        }
        Family::Gumbel => {
            if !(0.0..1.0).contains(&tau) {
                return out_of_range("[0, 1)");
            }
            Ok(1.0 / (1.0 - tau))
        }
        Family::Frank => bisect_tau(family, tau, BISECT_LO, BISECT_HI, frank_tau),
        Family::Joe => bisect_tau(family, tau, 1.0 + BISECT_LO, BISECT_HI, joe_tau),
    }
}

fn bisect_tau(family: Family, tau: f64, lo: f64, hi: f64, tau_of: fn(f64) -> f64) -> Result<f64> {
    let (tau_lo, tau_hi) = (tau_of(lo), tau_of(hi));
    if tau <= tau_lo || tau >= tau_hi {
        return Err(Error::domain(
            family.to_string(),
            format!(
                "tau {tau} outside attainable range ({tau_lo:.6}, {tau_hi:.6}); use a rotated family for negative dependence"
            ),
        ));
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > BISECT_TOL {
        let mid = 0.5 * (a + b);
        if tau_of(mid) < tau {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}
