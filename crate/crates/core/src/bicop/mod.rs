//! Bivariate copula families: densities, distribution functions, conditional
//! distribution functions (h-functions), their inverses, Kendall's τ maps and
//! partial derivatives.
//!
//! The h-function convention is `h(u|v) = ∂C(u,v)/∂v`. Rotations follow
//!
//! ```text
//! c_90(u,v)  = c(v, 1-u)      C_90(u,v)  = v - C(1-u, v)
//! c_180(u,v) = c(1-u, 1-v)    C_180(u,v) = u + v - 1 + C(1-u, 1-v)
//! c_270(u,v) = c(1-v, u)      C_270(u,v) = u - C(u, 1-v)
//! ```
//!
//! Every base family shipped here is exchangeable, so `c(v, 1-u) = c(1-u, v)`.
//!
//! All unit-interval arguments are clamped to `[1e-10, 1 - 1e-10]`.

mod family;
mod tau;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{clamp_unit, sigmoid, softplus, softplus_inv, UNIT_EPS};

pub(crate) use family::student_t_ln_density_xy;
pub use family::Partials;
pub use tau::{tau_from_theta_base, theta_from_tau};

/// Degrees-of-freedom grid searched for Student-t pair copulas.
pub const STUDENT_T_DF_GRID: [f64; 3] = [4.0, 8.0, 15.0];
/// Degrees of freedom used when a Student-t copula is built from τ alone.
pub const STUDENT_T_DEFAULT_DF: f64 = 4.0;

const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    Independence,
    Gaussian,
    StudentT,
    Clayton,
    Gumbel,
    Frank,
    Joe,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Independence,
        Family::Gaussian,
        Family::StudentT,
        Family::Clayton,
        Family::Gumbel,
        Family::Frank,
        Family::Joe,
    ];

    pub fn supports_rotation(self) -> bool {
        matches!(self, Family::Clayton | Family::Gumbel | Family::Joe)
    }

    pub fn n_theta(self) -> usize {
        match self {
            Family::Independence => 0,
            Family::StudentT => 2,
            _ => 1,
        }
    }

    /// Open range of Kendall's τ the unrotated family can attain.
    pub fn tau_range(self) -> (f64, f64) {
        match self {
            Family::Independence => (0.0, 0.0),
            Family::Gaussian | Family::StudentT => (-1.0, 1.0),
            Family::Clayton | Family::Gumbel | Family::Frank | Family::Joe => (0.0, 1.0),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Family::ALL
            .into_iter()
            .find(|f| f.to_string().to_ascii_lowercase() == lower || (lower == "t" && *f == Family::StudentT))
            .ok_or_else(|| Error::Config(format!("unknown copula family '{s}'")))
    }
}

/// Counter-clockwise rotation of a copula, serialized as integer degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn degrees(self) -> u32 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    /// 90 and 270 degree rotations flip the sign of dependence.
    pub fn negates_tau(self) -> bool {
        matches!(self, Rotation::R90 | Rotation::R270)
    }
}

impl TryFrom<u32> for Rotation {
    type Error = String;

    fn try_from(deg: u32) -> std::result::Result<Self, String> {
        match deg {
            0 => Ok(Rotation::R0),
            90 => Ok(Rotation::R90),
            180 => Ok(Rotation::R180),
            270 => Ok(Rotation::R270),
            other => Err(format!("rotation must be 0, 90, 180 or 270 degrees, got {other}")),
        }
    }
}

impl From<Rotation> for u32 {
    fn from(r: Rotation) -> u32 {
        r.degrees()
    }
}

/// The 16 family/rotation combinations.
pub fn all_family_rotations() -> Vec<(Family, Rotation)> {
    let mut out = Vec::with_capacity(16);
    for fam in Family::ALL {
        if fam.supports_rotation() {
            out.extend(Rotation::ALL.iter().map(|&r| (fam, r)));
        } else {
            out.push((fam, Rotation::R0));
        }
    }
    out
}

/// One bivariate copula with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCopula {
    pub family: Family,
    pub rotation: Rotation,
    pub theta: Vec<f64>,
}

impl PairCopula {
    pub fn new(family: Family, rotation: Rotation, theta: Vec<f64>) -> Result<Self> {
        let pc = PairCopula {
            family,
            rotation,
            theta,
        };
        pc.validate()?;
        Ok(pc)
    }

    pub fn independence() -> Self {
        PairCopula {
            family: Family::Independence,
            rotation: Rotation::R0,
            theta: Vec::new(),
        }
    }

    pub fn gaussian(rho: f64) -> Result<Self> {
        Self::new(Family::Gaussian, Rotation::R0, vec![rho])
    }

    pub fn student_t(rho: f64, nu: f64) -> Result<Self> {
        Self::new(Family::StudentT, Rotation::R0, vec![rho, nu])
    }

    pub fn clayton(theta: f64, rotation: Rotation) -> Result<Self> {
        Self::new(Family::Clayton, rotation, vec![theta])
    }

    pub fn gumbel(theta: f64, rotation: Rotation) -> Result<Self> {
        Self::new(Family::Gumbel, rotation, vec![theta])
    }

    pub fn frank(theta: f64) -> Result<Self> {
        Self::new(Family::Frank, Rotation::R0, vec![theta])
    }

    pub fn joe(theta: f64, rotation: Rotation) -> Result<Self> {
        Self::new(Family::Joe, rotation, vec![theta])
    }

    /// Build the copula of the given family and rotation whose Kendall's τ is `tau`.
    pub fn from_tau(family: Family, rotation: Rotation, tau: f64) -> Result<Self> {
        if family == Family::Independence {
            return Ok(Self::independence());
        }
        let base_tau = if rotation.negates_tau() { -tau } else { tau };
        let mut theta = vec![theta_from_tau(family, base_tau)?];
        if family == Family::StudentT {
            theta.push(STUDENT_T_DEFAULT_DF);
        }
        Self::new(family, rotation, theta)
    }

    pub fn validate(&self) -> Result<()> {
        let fam = self.family;
        let err = |detail: String| Err(Error::domain(fam.to_string(), detail));
        if self.rotation != Rotation::R0 && !fam.supports_rotation() {
            return err(format!("rotation {} not defined for this family", self.rotation.degrees()));
        }
        if self.theta.len() != fam.n_theta() {
            return err(format!(
                "expected {} parameter(s), got {}",
                fam.n_theta(),
                self.theta.len()
            ));
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            return err("parameters must be finite".into());
        }
        match fam {
            Family::Independence => {}
            Family::Gaussian | Family::StudentT => {
                let rho = self.theta[0];
                if !(-1.0..=1.0).contains(&rho) {
                    return err(format!("correlation {rho} outside [-1, 1]"));
                }
                if rho.abs() >= 1.0 {
                    return err("degenerate correlation |rho| = 1 has no density".into());
                }
                if fam == Family::StudentT && self.theta[1] <= 2.0 {
                    return err(format!("degrees of freedom {} must exceed 2", self.theta[1]));
                }
            }
            Family::Clayton | Family::Frank => {
                if self.theta[0] <= 0.0 {
                    return err(format!("theta {} must lie in (0, inf)", self.theta[0]));
                }
            }
            Family::Gumbel => {
                if self.theta[0] < 1.0 {
                    return err(format!("theta {} must lie in [1, inf)", self.theta[0]));
                }
            }
            Family::Joe => {
                if self.theta[0] <= 1.0 {
                    return err(format!("theta {} must lie in (1, inf)", self.theta[0]));
                }
            }
        }
        Ok(())
    }

    /// Number of parameters exposed to gradient-based optimization (ν stays fixed).
    pub fn n_free(&self) -> usize {
        usize::from(self.family != Family::Independence)
    }

    /// The optimized parameter (ρ for elliptical families, θ otherwise).
    pub fn param(&self) -> Option<f64> {
        self.theta.first().copied()
    }

    pub fn set_param(&mut self, value: f64) -> Result<()> {
        if let Some(first) = self.theta.first_mut() {
            *first = value;
        }
        self.validate()
    }

    /// Map the optimized parameter to an unconstrained coordinate.
    pub fn to_unconstrained(&self) -> Option<f64> {
        let t = self.param()?;
        Some(match self.family {
            Family::Gaussian | Family::StudentT => t.atanh(),
            Family::Clayton | Family::Frank => softplus_inv(t),
            Family::Gumbel | Family::Joe => softplus_inv((t - 1.0).max(1e-300)),
            Family::Independence => unreachable!(),
        })
    }

    /// Parameter value and `dθ/dξ` at unconstrained coordinate `xi`.
    pub fn from_unconstrained(family: Family, xi: f64) -> (f64, f64) {
        match family {
            Family::Gaussian | Family::StudentT => {
                let r = xi.tanh();
                (r, 1.0 - r * r)
            }
            Family::Clayton | Family::Frank => (softplus(xi).max(1e-12), sigmoid(xi)),
            Family::Gumbel | Family::Joe => (1.0 + softplus(xi).max(1e-12), sigmoid(xi)),
            Family::Independence => (0.0, 0.0),
        }
    }

    pub fn set_unconstrained(&mut self, xi: f64) -> Result<()> {
        let (t, _) = Self::from_unconstrained(self.family, xi);
        let t = match self.family {
            Family::Gaussian | Family::StudentT => t.clamp(-1.0 + 1e-15, 1.0 - 1e-15),
            _ => t,
        };
        self.set_param(t)
    }

    /// `dθ/dξ` at the current parameter value.
    pub fn dparam_dunconstrained(&self) -> f64 {
        match self.to_unconstrained() {
            Some(xi) => Self::from_unconstrained(self.family, xi).1,
            None => 0.0,
        }
    }

    /// The copula of `(V, U)` when `self` is the copula of `(U, V)`.
    pub fn transposed(&self) -> PairCopula {
        let rotation = match self.rotation {
            Rotation::R90 => Rotation::R270,
            Rotation::R270 => Rotation::R90,
            r => r,
        };
        PairCopula {
            family: self.family,
            rotation,
            theta: self.theta.clone(),
        }
    }

    pub fn log_density(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp_unit(u), clamp_unit(v));
        let (a, b) = self.base_point(u, v);
        family::log_density(self.family, &self.theta, a, b)
    }

    pub fn density(&self, u: f64, v: f64) -> f64 {
        self.log_density(u, v).exp()
    }

    pub fn cdf(&self, u: f64, v: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let v = v.clamp(0.0, 1.0);
        if u == 0.0 || v == 0.0 {
            return 0.0;
        }
        if u == 1.0 {
            return v;
        }
        if v == 1.0 {
            return u;
        }
        let base = |a: f64, b: f64| {
            if a <= 0.0 || b <= 0.0 {
                0.0
            } else {
                family::cdf(self.family, &self.theta, a, b)
            }
        };
        let c = match self.rotation {
            Rotation::R0 => base(u, v),
            Rotation::R90 => v - base(1.0 - u, v),
            Rotation::R180 => u + v - 1.0 + base(1.0 - u, 1.0 - v),
            Rotation::R270 => u - base(u, 1.0 - v),
        };
        c.clamp((u + v - 1.0).max(0.0), u.min(v))
    }

    /// Conditional distribution function `h(u|v) = ∂C(u,v)/∂v`.
    pub fn hfunc(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp_unit(u), clamp_unit(v));
        let (a, b) = self.base_point(u, v);
        let h0 = family::hfunc(self.family, &self.theta, a, b);
        match self.rotation {
            Rotation::R0 | Rotation::R270 => h0,
            Rotation::R90 | Rotation::R180 => 1.0 - h0,
        }
    }

    /// Conditional distribution of the second argument given the first,
    /// `∂C(u,v)/∂u`.
    pub fn hfunc_rev(&self, u: f64, v: f64) -> f64 {
        self.transposed().hfunc(v, u)
    }

    /// Solve `hfunc(u, v) = w` for `u`.
    pub fn hinv(&self, w: f64, v: f64) -> Result<f64> {
        let (w, v) = (clamp_unit(w), clamp_unit(v));
        let (w0, b) = match self.rotation {
            Rotation::R0 => (w, v),
            Rotation::R90 => (1.0 - w, v),
            Rotation::R180 => (1.0 - w, 1.0 - v),
            Rotation::R270 => (w, 1.0 - v),
        };
        let (w0, b) = (clamp_unit(w0), clamp_unit(b));
        let a = match family::hinv_closed(self.family, &self.theta, w0, b) {
            Some(a) => {
                let resid = family::hfunc(self.family, &self.theta, clamp_unit(a), b) - w0;
                if resid.abs() <= 1e-12 {
                    a
                } else {
                    family::hinv_newton(self.family, &self.theta, w0, b, a)?
                }
            }
            None => family::hinv_numeric(self.family, &self.theta, w0, b)?,
        };
        let u = match self.rotation {
            Rotation::R0 | Rotation::R270 => a,
            Rotation::R90 | Rotation::R180 => 1.0 - a,
        };
        if u.is_finite() {
            Ok(clamp_unit(u))
        } else {
            Err(Error::numerical(format!("{} h-inverse", self.family), f64::NAN))
        }
    }

    /// Solve `hfunc_rev(u, v) = w` for `v`.
    pub fn hinv_rev(&self, w: f64, u: f64) -> Result<f64> {
        self.transposed().hinv(w, u)
    }

    /// Kendall's τ of this copula.
    pub fn tau(&self) -> f64 {
        let t = tau_from_theta_base(self.family, &self.theta);
        if self.rotation.negates_tau() {
            -t
        } else {
            t
        }
    }

    /// Map `(u, v)` to the point where the base density is evaluated.
    fn base_point(&self, u: f64, v: f64) -> (f64, f64) {
        let (a, b) = match self.rotation {
            Rotation::R0 => (u, v),
            Rotation::R90 => (1.0 - u, v),
            Rotation::R180 => (1.0 - u, 1.0 - v),
            Rotation::R270 => (u, 1.0 - v),
        };
        (clamp_unit(a), clamp_unit(b))
    }

    /// Partial derivatives of `log c(u,v)` and `h(u|v)` with respect to `u`,
    /// `v` and the optimized parameter.
    pub fn partials(&self, u: f64, v: f64) -> Partials {
        let (u, v) = (clamp_unit(u), clamp_unit(v));
        let (a, b) = self.base_point(u, v);
        let p0 = family::analytic_partials(self.family, &self.theta, a, b)
            .unwrap_or_else(|| self.fd_base_partials(a, b));
        // chain rule through the rotation map
        let (su, sv, sh) = match self.rotation {
            Rotation::R0 => (1.0, 1.0, 1.0),
            Rotation::R90 => (-1.0, 1.0, -1.0),
            Rotation::R180 => (-1.0, -1.0, -1.0),
            Rotation::R270 => (1.0, -1.0, 1.0),
        };
        Partials {
            d_logc_du: su * p0.d_logc_du,
            d_logc_dv: sv * p0.d_logc_dv,
            d_logc_dtheta: p0.d_logc_dtheta,
            // h = sh * h0(a|b) + const, a = ±u, b = ±v
            dh_du: sh * su * p0.dh_du,
            dh_dv: sh * sv * p0.dh_dv,
            dh_dtheta: sh * p0.dh_dtheta,
        }
    }

    /// Partials of `hfunc_rev(u, v) = ∂C/∂u` in the caller's `(u, v)` order:
    /// returns `(d/du, d/dv, d/dθ)`.
    pub fn hfunc_rev_partials(&self, u: f64, v: f64) -> (f64, f64, f64) {
        let p = self.transposed().partials(v, u);
        (p.dh_dv, p.dh_du, p.dh_dtheta)
    }

    /// Partials of `hfunc(u, v)` only: `(d/du, d/dv, d/dθ)`.
    pub fn hfunc_partials(&self, u: f64, v: f64) -> (f64, f64, f64) {
        let p = self.partials(u, v);
        (p.dh_du, p.dh_dv, p.dh_dtheta)
    }

    fn fd_base_partials(&self, a: f64, b: f64) -> Partials {
        let fam = self.family;
        let th = &self.theta;
        let logc = |x: f64, y: f64, t: &[f64]| family::log_density(fam, t, x, y);
        let h = |x: f64, y: f64, t: &[f64]| family::hfunc(fam, t, x, y);

        let step_in = |x: f64| FD_STEP.min(0.5 * (x - UNIT_EPS)).min(0.5 * (1.0 - UNIT_EPS - x));
        let ea = step_in(a);
        let eb = step_in(b);

        let (t_lo, t_hi) = self.param_fd_points();
        let with = |t: f64| {
            let mut v = th.clone();
            v[0] = t;
            v
        };
        let (th_lo, th_hi) = (with(t_lo), with(t_hi));
        let dt = t_hi - t_lo;

        Partials {
            d_logc_du: (logc(a + ea, b, th) - logc(a - ea, b, th)) / (2.0 * ea),
            d_logc_dv: (logc(a, b + eb, th) - logc(a, b - eb, th)) / (2.0 * eb),
            d_logc_dtheta: (logc(a, b, &th_hi) - logc(a, b, &th_lo)) / dt,
            dh_du: logc(a, b, th).exp(),
            dh_dv: (h(a, b + eb, th) - h(a, b - eb, th)) / (2.0 * eb),
            dh_dtheta: (h(a, b, &th_hi) - h(a, b, &th_lo)) / dt,
        }
    }

    /// Parameter evaluation points for a difference quotient, one-sided at
    /// the edge of the domain.
    fn param_fd_points(&self) -> (f64, f64) {
        let t = self.theta[0];
        let step = FD_STEP * t.abs().max(1.0);
        let (lower, upper) = match self.family {
            Family::Gaussian | Family::StudentT => (-1.0 + 1e-12, 1.0 - 1e-12),
            Family::Clayton | Family::Frank => (1e-12, f64::INFINITY),
            Family::Gumbel => (1.0, f64::INFINITY),
            Family::Joe => (1.0 + 1e-12, f64::INFINITY),
            Family::Independence => (f64::NEG_INFINITY, f64::INFINITY),
        };
        if t - step < lower {
            (t, t + step)
        } else if t + step > upper {
            (t - step, t)
        } else {
            (t - step, t + step)
        }
    }
}

impl fmt::Display for PairCopula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.family)?;
        if self.rotation != Rotation::R0 {
            write!(f, "{}", self.rotation.degrees())?;
        }
        if !self.theta.is_empty() {
            let parts: Vec<String> = self.theta.iter().map(|t| format!("{t:.4}")).collect();
            write!(f, "({})", parts.join(", "))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
