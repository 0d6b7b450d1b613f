use super::tau::{frank_tau, joe_tau};
use super::*;
use crate::special::{gauss_legendre, integrate_gl64, norm_cdf, norm_ppf};
use proptest::prelude::*;

fn settings() -> Vec<PairCopula> {
    let mut out = vec![PairCopula::independence()];
    for &r in &[-0.7, 0.3, 0.85] {
        out.push(PairCopula::gaussian(r).unwrap());
        out.push(PairCopula::student_t(r, 5.0).unwrap());
    }
    for rot in Rotation::ALL {
        for &t in &[0.5, 2.0, 6.0] {
            out.push(PairCopula::clayton(t, rot).unwrap());
        }
        for &t in &[1.2, 2.0, 4.0] {
            out.push(PairCopula::gumbel(t, rot).unwrap());
            out.push(PairCopula::joe(t, rot).unwrap());
        }
    }
    for &t in &[0.5, 3.0, 10.0] {
        out.push(PairCopula::frank(t).unwrap());
    }
    out
}

#[test]
fn sixteen_family_rotation_combinations() {
    let combos = all_family_rotations();
    assert_eq!(combos.len(), 16);
    assert_eq!(Family::ALL.len(), 7);
}

#[test]
fn invalid_parameters_are_rejected_with_family_name() {
    let e = PairCopula::clayton(-1.0, Rotation::R0).unwrap_err();
    assert!(e.to_string().contains("Clayton"));
    assert!(PairCopula::gumbel(0.9, Rotation::R0).is_err());
    assert!(PairCopula::joe(1.0, Rotation::R0).is_err());
    assert!(PairCopula::frank(0.0).is_err());
    assert!(PairCopula::gaussian(1.2).is_err());
    assert!(PairCopula::student_t(0.2, 2.0).is_err());
    assert!(PairCopula::new(Family::Gaussian, Rotation::R90, vec![0.1]).is_err());
    assert!(PairCopula::new(Family::Independence, Rotation::R0, vec![0.1]).is_err());
}

#[test]
fn density_examples() {
    let ind = PairCopula::independence();
    assert_eq!(ind.density(0.123, 0.9), 1.0);
    let g0 = PairCopula::gaussian(0.0).unwrap();
    assert!((g0.density(0.3, 0.7) - 1.0).abs() < 1e-15);
    // φ_ρ(0,0)/φ(0)² = 1/sqrt(1-ρ²)
    let g = PairCopula::gaussian(0.5).unwrap();
    assert!((g.density(0.5, 0.5) - 1.0 / 0.75_f64.sqrt()).abs() < 1e-14);
}

#[test]
fn cdf_examples() {
    assert!((PairCopula::independence().cdf(0.4, 0.5) - 0.2).abs() < 1e-15);
    let cl = PairCopula::clayton(2.0, Rotation::R0).unwrap();
    assert!((cl.cdf(0.5, 0.5) - 7f64.powf(-0.5)).abs() < 1e-14);
    // oracle: C(u, v) = ∫_0^v h(u | s) ds
    let integral = graded(0.0, 0.5, |s| cl.hfunc(0.5, s));
    assert!((integral - 7f64.powf(-0.5)).abs() < 1e-12, "{integral}");
    for pc in settings() {
        for &u in &[0.0, 0.2, 0.77, 1.0] {
            assert!((pc.cdf(u, 1.0) - u).abs() < 1e-12, "{pc}");
            assert!((pc.cdf(1.0, u) - u).abs() < 1e-12, "{pc}");
            assert_eq!(pc.cdf(u, 0.0), 0.0);
            assert_eq!(pc.cdf(0.0, u), 0.0);
        }
    }
}

#[test]
fn hfunc_examples() {
    let ind = PairCopula::independence();
    assert_eq!(ind.hfunc(0.37, 0.8), 0.37);
    let g0 = PairCopula::gaussian(0.0).unwrap();
    assert!((g0.hfunc(0.37, 0.8) - 0.37).abs() < 1e-14);
    let g = PairCopula::gaussian(0.6).unwrap();
    let (u, v) = (0.2, 0.9);
    let expected = norm_cdf((norm_ppf(u) - 0.6 * norm_ppf(v)) / 0.8);
    assert!((g.hfunc(u, v) - expected).abs() < 1e-15);

    let cl = PairCopula::clayton(2.0, Rotation::R0).unwrap();
    let eps = 1e-6;
    let fd = (cl.cdf(0.3, 0.6 + eps) - cl.cdf(0.3, 0.6 - eps)) / (2.0 * eps);
    assert!((cl.hfunc(0.3, 0.6) - fd).abs() < 1e-8);
}

#[test]
fn h_is_derivative_of_cdf_everywhere() {
    let eps = 1e-6;
    for pc in settings() {
        for i in 1..10 {
            for j in 1..10 {
                let (u, v) = (i as f64 / 10.0, j as f64 / 10.0);
                let fd = (pc.cdf(u, v + eps) - pc.cdf(u, v - eps)) / (2.0 * eps);
                assert!((pc.hfunc(u, v) - fd).abs() < 1e-4, "{pc} at ({u},{v}): {} vs {fd}", pc.hfunc(u, v));
                let fd_rev = (pc.cdf(u + eps, v) - pc.cdf(u - eps, v)) / (2.0 * eps);
                assert!((pc.hfunc_rev(u, v) - fd_rev).abs() < 1e-4, "{pc} rev at ({u},{v})");
            }
        }
    }
}

#[test]
fn hinv_gaussian_matches_bisection_oracle() {
    let g = PairCopula::gaussian(0.5).unwrap();
    let closed = norm_cdf(0.5 * norm_ppf(0.75) + 0.75_f64.sqrt() * norm_ppf(0.25));
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g.hfunc(mid, 0.75) < 0.25 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!((closed - 0.5 * (lo + hi)).abs() < 1e-12);
    assert!((g.hinv(0.25, 0.75).unwrap() - closed).abs() < 1e-14);
    assert_eq!(PairCopula::independence().hinv(0.3, 0.9).unwrap(), 0.3);
}

#[test]
fn hinv_round_trips_for_all_families() {
    for pc in settings() {
        for i in 1..10 {
            for j in 1..10 {
                let (u, v) = (i as f64 / 10.0, j as f64 / 10.0);
                let back = pc.hinv(pc.hfunc(u, v), v).unwrap();
                assert!((back - u).abs() < 1e-8, "{pc} ({u},{v}) -> {back}");
                let back = pc.hinv_rev(pc.hfunc_rev(u, v), u).unwrap();
                assert!((back - v).abs() < 1e-8, "{pc} rev ({u},{v}) -> {back}");
            }
        }
    }
}

#[test]
fn theta_tau_maps() {
    assert!((theta_from_tau(Family::Gaussian, 0.5).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    assert!((theta_from_tau(Family::Clayton, 0.5).unwrap() - 2.0).abs() < 1e-15);
    assert!((theta_from_tau(Family::Gumbel, 0.5).unwrap() - 2.0).abs() < 1e-15);
    let g = PairCopula::gaussian(0.7071).unwrap();
    assert!((g.tau() - 0.5).abs() < 1e-4);
    assert_eq!(PairCopula::independence().tau(), 0.0);
    let c90 = PairCopula::clayton(2.0, Rotation::R90).unwrap();
    assert!((c90.tau() + 0.5).abs() < 1e-15);
    let c180 = PairCopula::clayton(2.0, Rotation::R180).unwrap();
    assert!((c180.tau() - 0.5).abs() < 1e-15);

    let err = theta_from_tau(Family::Clayton, -0.3).unwrap_err();
    assert!(err.to_string().contains("rotat"));

    for fam in [Family::Gaussian, Family::StudentT, Family::Clayton, Family::Gumbel] {
        for &tau in &[0.05, 0.3, 0.8] {
            let th = theta_from_tau(fam, tau).unwrap();
            let mut theta = vec![th];
            if fam == Family::StudentT {
                theta.push(4.0);
            }
            let back = tau_from_theta_base(fam, &theta);
            assert!((theta_from_tau(fam, back).unwrap() - th).abs() < 1e-6);
        }
    }
    for fam in [Family::Frank, Family::Joe] {
        for &tau in &[0.1, 0.4, 0.7] {
            let th = theta_from_tau(fam, tau).unwrap();
            assert!((tau_from_theta_base(fam, &[th]) - tau).abs() < 1e-7, "{fam} {tau}");
        }
    }
    let c = PairCopula::from_tau(Family::Gumbel, Rotation::R270, -0.4).unwrap();
    assert!((c.tau() + 0.4).abs() < 1e-12);
    assert!(PairCopula::from_tau(Family::Gumbel, Rotation::R0, -0.4).is_err());
}

#[test]
fn joe_tau_matches_series() {
    // τ = 1 - 4 Σ_k 1 / (k (θk + 2) (θ(k-1) + 2)); the tail beyond K is
    // approximated by its integral 2 / (θ² K²).
    for &theta in &[1.5, 2.0, 3.7, 10.0, 40.0] {
        let k_max = 200_000;
        let s: f64 = (1..=k_max)
            .map(|k| {
                let k = k as f64;
                1.0 / (k * (theta * k + 2.0) * (theta * (k - 1.0) + 2.0))
            })
            .sum::<f64>()
            + 1.0 / (2.0 * theta * theta * (k_max as f64).powi(2));
        let series = 1.0 - 4.0 * s;
        assert!((joe_tau(theta) - series).abs() < 1e-9, "θ={theta}: {} vs {series}", joe_tau(theta));
    }
    assert!((joe_tau(2.0) - (2.0 - std::f64::consts::PI.powi(2) / 6.0)).abs() < 1e-10);
}

#[test]
fn frank_tau_matches_direct_integral() {
    // τ = 1 + 4 ∫ φ/φ' with φ(t) = -ln((e^{-θt}-1)/(e^{-θ}-1))
    for &theta in &[0.5, 3.0, 12.0] {
        let f = |t: f64| {
            let phi = -(((-theta * t).exp_m1()) / (-theta).exp_m1()).ln();
            let dphi = theta * (-theta * t).exp() / (-theta * t).exp_m1();
            phi / dphi
        };
        let oracle = 1.0 + 4.0 * (graded(0.0, 0.5, f) + graded_upper(0.5, 1.0, f));
        assert!((frank_tau(theta) - oracle).abs() < 1e-9);
    }
}

/// Composite Gauss-Legendre on panels halving in width towards `a`.
fn graded(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut total = 0.0;
    let mut hi = b;
    for _ in 0..60 {
        let lo = a + 0.5 * (hi - a);
        total += integrate_gl64(lo, hi, &f);
        hi = lo;
    }
    total
}

/// As [`graded`] but refined towards `b`.
fn graded_upper(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    graded(-b, -a, |t| f(-t))
}

fn fd_partials(pc: &PairCopula, u: f64, v: f64) -> Partials {
    let e = 1e-6;
    let mut hi = pc.clone();
    let mut lo = pc.clone();
    let t = pc.theta[0];
    let dt = 1e-6 * t.abs().max(1.0);
    hi.theta[0] = t + dt;
    lo.theta[0] = t - dt;
    Partials {
        d_logc_du: (pc.log_density(u + e, v) - pc.log_density(u - e, v)) / (2.0 * e),
        d_logc_dv: (pc.log_density(u, v + e) - pc.log_density(u, v - e)) / (2.0 * e),
        d_logc_dtheta: (hi.log_density(u, v) - lo.log_density(u, v)) / (2.0 * dt),
        dh_du: (pc.hfunc(u + e, v) - pc.hfunc(u - e, v)) / (2.0 * e),
        dh_dv: (pc.hfunc(u, v + e) - pc.hfunc(u, v - e)) / (2.0 * e),
        dh_dtheta: (hi.hfunc(u, v) - lo.hfunc(u, v)) / (2.0 * dt),
    }
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-2)
}

#[test]
fn partials_match_finite_differences() {
    let ind = PairCopula::independence().partials(0.3, 0.6);
    assert_eq!(
        ind,
        Partials {
            dh_du: 1.0,
            ..Partials::default()
        }
    );
    let g = PairCopula::gaussian(0.5).unwrap();
    let (a, f) = (g.partials(0.3, 0.7), fd_partials(&g, 0.3, 0.7));
    for (x, y) in [
        (a.d_logc_du, f.d_logc_du),
        (a.d_logc_dv, f.d_logc_dv),
        (a.d_logc_dtheta, f.d_logc_dtheta),
        (a.dh_du, f.dh_du),
        (a.dh_dv, f.dh_dv),
        (a.dh_dtheta, f.dh_dtheta),
    ] {
        assert!(close(x, y, 1e-4), "{x} vs {y}");
    }
    let cl = PairCopula::clayton(2.0, Rotation::R0).unwrap();
    let (a, f) = (cl.partials(0.4, 0.4), fd_partials(&cl, 0.4, 0.4));
    assert!(close(a.d_logc_dtheta, f.d_logc_dtheta, 1e-4));

    for pc in settings().into_iter().skip(1) {
        for &(u, v) in &[(0.2, 0.3), (0.55, 0.85), (0.9, 0.15)] {
            let (a, f) = (pc.partials(u, v), fd_partials(&pc, u, v));
            let pairs = [
                ("dlogc/du", a.d_logc_du, f.d_logc_du),
                ("dlogc/dv", a.d_logc_dv, f.d_logc_dv),
                ("dlogc/dθ", a.d_logc_dtheta, f.d_logc_dtheta),
                ("dh/du", a.dh_du, f.dh_du),
                ("dh/dv", a.dh_dv, f.dh_dv),
                ("dh/dθ", a.dh_dtheta, f.dh_dtheta),
            ];
            for (name, x, y) in pairs {
                assert!(close(x, y, 1e-4), "{pc} {name} at ({u},{v}): {x} vs {y}");
            }
            let (ru, rv, rt) = pc.hfunc_rev_partials(u, v);
            let e = 1e-6;
            assert!(close(ru, (pc.hfunc_rev(u + e, v) - pc.hfunc_rev(u - e, v)) / (2.0 * e), 1e-4));
            assert!(close(rv, (pc.hfunc_rev(u, v + e) - pc.hfunc_rev(u, v - e)) / (2.0 * e), 1e-4));
            let _ = rt;
        }
    }
}

#[test]
fn densities_integrate_to_one() {
    // Moderate dependence keeps the tensor rule accurate.
    let (x, w) = gauss_legendre(64);
    let mut copulas = vec![PairCopula::independence()];
    for (family, rotation) in all_family_rotations() {
        if family == Family::Independence {
            continue;
        }
        for &tau in &[0.1, 0.3, 0.5] {
            let tau = if rotation.negates_tau() { -tau } else { tau };
            copulas.push(PairCopula::from_tau(family, rotation, tau).unwrap());
        }
    }
    for pc in copulas {
        let mut total = 0.0;
        for (xi, wi) in x.iter().zip(&w) {
            for (xj, wj) in x.iter().zip(&w) {
                total += wi * wj * 0.25 * pc.density(0.5 * (xi + 1.0), 0.5 * (xj + 1.0));
            }
        }
        assert!((total - 1.0).abs() < 1e-3, "{pc}: {total}");
    }
}

#[test]
fn symmetric_families_are_exchangeable() {
    for pc in [
        PairCopula::gaussian(0.4).unwrap(),
        PairCopula::student_t(-0.3, 8.0).unwrap(),
        PairCopula::frank(4.0).unwrap(),
    ] {
        assert!((pc.density(0.2, 0.7) - pc.density(0.7, 0.2)).abs() < 1e-12);
    }
}

#[test]
fn unconstrained_round_trip() {
    for pc in settings().into_iter().skip(1) {
        let xi = pc.to_unconstrained().unwrap();
        let mut back = pc.clone();
        back.set_unconstrained(xi).unwrap();
        assert!((back.theta[0] - pc.theta[0]).abs() < 1e-10 * pc.theta[0].abs().max(1.0));
        let (_, jac) = PairCopula::from_unconstrained(pc.family, xi);
        let e = 1e-6;
        let fd = (PairCopula::from_unconstrained(pc.family, xi + e).0
            - PairCopula::from_unconstrained(pc.family, xi - e).0)
            / (2.0 * e);
        assert!((jac - fd).abs() < 1e-6);
    }
}

#[test]
fn serializes_rotation_as_degrees() {
    let pc = PairCopula::gumbel(1.5, Rotation::R270).unwrap();
    let s = serde_json::to_string(&pc).unwrap();
    assert_eq!(s, r#"{"family":"Gumbel","rotation":270,"theta":[1.5]}"#);
    let back: PairCopula = serde_json::from_str(&s).unwrap();
    assert_eq!(back, pc);
    assert!(serde_json::from_str::<PairCopula>(r#"{"family":"Gumbel","rotation":45,"theta":[1.5]}"#).is_err());
}

fn any_copula() -> impl Strategy<Value = PairCopula> {
    let rot = prop::sample::select(Rotation::ALL.to_vec());
    prop_oneof![
        (-0.95f64..0.95).prop_map(|r| PairCopula::gaussian(r).unwrap()),
        (-0.9f64..0.9, prop::sample::select(vec![4.0, 8.0, 15.0]))
            .prop_map(|(r, nu)| PairCopula::student_t(r, nu).unwrap()),
        (0.05f64..15.0, rot.clone()).prop_map(|(t, r)| PairCopula::clayton(t, r).unwrap()),
        (1.0f64..10.0, rot.clone()).prop_map(|(t, r)| PairCopula::gumbel(t, r).unwrap()),
        (1.01f64..10.0, rot).prop_map(|(t, r)| PairCopula::joe(t, r).unwrap()),
        (0.05f64..30.0).prop_map(|t| PairCopula::frank(t).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn frechet_bounds(pc in any_copula(), u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let c = pc.cdf(u, v);
        prop_assert!(c >= (u + v - 1.0).max(0.0) - 1e-12);
        prop_assert!(c <= u.min(v) + 1e-12);
    }

    #[test]
    fn h_increasing_in_u(pc in any_copula(), u in 0.02f64..0.97, v in 0.02f64..0.98) {
        let a = pc.hfunc(u, v);
        let b = pc.hfunc(u + 0.01, v);
        prop_assert!(b >= a, "{} h({},{})={} h(+.01)={}", pc, u, v, a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn hinv_inverts_hfunc(pc in any_copula(), u in 0.05f64..0.95, v in 0.05f64..0.95) {
        let w = pc.hfunc(u, v);
        let back = pc.hinv(w, v).unwrap();
        // compare in h-space where the inversion may be ill-conditioned
        prop_assert!((pc.hfunc(back, v) - w).abs() < 1e-10);
    }
}
