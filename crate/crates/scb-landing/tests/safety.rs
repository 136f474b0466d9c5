mod common;

use nalgebra::{SVector, Vector3};
use proptest::prelude::*;
use rand::Rng;

use common::{ball, cbf_system, gradient_check, rel, rng, safe_states, setup, unit};
use scb_landing::dynamics::{augmented_derivative, rk4_step, AugmentedState, DynamicsError, SpacecraftState};
use scb_landing::observer::{w_hat, ObserverState};
use scb_landing::safety::{
    base_cbfs, raw_constraints, softmin, softmin_weights, CbfSystem, ConstraintParams, DisturbanceMode, SafetyError,
    SpeedSense, APEX_GUARD,
};

fn system_a() -> (scb_landing::harness::Setup, scb_landing::reference::ReferenceTrajectory, CbfSystem) {
    let s = setup("scenario_a");
    let traj = s.reference().unwrap();
    let sys = cbf_system(&s);
    (s, traj, sys)
}

#[test]
fn raw_constraint_examples() {
    let (_, _, sys) = system_a();
    let p = &sys.p;
    let r = Vector3::new(800.0, 100.0, 50.0);
    let u = Vector3::new(12.0, -16.0, 0.0);
    assert_eq!(raw_constraints(&r, &Vector3::zeros(), &u, p).phi1, 0.0);
    assert!((raw_constraints(&r, &Vector3::zeros(), &Vector3::new(3.0, 4.0, 0.0), p).phi2).abs() < 1e-15);

    for c in [1.0, 25.0, 300.0] {
        let r = p.beta * p.r_f + c * p.e_hat_s;
        let psi2 = raw_constraints(&r, &Vector3::zeros(), &u, p).psi2;
        assert!(rel(psi2, c * (1.0 - p.theta_gs.cos()), 0.0) < 1e-12);
    }

    // reported touchdown: relative speed 0.278 at 0.4168 m from the site
    let vmin = 0.174f64.sqrt();
    let mut q = p.clone();
    q.v_min = vmin;
    let r = q.r_f + Vector3::new(0.0, 0.4168, 0.0);
    let v = q.v_f + Vector3::new(0.0, 0.0, -0.278);
    let expected = 0.278 - 0.4168 * (1.0f64 + 0.1737).sqrt();
    assert!((expected + 0.174).abs() < 2e-3);
    let bound = vmin * (1.0 + 0.4168f64 * 0.4168).sqrt();
    q.speed_sense = SpeedSense::Floor;
    assert!((raw_constraints(&r, &v, &u, &q).psi1 - (0.278 - bound)).abs() < 1e-12);
    q.speed_sense = SpeedSense::Ceiling;
    assert!((raw_constraints(&r, &v, &u, &q).psi1 - (bound - 0.278)).abs() < 1e-12);
}

#[test]
fn base_cbf_examples() {
    let (_, _, sys) = system_a();
    let mut p = sys.p.clone();
    let mid = ((p.t_max * p.t_max + p.t_min * p.t_min) / 2.0).sqrt();
    let u = unit(&mut rng(50)) * mid;
    p.k_u = 1.0 / (p.t_max * p.t_max - p.t_min * p.t_min);
    let b = base_cbfs(&Vector3::new(900.0, 0.0, 0.0), &Vector3::zeros(), &u, &p);
    assert!((b[2] - 0.5).abs() < 1e-12 && (b[3] - 0.5).abs() < 1e-12);
    assert_eq!(base_cbfs(&(p.beta * p.r_f), &Vector3::zeros(), &u, &p)[1], 0.0);

    let mut rng = rng(51);
    for sense in [SpeedSense::Ceiling, SpeedSense::Floor] {
        p.speed_sense = sense;
        for _ in 0..1000 {
            let r = p.r_f + ball(&mut rng, 3.0);
            let v = p.v_f + ball(&mut rng, 2.0);
            let u = ball(&mut rng, 25.0);
            let raw = raw_constraints(&r, &v, &u, &p);
            let b = base_cbfs(&r, &v, &u, &p);
            assert_eq!(b[0].signum(), raw.psi1.signum());
            assert_eq!(b[1].signum(), raw.psi2.signum());
            assert_eq!(b[2] >= 0.0, raw.phi1 >= 0.0);
            assert_eq!(b[3] >= 0.0, raw.phi2 >= 0.0);
        }
    }
}

#[test]
fn softmin_examples() {
    let rho = 40.0;
    for z in [-3.0, 0.0, 0.25, 7.0] {
        assert!((softmin(&[z; 4], rho).unwrap() - (z - 4f64.ln() / rho)).abs() < 1e-15);
    }
    let s = softmin(&[0.0, 1.0], rho).unwrap();
    let exact = -(-40f64).exp() / 40.0;
    assert!(rel(s, exact, 0.0) < 1e-12, "{s:e}");
    assert!(rel(exact, -1.06e-19, 0.0) < 5e-3);
    let big = softmin(&[1e6, 1e6 + 1.0], rho).unwrap();
    assert!(big.is_finite() && (big - 1e6).abs() < 1e-9);
    assert_eq!(softmin(&[], rho), Err(SafetyError::EmptySoftmin));

    for i in 0..4 {
        let mut v = [1e3 + 0.3, 1e3 - 0.2, 1e3 + 1.0, 1e3 + 2.0];
        v[i] = 0.1;
        let w = softmin_weights(&v, rho);
        assert!(w[i] > 1.0 - 1e-10);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((softmin(&v, rho).unwrap() - 0.1).abs() < 1e-12);
    }
}

#[test]
fn composite_bounds_and_weights() {
    let (_, traj, sys) = system_a();
    for (xh, obs) in safe_states(&sys, &traj, 100, 52) {
        let c = sys.composite_cbf(&xh, &obs).unwrap();
        let min = c.parts.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(c.h <= min && min - c.h <= 4f64.ln() / sys.c.rho);
        assert_eq!(c.parts[0], sys.hocbf_velocity(&xh, &obs));
        assert_eq!(c.parts[1], sys.hocbf_glideslope(&xh, &obs).unwrap().1);
        let b = sys.base_cbfs(&xh);
        assert_eq!((c.parts[2], c.parts[3]), (b[2], b[3]));
    }
}

#[test]
fn composite_gradient_matches_finite_differences() {
    let (_, traj, mut sys) = system_a();
    for mode in [DisturbanceMode::Zero, DisturbanceMode::Truth] {
        sys.c.state_mode = mode;
        let states = safe_states(&sys, &traj, 100, 53);
        let r = gradient_check(&sys, &states);
        assert!(r.chain < 1e-5, "{mode:?}: {r:?}");
        assert!(r.direct < 1e-5, "{mode:?}: {r:?}");
        assert!(r.direct_blocks >= 200, "{mode:?}: {r:?}");
        assert!(r.unresolved <= 100, "{mode:?}: {r:?}");
        assert!(r.floor_excess < 100.0, "{mode:?}: {r:?}");
    }
}

/// Plant, thrust lag and the true disturbance with a held ζ.
fn flow(sys: &CbfSystem, xh: &AugmentedState, zeta: &Vector3<f64>, h: f64) -> AugmentedState {
    let f = |_: f64, z: &SVector<f64, 10>| {
        let s = AugmentedState::from_vec(z);
        let w = sys.env.disturbance(&s.x.r)?;
        augmented_derivative(&s, zeta, &sys.env, &w, sys.a, &sys.vehicle)
    };
    AugmentedState::from_vec(&rk4_step::<10, DynamicsError, _>(f, 0.0, &xh.to_vec(), h).unwrap())
}

#[test]
fn hocbfs_are_lie_derivatives_along_the_true_flow() {
    let (_, traj, mut sys) = system_a();
    sys.c.state_mode = DisturbanceMode::Truth;
    let mut rng = rng(54);
    let d = 1e-3;
    for (xh, obs) in safe_states(&sys, &traj, 100, 55) {
        let zeta = xh.u + ball(&mut rng, 2.0);
        let (p, m) = (flow(&sys, &xh, &zeta, d), flow(&sys, &xh, &zeta, -d));
        let h10 = |s: &AugmentedState| sys.base_cbfs(s)[0];
        let rate10 = (h10(&p) - h10(&m)) / (2.0 * d);
        let h11 = sys.hocbf_velocity(&xh, &obs);
        let scale = rate10.abs().max(sys.c.alpha1 * h10(&xh).abs());
        assert!((rate10 + sys.c.alpha1 * h10(&xh) - h11).abs() < 1e-3 * scale, "h11 {h11:e}");

        let h21 = |s: &AugmentedState| sys.h21(&s.x.r, &s.x.v);
        let rate21 = (h21(&p) - h21(&m)) / (2.0 * d);
        let (h21_0, h22) = sys.hocbf_glideslope(&xh, &obs).unwrap();
        assert_eq!(h21_0, h21(&xh));
        let scale = rate21.abs().max(sys.c.beta2 * h21_0.abs());
        assert!((rate21 + sys.c.beta2 * h21_0 - h22).abs() < 1e-3 * scale, "h22 {h22:e}");

        let (e11, e22) = sys.lie_spot_check(&xh, &obs);
        assert!(e11 <= 1e-12 * h11.abs().max(1e-12) && e22 <= 1e-12 * h22.abs().max(1e-12));
    }
}

#[test]
fn disturbance_modes_differ_by_the_disturbance_term() {
    let (_, traj, mut sys) = system_a();
    let states = safe_states(&sys, &traj, 100, 56);
    for (xh, obs) in states {
        let r = &xh.x.r;
        sys.c.state_mode = DisturbanceMode::Zero;
        let (h11z, (_, h22z)) = (sys.hocbf_velocity(&xh, &obs), sys.hocbf_glideslope(&xh, &obs).unwrap());
        sys.c.state_mode = DisturbanceMode::Truth;
        let (h11t, (_, h22t)) = (sys.hocbf_velocity(&xh, &obs), sys.hocbf_glideslope(&xh, &obs).unwrap());
        sys.c.state_mode = DisturbanceMode::Estimate;
        let h11e = sys.hocbf_velocity(&xh, &obs);
        let w = sys.env.disturbance(r).unwrap();
        let wh = w_hat(&xh.x.v, &obs);

        // ∂h10/∂v = 2·k_vel·sign·(v − v_f)
        let p = &sys.p;
        let sign = if p.speed_sense == SpeedSense::Ceiling { -1.0 } else { 1.0 };
        let dv10 = 2.0 * p.k_vel * sign * (xh.x.v - p.v_f);
        assert!((h11t - h11z - dv10.dot(&w)).abs() <= 1e-9 * h11z.abs().max(dv10.norm() * w.norm()));
        assert!((h11e - h11z - dv10.dot(&wh)).abs() <= 1e-9 * h11z.abs().max(dv10.norm() * wh.norm()));
        // ∂h21/∂v = k_gs·(ê − cosθ·q/‖q‖)
        let q = r - p.beta * p.r_f;
        let dv21 = p.k_gs * (p.e_hat_s - p.theta_gs.cos() * q / q.norm());
        assert!((h22t - h22z - dv21.dot(&w)).abs() <= 1e-9 * h22z.abs().max(dv21.norm() * w.norm()));
    }
}

#[test]
fn relative_degree_structure() {
    let (_, traj, sys) = system_a();
    let mut rng = rng(57);
    for (xh, obs) in safe_states(&sys, &traj, 100, 58) {
        let mut moved = xh;
        moved.u += ball(&mut rng, 3.0) + Vector3::new(0.5, 0.0, 0.0);
        let (h21a, h22a) = sys.hocbf_glideslope(&xh, &obs).unwrap();
        let (h21b, h22b) = sys.hocbf_glideslope(&moved, &obs).unwrap();
        assert_eq!(h21a, h21b);
        assert_eq!(sys.base_cbfs(&xh)[..2], sys.base_cbfs(&moved)[..2]);
        assert_ne!(h22a, h22b);
        assert_ne!(sys.hocbf_velocity(&xh, &obs), sys.hocbf_velocity(&moved, &obs));

        let still = AugmentedState { x: SpacecraftState::new(xh.x.r, Vector3::zeros(), xh.x.m), u: xh.u };
        let (h21, _) = sys.hocbf_glideslope(&still, &obs).unwrap();
        assert!(rel(h21, sys.c.beta1 * sys.base_cbfs(&still)[1], 0.0) < 1e-15);
    }
}

#[test]
fn apex_guard_trips() {
    let (_, _, sys) = system_a();
    let apex = sys.p.beta * sys.p.r_f;
    let xh = AugmentedState { x: SpacecraftState::new(apex + Vector3::new(0.0, 0.5 * APEX_GUARD, 0.0), Vector3::zeros(), 600.0), u: Vector3::new(8.0, 0.0, 0.0) };
    let obs = ObserverState { nu: Vector3::zeros(), tau: 10.0 };
    assert!(matches!(sys.hocbf_glideslope(&xh, &obs), Err(SafetyError::ApexGuard { .. })));
    assert!(matches!(sys.composite_cbf(&xh, &obs), Err(SafetyError::ApexGuard { .. })));
}

#[test]
fn relaxed_constraint_structure() {
    let (_, traj, sys) = system_a();
    let mut rng = rng(59);
    for (xh, obs) in safe_states(&sys, &traj, 100, 60) {
        let c = sys.composite_cbf(&xh, &obs).unwrap();
        let b = |z: &Vector3<f64>, k: f64| sys.relaxed_constraint_b(&xh, &obs, &c, z, k);
        let (z1, z2, k) = (ball(&mut rng, 20.0), ball(&mut rng, 20.0), rng.gen_range(-1e3..1e3));
        let lin = b(&(z1 + z2), k) - b(&z1, k) - b(&z2, k) + b(&Vector3::zeros(), k);
        let scale = b(&z1, k).abs() + b(&z2, k).abs() + c.h.abs();
        assert!(lin.abs() <= 1e-12 * scale, "{lin:e}");
        assert!(((b(&z1, k) - b(&z1, 0.0)) - k * c.h).abs() <= 1e-12 * scale);

        let (d, _) = sys.safety_filter(&xh, &obs, &z1).unwrap();
        assert_eq!(d.phi, b(&z1, 0.0));
    }
}

#[test]
fn filter_branches() {
    let (_, traj, sys) = system_a();
    let mut rng = rng(61);
    let (mut active, mut inactive) = (0, 0);
    for (xh, obs) in safe_states(&sys, &traj, 300, 62) {
        let c = sys.composite_cbf(&xh, &obs).unwrap();
        let g = sys.a * c.dh_du;
        let base = sys.relaxed_constraint_b(&xh, &obs, &c, &Vector3::zeros(), 0.0);
        // pick ζ_d on a chosen side of the constraint
        let z = ball(&mut rng, 20.0);
        let target = if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * rng.gen_range(1e-3..5.0) * g.norm();
        let zeta_d = z + ((target - base - g.dot(&z)) / g.norm_squared()) * g;
        let (d, _) = sys.safety_filter(&xh, &obs, &zeta_d).unwrap();
        assert!(d.lambda >= 0.0);
        if d.phi >= 0.0 {
            inactive += 1;
            assert!(!d.active);
            assert_eq!(d.lambda, 0.0);
            assert_eq!(d.kappa_star, 0.0);
            assert_eq!(d.zeta_star, zeta_d);
        } else {
            active += 1;
            assert!(d.active);
            let bstar = sys.relaxed_constraint_b(&xh, &obs, &c, &d.zeta_star, d.kappa_star);
            assert!(bstar.abs() <= 1e-9, "{bstar:e}");
            // the correction is along ∂h/∂u and κ* has the sign of h
            let corr = d.zeta_star - zeta_d;
            assert!((corr - d.lambda * g).norm() <= 1e-14 * (zeta_d.norm() + corr.norm()));
            assert!(d.kappa_star * c.h >= 0.0);
            assert_eq!(d.kappa_star, c.h * d.lambda / sys.c.gamma);
        }
    }
    assert!(active > 100 && inactive > 100, "{active} / {inactive}");
}

#[test]
fn constraint_params_helpers() {
    let rf = Vector3::new(400.0, 0.0, 0.0);
    let th = 45f64.to_radians();
    assert!(rel(ConstraintParams::beta_tan(0.6, &rf, th), 1.0 - 0.6 / 400.0, 0.0) < 1e-15);
    assert!(rel(ConstraintParams::beta_atan(0.6, &rf, th), 1.0 - 0.6 / (400.0 * th.atan()), 0.0) < 1e-15);
    let (_, _, ku) = ConstraintParams::standard_scaling(0.417, &rf, 5.0, 20.0);
    assert!(rel(ku, 1.0 / 375.0, 0.0) < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn softmin_sandwich(a in -1e3f64..1e3, b in -1e3f64..1e3, c in -1e3f64..1e3, d in -1e3f64..1e3, rho in 0.1f64..100.0) {
        let v = [a, b, c, d];
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let s = softmin(&v, rho).unwrap();
        prop_assert!(s <= min);
        prop_assert!(s >= min - 4f64.ln() / rho);
        let w = softmin_weights(&v, rho);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
