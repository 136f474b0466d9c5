//! Reference simulations shared by the module tests and the acceptance run.

use nalgebra::{DMatrix, DVector, SVector, Vector3};

use super::vehicle;
use scb_landing::dynamics::{rk4_step, state_derivative, BodyEnvironment, DynamicsError, SpacecraftState};
use scb_landing::gravity::GravityModel;
use scb_landing::observer::{init_observer, nu_derivative, w_hat, ObserverState};
use scb_landing::reference::ReferenceSample;
use scb_landing::tracking::{u_desired, zeta_from, TrackingGains};

pub fn gains() -> TrackingGains {
    TrackingGains { k_p: 0.002, k_v: 0.09, sigma: 5.0, a: 3.0 }
}

pub fn free_env() -> BodyEnvironment {
    let g = GravityModel::point_mass(1e-300).unwrap();
    BodyEnvironment { omega: Vector3::zeros(), truth: g.clone(), nominal: g }
}

pub fn sample(r: Vector3<f64>, v: Vector3<f64>, m: f64, u: Vector3<f64>, u_dot: Vector3<f64>) -> ReferenceSample {
    ReferenceSample { t: 0.0, r, v, m, u, u_dot }
}

pub fn exact_env() -> BodyEnvironment {
    let g = GravityModel::point_mass(61.7).unwrap();
    BodyEnvironment { omega: Vector3::new(0.0, 0.0, 4.3633e-4), truth: g.clone(), nominal: g }
}

/// Plant and observer under an injected disturbance w(t) with a fixed thrust.
/// Returns (t, w(t), ŵ(t)) at every step.
pub fn observe(tau: f64, w: impl Fn(f64) -> Vector3<f64>, t_end: f64, dt: f64) -> Vec<(f64, Vector3<f64>, Vector3<f64>)> {
    let env = exact_env();
    let veh = vehicle();
    let u = Vector3::new(3.0, -8.0, 6.0);
    let x0 = SpacecraftState::new(Vector3::new(1500.0, -200.0, 300.0), Vector3::new(-1.64, -3.02, -3.64), 700.0);
    let obs0 = init_observer(tau, &x0.v);
    let mut y = SVector::<f64, 10>::zeros();
    y.fixed_rows_mut::<7>(0).copy_from(&x0.to_vec());
    y.fixed_rows_mut::<3>(7).copy_from(&obs0.nu);
    let split = |y: &SVector<f64, 10>| {
        let x = SpacecraftState::from_vec(&y.fixed_rows::<7>(0).into_owned());
        (x, ObserverState { nu: Vector3::new(y[7], y[8], y[9]), tau })
    };
    let n = (t_end / dt).round() as usize;
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = k as f64 * dt;
        let (x, obs) = split(&y);
        out.push((t, w(t), w_hat(&x.v, &obs)));
        if k == n {
            break;
        }
        y = rk4_step::<10, DynamicsError, _>(
            |t, y| {
                let (x, obs) = split(y);
                let dx = state_derivative(&x, &u, &env, &w(t), &veh)?;
                let dnu = nu_derivative(&x, &u, &obs, &env)?;
                let mut d = SVector::<f64, 10>::zeros();
                d.fixed_rows_mut::<7>(0).copy_from(&dx);
                d.fixed_rows_mut::<3>(7).copy_from(&dnu);
                Ok(d)
            },
            t,
            &y,
            dt,
        )
        .unwrap();
    }
    out
}

/// Continuous loop u = u_d with the reference under nominal dynamics and a
/// constant u_r. With `exact` the estimate is pinned to the true w, otherwise
/// the observer runs. Returns (t, e_r) once per second.
pub fn closed_loop(
    env: &BodyEnvironment,
    w: impl Fn(f64, &Vector3<f64>) -> Vector3<f64>,
    tau: f64,
    exact: bool,
    e0: (Vector3<f64>, Vector3<f64>),
    t_end: f64,
) -> Vec<(f64, Vector3<f64>, Vector3<f64>)> {
    let veh = vehicle();
    let g = gains();
    let ur = Vector3::new(6.0, -4.0, 3.0);
    let xr0 = SpacecraftState::new(Vector3::new(1500.0, 300.0, 200.0), Vector3::new(0.2, -0.1, 0.05), 690.0);
    let x0 = SpacecraftState::new(xr0.r + e0.0, xr0.v + e0.1, 690.0);
    let mut y = SVector::<f64, 17>::zeros();
    y.fixed_rows_mut::<7>(0).copy_from(&x0.to_vec());
    y.fixed_rows_mut::<3>(7).copy_from(&(tau * x0.v - w(0.0, &x0.r)));
    y.fixed_rows_mut::<7>(10).copy_from(&xr0.to_vec());
    let split = |t: f64, y: &SVector<f64, 17>| {
        let x = SpacecraftState::from_vec(&y.fixed_rows::<7>(0).into_owned());
        let xr = SpacecraftState::from_vec(&y.fixed_rows::<7>(10).into_owned());
        let nu = if exact { tau * x.v - w(t, &x.r) } else { Vector3::new(y[7], y[8], y[9]) };
        (x, ObserverState { nu, tau }, xr)
    };
    let dt = 0.01;
    let per_second = 100;
    let n = (t_end / dt).round() as usize;
    let mut out = Vec::new();
    for k in 0..=n {
        let t = k as f64 * dt;
        if k % per_second == 0 {
            let (x, _, xr) = split(t, &y);
            out.push((t, x.r - xr.r, x.v - xr.v));
        }
        if k == n {
            break;
        }
        y = rk4_step::<17, DynamicsError, _>(
            |t, y| {
                let (x, obs, xr) = split(t, y);
                let s = sample(xr.r, xr.v, xr.m, ur, Vector3::zeros());
                let u = u_desired(&x, &s, &obs, env, &g);
                let mut d = SVector::<f64, 17>::zeros();
                d.fixed_rows_mut::<7>(0).copy_from(&state_derivative(&x, &u, env, &w(t, &x.r), &veh)?);
                d.fixed_rows_mut::<3>(7).copy_from(&nu_derivative(&x, &u, &obs, env)?);
                d.fixed_rows_mut::<7>(10).copy_from(&state_derivative(&xr, &ur, env, &Vector3::zeros(), &veh)?);
                Ok(d)
            },
            t,
            &y,
            dt,
        )
        .unwrap();
    }
    out
}

/// Second-order recurrence fitted to e alone, mapped back to continuous poles.
pub fn fitted_poles(e: &[f64], dt: f64) -> (f64, f64) {
    let n = e.len() - 2;
    let a = DMatrix::from_fn(n, 2, |i, j| e[i + 1 - j]);
    let b = DVector::from_fn(n, |i, _| e[i + 2]);
    let c = a.clone().svd(true, true).solve(&b, 1e-15).unwrap();
    let (a1, a2) = (c[0], c[1]);
    let disc = a1 * a1 + 4.0 * a2;
    assert!(disc > 0.0, "oscillatory fit");
    let z1 = 0.5 * (a1 + disc.sqrt());
    let z2 = 0.5 * (a1 - disc.sqrt());
    (z1.ln() / dt, z2.ln() / dt)
}

/// u under u̇ = a(ζ_d − u) with a constant u_d and u̇_d = 0.
pub fn lag_response(u0: Vector3<f64>, ud: Vector3<f64>, t_end: f64, dt: f64) -> Vec<(f64, f64)> {
    let g = gains();
    let mut y = SVector::<f64, 3>::from(u0);
    let n = (t_end / dt).round() as usize;
    let mut out = vec![(0.0, (u0 - ud).norm())];
    for k in 0..n {
        y = rk4_step::<3, DynamicsError, _>(
            |_, y| {
                let u = Vector3::new(y[0], y[1], y[2]);
                Ok(g.a * (zeta_from(&u, &ud, &Vector3::zeros(), &g) - u))
            },
            k as f64 * dt,
            &y,
            dt,
        )
        .unwrap();
        out.push(((k + 1) as f64 * dt, (Vector3::new(y[0], y[1], y[2]) - ud).norm()));
    }
    out
}

