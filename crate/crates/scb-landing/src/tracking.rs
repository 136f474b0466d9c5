//! Feedback-linearizing tracking law with disturbance cancellation.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{f2_g, BodyEnvironment, SpacecraftState, VehicleParams};
use crate::num::{seed, tangent, Dual, Real, V3};
use crate::observer::{w_hat, ObserverState};
use crate::reference::ReferenceSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingGains {
    pub k_p: f64,
    pub k_v: f64,
    pub sigma: f64,
    pub a: f64,
}

impl TrackingGains {
    pub fn validate(&self) -> Result<(), String> {
        if self.k_p > 0.0 && self.k_v > 0.0 && self.sigma > 0.0 && self.a > 0.0 {
            Ok(())
        } else {
            Err(format!("tracking gains must be positive: {self:?}"))
        }
    }
}

/// Thrust below which the mass-flow term is treated as non-smooth.
pub const KINK_THRUST: f64 = 1e-9;

#[allow(clippy::too_many_arguments)]
fn u_desired_g<T: Real>(
    r: V3<T>,
    v: V3<T>,
    m: T,
    nu: V3<T>,
    rr: V3<T>,
    vr: V3<T>,
    mr: T,
    ur: V3<T>,
    tau: f64,
    env: &BodyEnvironment,
    gains: &TrackingGains,
) -> V3<T> {
    let wh = v.mul_s(T::cst(tau)) - nu;
    let fx = f2_g(&r, &v, &env.omega, &env.nominal);
    let fr = f2_g(&rr, &vr, &env.omega, &env.nominal);
    let acc = -fx - wh + fr + ur.div_s(mr) - (v - vr).mul_s(T::cst(gains.k_v)) - (r - rr).mul_s(T::cst(gains.k_p));
    acc.mul_s(m)
}

/// u_d = m·(−f₂(x) − ŵ + f₂(x_r) + u_r/m_r − k_v(v − v_r) − k_p(r − r_r)).
pub fn u_desired(
    x: &SpacecraftState,
    xr: &ReferenceSample,
    obs: &ObserverState,
    env: &BodyEnvironment,
    gains: &TrackingGains,
) -> Vector3<f64> {
    u_desired_g(
        V3::cst(&x.r),
        V3::cst(&x.v),
        x.m,
        V3::cst(&obs.nu),
        V3::cst(&xr.r),
        V3::cst(&xr.v),
        xr.m,
        V3::cst(&xr.u),
        obs.tau,
        env,
        gains,
    )
    .re()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesiredRate {
    pub value: Vector3<f64>,
    /// Set when ‖u‖ is below [`KINK_THRUST`]; the value is the one-sided limit.
    pub kink: bool,
}

/// Total time derivative of u_d along the approximate closed-loop flow.
///
/// The plant rate uses ŵ in place of w, the observer rate comes from its own
/// dynamics, the reference moves by the nominal dynamics, and u̇_r is given.
/// All four contributions are taken in a single forward-mode pass.
pub fn u_desired_dot(
    x: &SpacecraftState,
    u: &Vector3<f64>,
    xr: &ReferenceSample,
    obs: &ObserverState,
    env: &BodyEnvironment,
    gains: &TrackingGains,
    vehicle: &VehicleParams,
) -> DesiredRate {
    let alpha = vehicle.alpha();
    let wh = w_hat(&x.v, obs);
    let fx = f2_g(&V3::<f64>::cst(&x.r), &V3::cst(&x.v), &env.omega, &env.nominal).re();
    let fr = f2_g(&V3::<f64>::cst(&xr.r), &V3::cst(&xr.v), &env.omega, &env.nominal).re();
    let vdot = fx + u / x.m + wh;
    let nudot = obs.tau * vdot;
    let mdot = -alpha * u.norm();
    let vrdot = fr + xr.u / xr.m;
    let mrdot = -alpha * xr.u.norm();
    let out = u_desired_g(
        seed(&x.r, &x.v),
        seed(&x.v, &vdot),
        Dual::new(x.m, mdot),
        seed(&obs.nu, &nudot),
        seed(&xr.r, &xr.v),
        seed(&xr.v, &vrdot),
        Dual::new(xr.m, mrdot),
        seed(&xr.u, &xr.u_dot),
        obs.tau,
        env,
        gains,
    );
    DesiredRate { value: tangent(&out), kink: u.norm() < KINK_THRUST }
}

/// ζ_d = u + (u̇_d − σ(u − u_d))/a.
pub fn zeta_from(u: &Vector3<f64>, ud: &Vector3<f64>, ud_dot: &Vector3<f64>, gains: &TrackingGains) -> Vector3<f64> {
    (gains.a * u + ud_dot - gains.sigma * (u - ud)) / gains.a
}

/// Desired surrogate control together with u_d and u̇_d.
pub fn zeta_desired(
    x: &SpacecraftState,
    u: &Vector3<f64>,
    xr: &ReferenceSample,
    obs: &ObserverState,
    env: &BodyEnvironment,
    gains: &TrackingGains,
    vehicle: &VehicleParams,
) -> (Vector3<f64>, Vector3<f64>, DesiredRate) {
    let ud = u_desired(x, xr, obs, env, gains);
    let rate = u_desired_dot(x, u, xr, obs, env, gains, vehicle);
    (zeta_from(u, &ud, &rate.value, gains), ud, rate)
}
