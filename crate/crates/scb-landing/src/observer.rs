//! Extended high-gain observer for the gravity model error.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{f2, BodyEnvironment, SpacecraftState};
use crate::gravity::GravityError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverState {
    pub nu: Vector3<f64>,
    pub tau: f64,
}

/// ν(0) = τ·v₀, so the estimate starts at exactly zero.
pub fn init_observer(tau: f64, v0: &Vector3<f64>) -> ObserverState {
    assert!(tau > 0.0, "observer gain must be positive");
    ObserverState { nu: tau * v0, tau }
}

pub fn w_hat(v: &Vector3<f64>, obs: &ObserverState) -> Vector3<f64> {
    obs.tau * v - obs.nu
}

/// ν̇ given a precomputed velocity-block drift `f2`.
pub fn nu_rate(f2: &Vector3<f64>, u: &Vector3<f64>, m: f64, v: &Vector3<f64>, obs: &ObserverState) -> Vector3<f64> {
    obs.tau * (f2 + u / m + w_hat(v, obs))
}

/// ν̇ = τ·(f₂(x) + u/m + ŵ).
pub fn nu_derivative(
    x: &SpacecraftState,
    u: &Vector3<f64>,
    obs: &ObserverState,
    env: &BodyEnvironment,
) -> Result<Vector3<f64>, GravityError> {
    Ok(nu_rate(&f2(x, env)?, u, x.m, &x.v, obs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_estimate_is_zero() {
        let v0 = Vector3::new(-1.64, -3.02, -3.64);
        let obs = init_observer(10.0, &v0);
        assert!((obs.nu - Vector3::new(-16.4, -30.2, -36.4)).norm() < 1e-12);
        assert_eq!(w_hat(&v0, &obs), Vector3::zeros());
        assert_eq!(init_observer(3.0, &Vector3::zeros()).nu, Vector3::zeros());
    }
}
