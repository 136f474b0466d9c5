//! Translational dynamics in the asteroid-fixed rotating frame.

use nalgebra::{Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gravity::{GravityError, GravityModel};
use crate::num::{Real, V3};

/// Standard gravity used in the specific-impulse definition, m/s².
pub const G_E: f64 = 9.807;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Gravity(#[from] GravityError),
    #[error("propellant exhausted: mass {mass:.3} kg below dry mass {dry:.3} kg")]
    PropellantExhausted { mass: f64, dry: f64 },
    #[error("non-finite derivative at t = {t:.4} s")]
    NonFinite { t: f64 },
    #[error("invalid vehicle parameters: {0}")]
    InvalidVehicle(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpacecraftState {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    pub m: f64,
}

impl SpacecraftState {
    pub fn new(r: Vector3<f64>, v: Vector3<f64>, m: f64) -> Self {
        Self { r, v, m }
    }

    pub fn to_vec(&self) -> SVector<f64, 7> {
        SVector::<f64, 7>::from_column_slice(&[self.r.x, self.r.y, self.r.z, self.v.x, self.v.y, self.v.z, self.m])
    }

    pub fn from_vec(x: &SVector<f64, 7>) -> Self {
        Self { r: Vector3::new(x[0], x[1], x[2]), v: Vector3::new(x[3], x[4], x[5]), m: x[6] }
    }
}

/// Spacecraft state plus the thrust vector, the state of the cascade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentedState {
    pub x: SpacecraftState,
    pub u: Vector3<f64>,
}

impl AugmentedState {
    pub fn to_vec(&self) -> SVector<f64, 10> {
        let mut out = SVector::<f64, 10>::zeros();
        out.fixed_rows_mut::<7>(0).copy_from(&self.x.to_vec());
        out.fixed_rows_mut::<3>(7).copy_from(&self.u);
        out
    }

    pub fn from_vec(z: &SVector<f64, 10>) -> Self {
        Self {
            x: SpacecraftState::from_vec(&z.fixed_rows::<7>(0).into_owned()),
            u: Vector3::new(z[7], z[8], z[9]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyEnvironment {
    pub omega: Vector3<f64>,
    pub truth: GravityModel,
    pub nominal: GravityModel,
}

impl BodyEnvironment {
    pub fn disturbance(&self, r: &Vector3<f64>) -> Result<Vector3<f64>, GravityError> {
        Ok(self.truth.gradient(r)? - self.nominal.gradient(r)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub m_wet: f64,
    pub m_dry: f64,
    pub isp: f64,
    pub t_min: f64,
    pub t_max: f64,
}

impl VehicleParams {
    pub fn new(m_wet: f64, m_dry: f64, isp: f64, t_min: f64, t_max: f64) -> Result<Self, DynamicsError> {
        if !(0.0 < m_dry && m_dry < m_wet) {
            return Err(DynamicsError::InvalidVehicle(format!("need 0 < m_dry < m_wet, got {m_dry}, {m_wet}")));
        }
        if !(0.0 <= t_min && t_min < t_max) {
            return Err(DynamicsError::InvalidVehicle(format!("need 0 <= T_min < T_max, got {t_min}, {t_max}")));
        }
        if !(isp > 0.0) {
            return Err(DynamicsError::InvalidVehicle(format!("Isp {isp} must be positive")));
        }
        Ok(Self { m_wet, m_dry, isp, t_min, t_max })
    }

    /// Mass-flow coefficient 1/(Isp·g_E).
    pub fn alpha(&self) -> f64 {
        1.0 / (self.isp * G_E)
    }
}

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Velocity block of the drift: Coriolis, centrifugal and nominal gravity.
pub fn f2_g<T: Real>(r: &V3<T>, v: &V3<T>, omega: &Vector3<f64>, nominal: &GravityModel) -> V3<T> {
    let w = V3::<T>::cst(omega);
    let cor = w.cross(v).mul_s(T::cst(-2.0));
    let cen = -w.cross(&w.cross(r));
    cor + cen + nominal.gradient_g(r)
}

pub fn f2(x: &SpacecraftState, env: &BodyEnvironment) -> Result<Vector3<f64>, GravityError> {
    let g = env.nominal.gradient(&x.r)?;
    Ok(-2.0 * env.omega.cross(&x.v) - env.omega.cross(&env.omega.cross(&x.r)) + g)
}

pub fn drift(x: &SpacecraftState, env: &BodyEnvironment) -> Result<SVector<f64, 7>, GravityError> {
    let a = f2(x, env)?;
    Ok(SVector::<f64, 7>::from_column_slice(&[x.v.x, x.v.y, x.v.z, a.x, a.y, a.z, 0.0]))
}

/// ẋ = f(x) + g(x)u + D·w + B‖u‖.
pub fn state_derivative(
    x: &SpacecraftState,
    u: &Vector3<f64>,
    env: &BodyEnvironment,
    w: &Vector3<f64>,
    vehicle: &VehicleParams,
) -> Result<SVector<f64, 7>, DynamicsError> {
    if x.m < vehicle.m_dry {
        return Err(DynamicsError::PropellantExhausted { mass: x.m, dry: vehicle.m_dry });
    }
    let mut d = drift(x, env)?;
    let acc = u / x.m + w;
    for i in 0..3 {
        d[3 + i] += acc[i];
    }
    d[6] = -vehicle.alpha() * u.norm();
    Ok(d)
}

/// Cascade of the plant with the first-order thrust lag u̇ = −a·u + a·ζ.
pub fn augmented_derivative(
    xh: &AugmentedState,
    zeta: &Vector3<f64>,
    env: &BodyEnvironment,
    w: &Vector3<f64>,
    a: f64,
    vehicle: &VehicleParams,
) -> Result<SVector<f64, 10>, DynamicsError> {
    let dx = state_derivative(&xh.x, &xh.u, env, w, vehicle)?;
    let du = a * (zeta - xh.u);
    let mut out = SVector::<f64, 10>::zeros();
    out.fixed_rows_mut::<7>(0).copy_from(&dx);
    out.fixed_rows_mut::<3>(7).copy_from(&du);
    Ok(out)
}

/// One classical Runge-Kutta step of `ẏ = f(t, y)`.
pub fn rk4_step<const N: usize, E, F>(f: F, t: f64, y: &SVector<f64, N>, dt: f64) -> Result<SVector<f64, N>, E>
where
    F: Fn(f64, &SVector<f64, N>) -> Result<SVector<f64, N>, E>,
    E: From<DynamicsError>,
{
    let check = |k: SVector<f64, N>, ts: f64| -> Result<SVector<f64, N>, E> {
        if k.iter().all(|v| v.is_finite()) {
            Ok(k)
        } else {
            Err(DynamicsError::NonFinite { t: ts }.into())
        }
    };
    let h2 = 0.5 * dt;
    let k1 = check(f(t, y)?, t)?;
    let k2 = check(f(t + h2, &(y + k1 * h2))?, t + h2)?;
    let k3 = check(f(t + h2, &(y + k2 * h2))?, t + h2)?;
    let k4 = check(f(t + dt, &(y + k3 * dt))?, t + dt)?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}
