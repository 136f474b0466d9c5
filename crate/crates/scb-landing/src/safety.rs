//! Barrier functions and the closed-form minimum-intervention filter.
//!
//! The higher-order barriers are written out in closed form (their Lie
//! derivatives are short); gradients of the composite barrier come from
//! forward-mode dual numbers over the ten augmented coordinates.

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{f2_g, AugmentedState, BodyEnvironment, VehicleParams};
use crate::num::{Dual, Real, V3};
use crate::observer::{w_hat, ObserverState};

/// Radius around the cone apex inside which the glideslope gradient is not trusted.
pub const APEX_GUARD: f64 = 1.0;
/// Smallest admissible filter denominator, relative to ‖∇h‖², when the
/// constraint is active. Relative because the barrier scaling constants can
/// make h and its gradient O(1e-7) while the program stays well posed.
pub const DENOM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SafetyError {
    #[error("glideslope apex guard: ‖r − βr_f‖ = {dist:.3} m < {APEX_GUARD} m")]
    ApexGuard { dist: f64 },
    #[error("safety filter infeasible: φ = {phi:.3e}, denominator = {denom:.3e}")]
    Infeasible { phi: f64, denom: f64 },
    #[error("softmin of an empty list")]
    EmptySoftmin,
}

/// Which side of the speed bound the first state constraint keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpeedSense {
    /// ‖v − v_f‖ ≤ v_min·√(1 + ‖r − r_f‖²): the relative speed shrinks with range.
    #[default]
    Ceiling,
    /// ‖v − v_f‖ ≥ v_min·√(1 + ‖r − r_f‖²), the sign as printed in the formulation.
    Floor,
}

impl SpeedSense {
    fn sign(self) -> f64 {
        match self {
            SpeedSense::Ceiling => -1.0,
            SpeedSense::Floor => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceMode {
    #[default]
    Zero,
    /// Observer estimate, frozen at the evaluation instant.
    Estimate,
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintParams {
    pub v_min: f64,
    pub theta_gs: f64,
    pub beta: f64,
    pub e_hat_s: Vector3<f64>,
    pub r_f: Vector3<f64>,
    pub v_f: Vector3<f64>,
    pub k_vel: f64,
    pub k_gs: f64,
    pub k_u: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub r_l: f64,
    #[serde(default)]
    pub speed_sense: SpeedSense,
}

impl ConstraintParams {
    /// β = 1 − r_l/(‖r_f‖·tan θ_gs).
    pub fn beta_tan(r_l: f64, r_f: &Vector3<f64>, theta_gs: f64) -> f64 {
        1.0 - r_l / (r_f.norm() * theta_gs.tan())
    }

    /// β with the arctangent reading of the relaxation constant.
    pub fn beta_atan(r_l: f64, r_f: &Vector3<f64>, theta_gs: f64) -> f64 {
        1.0 - r_l / (r_f.norm() * theta_gs.atan())
    }

    /// Scaling constants normalizing each barrier to order one.
    pub fn standard_scaling(v_min: f64, r_f: &Vector3<f64>, t_min: f64, t_max: f64) -> (f64, f64, f64) {
        let rf = r_f.norm();
        (1.0 / (10.0 * v_min * rf * rf), 1.0 / (0.1 * rf), 1.0 / (t_max * t_max - t_min * t_min))
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.v_min > 0.0 && self.v_min <= self.v_f.norm().max(self.v_min) + 1e-12) {
            return Err(format!("v_min {} must be positive", self.v_min));
        }
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&self.theta_gs) {
            return Err(format!("theta_gs {} outside [0, π/2]", self.theta_gs));
        }
        if (self.e_hat_s.norm() - 1.0).abs() > 1e-9 {
            return Err("e_hat_s must be a unit vector".into());
        }
        if !(self.k_vel > 0.0 && self.k_gs > 0.0 && self.k_u > 0.0) {
            return Err("barrier scaling constants must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbfParams {
    pub rho: f64,
    pub gamma: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub alpha: f64,
    /// Disturbance used inside h11 and h22.
    pub state_mode: DisturbanceMode,
    /// Disturbance used in the filter constraint.
    pub filter_mode: DisturbanceMode,
}

impl Default for CbfParams {
    fn default() -> Self {
        Self {
            rho: 40.0,
            gamma: 1e10,
            alpha1: 1.0,
            beta1: 10.0,
            beta2: 10.0,
            alpha: 10.0,
            state_mode: DisturbanceMode::Zero,
            filter_mode: DisturbanceMode::Zero,
        }
    }
}

impl CbfParams {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.rho, self.gamma, self.alpha1, self.beta1, self.beta2, self.alpha];
        if all.iter().all(|v| *v > 0.0) {
            Ok(())
        } else {
            Err(format!("barrier parameters must be positive: {self:?}"))
        }
    }
}

/// Raw constraint values (ψ1, ψ2, φ1, φ2), as monitored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawConstraints {
    pub psi1: f64,
    pub psi2: f64,
    pub phi1: f64,
    pub phi2: f64,
}

pub fn raw_constraints(r: &Vector3<f64>, v: &Vector3<f64>, u: &Vector3<f64>, p: &ConstraintParams) -> RawConstraints {
    let speed = (v - p.v_f).norm();
    let bound = p.v_min * (1.0 + (r - p.r_f).norm_squared()).sqrt();
    let psi1 = match p.speed_sense {
        SpeedSense::Floor => speed - bound,
        SpeedSense::Ceiling => bound - speed,
    };
    let q = r - p.beta * p.r_f;
    let psi2 = p.e_hat_s.dot(&q) - q.norm() * p.theta_gs.cos();
    let un = u.norm();
    RawConstraints { psi1, psi2, phi1: p.t_max - un, phi2: un - p.t_min }
}

/// (h10, h20, h30, h40).
pub fn base_cbfs(r: &Vector3<f64>, v: &Vector3<f64>, u: &Vector3<f64>, p: &ConstraintParams) -> [f64; 4] {
    let (r, v, u) = (V3::cst(r), V3::cst(v), V3::cst(u));
    [h10(&r, &v, p), h20(&r, p), h30(&u, p), h40(&u, p)]
}

fn h10<T: Real>(r: &V3<T>, v: &V3<T>, p: &ConstraintParams) -> T {
    let e = *v - V3::cst(&p.v_f);
    let d = *r - V3::cst(&p.r_f);
    let vm2 = p.v_min * p.v_min;
    (e.norm_sq() - (d.norm_sq() + T::cst(1.0)).scale(vm2)).scale(p.k_vel * p.speed_sense.sign())
}

fn h20<T: Real>(r: &V3<T>, p: &ConstraintParams) -> T {
    let q = *r - V3::cst(&p.r_f).mul_s(T::cst(p.beta));
    (V3::cst(&p.e_hat_s).dot(&q) - q.norm().scale(p.theta_gs.cos())).scale(p.k_gs)
}

fn h30<T: Real>(u: &V3<T>, p: &ConstraintParams) -> T {
    (T::cst(p.t_max * p.t_max) - u.norm_sq()).scale(p.k_u)
}

fn h40<T: Real>(u: &V3<T>, p: &ConstraintParams) -> T {
    (u.norm_sq() - T::cst(p.t_min * p.t_min)).scale(p.k_u)
}

/// −(1/ρ)·log Σ exp(−ρ z_i), shifted by the minimum so no term overflows.
pub fn softmin(values: &[f64], rho: f64) -> Result<f64, SafetyError> {
    if values.is_empty() {
        return Err(SafetyError::EmptySoftmin);
    }
    Ok(softmin_g(values, rho))
}

fn softmin_g<T: Real>(values: &[T], rho: f64) -> T {
    // Shift by the smallest entry; that entry contributes exactly 1, so the
    // remainder goes through ln_1p and tiny gaps are not lost.
    let (imin, zmin) = values
        .iter()
        .map(Real::re)
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, z)| if z < acc.1 { (i, z) } else { acc });
    let shift = T::cst(zmin);
    let mut rest = T::cst(0.0);
    for (i, z) in values.iter().enumerate() {
        if i != imin {
            rest = rest + (*z - shift).scale(-rho).exp();
        }
    }
    let head = values[imin] - shift;
    // exp(−ρ·head) = 1 in value; keep its tangent through the identity
    // −ln(e^{−ρ head} + rest)/ρ = head − ln(1 + rest·e^{ρ head})/ρ.
    shift + head - (rest * head.scale(rho).exp()).ln_1p().scale(1.0 / rho)
}

/// Soft-min weights e^{−ρ h_i}/Σ e^{−ρ h_j}.
pub fn softmin_weights(values: &[f64], rho: f64) -> Vec<f64> {
    let zmin = values.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = values.iter().map(|z| (-rho * (z - zmin)).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Composite barrier with its gradient over (r, v, m) and u.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeCbf {
    pub h: f64,
    pub dh_dx: SVector<f64, 7>,
    pub dh_du: Vector3<f64>,
    /// (h11, h22, h30, h40).
    pub parts: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub zeta_star: Vector3<f64>,
    pub kappa_star: f64,
    pub lambda: f64,
    pub phi: f64,
    pub h: f64,
    pub active: bool,
}

/// Barrier machinery bound to one scenario.
#[derive(Debug, Clone)]
pub struct CbfSystem {
    pub p: ConstraintParams,
    pub c: CbfParams,
    pub env: BodyEnvironment,
    pub vehicle: VehicleParams,
    /// Control-dynamics gain.
    pub a: f64,
}

impl CbfSystem {
    fn disturbance<T: Real>(&self, mode: DisturbanceMode, r: &V3<T>, wh: &Vector3<f64>) -> V3<T> {
        match mode {
            DisturbanceMode::Zero => V3::zero(),
            DisturbanceMode::Estimate => V3::cst(wh),
            DisturbanceMode::Truth => self.env.truth.gradient_g(r) - self.env.nominal.gradient_g(r),
        }
    }

    /// Plant acceleration seen by the barriers: nominal drift, thrust, and
    /// the state-mode disturbance.
    fn accel<T: Real>(&self, r: &V3<T>, v: &V3<T>, m: T, u: &V3<T>, wh: &Vector3<f64>) -> V3<T> {
        f2_g(r, v, &self.env.omega, &self.env.nominal) + u.div_s(m) + self.disturbance(self.c.state_mode, r, wh)
    }

    fn h11_g<T: Real>(&self, r: &V3<T>, v: &V3<T>, m: T, u: &V3<T>, wh: &Vector3<f64>) -> T {
        let p = &self.p;
        let vdot = self.accel(r, v, m, u, wh);
        let e = *v - V3::cst(&p.v_f);
        let d = *r - V3::cst(&p.r_f);
        let lie = (e.dot(&vdot) - d.dot(v).scale(p.v_min * p.v_min)).scale(2.0 * p.k_vel * p.speed_sense.sign());
        lie + h10(r, v, p).scale(self.c.alpha1)
    }

    fn cone_geometry<T: Real>(&self, r: &V3<T>) -> (V3<T>, T, V3<T>) {
        let p = &self.p;
        let q = *r - V3::cst(&p.r_f).mul_s(T::cst(p.beta));
        let n = q.norm();
        let g = V3::cst(&p.e_hat_s) - q.div_s(n).mul_s(T::cst(p.theta_gs.cos()));
        (q, n, g)
    }

    fn h21_g<T: Real>(&self, r: &V3<T>, v: &V3<T>) -> T {
        let (_, _, g) = self.cone_geometry(r);
        g.dot(v).scale(self.p.k_gs) + h20(r, &self.p).scale(self.c.beta1)
    }

    fn h22_g<T: Real>(&self, r: &V3<T>, v: &V3<T>, m: T, u: &V3<T>, wh: &Vector3<f64>) -> T {
        let p = &self.p;
        let (q, n, g) = self.cone_geometry(r);
        let vdot = self.accel(r, v, m, u, wh);
        let qv = q.dot(v) / n;
        let curvature = (v.norm_sq() - qv * qv).scale(p.theta_gs.cos()) / n;
        let lie = (g.dot(&vdot) - curvature).scale(p.k_gs) + g.dot(v).scale(p.k_gs * self.c.beta1);
        lie + self.h21_g(r, v).scale(self.c.beta2)
    }

    fn parts_g<T: Real>(&self, r: &V3<T>, v: &V3<T>, m: T, u: &V3<T>, wh: &Vector3<f64>) -> [T; 4] {
        [self.h11_g(r, v, m, u, wh), self.h22_g(r, v, m, u, wh), h30(u, &self.p), h40(u, &self.p)]
    }

    fn guard(&self, r: &Vector3<f64>) -> Result<(), SafetyError> {
        let dist = (r - self.p.beta * self.p.r_f).norm();
        if dist < APEX_GUARD {
            Err(SafetyError::ApexGuard { dist })
        } else {
            Ok(())
        }
    }

    pub fn raw_constraints(&self, xh: &AugmentedState) -> RawConstraints {
        raw_constraints(&xh.x.r, &xh.x.v, &xh.u, &self.p)
    }

    pub fn base_cbfs(&self, xh: &AugmentedState) -> [f64; 4] {
        base_cbfs(&xh.x.r, &xh.x.v, &xh.u, &self.p)
    }

    pub fn hocbf_velocity(&self, xh: &AugmentedState, obs: &ObserverState) -> f64 {
        let wh = w_hat(&xh.x.v, obs);
        self.h11_g(&V3::cst(&xh.x.r), &V3::cst(&xh.x.v), xh.x.m, &V3::cst(&xh.u), &wh)
    }

    /// (h21, h22).
    pub fn hocbf_glideslope(&self, xh: &AugmentedState, obs: &ObserverState) -> Result<(f64, f64), SafetyError> {
        self.guard(&xh.x.r)?;
        let wh = w_hat(&xh.x.v, obs);
        let (r, v, u) = (V3::cst(&xh.x.r), V3::cst(&xh.x.v), V3::cst(&xh.u));
        Ok((self.h21_g(&r, &v), self.h22_g(&r, &v, xh.x.m, &u, &wh)))
    }

    /// h21 as a plain function of position and velocity.
    pub fn h21(&self, r: &Vector3<f64>, v: &Vector3<f64>) -> f64 {
        self.h21_g(&V3::cst(r), &V3::cst(v))
    }

    /// The composite barrier evaluated with every coordinate seeded along
    /// the tangent `dz` over (r, v, m, u).
    fn composite_dir(&self, z: &SVector<f64, 10>, dz: &SVector<f64, 10>, wh: &Vector3<f64>) -> (Dual<f64>, [f64; 4]) {
        let c = |i: usize| Dual::new(z[i], dz[i]);
        let r = V3::new(c(0), c(1), c(2));
        let v = V3::new(c(3), c(4), c(5));
        let u = V3::new(c(7), c(8), c(9));
        let parts = self.parts_g(&r, &v, c(6), &u, wh);
        let h = softmin_g(&parts, self.c.rho);
        (h, [parts[0].v, parts[1].v, parts[2].v, parts[3].v])
    }

    pub fn composite_cbf(&self, xh: &AugmentedState, obs: &ObserverState) -> Result<CompositeCbf, SafetyError> {
        self.guard(&xh.x.r)?;
        let wh = w_hat(&xh.x.v, obs);
        let z = xh.to_vec();
        let mut grad = SVector::<f64, 10>::zeros();
        let mut h = 0.0;
        let mut parts = [0.0; 4];
        for i in 0..10 {
            let mut dz = SVector::<f64, 10>::zeros();
            dz[i] = 1.0;
            let (hd, p) = self.composite_dir(&z, &dz, &wh);
            grad[i] = hd.d;
            h = hd.v;
            parts = p;
        }
        Ok(CompositeCbf {
            h,
            dh_dx: grad.fixed_rows::<7>(0).into_owned(),
            dh_du: Vector3::new(grad[7], grad[8], grad[9]),
            parts,
        })
    }

    /// Augmented drift f̂(x̂): (v, f₂ + u/m, −α‖u‖, −a·u).
    pub fn augmented_drift(&self, xh: &AugmentedState) -> SVector<f64, 10> {
        let x = &xh.x;
        let acc = f2_g(&V3::<f64>::cst(&x.r), &V3::cst(&x.v), &self.env.omega, &self.env.nominal).re() + xh.u / x.m;
        let mut f = SVector::<f64, 10>::zeros();
        f.fixed_rows_mut::<3>(0).copy_from(&x.v);
        f.fixed_rows_mut::<3>(3).copy_from(&acc);
        f[6] = -self.vehicle.alpha() * xh.u.norm();
        f.fixed_rows_mut::<3>(7).copy_from(&(-self.a * xh.u));
        f
    }

    fn filter_disturbance(&self, xh: &AugmentedState, obs: &ObserverState) -> Vector3<f64> {
        let wh = w_hat(&xh.x.v, obs);
        self.disturbance(self.c.filter_mode, &V3::<f64>::cst(&xh.x.r), &wh).re()
    }

    /// b(ζ, κ) = L_f̂h + a·∂h/∂u·ζ + ∂h/∂x·D·ŵ + α(h) + κ·h.
    pub fn relaxed_constraint_b(
        &self,
        xh: &AugmentedState,
        obs: &ObserverState,
        cbf: &CompositeCbf,
        zeta: &Vector3<f64>,
        kappa: f64,
    ) -> f64 {
        let f = self.augmented_drift(xh);
        let grad = grad10(cbf.dh_dx, cbf.dh_du);
        let lf = grad.dot(&f);
        let wd = self.filter_disturbance(xh, obs);
        let dw = cbf.dh_dx.fixed_rows::<3>(3).dot(&wd);
        lf + self.a * cbf.dh_du.dot(zeta) + dw + self.c.alpha * cbf.h + kappa * cbf.h
    }

    pub fn safety_filter(
        &self,
        xh: &AugmentedState,
        obs: &ObserverState,
        zeta_d: &Vector3<f64>,
    ) -> Result<(FilterDecision, CompositeCbf), SafetyError> {
        let cbf = self.composite_cbf(xh, obs)?;
        let phi = self.relaxed_constraint_b(xh, obs, &cbf, zeta_d, 0.0);
        if phi >= 0.0 {
            let d = FilterDecision { zeta_star: *zeta_d, kappa_star: 0.0, lambda: 0.0, phi, h: cbf.h, active: false };
            return Ok((d, cbf));
        }
        let denom = self.a * self.a * cbf.dh_du.norm_squared() + cbf.h * cbf.h / self.c.gamma;
        let scale = grad10(cbf.dh_dx, cbf.dh_du).norm_squared();
        if !(denom > DENOM_FLOOR * scale) || !denom.is_normal() {
            return Err(SafetyError::Infeasible { phi, denom });
        }
        let lambda = -phi / denom;
        let d = FilterDecision {
            zeta_star: zeta_d + lambda * self.a * cbf.dh_du,
            kappa_star: cbf.h * lambda / self.c.gamma,
            lambda,
            phi,
            h: cbf.h,
            active: true,
        };
        Ok((d, cbf))
    }

    /// Closed-form h11 and h22 against dual-number Lie derivatives of h10
    /// and h21; returns the two absolute discrepancies.
    pub fn lie_spot_check(&self, xh: &AugmentedState, obs: &ObserverState) -> (f64, f64) {
        let wh = w_hat(&xh.x.v, obs);
        let x = &xh.x;
        let r = V3::cst(&x.r);
        let v = V3::cst(&x.v);
        let vdot = self.accel(&r, &v, x.m, &V3::cst(&xh.u), &wh).re();
        let rd = crate::num::seed(&x.r, &x.v);
        let vd = crate::num::seed(&x.v, &vdot);
        let l10 = h10(&rd, &vd, &self.p).d;
        let l21 = self.h21_g(&rd, &vd).d;
        let h11 = self.hocbf_velocity(xh, obs);
        let h22 = self.hocbf_glideslope(xh, obs).map(|t| t.1).unwrap_or(f64::NAN);
        let b = base_cbfs(&x.r, &x.v, &xh.u, &self.p);
        let e11 = (h11 - (l10 + self.c.alpha1 * b[0])).abs();
        let e22 = (h22 - (l21 + self.c.beta2 * self.h21(&x.r, &x.v))).abs();
        (e11, e22)
    }
}

fn grad10(dh_dx: SVector<f64, 7>, dh_du: Vector3<f64>) -> SVector<f64, 10> {
    let mut g = SVector::<f64, 10>::zeros();
    g.fixed_rows_mut::<7>(0).copy_from(&dh_dx);
    g.fixed_rows_mut::<3>(7).copy_from(&dh_du);
    g
}
