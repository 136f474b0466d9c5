//! Gravity fields of constant-density ellipsoids.
//!
//! Truth fields are degree-2 spherical-harmonic expansions of homogeneous
//! ellipsoids, optionally superposed; the nominal field is usually a scaled
//! point mass. A Gauss-Legendre volume quadrature acts as an independent
//! check on the harmonic coefficients.

use std::sync::atomic::{AtomicBool, Ordering};

use log::warn;
use nalgebra::{Matrix3, Rotation3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{Real, V3};

/// Gravitational constant, m³/(kg·s²).
pub const G: f64 = 6.674e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GravityError {
    #[error("gravity evaluated at zero radius")]
    ZeroRadius,
    #[error("point {0:?} lies inside the ellipsoid")]
    Interior([f64; 3]),
    #[error("invalid ellipsoid: {0}")]
    InvalidEllipsoid(String),
    #[error("invalid gravity model: {0}")]
    InvalidModel(String),
}

/// Homogeneous triaxial ellipsoid placed in the body frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub density: f64,
    pub center: Vector3<f64>,
    /// Columns are the principal axes (a, b, c) expressed in the body frame.
    pub orientation: Matrix3<f64>,
}

impl Ellipsoid {
    pub fn new(
        a: f64,
        b: f64,
        c: f64,
        density: f64,
        center: Vector3<f64>,
        orientation: Matrix3<f64>,
    ) -> Result<Self, GravityError> {
        if !(a >= b && b >= c && c > 0.0) {
            return Err(GravityError::InvalidEllipsoid(format!(
                "semi-axes must satisfy a >= b >= c > 0, got ({a}, {b}, {c})"
            )));
        }
        if !(density > 0.0) {
            return Err(GravityError::InvalidEllipsoid(format!("density {density} must be positive")));
        }
        let rtr = orientation.transpose() * orientation;
        if (rtr - Matrix3::identity()).norm() > 1e-9 || orientation.determinant() < 0.0 {
            return Err(GravityError::InvalidEllipsoid("orientation is not a rotation".into()));
        }
        Ok(Self { a, b, c, density, center, orientation })
    }

    /// Axis-aligned ellipsoid centered at the origin.
    pub fn centered(a: f64, b: f64, c: f64, density: f64) -> Result<Self, GravityError> {
        Self::new(a, b, c, density, Vector3::zeros(), Matrix3::identity())
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.a * self.b * self.c
    }

    pub fn mass(&self) -> f64 {
        self.density * self.volume()
    }

    /// Radius of the smallest sphere about the ellipsoid center containing it.
    pub fn circumscribing_radius(&self) -> f64 {
        self.a
    }

    /// Body-frame point expressed in principal coordinates.
    pub fn to_principal(&self, r: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.transpose() * (r - self.center)
    }

    pub fn contains(&self, r: &Vector3<f64>) -> bool {
        let p = self.to_principal(r);
        (p.x / self.a).powi(2) + (p.y / self.b).powi(2) + (p.z / self.c).powi(2) <= 1.0
    }
}

/// Rotation from Z-Y-X Euler angles in degrees (yaw, pitch, roll).
pub fn orientation_from_euler_deg(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
    Rotation3::from_euler_angles(roll.to_radians(), pitch.to_radians(), yaw.to_radians()).into_inner()
}

/// Degree-2 coefficients of a homogeneous ellipsoid normalized by `r0`.
pub fn ellipsoid_harmonics(e: &Ellipsoid, r0: f64) -> (f64, f64, f64) {
    let mu = G * e.mass();
    let (a2, b2, c2) = (e.a * e.a, e.b * e.b, e.c * e.c);
    let c20 = (2.0 * c2 - a2 - b2) / (10.0 * r0 * r0);
    let c22 = (a2 - b2) / (20.0 * r0 * r0);
    (mu, c20, c22)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Term {
    PointMass {
        mu: f64,
        center: Vector3<f64>,
    },
    Harmonic {
        mu: f64,
        r0: f64,
        c20: f64,
        c22: f64,
        center: Vector3<f64>,
        orientation: Matrix3<f64>,
    },
}

impl Term {
    fn mu(&self) -> f64 {
        match self {
            Term::PointMass { mu, .. } | Term::Harmonic { mu, .. } => *mu,
        }
    }

    fn center(&self) -> &Vector3<f64> {
        match self {
            Term::PointMass { center, .. } | Term::Harmonic { center, .. } => center,
        }
    }

    fn potential<T: Real>(&self, r: &V3<T>) -> T {
        match self {
            Term::PointMass { mu, center } => {
                let d = *r - V3::cst(center);
                T::cst(*mu) / d.norm()
            }
            Term::Harmonic { mu, r0, c20, c22, center, orientation } => {
                let p = (*r - V3::cst(center)).mat(&orientation.transpose());
                let s = p.norm_sq();
                let rn = s.sqrt();
                let r5 = s * s * rn;
                let k1 = mu * r0 * r0 * c20 * 0.5;
                let k2 = 3.0 * mu * r0 * r0 * c22;
                T::cst(*mu) / rn
                    + ((p.z * p.z).scale(3.0) - s).scale(k1) / r5
                    + (p.x * p.x - p.y * p.y).scale(k2) / r5
            }
        }
    }

    fn gradient<T: Real>(&self, r: &V3<T>) -> V3<T> {
        match self {
            Term::PointMass { mu, center } => {
                let d = *r - V3::cst(center);
                let n2 = d.norm_sq();
                d.mul_s(T::cst(-*mu) / (n2 * n2.sqrt()))
            }
            Term::Harmonic { mu, r0, c20, c22, center, orientation } => {
                let p = (*r - V3::cst(center)).mat(&orientation.transpose());
                let s = p.norm_sq();
                let rn = s.sqrt();
                let r3 = s * rn;
                let r5 = s * r3;
                let r7 = s * r5;
                let k1 = mu * r0 * r0 * c20 * 0.5;
                let k2 = 3.0 * mu * r0 * r0 * c22;
                let q1 = (p.z * p.z).scale(3.0) - s;
                let q2 = p.x * p.x - p.y * p.y;
                let radial = (q1.scale(k1) + q2.scale(k2)).scale(-5.0) / r7;
                let central = T::cst(-*mu) / r3;
                let gx = p.x * (central + radial) + p.x.scale(-2.0 * k1 + 2.0 * k2) / r5;
                let gy = p.y * (central + radial) + p.y.scale(-2.0 * k1 - 2.0 * k2) / r5;
                let gz = p.z * (central + radial) + p.z.scale(4.0 * k1) / r5;
                V3::new(gx, gy, gz).mat(orientation)
            }
        }
    }
}

/// A gravity field: a superposition of terms with a common mass scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GravityModel {
    terms: Vec<Term>,
    mass_scale: f64,
    /// Brillouin radius per term, used only for warnings.
    #[serde(default)]
    brillouin: Vec<f64>,
}

static WARNED_INSIDE: AtomicBool = AtomicBool::new(false);

impl GravityModel {
    pub fn point_mass(mu: f64) -> Result<Self, GravityError> {
        Self::point_mass_at(mu, Vector3::zeros())
    }

    pub fn point_mass_at(mu: f64, center: Vector3<f64>) -> Result<Self, GravityError> {
        if !(mu > 0.0) {
            return Err(GravityError::InvalidModel(format!("mu {mu} must be positive")));
        }
        Ok(Self { terms: vec![Term::PointMass { mu, center }], mass_scale: 1.0, brillouin: vec![0.0] })
    }

    pub fn harmonic(
        mu: f64,
        r0: f64,
        c20: f64,
        c22: f64,
        center: Vector3<f64>,
        orientation: Matrix3<f64>,
    ) -> Result<Self, GravityError> {
        if !(mu > 0.0) || !(r0 > 0.0) {
            return Err(GravityError::InvalidModel(format!("mu {mu} and r0 {r0} must be positive")));
        }
        Ok(Self {
            terms: vec![Term::Harmonic { mu, r0, c20, c22, center, orientation }],
            mass_scale: 1.0,
            brillouin: vec![r0],
        })
    }

    /// Degree-2 field of a homogeneous ellipsoid, normalized by its largest semi-axis.
    pub fn from_ellipsoid(e: &Ellipsoid) -> Self {
        let r0 = e.a;
        let (mu, c20, c22) = ellipsoid_harmonics(e, r0);
        Self {
            terms: vec![Term::Harmonic { mu, r0, c20, c22, center: e.center, orientation: e.orientation }],
            mass_scale: 1.0,
            brillouin: vec![e.circumscribing_radius()],
        }
    }

    /// Point mass carrying the ellipsoid's total mass at its center.
    pub fn point_mass_of(e: &Ellipsoid) -> Self {
        Self {
            terms: vec![Term::PointMass { mu: G * e.mass(), center: e.center }],
            mass_scale: 1.0,
            brillouin: vec![e.circumscribing_radius()],
        }
    }

    /// Superposition of models; each part keeps its own mass scale.
    pub fn composite(parts: Vec<GravityModel>) -> Result<Self, GravityError> {
        if parts.is_empty() {
            return Err(GravityError::InvalidModel("composite needs at least one term".into()));
        }
        let mut terms = Vec::new();
        let mut brillouin = Vec::new();
        for p in parts {
            for (t, b) in p.terms.into_iter().zip(p.brillouin) {
                terms.push(scale_term(t, p.mass_scale));
                brillouin.push(b);
            }
        }
        Ok(Self { terms, mass_scale: 1.0, brillouin })
    }

    pub fn with_mass_scale(mut self, s: f64) -> Self {
        self.mass_scale = s;
        self
    }

    pub fn mass_scale(&self) -> f64 {
        self.mass_scale
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Total gravitational parameter including the mass scale.
    pub fn mu(&self) -> f64 {
        self.mass_scale * self.terms.iter().map(Term::mu).sum::<f64>()
    }

    fn check(&self, r: &Vector3<f64>) -> Result<(), GravityError> {
        for (t, b) in self.terms.iter().zip(&self.brillouin) {
            let d = (r - t.center()).norm();
            if d == 0.0 || !d.is_finite() {
                return Err(GravityError::ZeroRadius);
            }
            if d < *b && !WARNED_INSIDE.swap(true, Ordering::Relaxed) {
                warn!("gravity evaluated inside a Brillouin sphere (distance {d:.1} m < {b:.1} m)");
            }
        }
        Ok(())
    }

    pub fn potential(&self, r: &Vector3<f64>) -> Result<f64, GravityError> {
        self.check(r)?;
        Ok(self.potential_g(&V3::cst(r)))
    }

    pub fn gradient(&self, r: &Vector3<f64>) -> Result<Vector3<f64>, GravityError> {
        self.check(r)?;
        Ok(self.gradient_g(&V3::<f64>::cst(r)).re())
    }

    /// Unchecked generic potential, for automatic differentiation.
    pub fn potential_g<T: Real>(&self, r: &V3<T>) -> T {
        let mut acc = T::cst(0.0);
        for t in &self.terms {
            acc = acc + t.potential(r);
        }
        acc.scale(self.mass_scale)
    }

    /// Unchecked generic gradient, for automatic differentiation.
    pub fn gradient_g<T: Real>(&self, r: &V3<T>) -> V3<T> {
        let mut acc = V3::zero();
        for t in &self.terms {
            acc = acc + t.gradient(r);
        }
        acc.mul_s(T::cst(self.mass_scale))
    }
}

fn scale_term(t: Term, s: f64) -> Term {
    match t {
        Term::PointMass { mu, center } => Term::PointMass { mu: mu * s, center },
        Term::Harmonic { mu, r0, c20, c22, center, orientation } => {
            Term::Harmonic { mu: mu * s, r0, c20, c22, center, orientation }
        }
    }
}

/// Truth and nominal fields; their gradient difference is the disturbance `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceField {
    pub truth: GravityModel,
    pub nominal: GravityModel,
}

impl DisturbanceField {
    pub fn disturbance(&self, r: &Vector3<f64>) -> Result<Vector3<f64>, GravityError> {
        Ok(self.truth.gradient(r)? - self.nominal.gradient(r)?)
    }

    pub fn disturbance_g<T: Real>(&self, r: &V3<T>) -> V3<T> {
        self.truth.gradient_g(r) - self.nominal.gradient_g(r)
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Volume integral of `G·ρ/‖r − s‖` over the ellipsoid.
///
/// Tensor Gauss-Legendre rule with `resolution` nodes per coordinate in
/// (radial fraction, cos polar, azimuth). Slabs are summed in a fixed order,
/// so the result does not depend on the thread pool.
pub fn quadrature_oracle(e: &Ellipsoid, r: &Vector3<f64>, resolution: usize) -> Result<f64, GravityError> {
    if e.contains(r) {
        return Err(GravityError::Interior([r.x, r.y, r.z]));
    }
    let n = resolution.max(2);
    let (x, w) = gauss_legendre(n);
    let p = e.to_principal(r);
    let pi = std::f64::consts::PI;
    let slabs: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let rho = 0.5 * (x[i] + 1.0);
            let wr = 0.5 * w[i] * rho * rho;
            let mut acc = 0.0;
            for j in 0..n {
                let ct = x[j];
                let st = (1.0 - ct * ct).sqrt();
                for k in 0..n {
                    let ph = pi * (x[k] + 1.0);
                    let s = Vector3::new(e.a * rho * st * ph.cos(), e.b * rho * st * ph.sin(), e.c * rho * ct);
                    acc += w[j] * pi * w[k] / (p - s).norm();
                }
            }
            wr * acc
        })
        .collect();
    let sum: f64 = slabs.iter().sum();
    Ok(G * e.density * e.a * e.b * e.c * sum)
}
