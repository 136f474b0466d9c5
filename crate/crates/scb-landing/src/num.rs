//! Forward-mode dual numbers and a small generic 3-vector.
//!
//! Every scalar routine that feeds a Lie derivative or a gradient is written
//! against [`Real`], so the same code evaluates in `f64` and in `Dual<f64>`.

use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::Vector3;

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + std::fmt::Debug
{
    fn cst(c: f64) -> Self;
    /// Primal value.
    fn re(&self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;

    fn scale(self, c: f64) -> Self {
        self * Self::cst(c)
    }
    fn powi(self, n: i32) -> Self {
        let mut acc = Self::cst(1.0);
        for _ in 0..n.unsigned_abs() {
            acc = acc * self;
        }
        if n < 0 {
            Self::cst(1.0) / acc
        } else {
            acc
        }
    }
}

impl Real for f64 {
    fn cst(c: f64) -> Self {
        c
    }
    fn re(&self) -> f64 {
        *self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// `v + d·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub v: T,
    pub d: T,
}

impl<T: Real> Dual<T> {
    pub fn new(v: T, d: T) -> Self {
        Self { v, d }
    }
    pub fn constant(v: T) -> Self {
        Self { v, d: T::cst(0.0) }
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.v + o.v, self.d + o.d)
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.v - o.v, self.d - o.d)
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.v * o.v, self.v * o.d + self.d * o.v)
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.v / o.v;
        Self::new(q, (self.d - q * o.d) / o.v)
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.v, -self.d)
    }
}

impl<T: Real> Real for Dual<T> {
    fn cst(c: f64) -> Self {
        Self::constant(T::cst(c))
    }
    fn re(&self) -> f64 {
        self.v.re()
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        Self::new(s, self.d / (s + s))
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        Self::new(e, e * self.d)
    }
    fn ln(self) -> Self {
        Self::new(self.v.ln(), self.d / self.v)
    }
    fn ln_1p(self) -> Self {
        Self::new(self.v.ln_1p(), self.d / (T::cst(1.0) + self.v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct V3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> V3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }
    pub fn zero() -> Self {
        Self::cst(&Vector3::zeros())
    }
    /// Lift a plain vector into constants of `T`.
    pub fn cst(v: &Vector3<f64>) -> Self {
        Self::new(T::cst(v.x), T::cst(v.y), T::cst(v.z))
    }
    pub fn re(&self) -> Vector3<f64> {
        Vector3::new(self.x.re(), self.y.re(), self.z.re())
    }
    pub fn dot(&self, o: &Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }
    pub fn cross(&self, o: &Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }
    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }
    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }
    pub fn mul_s(&self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
    pub fn div_s(&self, s: T) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
    /// `M·self` for a constant matrix.
    pub fn mat(&self, m: &nalgebra::Matrix3<f64>) -> Self {
        let row = |i: usize| {
            self.x.scale(m[(i, 0)]) + self.y.scale(m[(i, 1)]) + self.z.scale(m[(i, 2)])
        };
        Self::new(row(0), row(1), row(2))
    }
}

impl<T: Real> Add for V3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for V3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for V3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Seed a dual vector: primal `v`, tangent `d`.
pub fn seed(v: &Vector3<f64>, d: &Vector3<f64>) -> V3<Dual<f64>> {
    V3::new(Dual::new(v.x, d.x), Dual::new(v.y, d.y), Dual::new(v.z, d.z))
}

pub fn tangent(v: &V3<Dual<f64>>) -> Vector3<f64> {
    Vector3::new(v.x.d, v.y.d, v.z.d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_quotient_rules() {
        let x = Dual::new(3.0, 1.0);
        let f = x * x / (x + Dual::cst(1.0));
        // d/dx x²/(x+1) = (x² + 2x)/(x+1)²
        assert!((f.d - 15.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn nested_gives_second_derivative() {
        let x: Dual<Dual<f64>> = Dual::new(Dual::new(0.7, 1.0), Dual::new(1.0, 0.0));
        let f = x.exp() * x.sqrt();
        let (v, d2) = (0.7f64, f.d.d);
        let exact = v.exp() * (v.sqrt() + 1.0 / v.sqrt() - 0.25 * v.powf(-1.5));
        assert!((d2 - exact).abs() < 1e-12);
    }

    #[test]
    fn cross_matches_nalgebra() {
        let a = Vector3::new(1.0, -2.0, 0.5);
        let b = Vector3::new(0.3, 4.0, -1.0);
        let c = V3::<f64>::cst(&a).cross(&V3::cst(&b)).re();
        assert!((c - a.cross(&b)).norm() < 1e-15);
    }
}
