//! Reference trajectories: generation by inverse nominal dynamics, CSV
//! storage, interpolation and constraint validation.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{f2_g, rk4_step, BodyEnvironment, DynamicsError, VehicleParams};
use crate::gravity::gauss_legendre;
use crate::num::{Dual, V3};
use crate::safety::{raw_constraints, ConstraintParams};

/// Default spacing of stored samples, s.
pub const SAMPLE_DT: f64 = 0.2;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("reference schema error at row {row}: {msg}")]
    Schema { row: usize, msg: String },
    #[error("reference I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid reference request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSample {
    pub t: f64,
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    pub m: f64,
    pub u: Vector3<f64>,
    pub u_dot: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub samples: Vec<ReferenceSample>,
    /// State returned past the last sample.
    pub hold: ReferenceSample,
    /// How the samples were produced.
    pub source: String,
}

/// Sample at the landing site with v = v_f and thrust cancelling the
/// nominal drift there.
pub fn terminal_hold(last: &ReferenceSample, r_f: &Vector3<f64>, v_f: &Vector3<f64>, env: &BodyEnvironment) -> ReferenceSample {
    let acc = f2_g(&V3::<f64>::cst(r_f), &V3::cst(v_f), &env.omega, &env.nominal).re();
    ReferenceSample { t: last.t, r: *r_f, v: *v_f, m: last.m, u: -last.m * acc, u_dot: Vector3::zeros() }
}

impl ReferenceTrajectory {
    pub fn new(samples: Vec<ReferenceSample>, r_f: &Vector3<f64>, v_f: &Vector3<f64>, env: &BodyEnvironment, source: &str) -> Result<Self, ReferenceError> {
        if samples.len() < 2 {
            return Err(ReferenceError::Invalid("a reference needs at least two samples".into()));
        }
        for (k, w) in samples.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(ReferenceError::Schema { row: k + 2, msg: format!("time {} not after {}", w[1].t, w[0].t) });
            }
        }
        let hold = terminal_hold(samples.last().unwrap(), r_f, v_f, env);
        Ok(Self { samples, hold, source: source.to_string() })
    }

    pub fn t_final(&self) -> f64 {
        self.samples.last().map(|s| s.t).unwrap_or(0.0)
    }

    /// Cubic Hermite in position (velocity is its derivative), linear in
    /// mass and thrust. Between nodes the thrust rate is the slope of the
    /// linear thrust; at a node it is the stored rate. Terminal hold past
    /// the last sample.
    pub fn sample(&self, t: f64) -> ReferenceSample {
        let s = &self.samples;
        if t >= self.t_final() {
            if t == self.t_final() {
                return s[s.len() - 1];
            }
            return ReferenceSample { t, ..self.hold };
        }
        if t <= s[0].t {
            return ReferenceSample { t, ..s[0] };
        }
        let k = s.partition_point(|x| x.t <= t) - 1;
        let (a, b) = (&s[k], &s[k + 1]);
        // control instants land on nodes up to rounding, and the thrust rate
        // must not pick a side there
        if t - a.t <= NODE_SNAP {
            return ReferenceSample { t, ..*a };
        }
        if b.t - t <= NODE_SNAP {
            return ReferenceSample { t, ..*b };
        }
        let h = b.t - a.t;
        let x = (t - a.t) / h;
        let (x2, x3) = (x * x, x * x * x);
        let h00 = 2.0 * x3 - 3.0 * x2 + 1.0;
        let h10 = x3 - 2.0 * x2 + x;
        let h01 = -2.0 * x3 + 3.0 * x2;
        let h11 = x3 - x2;
        let r = h00 * a.r + h10 * h * a.v + h01 * b.r + h11 * h * b.v;
        let d00 = (6.0 * x2 - 6.0 * x) / h;
        let d10 = 3.0 * x2 - 4.0 * x + 1.0;
        let d01 = (-6.0 * x2 + 6.0 * x) / h;
        let d11 = 3.0 * x2 - 2.0 * x;
        let v = d00 * a.r + d10 * a.v + d01 * b.r + d11 * b.v;
        let lerp = |p: f64, q: f64| p + (q - p) * x;
        ReferenceSample {
            t,
            r,
            v,
            m: lerp(a.m, b.m),
            u: a.u + (b.u - a.u) * x,
            // the rate of the interpolant, so u_r and u̇_r stay consistent
            u_dot: (b.u - a.u) / h,
        }
    }

    pub fn save_csv<W: Write>(&self, w: W) -> Result<(), ReferenceError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "rx", "ry", "rz", "vx", "vy", "vz", "m", "ux", "uy", "uz", "udx", "udy", "udz"])?;
        for s in &self.samples {
            let vals = [s.t, s.r.x, s.r.y, s.r.z, s.v.x, s.v.y, s.v.z, s.m, s.u.x, s.u.y, s.u.z, s.u_dot.x, s.u_dot.y, s.u_dot.z];
            wr.write_record(vals.iter().map(|v| v.to_string()))?;
        }
        wr.flush().map_err(|e| ReferenceError::Io { path: "<writer>".into(), source: e })?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ReferenceError> {
        let f = std::fs::File::create(path).map_err(|e| ReferenceError::Io { path: path.display().to_string(), source: e })?;
        self.save_csv(std::io::BufWriter::new(f))
    }
}

/// Times this close to a node (s) are treated as the node.
const NODE_SNAP: f64 = 1e-9;

const BASE_COLS: [&str; 11] = ["t", "rx", "ry", "rz", "vx", "vy", "vz", "m", "ux", "uy", "uz"];
const RATE_COLS: [&str; 3] = ["udx", "udy", "udz"];

/// Parse a reference CSV; thrust rates are rebuilt by central differences
/// when their columns are absent.
pub fn load_reference_csv<R: Read>(
    input: R,
    r_f: &Vector3<f64>,
    v_f: &Vector3<f64>,
    env: &BodyEnvironment,
) -> Result<ReferenceTrajectory, ReferenceError> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rd.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let mut idx = Vec::new();
    for name in BASE_COLS {
        idx.push(col(name).ok_or_else(|| ReferenceError::Schema { row: 0, msg: format!("missing column `{name}`") })?);
    }
    let rate_idx: Option<Vec<usize>> = RATE_COLS.iter().map(|n| col(n)).collect();
    let mut samples: Vec<ReferenceSample> = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let row = k + 1;
        let rec = rec?;
        let get = |i: usize| -> Result<f64, ReferenceError> {
            let raw = rec.get(i).ok_or_else(|| ReferenceError::Schema { row, msg: "short row".into() })?;
            let v: f64 = raw.parse().map_err(|_| ReferenceError::Schema { row, msg: format!("cannot parse `{raw}`") })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(ReferenceError::Schema { row, msg: format!("non-finite value `{raw}`") })
            }
        };
        let mut f = [0.0; 11];
        for (j, i) in idx.iter().enumerate() {
            f[j] = get(*i)?;
        }
        let u_dot = match &rate_idx {
            Some(ri) => Vector3::new(get(ri[0])?, get(ri[1])?, get(ri[2])?),
            None => Vector3::zeros(),
        };
        if let Some(prev) = samples.last() {
            if !(f[0] > prev.t) {
                return Err(ReferenceError::Schema { row, msg: format!("time {} does not increase", f[0]) });
            }
        }
        samples.push(ReferenceSample {
            t: f[0],
            r: Vector3::new(f[1], f[2], f[3]),
            v: Vector3::new(f[4], f[5], f[6]),
            m: f[7],
            u: Vector3::new(f[8], f[9], f[10]),
            u_dot,
        });
    }
    if rate_idx.is_none() {
        fill_rates(&mut samples);
    }
    ReferenceTrajectory::new(samples, r_f, v_f, env, "file")
}

pub fn load_reference(path: &Path, r_f: &Vector3<f64>, v_f: &Vector3<f64>, env: &BodyEnvironment) -> Result<ReferenceTrajectory, ReferenceError> {
    let f = std::fs::File::open(path).map_err(|e| ReferenceError::Io { path: path.display().to_string(), source: e })?;
    let mut t = load_reference_csv(std::io::BufReader::new(f), r_f, v_f, env)?;
    t.source = format!("file:{}", path.display());
    Ok(t)
}

/// Three-point derivative on a possibly non-uniform grid.
fn fill_rates(s: &mut [ReferenceSample]) {
    let n = s.len();
    if n < 2 {
        return;
    }
    let rates: Vec<Vector3<f64>> = (0..n)
        .map(|k| {
            if k == 0 {
                (s[1].u - s[0].u) / (s[1].t - s[0].t)
            } else if k == n - 1 {
                (s[n - 1].u - s[n - 2].u) / (s[n - 1].t - s[n - 2].t)
            } else {
                let (h0, h1) = (s[k].t - s[k - 1].t, s[k + 1].t - s[k].t);
                let d0 = (s[k].u - s[k - 1].u) / h0;
                let d1 = (s[k + 1].u - s[k].u) / h1;
                (d0 * h1 + d1 * h0) / (h0 + h1)
            }
        })
        .collect();
    for (x, r) in s.iter_mut().zip(rates) {
        x.u_dot = r;
    }
}

/// Smooth kinematic path: position, velocity, acceleration and jerk at t.
trait Kinematic {
    fn eval(&self, t: f64) -> [Vector3<f64>; 4];
}

/// Per-axis quintic matching position, velocity and acceleration at both ends.
#[derive(Debug, Clone)]
pub struct Quintic {
    t0: f64,
    c: [Vector3<f64>; 6],
}

impl Quintic {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        t0: f64,
        t1: f64,
        r0: Vector3<f64>,
        v0: Vector3<f64>,
        a0: Vector3<f64>,
        r1: Vector3<f64>,
        v1: Vector3<f64>,
        a1: Vector3<f64>,
    ) -> Self {
        let t = t1 - t0;
        let (t2, t3, t4, t5) = (t * t, t * t * t, t.powi(4), t.powi(5));
        let c0 = r0;
        let c1 = v0;
        let c2 = a0 / 2.0;
        let c3 = (20.0 * (r1 - r0) - (8.0 * v1 + 12.0 * v0) * t - (3.0 * a0 - a1) * t2) / (2.0 * t3);
        let c4 = (30.0 * (r0 - r1) + (14.0 * v1 + 16.0 * v0) * t + (3.0 * a0 - 2.0 * a1) * t2) / (2.0 * t4);
        let c5 = (12.0 * (r1 - r0) - 6.0 * (v1 + v0) * t - (a0 - a1) * t2) / (2.0 * t5);
        Self { t0, c: [c0, c1, c2, c3, c4, c5] }
    }
}

impl Kinematic for Quintic {
    fn eval(&self, t: f64) -> [Vector3<f64>; 4] {
        let s = t - self.t0;
        let c = &self.c;
        let r = c[0] + s * (c[1] + s * (c[2] + s * (c[3] + s * (c[4] + s * c[5]))));
        let v = c[1] + s * (2.0 * c[2] + s * (3.0 * c[3] + s * (4.0 * c[4] + s * 5.0 * c[5])));
        let a = 2.0 * c[2] + s * (6.0 * c[3] + s * (12.0 * c[4] + s * 20.0 * c[5]));
        let j = 6.0 * c[3] + s * (24.0 * c[4] + s * 60.0 * c[5]);
        [r, v, a, j]
    }
}

/// Constant acceleration ending at r_f with velocity v_f at t_f.
#[derive(Debug, Clone)]
struct ApproachLeg {
    t_f: f64,
    r_f: Vector3<f64>,
    v_f: Vector3<f64>,
    acc: Vector3<f64>,
}

impl Kinematic for ApproachLeg {
    fn eval(&self, t: f64) -> [Vector3<f64>; 4] {
        let s = self.t_f - t;
        let r = self.r_f - self.v_f * s + 0.5 * s * s * self.acc;
        let v = self.v_f - s * self.acc;
        [r, v, self.acc, Vector3::zeros()]
    }
}

/// Specific thrust k = a − f₂(r, v) and its time derivative along the path.
fn specific_thrust(path: &dyn Kinematic, t: f64, env: &BodyEnvironment) -> (Vector3<f64>, Vector3<f64>) {
    let [r, v, a, j] = path.eval(t);
    let rd = crate::num::seed(&r, &v);
    let vd = crate::num::seed(&v, &a);
    let f = f2_g(&rd, &vd, &env.omega, &env.nominal);
    let k = V3::new(Dual::new(a.x, j.x), Dual::new(a.y, j.y), Dual::new(a.z, j.z)) - f;
    (k.re(), crate::num::tangent(&k))
}

/// Inverse dynamics over `times` along a kinematic path; the mass obeys
/// ṁ = −α·m·‖k‖, integrated per interval with Gauss-Legendre quadrature of ‖k‖.
fn inverse_dynamics(path: &dyn Kinematic, times: &[f64], m0: f64, env: &BodyEnvironment, alpha: f64) -> Vec<ReferenceSample> {
    let (gx, gw) = gauss_legendre(8);
    let mut out = Vec::with_capacity(times.len());
    let mut burned = 0.0;
    for (i, &t) in times.iter().enumerate() {
        if i > 0 {
            let (ta, tb) = (times[i - 1], t);
            let half = 0.5 * (tb - ta);
            let integral: f64 = gx
                .iter()
                .zip(&gw)
                .map(|(x, w)| w * specific_thrust(path, ta + half * (x + 1.0), env).0.norm())
                .sum::<f64>()
                * half;
            burned += alpha * integral;
        }
        let m = m0 * (-burned).exp();
        let [r, v, _, _] = path.eval(t);
        let (k, kdot) = specific_thrust(path, t, env);
        let mdot = -alpha * m * k.norm();
        out.push(ReferenceSample { t, r, v, m, u: m * k, u_dot: mdot * k + m * kdot });
    }
    out
}

/// Node times k·dt on [t0, t1], with t1 always included.
fn node_times(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let n = ((t1 - t0) / dt - 1e-9).ceil().max(1.0) as usize;
    let mut ts: Vec<f64> = (0..n).map(|k| t0 + k as f64 * dt).collect();
    ts.push(t1);
    ts
}

/// Quintic from (r0, v0, 0) to (r_f, v_f, 0) over [0, t_f]; thrust by
/// inverse nominal dynamics, mass by the nominal mass flow.
#[allow(clippy::too_many_arguments)]
pub fn generate_reference(
    r0: &Vector3<f64>,
    v0: &Vector3<f64>,
    r_f: &Vector3<f64>,
    v_f: &Vector3<f64>,
    t_f: f64,
    env: &BodyEnvironment,
    vehicle: &VehicleParams,
) -> Result<ReferenceTrajectory, ReferenceError> {
    if !(t_f > 0.0) {
        return Err(ReferenceError::Invalid(format!("t_f = {t_f} must be positive")));
    }
    let z = Vector3::zeros();
    let q = Quintic::new(0.0, t_f, *r0, *v0, z, *r_f, *v_f, z);
    let samples = inverse_dynamics(&q, &node_times(0.0, t_f, SAMPLE_DT), vehicle.m_wet, env, vehicle.alpha());
    ReferenceTrajectory::new(samples, r_f, v_f, env, "quintic")
}

/// Tuning of the guided generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidedParams {
    /// Thrust of the initial cone-protecting burn, N.
    pub brake_thrust: f64,
    /// Weight of lateral-velocity cancellation in the burn direction.
    pub lateral_weight: f64,
    /// Time constant of the thrust smoothing lag, s.
    pub lag: f64,
    /// Thrust band of the guidance phase, N.
    pub guidance_thrust: [f64; 2],
    /// Distance travelled on the final constant-acceleration leg, m.
    pub gate_distance: f64,
    /// Tilt of the final-leg acceleration from the site vertical towards v_f, deg.
    pub approach_tilt_deg: f64,
    /// Margin multiplying the smallest final-leg acceleration that keeps the cone.
    pub approach_margin: f64,
    /// Thrust band of the final leg, N at wet mass.
    pub approach_thrust: [f64; 2],
    /// Fraction of v_f the final leg carries through r_f. Below one the leg
    /// trades part of the landing velocity tolerance for a gentler approach.
    pub arrival_speed: f64,
    /// Length of the blend onto the gate state, s.
    pub blend: f64,
    /// Smallest time-to-go used by the guidance law, s.
    pub min_time_to_go: f64,
    /// Integration sub-steps per stored sample.
    pub substeps: usize,
}

impl Default for GuidedParams {
    fn default() -> Self {
        Self {
            brake_thrust: 19.95,
            lateral_weight: 0.2,
            lag: 3.0,
            guidance_thrust: [7.0, 18.0],
            gate_distance: 150.0,
            approach_tilt_deg: 30.0,
            approach_margin: 1.25,
            approach_thrust: [9.0, 16.0],
            arrival_speed: 1.0,
            blend: 30.0,
            min_time_to_go: 2.0,
            substeps: 4,
        }
    }
}

/// Phase boundaries chosen by the guided generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidedSummary {
    pub brake_end: f64,
    pub blend_start: f64,
    pub gate_time: f64,
    pub approach_accel: f64,
    /// Position and velocity miss of the guidance phase at the blend start,
    /// measured against the blend's own start (always zero) and the gate.
    pub gate_miss: f64,
}

/// Cone-aware guided reference.
///
/// 1. While the glideslope margin shrinks, burn at `brake_thrust` along its
///    gradient, biased against lateral velocity.
/// 2. Fly a terminal-rate guidance law to a gate state at `gate_time`.
/// 3. Blend onto the gate with a quintic matching position, velocity and
///    acceleration at both ends.
/// 4. Finish on a constant-acceleration leg ending at r_f with velocity
///    arrival_speed·v_f.
///
/// Steps 1-2 integrate the nominal dynamics with thrust piecewise linear
/// between samples; steps 3-4 use inverse dynamics.
#[allow(clippy::too_many_arguments)]
pub fn generate_guided(
    r0: &Vector3<f64>,
    v0: &Vector3<f64>,
    t_f: f64,
    p: &ConstraintParams,
    env: &BodyEnvironment,
    vehicle: &VehicleParams,
    g: &GuidedParams,
) -> Result<(ReferenceTrajectory, GuidedSummary), ReferenceError> {
    let dt = SAMPLE_DT;
    let alpha = vehicle.alpha();
    let (r_f, v_f) = (p.r_f, p.v_f);
    let e = p.e_hat_s;
    if !(0.0..=1.0).contains(&g.arrival_speed) {
        return Err(ReferenceError::Invalid(format!("arrival_speed {} must lie in [0, 1]", g.arrival_speed)));
    }
    let v_end = g.arrival_speed * v_f;
    let speed = v_f.norm();
    let lat = if speed > 0.0 { v_f / speed } else { e.cross(&Vector3::z()).try_normalize(1e-12).unwrap_or(Vector3::x()) };
    let (tn, cs) = (p.theta_gs.tan(), p.theta_gs.cos());
    let tilt = g.approach_tilt_deg.to_radians();
    let apex_height = (1.0 - p.beta) * r_f.dot(&e);
    if !(apex_height > 0.0) {
        return Err(ReferenceError::Invalid("landing site must lie above the cone apex".into()));
    }
    let needed = (g.arrival_speed * speed).powi(2) / (2.0 * apex_height * tn * (tn * tilt.cos() + tilt.sin()));
    let acc = (needed * g.approach_margin).clamp(g.approach_thrust[0] / vehicle.m_wet, g.approach_thrust[1] / vehicle.m_wet);
    let dir = tilt.cos() * e + tilt.sin() * lat;
    let t3 = (2.0 * g.gate_distance / acc).sqrt();
    let gate_time = ((t_f - t3) / dt).floor() * dt;
    let blend_start = gate_time - (g.blend / dt).round() * dt;
    if !(blend_start > 0.0) {
        return Err(ReferenceError::Invalid(format!("t_f = {t_f} s leaves no time before the final leg")));
    }
    let leg = ApproachLeg { t_f, r_f, v_f: v_end, acc: acc * dir };
    let [rg, vg, ag, _] = leg.eval(gate_time);

    let cone = |r: &Vector3<f64>| {
        let q = r - p.beta * r_f;
        let n = q.norm();
        (e - cs * q / n, q / n)
    };
    let mut braking = true;
    let mut brake_end = 0.0;
    let mut command = |t: f64, r: &Vector3<f64>, v: &Vector3<f64>, m: f64| -> Vector3<f64> {
        let (grad, qh) = cone(r);
        if braking && grad.dot(v) < 0.0 {
            let vl = v - v.dot(&qh) * qh;
            let mut d = grad.normalize();
            if let Some(l) = vl.try_normalize(1e-12) {
                d -= g.lateral_weight * l;
            }
            return g.brake_thrust * d.normalize();
        }
        if braking {
            braking = false;
            brake_end = t;
        }
        let tgo = (gate_time - t).max(g.min_time_to_go);
        let a = ag - 6.0 * (v + vg) / tgo + 12.0 * (rg - r) / (tgo * tgo);
        let f = f2_g(&V3::<f64>::cst(r), &V3::cst(v), &env.omega, &env.nominal).re();
        let u = m * (a - f);
        let n = u.norm();
        let [lo, hi] = g.guidance_thrust;
        if n > hi {
            u * (hi / n)
        } else if n < lo {
            if n > 0.0 {
                u * (lo / n)
            } else {
                lo * e
            }
        } else {
            u
        }
    };

    let steps = (blend_start / dt).round() as usize;
    let keep = 1.0 - (-dt / g.lag).exp();
    let mut y = SVector::<f64, 7>::from_column_slice(&[r0.x, r0.y, r0.z, v0.x, v0.y, v0.z, vehicle.m_wet]);
    let mut u = command(0.0, r0, v0, vehicle.m_wet);
    let mut samples = Vec::with_capacity((t_f / dt) as usize + 2);
    for k in 0..steps {
        let t = k as f64 * dt;
        let r = Vector3::new(y[0], y[1], y[2]);
        let v = Vector3::new(y[3], y[4], y[5]);
        samples.push(ReferenceSample { t, r, v, m: y[6], u, u_dot: Vector3::zeros() });
        let target = command(t, &r, &v, y[6]);
        let u_next = u + (target - u) * keep;
        let h = dt / g.substeps as f64;
        for j in 0..g.substeps {
            let ts = t + j as f64 * h;
            let rhs = |s: f64, z: &SVector<f64, 7>| -> Result<SVector<f64, 7>, DynamicsError> {
                let uu = u + (u_next - u) * ((s - t) / dt);
                let rr = V3::new(z[0], z[1], z[2]);
                let vv = V3::new(z[3], z[4], z[5]);
                let a = f2_g(&rr, &vv, &env.omega, &env.nominal).re() + uu / z[6];
                Ok(SVector::<f64, 7>::from_column_slice(&[z[3], z[4], z[5], a.x, a.y, a.z, -alpha * uu.norm()]))
            };
            y = rk4_step(rhs, ts, &y, h)?;
        }
        u = u_next;
    }

    let rs = Vector3::new(y[0], y[1], y[2]);
    let vs = Vector3::new(y[3], y[4], y[5]);
    let ms = y[6];
    let a_s = f2_g(&V3::<f64>::cst(&rs), &V3::cst(&vs), &env.omega, &env.nominal).re() + u / ms;
    let blend = Quintic::new(blend_start, gate_time, rs, vs, a_s, rg, vg, ag);
    let gate_miss = {
        // Where the guidance law alone was heading: compare the blend's
        // required correction to the distance still to travel.
        let [r_mid, _, _, _] = blend.eval(0.5 * (blend_start + gate_time));
        (r_mid - 0.5 * (rs + rg)).norm()
    };
    let blend_times = node_times(blend_start, gate_time, dt);
    let mut tail = inverse_dynamics(&blend, &blend_times, ms, env, alpha);
    let leg_times = node_times(gate_time, t_f, dt);
    let m_gate = tail.last().map(|s| s.m).unwrap_or(ms);
    let leg_samples = inverse_dynamics(&leg, &leg_times, m_gate, env, alpha);
    // The blend's last node is the leg's first.
    tail.pop();
    samples.extend(tail);
    samples.extend(leg_samples);
    // Node rates are the mean of the adjacent slopes, which is the symmetric
    // derivative of the piecewise-linear thrust, also across segment joins.
    samples[0].u_dot = (samples[1].u - samples[0].u) / (samples[1].t - samples[0].t);
    for k in 1..samples.len() - 1 {
        let back = (samples[k].u - samples[k - 1].u) / (samples[k].t - samples[k - 1].t);
        let fwd = (samples[k + 1].u - samples[k].u) / (samples[k + 1].t - samples[k].t);
        samples[k].u_dot = 0.5 * (back + fwd);
    }
    let traj = ReferenceTrajectory::new(samples, &r_f, &v_f, env, "guided")?;
    Ok((traj, GuidedSummary { brake_end, blend_start, gate_time, approach_accel: acc, gate_miss }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSummary {
    pub min: f64,
    /// First time the value is negative.
    pub first_violation: Option<f64>,
}

impl ConstraintSummary {
    fn new() -> Self {
        Self { min: f64::INFINITY, first_violation: None }
    }
    fn push(&mut self, t: f64, v: f64) {
        self.min = self.min.min(v);
        if v < 0.0 && self.first_violation.is_none() {
            self.first_violation = Some(t);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub psi1: ConstraintSummary,
    pub psi2: ConstraintSummary,
    pub phi1: ConstraintSummary,
    pub phi2: ConstraintSummary,
    /// Minimum of ψ2 on the terminal hold.
    pub hold_psi2: f64,
    /// Largest ‖Δu_r‖ between adjacent samples.
    pub max_thrust_jump: f64,
}

impl ValidationReport {
    pub fn feasible(&self) -> bool {
        [self.psi1, self.psi2, self.phi1, self.phi2].iter().all(|c| c.first_violation.is_none())
    }
}

pub fn validate_reference(traj: &ReferenceTrajectory, p: &ConstraintParams) -> ValidationReport {
    let mut rep = ValidationReport {
        psi1: ConstraintSummary::new(),
        psi2: ConstraintSummary::new(),
        phi1: ConstraintSummary::new(),
        phi2: ConstraintSummary::new(),
        hold_psi2: f64::INFINITY,
        max_thrust_jump: 0.0,
    };
    for (k, s) in traj.samples.iter().enumerate() {
        let c = raw_constraints(&s.r, &s.v, &s.u, p);
        rep.psi1.push(s.t, c.psi1);
        rep.psi2.push(s.t, c.psi2);
        rep.phi1.push(s.t, c.phi1);
        rep.phi2.push(s.t, c.phi2);
        if k > 0 {
            rep.max_thrust_jump = rep.max_thrust_jump.max((s.u - traj.samples[k - 1].u).norm());
        }
    }
    let h = &traj.hold;
    rep.hold_psi2 = raw_constraints(&h.r, &h.v, &h.u, p).psi2;
    rep
}
