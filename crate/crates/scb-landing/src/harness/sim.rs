//! Sampled-data closed loop: observer, tracker and safety filter at the
//! control rate, plant, observer and reference mass integrated together.

use std::time::Instant;

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};

use super::scenario::{LandingTolerances, Setup};
use crate::dynamics::{f2, AugmentedState, DynamicsError, SpacecraftState};
use crate::observer::{init_observer, nu_rate, w_hat, ObserverState};
use crate::reference::{ReferenceSample, ReferenceTrajectory};
use crate::safety::{base_cbfs, raw_constraints, CbfSystem, SafetyError};
use crate::tracking::{zeta_from, zeta_desired, DesiredRate};

/// Smallest tolerated value of monitored quantities.
pub const VIOLATION_TOL: f64 = 1e-6;
/// Smallest tolerated filter constraint value b(ζ*, κ*).
pub const FILTER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    /// Tracker plus safety filter.
    #[default]
    Full,
    /// Thrust follows u_r open loop.
    Ref,
    /// Tracker without filter.
    Ud,
    /// Tracker with the thrust magnitude clipped to [T_min, T_max].
    UdSat,
}

impl std::str::FromStr for ControlMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Self::Full),
            "ref" => Ok(Self::Ref),
            "ud" => Ok(Self::Ud),
            "ud-sat" => Ok(Self::UdSat),
            _ => Err(format!("unknown control mode `{s}` (full|ref|ud|ud-sat)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Landed,
    Timeout,
    PropellantExhausted,
    FilterInfeasible,
    GuardTripped,
}

/// The three touchdown conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandingConditions {
    /// ‖r − r_f‖.
    pub position: f64,
    /// ê_sᵀ(r − r_f).
    pub vertical: f64,
    /// ‖v − v_f‖.
    pub velocity: f64,
    pub c1: bool,
    pub c2: bool,
    pub c3: bool,
}

impl LandingConditions {
    pub fn met(&self) -> bool {
        self.c1 && self.c2 && self.c3
    }
}

pub fn landing_check(
    r: &Vector3<f64>,
    v: &Vector3<f64>,
    r_f: &Vector3<f64>,
    v_f: &Vector3<f64>,
    e_hat_s: &Vector3<f64>,
    tol: &LandingTolerances,
) -> LandingConditions {
    let position = (r - r_f).norm();
    let vertical = e_hat_s.dot(&(r - r_f));
    let velocity = (v - v_f).norm();
    LandingConditions {
        position,
        vertical,
        velocity,
        c1: position <= tol.r_l,
        c2: vertical.abs() <= tol.delta,
        c3: velocity <= tol.epsilon,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningMin {
    /// None until a finite sample arrives.
    pub min: Option<f64>,
    /// Time of the minimum.
    pub t: f64,
    /// First time below the violation tolerance.
    pub first_violation: Option<f64>,
}

impl Default for RunningMin {
    fn default() -> Self {
        Self { min: None, t: 0.0, first_violation: None }
    }
}

impl RunningMin {
    /// The minimum, or +∞ when nothing was recorded.
    pub fn value(&self) -> f64 {
        self.min.unwrap_or(f64::INFINITY)
    }

    pub fn push(&mut self, t: f64, v: f64, tol: f64) {
        if v.is_nan() {
            return;
        }
        if v < self.value() {
            self.min = Some(v);
            self.t = t;
        }
        if v < -tol && self.first_violation.is_none() {
            self.first_violation = Some(t);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Minima {
    pub psi1: RunningMin,
    pub psi2: RunningMin,
    pub phi1: RunningMin,
    pub phi2: RunningMin,
    pub h: RunningMin,
    pub h10: RunningMin,
    pub h11: RunningMin,
    pub h20: RunningMin,
    pub h22: RunningMin,
    pub h30: RunningMin,
    pub h40: RunningMin,
    /// b(ζ*, κ*) of the applied filter decision.
    pub filter_b: RunningMin,
}

impl Minima {
    fn named(&self) -> [(&'static str, &RunningMin); 12] {
        [
            ("psi1", &self.psi1),
            ("psi2", &self.psi2),
            ("phi1", &self.phi1),
            ("phi2", &self.phi2),
            ("h", &self.h),
            ("h10", &self.h10),
            ("h11", &self.h11),
            ("h20", &self.h20),
            ("h22", &self.h22),
            ("h30", &self.h30),
            ("h40", &self.h40),
            ("filter_b", &self.filter_b),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub quantity: String,
    pub first_time: f64,
    pub min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario: String,
    pub control: ControlMode,
    pub status: RunStatus,
    pub t_l: Option<f64>,
    pub t_end: f64,
    /// Touchdown conditions at the last control instant.
    pub terminal: LandingConditions,
    /// ψ1 at the last control instant; not part of the minima when landed.
    pub psi1_terminal: f64,
    pub minima: Minima,
    pub violations: Vec<Violation>,
    pub propellant_used: f64,
    /// Fraction of control periods with λ > 0.
    pub filter_active_fraction: f64,
    pub max_zeta_correction: f64,
    /// Error text for abnormal exits.
    pub error: Option<String>,
    /// State (r, v, m, u) at the last control instant.
    pub final_state: [f64; 10],
    pub reference_source: String,
    pub wall_clock_s: f64,
}

impl RunResult {
    pub fn landed(&self) -> bool {
        self.status == RunStatus::Landed
    }
}

/// Columns of `telemetry.csv`, in order.
pub const TELEMETRY_COLUMNS: [&str; 52] = [
    "t", "rx", "ry", "rz", "vx", "vy", "vz", "m", "ux", "uy", "uz", "zx", "zy", "zz", //
    "whx", "why", "whz", "wx", "wy", "wz", //
    "udx", "udy", "udz", "zdx", "zdy", "zdz", //
    "h", "h11", "h22", "h30", "h40", "phi", "lambda", "kappa", "psi1", "psi2", "tphi1", "tphi2", //
    "h10", "h20", "b", //
    "rrx", "rry", "rrz", "vrx", "vry", "vrz", "mr", "urx", "ury", "urz", "landed",
];

pub type TelemetryRow = [f64; 52];

/// Quantities computed once per control instant.
#[derive(Debug, Clone, Copy)]
struct ControlStep {
    zeta: Vector3<f64>,
    zeta_d: Vector3<f64>,
    u_d: Vector3<f64>,
    h: f64,
    parts: [f64; 4],
    phi: f64,
    lambda: f64,
    kappa: f64,
    b: f64,
    active: bool,
}

fn nan3() -> Vector3<f64> {
    Vector3::repeat(f64::NAN)
}

fn saturate(u: &Vector3<f64>, lo: f64, hi: f64) -> (Vector3<f64>, bool) {
    let n = u.norm();
    if n > hi {
        (u * (hi / n), true)
    } else if n < lo {
        let dir = u.try_normalize(1e-12).unwrap_or(Vector3::z());
        (dir * lo, true)
    } else {
        (*u, false)
    }
}

struct Loop<'a> {
    s: &'a Setup,
    reference: &'a ReferenceTrajectory,
    sys: CbfSystem,
    mode: ControlMode,
}

/// Monolithic state: r, v, m, u, ν, m_r.
type Y = SVector<f64, 14>;

fn pack(xh: &AugmentedState, nu: &Vector3<f64>, m_r: f64) -> Y {
    let mut y = Y::zeros();
    y.fixed_rows_mut::<10>(0).copy_from(&xh.to_vec());
    y.fixed_rows_mut::<3>(10).copy_from(nu);
    y[13] = m_r;
    y
}

fn unpack(y: &Y) -> (AugmentedState, Vector3<f64>, f64) {
    (AugmentedState::from_vec(&y.fixed_rows::<10>(0).into_owned()), Vector3::new(y[10], y[11], y[12]), y[13])
}

impl Loop<'_> {
    fn rhs(&self, t: f64, y: &Y, zeta: &Vector3<f64>) -> Result<Y, DynamicsError> {
        let (xh, nu, _) = unpack(y);
        let env = &self.s.env;
        let w = env.disturbance(&xh.x.r)?;
        let dx = crate::dynamics::augmented_derivative(&xh, zeta, env, &w, self.s.gains.a, &self.s.vehicle)?;
        let obs = ObserverState { nu, tau: self.s.tau };
        let f = f2(&xh.x, env)?;
        let dnu = nu_rate(&f, &xh.u, xh.x.m, &xh.x.v, &obs);
        let ur = self.reference.sample(t).u;
        let mut d = Y::zeros();
        d.fixed_rows_mut::<10>(0).copy_from(&dx);
        d.fixed_rows_mut::<3>(10).copy_from(&dnu);
        d[13] = -self.s.vehicle.alpha() * ur.norm();
        Ok(d)
    }

    fn control(
        &self,
        xh: &AugmentedState,
        obs: &ObserverState,
        xr: &ReferenceSample,
    ) -> (ControlStep, Option<SafetyError>) {
        let (x, u) = (&xh.x, &xh.u);
        let (s, sys) = (self.s, &self.sys);
        let (zeta_d, u_d, rate) = zeta_desired(x, u, xr, obs, &s.env, &s.gains, &s.vehicle);
        let cbf = sys.composite_cbf(xh, obs);
        let (h, parts) = match &cbf {
            Ok(c) => (c.h, c.parts),
            Err(_) => (f64::NAN, [sys.hocbf_velocity(xh, obs), f64::NAN, f64::NAN, f64::NAN]),
        };
        let mut step = ControlStep {
            zeta: zeta_d,
            zeta_d,
            u_d,
            h,
            parts,
            phi: f64::NAN,
            lambda: 0.0,
            kappa: 0.0,
            b: f64::NAN,
            active: false,
        };
        if let Ok(c) = &cbf {
            let [_, _, h30, h40] = base_cbfs(&x.r, &x.v, u, &s.constraints);
            step.parts[2] = h30;
            step.parts[3] = h40;
            step.phi = sys.relaxed_constraint_b(xh, obs, c, &zeta_d, 0.0);
        }
        match self.mode {
            ControlMode::Full => match sys.safety_filter(xh, obs, &zeta_d) {
                Ok((d, c)) => {
                    step.zeta = d.zeta_star;
                    step.lambda = d.lambda;
                    step.kappa = d.kappa_star;
                    step.active = d.active;
                    step.b = sys.relaxed_constraint_b(xh, obs, &c, &d.zeta_star, d.kappa_star);
                }
                Err(e) => return (step, Some(e)),
            },
            ControlMode::Ud => {}
            ControlMode::Ref => {
                step.zeta = xr.u + xr.u_dot / s.gains.a;
            }
            ControlMode::UdSat => {
                let (ud_sat, clipped) = saturate(&u_d, s.vehicle.t_min, s.vehicle.t_max);
                let rate = if clipped { DesiredRate { value: Vector3::zeros(), kink: rate.kink } } else { rate };
                step.zeta = zeta_from(u, &ud_sat, &rate.value, &s.gains);
            }
        }
        if self.mode != ControlMode::Full {
            if let Ok(c) = &cbf {
                step.b = sys.relaxed_constraint_b(xh, obs, c, &step.zeta, 0.0);
            }
        }
        (step, cbf.err())
    }
}

/// Output of a run: the result and one telemetry row per control instant.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: RunResult,
    pub telemetry: Vec<TelemetryRow>,
}

/// Failure that is not a run outcome: the integration itself broke down.
#[derive(Debug, thiserror::Error)]
#[error("integration failed at t = {t:.3} s: {source}")]
pub struct SimError {
    pub t: f64,
    pub source: DynamicsError,
}

/// Run the closed loop from the scenario's initial state.
pub fn run(s: &Setup, reference: &ReferenceTrajectory, mode: ControlMode, t_max: Option<f64>) -> Result<RunOutput, SimError> {
    run_from(s, reference, mode, t_max, None)
}

/// As [`run`], optionally starting from a given (x, u) instead of
/// (r0, v0, m_w, u_r(0)). The observer starts with a zero estimate.
pub fn run_from(
    s: &Setup,
    reference: &ReferenceTrajectory,
    mode: ControlMode,
    t_max: Option<f64>,
    initial: Option<AugmentedState>,
) -> Result<RunOutput, SimError> {
    let start = Instant::now();
    let sys = CbfSystem { p: s.constraints.clone(), c: s.cbf, env: s.env.clone(), vehicle: s.vehicle, a: s.gains.a };
    let lp = Loop { s, reference, sys, mode };
    let t_max = t_max.unwrap_or(s.t_max);
    let period = s.control_period();
    let p = &s.constraints;

    let xr0 = reference.sample(0.0);
    let xh0 = initial.unwrap_or(AugmentedState { x: SpacecraftState::new(s.r0, s.v0, s.vehicle.m_wet), u: xr0.u });
    let obs0 = init_observer(s.tau, &xh0.x.v);
    let mut y = pack(&xh0, &obs0.nu, xr0.m);

    let mut minima = Minima::default();
    let mut telemetry = Vec::new();
    let mut active_steps = 0usize;
    let mut max_corr: f64 = 0.0;
    let mut psi1_last;
    let mut status = RunStatus::Timeout;
    let mut t_l = None;
    let mut error = None;
    let mut k: u64 = 0;
    let n_max = (t_max / period + 1e-9).floor() as u64;
    let mut t;
    loop {
        t = k as f64 * period;
        let (xh, nu, m_r) = unpack(&y);
        let obs = ObserverState { nu, tau: s.tau };
        let mut xr = reference.sample(t);
        xr.m = m_r;
        let x = &xh.x;
        let cond = landing_check(&x.r, &x.v, &p.r_f, &p.v_f, &p.e_hat_s, &s.landing);
        let landed = cond.met();
        let (step, err) = lp.control(&xh, &obs, &xr);
        let raw = raw_constraints(&x.r, &x.v, &xh.u, p);
        let base = base_cbfs(&x.r, &x.v, &xh.u, p);
        let h21_ok = err.is_none();
        let w = s.env.disturbance(&x.r).unwrap_or_else(|_| nan3());
        let wh = w_hat(&x.v, &obs);

        psi1_last = raw.psi1;
        if !landed {
            minima.psi1.push(t, raw.psi1, VIOLATION_TOL);
        }
        minima.psi2.push(t, raw.psi2, VIOLATION_TOL);
        minima.phi1.push(t, raw.phi1, VIOLATION_TOL);
        minima.phi2.push(t, raw.phi2, VIOLATION_TOL);
        minima.h10.push(t, base[0], VIOLATION_TOL);
        minima.h20.push(t, base[1], VIOLATION_TOL);
        minima.h30.push(t, base[2], VIOLATION_TOL);
        minima.h40.push(t, base[3], VIOLATION_TOL);
        minima.h11.push(t, step.parts[0], VIOLATION_TOL);
        if h21_ok {
            minima.h.push(t, step.h, VIOLATION_TOL);
            minima.h22.push(t, step.parts[1], VIOLATION_TOL);
        }
        if mode == ControlMode::Full && !landed && err.is_none() {
            minima.filter_b.push(t, step.b, FILTER_TOL);
            if step.active {
                active_steps += 1;
            }
            max_corr = max_corr.max((step.zeta - step.zeta_d).norm());
        }

        let zeta_applied = if err.is_some() && mode == ControlMode::Full { nan3() } else { step.zeta };
        let row: TelemetryRow = [
            t, x.r.x, x.r.y, x.r.z, x.v.x, x.v.y, x.v.z, x.m, xh.u.x, xh.u.y, xh.u.z, zeta_applied.x, zeta_applied.y,
            zeta_applied.z, wh.x, wh.y, wh.z, w.x, w.y, w.z, step.u_d.x, step.u_d.y, step.u_d.z, step.zeta_d.x,
            step.zeta_d.y, step.zeta_d.z, step.h, step.parts[0], step.parts[1], base[2], base[3], step.phi,
            step.lambda, step.kappa, raw.psi1, raw.psi2, raw.phi1, raw.phi2, base[0], base[1], step.b, xr.r.x,
            xr.r.y, xr.r.z, xr.v.x, xr.v.y, xr.v.z, xr.m, xr.u.x, xr.u.y, xr.u.z, if landed { 1.0 } else { 0.0 },
        ];
        telemetry.push(row);

        if landed {
            status = RunStatus::Landed;
            t_l = Some(t);
            break;
        }
        if let (Some(e), ControlMode::Full) = (&err, mode) {
            status = match e {
                SafetyError::Infeasible { .. } => RunStatus::FilterInfeasible,
                _ => RunStatus::GuardTripped,
            };
            error = Some(format!("{e} at t = {t:.2} s"));
            break;
        }
        if k >= n_max {
            break;
        }
        let zeta = step.zeta;
        let mut ok = true;
        for j in 0..s.substeps {
            let ts = t + j as f64 * s.dt;
            match crate::dynamics::rk4_step(|tt, yy: &Y| lp.rhs(tt, yy, &zeta), ts, &y, s.dt) {
                Ok(next) => y = next,
                Err(e @ DynamicsError::PropellantExhausted { .. }) => {
                    status = RunStatus::PropellantExhausted;
                    error = Some(format!("{e} at t = {ts:.2} s"));
                    ok = false;
                    break;
                }
                Err(e) => return Err(SimError { t: ts, source: e }),
            }
        }
        if !ok {
            break;
        }
        k += 1;
    }

    let (xh, _, _) = unpack(&y);
    let terminal = landing_check(&xh.x.r, &xh.x.v, &p.r_f, &p.v_f, &p.e_hat_s, &s.landing);
    let checked = if mode == ControlMode::Full { k as usize + 1 } else { 0 };
    let violations = minima
        .named()
        .iter()
        .filter_map(|(name, m)| m.first_violation.map(|ft| Violation { quantity: name.to_string(), first_time: ft, min: m.value() }))
        .collect();
    let mut final_state = [0.0; 10];
    final_state.copy_from_slice(xh.to_vec().as_slice());
    let result = RunResult {
        scenario: s.name.clone(),
        control: mode,
        status,
        t_l,
        t_end: t,
        terminal,
        psi1_terminal: psi1_last,
        minima,
        violations,
        propellant_used: s.vehicle.m_wet - xh.x.m,
        filter_active_fraction: if checked > 0 { active_steps as f64 / checked as f64 } else { 0.0 },
        max_zeta_correction: max_corr,
        error,
        final_state,
        reference_source: reference.source.clone(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutput { result, telemetry })
}
