//! Scenario files: one TOML document per run configuration.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{BodyEnvironment, VehicleParams};
use crate::gravity::{orientation_from_euler_deg, Ellipsoid, GravityModel};
use crate::reference::{generate_guided, generate_reference, load_reference, GuidedParams, ReferenceError, ReferenceTrajectory};
use crate::safety::{CbfParams, ConstraintParams, DisturbanceMode, SpeedSense};
use crate::tracking::TrackingGains;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("inconsistent scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
}

fn invalid<E: std::fmt::Display>(e: E) -> ScenarioError {
    ScenarioError::Invalid(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipsoidSpec {
    pub semi_axes: [f64; 3],
    pub density: f64,
    #[serde(default)]
    pub center: [f64; 3],
    /// Yaw, pitch, roll in degrees; the columns of the resulting rotation are
    /// the principal axes in the body frame.
    #[serde(default)]
    pub euler_deg: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Degree-2 field of each ellipsoid.
    #[default]
    Harmonic,
    /// Each ellipsoid's mass at its center.
    PointMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySpec {
    pub ellipsoids: Vec<EllipsoidSpec>,
    #[serde(default = "z_axis")]
    pub rotation_axis: [f64; 3],
    pub rotation_period_s: f64,
    #[serde(default)]
    pub truth: FieldKind,
    #[serde(default = "point_mass")]
    pub nominal: FieldKind,
    /// Mass scale of the nominal model relative to the truth.
    #[serde(default = "one")]
    pub mass_scale: f64,
}

fn z_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}
fn point_mass() -> FieldKind {
    FieldKind::PointMass
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub m_wet: f64,
    pub m_dry: f64,
    pub isp: f64,
    pub t_min: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub r0: [f64; 3],
    pub v0: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub r_f: [f64; 3],
    /// Omitted: ω×r_f. Given: must agree with ω×r_f to 1e-3 m/s.
    #[serde(default)]
    pub v_f: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandingSpec {
    pub r_l: f64,
    pub delta: f64,
    pub epsilon: f64,
}

/// A rule keyword or an explicit number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RuleOr<R> {
    Value(f64),
    Rule(R),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VminRule {
    /// v_min = √‖v_f‖.
    SqrtVf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaRule {
    Tan,
    Atan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingRule {
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub theta_gs_deg: f64,
    pub v_min: RuleOr<VminRule>,
    #[serde(default = "beta_tan")]
    pub beta: RuleOr<BetaRule>,
    /// Defaults to r_f/‖r_f‖.
    #[serde(default)]
    pub e_hat_s: Option<[f64; 3]>,
    #[serde(default)]
    pub speed_sense: SpeedSense,
    #[serde(default = "standard_scaling")]
    pub k_vel: RuleOr<ScalingRule>,
    #[serde(default = "standard_scaling")]
    pub k_gs: RuleOr<ScalingRule>,
    #[serde(default = "standard_scaling")]
    pub k_u: RuleOr<ScalingRule>,
}

fn beta_tan() -> RuleOr<BetaRule> {
    RuleOr::Rule(BetaRule::Tan)
}
fn standard_scaling() -> RuleOr<ScalingRule> {
    RuleOr::Rule(ScalingRule::Standard)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub tau: f64,
    pub k_p: f64,
    pub k_v: f64,
    pub a: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CbfSpec {
    pub rho: f64,
    pub gamma: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub alpha: f64,
    #[serde(default)]
    pub state_mode: DisturbanceMode,
    #[serde(default)]
    pub filter_mode: DisturbanceMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSpec {
    pub control_rate: f64,
    pub dt: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    /// Quintic position profile with inverse dynamics.
    Quintic {
        t_f: f64,
        /// Run even when the reference violates the constraints.
        #[serde(default)]
        allow_infeasible: bool,
    },
    /// Cone-aware guided profile.
    Guided {
        t_f: f64,
        #[serde(default)]
        params: GuidedParams,
        #[serde(default)]
        allow_infeasible: bool,
    },
    /// CSV file, relative to the scenario file.
    File {
        path: PathBuf,
        #[serde(default)]
        allow_infeasible: bool,
    },
}

impl ReferenceSpec {
    pub fn allow_infeasible(&self) -> bool {
        match self {
            ReferenceSpec::Quintic { allow_infeasible, .. }
            | ReferenceSpec::Guided { allow_infeasible, .. }
            | ReferenceSpec::File { allow_infeasible, .. } => *allow_infeasible,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub body: BodySpec,
    pub vehicle: VehicleSpec,
    pub initial: InitialSpec,
    pub target: TargetSpec,
    pub landing: LandingSpec,
    pub constraints: ConstraintSpec,
    pub controller: ControllerSpec,
    pub cbf: CbfSpec,
    pub timing: TimingSpec,
    pub reference: ReferenceSpec,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Landing tolerances of the three touchdown conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandingTolerances {
    pub r_l: f64,
    pub delta: f64,
    pub epsilon: f64,
}

/// Everything a run needs, with rules resolved to numbers.
#[derive(Debug, Clone)]
pub struct Setup {
    pub name: String,
    pub env: BodyEnvironment,
    pub vehicle: VehicleParams,
    pub constraints: ConstraintParams,
    pub cbf: CbfParams,
    pub gains: TrackingGains,
    pub tau: f64,
    pub landing: LandingTolerances,
    pub r0: Vector3<f64>,
    pub v0: Vector3<f64>,
    /// Integrator steps per control period.
    pub substeps: usize,
    pub dt: f64,
    pub t_max: f64,
    pub reference: ReferenceSpec,
    pub base_dir: PathBuf,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io { path: path.display().to_string(), source: e })?;
        let mut s = Self::from_toml(&text)?;
        s.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    fn fields(&self) -> Result<(GravityModel, GravityModel), ScenarioError> {
        let b = &self.body;
        if b.ellipsoids.is_empty() {
            return Err(invalid("body needs at least one ellipsoid"));
        }
        let mut truth = Vec::new();
        let mut nominal = Vec::new();
        for e in &b.ellipsoids {
            let [yaw, pitch, roll] = e.euler_deg;
            let el = Ellipsoid::new(
                e.semi_axes[0],
                e.semi_axes[1],
                e.semi_axes[2],
                e.density,
                v3(e.center),
                orientation_from_euler_deg(yaw, pitch, roll),
            )
            .map_err(invalid)?;
            let make = |k: FieldKind| match k {
                FieldKind::Harmonic => GravityModel::from_ellipsoid(&el),
                FieldKind::PointMass => GravityModel::point_mass_of(&el),
            };
            truth.push(make(b.truth));
            nominal.push(make(b.nominal));
        }
        if !(b.mass_scale > 0.0) {
            return Err(invalid(format!("mass_scale {} must be positive", b.mass_scale)));
        }
        let truth = GravityModel::composite(truth).map_err(invalid)?;
        let nominal = GravityModel::composite(nominal).map_err(invalid)?.with_mass_scale(b.mass_scale);
        Ok((truth, nominal))
    }

    /// Resolve rules and check cross-field consistency.
    pub fn build(&self) -> Result<Setup, ScenarioError> {
        let (truth, nominal) = self.fields()?;
        let axis = v3(self.body.rotation_axis)
            .try_normalize(1e-12)
            .ok_or_else(|| invalid("rotation axis must be non-zero"))?;
        if !(self.body.rotation_period_s > 0.0) {
            return Err(invalid("rotation period must be positive"));
        }
        let omega = axis * (2.0 * std::f64::consts::PI / self.body.rotation_period_s);
        let env = BodyEnvironment { omega, truth, nominal };

        let vs = &self.vehicle;
        let vehicle = VehicleParams::new(vs.m_wet, vs.m_dry, vs.isp, vs.t_min, vs.t_max).map_err(invalid)?;

        let r_f = v3(self.target.r_f);
        let derived = omega.cross(&r_f);
        let v_f = match self.target.v_f {
            None => derived,
            Some(v) => {
                let v = v3(v);
                if (v - derived).norm() > 1e-3 {
                    return Err(invalid(format!(
                        "v_f = {:?} differs from ω×r_f = {:?} by more than 1e-3 m/s",
                        v.as_slice(),
                        derived.as_slice()
                    )));
                }
                v
            }
        };

        let cs = &self.constraints;
        let theta = cs.theta_gs_deg.to_radians();
        let v_min = match cs.v_min {
            RuleOr::Value(v) => v,
            RuleOr::Rule(VminRule::SqrtVf) => v_f.norm().sqrt(),
        };
        let r_l = self.landing.r_l;
        let beta = match cs.beta {
            RuleOr::Value(b) => b,
            RuleOr::Rule(BetaRule::Tan) => ConstraintParams::beta_tan(r_l, &r_f, theta),
            RuleOr::Rule(BetaRule::Atan) => ConstraintParams::beta_atan(r_l, &r_f, theta),
        };
        let e_hat_s = match cs.e_hat_s {
            Some(e) => v3(e).try_normalize(1e-12).ok_or_else(|| invalid("e_hat_s must be non-zero"))?,
            None => r_f.try_normalize(1e-12).ok_or_else(|| invalid("r_f must be non-zero"))?,
        };
        let (kv, kg, ku) = ConstraintParams::standard_scaling(v_min, &r_f, vs.t_min, vs.t_max);
        let pick = |r: &RuleOr<ScalingRule>, standard: f64| match r {
            RuleOr::Value(v) => *v,
            RuleOr::Rule(ScalingRule::Standard) => standard,
        };
        let constraints = ConstraintParams {
            v_min,
            theta_gs: theta,
            beta,
            e_hat_s,
            r_f,
            v_f,
            k_vel: pick(&cs.k_vel, kv),
            k_gs: pick(&cs.k_gs, kg),
            k_u: pick(&cs.k_u, ku),
            t_min: vs.t_min,
            t_max: vs.t_max,
            r_l,
            speed_sense: cs.speed_sense,
        };
        constraints.validate().map_err(invalid)?;

        let c = &self.cbf;
        let cbf = CbfParams {
            rho: c.rho,
            gamma: c.gamma,
            alpha1: c.alpha1,
            beta1: c.beta1,
            beta2: c.beta2,
            alpha: c.alpha,
            state_mode: c.state_mode,
            filter_mode: c.filter_mode,
        };
        cbf.validate().map_err(invalid)?;
        let k = &self.controller;
        let gains = TrackingGains { k_p: k.k_p, k_v: k.k_v, sigma: k.sigma, a: k.a };
        gains.validate().map_err(invalid)?;
        if !(k.tau > 0.0) {
            return Err(invalid("observer gain tau must be positive"));
        }

        let tm = &self.timing;
        if !(tm.control_rate > 0.0 && tm.dt > 0.0 && tm.t_max > 0.0) {
            return Err(invalid("timing values must be positive"));
        }
        let per_period = 1.0 / (tm.control_rate * tm.dt);
        let substeps = per_period.round() as usize;
        if substeps == 0 || (per_period - substeps as f64).abs() > 1e-9 {
            return Err(invalid(format!("dt = {} must divide the control period 1/{}", tm.dt, tm.control_rate)));
        }
        let l = &self.landing;
        if !(l.r_l > 0.0 && l.delta > 0.0 && l.epsilon > 0.0) {
            return Err(invalid("landing tolerances must be positive"));
        }
        Ok(Setup {
            name: self.name.clone(),
            env,
            vehicle,
            constraints,
            cbf,
            gains,
            tau: k.tau,
            landing: LandingTolerances { r_l: l.r_l, delta: l.delta, epsilon: l.epsilon },
            r0: v3(self.initial.r0),
            v0: v3(self.initial.v0),
            substeps,
            dt: tm.dt,
            t_max: tm.t_max,
            reference: self.reference.clone(),
            base_dir: self.base_dir.clone(),
        })
    }
}

impl Setup {
    pub fn control_period(&self) -> f64 {
        self.dt * self.substeps as f64
    }

    pub fn reference(&self) -> Result<ReferenceTrajectory, ScenarioError> {
        let p = &self.constraints;
        Ok(match &self.reference {
            ReferenceSpec::Quintic { t_f, .. } => {
                generate_reference(&self.r0, &self.v0, &p.r_f, &p.v_f, *t_f, &self.env, &self.vehicle)?
            }
            ReferenceSpec::Guided { t_f, params, .. } => {
                let (traj, summary) = generate_guided(&self.r0, &self.v0, *t_f, p, &self.env, &self.vehicle, params)?;
                log::info!(
                    "guided reference: burn ends {:.1} s, blend {:.1}-{:.1} s, final-leg acceleration {:.5} m/s²",
                    summary.brake_end,
                    summary.blend_start,
                    summary.gate_time,
                    summary.approach_accel
                );
                traj
            }
            ReferenceSpec::File { path, .. } => {
                let full = if path.is_absolute() { path.clone() } else { self.base_dir.join(path) };
                load_reference(&full, &p.r_f, &p.v_f, &self.env)?
            }
        })
    }
}
