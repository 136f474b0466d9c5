#![allow(dead_code)]

pub mod loops;

use std::path::PathBuf;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scb_landing::dynamics::{AugmentedState, BodyEnvironment, SpacecraftState, VehicleParams};
use scb_landing::gravity::{Ellipsoid, GravityModel};
use scb_landing::harness::{Scenario, Setup};
use scb_landing::observer::ObserverState;
use scb_landing::reference::ReferenceTrajectory;
use scb_landing::safety::CbfSystem;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"))
}

pub fn setup(name: &str) -> Setup {
    Scenario::load(&scenario_path(name)).unwrap().build().unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn ball(rng: &mut impl Rng, radius: f64) -> Vector3<f64> {
    unit(rng) * radius * rng.gen_range(0.0f64..1.0).cbrt()
}

/// The first body: a = 1000, b = c = 400 m, ρ = 1380, axis-aligned.
pub fn ellipsoid_a() -> Ellipsoid {
    Ellipsoid::centered(1000.0, 400.0, 400.0, 1380.0).unwrap()
}

pub fn omega_a() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, 2.0 * std::f64::consts::PI / 14400.0)
}

pub fn vehicle() -> VehicleParams {
    VehicleParams::new(700.0, 500.0, 225.0, 5.0, 20.0).unwrap()
}

/// Environment with a point-mass nominal at 75% of a harmonic truth.
pub fn env_a() -> BodyEnvironment {
    let e = ellipsoid_a();
    BodyEnvironment {
        omega: omega_a(),
        truth: GravityModel::from_ellipsoid(&e),
        nominal: GravityModel::point_mass_of(&e).with_mass_scale(0.75),
    }
}

pub fn rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let axis = nalgebra::Unit::new_normalize(unit(rng));
    nalgebra::Rotation3::from_axis_angle(&axis, rng.gen_range(0.0..std::f64::consts::TAU)).into_inner()
}

/// A random augmented state and observer near the reference at a random
/// time, away from the cone apex.
pub fn near_reference(
    rng: &mut impl Rng,
    traj: &ReferenceTrajectory,
    sys: &CbfSystem,
    t_hi: f64,
) -> (f64, AugmentedState, ObserverState) {
    loop {
        let t = rng.gen_range(0.0..t_hi);
        let s = traj.sample(t);
        let r = s.r + ball(rng, 5.0);
        let v = s.v + ball(rng, 0.2);
        let u = s.u + ball(rng, 1.0);
        let m = s.m - rng.gen_range(0.0..0.5);
        if (r - sys.p.beta * sys.p.r_f).norm() < 2.0 * scb_landing::safety::APEX_GUARD {
            continue;
        }
        let tau = 10.0;
        // estimate error of a few mm/s²
        let nu = tau * v - ball(rng, 3e-3);
        return (t, AugmentedState { x: SpacecraftState::new(r, v, m), u }, ObserverState { nu, tau });
    }
}

pub fn cbf_system(s: &Setup) -> CbfSystem {
    CbfSystem { p: s.constraints.clone(), c: s.cbf, env: s.env.clone(), vehicle: s.vehicle, a: s.gains.a }
}

/// Relative difference scaled by the larger magnitude and a floor.
pub fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn col(name: &str) -> usize {
    scb_landing::harness::TELEMETRY_COLUMNS.iter().position(|c| *c == name).unwrap_or_else(|| panic!("no column {name}"))
}

pub fn vec3(row: &[f64], prefix: &str) -> Vector3<f64> {
    Vector3::new(row[col(&format!("{prefix}x"))], row[col(&format!("{prefix}y"))], row[col(&format!("{prefix}z"))])
}

/// Near-reference states with every barrier non-negative.
pub fn safe_states(sys: &CbfSystem, traj: &ReferenceTrajectory, n: usize, seed: u64) -> Vec<(AugmentedState, ObserverState)> {
    let mut rng = rng(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let (_, xh, obs) = near_reference(&mut rng, traj, sys, traj.t_final() - 20.0);
        let Ok(c) = sys.composite_cbf(&xh, &obs) else { continue };
        if c.h >= 0.0 && sys.base_cbfs(&xh).iter().all(|b| *b >= 0.0) {
            out.push((xh, obs));
        }
    }
    out
}

/// Worst relative errors of the composite gradient against central differences.
#[derive(Debug, Clone, Copy)]
pub struct GradientCheck {
    /// Component differences recombined with the soft-min weights.
    pub chain: f64,
    /// Differences of h itself.
    pub direct: f64,
    pub chain_blocks: usize,
    pub direct_blocks: usize,
    /// Blocks neither difference resolves; these are held to the rounding
    /// floor of the component differences instead.
    pub unresolved: usize,
    /// Largest disagreement on those blocks as a multiple of that floor.
    pub floor_excess: f64,
}

const FD_STEPS: [f64; 10] = [0.5, 0.5, 0.5, 1e-3, 1e-3, 1e-3, 10.0, 1e-2, 1e-2, 1e-2];

/// Fourth-order central differences over (r, v, m, u) of h and its four
/// components. Steps are large because h can be O(0.1) while a block of its
/// gradient is O(1e-10).
fn fd_composite(sys: &CbfSystem, xh: &AugmentedState, obs: &ObserverState) -> [nalgebra::SVector<f64, 10>; 5] {
    let z = xh.to_vec();
    let eval = |i: usize, d: f64| {
        let mut zp = z;
        zp[i] += d;
        let c = sys.composite_cbf(&AugmentedState::from_vec(&zp), obs).unwrap();
        [c.h, c.parts[0], c.parts[1], c.parts[2], c.parts[3]]
    };
    let mut out = [nalgebra::SVector::<f64, 10>::zeros(); 5];
    for (i, d) in FD_STEPS.iter().copied().enumerate() {
        let (p1, m1, p2, m2) = (eval(i, d), eval(i, -d), eval(i, 2.0 * d), eval(i, -2.0 * d));
        for k in 0..5 {
            out[k][i] = (8.0 * (p1[k] - m1[k]) - (p2[k] - m2[k])) / (12.0 * d);
        }
    }
    out
}

// A difference of a function p resolves a gradient block only above about
// ε·|p|/step. Far from a state constraint the r and v blocks of h sit near
// 1e-20, so every block is also checked through the components at their own
// scale. A block enters each check only where its differences resolve it.
pub fn gradient_check(sys: &CbfSystem, states: &[(AugmentedState, ObserverState)]) -> GradientCheck {
    let mut out = GradientCheck { chain: 0.0, direct: 0.0, chain_blocks: 0, direct_blocks: 0, unresolved: 0, floor_excess: 0.0 };
    for (xh, obs) in states {
        let c = sys.composite_cbf(xh, obs).unwrap();
        let mut g = nalgebra::SVector::<f64, 10>::zeros();
        g.fixed_rows_mut::<7>(0).copy_from(&c.dh_dx);
        g.fixed_rows_mut::<3>(7).copy_from(&c.dh_du);
        let fd = fd_composite(sys, xh, obs);
        let w = scb_landing::safety::softmin_weights(&c.parts, sys.c.rho);
        let chain = (0..4).fold(nalgebra::SVector::<f64, 10>::zeros(), |acc, k| acc + fd[k + 1] * w[k]);
        for (lo, n) in [(0, 3), (3, 3), (6, 1), (7, 3)] {
            let a = g.rows(lo, n);
            let floor = |p: f64| 1e6 * f64::EPSILON * p.abs() / FD_STEPS[lo];
            // rounding in the weighted component differences must stay far
            // below the tolerance on this block; a component that does not
            // move at all contributes none
            let noise: f64 = (0..4)
                .filter(|&k| fd[k + 1].rows(lo, n).norm() > 0.0)
                .map(|k| w[k] * 10.0 * f64::EPSILON * c.parts[k].abs() / FD_STEPS[lo])
                .sum();
            if noise < 1e-7 * a.norm() {
                out.chain_blocks += 1;
                out.chain = out.chain.max((a - chain.rows(lo, n)).norm() / a.norm());
            }
            if !(noise < 1e-7 * a.norm()) && !(a.norm() > floor(c.h)) {
                out.unresolved += 1;
                out.floor_excess = out.floor_excess.max((a - chain.rows(lo, n)).norm() / noise);
            }
            if a.norm() > floor(c.h) {
                out.direct_blocks += 1;
                out.direct = out.direct.max((a - fd[0].rows(lo, n)).norm() / a.norm());
            }
        }
    }
    out
}
