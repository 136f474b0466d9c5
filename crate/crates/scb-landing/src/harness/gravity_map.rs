//! Gravity field export on a rectangular grid.

use std::io::Write;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::dynamics::BodyEnvironment;

/// Axis ranges `lo:hi:n` for x, y and z, comma separated.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub axes: [(f64, f64, usize); 3],
}

impl FromStr for GridSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 3 {
            return Err(format!("grid `{s}`: expected three comma-separated axes lo:hi:n"));
        }
        let mut axes = [(0.0, 0.0, 1); 3];
        for (k, p) in parts.iter().enumerate() {
            let f: Vec<&str> = p.split(':').collect();
            let bad = || format!("grid axis `{p}`: expected lo:hi:n");
            if f.len() != 3 {
                return Err(bad());
            }
            let lo: f64 = f[0].trim().parse().map_err(|_| bad())?;
            let hi: f64 = f[1].trim().parse().map_err(|_| bad())?;
            let n: usize = f[2].trim().parse().map_err(|_| bad())?;
            if n == 0 || !lo.is_finite() || !hi.is_finite() || (n == 1 && lo != hi) {
                return Err(bad());
            }
            axes[k] = (lo, hi, n);
        }
        Ok(Self { axes })
    }
}

impl GridSpec {
    fn coords(&self, k: usize) -> Vec<f64> {
        let (lo, hi, n) = self.axes[k];
        if n == 1 {
            return vec![lo];
        }
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }
}

/// CSV `x,y,z,U,gx,gy,gz,wnorm` of the truth field; points where the field
/// is undefined get NaN.
pub fn write_gravity_map<W: Write>(env: &BodyEnvironment, grid: &GridSpec, w: W) -> Result<usize, csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x", "y", "z", "U", "gx", "gy", "gz", "wnorm"])?;
    let mut n = 0;
    for x in grid.coords(0) {
        for y in grid.coords(1) {
            for z in grid.coords(2) {
                let r = Vector3::new(x, y, z);
                let u = env.truth.potential(&r).unwrap_or(f64::NAN);
                let g = env.truth.gradient(&r).unwrap_or_else(|_| Vector3::repeat(f64::NAN));
                let wn = env.disturbance(&r).map(|d| d.norm()).unwrap_or(f64::NAN);
                wr.write_record([x, y, z, u, g.x, g.y, g.z, wn].iter().map(|v| v.to_string()))?;
                n += 1;
            }
        }
    }
    wr.flush()?;
    Ok(n)
}
