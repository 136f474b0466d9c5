//! Run artifacts: telemetry.csv, metrics.json and plots.gp.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use super::sim::{RunOutput, RunResult, TelemetryRow, TELEMETRY_COLUMNS};

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error on {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("json error on {path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> EmitError + '_ {
    move |e| EmitError::Io { path: path.display().to_string(), source: e }
}

/// Telemetry as CSV; numbers use the shortest round-trip representation.
pub fn write_telemetry<W: Write>(rows: &[TelemetryRow], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(TELEMETRY_COLUMNS)?;
    for row in rows {
        wr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn telemetry_string(rows: &[TelemetryRow]) -> String {
    let mut buf = Vec::new();
    write_telemetry(rows, &mut buf).expect("in-memory csv");
    String::from_utf8(buf).expect("csv is utf-8")
}

pub fn read_metrics(path: &Path) -> Result<RunResult, EmitError> {
    let f = File::open(path).map_err(io(path))?;
    serde_json::from_reader(f).map_err(|e| EmitError::Json { path: path.display().to_string(), source: e })
}

/// gnuplot script over telemetry.csv: trajectory, disturbance estimate,
/// constraints and barriers, thrust against its bounds.
pub fn plot_script(result: &RunResult, t_min: f64, t_max: f64) -> String {
    format!(
        r#"# gnuplot script for {name} ({control})
set datafile separator ","
set key autotitle columnhead
set terminal pngcairo size 1000,700
set grid

set output "trajectory.png"
set title "Trajectory and reference"
set xlabel "x [m]"; set ylabel "y [m]"; set zlabel "z [m]"
splot "telemetry.csv" using "rx":"ry":"rz" with lines title "r", \
      "" using "rrx":"rry":"rrz" with lines dashtype 2 title "r_r"

set output "disturbance.png"
set title "Disturbance estimate"
set xlabel "t [s]"; set ylabel "m/s^2"
plot "telemetry.csv" using "t":"wx" with lines title "w_x", \
     "" using "t":"whx" with lines dashtype 2 title "west_x", \
     "" using "t":"wy" with lines title "w_y", \
     "" using "t":"why" with lines dashtype 2 title "west_y", \
     "" using "t":"wz" with lines title "w_z", \
     "" using "t":"whz" with lines dashtype 2 title "west_z"

set output "disturbance_error.png"
set title "Normalized estimation error"
set ylabel "|w - west| / |w|"
plot "telemetry.csv" using "t":(sqrt((column("wx")-column("whx"))**2+(column("wy")-column("why"))**2+(column("wz")-column("whz"))**2)/sqrt(column("wx")**2+column("wy")**2+column("wz")**2)) with lines title "error"

set output "constraints.png"
set title "State and input constraints"
set ylabel "value"
plot "telemetry.csv" using "t":"psi1" with lines, \
     "" using "t":"psi2" with lines, \
     "" using "t":"tphi1" with lines, \
     "" using "t":"tphi2" with lines

set output "barriers.png"
set title "Barrier functions"
plot "telemetry.csv" using "t":"h" with lines, \
     "" using "t":"h11" with lines, \
     "" using "t":"h22" with lines, \
     "" using "t":"h30" with lines, \
     "" using "t":"h40" with lines

set output "thrust.png"
set title "Thrust magnitude"
set ylabel "N"
plot "telemetry.csv" using "t":(sqrt(column("ux")**2+column("uy")**2+column("uz")**2)) with lines title "|u|", \
     "" using "t":(sqrt(column("udx")**2+column("udy")**2+column("udz")**2)) with lines dashtype 2 title "|u_d|", \
     {t_max} with lines dashtype 3 title "T_max", \
     {t_min} with lines dashtype 3 title "T_min"

set output "filter.png"
set title "Filter intervention"
set ylabel "lambda"
plot "telemetry.csv" using "t":"lambda" with lines
"#,
        name = result.scenario,
        control = serde_json::to_string(&result.control).unwrap_or_default().trim_matches('"'),
    )
}

/// Column names a plot script reads through `column("…")` or `"…"` in a using clause.
pub fn plot_columns(script: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in script.lines().filter(|l| l.contains("using")) {
        let mut rest = line;
        while let Some(i) = rest.find('"') {
            let tail = &rest[i + 1..];
            let Some(j) = tail.find('"') else { break };
            let word = &tail[..j];
            let quoted_arg = rest[..i].ends_with("column(") || rest[..i].ends_with("using ") || rest[..i].ends_with(':');
            if quoted_arg && !word.is_empty() && word != "telemetry.csv" {
                out.push(word.to_string());
            }
            rest = &tail[j + 1..];
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Write telemetry.csv, metrics.json and plots.gp into `dir`.
pub fn emit(out: &RunOutput, dir: &Path, t_min: f64, t_max: f64) -> Result<(), EmitError> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let tpath = dir.join("telemetry.csv");
    let f = File::create(&tpath).map_err(io(&tpath))?;
    write_telemetry(&out.telemetry, BufWriter::new(f))
        .map_err(|e| EmitError::Csv { path: tpath.display().to_string(), source: e })?;
    let mpath = dir.join("metrics.json");
    let f = File::create(&mpath).map_err(io(&mpath))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, &out.result)
        .map_err(|e| EmitError::Json { path: mpath.display().to_string(), source: e })?;
    w.flush().map_err(io(&mpath))?;
    let ppath = dir.join("plots.gp");
    std::fs::write(&ppath, plot_script(&out.result, t_min, t_max)).map_err(io(&ppath))?;
    Ok(())
}
