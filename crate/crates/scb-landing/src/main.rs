use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info, warn};

use scb_landing::harness::batch::run_batch;
use scb_landing::harness::emit::emit;
use scb_landing::harness::gravity_map::{write_gravity_map, GridSpec};
use scb_landing::harness::{run, ControlMode, RunResult, Scenario, Setup};
use scb_landing::reference::{load_reference, validate_reference};

const EXIT_CLEAN: u8 = 0;
const EXIT_VIOLATIONS: u8 = 2;
const EXIT_NO_LANDING: u8 = 3;
const EXIT_ERROR: u8 = 4;

#[derive(Parser)]
#[command(name = "scb-landing", about = "Safe soft-landing simulations on small bodies")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one scenario.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value = "full")]
        control: ControlMode,
        /// Override the scenario's final time, s.
        #[arg(long = "t-max")]
        t_max: Option<f64>,
    },
    /// Run every entry of a manifest in parallel.
    Batch { manifest: PathBuf },
    /// Write the scenario's generated reference as CSV.
    GenRef {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a reference file against the scenario's constraints.
    ValidateRef { scenario: PathBuf, file: PathBuf },
    /// Export the truth gravity field on a grid `lo:hi:n,lo:hi:n,lo:hi:n`.
    GravityMap {
        scenario: PathBuf,
        #[arg(long)]
        grid: GridSpec,
        #[arg(long)]
        out: PathBuf,
    },
}

fn setup(path: &Path) -> Result<Setup, String> {
    Scenario::load(path).and_then(|s| s.build()).map_err(|e| e.to_string())
}

fn exit_for(r: &RunResult) -> u8 {
    match (r.landed(), r.violations.is_empty()) {
        (true, true) => EXIT_CLEAN,
        (true, false) => EXIT_VIOLATIONS,
        _ => EXIT_NO_LANDING,
    }
}

fn summarize(r: &RunResult) {
    info!(
        "{} [{:?}]: {:?} at t = {:.2} s; |r-rf| = {:.4} m, e'(r-rf) = {:.4} m, |v-vf| = {:.4} m/s; propellant {:.3} kg",
        r.scenario, r.control, r.status, r.t_end, r.terminal.position, r.terminal.vertical, r.terminal.velocity, r.propellant_used
    );
    for v in &r.violations {
        warn!("{} below tolerance from t = {:.2} s (min {:.3e})", v.quantity, v.first_time, v.min);
    }
    if let Some(e) = &r.error {
        warn!("{e}");
    }
}

fn cmd_run(scenario: &Path, out: &Path, control: ControlMode, t_max: Option<f64>) -> Result<u8, String> {
    let s = setup(scenario)?;
    let reference = s.reference().map_err(|e| e.to_string())?;
    let report = validate_reference(&reference, &s.constraints);
    if !report.feasible() {
        warn!("reference violates constraints: {report:?}");
        if !s.reference.allow_infeasible() {
            return Err("reference is infeasible; set allow_infeasible = true in [reference] to run anyway".into());
        }
    }
    let output = run(&s, &reference, control, t_max).map_err(|e| e.to_string())?;
    emit(&output, out, s.vehicle.t_min, s.vehicle.t_max).map_err(|e| e.to_string())?;
    summarize(&output.result);
    println!("{}", serde_json::to_string(&output.result.status).unwrap_or_default());
    Ok(exit_for(&output.result))
}

fn dispatch(cli: Cli) -> Result<u8, String> {
    match cli.cmd {
        Cmd::Run { scenario, out, control, t_max } => cmd_run(&scenario, &out, control, t_max),
        Cmd::Batch { manifest } => {
            let outcomes = run_batch(&manifest)?;
            let mut code = EXIT_CLEAN;
            for o in &outcomes {
                let c = match &o.result {
                    Ok(r) => {
                        summarize(r);
                        exit_for(r)
                    }
                    Err(e) => {
                        error!("{}: {e}", o.dir.display());
                        EXIT_ERROR
                    }
                };
                println!("{}\t{}", o.dir.display(), c);
                code = code.max(c);
            }
            Ok(code)
        }
        Cmd::GenRef { scenario, out } => {
            let s = setup(&scenario)?;
            let reference = s.reference().map_err(|e| e.to_string())?;
            reference.save(&out).map_err(|e| e.to_string())?;
            info!("wrote {} samples to {}", reference.samples.len(), out.display());
            Ok(EXIT_CLEAN)
        }
        Cmd::ValidateRef { scenario, file } => {
            let s = setup(&scenario)?;
            let p = &s.constraints;
            let reference = load_reference(&file, &p.r_f, &p.v_f, &s.env).map_err(|e| e.to_string())?;
            let report = validate_reference(&reference, p);
            println!("{}", serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?);
            Ok(if report.feasible() { EXIT_CLEAN } else { EXIT_VIOLATIONS })
        }
        Cmd::GravityMap { scenario, grid, out } => {
            let s = setup(&scenario)?;
            let f = std::fs::File::create(&out).map_err(|e| format!("cannot write {}: {e}", out.display()))?;
            let n = write_gravity_map(&s.env, &grid, std::io::BufWriter::new(f)).map_err(|e| e.to_string())?;
            info!("wrote {n} grid points to {}", out.display());
            Ok(EXIT_CLEAN)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SCB_LOG", "info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
