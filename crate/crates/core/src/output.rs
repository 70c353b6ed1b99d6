//! Delimited-text outputs of a run.
//!
//! `profiles.csv` has one row per cell per snapshot. Columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `snapshot`, `step`, `time` | snapshot index, step count and time |
//! | `cell`, `x` | cell index and centre |
//! | `n_<s>`, `u_<s>`, `T_<s>` | moments of species `<s>`, in species order |
//! | `n_total`, `u_total`, `T_total` | mixture density, mass-averaged velocity, energy-consistent temperature |
//! | `n_exact`, `u_exact`, `T_exact` | exact shock-tube solution, only when the scenario declares one |
//!
//! `steps.csv` has one row per step (`step,time,dt,gst_iterations_max,
//! gst_iterations_total,momentum_drift,energy_drift,mass_drift,lambda_max,
//! retried`). `summary.txt` is a flat `key = value` document.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::integrate::{Integrator, Snapshot, Trajectory};
use crate::mixture::{MomentState, SpeciesSet};
use crate::oracle::{mixture_totals, PeriodicShockTube};
use crate::scenario::Scenario;
use crate::transport::SpatialGrid;

pub const STEPS_HEADER: &str =
    "step,time,dt,gst_iterations_max,gst_iterations_total,momentum_drift,energy_drift,mass_drift,lambda_max,retried";

pub fn profile_header(species: &SpeciesSet, overlay: bool) -> String {
    let mut cols: Vec<String> = ["snapshot", "step", "time", "cell", "x"].iter().map(|s| s.to_string()).collect();
    for s in species.species() {
        for q in ["n", "u", "T"] {
            cols.push(format!("{q}_{}", s.name));
        }
    }
    cols.extend(["n_total", "u_total", "T_total"].map(String::from));
    if overlay {
        cols.extend(["n_exact", "u_exact", "T_exact"].map(String::from));
    }
    cols.join(",")
}

/// Full profile table for the given snapshots.
pub fn profiles_csv(
    species: &SpeciesSet,
    space: &SpatialGrid,
    snapshots: &[Snapshot],
    exact: Option<&PeriodicShockTube>,
) -> String {
    let mut out = profile_header(species, exact.is_some());
    out.push('\n');
    for (k, snap) in snapshots.iter().enumerate() {
        for (c, m) in snap.moments.iter().enumerate() {
            let x = space.center(c);
            let _ = write!(out, "{k},{},{},{c},{x}", snap.step, snap.time);
            for i in 0..m.len() {
                let _ = write!(out, ",{},{},{}", m.density()[i], m.velocity()[(i, 0)], m.temperature()[i]);
            }
            let (n, u, t) = mixture_totals(species, m);
            let _ = write!(out, ",{n},{u},{t}");
            if let Some(tube) = exact {
                let e = tube.sample(x, snap.time);
                let _ = write!(out, ",{},{},{}", e.rho, e.u, e.p / e.rho);
            }
            out.push('\n');
        }
    }
    out
}

/// Profile of the exact shock-tube solution alone at time `t`.
pub fn exact_profile_csv(space: &SpatialGrid, tube: &PeriodicShockTube, t: f64) -> String {
    let mut out = String::from("cell,x,n_exact,u_exact,T_exact,p_exact\n");
    for c in 0..space.cells() {
        let x = space.center(c);
        let e = tube.sample(x, t);
        let _ = writeln!(out, "{c},{x},{},{},{},{}", e.rho, e.u, e.p / e.rho, e.p);
    }
    out
}

pub fn steps_csv(trajectory: &Trajectory) -> String {
    let mut out = format!("{STEPS_HEADER}\n");
    for r in &trajectory.steps {
        let s = &r.stats;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.index,
            r.time,
            s.dt,
            s.gst_iterations_max,
            s.gst_iterations_total,
            s.momentum_drift,
            s.energy_drift,
            s.mass_drift,
            s.lambda_max,
            s.retried
        );
    }
    out
}

/// L1 distances of the mixture totals from the exact solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShockTubeErrors {
    /// `sum |n - n_exact| / sum n_exact`.
    pub density: f64,
    /// `sum |u - u_exact| dx`.
    pub velocity: f64,
    /// `sum |T - T_exact| / sum T_exact`.
    pub temperature: f64,
}

pub fn shock_tube_errors(
    species: &SpeciesSet,
    space: &SpatialGrid,
    moments: &[MomentState],
    tube: &PeriodicShockTube,
    t: f64,
) -> ShockTubeErrors {
    let (mut dn, mut sn, mut du, mut dt, mut st) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (c, m) in moments.iter().enumerate() {
        let e = tube.sample(space.center(c), t);
        let (n, u, temp) = mixture_totals(species, m);
        let t_ex = e.p / e.rho;
        dn += (n - e.rho).abs();
        sn += e.rho;
        du += (u - e.u).abs() * space.dx();
        dt += (temp - t_ex).abs();
        st += t_ex;
    }
    ShockTubeErrors {
        density: dn / sn,
        velocity: du,
        temperature: dt / st,
    }
}

/// Ordered `key = value` pairs describing a finished run.
pub fn summary(scenario: &Scenario, trajectory: &Trajectory) -> Vec<(String, String)> {
    let steps = &trajectory.steps;
    let mut kv: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| kv.push((k.to_string(), v));
    put("scenario", scenario.config.name.clone());
    put(
        "integrator",
        match trajectory.integrator {
            Integrator::Imex => "imex",
            Integrator::Explicit => "explicit",
        }
        .into(),
    );
    put("epsilon", scenario.problem.eps.to_string());
    put("cells", scenario.problem.space.cells().to_string());
    put("velocities", scenario.problem.velocity.len().to_string());
    put("steps", trajectory.step_count().to_string());
    put("final_time", trajectory.final_time().to_string());
    put("wall_seconds", format!("{:.3}", trajectory.wall_seconds));
    let dts: Vec<f64> = steps.iter().map(|r| r.stats.dt).collect();
    let fold = |init: f64, f: fn(f64, f64) -> f64| dts.iter().copied().fold(init, f);
    if !dts.is_empty() {
        put("dt_first", dts[0].to_string());
        put("dt_last", dts[dts.len() - 1].to_string());
        put("dt_min", fold(f64::INFINITY, f64::min).to_string());
        put("dt_max", fold(0.0, f64::max).to_string());
    }
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for r in steps {
        *hist.entry(r.stats.gst_iterations_max).or_default() += 1;
    }
    put(
        "gst_iteration_histogram",
        hist.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(" "),
    );
    let worst = |f: fn(&crate::integrate::StepStats) -> f64| steps.iter().map(|r| f(&r.stats)).fold(0.0, f64::max);
    put("gst_iterations_max", steps.iter().map(|r| r.stats.gst_iterations_max).max().unwrap_or(0).to_string());
    put("gst_iterations_total", steps.iter().map(|r| r.stats.gst_iterations_total).sum::<usize>().to_string());
    put("max_momentum_drift", format!("{:e}", worst(|s| s.momentum_drift)));
    put("max_energy_drift", format!("{:e}", worst(|s| s.energy_drift)));
    put("max_mass_drift", format!("{:e}", worst(|s| s.mass_drift)));
    put("max_lambda", worst(|s| s.lambda_max).to_string());
    put("retried_steps", steps.iter().filter(|r| r.stats.retried).count().to_string());
    if let Some(tube) = &scenario.comparison {
        let last = trajectory.last_snapshot();
        let e = shock_tube_errors(&scenario.problem.species, &scenario.problem.space, &last.moments, tube, last.time);
        put("exact_valid", tube.valid_at(last.time).to_string());
        put("l1_density_error", e.density.to_string());
        put("l1_velocity_error", e.velocity.to_string());
        put("l1_temperature_error", e.temperature.to_string());
    }
    kv
}

pub fn summary_text(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Parses a document written by [`summary_text`].
pub fn parse_summary(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub profiles: PathBuf,
    pub steps: PathBuf,
    pub summary: PathBuf,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes profiles, per-step diagnostics and the summary into `dir`.
pub fn emit_outputs(scenario: &Scenario, trajectory: &Trajectory, dir: &Path) -> Result<OutputPaths> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let paths = OutputPaths {
        profiles: dir.join("profiles.csv"),
        steps: dir.join("steps.csv"),
        summary: dir.join("summary.txt"),
    };
    let p = &scenario.problem;
    write(&paths.profiles, &profiles_csv(&p.species, &p.space, &trajectory.snapshots, scenario.comparison.as_ref()))?;
    write(&paths.steps, &steps_csv(trajectory))?;
    write(&paths.summary, &summary_text(&summary(scenario, trajectory)))?;
    Ok(paths)
}
