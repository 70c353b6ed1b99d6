//! Time integration of the Chu-reduced system.
//!
//! The IMEX integrator streams explicitly and relaxes implicitly: every
//! implicit stage solves the backward-Euler moment system cell by cell with
//! the GST iteration, builds the relaxation targets from the solved moments
//! and finishes with a pointwise linear solve for the distributions. The
//! explicit integrator applies a Runge-Kutta tableau to transport and
//! collisions together and is limited by the collision frequency.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::exec::{map_indices, Execution};
use crate::gst::{contraction_budget, select_time_step, solve_moments, GstConfig, GstReport};
use crate::kinetic::{cell_moments, check_shape, chu_targets, collision_cell, moments_from_chu, relax_cell, ChuState, VelocityGrid};
use crate::mixture::{interaction_matrices, MomentState, SpeciesSet};
use crate::transport::{advect, SpatialGrid};

/// Diagonally implicit / explicit Runge-Kutta pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ImexTableau {
    pub a: Vec<Vec<f64>>,
    pub a_tilde: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub b_tilde: Vec<f64>,
}

impl ImexTableau {
    /// The second-order, two-implicit-stage, L-stable pair of Ascher, Ruuth
    /// and Spiteri (three stages counting the explicit first one).
    pub fn ars222() -> Self {
        let g = 1.0 - 1.0 / 2f64.sqrt();
        let d = 1.0 - 1.0 / (2.0 * g);
        Self {
            a: vec![vec![0.0, 0.0, 0.0], vec![0.0, g, 0.0], vec![0.0, 1.0 - g, g]],
            a_tilde: vec![vec![0.0, 0.0, 0.0], vec![g, 0.0, 0.0], vec![d, 1.0 - d, 0.0]],
            b: vec![0.0, 1.0 - g, g],
            b_tilde: vec![d, 1.0 - d, 0.0],
        }
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    /// Shape, triangularity, consistency and second-order conditions.
    pub fn check(&self) -> Result<()> {
        let s = self.stages();
        let square = |m: &Vec<Vec<f64>>| m.len() == s && m.iter().all(|r| r.len() == s);
        if !square(&self.a) || !square(&self.a_tilde) || self.b_tilde.len() != s {
            return Err(Error::Contract("tableau arrays disagree on the stage count".into()));
        }
        let tol = 1e-14;
        for i in 0..s {
            for j in i + 1..s {
                if self.a[i][j] != 0.0 {
                    return Err(Error::Contract("implicit tableau is not lower triangular".into()));
                }
            }
            for j in i..s {
                if self.a_tilde[i][j] != 0.0 {
                    return Err(Error::Contract("explicit tableau is not strictly lower triangular".into()));
                }
            }
            if self.a[i][i] < 0.0 {
                return Err(Error::Contract("negative implicit diagonal".into()));
            }
        }
        let c: Vec<f64> = self.a.iter().map(|r| r.iter().sum()).collect();
        let ct: Vec<f64> = self.a_tilde.iter().map(|r| r.iter().sum()).collect();
        if c.iter().zip(&ct).any(|(x, y)| (x - y).abs() > tol) {
            return Err(Error::Contract("implicit and explicit abscissae differ".into()));
        }
        let dot = |w: &[f64], v: &[f64]| w.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let ones = vec![1.0; s];
        for (w, name) in [(&self.b, "implicit"), (&self.b_tilde, "explicit")] {
            if (dot(w, &ones) - 1.0).abs() > tol {
                return Err(Error::Contract(format!("{name} weights do not sum to one")));
            }
            if (dot(w, &c) - 0.5).abs() > tol {
                return Err(Error::Contract(format!("{name} weights fail the second-order condition")));
            }
        }
        Ok(())
    }

    /// Final weights equal the last stage rows, so the solution is the last stage.
    pub fn is_stiffly_accurate(&self) -> bool {
        let s = self.stages();
        self.a[s - 1] == self.b && self.a_tilde[s - 1] == self.b_tilde
    }

    /// The explicit half as a stand-alone tableau.
    pub fn explicit_part(&self) -> ExplicitTableau {
        ExplicitTableau {
            a: self.a_tilde.clone(),
            b: self.b_tilde.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitTableau {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl ExplicitTableau {
    /// Two-stage strong-stability-preserving second-order method.
    pub fn ssp_rk2() -> Self {
        Self {
            a: vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            b: vec![0.5, 0.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Imex,
    Explicit,
}

/// Everything a step needs besides the state.
#[derive(Debug, Clone)]
pub struct Problem {
    pub species: SpeciesSet,
    pub space: SpatialGrid,
    pub velocity: VelocityGrid,
    pub eps: f64,
    pub gst: GstConfig,
    pub control: StepControl,
    pub exec: Execution,
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Contract(format!("epsilon {} must be positive", self.eps)));
        }
        self.gst.validate()?;
        self.space.check_velocity_grid(&self.velocity)
    }
}

/// Hyperbolic and stiff step limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub safety: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { safety: 0.9 }
    }
}

impl StepControl {
    /// `dx / (2 max|v|)`.
    pub fn dt_imex(&self, space: &SpatialGrid, velocity: &VelocityGrid) -> f64 {
        space.dx() / (2.0 * velocity.extent())
    }

    /// `eps dx / (2 eps max|v| + dx Lambda)`.
    pub fn dt_explicit(&self, space: &SpatialGrid, velocity: &VelocityGrid, eps: f64, lambda_max: f64) -> f64 {
        eps * space.dx() / (2.0 * eps * velocity.extent() + space.dx() * lambda_max)
    }
}

/// `max_i max_cell sum_j lambda_ij`.
pub fn max_total_frequency(species: &SpeciesSet, moments: &[MomentState]) -> Result<f64> {
    let mut best: f64 = 0.0;
    for (c, m) in moments.iter().enumerate() {
        let coeffs = interaction_matrices(species, m).map_err(|e| e.in_cell(c))?;
        for i in 0..m.len() {
            best = best.max(coeffs.lambda.row(i).sum());
        }
    }
    Ok(best)
}

/// Diagnostics of one accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub dt: f64,
    /// Largest GST iteration count over cells and stages.
    pub gst_iterations_max: usize,
    pub gst_iterations_total: usize,
    /// Largest conservation drift of any GST iterate in any cell and stage.
    pub momentum_drift: f64,
    pub energy_drift: f64,
    /// Largest relative change of a species' total particle count.
    pub mass_drift: f64,
    pub lambda_max: f64,
    pub retried: bool,
}

impl StepStats {
    fn absorb(&mut self, r: &GstReport) {
        self.gst_iterations_max = self.gst_iterations_max.max(r.iterations);
        self.gst_iterations_total += r.iterations;
        self.momentum_drift = self.momentum_drift.max(r.momentum_drift);
        self.energy_drift = self.energy_drift.max(r.energy_drift);
    }
}

struct CellSolve {
    g: Vec<f64>,
    h: Vec<f64>,
    report: GstReport,
    start: MomentState,
}

enum StageOutcome {
    Done(ChuState, Vec<GstReport>),
    Stalled(Vec<(usize, MomentState)>),
}

/// One implicit stage: `f = f* + dt_eff Q(f)`.
fn implicit_stage(problem: &Problem, star: &ChuState, dt_eff: f64) -> Result<StageOutcome> {
    let sp = &problem.species;
    let len = star.cell_len();
    let tau = dt_eff / problem.eps;
    let solves = map_indices(problem.exec, star.cells(), |c| -> Result<CellSolve> {
        let r = c * len..(c + 1) * len;
        let (gs, hs) = (&star.g[r.clone()], &star.h[r]);
        let start = cell_moments(sp, gs, hs, &problem.velocity)?;
        let (solved, report) = solve_moments(sp, &start, dt_eff, problem.eps, &problem.gst)?;
        let mut g = vec![0.0; len];
        let mut h = vec![0.0; len];
        if report.converged {
            let coeffs = interaction_matrices(sp, &solved)?;
            let targets = chu_targets(sp, &solved, &coeffs, &problem.velocity)?;
            relax_cell(gs, hs, &targets, &coeffs.lambda, tau, &mut g, &mut h);
        }
        Ok(CellSolve { g, h, report, start })
    });
    let mut out = ChuState::zeros(star.cells(), star.species(), star.nv());
    let mut reports = Vec::with_capacity(star.cells());
    let mut stalled = Vec::new();
    for (c, s) in solves.into_iter().enumerate() {
        let s = s.map_err(|e| e.in_cell(c))?;
        if !s.report.converged {
            stalled.push((c, s.start));
            continue;
        }
        out.g[c * len..(c + 1) * len].copy_from_slice(&s.g);
        out.h[c * len..(c + 1) * len].copy_from_slice(&s.h);
        reports.push(s.report);
    }
    if stalled.is_empty() {
        Ok(StageOutcome::Done(out, reports))
    } else {
        Ok(StageOutcome::Stalled(stalled))
    }
}

/// Explicit collision term of every cell at `state`; also returns the
/// largest total frequency.
fn collision_term(problem: &Problem, state: &ChuState) -> Result<(ChuState, f64)> {
    let sp = &problem.species;
    let len = state.cell_len();
    let parts = map_indices(problem.exec, state.cells(), |c| -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let r = c * len..(c + 1) * len;
        let (g, h) = (&state.g[r.clone()], &state.h[r]);
        let m = cell_moments(sp, g, h, &problem.velocity)?;
        let coeffs = interaction_matrices(sp, &m)?;
        let targets = chu_targets(sp, &m, &coeffs, &problem.velocity)?;
        let mut qg = vec![0.0; len];
        let mut qh = vec![0.0; len];
        collision_cell(g, h, &targets, &coeffs.lambda, problem.eps, &mut qg, &mut qh);
        let lam = (0..m.len()).map(|i| coeffs.lambda.row(i).sum()).fold(0.0, f64::max);
        Ok((qg, qh, lam))
    });
    let mut out = ChuState::zeros(state.cells(), state.species(), state.nv());
    let mut lam: f64 = 0.0;
    for (c, p) in parts.into_iter().enumerate() {
        let (qg, qh, l) = p.map_err(|e| e.in_cell(c))?;
        out.g[c * len..(c + 1) * len].copy_from_slice(&qg);
        out.h[c * len..(c + 1) * len].copy_from_slice(&qh);
        lam = lam.max(l);
    }
    Ok((out, lam))
}

fn mass_drift(before: &[f64], after: &[f64]) -> f64 {
    before
        .iter()
        .zip(after)
        .map(|(b, a)| ((a - b) / b).abs())
        .fold(0.0, f64::max)
}

enum Attempt {
    Done(ChuState, StepStats),
    Stalled { stage: usize, dt_eff: f64, cells: Vec<(usize, MomentState)> },
}

fn imex_attempt(problem: &Problem, state: &ChuState, dt: f64, tableau: &ImexTableau) -> Result<Attempt> {
    let s = tableau.stages();
    let mut stages: Vec<ChuState> = Vec::with_capacity(s);
    let mut transport: Vec<Option<ChuState>> = Vec::with_capacity(s);
    let mut collide: Vec<Option<ChuState>> = Vec::with_capacity(s);
    let mut stats = StepStats { dt, ..Default::default() };
    let used_later = |col: usize, m: &Vec<Vec<f64>>, w: &[f64]| w[col] != 0.0 || (col + 1..s).any(|q| m[q][col] != 0.0);

    for k in 0..s {
        let mut star = state.clone();
        for r in 0..k {
            if tableau.a_tilde[k][r] != 0.0 {
                star.axpy(dt * tableau.a_tilde[k][r], transport[r].as_ref().expect("transport evaluated"));
            }
            if tableau.a[k][r] != 0.0 {
                star.axpy(dt * tableau.a[k][r], collide[r].as_ref().expect("collision evaluated"));
            }
        }
        let akk = tableau.a[k][k];
        let (stage, q) = if akk > 0.0 {
            let dt_eff = akk * dt;
            match implicit_stage(problem, &star, dt_eff)? {
                StageOutcome::Done(f, reports) => {
                    reports.iter().for_each(|r| stats.absorb(r));
                    let q = if used_later(k, &tableau.a, &tableau.b) {
                        let mut q = f.clone();
                        q.axpy(-1.0, &star);
                        q.scale(1.0 / dt_eff);
                        Some(q)
                    } else {
                        None
                    };
                    (f, q)
                }
                StageOutcome::Stalled(cells) => return Ok(Attempt::Stalled { stage: k, dt_eff, cells }),
            }
        } else {
            let q = if used_later(k, &tableau.a, &tableau.b) {
                Some(collision_term(problem, &star)?.0)
            } else {
                None
            };
            (star, q)
        };
        let t = if used_later(k, &tableau.a_tilde, &tableau.b_tilde) {
            Some(advect(&stage, &problem.space, &problem.velocity, problem.exec)?)
        } else {
            None
        };
        stages.push(stage);
        transport.push(t);
        collide.push(q);
    }

    let next = if tableau.is_stiffly_accurate() {
        stages.pop().expect("at least one stage")
    } else {
        let mut next = state.clone();
        for r in 0..s {
            if let Some(t) = &transport[r] {
                next.axpy(dt * tableau.b_tilde[r], t);
            }
            if let Some(q) = &collide[r] {
                next.axpy(dt * tableau.b[r], q);
            }
        }
        next
    };
    Ok(Attempt::Done(next, stats))
}

/// One IMEX step of size `dt`.
///
/// If the GST iteration stalls in any cell, the step is repeated once with
/// the certified step from the contraction budget of the stalled cells; a
/// second stall is an error. The returned stats carry the step actually
/// taken.
pub fn imex_step(problem: &Problem, state: &ChuState, dt: f64, tableau: &ImexTableau) -> Result<(ChuState, StepStats)> {
    check_step_inputs(problem, state, dt)?;
    let before = state.species_mass(&problem.velocity);
    let (next, mut stats) = match imex_attempt(problem, state, dt, tableau)? {
        Attempt::Done(n, s) => (n, s),
        Attempt::Stalled { stage, dt_eff, cells } => {
            let akk = tableau.a[stage][stage];
            let mut dt_eff_new = dt_eff;
            for (c, m) in &cells {
                let budget = contraction_budget(&problem.species, m, dt_eff, problem.eps).map_err(|e| e.in_cell(*c))?;
                let choice = select_time_step(&budget, dt_eff, problem.gst.r)?;
                dt_eff_new = dt_eff_new.min(choice.dt);
            }
            let first = cells[0].0;
            let stalled = || Error::NonConvergence {
                cell: first,
                detail: format!("{} cell(s) stalled in stage {stage} at dt = {dt:e}", cells.len()),
            };
            if dt_eff_new >= dt_eff {
                return Err(stalled());
            }
            let dt_new = dt_eff_new / akk;
            match imex_attempt(problem, state, dt_new, tableau)? {
                Attempt::Done(n, mut s) => {
                    s.retried = true;
                    (n, s)
                }
                Attempt::Stalled { cells, stage, .. } => {
                    return Err(Error::NonConvergence {
                        cell: cells[0].0,
                        detail: format!("{} cell(s) stalled in stage {stage} after retry at dt = {dt_new:e}", cells.len()),
                    })
                }
            }
        }
    };
    stats.mass_drift = mass_drift(&before, &next.species_mass(&problem.velocity));
    Ok((next, stats))
}

fn check_step_inputs(problem: &Problem, state: &ChuState, dt: f64) -> Result<()> {
    check_shape(&problem.species, state, &problem.velocity)?;
    if state.cells() != problem.space.cells() {
        return Err(Error::Contract("state and spatial grid disagree on the cell count".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Contract(format!("time step {dt} must be positive")));
    }
    Ok(())
}

/// One explicit Runge-Kutta step of transport plus collisions.
pub fn explicit_step(problem: &Problem, state: &ChuState, dt: f64, tableau: &ExplicitTableau) -> Result<(ChuState, StepStats)> {
    check_step_inputs(problem, state, dt)?;
    let before = state.species_mass(&problem.velocity);
    let s = tableau.b.len();
    let mut rates: Vec<ChuState> = Vec::with_capacity(s);
    let mut lambda_max: f64 = 0.0;
    for k in 0..s {
        let mut stage = state.clone();
        for (r, rate) in rates.iter().enumerate() {
            if tableau.a[k][r] != 0.0 {
                stage.axpy(dt * tableau.a[k][r], rate);
            }
        }
        let (mut rate, lam) = collision_term(problem, &stage)?;
        if k == 0 {
            lambda_max = lam;
        }
        rate.axpy(1.0, &advect(&stage, &problem.space, &problem.velocity, problem.exec)?);
        rates.push(rate);
    }
    let mut next = state.clone();
    for (r, rate) in rates.iter().enumerate() {
        next.axpy(dt * tableau.b[r], rate);
    }
    let stats = StepStats {
        dt,
        lambda_max,
        mass_drift: mass_drift(&before, &next.species_mass(&problem.velocity)),
        ..Default::default()
    };
    Ok((next, stats))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub index: usize,
    /// Time after the step.
    pub time: f64,
    pub stats: StepStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub moments: Vec<MomentState>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub integrator: Integrator,
    pub snapshots: Vec<Snapshot>,
    pub steps: Vec<StepRecord>,
    pub final_state: ChuState,
    pub wall_seconds: f64,
}

impl Trajectory {
    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    pub fn final_time(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.time)
    }

    pub fn last_snapshot(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory keeps the initial snapshot")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub integrator: Integrator,
    pub t_final: f64,
    /// Record moments every this many steps; 0 keeps only the initial and
    /// final states.
    pub snapshot_every: usize,
}

/// Advances `initial` to `t_final`.
///
/// IMEX uses the fixed step `safety * dt_imex`; the explicit integrator
/// recomputes `safety * dt_explicit` from the current frequencies before
/// every step. The last step is shortened to land on `t_final`.
pub fn run(problem: &Problem, initial: ChuState, opts: &RunOptions) -> Result<Trajectory> {
    problem.validate()?;
    if !(opts.t_final >= 0.0 && opts.t_final.is_finite()) {
        return Err(Error::Contract(format!("final time {} must be non-negative", opts.t_final)));
    }
    check_shape(&problem.species, &initial, &problem.velocity)?;
    let clock = Instant::now();
    let imex = ImexTableau::ars222();
    imex.check()?;
    let ssp = ExplicitTableau::ssp_rk2();
    let sp = &problem.species;
    let vg = &problem.velocity;
    let snap = |step: usize, time: f64, st: &ChuState| -> Result<Snapshot> {
        Ok(Snapshot {
            step,
            time,
            moments: moments_from_chu(sp, st, vg)?,
        })
    };

    let mut state = initial;
    let mut snapshots = vec![snap(0, 0.0, &state)?];
    let mut steps = Vec::new();
    let mut time = 0.0;
    let dt_fixed = problem.control.safety * problem.control.dt_imex(&problem.space, vg);
    let end_tol = 1e-12 * opts.t_final.max(f64::MIN_POSITIVE);
    while opts.t_final - time > end_tol {
        let remaining = opts.t_final - time;
        let (next, stats) = match opts.integrator {
            Integrator::Imex => {
                let lam = max_total_frequency(sp, &moments_from_chu(sp, &state, vg)?)?;
                let (n, mut s) = imex_step(problem, &state, dt_fixed.min(remaining), &imex)?;
                s.lambda_max = lam;
                (n, s)
            }
            Integrator::Explicit => {
                let lam = max_total_frequency(sp, &moments_from_chu(sp, &state, vg)?)?;
                let dt = problem.control.safety * problem.control.dt_explicit(&problem.space, vg, problem.eps, lam);
                explicit_step(problem, &state, dt.min(remaining), &ssp)?
            }
        };
        if !next.is_finite() {
            return Err(Error::Invariant(format!("non-finite distribution after step {}", steps.len() + 1)));
        }
        time = if stats.dt == remaining { opts.t_final } else { time + stats.dt };
        state = next;
        let index = steps.len() + 1;
        steps.push(StepRecord { index, time, stats });
        if opts.snapshot_every > 0 && index % opts.snapshot_every == 0 && opts.t_final - time > end_tol {
            snapshots.push(snap(index, time, &state)?);
        }
    }
    let last = steps.len();
    if last > 0 {
        snapshots.push(snap(last, time, &state)?);
    }
    Ok(Trajectory {
        integrator: opts.integrator,
        snapshots,
        steps,
        final_state: state,
        wall_seconds: clock.elapsed().as_secs_f64(),
    })
}

/// Frequency matrix per cell at the current state.
pub fn frequencies(species: &SpeciesSet, moments: &[MomentState]) -> Result<Vec<DMatrix<f64>>> {
    moments
        .iter()
        .enumerate()
        .map(|(c, m)| interaction_matrices(species, m).map(|k| k.lambda).map_err(|e| e.in_cell(c)))
        .collect()
}
