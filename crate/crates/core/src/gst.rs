//! Backward-Euler moment solve by Gauss-Seidel-type fixed-point iteration.
//!
//! Each sweep lags the temperature-dependent coefficients at the previous
//! iterate, solves the symmetric velocity system, then solves the
//! temperature system with sources built from the freshly updated
//! velocities. Both solves work in the weighted unknowns
//! `W = P^{1/2} U` and `eta = Q^{1/2} T` where the system matrices are
//! symmetric positive definite.
//!
//! The module also evaluates the computable contraction budget that bounds
//! successive Cauchy differences and turns it into a time-step restriction
//! that does not depend on the stiffness parameter.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::mixture::{interaction_matrices, PairwiseCoefficients, SpeciesSet, MomentState};

/// Iteration settings.
///
/// `tol` is relative: a sweep stops once
/// `||dW||_F + ||d eta||_2 <= tol * (1 + ||W^n||_F + ||eta^n||_2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GstConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Target contraction ratio used by time-step selection.
    pub r: f64,
    /// Fail with an invariant error if an iterate drops below the floor.
    pub floor_enforce: bool,
}

impl Default for GstConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100,
            r: 0.9,
            floor_enforce: true,
        }
    }
}

impl GstConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Contract(format!("tol = {} must be positive", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Contract("max_iter must be at least 1".into()));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::Contract(format!("r = {} must lie in (0, 1)", self.r)));
        }
        Ok(())
    }
}

/// Bound and conservation checks on one iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateAudit {
    /// `|sum rho u^{l+1} - sum rho u^n| / sum rho |u^n|` (absolute when the
    /// denominator vanishes).
    pub momentum_drift: f64,
    /// `|sum E^{l+1} - sum E^n| / sum E^n`.
    pub energy_drift: f64,
    /// `min_i T_i^{l+1} / T_min^n - 1`; negative means below the floor.
    pub temperature_margin: f64,
    /// Largest distance of a velocity component outside the componentwise
    /// box of the initial velocities, relative to the box scale.
    pub velocity_excursion: f64,
    /// Smallest combined temperature source, relative to the magnitude of
    /// its terms; negative means a net cooling source.
    pub source_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GstReport {
    pub iterations: usize,
    /// `||dW||_F + ||d eta||_2` per sweep.
    pub cauchy_norms: Vec<f64>,
    /// Cauchy differences in the norm of the convergence theorem:
    /// velocity part plus range and null parts of `eta` taken separately.
    pub theorem_norms: Vec<f64>,
    pub threshold: f64,
    pub final_norm: f64,
    pub converged: bool,
    pub momentum_drift: f64,
    pub energy_drift: f64,
    pub audits: Vec<IterateAudit>,
}

impl GstReport {
    fn trivial() -> Self {
        Self {
            iterations: 1,
            cauchy_norms: vec![0.0],
            theorem_norms: vec![0.0],
            threshold: 0.0,
            final_norm: 0.0,
            converged: true,
            momentum_drift: 0.0,
            energy_drift: 0.0,
            audits: Vec::new(),
        }
    }

    /// Ratios of consecutive theorem-norm differences, skipping pairs whose
    /// denominator lies below `floor` (round-off noise).
    pub fn contraction_ratios(&self, floor: f64) -> Vec<f64> {
        self.theorem_norms
            .windows(2)
            .filter(|w| w[0] > floor)
            .map(|w| w[1] / w[0])
            .collect()
    }
}

/// Quantities of the `n`-level state reused by every sweep.
struct Level {
    rho: DVector<f64>,
    sqrt_rho: DVector<f64>,
    sqrt_n: DVector<f64>,
    w: DMatrix<f64>,
    eta: DVector<f64>,
    s_w: DVector<f64>,
    momentum: DVector<f64>,
    energy: f64,
    dim: f64,
}

impl Level {
    fn new(species: &SpeciesSet, state: &MomentState) -> Self {
        let rho = state.mass_densities(species);
        let sqrt_rho = rho.map(f64::sqrt);
        let sqrt_n = state.density().map(f64::sqrt);
        let w = scale_rows(state.velocity(), &sqrt_rho);
        let eta = state.temperature().component_mul(&sqrt_n);
        let s_w = DVector::from_fn(state.len(), |i, _| w.row(i).norm_squared());
        Self {
            momentum: state.total_momentum(species),
            energy: state.total_energy(species),
            dim: state.dim() as f64,
            rho,
            sqrt_rho,
            sqrt_n,
            w,
            eta,
            s_w,
        }
    }
}

fn scale_rows(m: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, k| m[(i, k)] * s[i])
}

fn unscale_rows(m: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, k| m[(i, k)] / s[i])
}

fn check_pair(state_next: &MomentState, state_n: &MomentState) -> Result<()> {
    if state_next.len() != state_n.len() || state_next.dim() != state_n.dim() {
        return Err(Error::Contract("states differ in species count or dimension".into()));
    }
    if state_next.density() != state_n.density() {
        return Err(Error::Contract(
            "backward-Euler states must share number densities".into(),
        ));
    }
    Ok(())
}

fn check_step(dt: f64, eps: f64) -> Result<()> {
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::Contract(format!("time step {dt} must be non-negative")));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Contract(format!("epsilon {eps} must be positive")));
    }
    Ok(())
}

/// `s2_i = sum_j B_ij [m_j (s_j - S_ij) - m_i (s_i - S_ij)]`.
fn energy_exchange(species: &SpeciesSet, b: &DMatrix<f64>, s: &DVector<f64>, mix_s: &DMatrix<f64>) -> DVector<f64> {
    let n = s.len();
    DVector::from_fn(n, |i, _| {
        (0..n)
            .map(|j| b[(i, j)] * (species.mass(j) * (s[j] - mix_s[(i, j)]) - species.mass(i) * (s[i] - mix_s[(i, j)])))
            .sum()
    })
}

/// `|u_ij|^2` for velocities `u` mixed with weights `alpha`.
fn mixed_speed_sq(alpha: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    let n = u.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        (0..u.ncols())
            .map(|k| (alpha[(i, j)] * u[(i, k)] + alpha[(j, i)] * u[(j, k)]).powi(2))
            .sum()
    })
}

/// Residual of the backward-Euler moment system at `state_next`.
///
/// Layout: `N*d` velocity rows (species-major) then `N` temperature rows.
/// The equations are multiplied through by `dt` and divided by
/// `1 + dt/eps`, so stiff and non-stiff steps give residuals of comparable
/// size.
pub fn be_residual(
    species: &SpeciesSet,
    state_next: &MomentState,
    state_n: &MomentState,
    dt: f64,
    eps: f64,
) -> Result<DVector<f64>> {
    check_pair(state_next, state_n)?;
    check_step(dt, eps)?;
    let c = interaction_matrices(species, state_next)?;
    let n = state_n.len();
    let dim = state_n.dim();
    let rho = state_n.mass_densities(species);
    let k = dt / eps;
    let norm = 1.0 + k;
    let u = state_next.velocity();
    let u0 = state_n.velocity();
    let t = state_next.temperature();
    let t0 = state_n.temperature();
    let mut out = DVector::zeros(n * (dim + 1));
    for i in 0..n {
        for q in 0..dim {
            let exchange: f64 = (0..n).map(|j| c.a[(i, j)] * (u[(j, q)] - u[(i, q)])).sum();
            out[i * dim + q] = (rho[i] * (u[(i, q)] - u0[(i, q)]) - k * exchange) / norm;
        }
    }
    let s = DVector::from_fn(n, |i, _| state_next.speed_sq(i));
    let s2 = energy_exchange(species, &c.b, &s, &c.s);
    for i in 0..n {
        let heat: f64 = (0..n).map(|j| c.b[(i, j)] * (t[j] - t[i])).sum();
        let lhs = rho[i] * (s[i] - state_n.speed_sq(i)) + dim as f64 * state_n.density()[i] * (t[i] - t0[i]);
        out[n * dim + i] = (lhs - k * (dim as f64 * heat + s2[i])) / norm;
    }
    Ok(out)
}

fn factor(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::LinearSolve(format!("{what} system is not positive definite")))
}

/// Shifts each column of `x` along the unit vector `v0` so that its
/// component along `v0` equals `target[k]`.
fn restore_null_columns(x: &mut DMatrix<f64>, v0: &DVector<f64>, target: &DVector<f64>) {
    for k in 0..x.ncols() {
        let shift = target[k] - x.column(k).dot(v0);
        x.column_mut(k).axpy(shift, v0, 1.0);
    }
}

fn restore_null(x: &mut DVector<f64>, v0: &DVector<f64>, target: f64) {
    let shift = target - x.dot(v0);
    x.axpy(shift, v0, 1.0);
}

/// Velocity half of a sweep: solves `(I + dt/eps Z) W = W^n` and returns
/// `U = P^{-1/2} W`.
///
/// The component of `W` along the null vector `P^{1/2} 1` is fixed by
/// momentum conservation and is reset to its exact value after the solve.
pub fn gst_velocity_step(
    species: &SpeciesSet,
    state_n: &MomentState,
    coeffs: &PairwiseCoefficients,
    dt: f64,
    eps: f64,
) -> Result<DMatrix<f64>> {
    check_step(dt, eps)?;
    velocity_step(&Level::new(species, state_n), coeffs, dt / eps)
}

fn velocity_step(level: &Level, coeffs: &PairwiseCoefficients, k: f64) -> Result<DMatrix<f64>> {
    let n = level.rho.len();
    let m = DMatrix::identity(n, n) + coeffs.z_matrix(&level.rho) * k;
    let mut w = factor(m, "velocity")?.solve(&level.w);
    let v0 = level.sqrt_rho.normalize();
    let target = level.w.tr_mul(&v0);
    restore_null_columns(&mut w, &v0, &target);
    Ok(unscale_rows(&w, &level.sqrt_rho))
}

/// Temperature half of a sweep, given the updated velocities `u_next`.
///
/// Fails with an invariant error under `floor_enforce` when the result
/// drops below `min_j T_j^n`.
pub fn gst_temperature_step(
    species: &SpeciesSet,
    state_n: &MomentState,
    coeffs: &PairwiseCoefficients,
    u_next: &DMatrix<f64>,
    dt: f64,
    eps: f64,
    floor_enforce: bool,
) -> Result<DVector<f64>> {
    check_step(dt, eps)?;
    if u_next.shape() != state_n.velocity().shape() {
        return Err(Error::Contract("velocity iterate has the wrong shape".into()));
    }
    let level = Level::new(species, state_n);
    let t = temperature_step(species, &level, coeffs, u_next, dt / eps)?;
    if floor_enforce {
        check_floor(&t, state_n.temperature_min())?;
    }
    Ok(t)
}

fn check_floor(t: &DVector<f64>, floor: f64) -> Result<()> {
    let low = t.min();
    if low < floor * (1.0 - 1e-12) {
        return Err(Error::Invariant(format!(
            "temperature iterate {low:e} fell below the floor {floor:e}"
        )));
    }
    Ok(())
}

fn temperature_step(
    species: &SpeciesSet,
    level: &Level,
    coeffs: &PairwiseCoefficients,
    u_next: &DMatrix<f64>,
    k: f64,
) -> Result<DVector<f64>> {
    let n = level.rho.len();
    let d = level.dim;
    let s_next = DVector::from_fn(n, |i, _| u_next.row(i).norm_squared());
    let s_w_next = s_next.component_mul(&level.rho);
    let s1 = &level.s_w - &s_w_next;
    let mix_s = mixed_speed_sq(&coeffs.alpha, u_next);
    let s2 = energy_exchange(species, &coeffs.b, &s_next, &mix_s);
    let rhs = DVector::from_fn(n, |i, _| level.eta[i] + (s1[i] + k * s2[i]) / (d * level.sqrt_n[i]));
    let m = DMatrix::identity(n, n) + coeffs.z_hat_matrix(&level.sqrt_n.map(|x| x * x)) * k;
    let mut eta = factor(m, "temperature")?.solve(&rhs);
    let b = level.sqrt_n.norm().recip();
    let v0 = &level.sqrt_n * b;
    let target = level.eta.dot(&v0) + b / d * s1.sum();
    restore_null(&mut eta, &v0, target);
    Ok(eta.component_div(&level.sqrt_n))
}

fn audit(
    species: &SpeciesSet,
    state_n: &MomentState,
    level: &Level,
    coeffs: &PairwiseCoefficients,
    u: &DMatrix<f64>,
    t: &DVector<f64>,
    k: f64,
) -> IterateAudit {
    let n = state_n.len();
    let d = level.dim;
    let u0 = state_n.velocity();
    let momentum = u.tr_mul(&level.rho);
    let mom_scale: f64 = (0..n).map(|i| level.rho[i] * u0.row(i).norm()).sum();
    let mom_err = (momentum - &level.momentum).norm();
    let momentum_drift = if mom_scale > 0.0 { mom_err / mom_scale } else { mom_err };
    let energy: f64 = (0..n)
        .map(|i| 0.5 * level.rho[i] * u.row(i).norm_squared() + 0.5 * d * state_n.density()[i] * t[i])
        .sum();
    let energy_drift = (energy - level.energy).abs() / level.energy;
    let floor = state_n.temperature_min();
    let temperature_margin = t.min() / floor - 1.0;

    let mut velocity_excursion: f64 = 0.0;
    for q in 0..u0.ncols() {
        let col = u0.column(q);
        let (lo, hi) = (col.min(), col.max());
        let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
        for i in 0..n {
            let v = u[(i, q)];
            velocity_excursion = velocity_excursion.max((lo - v).max(v - hi) / scale);
        }
    }

    let s = DVector::from_fn(n, |i, _| u.row(i).norm_squared());
    let mix_s = mixed_speed_sq(&coeffs.alpha, u);
    let mut source_min = f64::INFINITY;
    for i in 0..n {
        let mi = species.mass(i);
        let kinetic = mi / d * (state_n.speed_sq(i) - s[i]);
        let mut exchange = 0.0;
        let mut magnitude = mi / d * (state_n.speed_sq(i) + s[i]);
        for j in 0..n {
            let mj = species.mass(j);
            let w = k / d * coeffs.b[(i, j)] / state_n.density()[i];
            exchange += w * (mj * (s[j] - mix_s[(i, j)]) - mi * (s[i] - mix_s[(i, j)]));
            magnitude += w * (mj * (s[j] + mix_s[(i, j)]) + mi * (s[i] + mix_s[(i, j)]));
        }
        let total = kinetic + exchange;
        let rel = if magnitude > 0.0 { total / magnitude } else { 0.0 };
        source_min = source_min.min(rel);
    }

    IterateAudit {
        momentum_drift,
        energy_drift,
        temperature_margin,
        velocity_excursion,
        source_min,
    }
}

/// Solves the backward-Euler moment system for one step of size `dt`.
///
/// Returns the new state and a report. Running out of iterations is not an
/// error: the report carries `converged = false` and the caller decides
/// whether to shrink the step.
pub fn solve_moments(
    species: &SpeciesSet,
    state_n: &MomentState,
    dt: f64,
    eps: f64,
    cfg: &GstConfig,
) -> Result<(MomentState, GstReport)> {
    cfg.validate()?;
    check_step(dt, eps)?;
    if species.len() != state_n.len() {
        return Err(Error::Contract(format!(
            "mixture has {} species but the state has {}",
            species.len(),
            state_n.len()
        )));
    }
    if state_n.len() == 1 {
        return Ok((state_n.clone(), GstReport::trivial()));
    }
    let level = Level::new(species, state_n);
    let k = dt / eps;
    let threshold = cfg.tol * (1.0 + level.w.norm() + level.eta.norm());
    let v0_hat = level.sqrt_n.normalize();
    let floor = state_n.temperature_min();

    let mut current = state_n.clone();
    let mut report = GstReport {
        iterations: 0,
        cauchy_norms: Vec::new(),
        theorem_norms: Vec::new(),
        threshold,
        final_norm: f64::INFINITY,
        converged: false,
        momentum_drift: 0.0,
        energy_drift: 0.0,
        audits: Vec::new(),
    };
    for _ in 0..cfg.max_iter {
        let coeffs = interaction_matrices(species, &current)?;
        let u = velocity_step(&level, &coeffs, k)?;
        let t = temperature_step(species, &level, &coeffs, &u, k)?;
        if cfg.floor_enforce {
            check_floor(&t, floor)?;
        }
        let a = audit(species, state_n, &level, &coeffs, &u, &t, k);
        let dw = scale_rows(&(&u - current.velocity()), &level.sqrt_rho).norm();
        let deta = (&t - current.temperature()).component_mul(&level.sqrt_n);
        let null = deta.dot(&v0_hat);
        let range = (&deta - &v0_hat * null).norm();
        let cauchy = dw + deta.norm();

        report.iterations += 1;
        report.cauchy_norms.push(cauchy);
        report.theorem_norms.push(dw + range + null.abs());
        report.momentum_drift = report.momentum_drift.max(a.momentum_drift);
        report.energy_drift = report.energy_drift.max(a.energy_drift);
        report.audits.push(a);
        report.final_norm = cauchy;
        current = current.with_velocity_temperature(u, t)?;
        if cauchy <= threshold {
            report.converged = true;
            break;
        }
    }
    Ok((current, report))
}

/// Every constant of the contraction estimate at one state and step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionBudget {
    pub dt: f64,
    pub eps: f64,
    pub z_min: f64,
    pub z_hat_min: f64,
    /// `min(z_min, z_hat_min)`.
    pub z: f64,
    pub gamma: f64,
    pub gamma_hat: f64,
    pub gamma_w: f64,
    pub gamma_eta: f64,
    pub gamma_x: f64,
    pub c_a: f64,
    pub c_b: f64,
    pub c_z: f64,
    pub c_z_hat: f64,
    pub c_w: f64,
    pub c_0: f64,
    pub c_s: f64,
    pub c_s2_0: f64,
    pub c_s2_1: f64,
    pub c_s2_2: f64,
    pub c_11: f64,
    pub c_21: f64,
    pub c_22: f64,
    pub c_31: f64,
    pub c_32: f64,
    pub c_33: f64,
    /// Sum of the eight constants at this `dt`.
    pub c_x: f64,
    /// Upper bound of `c_x` valid for every `dt`; drives step selection.
    pub c_x_uniform: f64,
    /// `||Q^{1/2} 1||^{-1}`.
    pub b: f64,
    pub w_norm: f64,
    pub u_max: f64,
    pub t_min: f64,
    pub alpha_max: f64,
}

impl ContractionBudget {
    /// `C_X Gamma_X`; below one certifies contraction.
    pub fn product(&self) -> f64 {
        self.c_x * self.gamma_x
    }

    /// `Q_r(dt) = r z^2 dt^2 + (2 r z - C) eps dt + r eps^2` with the
    /// step-uniform constant.
    pub fn q_r(&self, dt: f64, r: f64) -> f64 {
        q_r(self.z, self.c_x_uniform, self.eps, dt, r)
    }
}

pub fn q_r(z: f64, c_x: f64, eps: f64, dt: f64, r: f64) -> f64 {
    r * z * z * dt * dt + (2.0 * r * z - c_x) * eps * dt + r * eps * eps
}

/// Contraction constants for a step of size `dt` from `state_n`.
///
/// The spectral lower bounds are taken with every temperature at the floor
/// `T_min^n`, which bounds the coefficients of all later iterates from below.
pub fn contraction_budget(species: &SpeciesSet, state_n: &MomentState, dt: f64, eps: f64) -> Result<ContractionBudget> {
    check_step(dt, eps)?;
    let nsp = state_n.len();
    if nsp < 2 {
        return Err(Error::Domain("contraction budget needs at least two species".into()));
    }
    let t_min = state_n.temperature_min();
    if !(t_min > 0.0) {
        return Err(Error::Domain(format!("minimum temperature {t_min} must be positive")));
    }
    let coeffs = interaction_matrices(species, state_n)?;
    let floor_state = state_n.with_velocity_temperature(state_n.velocity().clone(), DVector::from_element(nsp, t_min))?;
    let floor = interaction_matrices(species, &floor_state)?;

    let nf = nsp as f64;
    let d = state_n.dim() as f64;
    let rho = state_n.mass_densities(species);
    let dens = state_n.density();
    let (rho_min, rho_max) = (rho.min(), rho.max());
    let (n_min, n_max) = (dens.min(), dens.max());
    let (m_min, m_max) = (species.mass_min(), species.mass_max());

    let z_min = floor.a.min() * nf / rho_max;
    let z_hat_min = floor.b.min() * nf / n_max;
    let z = z_min.min(z_hat_min);
    let gamma = eps / (eps + dt * z_min);
    let gamma_hat = eps / (eps + dt * z_hat_min);
    let gamma_w = dt * eps / (eps + dt * z_min).powi(2);
    let gamma_eta = dt * eps / (eps + dt * z_hat_min).powi(2);
    let gamma_x = dt * eps / (eps + dt * z).powi(2);

    let mut ca_max: f64 = 0.0;
    let mut cb_max: f64 = 0.0;
    for i in 0..nsp {
        for j in 0..nsp {
            ca_max = ca_max.max(species.c_a(i, j, state_n));
            cb_max = cb_max.max(species.c_b(i, j, state_n));
        }
    }
    let lip = m_max.sqrt() / (2.0 * 2f64.sqrt() * m_min * t_min.sqrt());
    let c_a = ca_max * lip;
    let c_b = cb_max * lip;
    let spread = 2.0 * (nf + nf.sqrt());
    let c_z = spread * c_a / (rho_min * n_min.sqrt());
    let c_z_hat = spread * c_b / n_min.powf(1.5);

    let sqrt_rho = rho.map(f64::sqrt);
    let sqrt_n = dens.map(f64::sqrt);
    let u = state_n.velocity();
    let w_norm = scale_rows(u, &sqrt_rho).norm();
    let u_max = DVector::from_fn(u.ncols(), |q, _| u.column(q).amax()).norm();
    let b = sqrt_n.norm().recip();
    let alpha_max = coeffs.alpha_max();
    let b_max = coeffs.b.max();
    let pn_norm = rho.norm();

    let c_w = c_z * w_norm;
    let c_0 = 2.0 * b / d * rho_max.sqrt() * u_max * nf.sqrt() * c_w;
    let c_s = 2.0 * rho_max.sqrt() * u_max * c_w;
    let c_s2_0 = 8.0 * alpha_max * b_max * u_max * m_max * nf.sqrt() * (nf - 1.0) * w_norm / rho_min.sqrt();
    let c_s2_1 = 6.0 * b_max * u_max * m_max * nf * (nf - 1.0) * c_w / rho_min.sqrt();
    let c_s2_2 = c_b * 16.0 * alpha_max * u_max * m_max * (nf - 1.0) * w_norm / rho_min.sqrt();

    let s_w = DVector::from_fn(nsp, |i, _| rho[i] * state_n.speed_sq(i));
    let eta = state_n.temperature().component_mul(&sqrt_n);
    let shifted = DVector::from_fn(nsp, |i, _| eta[i] + s_w[i] / (d * sqrt_n[i]));
    let dn = d * n_min.sqrt();
    let c_11 = shifted.norm() * c_z_hat;
    let c_21 = c_s / dn;
    let c_22 = u_max * u_max * pn_norm * c_z_hat / dn;
    let lag = (1.0 - gamma_hat) / z_hat_min;
    let c_31 = c_s2_1 / dn * lag;
    let c_32 = c_s2_2 / dn;
    let c_33 = c_s2_0 * c_z_hat / dn * lag;
    let c_x = c_w + c_0 + c_11 + c_21 + c_22 + c_31 + c_32 + c_33;
    let c_x_uniform = c_x - c_31 - c_33 + (c_s2_1 + c_s2_0 * c_z_hat) / (dn * z_hat_min);

    Ok(ContractionBudget {
        dt,
        eps,
        z_min,
        z_hat_min,
        z,
        gamma,
        gamma_hat,
        gamma_w,
        gamma_eta,
        gamma_x,
        c_a,
        c_b,
        c_z,
        c_z_hat,
        c_w,
        c_0,
        c_s,
        c_s2_0,
        c_s2_1,
        c_s2_2,
        c_11,
        c_21,
        c_22,
        c_31,
        c_32,
        c_33,
        c_x,
        c_x_uniform,
        b,
        w_norm,
        u_max,
        t_min,
        alpha_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeStepCase {
    /// `C_X <= 4 r z`: the quadratic never vanishes.
    ComplexRoots,
    /// Both roots negative: every positive step is admissible.
    NegativeRoots,
    /// The requested step fell between the roots and was cut to the lower one.
    Reduced,
    /// The requested step already lies outside the excluded window.
    Admissible,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeStepChoice {
    pub dt: f64,
    pub case: TimeStepCase,
    /// `(dt_-, dt_+)` when the roots are real.
    pub roots: Option<(f64, f64)>,
}

impl TimeStepChoice {
    /// `dt_- / dt_+`, the guaranteed lower bound on `dt / dt0`.
    pub fn root_ratio(&self) -> Option<f64> {
        self.roots.map(|(lo, hi)| lo / hi)
    }
}

/// Roots of `Q_r`, or `None` when they are complex.
pub fn q_r_roots(z: f64, c_x: f64, eps: f64, r: f64) -> Option<(f64, f64)> {
    let disc = 1.0 - 4.0 * r * z / c_x;
    if !(c_x > 0.0) || disc < 0.0 {
        return None;
    }
    let centre = c_x - 2.0 * r * z;
    let half = c_x * disc.sqrt();
    let denom = 2.0 * r * z * z;
    // Stable pair: compute the larger root directly and the smaller from the
    // product of roots eps^2 / z^2.
    let hi = eps * (centre + half) / denom;
    let lo = if hi > 0.0 { eps * eps / (z * z * hi) } else { eps * (centre - half) / denom };
    Some((lo, hi))
}

/// Chooses a step for which the contraction estimate is at most `r`.
pub fn select_time_step_with(z: f64, c_x: f64, eps: f64, dt0: f64, r: f64) -> Result<TimeStepChoice> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Contract(format!("r = {r} must lie in (0, 1)")));
    }
    if !(dt0 > 0.0) {
        return Err(Error::Contract(format!("dt0 = {dt0} must be positive")));
    }
    let Some((lo, hi)) = q_r_roots(z, c_x, eps, r) else {
        return Ok(TimeStepChoice {
            dt: dt0,
            case: TimeStepCase::ComplexRoots,
            roots: None,
        });
    };
    let case = if hi < 0.0 {
        TimeStepCase::NegativeRoots
    } else if lo < dt0 && dt0 < hi {
        TimeStepCase::Reduced
    } else {
        TimeStepCase::Admissible
    };
    let dt = if case == TimeStepCase::Reduced { lo } else { dt0 };
    Ok(TimeStepChoice {
        dt,
        case,
        roots: Some((lo, hi)),
    })
}

/// [`select_time_step_with`] driven by a budget's step-uniform constant.
pub fn select_time_step(budget: &ContractionBudget, dt0: f64, r: f64) -> Result<TimeStepChoice> {
    select_time_step_with(budget.z, budget.c_x_uniform, budget.eps, dt0, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::Species;

    fn two(m: [f64; 2]) -> SpeciesSet {
        SpeciesSet::new(vec![Species::new("a", m[0], 1.0), Species::new("b", m[1], 1.0)]).unwrap()
    }

    fn three() -> SpeciesSet {
        SpeciesSet::new(vec![
            Species::new("a", 1.0, 1.0),
            Species::new("b", 2.5, 0.8),
            Species::new("c", 4.0, 1.3),
        ])
        .unwrap()
    }

    fn sample3() -> MomentState {
        MomentState::from_slices(&[0.8, 1.3, 0.4], &[0.5, -0.2, 0.1], 1, &[1.2, 0.7, 2.0]).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(GstConfig::default().validate().is_ok());
        assert!(GstConfig { tol: 0.0, ..Default::default() }.validate().is_err());
        assert!(GstConfig { max_iter: 0, ..Default::default() }.validate().is_err());
        assert!(GstConfig { r: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn residual_vanishes_for_single_species() {
        let s = SpeciesSet::new(vec![Species::new("a", 2.0, 1.0)]).unwrap();
        let st = MomentState::from_slices(&[1.5], &[0.2, -0.1], 2, &[0.9]).unwrap();
        let r = be_residual(&s, &st, &st, 0.3, 0.01).unwrap();
        assert!(r.amax() == 0.0);
    }

    #[test]
    fn residual_vanishes_at_equilibrium() {
        let s = three();
        let st = MomentState::from_slices(&[0.8, 1.3, 0.4], &[0.3; 3], 1, &[1.1; 3]).unwrap();
        let r = be_residual(&s, &st, &st, 1.0, 1e-3).unwrap();
        assert!(r.amax() < 1e-15, "{}", r.amax());
    }

    #[test]
    fn residual_rejects_density_change() {
        let s = two([1.0, 2.0]);
        let a = MomentState::from_slices(&[1.0, 1.0], &[0.0, 0.0], 1, &[1.0, 1.0]).unwrap();
        let b = MomentState::from_slices(&[1.0, 2.0], &[0.0, 0.0], 1, &[1.0, 1.0]).unwrap();
        assert!(matches!(be_residual(&s, &b, &a, 1.0, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn velocity_step_identity_cases() {
        let s = three();
        let st = sample3();
        let c = interaction_matrices(&s, &st).unwrap();
        let u = gst_velocity_step(&s, &st, &c, 0.0, 1.0).unwrap();
        assert!((u - st.velocity()).amax() < 1e-15);

        let one = SpeciesSet::new(vec![Species::new("a", 1.0, 1.0)]).unwrap();
        let st1 = MomentState::from_slices(&[2.0], &[0.7], 1, &[1.0]).unwrap();
        let c1 = interaction_matrices(&one, &st1).unwrap();
        let u1 = gst_velocity_step(&one, &st1, &c1, 5.0, 1e-3).unwrap();
        assert!((u1[(0, 0)] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn symmetric_pair_velocity_matches_closed_form() {
        let s = two([1.0, 1.0]);
        let st = MomentState::from_slices(&[1.0, 1.0], &[1.0, -1.0], 1, &[1.0, 1.0]).unwrap();
        let c = interaction_matrices(&s, &st).unwrap();
        let mut last = 1.0;
        for k in [0.1, 1.0, 10.0, 1e4] {
            let u = gst_velocity_step(&s, &st, &c, k, 1.0).unwrap();
            // Z = (A/rho) [[1,-1],[-1,1]]; the antisymmetric mode decays by 1/(1 + 2kA/rho).
            let expected = 1.0 / (1.0 + 2.0 * k * c.a[(0, 1)]);
            assert!((u[(0, 0)] - expected).abs() < 1e-14);
            assert!((u[(1, 0)] + expected).abs() < 1e-14);
            assert!(u[(0, 0)] < last && u[(0, 0)] > 0.0);
            last = u[(0, 0)];
        }
    }

    #[test]
    fn temperature_step_converts_kinetic_energy() {
        let s = two([1.0, 1.0]);
        let st = MomentState::from_slices(&[1.0, 1.0], &[1.0, -1.0], 1, &[1.0, 1.0]).unwrap();
        let c = interaction_matrices(&s, &st).unwrap();
        let u = gst_velocity_step(&s, &st, &c, 1.0, 1.0).unwrap();
        let t = gst_temperature_step(&s, &st, &c, &u, 1.0, 1.0, true).unwrap();
        let next = st.with_velocity_temperature(u, t.clone()).unwrap();
        let e0 = st.total_energy(&s);
        assert!((next.total_energy(&s) - e0).abs() < 1e-13 * e0);
        assert!(t.iter().all(|&x| x > 1.0));
    }

    #[test]
    fn temperature_step_fixed_at_equilibrium() {
        let s = three();
        let st = MomentState::from_slices(&[0.8, 1.3, 0.4], &[0.2; 3], 1, &[1.4; 3]).unwrap();
        let c = interaction_matrices(&s, &st).unwrap();
        let t = gst_temperature_step(&s, &st, &c, st.velocity(), 3.0, 0.01, true).unwrap();
        assert!((t - st.temperature()).amax() < 1e-14);
        let t0 = gst_temperature_step(&s, &sample3(), &c, sample3().velocity(), 0.0, 1.0, true).unwrap();
        assert!((t0 - sample3().temperature()).amax() < 1e-15);
    }

    #[test]
    fn solve_trivial_cases() {
        let s = three();
        let eq = MomentState::from_slices(&[0.8, 1.3, 0.4], &[0.2; 3], 1, &[1.4; 3]).unwrap();
        let (out, rep) = solve_moments(&s, &eq, 1.0, 1e-2, &GstConfig::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        assert!((out.temperature() - eq.temperature()).amax() < 1e-14);

        let one = SpeciesSet::new(vec![Species::new("a", 1.0, 1.0)]).unwrap();
        let st1 = MomentState::from_slices(&[2.0], &[0.7], 1, &[1.0]).unwrap();
        let (o1, r1) = solve_moments(&one, &st1, 1.0, 1e-3, &GstConfig::default()).unwrap();
        assert_eq!(o1, st1);
        assert_eq!(r1.iterations, 1);
    }

    #[test]
    fn solve_reaches_backward_euler_fixed_point() {
        let s = three();
        let st = sample3();
        for k in [1e-2, 1.0, 1e2, 1e6] {
            let cfg = GstConfig::default();
            let (out, rep) = solve_moments(&s, &st, k, 1.0, &cfg).unwrap();
            assert!(rep.converged, "k = {k}: {rep:?}");
            let r = be_residual(&s, &out, &st, k, 1.0).unwrap();
            assert!(r.amax() <= 10.0 * rep.threshold, "k = {k}: residual {}", r.amax());
            assert!(rep.momentum_drift < 1e-12 && rep.energy_drift < 1e-12);
        }
    }

    #[test]
    fn stiff_limit_reaches_equilibrium() {
        let s = three();
        let st = MomentState::from_slices(&[0.8, 1.3, 0.4], &[0.5, -0.2, 0.1, 0.0, 0.3, -0.6, 0.2, 0.2, 0.1], 3, &[1.2, 0.7, 2.0]).unwrap();
        let (out, _) = solve_moments(&s, &st, 1.0, 1e-9, &GstConfig::default()).unwrap();
        let (u_inf, t_inf) = st.equilibrium(&s);
        for i in 0..3 {
            assert!((out.temperature()[i] - t_inf).abs() < 1e-7);
            for q in 0..3 {
                assert!((out.velocity()[(i, q)] - u_inf[q]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn budget_limits() {
        let s = three();
        let st = sample3();
        let small = contraction_budget(&s, &st, 1e-12, 1.0).unwrap();
        assert!(small.product() < 1e-6);
        let stiff = contraction_budget(&s, &st, 1.0, 1e-12).unwrap();
        assert!(stiff.product() < 1e-6);
        assert!(stiff.gamma_x == stiff.gamma_w.max(stiff.gamma_eta));
        for v in [small.c_x, small.c_w, small.c_0, small.c_11, small.c_21, small.c_22, small.c_32] {
            assert!(v > 0.0 && v.is_finite());
        }
        assert!(small.c_x <= small.c_x_uniform);
    }

    #[test]
    fn budget_rejects_single_species() {
        let one = SpeciesSet::new(vec![Species::new("a", 1.0, 1.0)]).unwrap();
        let st1 = MomentState::from_slices(&[2.0], &[0.7], 1, &[1.0]).unwrap();
        assert!(contraction_budget(&one, &st1, 1.0, 1.0).is_err());
    }

    #[test]
    fn time_step_roots_of_reference_quadratic() {
        let (lo, hi) = q_r_roots(1.0, 10.0, 1.0, 0.5).unwrap();
        let root = 10.0 * 0.8f64.sqrt();
        assert!((hi - (9.0 + root)).abs() < 1e-12);
        assert!((lo - (9.0 - root)).abs() < 1e-12);
        assert!(q_r(1.0, 10.0, 1.0, lo, 0.5).abs() < 1e-12);
        assert!(q_r(1.0, 10.0, 1.0, hi, 0.5).abs() < 1e-12);
    }

    #[test]
    fn time_step_cases() {
        let c = select_time_step_with(1.0, 1.5, 1.0, 3.0, 0.5).unwrap();
        assert_eq!((c.case, c.dt), (TimeStepCase::ComplexRoots, 3.0));
        let c = select_time_step_with(1.0, 10.0, 1.0, 5.0, 0.5).unwrap();
        assert_eq!(c.case, TimeStepCase::Reduced);
        assert!((c.dt - (9.0 - 10.0 * 0.8f64.sqrt())).abs() < 1e-12);
        assert!(c.dt / 5.0 >= c.root_ratio().unwrap());
        let hi = c.roots.unwrap().1;
        let c = select_time_step_with(1.0, 10.0, 1.0, hi, 0.5).unwrap();
        assert_eq!((c.case, c.dt), (TimeStepCase::Admissible, hi));
        assert!(select_time_step_with(1.0, 10.0, 1.0, 0.0, 0.5).is_err());
    }
}
