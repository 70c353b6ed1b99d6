//! Independent reference solutions used to check the solver.
//!
//! [`sod_exact`] is the exact Riemann solution of the gamma-law Euler
//! equations. [`newton_moments`] solves the backward-Euler moment system by
//! damped Newton iteration on its own residual assembly, built from the
//! collision frequencies alone rather than from the closed-form pair
//! constants used by the fixed-point solver.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mixture::{hs_collision_frequency, MomentState, SpeciesSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiemannState {
    pub rho: f64,
    pub u: f64,
    pub p: f64,
}

impl RiemannState {
    pub fn new(rho: f64, u: f64, p: f64) -> Result<Self> {
        if !(rho > 0.0 && p > 0.0) || !u.is_finite() {
            return Err(Error::Domain(format!("Riemann state ({rho}, {u}, {p}) is not physical")));
        }
        Ok(Self { rho, u, p })
    }

    pub fn sound_speed(&self, gamma: f64) -> f64 {
        (gamma * self.p / self.rho).sqrt()
    }

    fn flux(&self, gamma: f64) -> [f64; 3] {
        let e = self.p / (gamma - 1.0) + 0.5 * self.rho * self.u * self.u;
        [self.rho * self.u, self.rho * self.u * self.u + self.p, self.u * (e + self.p)]
    }

    fn conserved(&self, gamma: f64) -> [f64; 3] {
        let e = self.p / (gamma - 1.0) + 0.5 * self.rho * self.u * self.u;
        [self.rho, self.rho * self.u, e]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Wave {
    Shock { speed: f64 },
    /// Head and tail speeds of the fan.
    Rarefaction { head: f64, tail: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiemannSolution {
    pub left: RiemannState,
    pub right: RiemannState,
    pub gamma: f64,
    pub p_star: f64,
    pub u_star: f64,
    pub rho_star_left: f64,
    pub rho_star_right: f64,
    pub left_wave: Wave,
    pub right_wave: Wave,
}

/// Pressure function of one side and its derivative.
fn side_function(p: f64, s: &RiemannState, gamma: f64) -> (f64, f64) {
    let c = s.sound_speed(gamma);
    if p > s.p {
        let a = 2.0 / ((gamma + 1.0) * s.rho);
        let b = (gamma - 1.0) / (gamma + 1.0) * s.p;
        let root = (a / (p + b)).sqrt();
        ((p - s.p) * root, root * (1.0 - 0.5 * (p - s.p) / (p + b)))
    } else {
        let e = (gamma - 1.0) / (2.0 * gamma);
        let f = 2.0 * c / (gamma - 1.0) * ((p / s.p).powf(e) - 1.0);
        (f, (p / s.p).powf(-(gamma + 1.0) / (2.0 * gamma)) / (s.rho * c))
    }
}

/// `f_L(p) + f_R(p) + u_R - u_L`, whose root is the star pressure.
pub fn pressure_function(p: f64, left: &RiemannState, right: &RiemannState, gamma: f64) -> f64 {
    side_function(p, left, gamma).0 + side_function(p, right, gamma).0 + right.u - left.u
}

impl RiemannSolution {
    /// `(rho, u, p)` at similarity coordinate `xi = x / t`.
    pub fn sample(&self, xi: f64) -> RiemannState {
        let g = self.gamma;
        if xi <= self.u_star {
            let s = self.left;
            match self.left_wave {
                Wave::Shock { speed } => {
                    if xi <= speed {
                        s
                    } else {
                        self.star(self.rho_star_left)
                    }
                }
                Wave::Rarefaction { head, tail } => {
                    if xi <= head {
                        s
                    } else if xi >= tail {
                        self.star(self.rho_star_left)
                    } else {
                        let c = s.sound_speed(g);
                        let k = 2.0 / (g + 1.0) + (g - 1.0) / ((g + 1.0) * c) * (s.u - xi);
                        let rho = s.rho * k.powf(2.0 / (g - 1.0));
                        let u = 2.0 / (g + 1.0) * (c + 0.5 * (g - 1.0) * s.u + xi);
                        RiemannState { rho, u, p: s.p * k.powf(2.0 * g / (g - 1.0)) }
                    }
                }
            }
        } else {
            let s = self.right;
            match self.right_wave {
                Wave::Shock { speed } => {
                    if xi >= speed {
                        s
                    } else {
                        self.star(self.rho_star_right)
                    }
                }
                Wave::Rarefaction { head, tail } => {
                    if xi >= head {
                        s
                    } else if xi <= tail {
                        self.star(self.rho_star_right)
                    } else {
                        let c = s.sound_speed(g);
                        let k = 2.0 / (g + 1.0) - (g - 1.0) / ((g + 1.0) * c) * (s.u - xi);
                        let rho = s.rho * k.powf(2.0 / (g - 1.0));
                        let u = 2.0 / (g + 1.0) * (-c + 0.5 * (g - 1.0) * s.u + xi);
                        RiemannState { rho, u, p: s.p * k.powf(2.0 * g / (g - 1.0)) }
                    }
                }
            }
        }
    }

    fn star(&self, rho: f64) -> RiemannState {
        RiemannState { rho, u: self.u_star, p: self.p_star }
    }

    /// Largest relative violation of the Rankine-Hugoniot conditions across
    /// the shocks and of the isentropic Riemann invariants across the fans.
    pub fn self_audit(&self) -> f64 {
        let g = self.gamma;
        let mut worst: f64 = 0.0;
        let mut shock = |a: RiemannState, b: RiemannState, speed: f64| {
            let (fa, fb) = (a.flux(g), b.flux(g));
            let (qa, qb) = (a.conserved(g), b.conserved(g));
            for k in 0..3 {
                let jump = fb[k] - fa[k] - speed * (qb[k] - qa[k]);
                let scale = fa[k].abs() + fb[k].abs() + speed.abs() * (qa[k].abs() + qb[k].abs());
                worst = worst.max(jump.abs() / scale.max(f64::MIN_POSITIVE));
            }
        };
        let sl = self.star(self.rho_star_left);
        let sr = self.star(self.rho_star_right);
        if let Wave::Shock { speed } = self.left_wave {
            shock(self.left, sl, speed);
        }
        if let Wave::Shock { speed } = self.right_wave {
            shock(sr, self.right, speed);
        }
        let mut fan = |a: RiemannState, b: RiemannState, sign: f64| {
            let ent = |s: RiemannState| s.p / s.rho.powf(g);
            let inv = |s: RiemannState| s.u + sign * 2.0 * s.sound_speed(g) / (g - 1.0);
            worst = worst.max((ent(a) - ent(b)).abs() / ent(a));
            worst = worst.max((inv(a) - inv(b)).abs() / (inv(a).abs() + a.sound_speed(g)));
        };
        if let Wave::Rarefaction { .. } = self.left_wave {
            fan(self.left, sl, 1.0);
        }
        if let Wave::Rarefaction { .. } = self.right_wave {
            fan(self.right, sr, -1.0);
        }
        worst
    }
}

/// Exact solution of the Riemann problem `left | right`.
///
/// The star pressure is bracketed in `[1e-8, 10 max(p_L, p_R)]` and found by
/// Newton steps safeguarded with bisection.
pub fn sod_exact(left: RiemannState, right: RiemannState, gamma: f64) -> Result<RiemannSolution> {
    if !(gamma > 1.0) {
        return Err(Error::Domain(format!("adiabatic index {gamma} must exceed 1")));
    }
    let (cl, cr) = (left.sound_speed(gamma), right.sound_speed(gamma));
    if 2.0 / (gamma - 1.0) * (cl + cr) <= right.u - left.u {
        return Err(Error::Domain("Riemann data generate a vacuum".into()));
    }
    let f = |p: f64| pressure_function(p, &left, &right, gamma);
    let (mut lo, mut hi) = (1e-8, 10.0 * left.p.max(right.p));
    if f(lo) > 0.0 {
        return Err(Error::Domain("star pressure below the bracket".into()));
    }
    while f(hi) < 0.0 {
        hi *= 10.0;
    }
    let mut p = 0.5 * (left.p + right.p);
    for _ in 0..200 {
        let (fl, dl) = side_function(p, &left, gamma);
        let (fr, dr) = side_function(p, &right, gamma);
        let val = fl + fr + right.u - left.u;
        if val.abs() <= 1e-15 * (left.p + right.p).max(cl + cr) {
            break;
        }
        if val < 0.0 {
            lo = p;
        } else {
            hi = p;
        }
        let newton = p - val / (dl + dr);
        p = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-16 * p {
            break;
        }
    }
    let p_star = p;
    let u_star = 0.5 * (left.u + right.u) + 0.5 * (side_function(p, &right, gamma).0 - side_function(p, &left, gamma).0);
    let gm = (gamma - 1.0) / (gamma + 1.0);
    let star_density = |s: &RiemannState| {
        let ratio = p_star / s.p;
        if p_star > s.p {
            s.rho * (ratio + gm) / (gm * ratio + 1.0)
        } else {
            s.rho * ratio.powf(1.0 / gamma)
        }
    };
    let rho_star_left = star_density(&left);
    let rho_star_right = star_density(&right);
    let left_wave = if p_star > left.p {
        Wave::Shock {
            speed: left.u - cl * ((gamma + 1.0) / (2.0 * gamma) * p_star / left.p + (gamma - 1.0) / (2.0 * gamma)).sqrt(),
        }
    } else {
        let c_star = cl * (p_star / left.p).powf((gamma - 1.0) / (2.0 * gamma));
        Wave::Rarefaction { head: left.u - cl, tail: u_star - c_star }
    };
    let right_wave = if p_star > right.p {
        Wave::Shock {
            speed: right.u + cr * ((gamma + 1.0) / (2.0 * gamma) * p_star / right.p + (gamma - 1.0) / (2.0 * gamma)).sqrt(),
        }
    } else {
        let c_star = cr * (p_star / right.p).powf((gamma - 1.0) / (2.0 * gamma));
        Wave::Rarefaction { head: right.u + cr, tail: u_star + c_star }
    };
    Ok(RiemannSolution {
        left,
        right,
        gamma,
        p_star,
        u_star,
        rho_star_left,
        rho_star_right,
        left_wave,
        right_wave,
    })
}

/// Exact solution of the shock-tube problem on the periodic interval
/// `[x_min, x_max]` with the jump at `x_mid`: the central fan plus the
/// reversed fan launched from the wrap-around point. Valid while the two
/// fans do not meet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicShockTube {
    pub centre: RiemannSolution,
    pub wrap: RiemannSolution,
    pub x_min: f64,
    pub x_max: f64,
    pub x_mid: f64,
}

impl PeriodicShockTube {
    pub fn new(left: RiemannState, right: RiemannState, gamma: f64, x_min: f64, x_max: f64, x_mid: f64) -> Result<Self> {
        if !(x_min < x_mid && x_mid < x_max) {
            return Err(Error::Domain("jump must lie inside the interval".into()));
        }
        Ok(Self {
            centre: sod_exact(left, right, gamma)?,
            wrap: sod_exact(right, left, gamma)?,
            x_min,
            x_max,
            x_mid,
        })
    }

    /// Largest wave speed of either fan.
    pub fn max_speed(&self) -> f64 {
        let speeds = |s: &RiemannSolution| {
            let w = |w: Wave| match w {
                Wave::Shock { speed } => speed.abs(),
                Wave::Rarefaction { head, tail } => head.abs().max(tail.abs()),
            };
            w(s.left_wave).max(w(s.right_wave))
        };
        speeds(&self.centre).max(speeds(&self.wrap))
    }

    /// Whether the fans are still separated at time `t`.
    pub fn valid_at(&self, t: f64) -> bool {
        let reach = self.max_speed() * t;
        reach < 0.5 * (self.x_mid - self.x_min).min(self.x_max - self.x_mid)
    }

    pub fn sample(&self, x: f64, t: f64) -> RiemannState {
        if t <= 0.0 {
            return if x <= self.x_mid { self.centre.left } else { self.centre.right };
        }
        let to_left = x - self.x_min;
        let to_right = self.x_max - x;
        let to_mid = (x - self.x_mid).abs();
        if to_mid <= to_left.min(to_right) {
            self.centre.sample((x - self.x_mid) / t)
        } else if to_right < to_left {
            self.wrap.sample(-to_right / t)
        } else {
            self.wrap.sample(to_left / t)
        }
    }
}

/// Mixture totals `(n, u, T)` of one cell: summed density, mass-averaged
/// velocity and the temperature that keeps the total energy.
pub fn mixture_totals(species: &SpeciesSet, m: &MomentState) -> (f64, f64, f64) {
    let n = m.density().sum();
    let rho = m.mass_densities(species);
    let rho_tot = rho.sum();
    let u = m.total_momentum(species)[0] / rho_tot;
    let d = m.dim() as f64;
    let thermal = m.total_energy(species) - 0.5 * rho_tot * m.total_momentum(species).norm_squared() / (rho_tot * rho_tot);
    (n, u, 2.0 * thermal / (d * n))
}

// ---------------------------------------------------------------------------
// Newton oracle for the backward-Euler moment system

struct System<'a> {
    species: &'a SpeciesSet,
    start: &'a MomentState,
    dt: f64,
    eps: f64,
}

impl System<'_> {
    fn n(&self) -> usize {
        self.start.len()
    }

    fn d(&self) -> usize {
        self.start.dim()
    }

    fn pack(&self, s: &MomentState) -> DVector<f64> {
        let (n, d) = (self.n(), self.d());
        DVector::from_fn(n * d + n, |k, _| if k < n * d { s.velocity()[(k / d, k % d)] } else { s.temperature()[k - n * d] })
    }

    fn unpack(&self, x: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let (n, d) = (self.n(), self.d());
        (DMatrix::from_fn(n, d, |i, q| x[i * d + q]), DVector::from_fn(n, |i, _| x[n * d + i]))
    }

    /// Backward-Euler residual assembled from the collision frequencies,
    /// scaled like the solver's residual.
    fn balance(&self, u: &DMatrix<f64>, t: &DVector<f64>) -> Result<DVector<f64>> {
        let (n, d) = (self.n(), self.d());
        let sp = self.species;
        let dens = self.start.density();
        let rho = DVector::from_fn(n, |i, _| sp.mass(i) * dens[i]);
        let mut lam = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                lam[(i, j)] = hs_collision_frequency(sp, i, j, dens[j], t[i].max(0.0), t[j].max(0.0))?;
            }
        }
        let k = self.dt / self.eps;
        let norm = 1.0 + k;
        let mut out = DVector::zeros(n * d + n);
        let u0 = self.start.velocity();
        let t0 = self.start.temperature();
        let s = DVector::from_fn(n, |i, _| u.row(i).norm_squared());
        for i in 0..n {
            let mut exch_u = vec![0.0; d];
            let mut heat = 0.0;
            let mut work = 0.0;
            for j in 0..n {
                let (lij, lji) = (lam[(i, j)], lam[(j, i)]);
                let a_den = rho[i] * lij + rho[j] * lji;
                let b_den = dens[i] * lij + dens[j] * lji;
                if a_den <= 0.0 || b_den <= 0.0 {
                    continue;
                }
                let a = rho[i] * rho[j] * lij * lji / a_den;
                let b = dens[i] * dens[j] * lij * lji / b_den;
                let alpha_ij = rho[i] * lij / a_den;
                let alpha_ji = rho[j] * lji / a_den;
                let mut s_ij = 0.0;
                for q in 0..d {
                    exch_u[q] += a * (u[(j, q)] - u[(i, q)]);
                    s_ij += (alpha_ij * u[(i, q)] + alpha_ji * u[(j, q)]).powi(2);
                }
                heat += b * (t[j] - t[i]);
                work += b * (sp.mass(j) * (s[j] - s_ij) - sp.mass(i) * (s[i] - s_ij));
            }
            for q in 0..d {
                out[i * d + q] = (rho[i] * (u[(i, q)] - u0[(i, q)]) - k * exch_u[q]) / norm;
            }
            let lhs = rho[i] * (s[i] - u0.row(i).norm_squared()) + d as f64 * dens[i] * (t[i] - t0[i]);
            out[n * d + i] = (lhs - k * (d as f64 * heat + work)) / norm;
        }
        Ok(out)
    }

    /// Balance equations with the last species' rows swapped for the
    /// conservation laws, which removes the near-singular direction.
    fn equations(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (n, d) = (self.n(), self.d());
        let (u, t) = self.unpack(x);
        let mut f = self.balance(&u, &t)?;
        let sp = self.species;
        let dens = self.start.density();
        let rho_tot: f64 = (0..n).map(|i| sp.mass(i) * dens[i]).sum();
        let e0 = self.start.total_energy(sp);
        for q in 0..d {
            let dm: f64 = (0..n).map(|i| sp.mass(i) * dens[i] * (u[(i, q)] - self.start.velocity()[(i, q)])).sum();
            f[(n - 1) * d + q] = dm / rho_tot;
        }
        let e: f64 = (0..n)
            .map(|i| 0.5 * sp.mass(i) * dens[i] * u.row(i).norm_squared() + 0.5 * d as f64 * dens[i] * t[i])
            .sum();
        f[n * d + n - 1] = (e - e0) / e0;
        Ok(f)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let m = x.len();
        let mut jac = DMatrix::zeros(m, m);
        let scale = 1.0 + x.amax();
        for k in 0..m {
            let h = 1e-6 * scale;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let col = (self.equations(&xp)? - self.equations(&xm)?) / (2.0 * h);
            jac.set_column(k, &col);
        }
        Ok(jac)
    }

    fn feasible(&self, x: &DVector<f64>) -> bool {
        let n = self.n();
        let nd = n * self.d();
        (0..n).all(|i| x[nd + i] > 0.0)
    }

    fn newton(&self, x0: DVector<f64>) -> Option<DVector<f64>> {
        let mut x = x0;
        let mut f = self.equations(&x).ok()?;
        for _ in 0..100 {
            let fnorm = f.amax();
            if fnorm <= 1e-15 {
                return Some(x);
            }
            let jac = self.jacobian(&x).ok()?;
            let dx = jac.lu().solve(&(-&f))?;
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial = &x + &dx * step;
                if self.feasible(&trial) {
                    if let Ok(ft) = self.equations(&trial) {
                        if ft.amax() < (1.0 - 1e-4 * step) * fnorm || ft.amax() <= 1e-15 {
                            x = trial;
                            f = ft;
                            accepted = true;
                            break;
                        }
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                // No decrease possible: either converged to round-off or stuck.
                return if fnorm <= 1e-12 { Some(x) } else { None };
            }
            if dx.amax() * step <= 1e-16 * (1.0 + x.amax()) {
                return Some(x);
            }
        }
        (f.amax() <= 1e-12).then_some(x)
    }
}

/// Solves the backward-Euler moment system by damped Newton iteration with
/// a central-difference Jacobian. Falls back to the equilibrium state as a
/// starting guess, then to continuation in the step size.
///
/// The returned state's full residual is at most `1e-12` in max norm.
pub fn newton_moments(species: &SpeciesSet, state_n: &MomentState, dt: f64, eps: f64) -> Result<MomentState> {
    if species.len() != state_n.len() {
        return Err(Error::Contract("species count mismatch".into()));
    }
    if !(dt >= 0.0) || !(eps > 0.0) {
        return Err(Error::Contract(format!("invalid step dt = {dt}, eps = {eps}")));
    }
    if state_n.len() == 1 || dt == 0.0 {
        return Ok(state_n.clone());
    }
    let sys = |dt| System { species, start: state_n, dt, eps };
    let full = sys(dt);
    let accept = |x: DVector<f64>| -> Option<MomentState> {
        let (u, t) = full.unpack(&x);
        let r = full.balance(&u, &t).ok()?;
        if r.amax() > 1e-12 {
            return None;
        }
        state_n.with_velocity_temperature(u, t).ok()
    };
    let guesses = [full.pack(state_n), full.pack(&state_n.equilibrated(species))];
    for g in guesses {
        if let Some(s) = full.newton(g).and_then(accept) {
            return Ok(s);
        }
    }
    let mut x = full.pack(state_n);
    for k in (0..=12).rev() {
        let step = dt * 10f64.powi(-k);
        x = sys(step).newton(x).ok_or_else(|| Error::Invariant(format!("Newton continuation failed at dt = {step:e}")))?;
    }
    accept(x).ok_or_else(|| Error::Invariant("Newton oracle did not reach the residual target".into()))
}

/// Residual of the backward-Euler system as assembled by the oracle.
pub fn oracle_residual(species: &SpeciesSet, next: &MomentState, start: &MomentState, dt: f64, eps: f64) -> Result<DVector<f64>> {
    let sys = System { species, start, dt, eps };
    sys.balance(next.velocity(), next.temperature())
}
