//! Chu-reduced discrete-velocity distributions in slab geometry.
//!
//! Each species carries a pair `(g, h)` of functions of `x` and the
//! streaming velocity `v`; `g` is the marginal of the 3-D distribution and
//! `h` carries the transverse thermal energy. Moments use the mid-point rule
//! on a uniform velocity grid.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mixture::{PairwiseCoefficients, SpeciesSet, MomentState};

/// Physical velocity dimension behind the reduction.
pub const PHYSICAL_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    v_min: f64,
    v_max: f64,
    dv: f64,
    nodes: Vec<f64>,
}

impl VelocityGrid {
    /// `n` cell-centred nodes on `[v_min, v_max]`.
    pub fn new(v_min: f64, v_max: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!("velocity grid needs at least 2 points, got {n}")));
        }
        if !(v_max > v_min) || !v_min.is_finite() || !v_max.is_finite() {
            return Err(Error::Domain(format!("empty velocity range [{v_min}, {v_max}]")));
        }
        let dv = (v_max - v_min) / n as f64;
        let nodes = (0..n).map(|l| v_min + (l as f64 + 0.5) * dv).collect();
        Ok(Self { v_min, v_max, dv, nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Quadrature weight, identical for every node.
    pub fn weight(&self) -> f64 {
        self.dv
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.v_min, self.v_max)
    }

    /// `max(|v_min|, |v_max|)`; the speed bound used in CFL conditions.
    pub fn extent(&self) -> f64 {
        self.v_min.abs().max(self.v_max.abs())
    }

    /// Whether `v -> -v` maps nodes onto nodes (node `l` onto `n - 1 - l`).
    pub fn is_symmetric(&self) -> bool {
        (self.v_min + self.v_max).abs() <= 1e-12 * self.extent()
    }

    pub fn mirror(&self, l: usize) -> usize {
        self.len() - 1 - l
    }
}

/// `n / sqrt(2 pi theta) exp(-(v - u)^2 / (2 theta))` at every node.
pub fn maxwellian_1d(n: f64, u: f64, theta: f64, grid: &VelocityGrid) -> Result<Vec<f64>> {
    let mut out = vec![0.0; grid.len()];
    fill_maxwellian(n, u, theta, grid, &mut out)?;
    Ok(out)
}

fn fill_maxwellian(n: f64, u: f64, theta: f64, grid: &VelocityGrid, out: &mut [f64]) -> Result<()> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::Domain(format!("Maxwellian temperature {theta} must be positive")));
    }
    if !(n > 0.0) {
        return Err(Error::Domain(format!("Maxwellian density {n} must be positive")));
    }
    let amp = n / (2.0 * PI * theta).sqrt();
    let nodes = grid.nodes();
    let dv = grid.weight();
    // On a uniform grid consecutive Gaussian values differ by a factor that
    // is itself geometric, so walk outwards from the peak with two
    // multiplications per node, recomputing exactly every RESYNC nodes.
    const RESYNC: usize = 32;
    let peak = (((u - nodes[0]) / dv).round().max(0.0) as usize).min(nodes.len() - 1);
    let exact = |l: usize| (-(nodes[l] - u).powi(2) / (2.0 * theta)).exp();
    let q = (-dv * dv / theta).exp();
    let half = dv * dv / (2.0 * theta);
    let mut walk = |ls: &mut dyn Iterator<Item = usize>, sign: f64| {
        let (mut e, mut r) = (0.0, 0.0);
        for (k, l) in ls.enumerate() {
            if k % RESYNC == 0 {
                e = exact(l);
                r = (-sign * (nodes[l] - u) * dv / theta - half).exp();
            } else {
                e *= r;
                r *= q;
            }
            out[l] = amp * e;
        }
    };
    walk(&mut (peak..nodes.len()), 1.0);
    walk(&mut (0..peak).rev(), -1.0);
    Ok(())
}

/// Distributions laid out as `[cell][species][velocity]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChuState {
    cells: usize,
    species: usize,
    nv: usize,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

impl ChuState {
    pub fn zeros(cells: usize, species: usize, nv: usize) -> Self {
        let len = cells * species * nv;
        Self {
            cells,
            species,
            nv,
            g: vec![0.0; len],
            h: vec![0.0; len],
        }
    }

    /// Local Maxwellian pair for the given per-cell moments (velocity along
    /// the slab normal is the first component).
    pub fn from_moments(species: &SpeciesSet, moments: &[MomentState], grid: &VelocityGrid) -> Result<Self> {
        let ns = species.len();
        let mut out = Self::zeros(moments.len(), ns, grid.len());
        for (cell, m) in moments.iter().enumerate() {
            if m.len() != ns {
                return Err(Error::Contract(format!("cell {cell} has {} species, expected {ns}", m.len())));
            }
            for i in 0..ns {
                let theta = m.temperature()[i] / species.mass(i);
                let range = out.range(cell, i);
                fill_maxwellian(m.density()[i], m.velocity()[(i, 0)], theta, grid, &mut out.g[range.clone()])
                    .map_err(|e| e.in_cell(cell))?;
                for k in range {
                    out.h[k] = 2.0 * theta * out.g[k];
                }
            }
        }
        Ok(out)
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn species(&self) -> usize {
        self.species
    }

    pub fn nv(&self) -> usize {
        self.nv
    }

    /// Values per cell (`species * nv`).
    pub fn cell_len(&self) -> usize {
        self.species * self.nv
    }

    pub fn range(&self, cell: usize, species: usize) -> std::ops::Range<usize> {
        let start = (cell * self.species + species) * self.nv;
        start..start + self.nv
    }

    pub fn g(&self, cell: usize, species: usize) -> &[f64] {
        &self.g[self.range(cell, species)]
    }

    pub fn h(&self, cell: usize, species: usize) -> &[f64] {
        &self.h[self.range(cell, species)]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.cells, self.species, self.nv) == (other.cells, other.species, other.nv)
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &Self) {
        debug_assert!(self.same_shape(x));
        for (s, v) in self.g.iter_mut().zip(&x.g) {
            *s += a * v;
        }
        for (s, v) in self.h.iter_mut().zip(&x.h) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.g.iter_mut().chain(self.h.iter_mut()).for_each(|v| *v *= a);
    }

    pub fn is_finite(&self) -> bool {
        self.g.iter().chain(&self.h).all(|v| v.is_finite())
    }

    /// Number of particles of each species summed over cells (without the
    /// cell width).
    pub fn species_mass(&self, grid: &VelocityGrid) -> Vec<f64> {
        (0..self.species)
            .map(|i| (0..self.cells).map(|c| self.g(c, i).iter().sum::<f64>()).sum::<f64>() * grid.weight())
            .collect()
    }
}

/// Moments of one cell's slice (`species * nv` values each of `g`, `h`).
pub fn cell_moments(species: &SpeciesSet, g: &[f64], h: &[f64], grid: &VelocityGrid) -> Result<MomentState> {
    let ns = species.len();
    let nv = grid.len();
    let w = grid.weight();
    let v = grid.nodes();
    let mut dens = DVector::zeros(ns);
    let mut vel = DMatrix::zeros(ns, PHYSICAL_DIM);
    let mut temp = DVector::zeros(ns);
    for i in 0..ns {
        let gi = &g[i * nv..(i + 1) * nv];
        let hi = &h[i * nv..(i + 1) * nv];
        let n: f64 = gi.iter().sum::<f64>() * w;
        if !(n > 0.0) {
            return Err(Error::Domain(format!("species {i} density {n} is not positive")));
        }
        let u = gi.iter().zip(v).map(|(g, v)| g * v).sum::<f64>() * w / n;
        let spread: f64 = gi.iter().zip(v).map(|(g, v)| (v - u).powi(2) * g).sum::<f64>() * w;
        let transverse: f64 = hi.iter().sum::<f64>() * w;
        let t = species.mass(i) * (spread + transverse) / (PHYSICAL_DIM as f64 * n);
        if !(t > 0.0) {
            return Err(Error::Domain(format!("species {i} temperature {t} is not positive")));
        }
        dens[i] = n;
        vel[(i, 0)] = u;
        temp[i] = t;
    }
    MomentState::new(dens, vel, temp)
}

/// Per-cell `(n_i, u_i, T_i)` of a Chu state.
pub fn moments_from_chu(species: &SpeciesSet, state: &ChuState, grid: &VelocityGrid) -> Result<Vec<MomentState>> {
    check_shape(species, state, grid)?;
    let len = state.cell_len();
    (0..state.cells())
        .map(|c| {
            let r = c * len..(c + 1) * len;
            cell_moments(species, &state.g[r.clone()], &state.h[r], grid).map_err(|e| e.in_cell(c))
        })
        .collect()
}

pub(crate) fn check_shape(species: &SpeciesSet, state: &ChuState, grid: &VelocityGrid) -> Result<()> {
    if state.species() != species.len() || state.nv() != grid.len() {
        return Err(Error::Contract(format!(
            "state shape ({} species, {} velocities) does not match the mixture ({}) and grid ({})",
            state.species(),
            state.nv(),
            species.len(),
            grid.len()
        )));
    }
    Ok(())
}

/// Relaxation targets `G_ij`, `H_ij` of one cell, stored `[i][j][velocity]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTargets {
    species: usize,
    nv: usize,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

impl CellTargets {
    pub fn g(&self, i: usize, j: usize) -> &[f64] {
        let s = (i * self.species + j) * self.nv;
        &self.g[s..s + self.nv]
    }

    pub fn h(&self, i: usize, j: usize) -> &[f64] {
        let s = (i * self.species + j) * self.nv;
        &self.h[s..s + self.nv]
    }
}

/// `G_ij = M(n_i, u_ij, T_ij / m_i)` and `H_ij = 2 (T_ij / m_i) G_ij`.
pub fn chu_targets(
    species: &SpeciesSet,
    moments: &MomentState,
    coeffs: &PairwiseCoefficients,
    grid: &VelocityGrid,
) -> Result<CellTargets> {
    let ns = species.len();
    let nv = grid.len();
    let mut g = vec![0.0; ns * ns * nv];
    let mut h = vec![0.0; ns * ns * nv];
    for i in 0..ns {
        for j in 0..ns {
            let theta = coeffs.mix_temperature[(i, j)] / species.mass(i);
            let s = (i * ns + j) * nv;
            fill_maxwellian(moments.density()[i], coeffs.mix_velocity[0][(i, j)], theta, grid, &mut g[s..s + nv])?;
            for k in s..s + nv {
                h[k] = 2.0 * theta * g[k];
            }
        }
    }
    Ok(CellTargets { species: ns, nv, g, h })
}

/// Backward-Euler relaxation of one cell towards its targets:
/// `f = (f* + tau sum_j lambda_ij F_ij) / (1 + tau sum_j lambda_ij)` with
/// `tau = dt_eff / eps`, for `f = g` and `f = h`.
pub fn relax_cell(
    g_star: &[f64],
    h_star: &[f64],
    targets: &CellTargets,
    lambda: &DMatrix<f64>,
    tau: f64,
    g_out: &mut [f64],
    h_out: &mut [f64],
) {
    let ns = targets.species;
    let nv = targets.nv;
    for i in 0..ns {
        let total: f64 = (0..ns).map(|j| lambda[(i, j)]).sum();
        let denom = 1.0 + tau * total;
        let r = i * nv..(i + 1) * nv;
        let (go, ho) = (&mut g_out[r.clone()], &mut h_out[r.clone()]);
        go.fill(0.0);
        ho.fill(0.0);
        for j in 0..ns {
            let lam = lambda[(i, j)];
            for ((o, t), (p, u)) in go.iter_mut().zip(targets.g(i, j)).zip(ho.iter_mut().zip(targets.h(i, j))) {
                *o += lam * t;
                *p += lam * u;
            }
        }
        for ((o, s), (p, u)) in go.iter_mut().zip(&g_star[r.clone()]).zip(ho.iter_mut().zip(&h_star[r])) {
            *o = (s + tau * *o) / denom;
            *p = (u + tau * *p) / denom;
        }
    }
}

/// BGK collision term `sum_j lambda_ij (F_ij - f_i) / eps` of one cell.
pub fn collision_cell(
    g: &[f64],
    h: &[f64],
    targets: &CellTargets,
    lambda: &DMatrix<f64>,
    eps: f64,
    g_out: &mut [f64],
    h_out: &mut [f64],
) {
    let ns = targets.species;
    let nv = targets.nv;
    for i in 0..ns {
        let r = i * nv..(i + 1) * nv;
        let (gi, hi) = (&g[r.clone()], &h[r.clone()]);
        let (go, ho) = (&mut g_out[r.clone()], &mut h_out[r]);
        go.fill(0.0);
        ho.fill(0.0);
        for j in 0..ns {
            let lam = lambda[(i, j)];
            let (tg, th) = (targets.g(i, j), targets.h(i, j));
            for l in 0..nv {
                go[l] += lam * (tg[l] - gi[l]);
                ho[l] += lam * (th[l] - hi[l]);
            }
        }
        go.iter_mut().chain(ho.iter_mut()).for_each(|v| *v /= eps);
    }
}

/// [`relax_cell`] over a whole state.
pub fn implicit_relax(
    state: &ChuState,
    targets: &[CellTargets],
    lambdas: &[DMatrix<f64>],
    dt_eff: f64,
    eps: f64,
) -> Result<ChuState> {
    if targets.len() != state.cells() || lambdas.len() != state.cells() {
        return Err(Error::Contract("one target set and frequency matrix per cell required".into()));
    }
    let mut out = ChuState::zeros(state.cells(), state.species(), state.nv());
    let len = state.cell_len();
    let tau = dt_eff / eps;
    for c in 0..state.cells() {
        let r = c * len..(c + 1) * len;
        let (go, ho) = (&mut out.g[r.clone()], &mut out.h[r.clone()]);
        relax_cell(&state.g[r.clone()], &state.h[r], &targets[c], &lambdas[c], tau, go, ho);
    }
    Ok(out)
}
