//! Species parameters, hard-sphere collision frequencies and the pairwise
//! interaction coefficients that drive the moment relaxation.
//!
//! All matrices are dense `N x N`; mixtures of interest have a handful of
//! species. Pair constants that depend only on the species (masses and
//! diameters) are computed once in [`SpeciesSet::new`]; the temperature
//! factor `Psi_ij = sqrt(T_i/m_i + T_j/m_j)` is re-evaluated per state.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Prefactor `32 pi^2 / (3 (2 pi)^{3/2})` of the hard-sphere frequency.
pub fn hard_sphere_prefactor() -> f64 {
    32.0 * PI * PI / (3.0 * (2.0 * PI).powf(1.5))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Species {
    pub name: String,
    pub mass: f64,
    pub diameter: f64,
}

impl Species {
    pub fn new(name: impl Into<String>, mass: f64, diameter: f64) -> Self {
        Self {
            name: name.into(),
            mass,
            diameter,
        }
    }
}

/// Immutable per-species parameters plus the derived pair constants.
///
/// `a_pair` and `b_pair` hold the species-only parts of `c^A_ij` and
/// `c^B_ij`; the full constants also carry the factor `rho_i rho_j`, which
/// is fixed within one implicit solve but differs between spatial cells.
#[derive(Debug, Clone)]
pub struct SpeciesSet {
    species: Vec<Species>,
    freq: DMatrix<f64>,
    a_pair: DMatrix<f64>,
    b_pair: DMatrix<f64>,
}

impl SpeciesSet {
    pub fn new(species: Vec<Species>) -> Result<Self> {
        if species.is_empty() {
            return Err(Error::Domain("a mixture needs at least one species".into()));
        }
        for s in &species {
            if !(s.mass > 0.0 && s.mass.is_finite()) {
                return Err(Error::Domain(format!(
                    "species '{}' has non-positive mass {}",
                    s.name, s.mass
                )));
            }
            if !(s.diameter > 0.0 && s.diameter.is_finite()) {
                return Err(Error::Domain(format!(
                    "species '{}' has non-positive diameter {}",
                    s.name, s.diameter
                )));
            }
        }
        let n = species.len();
        let pre = hard_sphere_prefactor();
        let root = (PI / 2.0).sqrt();
        let mut freq = DMatrix::zeros(n, n);
        let mut a_pair = DMatrix::zeros(n, n);
        let mut b_pair = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let (mi, mj) = (species[i].mass, species[j].mass);
                let dsum2 = (species[i].diameter + species[j].diameter).powi(2);
                let msum = mi + mj;
                freq[(i, j)] = pre * mi * mj / (msum * msum) * dsum2;
                a_pair[(i, j)] = 16.0 / 3.0 * root * mi * mj * dsum2 / msum.powi(3);
                b_pair[(i, j)] = 8.0 / 3.0 * root * dsum2 / (msum * msum);
            }
        }
        Ok(Self {
            species,
            freq,
            a_pair,
            b_pair,
        })
    }

    /// Same species with every collision frequency multiplied by `factor`.
    /// `factor = 0` gives a collisionless mixture.
    pub fn with_frequency_scale(&self, factor: f64) -> Self {
        Self {
            species: self.species.clone(),
            freq: &self.freq * factor,
            a_pair: &self.a_pair * factor,
            b_pair: &self.b_pair * factor,
        }
    }

    pub fn len(&self) -> usize {
        self.species.len()
    }

    pub fn is_empty(&self) -> bool {
        self.species.is_empty()
    }

    pub fn species(&self) -> &[Species] {
        &self.species
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.species[i].mass
    }

    pub fn masses(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.species.iter().map(|s| s.mass))
    }

    pub fn mass_min(&self) -> f64 {
        self.species.iter().map(|s| s.mass).fold(f64::INFINITY, f64::min)
    }

    pub fn mass_max(&self) -> f64 {
        self.species.iter().map(|s| s.mass).fold(0.0, f64::max)
    }

    /// `c_ij` in `lambda_ij = c_ij n_j Psi_ij`.
    pub fn frequency_constant(&self, i: usize, j: usize) -> f64 {
        self.freq[(i, j)]
    }

    /// `c^A_ij`, including the `rho_i rho_j` factor of `state`.
    pub fn c_a(&self, i: usize, j: usize, state: &MomentState) -> f64 {
        self.a_pair[(i, j)] * state.mass_density(self, i) * state.mass_density(self, j)
    }

    /// `c^B_ij`, including the `rho_i rho_j` factor of `state`.
    pub fn c_b(&self, i: usize, j: usize, state: &MomentState) -> f64 {
        self.b_pair[(i, j)] * state.mass_density(self, i) * state.mass_density(self, j)
    }

    /// `Psi_ij = sqrt(T_i / m_i + T_j / m_j)`.
    pub fn psi(&self, i: usize, j: usize, ti: f64, tj: f64) -> f64 {
        (ti / self.mass(i) + tj / self.mass(j)).sqrt()
    }
}

/// Hard-sphere frequency `lambda_ij(n_j, T_i, T_j)`.
///
/// Zero temperatures are accepted (the frequency then vanishes); negative
/// temperatures and non-positive densities are rejected.
pub fn hs_collision_frequency(
    species: &SpeciesSet,
    i: usize,
    j: usize,
    n_j: f64,
    t_i: f64,
    t_j: f64,
) -> Result<f64> {
    if !(n_j > 0.0) {
        return Err(Error::Domain(format!("density n_{j} = {n_j} must be positive")));
    }
    if !(t_i >= 0.0) || !(t_j >= 0.0) {
        return Err(Error::Domain(format!(
            "temperatures ({t_i}, {t_j}) must be non-negative"
        )));
    }
    Ok(species.frequency_constant(i, j) * n_j * species.psi(i, j, t_i, t_j))
}

/// Moments `(n_i, u_i, T_i)` of every species at one spatial point.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    density: DVector<f64>,
    velocity: DMatrix<f64>,
    temperature: DVector<f64>,
}

impl MomentState {
    /// `velocity` is `N x d` with one row per species.
    pub fn new(
        density: DVector<f64>,
        velocity: DMatrix<f64>,
        temperature: DVector<f64>,
    ) -> Result<Self> {
        let n = density.len();
        if n == 0 {
            return Err(Error::Domain("empty moment state".into()));
        }
        if velocity.nrows() != n || temperature.len() != n {
            return Err(Error::Contract(format!(
                "moment arrays disagree on species count: {} densities, {} velocity rows, {} temperatures",
                n,
                velocity.nrows(),
                temperature.len()
            )));
        }
        if !(1..=3).contains(&velocity.ncols()) {
            return Err(Error::Contract(format!(
                "velocity dimension {} outside 1..=3",
                velocity.ncols()
            )));
        }
        if let Some((i, v)) = density.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("density n_{i} = {v} must be positive")));
        }
        if let Some((i, v)) = temperature
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
        {
            return Err(Error::Domain(format!("temperature T_{i} = {v} must be positive")));
        }
        if velocity.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite velocity".into()));
        }
        Ok(Self {
            density,
            velocity,
            temperature,
        })
    }

    /// Convenience constructor for slices; `velocity` is row-major `N x d`.
    pub fn from_slices(density: &[f64], velocity: &[f64], dim: usize, temperature: &[f64]) -> Result<Self> {
        if velocity.len() != density.len() * dim {
            return Err(Error::Contract(format!(
                "expected {} velocity components, got {}",
                density.len() * dim,
                velocity.len()
            )));
        }
        Self::new(
            DVector::from_column_slice(density),
            DMatrix::from_row_slice(density.len(), dim, velocity),
            DVector::from_column_slice(temperature),
        )
    }

    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.velocity.ncols()
    }

    pub fn density(&self) -> &DVector<f64> {
        &self.density
    }

    pub fn velocity(&self) -> &DMatrix<f64> {
        &self.velocity
    }

    pub fn temperature(&self) -> &DVector<f64> {
        &self.temperature
    }

    pub fn mass_density(&self, species: &SpeciesSet, i: usize) -> f64 {
        species.mass(i) * self.density[i]
    }

    pub fn mass_densities(&self, species: &SpeciesSet) -> DVector<f64> {
        self.density.component_mul(&species.masses())
    }

    /// `s_i = |u_i|^2`.
    pub fn speed_sq(&self, i: usize) -> f64 {
        self.velocity.row(i).norm_squared()
    }

    /// `E_i = rho_i |u_i|^2 / 2 + d n_i T_i / 2`.
    pub fn energy(&self, species: &SpeciesSet, i: usize) -> f64 {
        0.5 * self.mass_density(species, i) * self.speed_sq(i)
            + 0.5 * self.dim() as f64 * self.density[i] * self.temperature[i]
    }

    pub fn total_momentum(&self, species: &SpeciesSet) -> DVector<f64> {
        let rho = self.mass_densities(species);
        self.velocity.tr_mul(&rho)
    }

    pub fn total_energy(&self, species: &SpeciesSet) -> f64 {
        (0..self.len()).map(|i| self.energy(species, i)).sum()
    }

    pub fn temperature_min(&self) -> f64 {
        self.temperature.min()
    }

    /// Mixture equilibrium `(u_inf, T_inf)` fixed by the conserved totals.
    pub fn equilibrium(&self, species: &SpeciesSet) -> (DVector<f64>, f64) {
        let rho = self.mass_densities(species);
        let rho_tot = rho.sum();
        let n_tot = self.density.sum();
        let u_inf = self.total_momentum(species) / rho_tot;
        let d = self.dim() as f64;
        let t_inf = 2.0 * self.total_energy(species) / (d * n_tot) - rho_tot * u_inf.norm_squared() / (d * n_tot);
        (u_inf, t_inf)
    }

    /// New state with the same densities. Validates positivity.
    pub fn with_velocity_temperature(&self, velocity: DMatrix<f64>, temperature: DVector<f64>) -> Result<Self> {
        Self::new(self.density.clone(), velocity, temperature)
    }

    /// Uniform state at the mixture equilibrium.
    pub fn equilibrated(&self, species: &SpeciesSet) -> Self {
        let (u_inf, t_inf) = self.equilibrium(species);
        let velocity = DMatrix::from_fn(self.len(), self.dim(), |_, k| u_inf[k]);
        Self {
            density: self.density.clone(),
            velocity,
            temperature: DVector::from_element(self.len(), t_inf),
        }
    }
}

/// Coefficient matrices of the moment relaxation evaluated at one state.
#[derive(Debug, Clone)]
pub struct PairwiseCoefficients {
    pub lambda: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Diagonal of `D`: row sums of `A`.
    pub d_diag: DVector<f64>,
    /// Diagonal of `F`: row sums of `B`.
    pub f_diag: DVector<f64>,
    /// `S_ij = |u_ij|^2`.
    pub s: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    /// One `N x N` matrix per velocity component: `mix_velocity[k][(i, j)]`.
    pub mix_velocity: Vec<DMatrix<f64>>,
    pub mix_temperature: DMatrix<f64>,
}

impl PairwiseCoefficients {
    /// `Z = P^{-1/2} (D - A) P^{-1/2}` with `P = diag(rho)`.
    pub fn z_matrix(&self, rho: &DVector<f64>) -> DMatrix<f64> {
        symmetrized_laplacian(&self.a, &self.d_diag, rho)
    }

    /// `Zhat = Q^{-1/2} (F - B) Q^{-1/2}` with `Q = diag(n)`.
    pub fn z_hat_matrix(&self, n: &DVector<f64>) -> DMatrix<f64> {
        symmetrized_laplacian(&self.b, &self.f_diag, n)
    }

    /// Largest off-diagonal `alpha_ij`.
    pub fn alpha_max(&self) -> f64 {
        let n = self.alpha.nrows();
        let mut best: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    best = best.max(self.alpha[(i, j)]);
                }
            }
        }
        best
    }
}

fn symmetrized_laplacian(off: &DMatrix<f64>, diag: &DVector<f64>, weight: &DVector<f64>) -> DMatrix<f64> {
    let n = off.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let kron = if i == j { diag[i] } else { 0.0 };
        (kron - off[(i, j)]) / (weight[i] * weight[j]).sqrt()
    })
}

/// Convex weights and mixture moments `u_ij`, `T_ij`.
#[derive(Debug, Clone)]
pub struct MixtureMoments {
    pub alpha: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub velocity: Vec<DMatrix<f64>>,
    pub temperature: DMatrix<f64>,
}

fn frequencies(species: &SpeciesSet, state: &MomentState) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = state.len();
    let t = state.temperature();
    let psi = DMatrix::from_fn(n, n, |i, j| species.psi(i, j, t[i], t[j]));
    let lambda = DMatrix::from_fn(n, n, |i, j| species.frequency_constant(i, j) * state.density()[j] * psi[(i, j)]);
    (psi, lambda)
}

fn check_species(species: &SpeciesSet, state: &MomentState) -> Result<()> {
    if species.len() != state.len() {
        return Err(Error::Contract(format!(
            "mixture has {} species but moment state has {}",
            species.len(),
            state.len()
        )));
    }
    Ok(())
}

fn mixture_from_lambda(species: &SpeciesSet, state: &MomentState, lambda: &DMatrix<f64>) -> MixtureMoments {
    let n = state.len();
    let dim = state.dim();
    let dens = state.density();
    let t = state.temperature();
    let u = state.velocity();
    let mut alpha = DMatrix::zeros(n, n);
    let mut beta = DMatrix::zeros(n, n);
    let mut temperature = DMatrix::zeros(n, n);
    let mut velocity = vec![DMatrix::zeros(n, n); dim];
    for i in 0..n {
        for j in 0..n {
            let (mi, mj) = (species.mass(i), species.mass(j));
            let (ri, rj) = (mi * dens[i], mj * dens[j]);
            let (lij, lji) = (lambda[(i, j)], lambda[(j, i)]);
            let rho_den = ri * lij + rj * lji;
            let n_den = dens[i] * lij + dens[j] * lji;
            // Frequencies vanish together (zero temperature or a collisionless
            // mixture); the weights then take their frequency-independent limit.
            let (a_ij, b_ij, kin) = if rho_den > 0.0 && n_den > 0.0 {
                (ri * lij / rho_den, dens[i] * lij / n_den, ri * rj * lij * lji / (rho_den * n_den))
            } else {
                (mi / (mi + mj), 0.5, mi * mj / (2.0 * (mi + mj)))
            };
            alpha[(i, j)] = a_ij;
            beta[(i, j)] = b_ij;
            let mut du2 = 0.0;
            for k in 0..dim {
                let a_ji = 1.0 - a_ij;
                velocity[k][(i, j)] = a_ij * u[(i, k)] + a_ji * u[(j, k)];
                du2 += (u[(i, k)] - u[(j, k)]).powi(2);
            }
            temperature[(i, j)] = b_ij * t[i] + (1.0 - b_ij) * t[j] + kin * du2 / dim as f64;
        }
    }
    // the pair quantities are symmetric; keep them bitwise so
    for i in 0..n {
        for j in 0..i {
            temperature[(i, j)] = temperature[(j, i)];
            for c in velocity.iter_mut() {
                c[(i, j)] = c[(j, i)];
            }
        }
    }
    MixtureMoments {
        alpha,
        beta,
        velocity,
        temperature,
    }
}

/// Mixture velocities and temperatures of every pair.
pub fn mixture_moments(species: &SpeciesSet, state: &MomentState) -> Result<MixtureMoments> {
    check_species(species, state)?;
    let (_, lambda) = frequencies(species, state);
    Ok(mixture_from_lambda(species, state, &lambda))
}

/// Every pairwise coefficient of the backward-Euler moment system.
pub fn interaction_matrices(species: &SpeciesSet, state: &MomentState) -> Result<PairwiseCoefficients> {
    check_species(species, state)?;
    let n = state.len();
    let (psi, lambda) = frequencies(species, state);
    let mix = mixture_from_lambda(species, state, &lambda);
    let a = DMatrix::from_fn(n, n, |i, j| {
        let (i, j) = (i.min(j), i.max(j));
        species.c_a(i, j, state) * psi[(i, j)]
    });
    let b = DMatrix::from_fn(n, n, |i, j| {
        let (i, j) = (i.min(j), i.max(j));
        species.c_b(i, j, state) * psi[(i, j)]
    });
    let d_diag = DVector::from_fn(n, |i, _| a.row(i).sum());
    let f_diag = DVector::from_fn(n, |i, _| b.row(i).sum());
    let s = DMatrix::from_fn(n, n, |i, j| mix.velocity.iter().map(|c| c[(i, j)].powi(2)).sum());
    Ok(PairwiseCoefficients {
        lambda,
        psi,
        a,
        b,
        d_diag,
        f_diag,
        s,
        alpha: mix.alpha,
        beta: mix.beta,
        mix_velocity: mix.velocity,
        mix_temperature: mix.temperature,
    })
}

/// Bounds on the nonzero eigenvalues of `Z` and `Zhat`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectralBounds {
    /// Single species: `Z = Zhat = 0`.
    Degenerate,
    Interval {
        z_min: f64,
        z_max: f64,
        z_hat_min: f64,
        z_hat_max: f64,
    },
}

impl SpectralBounds {
    /// `min(z_min, zhat_min)`, or `None` for a single species.
    pub fn z(&self) -> Option<f64> {
        match *self {
            SpectralBounds::Degenerate => None,
            SpectralBounds::Interval { z_min, z_hat_min, .. } => Some(z_min.min(z_hat_min)),
        }
    }
}

fn matrix_extrema(m: &DMatrix<f64>) -> (f64, f64) {
    m.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Eigenvalue brackets from the extreme entries of `A`, `B` and the extreme
/// densities. The upper ends use the Laplacian bound `N max A / rho_min`.
pub fn spectral_bounds(species: &SpeciesSet, state: &MomentState) -> Result<SpectralBounds> {
    let coeffs = interaction_matrices(species, state)?;
    Ok(spectral_bounds_from(&coeffs, species, state))
}

pub(crate) fn spectral_bounds_from(coeffs: &PairwiseCoefficients, species: &SpeciesSet, state: &MomentState) -> SpectralBounds {
    let n = state.len();
    if n == 1 {
        return SpectralBounds::Degenerate;
    }
    let nf = n as f64;
    let rho = state.mass_densities(species);
    let dens = state.density();
    let (a_min, a_max) = matrix_extrema(&coeffs.a);
    let (b_min, b_max) = matrix_extrema(&coeffs.b);
    SpectralBounds::Interval {
        z_min: a_min * nf / rho.max(),
        z_max: a_max * nf / rho.min(),
        z_hat_min: b_min * nf / dens.max(),
        z_hat_max: b_max * nf / dens.min(),
    }
}
