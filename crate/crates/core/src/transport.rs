//! Second-order upwind finite-volume streaming `-v df/dx` with minmod slopes.

use crate::error::{Error, Result};
use crate::exec::{for_each_chunk_mut, Execution};
use crate::kinetic::{ChuState, VelocityGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    /// Specular walls: ghost cells mirror the interior with `v -> -v`.
    Reflective,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    x_min: f64,
    x_max: f64,
    cells: usize,
    dx: f64,
    boundary: Boundary,
}

impl SpatialGrid {
    pub fn new(x_min: f64, x_max: f64, cells: usize, boundary: Boundary) -> Result<Self> {
        if cells < 4 {
            return Err(Error::Domain(format!("spatial grid needs at least 4 cells, got {cells}")));
        }
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::Domain(format!("empty spatial range [{x_min}, {x_max}]")));
        }
        Ok(Self {
            x_min,
            x_max,
            cells,
            dx: (x_max - x_min) / cells as f64,
            boundary,
        })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.x_min, self.x_max)
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn center(&self, k: usize) -> f64 {
        self.x_min + (k as f64 + 0.5) * self.dx
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|k| self.center(k)).collect()
    }

    /// Checks that the boundary kind is compatible with `vgrid`.
    pub fn check_velocity_grid(&self, vgrid: &VelocityGrid) -> Result<()> {
        if self.boundary == Boundary::Reflective && !vgrid.is_symmetric() {
            let (lo, hi) = vgrid.bounds();
            return Err(Error::Contract(format!(
                "reflective walls need a velocity grid symmetric about zero, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    /// Source cell feeding ghost-extended index `k` (which may lie up to
    /// two cells outside the domain) and whether velocities are mirrored.
    pub fn ghost_cell(&self, k: isize) -> (usize, bool) {
        let n = self.cells as isize;
        if (0..n).contains(&k) {
            return (k as usize, false);
        }
        match self.boundary {
            Boundary::Periodic => (k.rem_euclid(n) as usize, false),
            Boundary::Reflective => ((if k < 0 { -1 - k } else { 2 * n - 1 - k }) as usize, true),
        }
    }

    /// Source cell and velocity node feeding ghost index `k` at velocity node `l`.
    pub fn ghost(&self, k: isize, l: usize, vgrid: &VelocityGrid) -> (usize, usize) {
        let (c, mirrored) = self.ghost_cell(k);
        (c, if mirrored { vgrid.mirror(l) } else { l })
    }
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// `-v (F_{k+1/2} - F_{k-1/2}) / dx` for one field laid out like a
/// [`ChuState`] component.
fn divergence_field(
    field: &[f64],
    ns: usize,
    grid: &SpatialGrid,
    vgrid: &VelocityGrid,
    exec: Execution,
    out: &mut [f64],
) {
    let nv = vgrid.len();
    let inv_dx = 1.0 / grid.dx();
    for_each_chunk_mut(exec, out, ns * nv, |k, cell| {
        let src: Vec<(usize, bool)> = (-2isize..=2).map(|o| grid.ghost_cell(k as isize + o)).collect();
        let mut rows = vec![0.0; 5 * nv];
        for i in 0..ns {
            for (o, &(c, mirrored)) in src.iter().enumerate() {
                let from = &field[(c * ns + i) * nv..(c * ns + i + 1) * nv];
                let to = &mut rows[o * nv..(o + 1) * nv];
                if mirrored {
                    to.iter_mut().zip(from.iter().rev()).for_each(|(t, f)| *t = *f);
                } else {
                    to.copy_from_slice(from);
                }
            }
            let (r0, rest) = rows.split_at(nv);
            let (r1, rest) = rest.split_at(nv);
            let (r2, rest) = rest.split_at(nv);
            let (r3, r4) = rest.split_at(nv);
            let dst = &mut cell[i * nv..(i + 1) * nv];
            for (l, (d, &v)) in dst.iter_mut().zip(vgrid.nodes()).enumerate() {
                let f = [r0[l], r1[l], r2[l], r3[l], r4[l]];
                let slope = |c: usize| minmod(f[c + 1] - f[c], f[c] - f[c - 1]);
                let (left, right) = if v > 0.0 {
                    (f[1] + 0.5 * slope(1), f[2] + 0.5 * slope(2))
                } else {
                    (f[2] - 0.5 * slope(2), f[3] - 0.5 * slope(3))
                };
                *d = -v * (right - left) * inv_dx;
            }
        }
    });
}

/// Streaming term of both Chu components.
pub fn advect(state: &ChuState, grid: &SpatialGrid, vgrid: &VelocityGrid, exec: Execution) -> Result<ChuState> {
    if state.cells() != grid.cells() || state.nv() != vgrid.len() {
        return Err(Error::Contract("state shape does not match the grids".into()));
    }
    grid.check_velocity_grid(vgrid)?;
    let mut out = ChuState::zeros(state.cells(), state.species(), state.nv());
    divergence_field(&state.g, state.species(), grid, vgrid, exec, &mut out.g);
    divergence_field(&state.h, state.species(), grid, vgrid, exec, &mut out.h);
    Ok(out)
}

/// Two ghost cells on each side: `[left2, left1, right1, right2]`, each a
/// full cell slice of `g` followed by the same for `h`.
pub fn apply_boundary(state: &ChuState, grid: &SpatialGrid, vgrid: &VelocityGrid) -> Result<[ChuState; 4]> {
    grid.check_velocity_grid(vgrid)?;
    let n = grid.cells() as isize;
    let ghost_cell = |k: isize| {
        let mut g = ChuState::zeros(1, state.species(), state.nv());
        for i in 0..state.species() {
            for l in 0..state.nv() {
                let (c, lv) = grid.ghost(k, l, vgrid);
                g.g[i * state.nv() + l] = state.g(c, i)[lv];
                g.h[i * state.nv() + l] = state.h(c, i)[lv];
            }
        }
        g
    };
    Ok([ghost_cell(-2), ghost_cell(-1), ghost_cell(n), ghost_cell(n + 1)])
}
