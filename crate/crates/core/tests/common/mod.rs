#![allow(dead_code)]

use mbgk::mixture::{MomentState, Species, SpeciesSet};
use proptest::prelude::*;
use rand::Rng;

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

pub fn random_species(rng: &mut impl Rng, n: usize) -> SpeciesSet {
    SpeciesSet::new(
        (0..n)
            .map(|i| Species::new(format!("s{i}"), log_uniform(rng, 0.5, 20.0), rng.gen_range(0.5..2.0)))
            .collect(),
    )
    .unwrap()
}

pub fn random_state(rng: &mut impl Rng, n: usize, dim: usize) -> MomentState {
    let dens: Vec<f64> = (0..n).map(|_| log_uniform(rng, 0.05, 5.0)).collect();
    let vel: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let temp: Vec<f64> = (0..n).map(|_| log_uniform(rng, 0.2, 5.0)).collect();
    MomentState::from_slices(&dens, &vel, dim, &temp).unwrap()
}

/// A mixture and a state of the same species count.
#[derive(Debug, Clone)]
pub struct Case {
    pub species: SpeciesSet,
    pub state: MomentState,
}

pub fn case_strategy(n_lo: usize, n_hi: usize, dims: &'static [usize]) -> impl Strategy<Value = Case> {
    (n_lo..=n_hi, proptest::sample::select(dims)).prop_flat_map(|(n, dim)| {
        (
            proptest::collection::vec((-0.7f64..3.0, 0.5f64..2.0), n),
            proptest::collection::vec(-3.0f64..1.6, n),
            proptest::collection::vec(-1.5f64..1.5, n * dim),
            proptest::collection::vec(-1.6f64..1.6, n),
        )
            .prop_map(move |(sp, ln_n, u, ln_t)| {
                let species = SpeciesSet::new(
                    sp.iter()
                        .enumerate()
                        .map(|(i, &(lm, d))| Species::new(format!("s{i}"), lm.exp(), d))
                        .collect(),
                )
                .unwrap();
                let dens: Vec<f64> = ln_n.iter().map(|v| v.exp()).collect();
                let temp: Vec<f64> = ln_t.iter().map(|v| v.exp()).collect();
                let state = MomentState::from_slices(&dens, &u, dim, &temp).unwrap();
                Case { species, state }
            })
    })
}

/// Largest relative change of total momentum and energy between two states.
pub fn conservation_drift(species: &SpeciesSet, a: &MomentState, b: &MomentState) -> (f64, f64) {
    let (pa, pb) = (a.total_momentum(species), b.total_momentum(species));
    let scale: f64 = (0..a.len())
        .map(|i| a.mass_density(species, i) * a.velocity().row(i).norm())
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    let dm = (pa - pb).amax() / scale;
    let (ea, eb) = (a.total_energy(species), b.total_energy(species));
    (dm, (ea - eb).abs() / ea)
}
