//! Scenario files: a versioned TOML document describing one run.
//!
//! ```toml
//! format_version = 1
//! name = "sod"
//!
//! [units]                  # optional; defaults to nondimensional, scales 1
//! system = "si"            # "si" or "nondimensional"
//! mass = 6.6335209e-26     # divides species masses
//! length = 3.659e-10       # divides species diameters
//! density = 1e25           # divides region densities
//!
//! [[species]]              # one table per species, in order
//! name = "Ar"
//! mass = 6.6335209e-26
//! diameter = 3.659e-10
//!
//! [grid]
//! x_min = -1.0
//! x_max = 1.0
//! cells = 256
//! v_min = -10.0
//! v_max = 10.0
//! velocities = 192
//! boundary = "periodic"    # or "reflective"
//!
//! [physics]
//! epsilon = 1e-4
//! t_final = 0.2
//!
//! [integrator]
//! kind = "imex"            # or "explicit"
//! safety = 0.9
//!
//! [gst]                    # optional
//! tol = 1e-12
//! max_iter = 100
//! r = 0.9
//!
//! [initial]
//! trace_floor = 0.001      # optional lower bound on initial densities
//!
//! [[initial.regions]]      # cells whose centre lies in [x_min, x_max]
//! x_min = -1.0
//! x_max = 0.0
//! density = [1.0, 0.0]     # one entry per species
//! velocity = [0.0, 0.0]
//! temperature = [1.0, 1.0]
//!
//! [output]                 # optional
//! cadence = 0              # snapshot every this many steps; 0 = first and last
//! directory = "output"
//!
//! [comparison]             # optional exact shock-tube overlay
//! kind = "sod"
//! gamma = 1.6666666666666667
//! x_mid = 0.0
//! left = [1.0, 0.0, 1.0]   # total (n, u, T)
//! right = [0.125, 0.0, 0.8]
//! ```
//!
//! Temperatures, velocities, `epsilon` and `t_final` are used as written.
//! A cell takes the first region containing its centre.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::gst::GstConfig;
use crate::integrate::{Integrator, Problem, RunOptions, StepControl};
use crate::kinetic::{ChuState, VelocityGrid};
use crate::mixture::{MomentState, Species, SpeciesSet};
use crate::oracle::{PeriodicShockTube, RiemannState};
use crate::transport::{Boundary, SpatialGrid};

pub const FORMAT_VERSION: u32 = 1;

/// Scenario files shipped with the library.
pub mod bundled {
    pub const SOD: &str = include_str!("../scenarios/sod.cfg");
    pub const AKX: &str = include_str!("../scenarios/akx.cfg");

    pub fn get(name: &str) -> Option<&'static str> {
        match name {
            "sod" => Some(SOD),
            "akx" => Some(AKX),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error{}: {message}", line_suffix(*.line))]
    Parse { line: Option<usize>, message: String },
    #[error("invalid configuration: {}", join_fields(.0))]
    Invalid(Vec<FieldError>),
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

fn join_fields(errs: &[FieldError]) -> String {
    errs.iter().map(|e| format!("{}: {}", e.field, e.message)).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitSystem {
    Nondimensional,
    Si,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub system: UnitSystem,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "one")]
    pub length: f64,
    #[serde(default = "one")]
    pub density: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for Units {
    fn default() -> Self {
        Self {
            system: UnitSystem::Nondimensional,
            mass: 1.0,
            length: 1.0,
            density: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesEntry {
    pub name: String,
    pub mass: f64,
    pub diameter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub cells: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub velocities: usize,
    pub boundary: Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    pub epsilon: f64,
    pub t_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub kind: Integrator,
    #[serde(default = "default_safety")]
    pub safety: f64,
}

fn default_safety() -> f64 {
    StepControl::default().safety
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GstSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub r: f64,
}

impl Default for GstSettings {
    fn default() -> Self {
        let g = GstConfig::default();
        Self {
            tol: g.tol,
            max_iter: g.max_iter,
            r: g.r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub density: Vec<f64>,
    pub velocity: Vec<f64>,
    pub temperature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_floor: Option<f64>,
    pub regions: Vec<Region>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub cadence: usize,
    pub directory: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            cadence: 0,
            directory: "output".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComparisonKind {
    Sod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonConfig {
    pub kind: ComparisonKind,
    pub gamma: f64,
    pub x_mid: f64,
    /// Mixture totals `(n, u, T)` left of `x_mid`.
    pub left: [f64; 3],
    pub right: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub format_version: u32,
    pub name: String,
    #[serde(default)]
    pub units: Units,
    pub species: Vec<SpeciesEntry>,
    pub grid: GridConfig,
    pub physics: PhysicsConfig,
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub gst: GstSettings,
    pub initial: InitialConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonConfig>,
}

/// Everything needed to start a run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub problem: Problem,
    pub initial: ChuState,
    pub options: RunOptions,
    pub comparison: Option<PeriodicShockTube>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ScenarioConfig {
    /// Parses and validates.
    pub fn parse(text: &str) -> std::result::Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::parse(&text)?)
    }

    /// Canonical text form; `parse(&cfg.to_toml())` gives back `cfg`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario fields are all representable in TOML")
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        let mut errs = Vec::new();
        let mut bad = |field: &str, message: String| {
            errs.push(FieldError {
                field: field.into(),
                message,
            })
        };
        let positive = |v: f64| v > 0.0 && v.is_finite();

        if self.format_version != FORMAT_VERSION {
            bad("format_version", format!("unsupported version {}, expected {FORMAT_VERSION}", self.format_version));
        }
        if self.name.trim().is_empty() {
            bad("name", "must not be empty".into());
        }
        for (key, v) in [("units.mass", self.units.mass), ("units.length", self.units.length), ("units.density", self.units.density)] {
            if !positive(v) {
                bad(key, format!("scale {v} must be positive"));
            }
        }
        if self.species.is_empty() {
            bad("species", "at least one species is required".into());
        }
        for (i, s) in self.species.iter().enumerate() {
            if !positive(s.mass) {
                bad(&format!("species[{i}].mass"), format!("{} must be positive", s.mass));
            }
            if !(s.diameter >= 0.0 && s.diameter.is_finite()) {
                bad(&format!("species[{i}].diameter"), format!("{} must be non-negative", s.diameter));
            }
            if self.species[..i].iter().any(|o| o.name == s.name) {
                bad(&format!("species[{i}].name"), format!("duplicate species name {:?}", s.name));
            }
        }
        let g = &self.grid;
        if !(g.x_max > g.x_min) || !g.x_min.is_finite() || !g.x_max.is_finite() {
            bad("grid.x_max", format!("spatial range [{}, {}] is empty", g.x_min, g.x_max));
        }
        if g.cells < 4 {
            bad("grid.cells", format!("{} is below the minimum of 4", g.cells));
        }
        if !(g.v_max > g.v_min) || !g.v_min.is_finite() || !g.v_max.is_finite() {
            bad("grid.v_max", format!("velocity range [{}, {}] is empty", g.v_min, g.v_max));
        }
        if g.velocities < 2 {
            bad("grid.velocities", format!("{} is below the minimum of 2", g.velocities));
        }
        if g.boundary == Boundary::Reflective && (g.v_min + g.v_max).abs() > 1e-12 * g.v_min.abs().max(g.v_max.abs()) {
            bad("grid.boundary", "reflective walls need a velocity range symmetric about zero".into());
        }
        if !positive(self.physics.epsilon) {
            bad("physics.epsilon", format!("{} must be positive", self.physics.epsilon));
        }
        if !(self.physics.t_final >= 0.0 && self.physics.t_final.is_finite()) {
            bad("physics.t_final", format!("{} must be non-negative", self.physics.t_final));
        }
        if !(self.integrator.safety > 0.0 && self.integrator.safety <= 1.0) {
            bad("integrator.safety", format!("{} must lie in (0, 1]", self.integrator.safety));
        }
        if !positive(self.gst.tol) {
            bad("gst.tol", format!("{} must be positive", self.gst.tol));
        }
        if self.gst.max_iter == 0 {
            bad("gst.max_iter", "must be at least 1".into());
        }
        if !(self.gst.r > 0.0 && self.gst.r < 1.0) {
            bad("gst.r", format!("{} must lie in (0, 1)", self.gst.r));
        }

        let floor = self.initial.trace_floor.unwrap_or(0.0);
        if let Some(f) = self.initial.trace_floor {
            if !positive(f) {
                bad("initial.trace_floor", format!("{f} must be positive"));
            }
        }
        if self.initial.regions.is_empty() {
            bad("initial.regions", "at least one region is required".into());
        }
        let ns = self.species.len();
        for (r, reg) in self.initial.regions.iter().enumerate() {
            let key = |f: &str| format!("initial.regions[{r}].{f}");
            if !(reg.x_max >= reg.x_min) {
                bad(&key("x_max"), format!("region [{}, {}] is empty", reg.x_min, reg.x_max));
            }
            for (f, v) in [("density", &reg.density), ("velocity", &reg.velocity), ("temperature", &reg.temperature)] {
                if v.len() != ns {
                    bad(&key(f), format!("has {} entries for {ns} species", v.len()));
                }
            }
            for (i, &n) in reg.density.iter().enumerate() {
                if !(n >= 0.0 && n.is_finite()) || n.max(floor) <= 0.0 {
                    bad(&key("density"), format!("entry {i} = {n} is not positive (and no trace floor lifts it)"));
                }
            }
            for (i, &t) in reg.temperature.iter().enumerate() {
                if !positive(t) {
                    bad(&key("temperature"), format!("entry {i} = {t} must be positive"));
                }
            }
            if reg.velocity.iter().any(|v| !v.is_finite()) {
                bad(&key("velocity"), "entries must be finite".into());
            }
        }
        if g.cells >= 4 && g.x_max > g.x_min {
            let dx = (g.x_max - g.x_min) / g.cells as f64;
            if let Some(k) = (0..g.cells).find(|&k| self.region_of(g.x_min + (k as f64 + 0.5) * dx).is_none()) {
                bad("initial.regions", format!("cell {k} is not covered by any region"));
            }
        }
        if let Some(c) = &self.comparison {
            if !(c.gamma > 1.0) {
                bad("comparison.gamma", format!("{} must exceed 1", c.gamma));
            }
            if !(c.x_mid > g.x_min && c.x_mid < g.x_max) {
                bad("comparison.x_mid", "must lie inside the spatial range".into());
            }
            if g.boundary != Boundary::Periodic {
                bad("comparison.kind", "the shock-tube overlay assumes periodic boundaries".into());
            }
            for (f, s) in [("comparison.left", c.left), ("comparison.right", c.right)] {
                if !(positive(s[0]) && positive(s[2]) && s[1].is_finite()) {
                    bad(f, format!("({}, {}, {}) is not a physical state", s[0], s[1], s[2]));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    fn region_of(&self, x: f64) -> Option<&Region> {
        self.initial.regions.iter().find(|r| r.x_min <= x && x <= r.x_max)
    }

    /// Species with masses and diameters in scenario units.
    pub fn species_set(&self) -> Result<SpeciesSet> {
        SpeciesSet::new(
            self.species
                .iter()
                .map(|s| Species::new(s.name.clone(), s.mass / self.units.mass, s.diameter / self.units.length))
                .collect(),
        )
    }

    /// Per-cell initial moments after the density scale and trace floor.
    pub fn initial_moments(&self, space: &SpatialGrid) -> Result<Vec<MomentState>> {
        let floor = self.initial.trace_floor.unwrap_or(0.0);
        space
            .centers()
            .into_iter()
            .enumerate()
            .map(|(k, x)| {
                let reg = self
                    .region_of(x)
                    .ok_or_else(|| Error::Contract(format!("cell {k} is not covered by any region")))?;
                let dens: Vec<f64> = reg.density.iter().map(|n| (n / self.units.density).max(floor)).collect();
                // velocity along the slab normal only
                let mut vel = Vec::with_capacity(3 * dens.len());
                for &u in &reg.velocity {
                    vel.extend([u, 0.0, 0.0]);
                }
                MomentState::from_slices(&dens, &vel, 3, &reg.temperature)
            })
            .collect()
    }

    pub fn build(&self, exec: Execution) -> Result<Scenario> {
        self.validate()?;
        let species = self.species_set()?;
        let g = &self.grid;
        let space = SpatialGrid::new(g.x_min, g.x_max, g.cells, g.boundary)?;
        let velocity = VelocityGrid::new(g.v_min, g.v_max, g.velocities)?;
        let moments = self.initial_moments(&space)?;
        let initial = ChuState::from_moments(&species, &moments, &velocity)?;
        let problem = Problem {
            species,
            space,
            velocity,
            eps: self.physics.epsilon,
            gst: GstConfig {
                tol: self.gst.tol,
                max_iter: self.gst.max_iter,
                r: self.gst.r,
                floor_enforce: true,
            },
            control: StepControl {
                safety: self.integrator.safety,
            },
            exec,
        };
        problem.validate()?;
        let comparison = self
            .comparison
            .as_ref()
            .map(|c| {
                let st = |s: [f64; 3]| RiemannState::new(s[0], s[1], s[0] * s[2]);
                PeriodicShockTube::new(st(c.left)?, st(c.right)?, c.gamma, g.x_min, g.x_max, c.x_mid)
            })
            .transpose()?;
        Ok(Scenario {
            config: self.clone(),
            problem,
            initial,
            options: RunOptions {
                integrator: self.integrator.kind,
                t_final: self.physics.t_final,
                snapshot_every: self.output.cadence,
            },
            comparison,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_names(e: ConfigError) -> Vec<String> {
        match e {
            ConfigError::Invalid(v) => v.into_iter().map(|f| f.field).collect(),
            ConfigError::Parse { message, .. } => vec![message],
        }
    }

    #[test]
    fn bundled_sod_matches_the_experiment() {
        let c = ScenarioConfig::parse(bundled::SOD).unwrap();
        assert_eq!((c.grid.x_min, c.grid.x_max, c.grid.cells), (-1.0, 1.0, 256));
        assert_eq!((c.grid.v_min, c.grid.v_max, c.grid.velocities), (-10.0, 10.0, 192));
        assert_eq!((c.physics.epsilon, c.physics.t_final), (1e-4, 0.2));
        assert_eq!(c.grid.boundary, Boundary::Periodic);
        let s = c.build(Execution::Sequential).unwrap();
        let m = c.initial_moments(&s.problem.space).unwrap();
        assert_eq!(m[0].density().as_slice(), &[1.0, 0.001]);
        assert_eq!(m[255].density().as_slice(), &[0.001, 0.125]);
        assert_eq!(m[255].temperature().as_slice(), &[0.8, 0.8]);
        assert!(s.comparison.is_some());
    }

    #[test]
    fn bundled_akx_matches_the_experiment() {
        let c = ScenarioConfig::parse(bundled::AKX).unwrap();
        let masses: Vec<f64> = c.species.iter().map(|s| s.mass).collect();
        let diam: Vec<f64> = c.species.iter().map(|s| s.diameter).collect();
        assert_eq!(masses, vec![6.6335209e-26, 13.914984e-26, 21.801714e-26]);
        assert_eq!(diam, vec![3.659e-10, 4.199e-10, 4.939e-10]);
        assert_eq!(c.grid.boundary, Boundary::Reflective);
        assert_eq!((c.grid.v_min, c.grid.v_max), (-30.0, 30.0));
        assert_eq!(c.physics.t_final, 0.1);
        let s = c.build(Execution::Sequential).unwrap();
        assert!((s.problem.species.mass(0) - 1.0).abs() < 1e-15);
        let m = c.initial_moments(&s.problem.space).unwrap();
        assert!((m[0].density() - nalgebra::DVector::from_vec(vec![1.0, 1.0, 0.1])).amax() < 1e-12);
        assert_eq!(m[200].temperature().as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn missing_final_time_names_the_field() {
        let text = bundled::SOD.replace("t_final = 0.2\n", "");
        let err = ScenarioConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("t_final"), "{err}");
    }

    #[test]
    fn parse_errors_carry_lines() {
        let text = bundled::SOD.replacen("cells = 256", "cells = \"many\"", 1);
        match ScenarioConfig::parse(&text).unwrap_err() {
            ConfigError::Parse { line: Some(l), .. } => {
                assert_eq!(text.lines().nth(l - 1).unwrap().trim(), "cells = \"many\"");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn semantic_errors_are_collected() {
        let mut c = ScenarioConfig::parse(bundled::SOD).unwrap();
        c.physics.epsilon = 0.0;
        c.grid.cells = 2;
        c.gst.r = 1.5;
        c.initial.regions[0].temperature.pop();
        let names = field_names(c.validate().unwrap_err());
        for f in ["physics.epsilon", "grid.cells", "gst.r", "initial.regions[0].temperature"] {
            assert!(names.iter().any(|n| n == f), "{f} not in {names:?}");
        }
    }

    #[test]
    fn reflective_needs_symmetric_velocities() {
        let mut c = ScenarioConfig::parse(bundled::AKX).unwrap();
        c.grid.v_min = -20.0;
        assert!(field_names(c.validate().unwrap_err()).contains(&"grid.boundary".to_string()));
    }

    #[test]
    fn uncovered_cells_are_rejected() {
        let mut c = ScenarioConfig::parse(bundled::SOD).unwrap();
        c.initial.regions.truncate(1);
        assert!(field_names(c.validate().unwrap_err()).contains(&"initial.regions".to_string()));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = bundled::SOD.replacen("[physics]", "[physics]\ntypo = 1", 1);
        assert!(matches!(ScenarioConfig::parse(&text), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn canonical_round_trip() {
        for text in [bundled::SOD, bundled::AKX] {
            let c = ScenarioConfig::parse(text).unwrap();
            let again = ScenarioConfig::parse(&c.to_toml()).unwrap();
            assert_eq!(c, again);
            assert_eq!(c.to_toml(), again.to_toml());
        }
    }

    #[test]
    fn defaults_fill_optional_tables() {
        let mut c = ScenarioConfig::parse(bundled::SOD).unwrap();
        c.comparison = None;
        c.initial.trace_floor = Some(0.001);
        let text = c.to_toml();
        let stripped: String = text
            .split("\n[")
            .filter(|t| !t.starts_with("gst]") && !t.starts_with("output]"))
            .collect::<Vec<_>>()
            .join("\n[");
        let back = ScenarioConfig::parse(&stripped).unwrap();
        assert_eq!(back.gst, GstSettings::default());
        assert_eq!(back.output, OutputConfig::default());
    }
}
