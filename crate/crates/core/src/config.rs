//! Run configuration: TOML schema, validation and construction of the run
//! inputs (lattice, mesh, collision engine, initial field, inflow data).

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision::{build_kernel_with_cap, CollisionEngine, KernelSpec};
use crate::error::{Error, Result};
use crate::grid::{build_velocity_grid, DistributionField, SpatialMesh, VelocityGrid, Wall};
use crate::hydro::{self, BoundaryProfile, FluctuationProfile, ScalingConfig};
use crate::transport::{
    cfl_limit, characteristic_dt, BoundaryData, TimeProfile, TransportScheme, WallInflow,
    DEFAULT_INTEGRABILITY_CAP,
};

/// Default cap on the cached collision tables.
pub const DEFAULT_MEMORY_CAP: u64 = 2 << 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_per_axis: usize,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
}

fn default_v_max() -> f64 {
    6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    #[serde(default = "default_length")]
    pub length: f64,
    pub n_cells: usize,
}

fn default_length() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_end: f64,
    /// Step size. When absent it is derived from `cfl` (upwind) or from the
    /// smallest integer-shift step (characteristic).
    #[serde(default)]
    pub dt: Option<f64>,
    /// Fraction of the CFL limit used for each half transport substep.
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default)]
    pub scheme: TransportScheme,
}

fn default_cfl() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Equilibrium,
    Vacuum,
    /// `M (1 + ε a g⁰)` for a catalog profile `g⁰`.
    Fluctuation { profile: FluctuationProfile, amplitude: f64 },
    /// Spatially uniform `½ (M_{+s e_x, T} + M_{−s e_x, T})`.
    TwoBump { shift: f64, temperature: f64 },
    /// Spatially uniform Gaussian with per-axis temperatures.
    Anisotropic { temperatures: [f64; 3] },
    /// `M (1 + a ξ)` with `ξ` uniform in `(−1, 1)` per cell and node.
    Random { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryConfig {
    Equilibrium,
    Vacuum,
    /// `Z = M (1 + ε^{1+p} ẑ)` on both walls.
    Prepared {
        profile: BoundaryProfile,
        #[serde(default = "default_exponent")]
        exponent: f64,
    },
    /// `Z = ρ M` on one wall, vacuum on the other.
    OneSided {
        wall: WallName,
        #[serde(default = "default_density")]
        density: f64,
    },
    /// `Z = M (1 + a cos(ω t))` on both walls.
    Oscillating { amplitude: f64, omega: f64 },
}

fn default_exponent() -> f64 {
    0.5
}

fn default_density() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WallName {
    Left,
    Right,
}

impl From<WallName> for Wall {
    fn from(w: WallName) -> Wall {
        match w {
            WallName::Left => Wall::Left,
            WallName::Right => Wall::Right,
        }
    }
}

fn default_cap() -> f64 {
    DEFAULT_INTEGRABILITY_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// History rows are written every `cadence` steps and at the end.
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    #[serde(default)]
    pub history: Option<PathBuf>,
    #[serde(default)]
    pub summary: Option<PathBuf>,
    /// Keep every wall trace piece in memory.
    #[serde(default)]
    pub record_traces: bool,
}

fn default_cadence() -> usize {
    10
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            cadence: default_cadence(),
            history: None,
            summary: None,
            record_traces: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Knudsen number; 1 for unscaled runs.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_memory_cap")]
    pub memory_cap_bytes: u64,
    /// Cap on `∫ Z (1 + |v|² + |log Z|) dμ` per wall.
    #[serde(default = "default_cap")]
    pub integrability_cap: f64,
    pub grid: GridConfig,
    pub mesh: MeshConfig,
    pub kernel: KernelSpec,
    pub time: TimeConfig,
    pub initial: InitialData,
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_epsilon() -> f64 {
    1.0
}

fn default_memory_cap() -> u64 {
    DEFAULT_MEMORY_CAP
}

/// Everything a run needs, built from a validated [`RunConfig`].
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub grid: VelocityGrid,
    pub mesh: SpatialMesh,
    pub engine: CollisionEngine,
    pub initial: DistributionField,
    pub boundary: BoundaryData,
    pub dt: f64,
    pub n_steps: usize,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks that do not need the lattice.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1] (got {})", self.epsilon)));
        }
        if !(self.time.t_end > 0.0) || !self.time.t_end.is_finite() {
            return Err(Error::Config(format!("t_end must be positive (got {})", self.time.t_end)));
        }
        if let Some(dt) = self.time.dt {
            if !(dt > 0.0) || dt > self.time.t_end * (1.0 + 1e-12) {
                return Err(Error::Config(format!("need 0 < dt ≤ t_end (got dt = {dt})")));
            }
        }
        if !(self.time.cfl > 0.0 && self.time.cfl <= 1.0) {
            return Err(Error::Config(format!("cfl must lie in (0, 1] (got {})", self.time.cfl)));
        }
        if self.output.cadence == 0 {
            return Err(Error::Config("output cadence must be at least 1".into()));
        }
        if let BoundaryConfig::Prepared { exponent, .. } = self.boundary {
            if !(exponent >= 0.0) {
                return Err(Error::Config(format!("boundary exponent must be nonnegative (got {exponent})")));
            }
        }
        self.kernel.validate()
    }

    /// Builds the lattice, kernel and data, and checks the step-size
    /// preconditions against them.
    pub fn build(&self) -> Result<RunSetup> {
        self.validate()?;
        let grid = build_velocity_grid(self.grid.n_per_axis, self.grid.v_max)?;
        let mesh = SpatialMesh::new(self.mesh.length, self.mesh.n_cells)?;
        let engine = build_kernel_with_cap(&self.kernel, &grid, self.memory_cap_bytes)?;
        let initial = self.initial_field(&grid, &mesh)?;
        let boundary = self.boundary_data(&grid)?;
        boundary.check_integrability(&grid, 0.0, self.integrability_cap)?;
        let speed = 1.0 / self.epsilon;
        let dt = match (self.time.dt, self.time.scheme) {
            (Some(dt), _) => dt,
            (None, TransportScheme::Upwind) => 2.0 * self.time.cfl * cfl_limit(&grid, &mesh, speed),
            (None, TransportScheme::Characteristic) => 2.0 * characteristic_dt(&grid, &mesh, speed),
        };
        let dt = dt.min(self.time.t_end);
        let n_steps = ((self.time.t_end / dt) - 1e-9).ceil().max(1.0) as usize;
        match self.time.scheme {
            TransportScheme::Upwind => {
                let limit = 2.0 * cfl_limit(&grid, &mesh, speed);
                if dt > limit * (1.0 + 1e-12) {
                    return Err(Error::Cfl { dt, admissible: limit });
                }
            }
            TransportScheme::Characteristic => {
                let unit = characteristic_dt(&grid, &mesh, speed);
                let half = 0.5 * dt / unit;
                let last = self.time.t_end - (n_steps - 1) as f64 * dt;
                if (half - half.round()).abs() > 1e-9 * half.max(1.0) || half.round() < 1.0 {
                    return Err(Error::Config(format!(
                        "characteristic transport needs dt/2 to be a multiple of {unit:e} (got dt = {dt:e})"
                    )));
                }
                if (last - dt).abs() > 1e-9 * dt {
                    return Err(Error::Config(format!(
                        "characteristic transport needs t_end to be a multiple of dt = {dt:e}"
                    )));
                }
            }
        }
        if !engine.is_bgk() && !engine.is_free() {
            let eps2 = self.epsilon * self.epsilon;
            let rate = initial
                .cells()
                .map(|c| engine.max_loss_rate(c))
                .fold(0.0, f64::max);
            if rate > 0.0 && dt * rate / eps2 > 0.5 {
                return Err(Error::Positivity {
                    dt,
                    admissible: 0.5 * eps2 / rate,
                });
            }
        }
        Ok(RunSetup {
            grid,
            mesh,
            engine,
            initial,
            boundary,
            dt,
            n_steps,
        })
    }

    fn scaling(&self) -> ScalingConfig {
        ScalingConfig::new(self.epsilon)
    }

    pub fn initial_field(&self, grid: &VelocityGrid, mesh: &SpatialMesh) -> Result<DistributionField> {
        let nc = mesh.n_cells();
        let nv = grid.len();
        let field = match &self.initial {
            InitialData::Equilibrium => DistributionField::uniform(nc, grid.maxwellian()),
            InitialData::Vacuum => DistributionField::zeros(nc, nv),
            InitialData::Fluctuation { profile, amplitude } => {
                let cfg = ScalingConfig {
                    initial: *profile,
                    amplitude: *amplitude,
                    ..self.scaling()
                };
                hydro::initial_field(&cfg, grid, mesh)?
            }
            InitialData::TwoBump { shift, temperature } => {
                if !(*temperature > 0.0) {
                    return Err(Error::Config("two-bump temperature must be positive".into()));
                }
                let profile = grid.sample(|v| {
                    let bump = |s: f64| gaussian([v[0] - s, v[1], v[2]], *temperature);
                    0.5 * (bump(*shift) + bump(-*shift))
                });
                DistributionField::uniform(nc, &profile)
            }
            InitialData::Anisotropic { temperatures } => {
                if temperatures.iter().any(|t| !(*t > 0.0)) {
                    return Err(Error::Config("anisotropic temperatures must be positive".into()));
                }
                let profile = grid.sample(|v| {
                    (0..3)
                        .map(|a| {
                            let t = temperatures[a];
                            (-v[a] * v[a] / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t).sqrt()
                        })
                        .product()
                });
                DistributionField::uniform(nc, &profile)
            }
            InitialData::Random { amplitude } => {
                if !(*amplitude >= 0.0 && *amplitude < 1.0) {
                    return Err(Error::Config("random amplitude must lie in [0, 1)".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let m = grid.maxwellian();
                let values = (0..nc * nv)
                    .map(|idx| m[idx % nv] * (1.0 + amplitude * rng.gen_range(-1.0..1.0)))
                    .collect();
                DistributionField::from_values(nc, nv, values)?
            }
        };
        field.check_admissible()?;
        Ok(field)
    }

    pub fn boundary_data(&self, grid: &VelocityGrid) -> Result<BoundaryData> {
        match &self.boundary {
            BoundaryConfig::Equilibrium => Ok(BoundaryData::equilibrium(grid)),
            BoundaryConfig::Vacuum => Ok(BoundaryData::vacuum(grid)),
            BoundaryConfig::Prepared { profile, exponent } => {
                let cfg = ScalingConfig {
                    boundary: *profile,
                    exponent: *exponent,
                    ..self.scaling()
                };
                hydro::boundary_data(&cfg, grid)
            }
            BoundaryConfig::OneSided { wall, density } => {
                if !(*density >= 0.0) {
                    return Err(Error::Config("one-sided inflow density must be nonnegative".into()));
                }
                let z = grid.maxwellian().iter().map(|m| density * m).collect();
                BoundaryData::one_sided(grid, (*wall).into(), z)
            }
            BoundaryConfig::Oscillating { amplitude, omega } => {
                let m = grid.maxwellian().to_vec();
                let pulse: Vec<f64> = m.iter().map(|x| amplitude * x).collect();
                let profile = TimeProfile::Cosine { omega: *omega };
                let wall = WallInflow::modulated(m, pulse, profile);
                BoundaryData::new(wall.clone(), wall, grid)
            }
        }
    }
}

/// Isotropic Gaussian with unit density and temperature `t`.
fn gaussian(v: [f64; 3], t: f64) -> f64 {
    let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    (-v2 / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t).powf(1.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        [grid]
        n_per_axis = 6
        [mesh]
        n_cells = 10
        [kernel]
        family = { kind = "bgk", tau = 1.0 }
        [time]
        t_end = 0.1
        [initial]
        kind = "equilibrium"
        [boundary]
        kind = "equilibrium"
    "#;

    #[test]
    fn minimal_config_builds() {
        let cfg = RunConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg.epsilon, 1.0);
        let setup = cfg.build().unwrap();
        assert!(setup.dt > 0.0 && setup.n_steps as f64 * setup.dt >= 0.1 - 1e-12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = BASE.replace("n_cells = 10", "n_cells = 10\nwidth = 3");
        assert!(matches!(RunConfig::from_toml_str(&text), Err(Error::Config(_))));
    }

    #[test]
    fn roundtrips_through_toml() {
        let cfg = RunConfig::from_toml_str(BASE).unwrap();
        let again = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn oversize_step_reports_cfl() {
        let text = BASE.replace("t_end = 0.1", "t_end = 1.0\ndt = 0.5");
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        assert!(matches!(cfg.build(), Err(Error::Cfl { .. })));
    }

    #[test]
    fn random_data_depends_on_seed_only() {
        let text = BASE.replace("kind = \"equilibrium\"\n        [boundary]", "kind = \"random\"\n        amplitude = 0.5\n        [boundary]");
        let a = RunConfig::from_toml_str(&text).unwrap();
        let mut b = a.clone();
        let fa = a.build().unwrap().initial;
        assert_eq!(fa, b.build().unwrap().initial);
        b.seed = 7;
        assert_ne!(fa, b.build().unwrap().initial);
    }
}
