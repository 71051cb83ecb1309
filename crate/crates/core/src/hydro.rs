//! Navier–Stokes scaling: well-prepared data with entropy certificates,
//! fluctuation fields, diffusion-mode rate fits and the boundary trace bound.

use serde::{Deserialize, Serialize};

use crate::collision::{build_kernel_with_cap, CollisionEngine, KernelFamily, KernelSpec};
use crate::config::DEFAULT_MEMORY_CAP;
use crate::diagnostics::{entropy_inequality_check, relative_entropy, trace_constant};
use crate::error::{Error, Result};
use crate::grid::{build_velocity_grid, DistributionField, SpatialMesh, VelocityGrid, Wall};
use crate::linearized::{assemble_linearized, transport_coefficients};
use crate::solver::{advance, positivity_limit, SolverState, StepContext};
use crate::transport::{relative_h, BoundaryData, TraceLedger, TransportScheme, WallInflow};

/// Initial fluctuation catalog, all with a `sin(πx/L)` envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluctuationProfile {
    Zero,
    /// `v_y`.
    Shear,
    /// `(|v|² − 3)/2`.
    Temperature,
    /// Sum of the shear and temperature profiles.
    ShearAndTemperature,
}

impl FluctuationProfile {
    pub fn eval(&self, x: f64, v: [f64; 3], length: f64) -> f64 {
        let s = (std::f64::consts::PI * x / length).sin();
        let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        match self {
            FluctuationProfile::Zero => 0.0,
            FluctuationProfile::Shear => s * v[1],
            FluctuationProfile::Temperature => s * 0.5 * (v2 - 3.0),
            FluctuationProfile::ShearAndTemperature => s * (v[1] + 0.5 * (v2 - 3.0)),
        }
    }
}

/// Wall profile catalog `ẑ(v)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryProfile {
    Zero,
    /// `v_y`.
    Tangential,
    /// `(|v|² − 3)/2`.
    Energy,
}

impl BoundaryProfile {
    pub fn eval(&self, v: [f64; 3]) -> f64 {
        match self {
            BoundaryProfile::Zero => 0.0,
            BoundaryProfile::Tangential => v[1],
            BoundaryProfile::Energy => 0.5 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] - 3.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub epsilon: f64,
    pub initial: FluctuationProfile,
    pub amplitude: f64,
    pub boundary: BoundaryProfile,
    /// Preparation exponent `p` in `Z = M (1 + ε^{1+p} ẑ)`.
    pub exponent: f64,
}

impl ScalingConfig {
    pub fn new(epsilon: f64) -> Self {
        ScalingConfig {
            epsilon,
            initial: FluctuationProfile::Zero,
            amplitude: 0.0,
            boundary: BoundaryProfile::Zero,
            exponent: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1] (got {})", self.epsilon)));
        }
        if !(self.exponent >= 0.0) {
            return Err(Error::Config(format!("preparation exponent must be nonnegative (got {})", self.exponent)));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::Config("fluctuation amplitude must be finite".into()));
        }
        Ok(())
    }
}

/// `(1/ε²) H(F⁰|M)` and `(1/ε³) Σ_walls ∫_{Σ₋} h(Z/M) dς`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certificates {
    pub initial: f64,
    pub boundary: f64,
}

/// `F⁰ = M (1 + ε a g⁰)`.
pub fn initial_field(cfg: &ScalingConfig, grid: &VelocityGrid, mesh: &SpatialMesh) -> Result<DistributionField> {
    cfg.validate()?;
    let scale = cfg.epsilon * cfg.amplitude;
    let length = mesh.length();
    let m = grid.maxwellian();
    let mut worst = f64::INFINITY;
    let field = DistributionField::from_fn(mesh.n_cells(), grid.len(), |k, i| {
        1.0 + scale * cfg.initial.eval(mesh.center(k), grid.node(i), length)
    });
    for c in field.cells() {
        worst = c.iter().copied().fold(worst, f64::min);
    }
    if !(worst > 0.0) {
        return Err(Error::Config(format!(
            "fluctuation amplitude {} makes 1 + ε g⁰ reach {worst:e} at ε = {}",
            cfg.amplitude, cfg.epsilon
        )));
    }
    let values = field
        .values()
        .iter()
        .enumerate()
        .map(|(idx, r)| r * m[idx % grid.len()])
        .collect();
    DistributionField::from_values(mesh.n_cells(), grid.len(), values)
}

/// `Z = M (1 + ε^{1+p} ẑ)` on both walls.
pub fn boundary_data(cfg: &ScalingConfig, grid: &VelocityGrid) -> Result<BoundaryData> {
    cfg.validate()?;
    let factor = cfg.epsilon.powf(1.0 + cfg.exponent);
    let z: Vec<f64> = grid
        .nodes()
        .iter()
        .zip(grid.maxwellian())
        .map(|(v, m)| m * (1.0 + factor * cfg.boundary.eval(*v)))
        .collect();
    BoundaryData::new(WallInflow::constant(z.clone()), WallInflow::constant(z), grid)
}

/// `Σ_walls Σ_{Σ₋} w |v_x| M h(Z/M)` at time `t`.
pub fn boundary_entropy_rate(bc: &BoundaryData, grid: &VelocityGrid, t: f64) -> f64 {
    let m = grid.maxwellian();
    Wall::BOTH
        .iter()
        .map(|&wall| {
            (0..grid.len())
                .filter(|&i| wall.is_incoming(grid.node(i)[0]))
                .map(|i| grid.weights()[i] * grid.node(i)[0].abs() * m[i] * relative_h(bc.value(wall, i, t) / m[i]))
                .sum::<f64>()
        })
        .sum()
}

pub fn prepare_scaled_data(
    cfg: &ScalingConfig,
    grid: &VelocityGrid,
    mesh: &SpatialMesh,
) -> Result<(DistributionField, BoundaryData, Certificates)> {
    let f0 = initial_field(cfg, grid, mesh)?;
    let bc = boundary_data(cfg, grid)?;
    let eps = cfg.epsilon;
    let certificates = Certificates {
        initial: relative_entropy(&f0, grid, mesh) / (eps * eps),
        boundary: boundary_entropy_rate(&bc, grid, 0.0) / eps.powi(3),
    };
    if !certificates.initial.is_finite() || !certificates.boundary.is_finite() {
        return Err(Error::Config("prepared data have infinite entropy certificates".into()));
    }
    Ok((f0, bc, certificates))
}

/// `g = (F/M − 1)/ε` and `g̃ = g/(1 + ε² g²)`.
pub fn fluctuations(field: &DistributionField, epsilon: f64, grid: &VelocityGrid) -> (DistributionField, DistributionField) {
    let nv = grid.len();
    let m = grid.maxwellian();
    let g: Vec<f64> = field
        .values()
        .iter()
        .enumerate()
        .map(|(idx, f)| (f / m[idx % nv] - 1.0) / epsilon)
        .collect();
    let gt: Vec<f64> = g.iter().map(|g| g / (1.0 + epsilon * epsilon * g * g)).collect();
    let n = field.n_cells();
    (
        DistributionField::from_values(n, nv, g).expect("shape preserved"),
        DistributionField::from_values(n, nv, gt).expect("shape preserved"),
    )
}

/// Per-cell `⟨v_y g⟩, ⟨v_z g⟩`, `⟨(|v|²/5 − 1) g⟩` and `⟨g⟩`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluidMoments {
    pub u_tan: Vec<[f64; 2]>,
    pub theta: Vec<f64>,
    pub rho: Vec<f64>,
}

pub fn fluid_moments(g: &DistributionField, grid: &VelocityGrid) -> FluidMoments {
    let mut out = FluidMoments {
        u_tan: Vec::with_capacity(g.n_cells()),
        theta: Vec::with_capacity(g.n_cells()),
        rho: Vec::with_capacity(g.n_cells()),
    };
    for c in g.cells() {
        let (mut uy, mut uz, mut th, mut rho) = (0.0, 0.0, 0.0, 0.0);
        for ((g, v), (w, m)) in c.iter().zip(grid.nodes()).zip(grid.weights().iter().zip(grid.maxwellian())) {
            let wm = w * m * g;
            let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            uy += wm * v[1];
            uz += wm * v[2];
            th += wm * (v2 / 5.0 - 1.0);
            rho += wm;
        }
        out.u_tan.push([uy, uz]);
        out.theta.push(th);
        out.rho.push(rho);
    }
    out
}

/// `(2/L) Σ Δx φ(x) sin(πx/L)`, the first sine coefficient.
pub fn first_mode(values: &[f64], mesh: &SpatialMesh) -> f64 {
    let l = mesh.length();
    values
        .iter()
        .enumerate()
        .map(|(k, v)| v * (std::f64::consts::PI * mesh.center(k) / l).sin())
        .sum::<f64>()
        * mesh.dx()
        * 2.0
        / l
}

/// Negated least-squares slope of `log a` against `t` over `window`.
pub fn decay_rate_fit(series: &[(f64, f64)], window: (f64, f64)) -> Result<f64> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|(t, _)| *t >= window.0 - 1e-12 && *t <= window.1 + 1e-12)
        .collect();
    if pts.len() < 10 {
        return Err(Error::Fit(format!("need at least 10 samples in the window, got {}", pts.len())));
    }
    if let Some((t, a)) = pts.iter().find(|(_, a)| !(*a > 0.0)) {
        return Err(Error::Fit(format!("nonpositive amplitude {a:e} at t = {t}")));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1.ln() - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("window holds a single time".into()));
    }
    Ok(-sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceBound {
    /// `∫∫ M (γ g̃_ε)² dμ dt` over both walls and both `Σ±`.
    pub lhs: f64,
    /// `(2C/ε²) ∫∫ M h(γG_ε) dμ dt` over the same set.
    pub rhs: f64,
    pub ok: bool,
    pub lhs_over_epsilon: f64,
}

pub fn trace_bound_check(ledger: &TraceLedger) -> Result<TraceBound> {
    if ledger.substeps == 0 {
        return Err(Error::Config("the run carries no wall trace records".into()));
    }
    let eps = ledger.epsilon;
    let (c, _) = trace_constant();
    let lhs: f64 = ledger.walls.iter().map(|w| w.fluctuation_sq).sum();
    let entropy: f64 = ledger.walls.iter().map(|w| w.entropy_unscaled).sum();
    let rhs = 2.0 * c / (eps * eps) * entropy;
    Ok(TraceBound {
        lhs,
        rhs,
        ok: lhs <= rhs * (1.0 + 1e-8),
        lhs_over_epsilon: lhs / eps,
    })
}

/// How each sweep entry picks its step and mesh. Both use exact
/// characteristic transport, so the cell size follows from the step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Resolution {
    /// `dt = ε² τ_c / steps`, with `τ_c` the collision time of the kernel,
    /// so the collision layer is resolved at every ε.
    Relaxation { steps: f64 },
    /// A fixed number of cells; `dt` then scales with ε.
    FixedMesh { n_cells: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub kernel: KernelSpec,
    pub n_per_axis: usize,
    pub v_max: f64,
    pub length: f64,
    /// Length of the fit window; each run ends at `t₀ + fit_span` with
    /// `t₀ = max(5ε, 10 dt)`.
    pub fit_span: f64,
    /// Common end time for every ε, overriding `t₀ + fit_span`; runs stop at
    /// the first step boundary at or after it.
    pub horizon: Option<f64>,
    pub initial: FluctuationProfile,
    pub amplitude: f64,
    pub boundary: BoundaryProfile,
    pub exponent: f64,
    pub resolution: Resolution,
    /// Samples per unit time for the amplitude series.
    pub samples_per_time: f64,
}

impl SweepConfig {
    /// BGK relaxation time `τ/scale`, or the inverse collision frequency at
    /// `M` for the Boltzmann kernels.
    fn collision_time(&self, engine: &CollisionEngine) -> f64 {
        match self.kernel.family {
            KernelFamily::Bgk { tau } => tau / self.kernel.scale,
            KernelFamily::Free => f64::INFINITY,
            _ => 1.0 / engine.max_loss_rate(engine.grid().maxwellian()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepEntry {
    pub epsilon: f64,
    pub dt: f64,
    pub n_cells: usize,
    pub steps: usize,
    pub certificates: Certificates,
    pub shear_rate: Option<f64>,
    pub temperature_rate: Option<f64>,
    pub shear_error: Option<f64>,
    pub temperature_error: Option<f64>,
    pub trace: TraceBound,
    pub entropy_residual: f64,
    pub entropy_ok: bool,
    /// `∫ (∫ v_y γg̃ dς)² dt` summed over the walls.
    pub tangential_trace: f64,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub nu: f64,
    pub k: f64,
    pub shear_reference: f64,
    pub temperature_reference: f64,
    pub entries: Vec<SweepEntry>,
    /// `|fitted/reference − 1|` nonincreasing along the ε list.
    pub shear_improves: bool,
    pub temperature_improves: bool,
    /// Log-log slope of the trace integral against ε.
    pub trace_slope: Option<f64>,
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0.ln()).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0.ln() - mx) * (p.1.ln() - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0.ln() - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn nonincreasing(errors: &[Option<f64>]) -> bool {
    errors
        .windows(2)
        .all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b <= a))
}

/// Runs the scaled problem for each ε and fits the diffusion modes.
pub fn epsilon_sweep(cfg: &SweepConfig, epsilons: &[f64]) -> Result<SweepReport> {
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("the ε list must be strictly decreasing".into()));
    }
    let grid = build_velocity_grid(cfg.n_per_axis, cfg.v_max)?;
    let engine = build_kernel_with_cap(&cfg.kernel, &grid, DEFAULT_MEMORY_CAP)?;
    let coeffs = transport_coefficients(&assemble_linearized(&engine)?)?;
    let pi2 = (std::f64::consts::PI / cfg.length).powi(2);
    let shear_reference = coeffs.nu * pi2;
    let temperature_reference = coeffs.k * pi2;
    let mut entries = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        entries.push(sweep_entry(cfg, &grid, &engine, eps, shear_reference, temperature_reference)?);
    }
    let slope_points: Vec<(f64, f64)> = entries.iter().map(|e| (e.epsilon, e.trace.lhs)).collect();
    Ok(SweepReport {
        nu: coeffs.nu,
        k: coeffs.k,
        shear_reference,
        temperature_reference,
        shear_improves: nonincreasing(&entries.iter().map(|e| e.shear_error).collect::<Vec<_>>()),
        temperature_improves: nonincreasing(&entries.iter().map(|e| e.temperature_error).collect::<Vec<_>>()),
        trace_slope: log_log_slope(&slope_points),
        entries,
    })
}

fn sweep_entry(
    cfg: &SweepConfig,
    grid: &VelocityGrid,
    engine: &CollisionEngine,
    eps: f64,
    shear_reference: f64,
    temperature_reference: f64,
) -> Result<SweepEntry> {
    // half steps move the slowest nodes (|v_x| = h/2) by one cell
    let h = grid.spacing();
    let n_cells = match cfg.resolution {
        Resolution::Relaxation { steps } => {
            let target = eps * eps * cfg.collision_time(engine) / steps;
            let dx = 0.25 * h * target / eps;
            (cfg.length / dx).ceil() as usize
        }
        Resolution::FixedMesh { n_cells } => n_cells,
    };
    let mesh = SpatialMesh::new(cfg.length, n_cells)?;
    let dt = 4.0 * eps * mesh.dx() / h;
    let t0 = (5.0 * eps).max(10.0 * dt);
    let end = cfg.horizon.unwrap_or(t0 + cfg.fit_span);
    let steps = (end / dt - 1e-9).ceil().max(1.0) as usize;
    let scaling = ScalingConfig {
        epsilon: eps,
        initial: cfg.initial,
        amplitude: cfg.amplitude,
        boundary: cfg.boundary,
        exponent: cfg.exponent,
    };
    let (f0, bc, certificates) = prepare_scaled_data(&scaling, grid, &mesh)?;
    if !engine.is_bgk() && dt > positivity_limit(&f0, engine, eps) {
        return Err(Error::Positivity {
            dt,
            admissible: positivity_limit(&f0, engine, eps),
        });
    }
    let ctx = StepContext {
        grid,
        mesh: &mesh,
        engine,
        boundary: &bc,
        epsilon: eps,
        scheme: TransportScheme::Characteristic,
        integrability_cap: f64::INFINITY,
    };
    let mut state = SolverState::new(f0, grid, &mesh, eps, false);
    state.record(grid, &mesh);
    let every = ((1.0 / (cfg.samples_per_time * dt)).floor() as usize).max(1);
    let mut shear = Vec::new();
    let mut temperature = Vec::new();
    let mut sample = |state: &SolverState| {
        let (_, gt) = fluctuations(&state.field, eps, grid);
        let fm = fluid_moments(&gt, grid);
        let uy: Vec<f64> = fm.u_tan.iter().map(|u| u[0]).collect();
        shear.push((state.t, first_mode(&uy, &mesh)));
        temperature.push((state.t, first_mode(&fm.theta, &mesh)));
    };
    sample(&state);
    for step in 0..steps {
        advance(&mut state, dt, &ctx)?;
        if (step + 1) % every == 0 || step + 1 == steps {
            sample(&state);
            state.record(grid, &mesh);
        }
    }
    let window = (t0, state.t);
    let mut failures = Vec::new();
    let mut fit = |series: &[(f64, f64)], name: &str, active: bool| -> Option<f64> {
        if !active {
            return None;
        }
        match decay_rate_fit(series, window) {
            Ok(r) => Some(r),
            Err(e) => {
                failures.push(format!("{name}: {e}"));
                None
            }
        }
    };
    let has_shear = matches!(cfg.initial, FluctuationProfile::Shear | FluctuationProfile::ShearAndTemperature);
    let has_temperature = matches!(
        cfg.initial,
        FluctuationProfile::Temperature | FluctuationProfile::ShearAndTemperature
    );
    let shear_rate = fit(&shear, "shear", has_shear && cfg.amplitude != 0.0);
    let temperature_rate = fit(&temperature, "temperature", has_temperature && cfg.amplitude != 0.0);
    let entropy = entropy_inequality_check(&state.history);
    let trace = trace_bound_check(&state.ledger)?;
    Ok(SweepEntry {
        epsilon: eps,
        dt,
        n_cells,
        steps,
        certificates,
        shear_error: shear_rate.map(|r| (r / shear_reference - 1.0).abs()),
        temperature_error: temperature_rate.map(|r| (r / temperature_reference - 1.0).abs()),
        shear_rate,
        temperature_rate,
        trace,
        entropy_residual: entropy.residual,
        entropy_ok: entropy.ok,
        tangential_trace: state.ledger.walls.iter().map(|w| w.tangential_sq).sum(),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice() -> (VelocityGrid, SpatialMesh) {
        (build_velocity_grid(12, 6.0).unwrap(), SpatialMesh::new(1.0, 40).unwrap())
    }

    #[test]
    fn fluid_moment_oracles() {
        let (g, _) = lattice();
        let one_cell = |f: &dyn Fn([f64; 3]) -> f64| {
            let field = DistributionField::uniform(1, &g.sample(f));
            fluid_moments(&field, &g)
        };
        let m = one_cell(&|v| v[1]);
        assert!((m.u_tan[0][0] - 1.0).abs() < 1e-6 && m.theta[0].abs() < 1e-6 && m.rho[0].abs() < 1e-6);
        let m = one_cell(&|v| 0.5 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] - 5.0));
        assert!((m.theta[0] - 1.0).abs() < 1e-5);
        let m = one_cell(&|_| 1.0);
        assert!((m.rho[0] - 1.0).abs() < 1e-6 && (m.theta[0] + 0.4).abs() < 1e-5);
    }

    #[test]
    fn fluctuation_identities() {
        let (g, _) = lattice();
        let m = g.maxwellian().to_vec();
        let eps = 0.2;
        let field = DistributionField::uniform(1, &m.iter().map(|x| 2.0 * x).collect::<Vec<_>>());
        let (gf, gt) = fluctuations(&field, eps, &g);
        // ε g = 1 everywhere, so g̃ = g/2
        assert!(gf.values().iter().all(|x| (x - 5.0).abs() < 1e-12));
        assert!(gt.values().iter().all(|x| (x - 2.5).abs() < 1e-12));
        let (g0, gt0) = fluctuations(&DistributionField::uniform(1, &m), eps, &g);
        assert!(g0.values().iter().chain(gt0.values()).all(|x| *x == 0.0));
    }

    #[test]
    fn equilibrium_certificates_vanish() {
        let (g, mesh) = lattice();
        let (f0, _, c) = prepare_scaled_data(&ScalingConfig::new(0.1), &g, &mesh).unwrap();
        assert_eq!(f0, DistributionField::uniform(40, g.maxwellian()));
        assert_eq!(c.initial, 0.0);
        assert_eq!(c.boundary, 0.0);
    }

    #[test]
    fn shear_certificate_tends_to_quarter_amplitude_squared() {
        let (g, mesh) = lattice();
        let a = 0.8;
        let mut cfg = ScalingConfig::new(0.01);
        cfg.initial = FluctuationProfile::Shear;
        cfg.amplitude = a;
        let (_, _, c) = prepare_scaled_data(&cfg, &g, &mesh).unwrap();
        assert!((c.initial / (a * a / 4.0) - 1.0).abs() < 0.02, "{}", c.initial);
    }

    #[test]
    fn boundary_certificate_is_uniform_in_epsilon() {
        let (g, mesh) = lattice();
        let values: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&eps| {
                let mut cfg = ScalingConfig::new(eps);
                cfg.boundary = BoundaryProfile::Tangential;
                prepare_scaled_data(&cfg, &g, &mesh).unwrap().2.boundary
            })
            .collect();
        let max = values.iter().copied().fold(0.0, f64::max);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min > 0.0 && max / min < 2.0, "{values:?}");
    }

    #[test]
    fn oversize_amplitude_is_rejected() {
        let (g, mesh) = lattice();
        let mut cfg = ScalingConfig::new(1.0);
        cfg.initial = FluctuationProfile::Shear;
        cfg.amplitude = 1.0;
        assert!(matches!(initial_field(&cfg, &g, &mesh), Err(Error::Config(_))));
    }

    #[test]
    fn decay_fits() {
        let exact: Vec<(f64, f64)> = (0..50).map(|k| (0.1 * k as f64, 3.0 * (-2.0 * 0.1 * k as f64).exp())).collect();
        assert!((decay_rate_fit(&exact, (0.0, 5.0)).unwrap() - 2.0).abs() < 1e-12);
        let wobbly: Vec<(f64, f64)> = (0..400)
            .map(|k| {
                let t = 0.01 * k as f64;
                (t, (-t).exp() * (1.0 + 0.01 * (40.0 * t).sin()))
            })
            .collect();
        assert!((decay_rate_fit(&wobbly, (0.0, 4.0)).unwrap() - 1.0).abs() < 1e-2);
        let flat: Vec<(f64, f64)> = (0..20).map(|k| (k as f64, 0.7)).collect();
        assert_eq!(decay_rate_fit(&flat, (0.0, 20.0)).unwrap(), 0.0);
        let zero: Vec<(f64, f64)> = (0..20).map(|k| (k as f64, 0.0)).collect();
        assert!(matches!(decay_rate_fit(&zero, (0.0, 20.0)), Err(Error::Fit(_))));
    }

    #[test]
    fn first_mode_of_sine_is_one() {
        let mesh = SpatialMesh::new(2.0, 200).unwrap();
        let v: Vec<f64> = (0..200).map(|k| (std::f64::consts::PI * mesh.center(k) / 2.0).sin()).collect();
        assert!((first_mode(&v, &mesh) - 1.0).abs() < 1e-10);
    }
}
