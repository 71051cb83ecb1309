//! Residuals of the balance laws, the entropy inequality and the weak
//! (renormalized) formulation, computed from run data.

use serde::Serialize;

use crate::collision::apply_collision;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grid::{DistributionField, SpatialMesh, VelocityGrid, Wall};
use crate::par;
use crate::solver::{advance, HistoryRow, SolverState, StepContext};
pub use crate::transport::relative_h;
use crate::transport::TraceLedger;

/// Tolerance factor of the entropy inequality.
pub const ENTROPY_TOL: f64 = 1e-8;

/// `Σ w M h(F/M)` for one cell.
pub fn cell_entropy(f: &[f64], grid: &VelocityGrid) -> f64 {
    f.iter()
        .zip(grid.weights())
        .zip(grid.maxwellian())
        .map(|((f, w), m)| w * m * relative_h(f / m))
        .sum()
}

/// `H(F|M) = Σ_cells Δx Σ_i w M h(F/M)`.
pub fn relative_entropy(field: &DistributionField, grid: &VelocityGrid, mesh: &SpatialMesh) -> f64 {
    field.cells().map(|c| cell_entropy(c, grid)).sum::<f64>() * mesh.dx()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyReport {
    pub entropy: f64,
    pub initial_entropy: f64,
    pub inflow: f64,
    pub outflow: f64,
    pub dissipation: f64,
    /// Smallest `RHS − LHS` over the sampled rows.
    pub residual: f64,
    pub scale: f64,
    pub ok: bool,
}

/// Global entropy inequality over a history: `H(t) + out + ∫D ≤ H₀ + in`.
pub fn entropy_inequality_check(history: &[HistoryRow]) -> EntropyReport {
    let first = history.first();
    let h0 = first.map_or(0.0, |r| r.entropy);
    let mut residual = f64::INFINITY;
    let mut scale: f64 = 0.0;
    for r in history {
        residual = residual.min(r.residual_entropy);
        scale = scale
            .max(h0 + r.influx.entropy)
            .max(r.entropy + r.outflux.entropy + r.dissipation);
    }
    if history.is_empty() {
        residual = 0.0;
    }
    let last = history.last();
    EntropyReport {
        entropy: last.map_or(0.0, |r| r.entropy),
        initial_entropy: h0,
        inflow: last.map_or(0.0, |r| r.influx.entropy),
        outflow: last.map_or(0.0, |r| r.outflux.entropy),
        dissipation: last.map_or(0.0, |r| r.dissipation),
        residual,
        scale,
        ok: residual >= -ENTROPY_TOL * scale,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Balance {
    pub interior: f64,
    pub influx: f64,
    pub outflux: f64,
    /// Largest relative residual over the sampled rows.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerReport {
    pub mass: Balance,
    pub momentum: [Balance; 3],
    pub energy: Balance,
    pub commutativity_residual: f64,
    pub commutativity_scale: f64,
    /// `∫∫ γ₊F (1 + |v|²) dμ` over both walls.
    pub trace_moment_weight: f64,
    /// `∫∫ γ₊F |log γ₊F| dμ` over both walls.
    pub trace_log_weight: f64,
    pub ok: bool,
}

/// Relative bound on the mass, momentum and energy residuals.
pub const BALANCE_TOL: f64 = 1e-10;
/// Relative bound on the trace commutativity residual.
pub const COMMUTATIVITY_TOL: f64 = 1e-12;

pub fn conservation_ledger(history: &[HistoryRow], ledger: &TraceLedger) -> LedgerReport {
    let max_abs = |f: &dyn Fn(&HistoryRow) -> f64| history.iter().map(|r| f(r).abs()).fold(0.0, f64::max);
    let last = history.last();
    let pick = |f: &dyn Fn(&HistoryRow) -> f64| last.map_or(0.0, f);
    let mass = Balance {
        interior: pick(&|r| r.mass),
        influx: pick(&|r| r.influx.mass),
        outflux: pick(&|r| r.outflux.mass),
        residual: max_abs(&|r| r.residual_mass),
    };
    let momentum = [0, 1, 2].map(|a| Balance {
        interior: pick(&|r| r.momentum[a]),
        influx: pick(&|r| r.influx.momentum[a]),
        outflux: pick(&|r| r.outflux.momentum[a]),
        residual: max_abs(&|r| r.residual_momentum[a]),
    });
    let energy = Balance {
        interior: pick(&|r| r.energy),
        influx: pick(&|r| r.influx.energy),
        outflux: pick(&|r| r.outflux.energy),
        residual: max_abs(&|r| r.residual_energy),
    };
    let (commutativity_residual, commutativity_scale) = trace_commutativity_check(ledger);
    let ok = mass.residual <= BALANCE_TOL
        && momentum.iter().all(|b| b.residual <= BALANCE_TOL)
        && energy.residual <= BALANCE_TOL
        && commutativity_residual <= COMMUTATIVITY_TOL * commutativity_scale;
    LedgerReport {
        mass,
        momentum,
        energy,
        commutativity_residual,
        commutativity_scale,
        trace_moment_weight: ledger.walls.iter().map(|w| w.out_moment_weight).sum(),
        trace_log_weight: ledger.walls.iter().map(|w| w.out_log_weight).sum(),
        ok,
    }
}

/// Largest gap between the finite-volume wall flux and the `dμ` sum of the
/// recorded traces, with the flux scale it should be compared against.
pub fn trace_commutativity_check(ledger: &TraceLedger) -> (f64, f64) {
    (ledger.commutativity_residual, ledger.commutativity_scale)
}

/// `β_j(s) = j s / (j + s)`.
pub fn renormalizer(j: f64, s: f64) -> Result<f64> {
    if !(j > 0.0) {
        return Err(Error::Domain(format!("renormalizer index must be positive (got {j})")));
    }
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("renormalizer argument must be nonnegative (got {s})")));
    }
    Ok(j * s / (j + s))
}

/// `β_j'(s) = j² / (j + s)²`.
pub fn renormalizer_derivative(j: f64, s: f64) -> f64 {
    let d = j + s;
    j * j / (d * d)
}

/// `(1 + z/3) / (1 + z²)²`, whose supremum over `z ≥ −1` is the constant of
/// the boundary trace bound.
pub fn trace_ratio(z: f64) -> f64 {
    (1.0 + z / 3.0) / (1.0 + z * z).powi(2)
}

/// `sup_{z ≥ −1} (1 + z/3)/(1 + z²)²` by golden-section search. The ratio
/// rises on `[−1, z*]` and falls after it.
pub fn trace_constant() -> (f64, f64) {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (-1.0f64, 2.0f64);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    while b - a > 1e-12 {
        if trace_ratio(c) > trace_ratio(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - phi * (b - a);
        d = a + phi * (b - a);
    }
    let z = 0.5 * (a + b);
    (trace_ratio(z), z)
}

/// The three members of the pointwise chain
/// `g̃² ≤ C g²/(1 + εg/3) ≤ 2C h(1 + εg)/ε²` for `g > −1/ε`.
pub fn renormalized_chain(g: f64, epsilon: f64) -> [f64; 3] {
    let (c, _) = trace_constant();
    let z = epsilon * g;
    let gt = g / (1.0 + z * z);
    let middle = g * g / (1.0 + z / 3.0);
    [gt * gt, c * middle, c * 2.0 * relative_h(1.0 + z) / (epsilon * epsilon)]
}

/// Versioned catalog of separable test functions `ψ = a(t) b(x) c(v)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    /// `ψ ≡ 1`.
    Unit,
    /// `(1 + t/2)(1 + x/L) e^{−|v|²/8}`.
    Ramp,
    /// `cos t · cos(πx/L) · v_x e^{−|v|²/8}`.
    Wave,
}

pub const TEST_FUNCTION_CATALOG_VERSION: u32 = 1;

impl TestFunction {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "unit" => Ok(TestFunction::Unit),
            "ramp" => Ok(TestFunction::Ramp),
            "wave" => Ok(TestFunction::Wave),
            other => Err(Error::Config(format!("unknown test function '{other}'"))),
        }
    }

    /// `(ψ, ∂_t ψ, ∂_x ψ)`.
    pub fn eval(&self, t: f64, x: f64, v: [f64; 3], length: f64) -> [f64; 3] {
        let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        let cut = (-v2 / 8.0).exp();
        match self {
            TestFunction::Unit => [1.0, 0.0, 0.0],
            TestFunction::Ramp => {
                let a = 1.0 + 0.5 * t;
                let b = 1.0 + x / length;
                [a * b * cut, 0.5 * b * cut, a / length * cut]
            }
            TestFunction::Wave => {
                let k = std::f64::consts::PI / length;
                let c = v[0] * cut;
                [t.cos() * (k * x).cos() * c, -t.sin() * (k * x).cos() * c, -t.cos() * k * (k * x).sin() * c]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenResidual {
    /// `∫∫ β(F)(∂_t ψ + (v_x/ε) ∂_x ψ) + (1/ε²) Q β'(F) ψ`.
    pub interior: f64,
    /// `∫ β(F(T)) ψ(T) − ∫ β(F₀) ψ(0)`.
    pub endpoint: f64,
    /// `∫∫_{Σ₊} β(γ₊F) ψ − ∫∫_{Σ₋} β(Z) ψ`, with the transport speed.
    pub boundary: f64,
    pub absolute: f64,
    /// `absolute` over the sum of the magnitudes of the terms.
    pub relative: f64,
}

fn weighted_pairing<F>(field: &DistributionField, grid: &VelocityGrid, mesh: &SpatialMesh, f: F) -> f64
where
    F: Fn(f64, [f64; 3], f64, usize, usize) -> f64 + Sync + Send,
{
    let parts = par::map_indexed(field.n_cells(), |k| {
        let x = mesh.center(k);
        field
            .cell(k)
            .iter()
            .enumerate()
            .map(|(i, &value)| grid.weights()[i] * f(x, grid.node(i), value, k, i))
            .sum::<f64>()
    });
    parts.iter().sum::<f64>() * mesh.dx()
}

/// Interior integrand at one time: `Σ Δx w [β(F)(ψ_t + c v_x ψ_x) + β'(F) Q ψ / ε²]`.
#[allow(clippy::too_many_arguments)]
fn interior_rate(
    field: &DistributionField,
    q: &DistributionField,
    t: f64,
    j: f64,
    psi: TestFunction,
    epsilon: f64,
    grid: &VelocityGrid,
    mesh: &SpatialMesh,
) -> f64 {
    let length = mesh.length();
    weighted_pairing(field, grid, mesh, |x, v, f, k, i| {
        let [p, pt, px] = psi.eval(t, x, v, length);
        let b = j * f / (j + f);
        b * (pt + v[0] / epsilon * px) + renormalizer_derivative(j, f) * q.cell(k)[i] * p / (epsilon * epsilon)
    })
}

fn collision_field(field: &DistributionField, engine: &crate::collision::CollisionEngine) -> Result<DistributionField> {
    let cells = par::try_map_indexed(field.n_cells(), |k| apply_collision(engine, field.cell(k)))?;
    DistributionField::from_values(field.n_cells(), field.n_nodes(), cells.concat())
}

/// Runs `config` and assembles both sides of the renormalized weak
/// formulation with `β = β_j` and test function `ψ`. Time integrals use the
/// trapezoidal rule over the steps; boundary integrals use the recorded trace
/// pieces at their midpoint times.
pub fn green_identity_residual(config: &RunConfig, j: f64, psi: TestFunction) -> Result<GreenResidual> {
    if !(j > 0.0) {
        return Err(Error::Domain(format!("renormalizer index must be positive (got {j})")));
    }
    let setup = config.build()?;
    let (grid, mesh) = (&setup.grid, &setup.mesh);
    let eps = config.epsilon;
    let ctx = StepContext {
        grid,
        mesh,
        engine: &setup.engine,
        boundary: &setup.boundary,
        epsilon: eps,
        scheme: config.time.scheme,
        integrability_cap: config.integrability_cap,
    };
    let mut state = SolverState::new(setup.initial.clone(), grid, mesh, eps, true);
    let length = mesh.length();
    let endpoint_term = |field: &DistributionField, t: f64| {
        weighted_pairing(field, grid, mesh, |x, v, f, _, _| (j * f / (j + f)) * psi.eval(t, x, v, length)[0])
    };
    let start = endpoint_term(&state.field, 0.0);
    let mut rate = interior_rate(&state.field, &collision_field(&state.field, &setup.engine)?, 0.0, j, psi, eps, grid, mesh);
    let mut interior = 0.0;
    let mut interior_abs = 0.0;
    for step in 0..setup.n_steps {
        let dt = if step + 1 == setup.n_steps {
            config.time.t_end - step as f64 * setup.dt
        } else {
            setup.dt
        };
        advance(&mut state, dt, &ctx)?;
        let q = collision_field(&state.field, &setup.engine)?;
        let next = interior_rate(&state.field, &q, state.t, j, psi, eps, grid, mesh);
        interior += 0.5 * dt * (rate + next);
        interior_abs += 0.5 * dt * (rate.abs() + next.abs());
        rate = next;
    }
    let end = endpoint_term(&state.field, state.t);
    let speed = 1.0 / eps;
    let mut boundary = 0.0;
    let mut boundary_abs = 0.0;
    for p in &state.ledger.pieces {
        let x = match p.wall {
            Wall::Left => 0.0,
            Wall::Right => length,
        };
        let term = renormalizer(j, p.value)? * psi.eval(p.time, x, grid.node(p.node), length)[0] * p.measure * speed;
        boundary += if p.incoming { -term } else { term };
        boundary_abs += term.abs();
    }
    let endpoint = end - start;
    let absolute = (interior - endpoint - boundary).abs();
    let scale = interior_abs + end.abs() + start.abs() + boundary_abs;
    Ok(GreenResidual {
        interior,
        endpoint,
        boundary,
        absolute,
        relative: if scale > 0.0 { absolute / scale } else { 0.0 },
    })
}
