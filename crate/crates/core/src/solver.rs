//! Time marching for `∂_t F + (v_x/ε) ∂_x F = Q(F, F)/ε²`.
//!
//! Production runs use Strang splitting: half transport, one collision step,
//! half transport. BGK collisions are integrated exactly (relaxation toward
//! the conserved discrete equilibrium); full kernels take an explicit Euler
//! step under the loss-rate guard `dt · max loss / ε² ≤ 1/2`. The window
//! iteration of [`fixed_point_solve`] freezes the collision source at the
//! previous iterate, so each iterate solves a linear transport problem.

use serde::Serialize;

use crate::collision::{apply_collision, CollisionEngine, KernelFamily};
use crate::config::RunConfig;
use crate::diagnostics::{cell_entropy, relative_entropy};
use crate::error::{Error, Result};
use crate::grid::{discrete_equilibrium, DistributionField, SpatialMesh, VelocityGrid};
use crate::par;
use crate::transport::{scaled_transport_step, BoundaryData, FluxTotals, TraceLedger, TransportScheme};

/// Fixed inputs of a march.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub grid: &'a VelocityGrid,
    pub mesh: &'a SpatialMesh,
    pub engine: &'a CollisionEngine,
    pub boundary: &'a BoundaryData,
    pub epsilon: f64,
    pub scheme: TransportScheme,
    pub integrability_cap: f64,
}

impl StepContext<'_> {
    fn speed(&self) -> f64 {
        1.0 / self.epsilon
    }

    fn eps2(&self) -> f64 {
        self.epsilon * self.epsilon
    }
}

/// One sampled row of the run history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRow {
    pub t: f64,
    pub mass: f64,
    pub momentum: [f64; 3],
    pub energy: f64,
    /// `H(F|M)`.
    pub entropy: f64,
    /// `(1/ε²) ∫ D`, accumulated as the entropy drop of the collision steps.
    pub dissipation: f64,
    pub influx: FluxTotals,
    pub outflux: FluxTotals,
    pub residual_mass: f64,
    pub residual_momentum: [f64; 3],
    pub residual_energy: f64,
    /// `H₀ + inflow − (H + outflow + dissipation)`; nonnegative up to roundoff.
    pub residual_entropy: f64,
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub t: f64,
    pub field: DistributionField,
    pub ledger: TraceLedger,
    pub history: Vec<HistoryRow>,
    pub dissipation: f64,
    pub steps: usize,
    initial_totals: [f64; 5],
    initial_entropy: f64,
    /// Normalizers for the momentum residuals, `Σ Δx w |v_a| F₀`.
    initial_abs_momentum: [f64; 3],
}

impl SolverState {
    pub fn new(field: DistributionField, grid: &VelocityGrid, mesh: &SpatialMesh, epsilon: f64, record: bool) -> Self {
        let initial_totals = field.totals(grid, mesh);
        let initial_entropy = relative_entropy(&field, grid, mesh);
        let mut abs = [0.0; 3];
        for c in field.cells() {
            for ((f, w), v) in c.iter().zip(grid.weights()).zip(grid.nodes()) {
                for a in 0..3 {
                    abs[a] += w * v[a].abs() * f * mesh.dx();
                }
            }
        }
        SolverState {
            t: 0.0,
            field,
            ledger: TraceLedger::new(epsilon, record),
            history: Vec::new(),
            dissipation: 0.0,
            steps: 0,
            initial_totals,
            initial_entropy,
            initial_abs_momentum: abs,
        }
    }

    pub fn initial_totals(&self) -> [f64; 5] {
        self.initial_totals
    }

    pub fn initial_entropy(&self) -> f64 {
        self.initial_entropy
    }

    /// Current balance row, without storing it.
    pub fn row(&self, grid: &VelocityGrid, mesh: &SpatialMesh) -> HistoryRow {
        let totals = self.field.totals(grid, mesh);
        let entropy = relative_entropy(&self.field, grid, mesh);
        let influx = self.ledger.total_influx();
        let outflux = self.ledger.total_outflux();
        let m0 = self.initial_totals;
        let tiny = f64::MIN_POSITIVE;
        let mass_scale = (m0[0] + influx.mass).max(tiny);
        let through = influx.mass + outflux.mass;
        let mut residual_momentum = [0.0; 3];
        for a in 0..3 {
            let scale = (self.initial_abs_momentum[a] + through * grid.v_max()).max(tiny);
            residual_momentum[a] = (totals[1 + a] + outflux.momentum[a] - influx.momentum[a] - m0[1 + a]) / scale;
        }
        HistoryRow {
            t: self.t,
            mass: totals[0],
            momentum: [totals[1], totals[2], totals[3]],
            energy: totals[4],
            entropy,
            dissipation: self.dissipation,
            influx,
            outflux,
            residual_mass: (totals[0] + outflux.mass - influx.mass - m0[0]) / mass_scale,
            residual_momentum,
            residual_energy: (totals[4] + outflux.energy - influx.energy - m0[4]) / (m0[4] + influx.energy).max(tiny),
            residual_entropy: self.initial_entropy + influx.entropy - (entropy + outflux.entropy + self.dissipation),
        }
    }

    pub fn record(&mut self, grid: &VelocityGrid, mesh: &SpatialMesh) {
        let row = self.row(grid, mesh);
        self.history.push(row);
    }
}

fn check_positive(field: &DistributionField, stage: &str) -> Result<()> {
    let min = field.min_value();
    if !(min >= 0.0) || !field.is_finite() {
        return Err(Error::Invariant(format!("{stage} produced a negative or non-finite value ({min:e})")));
    }
    Ok(())
}

/// Largest step the explicit collision update admits for `field`.
pub fn positivity_limit(field: &DistributionField, engine: &CollisionEngine, epsilon: f64) -> f64 {
    if engine.is_bgk() || engine.is_free() {
        return f64::INFINITY;
    }
    let rates = par::map_indexed(field.n_cells(), |k| engine.max_loss_rate(field.cell(k)));
    let rate = rates.into_iter().fold(0.0, f64::max);
    if rate > 0.0 {
        0.5 * epsilon * epsilon / rate
    } else {
        f64::INFINITY
    }
}

/// Collision step of length `dt` in every cell. Returns the new field and the
/// entropy drop `H(before) − H(after)`.
pub fn collision_step(
    field: &DistributionField,
    dt: f64,
    engine: &CollisionEngine,
    epsilon: f64,
    mesh: &SpatialMesh,
) -> Result<(DistributionField, f64)> {
    let grid = engine.grid();
    if engine.is_free() {
        return Ok((field.clone(), 0.0));
    }
    let limit = positivity_limit(field, engine, epsilon);
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::Positivity { dt, admissible: limit });
    }
    let eps2 = epsilon * epsilon;
    let spec = engine.spec();
    let cells = par::try_map_indexed(field.n_cells(), |k| -> Result<(Vec<f64>, f64)> {
        let f = field.cell(k);
        let before = cell_entropy(f, grid);
        let next = match spec.family {
            KernelFamily::Bgk { tau } => {
                if f.iter().all(|&x| x == 0.0) {
                    f.to_vec()
                } else {
                    let eq = discrete_equilibrium(grid.conserved_moments(f), grid)
                        .map_err(|e| with_cell(e, k))?
                        .profile();
                    let rate = spec.damping_factor(crate::collision::density(grid, f)) * spec.scale / tau;
                    let decay = (-rate * dt / eps2).exp();
                    eq.iter().zip(f).map(|(m, x)| m + decay * (x - m)).collect()
                }
            }
            _ => {
                let q = apply_collision(engine, f)?;
                f.iter().zip(&q).map(|(x, q)| x + dt / eps2 * q).collect()
            }
        };
        let after = cell_entropy(&next, grid);
        Ok((next, before - after))
    })?;
    let mut values = Vec::with_capacity(field.values().len());
    let mut drop = 0.0;
    for (c, d) in cells {
        values.extend(c);
        drop += d * mesh.dx();
    }
    let next = DistributionField::from_values(field.n_cells(), field.n_nodes(), values)?;
    Ok((next, drop))
}

fn with_cell(e: Error, cell: usize) -> Error {
    match e {
        Error::DegenerateCell { reason, .. } => Error::DegenerateCell { cell, reason },
        other => other,
    }
}

/// One Strang step. On error the state is left untouched.
pub fn advance(state: &mut SolverState, dt: f64, ctx: &StepContext) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::Contract(format!("step size must be positive (got {dt})")));
    }
    ctx.boundary.check_integrability(ctx.grid, state.t, ctx.integrability_cap)?;
    let half = 0.5 * dt;
    let speed = ctx.speed();
    let (f1, inc1) = scaled_transport_step(ctx.scheme, &state.field, half, state.t, speed, ctx.boundary, ctx.mesh, ctx.grid)?;
    check_positive(&f1, "first transport substep")?;
    let (f2, drop) = collision_step(&f1, dt, ctx.engine, ctx.epsilon, ctx.mesh)?;
    check_positive(&f2, "collision substep")?;
    let (f3, inc2) = scaled_transport_step(ctx.scheme, &f2, half, state.t + half, speed, ctx.boundary, ctx.mesh, ctx.grid)?;
    check_positive(&f3, "second transport substep")?;
    state.ledger.absorb(inc1, ctx.grid);
    state.ledger.absorb(inc2, ctx.grid);
    state.field = f3;
    state.dissipation += drop;
    state.t += dt;
    state.steps += 1;
    Ok(())
}

/// Iteration record of [`fixed_point_solve`].
#[derive(Debug, Clone, Serialize)]
pub struct FixedPointOutcome {
    #[serde(skip)]
    pub field: DistributionField,
    pub iterations: usize,
    /// `‖F^{k+1} − F^k‖₁` per iteration.
    pub differences: Vec<f64>,
    /// Successive quotients of `differences`.
    pub ratios: Vec<f64>,
    /// `‖Q(F^k) − Q(F^{k−1})‖₁ / (ε² ‖F^k − F^{k−1}‖₁)` seen on the iterates.
    pub lipschitz: Vec<f64>,
    /// Largest entry of `lipschitz`, the measured `C_n`.
    pub lipschitz_bound: f64,
    /// Set when a ratio of at least 1 was observed.
    pub warning: Option<String>,
}

fn collision_source(field: &DistributionField, engine: &CollisionEngine) -> Result<DistributionField> {
    let cells = par::try_map_indexed(field.n_cells(), |k| apply_collision(engine, field.cell(k)))?;
    DistributionField::from_values(field.n_cells(), field.n_nodes(), cells.concat())
}

/// Solves `F = T_dt F_init + (dt/ε²) Q(F)` on one window by the iteration
/// `F^{k+1} = T_dt F_init + (dt/ε²) Q(F^k)`, starting from the transported
/// data. Converged when `‖F^{k+1} − F^k‖₁ ≤ tol`.
pub fn fixed_point_solve(
    initial: &DistributionField,
    dt: f64,
    t: f64,
    ctx: &StepContext,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointOutcome> {
    let (base, _) = scaled_transport_step(ctx.scheme, initial, dt, t, ctx.speed(), ctx.boundary, ctx.mesh, ctx.grid)?;
    let factor = dt / ctx.eps2();
    let mut current = base.clone();
    let mut previous: Option<(DistributionField, DistributionField)> = None;
    let mut differences = Vec::new();
    let mut ratios = Vec::new();
    let mut lipschitz = Vec::new();
    for k in 1..=max_iter {
        let q = collision_source(&current, ctx.engine)?;
        let values = base
            .values()
            .iter()
            .zip(q.values())
            .map(|(b, q)| b + factor * q)
            .collect();
        let next = DistributionField::from_values(base.n_cells(), base.n_nodes(), values)?;
        check_positive(&next, "fixed-point iterate")?;
        let diff = next.l1_distance(&current, ctx.grid, ctx.mesh);
        if let Some((f_prev, q_prev)) = &previous {
            let df = current.l1_distance(f_prev, ctx.grid, ctx.mesh);
            if df > 0.0 {
                lipschitz.push(q.l1_distance(q_prev, ctx.grid, ctx.mesh) / (ctx.eps2() * df));
            }
        }
        if let Some(&last) = differences.last() {
            if last > 0.0 {
                ratios.push(diff / last);
            }
        }
        differences.push(diff);
        if diff <= tol {
            let warning = ratios
                .iter()
                .any(|&r| r >= 1.0)
                .then(|| "contraction ratio of at least 1 observed".to_string());
            let lipschitz_bound = lipschitz.iter().copied().fold(0.0, f64::max);
            return Ok(FixedPointOutcome {
                field: next,
                iterations: k,
                differences,
                ratios,
                lipschitz,
                lipschitz_bound,
                warning,
            });
        }
        previous = Some((current, q));
        current = next;
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        ratios,
    })
}

/// Result of a configured run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: RunConfig,
    pub grid: VelocityGrid,
    pub mesh: SpatialMesh,
    pub dt: f64,
    pub state: SolverState,
}

/// Marches a configuration to `t_end`, sampling history every `cadence`
/// steps and at the end.
pub fn run_simulation(config: &RunConfig) -> Result<RunOutput> {
    let setup = config.build()?;
    let ctx = StepContext {
        grid: &setup.grid,
        mesh: &setup.mesh,
        engine: &setup.engine,
        boundary: &setup.boundary,
        epsilon: config.epsilon,
        scheme: config.time.scheme,
        integrability_cap: config.integrability_cap,
    };
    let mut state = SolverState::new(
        setup.initial.clone(),
        &setup.grid,
        &setup.mesh,
        config.epsilon,
        config.output.record_traces,
    );
    state.record(&setup.grid, &setup.mesh);
    for step in 0..setup.n_steps {
        let dt = if step + 1 == setup.n_steps {
            config.time.t_end - step as f64 * setup.dt
        } else {
            setup.dt
        };
        advance(&mut state, dt, &ctx)?;
        if (step + 1) % config.output.cadence == 0 || step + 1 == setup.n_steps {
            state.record(&setup.grid, &setup.mesh);
        }
    }
    Ok(RunOutput {
        config: config.clone(),
        dt: setup.dt,
        grid: setup.grid,
        mesh: setup.mesh,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::{build_kernel, KernelSpec};
    use crate::grid::build_velocity_grid;

    struct Fixture {
        grid: VelocityGrid,
        mesh: SpatialMesh,
        engine: CollisionEngine,
        bc: BoundaryData,
    }

    fn fixture(spec: KernelSpec, n: usize, cells: usize) -> Fixture {
        let grid = build_velocity_grid(n, 6.0).unwrap();
        let mesh = SpatialMesh::new(1.0, cells).unwrap();
        let engine = build_kernel(&spec, &grid).unwrap();
        let bc = BoundaryData::equilibrium(&grid);
        Fixture { grid, mesh, engine, bc }
    }

    fn ctx(f: &Fixture, epsilon: f64) -> StepContext<'_> {
        StepContext {
            grid: &f.grid,
            mesh: &f.mesh,
            engine: &f.engine,
            boundary: &f.bc,
            epsilon,
            scheme: TransportScheme::Upwind,
            integrability_cap: 1e6,
        }
    }

    fn anisotropic(grid: &VelocityGrid) -> Vec<f64> {
        grid.sample(|v| {
            let t = [0.6, 1.2, 1.2];
            (0..3)
                .map(|a| (-v[a] * v[a] / (2.0 * t[a])).exp() / (2.0 * std::f64::consts::PI * t[a]).sqrt())
                .product()
        })
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let f = fixture(KernelSpec::bgk(1.0), 6, 8);
        let c = ctx(&f, 1.0);
        let m = DistributionField::uniform(8, f.grid.maxwellian());
        let mut state = SolverState::new(m.clone(), &f.grid, &f.mesh, 1.0, false);
        let dt = crate::transport::cfl_limit(&f.grid, &f.mesh, 1.0);
        for _ in 0..5 {
            advance(&mut state, dt, &c).unwrap();
        }
        assert!(state.field.l1_distance(&m, &f.grid, &f.mesh) < 1e-13);
        assert!((state.t - 5.0 * dt).abs() < 1e-15);
    }

    #[test]
    fn bgk_relaxation_follows_exponential() {
        let f = fixture(KernelSpec::bgk(0.5), 8, 1);
        let f0 = anisotropic(&f.grid);
        let field = DistributionField::uniform(1, &f0);
        let eq = discrete_equilibrium(f.grid.conserved_moments(&f0), &f.grid).unwrap().profile();
        let (next, drop) = collision_step(&field, 0.3, &f.engine, 1.0, &f.mesh).unwrap();
        let decay = (-0.3f64 / 0.5).exp();
        for i in 0..f.grid.len() {
            let oracle = eq[i] + decay * (f0[i] - eq[i]);
            assert!((next.cell(0)[i] - oracle).abs() < 1e-14);
        }
        assert!(drop > 0.0);
        let m0 = f.grid.conserved_moments(&f0);
        let m1 = f.grid.conserved_moments(next.cell(0));
        for k in 0..5 {
            assert!((m0[k] - m1[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn homogeneous_scaled_time_is_t_over_eps_squared() {
        let f = fixture(KernelSpec::bgk(1.0), 8, 2);
        let field = DistributionField::uniform(2, &anisotropic(&f.grid));
        let (a, _) = collision_step(&field, 0.01, &f.engine, 0.1, &f.mesh).unwrap();
        let (b, _) = collision_step(&field, 1.0, &f.engine, 1.0, &f.mesh).unwrap();
        assert!(a.l1_distance(&b, &f.grid, &f.mesh) < 1e-13);
    }

    #[test]
    fn positivity_guard_reports_admissible_step() {
        let f = fixture(KernelSpec::hard_sphere(), 6, 1);
        let field = DistributionField::uniform(1, f.grid.maxwellian());
        let limit = positivity_limit(&field, &f.engine, 1.0);
        match collision_step(&field, 2.0 * limit, &f.engine, 1.0, &f.mesh) {
            Err(Error::Positivity { admissible, .. }) => assert_eq!(admissible, limit),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn free_window_converges_in_one_iteration() {
        let f = fixture(KernelSpec::new(KernelFamily::Free), 6, 8);
        let c = ctx(&f, 1.0);
        let field = DistributionField::from_fn(8, f.grid.len(), |k, i| f.grid.maxwellian()[i] * (1.0 + 0.1 * k as f64));
        let dt = 0.5 * crate::transport::cfl_limit(&f.grid, &f.mesh, 1.0);
        let out = fixed_point_solve(&field, dt, 0.0, &c, 1e-14, 5).unwrap();
        assert_eq!(out.iterations, 1);
        let (pure, _) = scaled_transport_step(TransportScheme::Upwind, &field, dt, 0.0, 1.0, &f.bc, &f.mesh, &f.grid).unwrap();
        assert_eq!(out.field, pure);
    }

    #[test]
    fn bgk_window_contracts_at_dt_over_tau() {
        let tau = 0.5;
        let f = fixture(KernelSpec::bgk(tau), 6, 6);
        let c = ctx(&f, 1.0);
        let a = anisotropic(&f.grid);
        let field = DistributionField::uniform(6, &a);
        let dt = 0.5 * crate::transport::cfl_limit(&f.grid, &f.mesh, 1.0);
        let out = fixed_point_solve(&field, dt, 0.0, &c, 1e-13, 30).unwrap();
        assert!(out.iterations <= 10, "{}", out.iterations);
        let expected = dt / tau;
        for r in &out.ratios[..out.ratios.len() - 1] {
            assert!((r / expected - 1.0).abs() < 0.2, "{r} vs {expected}");
        }
        assert!(out.warning.is_none());
    }

    #[test]
    fn non_convergence_carries_ratios() {
        let f = fixture(KernelSpec::bgk(0.5), 6, 4);
        let c = ctx(&f, 1.0);
        let field = DistributionField::uniform(4, &anisotropic(&f.grid));
        let dt = 0.5 * crate::transport::cfl_limit(&f.grid, &f.mesh, 1.0);
        match fixed_point_solve(&field, dt, 0.0, &c, 0.0, 3) {
            Err(Error::NonConvergence { iterations, ratios }) => {
                assert_eq!(iterations, 3);
                assert_eq!(ratios.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }
}
