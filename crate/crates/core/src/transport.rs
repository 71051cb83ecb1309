//! Free transport `∂_t F + c v_x ∂_x F = 0` on the slab with prescribed
//! incoming data and recorded wall traces.
//!
//! Two sweeps share one bookkeeping path. The upwind finite-volume step is
//! the general scheme. The characteristic step shifts each node by an integer
//! number of cells, which is the exact solution when `c v_x dt / Δx` is an
//! integer for every node. Wall traces are emitted as [`TracePiece`]s: a value
//! together with its boundary measure `w |v_x| dt` over the part of the step
//! it occupied.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{DistributionField, SpatialMesh, VelocityGrid, Wall};
use crate::par;

/// Time modulation `a(t)` of a boundary pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeProfile {
    Constant,
    /// `cos(ω t)`.
    Cosine { omega: f64 },
}

impl TimeProfile {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::Constant => 1.0,
            TimeProfile::Cosine { omega } => (omega * t).cos(),
        }
    }
}

/// Prescribed density on one wall, `Z(t, v) = base(v) + a(t) pulse(v)` with
/// `|a| ≤ 1`. Only the wall's incoming nodes are read.
#[derive(Debug, Clone, PartialEq)]
pub struct WallInflow {
    base: Vec<f64>,
    pulse: Option<(Vec<f64>, TimeProfile)>,
}

impl WallInflow {
    pub fn constant(base: Vec<f64>) -> Self {
        WallInflow { base, pulse: None }
    }

    pub fn modulated(base: Vec<f64>, pulse: Vec<f64>, profile: TimeProfile) -> Self {
        WallInflow {
            base,
            pulse: Some((pulse, profile)),
        }
    }

    pub fn value(&self, node: usize, t: f64) -> f64 {
        match &self.pulse {
            None => self.base[node],
            Some((p, profile)) => self.base[node] + profile.at(t) * p[node],
        }
    }

    fn lower_bound(&self, node: usize) -> f64 {
        match &self.pulse {
            None => self.base[node],
            Some((p, _)) => self.base[node] - p[node].abs(),
        }
    }
}

/// Incoming data on both walls.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    walls: [WallInflow; 2],
}

/// Default cap on `∫ Z (1 + |v|² + |log Z|) dμ` per wall.
pub const DEFAULT_INTEGRABILITY_CAP: f64 = 1e6;

impl BoundaryData {
    /// Checks `Z ≥ 0` on every incoming node for all times.
    pub fn new(left: WallInflow, right: WallInflow, grid: &VelocityGrid) -> Result<Self> {
        for (wall, data) in Wall::BOTH.iter().zip([&left, &right]) {
            let lens = [Some(data.base.len()), data.pulse.as_ref().map(|p| p.0.len())];
            if lens.iter().flatten().any(|&l| l != grid.len()) {
                return Err(Error::Config(format!(
                    "boundary data on {wall:?} wall must have one value per velocity node"
                )));
            }
            for i in 0..grid.len() {
                let low = data.lower_bound(i);
                if wall.is_incoming(grid.node(i)[0]) && (!(low >= 0.0) || !low.is_finite()) {
                    return Err(Error::Config(format!(
                        "boundary data on {wall:?} wall must be nonnegative (node {i} reaches {low})"
                    )));
                }
            }
        }
        Ok(BoundaryData { walls: [left, right] })
    }

    /// `Z = M` on both walls.
    pub fn equilibrium(grid: &VelocityGrid) -> Self {
        let m = grid.maxwellian().to_vec();
        BoundaryData {
            walls: [WallInflow::constant(m.clone()), WallInflow::constant(m)],
        }
    }

    /// `Z = 0` on both walls.
    pub fn vacuum(grid: &VelocityGrid) -> Self {
        let z = vec![0.0; grid.len()];
        BoundaryData {
            walls: [WallInflow::constant(z.clone()), WallInflow::constant(z)],
        }
    }

    /// `Z = M (1 + amplitude ẑ)` on both walls.
    pub fn fluctuation(grid: &VelocityGrid, amplitude: f64, zhat: &[f64]) -> Result<Self> {
        let z: Vec<f64> = grid
            .maxwellian()
            .iter()
            .zip(zhat)
            .map(|(m, z)| m * (1.0 + amplitude * z))
            .collect();
        Self::new(WallInflow::constant(z.clone()), WallInflow::constant(z), grid)
    }

    /// `profile` entering through `wall`, vacuum on the other wall.
    pub fn one_sided(grid: &VelocityGrid, wall: Wall, profile: Vec<f64>) -> Result<Self> {
        let zero = WallInflow::constant(vec![0.0; grid.len()]);
        let given = WallInflow::constant(profile);
        match wall {
            Wall::Left => Self::new(given, zero, grid),
            Wall::Right => Self::new(zero, given, grid),
        }
    }

    pub fn wall(&self, wall: Wall) -> &WallInflow {
        &self.walls[wall.slot()]
    }

    pub fn value(&self, wall: Wall, node: usize, t: f64) -> f64 {
        self.walls[wall.slot()].value(node, t)
    }

    pub fn is_stationary(&self) -> bool {
        self.walls.iter().all(|w| w.pulse.is_none())
    }

    /// `Σ_{Σ₋} w |v_x| Z (1 + |v|² + |log Z|)` at time `t`.
    pub fn integrability(&self, wall: Wall, grid: &VelocityGrid, t: f64) -> f64 {
        (0..grid.len())
            .filter(|&i| wall.is_incoming(grid.node(i)[0]))
            .map(|i| {
                let v = grid.node(i);
                let z = self.value(wall, i, t);
                let log = if z > 0.0 { z.ln().abs() } else { 0.0 };
                grid.weights()[i] * v[0].abs() * z * (1.0 + v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + log)
            })
            .sum()
    }

    pub fn check_integrability(&self, grid: &VelocityGrid, t: f64, cap: f64) -> Result<()> {
        for wall in Wall::BOTH {
            let value = self.integrability(wall, grid, t);
            if !(value <= cap) {
                return Err(Error::Config(format!(
                    "boundary data on {wall:?} wall has weighted mass {value:e} above the cap {cap:e}"
                )));
            }
        }
        Ok(())
    }
}

/// One boundary record: a trace value held over part of a substep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePiece {
    pub wall: Wall,
    pub node: usize,
    /// `true` for injected data on `Σ₋`, `false` for `γ₊F` on `Σ₊`.
    pub incoming: bool,
    pub value: f64,
    /// `w |v_x| duration`, the `dμ dt` weight in unscaled time units.
    pub measure: f64,
    /// Midpoint of the interval the value occupies.
    pub time: f64,
    pub duration: f64,
}

impl Serialize for Wall {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(match self {
            Wall::Left => "left",
            Wall::Right => "right",
        })
    }
}

/// Boundary output of one transport substep.
#[derive(Debug, Clone, Default)]
pub struct LedgerIncrement {
    pub t: f64,
    pub dt: f64,
    /// Transport speed factor `c` (1/ε in scaled runs).
    pub speed: f64,
    pub pieces: Vec<TracePiece>,
    /// Outward mass flux through each wall as used by the sweep,
    /// `Σ_i w_i (face flux) dt`.
    pub wall_flux: [f64; 2],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FluxTotals {
    pub mass: f64,
    pub momentum: [f64; 3],
    pub energy: f64,
    /// `∫∫ h(γF/M) dς`.
    pub entropy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WallLedger {
    pub outflux: FluxTotals,
    pub influx: FluxTotals,
    /// `∫∫ γ₊F (1 + |v|²) dμ`.
    pub out_moment_weight: f64,
    /// `∫∫ γ₊F |log γ₊F| dμ`.
    pub out_log_weight: f64,
    /// `∫∫ (γ g̃_ε)² dς` over both `Σ₊` and `Σ₋`.
    pub fluctuation_sq: f64,
    /// `∫ (∫ v_y γ g̃_ε dς)² dt`, the squared tangential wall moment.
    pub tangential_sq: f64,
    /// `∫∫ h(γF/M) dς` summed over `Σ₊` and `Σ₋` without the speed factor.
    pub entropy_unscaled: f64,
}

/// Running boundary integrals for a run. Fluxes carry the transport speed
/// factor, so interior totals plus net outflux are conserved; the
/// fluctuation integrals use the unscaled measure `dς dt`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceLedger {
    pub epsilon: f64,
    pub walls: [WallLedger; 2],
    /// Largest `|FV wall flux − n·Σ w v_x γF|` seen so far.
    pub commutativity_residual: f64,
    /// Largest one-sided wall flux seen, the scale for the residual above.
    pub commutativity_scale: f64,
    pub substeps: usize,
    #[serde(skip)]
    pub record: bool,
    #[serde(skip)]
    pub pieces: Vec<TracePiece>,
}

impl TraceLedger {
    pub fn new(epsilon: f64, record: bool) -> Self {
        TraceLedger {
            epsilon,
            walls: Default::default(),
            commutativity_residual: 0.0,
            commutativity_scale: 0.0,
            substeps: 0,
            record,
            pieces: Vec::new(),
        }
    }

    pub fn wall(&self, wall: Wall) -> &WallLedger {
        &self.walls[wall.slot()]
    }

    /// Summed over both walls.
    pub fn total_influx(&self) -> FluxTotals {
        sum_totals(self.walls.iter().map(|w| w.influx))
    }

    pub fn total_outflux(&self) -> FluxTotals {
        sum_totals(self.walls.iter().map(|w| w.outflux))
    }

    pub fn absorb(&mut self, inc: LedgerIncrement, grid: &VelocityGrid) {
        let m = grid.maxwellian();
        let eps = self.epsilon;
        let mut trace_flux = [0.0; 2];
        let mut one_sided = [0.0f64; 2];
        let mut tangential = [0.0; 2];
        for p in &inc.pieces {
            let v = grid.node(p.node);
            let slot = p.wall.slot();
            let ledger = &mut self.walls[slot];
            let phys = p.measure * inc.speed;
            let totals = if p.incoming { &mut ledger.influx } else { &mut ledger.outflux };
            let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            let h = m[p.node] * relative_h(p.value / m[p.node]);
            totals.mass += p.value * phys;
            for a in 0..3 {
                totals.momentum[a] += v[a] * p.value * phys;
            }
            totals.energy += v2 * p.value * phys;
            totals.entropy += h * phys;
            ledger.entropy_unscaled += h * p.measure;
            if !p.incoming {
                ledger.out_moment_weight += p.value * (1.0 + v2) * p.measure;
                if p.value > 0.0 {
                    ledger.out_log_weight += p.value * p.value.ln().abs() * p.measure;
                }
            }
            let g = (p.value / m[p.node] - 1.0) / eps;
            let gt = g / (1.0 + eps * eps * g * g);
            ledger.fluctuation_sq += m[p.node] * gt * gt * p.measure;
            tangential[slot] += m[p.node] * v[1] * gt * p.measure;
            let signed = p.value * phys;
            trace_flux[slot] += if p.incoming { -signed } else { signed };
            one_sided[slot] = one_sided[slot].max(signed.abs());
        }
        for slot in 0..2 {
            let residual = (inc.wall_flux[slot] - trace_flux[slot]).abs();
            self.commutativity_residual = self.commutativity_residual.max(residual);
            self.commutativity_scale = self
                .commutativity_scale
                .max(inc.wall_flux[slot].abs())
                .max(one_sided[slot]);
            if inc.dt > 0.0 {
                self.walls[slot].tangential_sq += tangential[slot] * tangential[slot] / inc.dt;
            }
        }
        self.substeps += 1;
        if self.record {
            self.pieces.extend(inc.pieces);
        }
    }
}

fn sum_totals(it: impl Iterator<Item = FluxTotals>) -> FluxTotals {
    it.fold(FluxTotals::default(), |mut acc, t| {
        acc.mass += t.mass;
        for a in 0..3 {
            acc.momentum[a] += t.momentum[a];
        }
        acc.energy += t.energy;
        acc.entropy += t.entropy;
        acc
    })
}

/// `h(x) = x log x − x + 1` with `h(0) = 1`.
pub fn relative_h(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        x * x.ln() - x + 1.0
    }
}

/// Sweep used for the transport substeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportScheme {
    /// First-order upwind finite volumes under `c dt max|v_x| ≤ Δx`.
    #[default]
    Upwind,
    /// Exact integer-cell shifts; requires `c v_x dt / Δx` integral.
    Characteristic,
}

/// Largest `dt` with `c dt max|v_x| ≤ Δx`.
pub fn cfl_limit(grid: &VelocityGrid, mesh: &SpatialMesh, speed: f64) -> f64 {
    let vmax = grid.max_abs_vx() * speed;
    if vmax == 0.0 {
        f64::INFINITY
    } else {
        mesh.dx() / vmax
    }
}

/// Smallest positive `dt` for which every node shifts by a whole number of
/// cells: the lattice has `v_x = (2m + 1) h / 2`, so `c (h/2) dt = Δx`
/// gives odd shifts `2m + 1`.
pub fn characteristic_dt(grid: &VelocityGrid, mesh: &SpatialMesh, speed: f64) -> f64 {
    2.0 * mesh.dx() / (speed * grid.spacing())
}

/// Upwind step with unit speed.
pub fn transport_step(
    field: &DistributionField,
    dt: f64,
    t: f64,
    bc: &BoundaryData,
    mesh: &SpatialMesh,
    grid: &VelocityGrid,
) -> Result<(DistributionField, LedgerIncrement)> {
    scaled_transport_step(TransportScheme::Upwind, field, dt, t, 1.0, bc, mesh, grid)
}

/// One transport substep of length `dt` at speed `c` with the chosen sweep.
#[allow(clippy::too_many_arguments)]
pub fn scaled_transport_step(
    scheme: TransportScheme,
    field: &DistributionField,
    dt: f64,
    t: f64,
    speed: f64,
    bc: &BoundaryData,
    mesh: &SpatialMesh,
    grid: &VelocityGrid,
) -> Result<(DistributionField, LedgerIncrement)> {
    if !(dt >= 0.0) || !(speed > 0.0) {
        return Err(Error::Contract(format!("transport needs dt ≥ 0 and speed > 0 (got {dt}, {speed})")));
    }
    let nv = grid.len();
    let nc = mesh.n_cells();
    if field.n_nodes() != nv || field.n_cells() != nc {
        return Err(Error::Contract("field shape does not match the grid and mesh".into()));
    }
    if scheme == TransportScheme::Upwind {
        let limit = cfl_limit(grid, mesh, speed);
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt, admissible: limit });
        }
    }
    let plans = (0..nv)
        .map(|i| NodePlan::new(scheme, speed * grid.node(i)[0], dt, t, i, bc, mesh))
        .collect::<Result<Vec<_>>>()?;
    let old = field.values();
    let mut next = vec![0.0; nc * nv];
    par::for_each_chunk_mut(&mut next, nv, |k, row| {
        for (i, (x, plan)) in row.iter_mut().zip(&plans).enumerate() {
            *x = plan.update(old, k, i, nc, nv);
        }
    });
    let mut inc = LedgerIncrement {
        t,
        dt,
        speed,
        pieces: Vec::new(),
        wall_flux: [0.0; 2],
    };
    // node order fixes the reduction order
    for (i, plan) in plans.iter().enumerate() {
        plan.wall_records(old, i, nc, nv, grid, &mut inc);
    }
    let next = DistributionField::from_values(nc, nv, next)?;
    Ok((next, inc))
}

/// Per-node data of one sweep.
struct NodePlan {
    c: f64,
    /// Upwind Courant number, or the integer shift.
    lambda: f64,
    shift: usize,
    scheme: TransportScheme,
    z: f64,
    t: f64,
    dt: f64,
}

impl NodePlan {
    fn new(
        scheme: TransportScheme,
        c: f64,
        dt: f64,
        t: f64,
        node: usize,
        bc: &BoundaryData,
        mesh: &SpatialMesh,
    ) -> Result<Self> {
        let exact = c.abs() * dt / mesh.dx();
        let mut shift = 0;
        if scheme == TransportScheme::Characteristic && c != 0.0 && dt > 0.0 {
            let s = exact.round();
            if (exact - s).abs() > 1e-9 * exact.max(1.0) || s < 1.0 {
                return Err(Error::Contract(format!(
                    "characteristic transport needs integer cell shifts (node {node} moves {exact} cells)"
                )));
            }
            shift = s as usize;
        }
        let z = if c == 0.0 { 0.0 } else { bc.value(walls_for(c).0, node, t) };
        Ok(NodePlan {
            c,
            lambda: exact,
            shift,
            scheme,
            z,
            t,
            dt,
        })
    }

    /// Value of cell `k` after the sweep.
    #[inline]
    fn update(&self, old: &[f64], k: usize, i: usize, nc: usize, nv: usize) -> f64 {
        let here = old[k * nv + i];
        if self.c == 0.0 {
            return here;
        }
        // position counted from the entry wall
        let pos = if self.c > 0.0 { k } else { nc - 1 - k };
        let cell = |p: usize| if self.c > 0.0 { p } else { nc - 1 - p };
        match self.scheme {
            TransportScheme::Upwind => {
                let up = if pos == 0 { self.z } else { old[cell(pos - 1) * nv + i] };
                here - self.lambda * (here - up)
            }
            TransportScheme::Characteristic => {
                if self.shift == 0 {
                    here
                } else if pos < self.shift {
                    self.z
                } else {
                    old[cell(pos - self.shift) * nv + i]
                }
            }
        }
    }

    /// Trace pieces and finite-volume wall fluxes of this node.
    fn wall_records(&self, old: &[f64], node: usize, nc: usize, nv: usize, grid: &VelocityGrid, inc: &mut LedgerIncrement) {
        if self.c == 0.0 || self.dt == 0.0 {
            return;
        }
        let (entry, exit) = walls_for(self.c);
        let w = grid.weights()[node];
        let vx = grid.node(node)[0].abs();
        let cell = |p: usize| if self.c > 0.0 { p } else { nc - 1 - p };
        let pieces = match self.scheme {
            TransportScheme::Upwind => 1,
            TransportScheme::Characteristic => self.shift,
        };
        let sub = self.dt / pieces as f64;
        let measure = w * vx * sub;
        let mut out_sum = 0.0;
        for m in 0..pieces {
            // the most downstream value leaves first; past the interior the
            // injected value passes straight through
            let value = if m < nc { old[cell(nc - 1 - m) * nv + node] } else { self.z };
            out_sum += value;
            let time = self.t + (m as f64 + 0.5) * sub;
            inc.pieces.push(TracePiece {
                wall: exit,
                node,
                incoming: false,
                value,
                measure,
                time,
                duration: sub,
            });
            inc.pieces.push(TracePiece {
                wall: entry,
                node,
                incoming: true,
                value: self.z,
                measure,
                time,
                duration: sub,
            });
        }
        inc.wall_flux[exit.slot()] += w * self.c.abs() * out_sum * sub;
        inc.wall_flux[entry.slot()] -= w * self.c.abs() * self.z * sub * pieces as f64;
    }
}

/// Entry and exit walls for a signed speed.
fn walls_for(c: f64) -> (Wall, Wall) {
    if c > 0.0 {
        (Wall::Left, Wall::Right)
    } else {
        (Wall::Right, Wall::Left)
    }
}

/// Collisionless exact solution at cell centers: `F₀(x − c v_x t, v)` while
/// the characteristic stays inside the slab, else the inflow value at the
/// entry time.
pub fn exact_free_stream<F>(
    initial: F,
    bc: &BoundaryData,
    t: f64,
    speed: f64,
    mesh: &SpatialMesh,
    grid: &VelocityGrid,
) -> DistributionField
where
    F: Fn(f64, usize) -> f64,
{
    let length = mesh.length();
    DistributionField::from_fn(mesh.n_cells(), grid.len(), |k, i| {
        let x = mesh.center(k);
        let c = speed * grid.node(i)[0];
        let foot = x - c * t;
        if c == 0.0 || (foot > 0.0 && foot < length) {
            initial(foot, i)
        } else if c > 0.0 {
            bc.value(Wall::Left, i, t - x / c)
        } else {
            bc.value(Wall::Right, i, t - (length - x) / c.abs())
        }
    })
}
