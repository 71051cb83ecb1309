//! Velocity lattice, slab mesh, distribution storage and velocity moments.
//!
//! Velocities are measured in thermal-speed units, so the global Maxwellian is
//! `M(v) = (2π)^{-3/2} exp(-|v|²/2)`. The lattice is a uniform Cartesian
//! midpoint grid on `[-v_max, v_max]³`; its weights are rescaled once so that
//! the discrete bracket `⟨1⟩ = Σ w M` is exactly one.

use nalgebra::{Matrix5, Vector5};

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Analytic global Maxwellian.
#[inline]
pub fn maxwellian_at(v: [f64; 3]) -> f64 {
    TWO_PI.powf(-1.5) * (-0.5 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).exp()
}

/// Collision invariants `(1, v_x, v_y, v_z, |v|²)` at a velocity.
#[inline]
pub fn invariants(v: [f64; 3]) -> [f64; 5] {
    [1.0, v[0], v[1], v[2], v[0] * v[0] + v[1] * v[1] + v[2] * v[2]]
}

#[derive(Debug, Clone)]
pub struct VelocityGrid {
    n_per_axis: usize,
    v_max: f64,
    spacing: f64,
    axis: Vec<f64>,
    nodes: Vec<[f64; 3]>,
    weights: Vec<f64>,
    maxwellian: Vec<f64>,
    // inverse of the M-weighted Gram matrix of the invariants
    gram_inv: Matrix5<f64>,
}

/// Builds the midpoint lattice with `n_per_axis` nodes per axis.
pub fn build_velocity_grid(n_per_axis: usize, v_max: f64) -> Result<VelocityGrid> {
    if n_per_axis < 4 || !n_per_axis.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "n_per_axis must be even and at least 4 for a negation-symmetric lattice (got {n_per_axis})"
        )));
    }
    if !(v_max > 0.0) || !v_max.is_finite() {
        return Err(Error::Config(format!("v_max must be positive (got {v_max})")));
    }
    let spacing = 2.0 * v_max / n_per_axis as f64;
    let axis: Vec<f64> = (0..n_per_axis)
        .map(|k| -v_max + (k as f64 + 0.5) * spacing)
        .collect();
    let n = n_per_axis;
    let mut nodes = Vec::with_capacity(n * n * n);
    for &x in &axis {
        for &y in &axis {
            for &z in &axis {
                nodes.push([x, y, z]);
            }
        }
    }
    let maxwellian: Vec<f64> = nodes.iter().map(|&v| maxwellian_at(v)).collect();
    let raw = spacing.powi(3);
    let total: f64 = maxwellian.iter().map(|m| raw * m).sum();
    let w = raw / total;
    let weights = vec![w; nodes.len()];

    let mut gram = Matrix5::<f64>::zeros();
    for (v, m) in nodes.iter().zip(&maxwellian) {
        let phi = Vector5::from(invariants(*v));
        gram += (w * m) * phi * phi.transpose();
    }
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| Error::Invariant("singular invariant Gram matrix".into()))?;

    Ok(VelocityGrid {
        n_per_axis,
        v_max,
        spacing,
        axis,
        nodes,
        weights,
        maxwellian,
        gram_inv,
    })
}

impl VelocityGrid {
    pub fn n_per_axis(&self) -> usize {
        self.n_per_axis
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    /// Lattice spacing `h`.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// One-dimensional node coordinates, shared by all three axes.
    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> [f64; 3] {
        self.nodes[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The common quadrature weight (the lattice is uniform).
    pub fn uniform_weight(&self) -> f64 {
        self.weights[0]
    }

    pub fn maxwellian(&self) -> &[f64] {
        &self.maxwellian
    }

    #[inline]
    pub fn index(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.n_per_axis + b) * self.n_per_axis + c
    }

    #[inline]
    pub fn axis_indices(&self, i: usize) -> (usize, usize, usize) {
        let n = self.n_per_axis;
        (i / (n * n), (i / n) % n, i % n)
    }

    /// Index of the node `-v_i`.
    #[inline]
    pub fn negate(&self, i: usize) -> usize {
        let n = self.n_per_axis;
        let (a, b, c) = self.axis_indices(i);
        self.index(n - 1 - a, n - 1 - b, n - 1 - c)
    }

    /// Largest `|v_x|` on the lattice.
    pub fn max_abs_vx(&self) -> f64 {
        self.v_max - 0.5 * self.spacing
    }

    /// `⟨φ⟩ = Σ w φ M`.
    pub fn bracket(&self, phi: &[f64]) -> f64 {
        debug_assert_eq!(phi.len(), self.len());
        phi.iter()
            .zip(&self.weights)
            .zip(&self.maxwellian)
            .map(|((p, w), m)| p * w * m)
            .sum()
    }

    /// `⟨f g⟩`, the inner product used by the linearized operator.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter()
            .zip(g)
            .zip(self.weights.iter().zip(&self.maxwellian))
            .map(|((a, b), (w, m))| a * b * w * m)
            .sum()
    }

    /// `Σ w φ_k F` for the five collision invariants.
    pub fn conserved_moments(&self, profile: &[f64]) -> [f64; 5] {
        let mut out = [0.0; 5];
        for ((v, w), f) in self.nodes.iter().zip(&self.weights).zip(profile) {
            let phi = invariants(*v);
            for k in 0..5 {
                out[k] += w * phi[k] * f;
            }
        }
        out
    }

    /// Removes the invariant content of a collision output: subtracts
    /// `M Σ c_k φ_k` with `c` chosen so that every `Σ w φ_k q` vanishes.
    pub fn conservation_project(&self, q: &[f64]) -> Vec<f64> {
        let mut out = q.to_vec();
        self.conservation_project_in_place(&mut out);
        out
    }

    pub fn conservation_project_in_place(&self, q: &mut [f64]) {
        // a second pass mops up the roundoff left by the first
        self.project_once(q);
        self.project_once(q);
    }

    fn project_once(&self, q: &mut [f64]) {
        let b = Vector5::from(self.conserved_moments(q));
        let c = self.gram_inv * b;
        for ((qi, v), m) in q.iter_mut().zip(&self.nodes).zip(&self.maxwellian) {
            let phi = invariants(*v);
            let corr: f64 = (0..5).map(|k| c[k] * phi[k]).sum();
            *qi -= m * corr;
        }
    }

    /// Projection with the correction `F Σ c_k φ_k` in place of
    /// `M Σ c_k φ_k`, so nodes where `F` vanishes receive no correction.
    /// Falls back to the `M`-weighted form when the `F`-weighted Gram matrix
    /// is singular.
    pub fn conservation_project_weighted(&self, q: &mut [f64], weight: &[f64]) {
        let mut gram = Matrix5::<f64>::zeros();
        for ((v, w), f) in self.nodes.iter().zip(&self.weights).zip(weight) {
            let phi = Vector5::from(invariants(*v));
            gram += (w * f) * phi * phi.transpose();
        }
        let Some(chol) = gram.cholesky() else {
            self.conservation_project_in_place(q);
            return;
        };
        for _ in 0..2 {
            let c = chol.solve(&Vector5::from(self.conserved_moments(q)));
            for ((qi, v), f) in q.iter_mut().zip(&self.nodes).zip(weight) {
                let phi = invariants(*v);
                let corr: f64 = (0..5).map(|k| c[k] * phi[k]).sum();
                *qi -= f * corr;
            }
        }
    }

    /// Samples a function of velocity on every node.
    pub fn sample<F: Fn([f64; 3]) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes.iter().map(|&v| f(v)).collect()
    }
}

/// Wall of the slab `(0, L)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Wall {
    /// `x = 0`, outward normal `-e_x`.
    Left,
    /// `x = L`, outward normal `+e_x`.
    Right,
}

impl Wall {
    pub const BOTH: [Wall; 2] = [Wall::Left, Wall::Right];

    pub fn normal_x(self) -> f64 {
        match self {
            Wall::Left => -1.0,
            Wall::Right => 1.0,
        }
    }

    pub fn slot(self) -> usize {
        match self {
            Wall::Left => 0,
            Wall::Right => 1,
        }
    }

    /// `n·v < 0`: the node enters the domain through this wall.
    pub fn is_incoming(self, vx: f64) -> bool {
        self.normal_x() * vx < 0.0
    }

    /// `n·v > 0`: the node leaves through this wall.
    pub fn is_outgoing(self, vx: f64) -> bool {
        self.normal_x() * vx > 0.0
    }
}

/// One-dimensional slab `(0, L)` split into equal cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMesh {
    length: f64,
    n_cells: usize,
    dx: f64,
}

impl SpatialMesh {
    pub fn new(length: f64, n_cells: usize) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::Config(format!("slab length must be positive (got {length})")));
        }
        if n_cells == 0 {
            return Err(Error::Config("n_cells must be positive".into()));
        }
        Ok(SpatialMesh {
            length,
            n_cells,
            dx: length / n_cells as f64,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dx
    }

    pub fn wall_position(&self, wall: Wall) -> f64 {
        match wall {
            Wall::Left => 0.0,
            Wall::Right => self.length,
        }
    }

    /// Nodes of Σ₋ at this wall (`n·v < 0`). Nodes with `v_x = 0` belong to
    /// neither Σ₋ nor Σ₊.
    pub fn incoming_nodes(&self, wall: Wall, grid: &VelocityGrid) -> Vec<usize> {
        (0..grid.len())
            .filter(|&i| wall.is_incoming(grid.node(i)[0]))
            .collect()
    }

    pub fn outgoing_nodes(&self, wall: Wall, grid: &VelocityGrid) -> Vec<usize> {
        (0..grid.len())
            .filter(|&i| wall.is_outgoing(grid.node(i)[0]))
            .collect()
    }

    /// Nodes with `v_x = 0` (the Σ₀ set, zero boundary measure).
    pub fn grazing_nodes(&self, grid: &VelocityGrid) -> Vec<usize> {
        (0..grid.len()).filter(|&i| grid.node(i)[0] == 0.0).collect()
    }
}

/// Number density on (cell × velocity node), stored cell-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionField {
    n_cells: usize,
    n_nodes: usize,
    values: Vec<f64>,
}

impl DistributionField {
    pub fn zeros(n_cells: usize, n_nodes: usize) -> Self {
        DistributionField {
            n_cells,
            n_nodes,
            values: vec![0.0; n_cells * n_nodes],
        }
    }

    /// The same velocity profile in every cell.
    pub fn uniform(n_cells: usize, profile: &[f64]) -> Self {
        let mut values = Vec::with_capacity(n_cells * profile.len());
        for _ in 0..n_cells {
            values.extend_from_slice(profile);
        }
        DistributionField {
            n_cells,
            n_nodes: profile.len(),
            values,
        }
    }

    /// Builds a field from a function of (cell index, node index).
    pub fn from_fn<F: Fn(usize, usize) -> f64>(n_cells: usize, n_nodes: usize, f: F) -> Self {
        let mut values = Vec::with_capacity(n_cells * n_nodes);
        for k in 0..n_cells {
            for i in 0..n_nodes {
                values.push(f(k, i));
            }
        }
        DistributionField {
            n_cells,
            n_nodes,
            values,
        }
    }

    pub fn from_values(n_cells: usize, n_nodes: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_cells * n_nodes {
            return Err(Error::Contract(format!(
                "field has {} values, expected {}",
                values.len(),
                n_cells * n_nodes
            )));
        }
        Ok(DistributionField {
            n_cells,
            n_nodes,
            values,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn cell(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_nodes..(k + 1) * self.n_nodes]
    }

    pub fn cell_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.n_nodes..(k + 1) * self.n_nodes]
    }

    pub fn cells(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.n_nodes)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Checks the `F ≥ 0`, finite invariant.
    pub fn check_admissible(&self) -> Result<()> {
        for (idx, &v) in self.values.iter().enumerate() {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Contract(format!(
                    "distribution value {v} at cell {} node {} is not a finite nonnegative number",
                    idx / self.n_nodes,
                    idx % self.n_nodes
                )));
            }
        }
        Ok(())
    }

    /// `Σ_cells Δx Σ_i w_i |F|` (the discrete L¹ norm).
    pub fn l1_norm(&self, grid: &VelocityGrid, mesh: &SpatialMesh) -> f64 {
        let w = grid.weights();
        self.cells()
            .map(|c| c.iter().zip(w).map(|(f, w)| w * f.abs()).sum::<f64>())
            .sum::<f64>()
            * mesh.dx()
    }

    /// Discrete L¹ distance between two fields of the same shape.
    pub fn l1_distance(&self, other: &Self, grid: &VelocityGrid, mesh: &SpatialMesh) -> f64 {
        let w = grid.weights();
        self.cells()
            .zip(other.cells())
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .zip(w)
                    .map(|((x, y), w)| w * (x - y).abs())
                    .sum::<f64>()
            })
            .sum::<f64>()
            * mesh.dx()
    }

    /// Totals of mass, momentum and energy: `Σ Δx Σ w (1, v, |v|²) F`.
    pub fn totals(&self, grid: &VelocityGrid, mesh: &SpatialMesh) -> [f64; 5] {
        let mut out = [0.0; 5];
        for c in self.cells() {
            let m = grid.conserved_moments(c);
            for k in 0..5 {
                out[k] += m[k];
            }
        }
        out.map(|x| x * mesh.dx())
    }
}

/// Per-cell macroscopic fields.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MomentSet {
    pub density: f64,
    pub velocity: [f64; 3],
    pub temperature: f64,
}

impl MomentSet {
    pub const EQUILIBRIUM: MomentSet = MomentSet {
        density: 1.0,
        velocity: [0.0; 3],
        temperature: 1.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentMode {
    /// `F` is a number density: returns (ρ, u, T) from the kinetic moments.
    Raw,
    /// The field holds a fluctuation `g`: returns (⟨g⟩, ⟨v g⟩, ⟨(|v|²/3 − 1) g⟩).
    Fluctuation,
}

pub fn cell_moments(profile: &[f64], grid: &VelocityGrid, mode: MomentMode) -> Result<MomentSet> {
    match mode {
        MomentMode::Raw => {
            let m = grid.conserved_moments(profile);
            raw_moments_from_conserved(m).map_err(|reason| Error::DegenerateCell { cell: 0, reason })
        }
        MomentMode::Fluctuation => {
            let mut rho = 0.0;
            let mut u = [0.0; 3];
            let mut theta = 0.0;
            for ((v, (w, m)), g) in grid
                .nodes()
                .iter()
                .zip(grid.weights().iter().zip(grid.maxwellian()))
                .zip(profile)
            {
                let wm = w * m * g;
                rho += wm;
                u[0] += wm * v[0];
                u[1] += wm * v[1];
                u[2] += wm * v[2];
                let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
                theta += wm * (v2 / 3.0 - 1.0);
            }
            Ok(MomentSet {
                density: rho,
                velocity: u,
                temperature: theta,
            })
        }
    }
}

/// (density, bulk velocity, temperature) from `Σ w (1, v, |v|²) F`.
pub fn raw_moments_from_conserved(m: [f64; 5]) -> std::result::Result<MomentSet, String> {
    let rho = m[0];
    if !(rho > 0.0) {
        return Err(format!("nonpositive density {rho}"));
    }
    let u = [m[1] / rho, m[2] / rho, m[3] / rho];
    let u2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
    let temperature = (m[4] / rho - u2) / 3.0;
    Ok(MomentSet {
        density: rho,
        velocity: u,
        temperature,
    })
}

/// Per-cell moments of a field.
pub fn moments(field: &DistributionField, grid: &VelocityGrid, mode: MomentMode) -> Result<Vec<MomentSet>> {
    field
        .cells()
        .enumerate()
        .map(|(k, c)| {
            cell_moments(c, grid, mode).map_err(|e| match e {
                Error::DegenerateCell { reason, .. } => Error::DegenerateCell { cell: k, reason },
                other => other,
            })
        })
        .collect()
}

/// `ρ (2πθ)^{-3/2} exp(-|v-u|²/(2θ))` sampled on the lattice.
pub fn local_maxwellian(m: &MomentSet, grid: &VelocityGrid) -> Result<Vec<f64>> {
    if !(m.density > 0.0) || !(m.temperature > 0.0) {
        return Err(Error::Domain(format!(
            "local Maxwellian needs positive density and temperature (got {}, {})",
            m.density, m.temperature
        )));
    }
    let norm = m.density * (TWO_PI * m.temperature).powf(-1.5);
    let u = m.velocity;
    Ok(grid.sample(|v| {
        let d = [v[0] - u[0], v[1] - u[1], v[2] - u[2]];
        norm * (-(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) / (2.0 * m.temperature)).exp()
    }))
}

/// Discrete entropic equilibrium `exp(α·(1, v, |v|²))` whose lattice moments
/// equal the target moments exactly. The lattice is a tensor product with a
/// uniform weight, so the profile factorizes as `C·E_x(v_x)E_y(v_y)E_z(v_z)`
/// and every moment sum collapses to products of one-dimensional sums.
#[derive(Debug, Clone)]
pub struct SeparableEquilibrium {
    pub coeffs: [f64; 5],
    scale: f64,
    factors: [Vec<f64>; 3],
}

impl SeparableEquilibrium {
    pub fn value(&self, a: usize, b: usize, c: usize) -> f64 {
        self.scale * self.factors[0][a] * self.factors[1][b] * self.factors[2][c]
    }

    /// Writes the equilibrium into a full lattice profile.
    pub fn fill(&self, out: &mut [f64]) {
        let n = self.factors[0].len();
        let mut i = 0;
        for a in 0..n {
            let fa = self.scale * self.factors[0][a];
            for b in 0..n {
                let fab = fa * self.factors[1][b];
                for c in 0..n {
                    out[i] = fab * self.factors[2][c];
                    i += 1;
                }
            }
        }
    }

    pub fn profile(&self) -> Vec<f64> {
        let n = self.factors[0].len();
        let mut out = vec![0.0; n * n * n];
        self.fill(&mut out);
        out
    }
}

const EQ_MAX_ITER: usize = 60;
const EQ_TOL: f64 = 1e-15;

/// Solves for the discrete equilibrium matching `Σ w (1, v, |v|²) F = target`.
pub fn discrete_equilibrium(target: [f64; 5], grid: &VelocityGrid) -> Result<SeparableEquilibrium> {
    discrete_equilibrium_from(target, grid, None)
}

/// As [`discrete_equilibrium`], optionally warm-started from coefficients.
pub fn discrete_equilibrium_from(
    target: [f64; 5],
    grid: &VelocityGrid,
    guess: Option<[f64; 5]>,
) -> Result<SeparableEquilibrium> {
    let start = match guess {
        Some(g) => g,
        None => {
            let m = raw_moments_from_conserved(target)
                .map_err(|reason| Error::DegenerateCell { cell: 0, reason })?;
            if !(m.temperature > 0.0) {
                return Err(Error::DegenerateCell {
                    cell: 0,
                    reason: format!("nonpositive temperature {}", m.temperature),
                });
            }
            let th = m.temperature;
            let u = m.velocity;
            let u2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
            [
                (m.density * (TWO_PI * th).powf(-1.5)).ln() - u2 / (2.0 * th),
                u[0] / th,
                u[1] / th,
                u[2] / th,
                -0.5 / th,
            ]
        }
    };
    let axis = grid.axis();
    let w = grid.uniform_weight();
    let scales = residual_scales(&target);

    let mut alpha = start;
    let mut state = EqState::evaluate(&alpha, axis, w);
    let mut res = state.residual(&target, &scales);
    for _ in 0..EQ_MAX_ITER {
        if res <= EQ_TOL {
            break;
        }
        let jac = state.jacobian();
        let rhs = Vector5::from(std::array::from_fn::<f64, 5, _>(|k| target[k] - state.moments[k]));
        let delta = match jac.cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => jac
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::DegenerateCell {
                    cell: 0,
                    reason: "singular equilibrium Jacobian".into(),
                })?,
        };
        let mut step = 1.0;
        loop {
            let trial: [f64; 5] = std::array::from_fn(|k| alpha[k] + step * delta[k]);
            let trial_state = EqState::evaluate(&trial, axis, w);
            let trial_res = trial_state.residual(&target, &scales);
            if trial_res.is_finite() && (trial_res < res || step < 1e-6) {
                alpha = trial;
                state = trial_state;
                res = trial_res;
                break;
            }
            step *= 0.5;
        }
    }
    if !(res <= 1e3 * EQ_TOL) {
        return Err(Error::DegenerateCell {
            cell: 0,
            reason: format!("discrete equilibrium did not converge (scaled residual {res:e})"),
        });
    }
    if alpha[4] >= 0.0 {
        return Err(Error::DegenerateCell {
            cell: 0,
            reason: "equilibrium is not integrable (nonnegative |v|² coefficient)".into(),
        });
    }
    Ok(state.into_equilibrium(alpha))
}

fn residual_scales(t: &[f64; 5]) -> [f64; 5] {
    let mass = t[0].abs().max(f64::MIN_POSITIVE);
    let energy = t[4].abs().max(f64::MIN_POSITIVE);
    let mom = (mass * energy).sqrt();
    [mass, mom, mom, mom, energy]
}

struct EqState {
    // per-axis sums Σ_x x^k E(x), k = 0..=4, with E already shifted
    sums: [[f64; 5]; 3],
    factors: [Vec<f64>; 3],
    scale: f64,
    moments: [f64; 5],
}

impl EqState {
    fn evaluate(alpha: &[f64; 5], axis: &[f64], w: f64) -> Self {
        let mut sums = [[0.0; 5]; 3];
        let mut factors: [Vec<f64>; 3] = Default::default();
        let mut log_scale = alpha[0];
        for d in 0..3 {
            let expo: Vec<f64> = axis
                .iter()
                .map(|&x| alpha[1 + d] * x + alpha[4] * x * x)
                .collect();
            let shift = expo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            log_scale += shift;
            let e: Vec<f64> = expo.iter().map(|&s| (s - shift).exp()).collect();
            for (&x, &ex) in axis.iter().zip(&e) {
                let mut p = ex;
                for k in 0..5 {
                    sums[d][k] += p;
                    p *= x;
                }
            }
            factors[d] = e;
        }
        let scale = log_scale.exp();
        let mut st = EqState {
            sums,
            factors,
            scale,
            moments: [0.0; 5],
        };
        let ws = w * scale;
        let s = &st.sums;
        let p000 = s[0][0] * s[1][0] * s[2][0];
        st.moments = [
            ws * p000,
            ws * s[0][1] * s[1][0] * s[2][0],
            ws * s[0][0] * s[1][1] * s[2][0],
            ws * s[0][0] * s[1][0] * s[2][1],
            ws * (s[0][2] * s[1][0] * s[2][0] + s[0][0] * s[1][2] * s[2][0] + s[0][0] * s[1][0] * s[2][2]),
        ];
        st.scale = scale;
        // the weight is folded in when moments are formed; keep it for the Jacobian
        st.sums = sums_with_weight(st.sums, ws);
        st
    }

    fn mono(&self, k: [usize; 3]) -> f64 {
        // sums[0] carries the weight·scale factor
        self.sums[0][k[0]] * self.sums[1][k[1]] * self.sums[2][k[2]]
    }

    fn jacobian(&self) -> Matrix5<f64> {
        // invariants as monomial lists (exponent triples)
        let polys: [&[[usize; 3]]; 5] = [
            &[[0, 0, 0]],
            &[[1, 0, 0]],
            &[[0, 1, 0]],
            &[[0, 0, 1]],
            &[[2, 0, 0], [0, 2, 0], [0, 0, 2]],
        ];
        let mut j = Matrix5::zeros();
        for a in 0..5 {
            for b in a..5 {
                let mut acc = 0.0;
                for p in polys[a] {
                    for q in polys[b] {
                        acc += self.mono([p[0] + q[0], p[1] + q[1], p[2] + q[2]]);
                    }
                }
                j[(a, b)] = acc;
                j[(b, a)] = acc;
            }
        }
        j
    }

    fn residual(&self, target: &[f64; 5], scales: &[f64; 5]) -> f64 {
        (0..5)
            .map(|k| ((self.moments[k] - target[k]) / scales[k]).abs())
            .fold(0.0, f64::max)
    }

    fn into_equilibrium(self, coeffs: [f64; 5]) -> SeparableEquilibrium {
        SeparableEquilibrium {
            coeffs,
            scale: self.scale,
            factors: self.factors,
        }
    }
}

fn sums_with_weight(mut sums: [[f64; 5]; 3], ws: f64) -> [[f64; 5]; 3] {
    for k in 0..5 {
        sums[0][k] *= ws;
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normalization_and_symmetry() {
        let g = build_velocity_grid(4, 6.0).unwrap();
        assert_eq!(g.len(), 64);
        let ones = vec![1.0; g.len()];
        assert_abs_diff_eq!(g.bracket(&ones), 1.0, epsilon = 1e-15);

        let g = build_velocity_grid(8, 6.0).unwrap();
        for d in 0..3 {
            let vd: Vec<f64> = g.nodes().iter().map(|v| v[d]).collect();
            assert!(g.bracket(&vd).abs() < 1e-16);
        }
        for i in 0..g.len() {
            let j = g.negate(i);
            let (vi, vj) = (g.node(i), g.node(j));
            assert_eq!(vi.map(|x| -x), vj);
            assert_eq!(g.weights()[i], g.weights()[j]);
        }
    }

    #[test]
    fn second_moment_matches_gaussian() {
        let g = build_velocity_grid(16, 6.0).unwrap();
        let v2 = g.sample(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        assert!((g.bracket(&v2) - 3.0).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_lattices() {
        assert!(matches!(build_velocity_grid(7, 6.0), Err(Error::Config(_))));
        assert!(matches!(build_velocity_grid(2, 6.0), Err(Error::Config(_))));
        assert!(matches!(build_velocity_grid(8, 0.0), Err(Error::Config(_))));
        assert!(matches!(build_velocity_grid(8, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn equilibrium_moments() {
        let g = build_velocity_grid(12, 6.0).unwrap();
        let m = cell_moments(g.maxwellian(), &g, MomentMode::Raw).unwrap();
        assert_abs_diff_eq!(m.density, 1.0, epsilon = 1e-14);
        for d in 0..3 {
            assert!(m.velocity[d].abs() < 1e-15);
        }
        assert_abs_diff_eq!(m.temperature, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn fluctuation_moments_of_vy_and_energy_mode() {
        let g = build_velocity_grid(16, 6.0).unwrap();
        let vy = g.sample(|v| v[1]);
        let m = cell_moments(&vy, &g, MomentMode::Fluctuation).unwrap();
        assert!(m.density.abs() < 1e-14);
        assert_abs_diff_eq!(m.velocity[1], 1.0, epsilon = 1e-6);
        assert!(m.velocity[0].abs() < 1e-14 && m.velocity[2].abs() < 1e-14);
        assert!(m.temperature.abs() < 1e-14);

        let e = g.sample(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] - 3.0) / 2.0);
        let m = cell_moments(&e, &g, MomentMode::Fluctuation).unwrap();
        assert_abs_diff_eq!(m.temperature, 1.0, epsilon = 1e-5);
    }

    #[test]
    fn zero_density_is_degenerate() {
        let g = build_velocity_grid(4, 6.0).unwrap();
        let f = DistributionField::zeros(3, g.len());
        match moments(&f, &g, MomentMode::Raw) {
            Err(Error::DegenerateCell { cell, .. }) => assert_eq!(cell, 0),
            other => panic!("expected degenerate cell, got {other:?}"),
        }
    }

    #[test]
    fn local_maxwellian_cases() {
        let g = build_velocity_grid(8, 6.0).unwrap();
        let m1 = local_maxwellian(&MomentSet::EQUILIBRIUM, &g).unwrap();
        assert_eq!(m1, g.maxwellian());
        let m2 = local_maxwellian(
            &MomentSet {
                density: 2.0,
                ..MomentSet::EQUILIBRIUM
            },
            &g,
        )
        .unwrap();
        for (a, b) in m2.iter().zip(g.maxwellian()) {
            assert_eq!(*a, 2.0 * b);
        }
        assert!(matches!(
            local_maxwellian(
                &MomentSet {
                    temperature: 0.0,
                    ..MomentSet::EQUILIBRIUM
                },
                &g
            ),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn local_maxwellian_round_trip() {
        let g = build_velocity_grid(16, 6.0).unwrap();
        let m = MomentSet {
            density: 1.0,
            velocity: [0.1, 0.0, 0.0],
            temperature: 1.0,
        };
        let f = local_maxwellian(&m, &g).unwrap();
        let back = cell_moments(&f, &g, MomentMode::Raw).unwrap();
        let du: f64 = (0..3)
            .map(|d| (back.velocity[d] - m.velocity[d]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(du <= 1e-4, "|du| = {du}");
    }

    #[test]
    fn projection_properties() {
        let g = build_velocity_grid(8, 6.0).unwrap();
        let out = g.conservation_project(g.maxwellian());
        for m in g.conserved_moments(&out) {
            assert!(m.abs() < 1e-16, "{m:e}");
        }
        let q: Vec<f64> = (0..g.len()).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect();
        let once = g.conservation_project(&q);
        let twice = g.conservation_project(&once);
        for (a, b) in once.iter().zip(&twice) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let again = g.conservation_project(&once);
        assert_eq!(again, twice);
    }

    #[test]
    fn discrete_equilibrium_of_maxwellian_is_maxwellian() {
        let g = build_velocity_grid(8, 6.0).unwrap();
        let eq = discrete_equilibrium(g.conserved_moments(g.maxwellian()), &g).unwrap();
        for (a, b) in eq.profile().iter().zip(g.maxwellian()) {
            assert!((a - b).abs() <= 1e-12 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn discrete_equilibrium_matches_moments_exactly() {
        let g = build_velocity_grid(6, 4.5).unwrap();
        let m = MomentSet {
            density: 1.3,
            velocity: [0.4, -0.2, 0.1],
            temperature: 0.8,
        };
        let f = local_maxwellian(&m, &g).unwrap();
        let target = g.conserved_moments(&f);
        let eq = discrete_equilibrium(target, &g).unwrap();
        let got = g.conserved_moments(&eq.profile());
        for k in 0..5 {
            assert!((got[k] - target[k]).abs() <= 1e-14 * target[0].max(target[4]), "{k}");
        }
    }
}
