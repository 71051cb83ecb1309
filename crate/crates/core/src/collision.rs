//! Truncated, density-damped collision operator and the BGK surrogate.
//!
//! The full kernel uses the `σ`-parameterization: for a pair `(v, v*)` with
//! centre `c = (v + v*)/2` and relative speed `r = |v − v*|`, the outgoing
//! velocities are `c ± (r/2)ω`. Post-collision values are read by trilinear
//! interpolation of `g = F/M` on the lattice, so that
//! `F(v')F(v*') = M(v)M(v*) g(v')g(v*')` holds with the Maxwellian factor
//! exact. Triples whose outgoing velocities leave the lattice hull are dropped
//! from both gain and loss.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{discrete_equilibrium, VelocityGrid};
use crate::par;

/// Default memory cap for precomputed tables (2 GiB).
pub const DEFAULT_MEMORY_CAP: u64 = 2 << 30;

/// Products at or below this value are treated as absent in `log` terms.
pub const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelFamily {
    /// `|v − v*|^γ b̂`, `−3 < γ ≤ 1`.
    VariableHardSphere { gamma: f64 },
    /// `γ = 0`.
    MaxwellPseudo,
    /// `γ = 1`.
    HardSphere,
    /// Relaxation toward the local equilibrium with time `τ`.
    Bgk { tau: f64 },
    /// No collisions.
    Free,
}

impl KernelFamily {
    /// Velocity exponent for the Boltzmann families.
    pub fn gamma(&self) -> Option<f64> {
        match *self {
            KernelFamily::VariableHardSphere { gamma } => Some(gamma),
            KernelFamily::MaxwellPseudo => Some(0.0),
            KernelFamily::HardSphere => Some(1.0),
            _ => None,
        }
    }

    pub fn tag(&self) -> String {
        match *self {
            KernelFamily::VariableHardSphere { gamma } => format!("vhs(gamma={gamma})"),
            KernelFamily::MaxwellPseudo => "maxwell".into(),
            KernelFamily::HardSphere => "hard_sphere".into(),
            KernelFamily::Bgk { tau } => format!("bgk(tau={tau})"),
            KernelFamily::Free => "free".into(),
        }
    }
}

/// Collision kernel description.
///
/// The angular part `b̂` is isotropic (`1/4π`), which is even in `ω`. The
/// loss-operator integrability exponent `s` of the theory has no finite-grid
/// counterpart and is not represented.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Gauss–Legendre points in the polar cosine; the azimuth uses twice as many.
    #[serde(default = "default_angular_order")]
    pub angular_order: usize,
    /// The `n` of the band `1/n ≤ |v − v*| ≤ n`.
    #[serde(default = "default_truncation")]
    pub truncation_n: u32,
    /// Multiply by `1/(1 + ρ/n)`.
    #[serde(default)]
    pub damping: bool,
    /// Overall kernel magnitude.
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_angular_order() -> usize {
    4
}

fn default_truncation() -> u32 {
    1000
}

fn default_scale() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn new(family: KernelFamily) -> Self {
        KernelSpec {
            family,
            angular_order: default_angular_order(),
            truncation_n: default_truncation(),
            damping: false,
            scale: default_scale(),
        }
    }

    pub fn bgk(tau: f64) -> Self {
        Self::new(KernelFamily::Bgk { tau })
    }

    pub fn hard_sphere() -> Self {
        Self::new(KernelFamily::HardSphere)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(gamma) = self.family.gamma() {
            if !(gamma > -3.0 && gamma <= 1.0) {
                return Err(Error::Config(format!(
                    "kernel exponent gamma = {gamma} violates -3 < gamma <= 1"
                )));
            }
            if self.angular_order == 0 {
                return Err(Error::Config("angular_order must be positive".into()));
            }
        }
        if let KernelFamily::Bgk { tau } = self.family {
            if !(tau > 0.0) || !tau.is_finite() {
                return Err(Error::Config(format!("BGK relaxation time must be positive (got {tau})")));
            }
        }
        if self.truncation_n < 1 {
            return Err(Error::Config("truncation_n must be at least 1".into()));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::Config(format!("kernel scale must be positive (got {})", self.scale)));
        }
        Ok(())
    }

    /// Whether `r` lies in the truncation band.
    pub fn admissible(&self, r: f64) -> bool {
        let n = self.truncation_n as f64;
        r >= 1.0 / n && r <= n
    }

    /// `B̄(r) = ∫ B dω`, including the truncation mask.
    pub fn angular_integrated(&self, r: f64) -> f64 {
        match self.family.gamma() {
            Some(gamma) if self.admissible(r) => self.scale * r.powf(gamma),
            _ => 0.0,
        }
    }

    /// `1/(1 + ρ/n)` when damping is on, else 1.
    pub fn damping_factor(&self, density: f64) -> f64 {
        if self.damping {
            1.0 / (1.0 + density / self.truncation_n as f64)
        } else {
            1.0
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for k in 0..n {
        let mut z = (PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, z);
        x[k] = -z;
        w[k] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, dp)
}

/// Product rule on S²; returns one representative of every `±ω` pair with
/// doubled weight. Total weight is `4π`.
pub fn half_sphere_rule(order: usize) -> Vec<([f64; 3], f64)> {
    let (mu, wmu) = gauss_legendre(order);
    let n_phi = 2 * order;
    let dphi = 2.0 * PI / n_phi as f64;
    let mut out = Vec::new();
    for (&c, &wc) in mu.iter().zip(&wmu) {
        // odd orders have a node at cos θ = 0 up to roundoff
        let c = if c.abs() < 1e-12 { 0.0 } else { c };
        let s = (1.0 - c * c).max(0.0).sqrt();
        for k in 0..n_phi {
            let keep = c > 0.0 || (c == 0.0 && k < order);
            if keep {
                let phi = (k as f64 + 0.5) * dphi;
                out.push(([s * phi.cos(), s * phi.sin(), c], 2.0 * wc * dphi));
            }
        }
    }
    out
}

/// Trilinear stencil at fractional index coordinates `t`, or `None` outside
/// the lattice hull.
#[inline]
fn stencil(t: [f64; 3], n: usize) -> Option<([usize; 3], [f64; 3])> {
    let top = (n - 1) as f64;
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for d in 0..3 {
        let x = t[d];
        if !(x >= -1e-12 && x <= top + 1e-12) {
            return None;
        }
        let x = x.clamp(0.0, top);
        let b = (x.floor() as usize).min(n - 2);
        base[d] = b;
        frac[d] = x - b as f64;
    }
    Some((base, frac))
}

#[inline]
fn interpolate(g: &[f64], n: usize, base: [usize; 3], frac: [f64; 3]) -> f64 {
    let idx = |a: usize, b: usize, c: usize| (a * n + b) * n + c;
    let [a, b, c] = base;
    let [fx, fy, fz] = frac;
    let c00 = g[idx(a, b, c)] * (1.0 - fx) + g[idx(a + 1, b, c)] * fx;
    let c01 = g[idx(a, b, c + 1)] * (1.0 - fx) + g[idx(a + 1, b, c + 1)] * fx;
    let c10 = g[idx(a, b + 1, c)] * (1.0 - fx) + g[idx(a + 1, b + 1, c)] * fx;
    let c11 = g[idx(a, b + 1, c + 1)] * (1.0 - fx) + g[idx(a + 1, b + 1, c + 1)] * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    c0 * (1.0 - fz) + c1 * fz
}

/// The eight lattice indices and weights of a trilinear stencil.
#[inline]
pub(crate) fn stencil_entries(n: usize, base: [usize; 3], frac: [f64; 3]) -> [(usize, f64); 8] {
    let mut out = [(0usize, 0.0); 8];
    let mut k = 0;
    for da in 0..2 {
        let wa = if da == 0 { 1.0 - frac[0] } else { frac[0] };
        for db in 0..2 {
            let wb = if db == 0 { 1.0 - frac[1] } else { frac[1] };
            for dc in 0..2 {
                let wc = if dc == 0 { 1.0 - frac[2] } else { frac[2] };
                out[k] = (((base[0] + da) * n + base[1] + db) * n + base[2] + dc, wa * wb * wc);
                k += 1;
            }
        }
    }
    out
}

/// Precomputed quadrature of one kernel on one lattice.
#[derive(Debug, Clone)]
pub struct CollisionEngine {
    spec: KernelSpec,
    grid: VelocityGrid,
    // (direction, weight) pairs, one per ±ω pair
    angles: Vec<([f64; 3], f64)>,
    // B̄ / 4π indexed by squared index distance
    bbar_by_d2: Vec<f64>,
    // K_ij = Σ_kept w_ω B_ij
    loss: Vec<f64>,
    collision_frequency: Vec<f64>,
    node_index: Vec<[f64; 3]>,
}

/// Builds the kernel with the default memory cap.
pub fn build_kernel(spec: &KernelSpec, grid: &VelocityGrid) -> Result<CollisionEngine> {
    build_kernel_with_cap(spec, grid, DEFAULT_MEMORY_CAP)
}

/// Bytes the engine tables need for this spec and lattice.
pub fn memory_estimate(spec: &KernelSpec, grid: &VelocityGrid) -> u64 {
    let nv = grid.len() as u64;
    match spec.family.gamma() {
        Some(_) => 8 * nv * nv + 64 * nv,
        None => 64 * nv,
    }
}

pub fn build_kernel_with_cap(spec: &KernelSpec, grid: &VelocityGrid, cap_bytes: u64) -> Result<CollisionEngine> {
    spec.validate()?;
    let estimate = memory_estimate(spec, grid);
    if estimate > cap_bytes {
        return Err(Error::Resource {
            what: format!("collision tables for {} on {} nodes", spec.family.tag(), grid.len()),
            estimate_bytes: estimate,
            cap_bytes,
        });
    }
    let n = grid.n_per_axis();
    let h = grid.spacing();
    let nv = grid.len();
    let node_index: Vec<[f64; 3]> = (0..nv)
        .map(|i| {
            let (a, b, c) = grid.axis_indices(i);
            [a as f64, b as f64, c as f64]
        })
        .collect();

    if spec.family.gamma().is_none() {
        return Ok(CollisionEngine {
            spec: spec.clone(),
            grid: grid.clone(),
            angles: Vec::new(),
            bbar_by_d2: Vec::new(),
            loss: Vec::new(),
            collision_frequency: bgk_frequency(spec, nv),
            node_index,
        });
    }

    let angles = half_sphere_rule(spec.angular_order);
    let max_d2 = 3 * (n - 1) * (n - 1);
    let bbar_by_d2: Vec<f64> = (0..=max_d2)
        .map(|d2| spec.angular_integrated(h * (d2 as f64).sqrt()) / (4.0 * PI))
        .collect();

    let w = grid.uniform_weight();
    let m = grid.maxwellian();
    let rows: Vec<(Vec<f64>, f64)> = par::map_indexed(nv, |i| {
        let ti = node_index[i];
        let mut row = vec![0.0; nv];
        let mut freq = 0.0;
        for j in 0..nv {
            let tj = node_index[j];
            let d = [ti[0] - tj[0], ti[1] - tj[1], ti[2] - tj[2]];
            let d2 = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).round() as usize;
            let b = bbar_by_d2[d2];
            if b == 0.0 {
                continue;
            }
            freq += w * 4.0 * PI * b * m[j];
            let mid = [0.5 * (ti[0] + tj[0]), 0.5 * (ti[1] + tj[1]), 0.5 * (ti[2] + tj[2])];
            let s = 0.5 * (d2 as f64).sqrt();
            let mut kept = 0.0;
            for (om, wo) in &angles {
                let p = [mid[0] + s * om[0], mid[1] + s * om[1], mid[2] + s * om[2]];
                let q = [mid[0] - s * om[0], mid[1] - s * om[1], mid[2] - s * om[2]];
                if stencil(p, n).is_some() && stencil(q, n).is_some() {
                    kept += wo;
                }
            }
            row[j] = b * kept;
        }
        (row, freq)
    });
    let mut loss = Vec::with_capacity(nv * nv);
    let mut collision_frequency = Vec::with_capacity(nv);
    for (row, f) in rows {
        loss.extend_from_slice(&row);
        collision_frequency.push(f);
    }
    Ok(CollisionEngine {
        spec: spec.clone(),
        grid: grid.clone(),
        angles,
        bbar_by_d2,
        loss,
        collision_frequency,
        node_index,
    })
}

fn bgk_frequency(spec: &KernelSpec, nv: usize) -> Vec<f64> {
    match spec.family {
        KernelFamily::Bgk { tau } => vec![spec.scale / tau; nv],
        _ => vec![0.0; nv],
    }
}

impl CollisionEngine {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn is_bgk(&self) -> bool {
        matches!(self.spec.family, KernelFamily::Bgk { .. })
    }

    pub fn is_free(&self) -> bool {
        matches!(self.spec.family, KernelFamily::Free)
    }

    /// `a(v_i) = Σ_j w_j B̄(v_i − v_j) M_j`.
    pub fn collision_frequency(&self) -> &[f64] {
        &self.collision_frequency
    }

    /// Loss matrix entry `K_ij = Σ_ω w_ω B(v_i − v_j, ω)` over kept angles.
    pub fn kernel_entry(&self, i: usize, j: usize) -> f64 {
        if self.loss.is_empty() {
            0.0
        } else {
            self.loss[i * self.grid.len() + j]
        }
    }

    /// Angular weights, one per `±ω` pair.
    pub fn angles(&self) -> &[([f64; 3], f64)] {
        &self.angles
    }

    /// Largest per-unit-density loss rate `damp · Σ_j w_j K_ij F_j`, the
    /// quantity bounded by the explicit positivity guard.
    pub fn max_loss_rate(&self, f: &[f64]) -> f64 {
        let w = self.grid.uniform_weight();
        let damp = self.spec.damping_factor(density(&self.grid, f));
        match self.spec.family {
            KernelFamily::Bgk { tau } => damp * self.spec.scale / tau,
            KernelFamily::Free => 0.0,
            _ => {
                let nv = self.grid.len();
                let rates = par::map_indexed(nv, |i| {
                    let row = &self.loss[i * nv..(i + 1) * nv];
                    row.iter().zip(f).map(|(k, fj)| k * fj).sum::<f64>()
                });
                damp * w * rates.into_iter().fold(0.0, f64::max)
            }
        }
    }

    /// Calls `visit(p, q, B w_ω)` for every kept angle of the pair `(i, j)`,
    /// where `p`, `q` are the stencils of `v'` and `v*'`.
    #[inline]
    pub(crate) fn visit_pair<V>(&self, i: usize, j: usize, mut visit: V)
    where
        V: FnMut(([usize; 3], [f64; 3]), ([usize; 3], [f64; 3]), f64),
    {
        let n = self.grid.n_per_axis();
        let ti = self.node_index[i];
        let tj = self.node_index[j];
        let d = [ti[0] - tj[0], ti[1] - tj[1], ti[2] - tj[2]];
        let d2 = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).round() as usize;
        let b = self.bbar_by_d2[d2];
        if b == 0.0 {
            return;
        }
        let mid = [0.5 * (ti[0] + tj[0]), 0.5 * (ti[1] + tj[1]), 0.5 * (ti[2] + tj[2])];
        let s = 0.5 * (d2 as f64).sqrt();
        for (om, wo) in &self.angles {
            let p = [mid[0] + s * om[0], mid[1] + s * om[1], mid[2] + s * om[2]];
            let q = [mid[0] - s * om[0], mid[1] - s * om[1], mid[2] - s * om[2]];
            if let (Some(sp), Some(sq)) = (stencil(p, n), stencil(q, n)) {
                visit(sp, sq, b * wo);
            }
        }
    }

    /// `Σ_ω w_ω B g(v')g(v*')` for one pair; symmetric in `(i, j)`.
    fn pair_gain(&self, i: usize, j: usize, g: &[f64]) -> f64 {
        let n = self.grid.n_per_axis();
        let mut acc = 0.0;
        self.visit_pair(i, j, |(bp, fp), (bq, fq), wb| {
            acc += wb * interpolate(g, n, bp, fp) * interpolate(g, n, bq, fq);
        });
        acc
    }

    /// Upper-triangular table of [`Self::pair_gain`], row `i` holding `j ≥ i`.
    fn pair_table(&self, g: &[f64]) -> Vec<Vec<f64>> {
        let nv = self.grid.len();
        par::map_indexed(nv, |i| (i..nv).map(|j| self.pair_gain(i, j, g)).collect())
    }

    /// Unprojected gain and loss parts of `Q^n(F, F)` (before damping).
    pub fn gain_loss(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.grid.maxwellian();
        let g: Vec<f64> = f.iter().zip(m).map(|(a, m)| a / m).collect();
        let table = self.pair_table(&g);
        let nv = self.grid.len();
        let w = self.grid.uniform_weight();
        let parts = par::map_indexed(nv, |i| {
            let mut gain = 0.0;
            for j in 0..i {
                gain += m[j] * table[j][i - j];
            }
            for (k, p) in table[i].iter().enumerate() {
                gain += m[i + k] * p;
            }
            let row = &self.loss[i * nv..(i + 1) * nv];
            let loss = f[i] * w * row.iter().zip(f).map(|(k, fj)| k * fj).sum::<f64>();
            (w * m[i] * gain, loss)
        });
        parts.into_iter().unzip()
    }

    /// `(1/4) Σ_ij w_i w_j Σ_ω w_ω B (P' − P) log(P'/P)`, using the pair symmetry.
    fn full_dissipation(&self, f: &[f64]) -> f64 {
        let n = self.grid.n_per_axis();
        let nv = self.grid.len();
        let m = self.grid.maxwellian();
        let w = self.grid.uniform_weight();
        let g: Vec<f64> = f.iter().zip(m).map(|(a, m)| a / m).collect();
        let rows = par::map_indexed(nv, |i| {
            let mut row = 0.0;
            for j in i..nv {
                let pre = f[i] * f[j];
                let mm = m[i] * m[j];
                let mut acc = 0.0;
                self.visit_pair(i, j, |(bp, fp), (bq, fq), wb| {
                    let post = mm * interpolate(&g, n, bp, fp) * interpolate(&g, n, bq, fq);
                    acc += wb * log_term(post, pre);
                });
                row += if j == i { acc } else { 2.0 * acc };
            }
            row
        });
        0.25 * w * w * rows.into_iter().sum::<f64>()
    }
}

/// `(a − b) log(a/b)` with both arguments floored; zero when both are absent.
#[inline]
pub fn log_term(a: f64, b: f64) -> f64 {
    if a <= LOG_FLOOR && b <= LOG_FLOOR {
        return 0.0;
    }
    let a = a.max(LOG_FLOOR);
    let b = b.max(LOG_FLOOR);
    if a == b {
        0.0
    } else {
        (a - b) * (a / b).ln()
    }
}

/// `Σ w F`.
pub fn density(grid: &VelocityGrid, f: &[f64]) -> f64 {
    grid.weights().iter().zip(f).map(|(w, x)| w * x).sum()
}

fn check_nonnegative(f: &[f64]) -> Result<()> {
    if let Some((i, v)) = f.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Contract(format!(
            "collision input must be finite and nonnegative (node {i} holds {v})"
        )));
    }
    Ok(())
}

/// `Q^n(F, F)` at one cell, damped when enabled and conservation-projected
/// with an `F`-weighted correction.
/// The BGK branch returns `(M_eq − F)/τ` with `M_eq` the discrete equilibrium
/// carrying the exact moments of `F`.
pub fn apply_collision(engine: &CollisionEngine, f: &[f64]) -> Result<Vec<f64>> {
    check_nonnegative(f)?;
    let grid = &engine.grid;
    let damp = engine.spec.damping_factor(density(grid, f));
    match engine.spec.family {
        KernelFamily::Free => Ok(vec![0.0; f.len()]),
        KernelFamily::Bgk { tau } => {
            if f.iter().all(|&x| x == 0.0) {
                return Ok(vec![0.0; f.len()]);
            }
            let eq = discrete_equilibrium(grid.conserved_moments(f), grid)?;
            let rate = damp * engine.spec.scale / tau;
            let mut out = eq.profile();
            for (o, x) in out.iter_mut().zip(f) {
                *o = rate * (*o - x);
            }
            Ok(out)
        }
        _ => {
            let (gain, loss) = engine.gain_loss(f);
            let mut q: Vec<f64> = gain.iter().zip(&loss).map(|(g, l)| damp * (g - l)).collect();
            grid.conservation_project_weighted(&mut q, f);
            Ok(q)
        }
    }
}

/// The H-dissipation `D(F)` at one cell (undamped). For BGK this is
/// `(1/τ) Σ w (F − M_eq) log(F/M_eq)`, the entropy production of the
/// relaxation term.
pub fn dissipation(engine: &CollisionEngine, f: &[f64]) -> Result<f64> {
    check_nonnegative(f)?;
    let grid = &engine.grid;
    match engine.spec.family {
        KernelFamily::Free => Ok(0.0),
        KernelFamily::Bgk { tau } => {
            if f.iter().all(|&x| x == 0.0) {
                return Ok(0.0);
            }
            let eq = discrete_equilibrium(grid.conserved_moments(f), grid)?.profile();
            let s: f64 = f
                .iter()
                .zip(&eq)
                .zip(grid.weights())
                .map(|((a, b), w)| w * log_term(*a, *b))
                .sum();
            Ok((engine.spec.scale / tau * s).max(0.0))
        }
        _ => {
            Ok(engine.full_dissipation(f))
        }
    }
}

/// Global-Maxwellian variant of the projection, re-exported for callers that
/// only hold the engine.
pub fn conservation_project(grid: &VelocityGrid, q: &[f64]) -> Vec<f64> {
    grid.conservation_project(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_velocity_grid, local_maxwellian, MomentSet};
    use approx::assert_abs_diff_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        let i8: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert_abs_diff_eq!(i8, 2.0 / 9.0, epsilon = 1e-14);
    }

    #[test]
    fn half_sphere_weights_sum_to_four_pi() {
        for order in 1..7 {
            let rule = half_sphere_rule(order);
            let total: f64 = rule.iter().map(|(_, w)| w).sum();
            assert_abs_diff_eq!(total, 4.0 * PI, epsilon = 1e-12);
            for (om, _) in &rule {
                let r2 = om[0] * om[0] + om[1] * om[1] + om[2] * om[2];
                assert_abs_diff_eq!(r2, 1.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn rejects_gamma_out_of_range() {
        let g = build_velocity_grid(4, 6.0).unwrap();
        for gamma in [2.0, -3.0, 1.5] {
            let spec = KernelSpec::new(KernelFamily::VariableHardSphere { gamma });
            assert!(matches!(build_kernel(&spec, &g), Err(Error::Config(_))));
        }
        let spec = KernelSpec::bgk(0.0);
        assert!(matches!(build_kernel(&spec, &g), Err(Error::Config(_))));
    }

    #[test]
    fn memory_cap_reports_estimate() {
        let g = build_velocity_grid(8, 6.0).unwrap();
        match build_kernel_with_cap(&KernelSpec::hard_sphere(), &g, 1000) {
            Err(Error::Resource { estimate_bytes, cap_bytes, .. }) => {
                assert_eq!(cap_bytes, 1000);
                assert!(estimate_bytes >= 8 * 512 * 512);
            }
            other => panic!("expected resource error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_mask_zeroes_far_pairs() {
        let g = build_velocity_grid(8, 6.0).unwrap();
        let spec = KernelSpec {
            truncation_n: 4,
            ..KernelSpec::hard_sphere()
        };
        let e = build_kernel(&spec, &g).unwrap();
        let mut far = 0;
        for i in 0..g.len() {
            for j in 0..g.len() {
                let (a, b) = (g.node(i), g.node(j));
                let r = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                let k = e.kernel_entry(i, j);
                assert!(k >= 0.0);
                if r > 4.0 {
                    far += 1;
                    assert_eq!(k, 0.0);
                }
            }
        }
        assert!(far > 0);
    }

    #[test]
    fn maxwell_kernel_is_speed_independent() {
        let spec = KernelSpec::new(KernelFamily::MaxwellPseudo);
        let vals: Vec<f64> = [0.3, 1.0, 2.5, 7.0].iter().map(|&r| spec.angular_integrated(r)).collect();
        assert!(vals.iter().all(|&v| v == vals[0]));
    }

    #[test]
    fn hard_sphere_frequency_positive_and_growing() {
        let g = build_velocity_grid(12, 6.0).unwrap();
        let e = build_kernel(&KernelSpec::hard_sphere(), &g).unwrap();
        let a = e.collision_frequency();
        assert!(a.iter().all(|&x| x > 0.0));
        // along +v_x with v_y, v_z at the innermost nodes
        let n = g.n_per_axis();
        let mid = n / 2;
        let line: Vec<f64> = (mid..n).map(|k| a[g.index(k, mid, mid)]).collect();
        assert!(line.windows(2).all(|p| p[1] > p[0]), "{line:?}");
        // direct summation oracle for one node
        let i = g.index(n - 1, mid, mid);
        let vi = g.node(i);
        let direct: f64 = (0..g.len())
            .map(|j| {
                let vj = g.node(j);
                let r = ((vi[0] - vj[0]).powi(2) + (vi[1] - vj[1]).powi(2) + (vi[2] - vj[2]).powi(2)).sqrt();
                g.weights()[j] * r * g.maxwellian()[j]
            })
            .sum();
        assert!((a[i] - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn bgk_fixes_local_maxwellians() {
        let g = build_velocity_grid(8, 6.0).unwrap();
        let e = build_kernel(&KernelSpec::bgk(0.5), &g).unwrap();
        let m = MomentSet {
            density: 1.4,
            velocity: [0.3, -0.1, 0.2],
            temperature: 1.2,
        };
        let f = local_maxwellian(&m, &g).unwrap();
        let q = apply_collision(&e, &f).unwrap();
        let scale = f.iter().cloned().fold(0.0, f64::max);
        for x in q {
            assert!(x.abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn negative_input_is_rejected() {
        let g = build_velocity_grid(4, 6.0).unwrap();
        let e = build_kernel(&KernelSpec::bgk(1.0), &g).unwrap();
        let mut f = g.maxwellian().to_vec();
        f[3] = -1e-3;
        assert!(matches!(apply_collision(&e, &f), Err(Error::Contract(_))));
    }

    #[test]
    fn log_term_conventions() {
        assert_eq!(log_term(0.0, 0.0), 0.0);
        assert_eq!(log_term(2.0, 2.0), 0.0);
        assert!(log_term(0.0, 1.0) > 0.0);
        assert!(log_term(1.0, 3.0) > 0.0);
    }
}
