//! Collision and transport kernels on a single-thread pool and on the default
//! pool. Build with `--no-default-features` to time the sequential fallback.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use kinslab::collision::{apply_collision, build_kernel, KernelSpec};
use kinslab::grid::{build_velocity_grid, DistributionField, SpatialMesh};
use kinslab::solver::collision_step;
use kinslab::transport::{cfl_limit, scaled_transport_step, BoundaryData, TransportScheme};

/// Runs closures either inside a dedicated rayon pool or inline.
struct Variant {
    label: String,
    #[cfg(feature = "parallel")]
    pool: rayon::ThreadPool,
}

impl Variant {
    fn run<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        {
            self.pool.install(f)
        }
        #[cfg(not(feature = "parallel"))]
        {
            f()
        }
    }
}

#[cfg(feature = "parallel")]
fn variants() -> Vec<Variant> {
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![
        Variant { label: "1 thread".into(), pool: single },
        Variant { label: format!("{} threads", default.current_num_threads()), pool: default },
    ]
}

#[cfg(not(feature = "parallel"))]
fn variants() -> Vec<Variant> {
    vec![Variant { label: "sequential".into() }]
}

fn kernels(c: &mut Criterion) {
    let grid = build_velocity_grid(8, 5.0).unwrap();
    let hs = build_kernel(&KernelSpec::hard_sphere(), &grid).unwrap();
    let bgk = build_kernel(&KernelSpec::bgk(0.5), &grid).unwrap();
    let m = grid.maxwellian();
    let profile: Vec<f64> = grid
        .nodes()
        .iter()
        .zip(m)
        .map(|(v, m)| m * (1.0 + 0.3 * v[0] / (1.0 + v[0].abs())))
        .collect();
    let mesh = SpatialMesh::new(1.0, 128).unwrap();
    let field = DistributionField::from_fn(mesh.n_cells(), grid.len(), |k, i| {
        m[i] * (1.0 + 0.2 * (6.0 * mesh.center(k)).sin())
    });
    let bc = BoundaryData::equilibrium(&grid);
    let dt = cfl_limit(&grid, &mesh, 1.0);

    let mut group = c.benchmark_group("kernels");
    group.sample_size(10);
    for v in variants() {
        group.bench_function(BenchmarkId::new("hard_sphere_q_n8", &v.label), |b| {
            b.iter(|| v.run(|| apply_collision(&hs, black_box(&profile)).unwrap()))
        });
        group.bench_function(BenchmarkId::new("bgk_step_128_cells", &v.label), |b| {
            b.iter(|| v.run(|| collision_step(black_box(&field), 0.01, &bgk, 1.0, &mesh).unwrap()))
        });
        group.bench_function(BenchmarkId::new("upwind_128_cells", &v.label), |b| {
            b.iter(|| {
                v.run(|| {
                    scaled_transport_step(TransportScheme::Upwind, black_box(&field), dt, 0.0, 1.0, &bc, &mesh, &grid)
                        .unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
