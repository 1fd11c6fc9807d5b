//! Hot-path benchmarks: instance generation, the influence table, both
//! dynamics kernels, exact tree-block sampling, and a partition-build
//! attempt at working scale.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use eadyn_bench::{dense_instance, formula_params, singleton_partition};
use eadyn_core::dynamics::{block_step, glauber_step, path_coupling_trial, ChainState};
use eadyn_core::gibbs::{sample_block, BoundaryCondition, SpinConfig};
use eadyn_core::influence::{aggregate_influence, WeightParams};
use eadyn_core::instance::{gen, Instance};
use eadyn_core::partition::build_partition;
use eadyn_core::rng::{stream, PURPOSE_TEST};
use rand::Rng;

fn bench_gen(c: &mut Criterion) {
    c.bench_function("gen n=10000 d=16", |b| {
        b.iter(|| dense_instance(10_000, 16.0, 1))
    });
}

fn bench_influence_table(c: &mut Criterion) {
    let instance = dense_instance(10_000, 16.0, 1);
    let partition = singleton_partition(&instance, 0.4, 16.0);
    c.bench_function("influence table n=10000 d=16", |b| {
        b.iter(|| aggregate_influence(&instance, None).expect("table"))
    });
    c.bench_function("influence table with block aggregates", |b| {
        b.iter(|| aggregate_influence(&instance, Some(&partition)).expect("table"))
    });
}

fn bench_dynamics_steps(c: &mut Criterion) {
    let instance = dense_instance(2_000, 16.0, 2);
    let n = instance.n() as u64;
    let partition = singleton_partition(&instance, 0.4, 16.0);

    c.bench_function("glauber sweep n=2000 d=16", |b| {
        b.iter_batched(
            || {
                (
                    ChainState::new(SpinConfig::all_plus(instance.n())),
                    stream(3, PURPOSE_TEST, 0),
                )
            },
            |(mut state, mut rng)| {
                for _ in 0..n {
                    glauber_step(&instance, &mut state, &mut rng);
                }
                state
            },
            BatchSize::SmallInput,
        )
    });

    c.bench_function("singleton block sweep n=2000 d=16", |b| {
        b.iter_batched(
            || {
                (
                    ChainState::new(SpinConfig::all_plus(instance.n())),
                    stream(4, PURPOSE_TEST, 0),
                )
            },
            |(mut state, mut rng)| {
                for _ in 0..n {
                    block_step(&instance, &partition, &mut state, &mut rng).expect("step");
                }
                state
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_coupled_trial(c: &mut Criterion) {
    let instance = dense_instance(2_000, 16.0, 2);
    let partition = singleton_partition(&instance, 0.4, 16.0);
    let table = aggregate_influence(&instance, Some(&partition)).expect("table");
    c.bench_function("path coupling trial n=2000 d=16", |b| {
        b.iter_batched(
            || {
                let mut rng = stream(5, PURPOSE_TEST, 0);
                let u_star = rng.gen_range(0..instance.n() as u32);
                let x = SpinConfig::random(instance.n(), &mut rng);
                let mut y = x.clone();
                y.flip(u_star);
                (x, y, u_star, rng)
            },
            |(mut x, mut y, u_star, mut rng)| {
                path_coupling_trial(&instance, &partition, &table, &mut x, &mut y, u_star, &mut rng)
                    .expect("trial")
            },
            BatchSize::SmallInput,
        )
    });
}

/// Path of `k` vertices with one extra pendant on each endpoint held fixed
/// by the boundary: the exact conditional sampler's typical block shape.
fn tree_block_fixture(k: usize) -> (Instance, Vec<u32>, BoundaryCondition) {
    let n = k + 2;
    let mut edges: Vec<(u32, u32)> = (0..k as u32 - 1).map(|v| (v, v + 1)).collect();
    edges.push((0, k as u32));
    edges.push((k as u32 - 1, k as u32 + 1));
    let graph = eadyn_core::instance::Graph::from_edges(n, edges).expect("path graph");
    let mut rng = stream(6, PURPOSE_TEST, 0);
    let couplings = (0..graph.m()).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let instance = Instance::new(graph, couplings, 0.8).expect("path instance");
    let members: Vec<u32> = (0..k as u32).collect();
    let boundary =
        BoundaryCondition::new([(k as u32, 1), (k as u32 + 1, -1)]).expect("boundary");
    (instance, members, boundary)
}

fn bench_tree_block_sample(c: &mut Criterion) {
    let (instance, members, boundary) = tree_block_fixture(12);
    c.bench_function("exact tree block sample k=12", |b| {
        b.iter_batched(
            || stream(7, PURPOSE_TEST, 0),
            |mut rng| sample_block(&instance, &members, &boundary, &mut rng).expect("sample"),
            BatchSize::SmallInput,
        )
    });
}

fn bench_partition_build(c: &mut Criterion) {
    // Sparse instance with explicit small radii: the formula radii saturate
    // near n at this density, which makes cycle enumeration intractable.
    let sparse = gen(2_000, 1.5, 0.3, 7).expect("sparse instance");
    let sparse_params = WeightParams {
        epsilon: 0.5,
        d: 2.5,
        block_range: 3,
        short_cycle_max_len: 4,
        cycle_buffer_radius: 1,
        cycle_separation: 2,
        tree_reach: 4,
        cycle_reach: 4,
    };
    c.bench_function("partition build n=2000 d=1.5", |b| {
        b.iter(|| build_partition(&sparse, &sparse_params).expect("build runs"))
    });

    // At working density the attempt typically ends in a witness; the cost
    // of discovering it is the quantity of interest.
    let dense = dense_instance(20_000, 16.0, 8);
    let dense_params = formula_params(0.4, 16.0, dense.n());
    let mut group = c.benchmark_group("partition attempt");
    group.sample_size(10);
    group.bench_function("n=20000 d=16", |b| {
        b.iter(|| build_partition(&dense, &dense_params).expect("build runs"))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_gen,
    bench_influence_table,
    bench_dynamics_steps,
    bench_coupled_trial,
    bench_tree_block_sample,
    bench_partition_build,
);
criterion_main!(benches);
