//! Shared fixtures for the benchmarks: instances and partitions built once
//! per benchmark group, outside the measured closures.

use eadyn_core::influence::WeightParams;
use eadyn_core::instance::{gen, Instance};
use eadyn_core::partition::BlockPartition;

/// Instance at the supercritical degree the samplers target, with beta at
/// half the uniqueness threshold.
pub fn dense_instance(n: usize, d: f64, seed: u64) -> Instance {
    let beta = 0.5 * eadyn_core::instance::beta_c(d);
    gen(n, d, beta, seed).expect("benchmark instance")
}

pub fn formula_params(epsilon: f64, d: f64, n: usize) -> WeightParams {
    WeightParams::from_formulas(epsilon, d, n).expect("benchmark params")
}

/// The always-available partition; block dynamics on it exercises the same
/// machinery as structured blocks without requiring a successful build.
pub fn singleton_partition(instance: &Instance, epsilon: f64, d: f64) -> BlockPartition {
    let params = formula_params(epsilon, d, instance.n());
    BlockPartition::all_singletons(instance, &params)
}
