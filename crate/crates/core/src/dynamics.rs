//! Single-site and block heat-bath dynamics, coupled updates, and the
//! experiments built on them: path-coupling contraction trials, coalescence
//! runs, and empirical distance-to-stationarity estimates.
//!
//! Conventions shared by every sampler here: random indices are drawn as
//! `floor(u * count)` from a single uniform, a spin is set to `+1` exactly
//! when its uniform falls below the conditional plus-probability, and coupled
//! chains share uniforms. Sharing the uniform realizes the monotone maximal
//! coupling of two per-vertex conditionals: the chains disagree at a vertex
//! with probability exactly `|p - q|` given their prefixes.

use std::collections::BTreeSet;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gibbs::{
    brute_force, log_weight, site_conditional, BlockSystem, BoundaryCondition, SpinConfig,
    BRUTE_FORCE_MAX_N,
};
use crate::influence::InfluenceTable;
use crate::instance::{Graph, Instance};
use crate::partition::{Block, BlockKind, BlockPartition};
use crate::rng::{stream, PURPOSE_CHAIN, PURPOSE_COUPLING};

/// A configuration together with the number of updates applied to it.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub config: SpinConfig,
    pub step: u64,
}

impl ChainState {
    pub fn new(config: SpinConfig) -> Self {
        ChainState { config, step: 0 }
    }
}

/// Uniform index in `0..count` from exactly one uniform draw. The floor map
/// keeps the per-update draw count deterministic (rejection sampling does
/// not); the bias is O(count / 2^53), far below experimental resolution.
fn uniform_index(rng: &mut impl Rng, count: usize) -> usize {
    debug_assert!(count > 0);
    let u: f64 = rng.gen();
    ((u * count as f64) as usize).min(count - 1)
}

fn spin_from(u: f64, p_plus: f64) -> i8 {
    if u < p_plus {
        1
    } else {
        -1
    }
}

/// One heat-bath update at a uniformly random vertex; returns the vertex.
/// Consumes exactly two uniforms: one for the vertex, one for the spin.
pub fn glauber_step(instance: &Instance, state: &mut ChainState, rng: &mut impl Rng) -> u32 {
    debug_assert_eq!(state.config.len(), instance.n());
    let v = uniform_index(rng, instance.n()) as u32;
    let p = site_conditional(instance, &state.config, v);
    let u: f64 = rng.gen();
    state.config.set(v, spin_from(u, p));
    state.step += 1;
    v
}

/// One exact resample of a uniformly random block given the current spins on
/// its outer boundary; returns the block index. Consumes one uniform for the
/// block choice plus one per member.
pub fn block_step(
    instance: &Instance,
    partition: &BlockPartition,
    state: &mut ChainState,
    rng: &mut impl Rng,
) -> Result<usize> {
    if partition.n() != instance.n() || state.config.len() != instance.n() {
        return Err(Error::structure(
            "partition, configuration, and instance sizes disagree",
        ));
    }
    let b = uniform_index(rng, partition.num_blocks());
    let block = partition.block(b);
    if block.len() == 1 {
        // Singleton resampling is exactly the single-site heat-bath move.
        let v = block.vertices[0];
        let p = site_conditional(instance, &state.config, v);
        let u: f64 = rng.gen();
        state.config.set(v, spin_from(u, p));
    } else {
        let bc = BoundaryCondition::from_config(instance, &block.vertices, &state.config);
        let sys = BlockSystem::new(instance, &block.vertices, &bc)?;
        for (v, s) in sys.sample(rng) {
            state.config.set(v, s);
        }
    }
    state.step += 1;
    Ok(b)
}

/// Which chain to run.
#[derive(Clone, Copy, Debug)]
pub enum DynamicsKind<'a> {
    /// Heat-bath updates at uniformly random vertices.
    Glauber,
    /// Exact resampling of uniformly random blocks.
    Block(&'a BlockPartition),
}

impl DynamicsKind<'_> {
    /// One update; returns the updated unit (vertex id or block index).
    pub fn step(&self, instance: &Instance, state: &mut ChainState, rng: &mut impl Rng) -> Result<u32> {
        match self {
            DynamicsKind::Glauber => Ok(glauber_step(instance, state, rng)),
            DynamicsKind::Block(p) => block_step(instance, p, state, rng).map(|b| b as u32),
        }
    }
}

/// One recorded observation of a chain (or of a coupled pair, which also
/// fills the distance columns).
#[derive(Clone, Debug, Serialize)]
pub struct TraceRow {
    pub step: u64,
    /// Vertex or block updated by the step that produced this row; absent on
    /// the initial row.
    pub updated_unit: Option<u32>,
    /// Log weight of the (first) chain's configuration.
    pub energy: f64,
    pub magnetization: f64,
    /// Block-weighted disagreement distance; coupled runs only.
    pub distance: Option<f64>,
    /// Number of disagreeing vertices; coupled runs only.
    pub disagreements: Option<usize>,
}

fn single_row(instance: &Instance, state: &ChainState, unit: Option<u32>) -> TraceRow {
    TraceRow {
        step: state.step,
        updated_unit: unit,
        energy: log_weight(instance, &state.config),
        magnetization: state.config.magnetization(),
        distance: None,
        disagreements: None,
    }
}

/// Run `steps` updates, recording the initial state, every state whose step
/// count is a multiple of `stride`, and the final state.
pub fn run_chain(
    instance: &Instance,
    dynamics: DynamicsKind,
    state: &mut ChainState,
    steps: u64,
    stride: u64,
    rng: &mut impl Rng,
) -> Result<Vec<TraceRow>> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    let mut rows = vec![single_row(instance, state, None)];
    for i in 1..=steps {
        let unit = dynamics.step(instance, state, rng)?;
        if state.step % stride == 0 || i == steps {
            rows.push(single_row(instance, state, Some(unit)));
        }
    }
    Ok(rows)
}

fn metric_slice<'t>(instance: &Instance, table: &'t InfluenceTable) -> Result<&'t [f64]> {
    let agg_out = table.agg_out.as_deref().ok_or_else(|| {
        Error::invalid("influence table has no out-of-block aggregates; compute it against the partition")
    })?;
    if agg_out.len() != instance.n() {
        return Err(Error::structure(format!(
            "influence table covers {} vertices but instance has {}",
            agg_out.len(),
            instance.n()
        )));
    }
    Ok(agg_out)
}

/// Weight of a disagreement at `v`: vertices inside multi-vertex blocks count
/// 1, singletons count n^4 times their out-of-block aggregate influence.
fn metric_weight(partition: &BlockPartition, agg_out: &[f64], v: u32) -> f64 {
    if partition.block(partition.block_of(v)).len() > 1 {
        1.0
    } else {
        let n = partition.n() as f64;
        n * n * n * n * agg_out[v as usize]
    }
}

/// Weighted disagreement distance between two configurations. The weights
/// make one singleton disagreement outweigh every in-block disagreement the
/// blocks can hold, which is what the contraction argument needs. A singleton
/// whose every influence is zero (isolated vertex, or zero couplings) gets
/// weight zero, so this is a pseudometric on configurations in general.
pub fn block_distance(
    instance: &Instance,
    partition: &BlockPartition,
    table: &InfluenceTable,
    x: &SpinConfig,
    y: &SpinConfig,
) -> Result<f64> {
    if partition.n() != instance.n() || x.len() != instance.n() || y.len() != instance.n() {
        return Err(Error::structure(
            "partition, configurations, and instance sizes disagree",
        ));
    }
    let agg_out = metric_slice(instance, table)?;
    let mut dist = 0.0;
    for v in 0..instance.n() as u32 {
        if x.get(v) != y.get(v) {
            dist += metric_weight(partition, agg_out, v);
        }
    }
    Ok(dist)
}

/// DFS preorder over the vertices satisfying `allowed`, starting each seed in
/// turn, visiting children in ascending vertex order. Vertices already in
/// `visited` are skipped; visited vertices are added to it.
fn preorder(
    graph: &Graph,
    seeds: &[u32],
    allowed: impl Fn(u32) -> bool,
    visited: &mut BTreeSet<u32>,
) -> Vec<u32> {
    let mut order = Vec::new();
    let mut stack = Vec::new();
    for &s in seeds {
        if !allowed(s) || !visited.insert(s) {
            continue;
        }
        stack.push(s);
        while let Some(v) = stack.pop() {
            order.push(v);
            for &(w, _) in graph.neighbors(v).iter().rev() {
                if allowed(w) && visited.insert(w) {
                    stack.push(w);
                }
            }
        }
    }
    order
}

/// Resample the vertices of `order` in both chains by the chain rule, one
/// shared uniform per vertex. Each chain draws from its own exact conditional
/// given its own boundary system and its own already-resampled prefix, so
/// each chain's marginal law is the exact block conditional; identical
/// systems yield identical spins.
fn couple_chain_rule(
    sys_x: &BlockSystem,
    sys_y: &BlockSystem,
    order: &[u32],
    x: &mut SpinConfig,
    y: &mut SpinConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    let mut pins_x: Vec<(u32, i8)> = Vec::with_capacity(order.len());
    let mut pins_y: Vec<(u32, i8)> = Vec::with_capacity(order.len());
    for &v in order {
        let px = sys_x.conditional_spin(&pins_x, v)?;
        let py = sys_y.conditional_spin(&pins_y, v)?;
        let u: f64 = rng.gen();
        let sx = spin_from(u, px);
        let sy = spin_from(u, py);
        x.set(v, sx);
        y.set(v, sy);
        pins_x.push((v, sx));
        pins_y.push((v, sy));
    }
    Ok(())
}

/// Coupled resample of a unicyclic block whose boundary disagreement sits
/// behind the single entry member `z`.
///
/// Phase 1 resamples the entry subtree (the part of the block reachable from
/// `z` without touching the cycle) together with its unique cycle attachment
/// `w`, by the shared-uniform chain rule under each chain's full-block
/// conditionals. Phase 2 resamples the rest: deleting `w` leaves a forest
/// whose components all hang off `w` and, given `w` and the outside boundary,
/// are mutually independent trees, so each component is coupled by the chain
/// rule under its two tree systems. When phase 1 leaves the chains agreeing
/// at `w` the two systems coincide and phase 2 is the identity coupling.
///
/// When they disagree, this realizes the composition through the family of
/// forest chains that reroute the lower cycle edge at `w` through a phantom
/// copy of `w`: all chains share the same uniforms, so the middle chain of
/// that family never alters the two real ones and is not materialized, while
/// per vertex the event "the real chains split" is still covered by the two
/// phantom-adjacent splits.
fn couple_unicyclic(
    instance: &Instance,
    block: &Block,
    z: u32,
    u_star: u32,
    x: &mut SpinConfig,
    y: &mut SpinConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    let graph = &instance.graph;
    if block.cycle.is_empty() {
        return Err(Error::structure("unicyclic block stores no cycle"));
    }
    let cyc: BTreeSet<u32> = block.cycle.iter().copied().collect();

    // Entry subtree and its unique cycle attachment.
    let (tbar, w) = if cyc.contains(&z) {
        (Vec::new(), z)
    } else {
        let mut seen = BTreeSet::new();
        let tbar = preorder(
            graph,
            &[z],
            |v| block.contains(v) && !cyc.contains(&v),
            &mut seen,
        );
        let mut attach = BTreeSet::new();
        for &t in &tbar {
            for &(nb, _) in graph.neighbors(t) {
                if cyc.contains(&nb) {
                    attach.insert(nb);
                }
            }
        }
        if attach.len() != 1 {
            return Err(Error::structure(format!(
                "entry subtree of vertex {z} touches the cycle at {} vertices, expected exactly 1",
                attach.len()
            )));
        }
        (tbar, *attach.iter().next().unwrap())
    };

    let bx = BoundaryCondition::from_config(instance, &block.vertices, x);
    let by = BoundaryCondition::from_config(instance, &block.vertices, y);
    let sys_x = BlockSystem::new(instance, &block.vertices, &bx)?;
    let sys_y = BlockSystem::new(instance, &block.vertices, &by)?;

    let tset: BTreeSet<u32> = tbar.iter().copied().collect();
    let mut seen1 = BTreeSet::new();
    let phase1 = preorder(graph, &[z], |v| v == w || tset.contains(&v), &mut seen1);
    if phase1.len() != tbar.len() + 1 {
        return Err(Error::structure(
            "entry subtree is not connected to its cycle attachment",
        ));
    }
    couple_chain_rule(&sys_x, &sys_y, &phase1, x, y, rng)?;

    let lambda: Vec<u32> = block
        .vertices
        .iter()
        .copied()
        .filter(|v| !seen1.contains(v))
        .collect();
    if lambda.is_empty() {
        return Ok(());
    }
    let lset: BTreeSet<u32> = lambda.iter().copied().collect();

    // Fixed traversal: the lower cycle neighbor of w first, then the other
    // forest neighbors of w in ascending order. Every component of the forest
    // contains a neighbor of w, so these seeds reach all of it.
    let pos = block
        .cycle
        .iter()
        .position(|&c| c == w)
        .ok_or_else(|| Error::structure("cycle attachment missing from the stored cycle"))?;
    let m = block.cycle.len();
    let x1 = block.cycle[(pos + m - 1) % m].min(block.cycle[(pos + 1) % m]);
    let mut seeds = vec![x1];
    for &(nb, _) in graph.neighbors(w) {
        if nb != x1 && lset.contains(&nb) {
            seeds.push(nb);
        }
    }

    let mut seen2 = BTreeSet::new();
    for &sd in &seeds {
        let comp = preorder(graph, &[sd], |v| lset.contains(&v), &mut seen2);
        if comp.is_empty() {
            continue;
        }
        debug_assert!(comp
            .iter()
            .all(|&v| graph.neighbors(v).iter().all(|&(nb, _)| nb != u_star)));
        let cx = BoundaryCondition::from_config(instance, &comp, x);
        let cy = BoundaryCondition::from_config(instance, &comp, y);
        let sys_a = BlockSystem::new(instance, &comp, &cx)?;
        let sys_c = BlockSystem::new(instance, &comp, &cy)?;
        couple_chain_rule(&sys_a, &sys_c, &comp, x, y, rng)?;
    }
    if seen2.len() != lambda.len() {
        return Err(Error::structure(
            "part of the block is not attached to the cycle",
        ));
    }
    Ok(())
}

/// Coupled exact resample of block `b` in two chains that may differ only at
/// `u_star` (callers enforce that precondition; `path_coupling_trial` checks
/// it). Marginally each chain performs an exact block resample given its own
/// boundary spins. Jointly: identical boundaries get the identity coupling
/// (one sample handed to both chains); a boundary disagreement at `u_star` is
/// coupled vertex by vertex with shared uniforms, traversing a tree block in
/// DFS preorder from the unique member adjacent to `u_star` and a unicyclic
/// block through the two-phase schedule of `couple_unicyclic`.
pub fn coupled_block_update(
    instance: &Instance,
    partition: &BlockPartition,
    b: usize,
    u_star: u32,
    x: &mut SpinConfig,
    y: &mut SpinConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    let n = instance.n();
    if partition.n() != n || x.len() != n || y.len() != n {
        return Err(Error::structure(
            "partition, configurations, and instance sizes disagree",
        ));
    }
    if b >= partition.num_blocks() {
        return Err(Error::invalid(format!("no block with index {b}")));
    }
    if u_star as usize >= n {
        return Err(Error::invalid(format!("vertex {u_star} out of range")));
    }
    let block = partition.block(b);
    let entries: Vec<u32> = instance
        .graph
        .neighbors(u_star)
        .iter()
        .map(|&(nb, _)| nb)
        .filter(|&nb| block.contains(nb))
        .collect();

    let boundary_disagrees =
        !block.contains(u_star) && x.get(u_star) != y.get(u_star) && !entries.is_empty();
    if !boundary_disagrees {
        // The two chains see the same boundary: resample once, hand the draw
        // to both. A disagreement at a member of the block itself is erased.
        if block.len() == 1 {
            let v = block.vertices[0];
            let p = site_conditional(instance, x, v);
            let u: f64 = rng.gen();
            let s = spin_from(u, p);
            x.set(v, s);
            y.set(v, s);
        } else {
            let bc = BoundaryCondition::from_config(instance, &block.vertices, x);
            let sys = BlockSystem::new(instance, &block.vertices, &bc)?;
            for (v, s) in sys.sample(rng) {
                x.set(v, s);
                y.set(v, s);
            }
        }
        return Ok(());
    }

    if entries.len() > 1 {
        return Err(Error::structure(format!(
            "boundary vertex {u_star} has {} neighbors inside block {b}; the coupling needs exactly one",
            entries.len()
        )));
    }
    let z = entries[0];
    match block.kind {
        BlockKind::Singleton | BlockKind::Tree => {
            let bx = BoundaryCondition::from_config(instance, &block.vertices, x);
            let by = BoundaryCondition::from_config(instance, &block.vertices, y);
            let sys_x = BlockSystem::new(instance, &block.vertices, &bx)?;
            let sys_y = BlockSystem::new(instance, &block.vertices, &by)?;
            let mut seen = BTreeSet::new();
            let order = preorder(&instance.graph, &[z], |v| block.contains(v), &mut seen);
            if order.len() != block.len() {
                return Err(Error::structure(format!(
                    "block {b} is not connected from its entry vertex {z}"
                )));
            }
            couple_chain_rule(&sys_x, &sys_y, &order, x, y, rng)
        }
        BlockKind::Unicyclic => couple_unicyclic(instance, block, z, u_star, x, y, rng),
    }
}

/// Outcome of one path-coupling trial.
#[derive(Clone, Debug, Serialize)]
pub struct CouplingTrial {
    /// Index of the block that was resampled.
    pub block: usize,
    pub dist_before: f64,
    pub dist_after: f64,
    /// `dist_after - dist_before`; contraction means this is negative on
    /// average over the block choice.
    pub delta: f64,
    /// Disagreements among the resampled block's vertices afterwards.
    pub new_disagreements: usize,
    pub coalesced: bool,
}

/// One step of the coupled block dynamics applied to a pair of chains that
/// disagree exactly at `u_star`: a uniformly random block is resampled in
/// both chains under `coupled_block_update`. The configurations are advanced
/// in place; afterwards they disagree only at `u_star` (unless its block was
/// chosen, which erases the disagreement) and inside the resampled block.
pub fn path_coupling_trial(
    instance: &Instance,
    partition: &BlockPartition,
    table: &InfluenceTable,
    x: &mut SpinConfig,
    y: &mut SpinConfig,
    u_star: u32,
    rng: &mut impl Rng,
) -> Result<CouplingTrial> {
    let b = uniform_index(rng, partition.num_blocks());
    path_coupling_trial_in(instance, partition, table, x, y, u_star, b, rng)
}

/// `path_coupling_trial` with the resampled block chosen by the caller
/// instead of drawn uniformly. Blocks that neither contain `u_star` nor
/// touch it by an edge leave the distance unchanged, so an estimator of the
/// one-step mean can sample only the others and reweight.
#[allow(clippy::too_many_arguments)]
pub fn path_coupling_trial_in(
    instance: &Instance,
    partition: &BlockPartition,
    table: &InfluenceTable,
    x: &mut SpinConfig,
    y: &mut SpinConfig,
    u_star: u32,
    b: usize,
    rng: &mut impl Rng,
) -> Result<CouplingTrial> {
    let n = instance.n();
    if partition.n() != n || x.len() != n || y.len() != n {
        return Err(Error::structure(
            "partition, configurations, and instance sizes disagree",
        ));
    }
    if u_star as usize >= n {
        return Err(Error::invalid(format!("vertex {u_star} out of range")));
    }
    if b >= partition.num_blocks() {
        return Err(Error::invalid(format!("block index {b} out of range")));
    }
    let agg_out = metric_slice(instance, table)?;
    let diffs = x.disagreements(y);
    if diffs != 1 || x.get(u_star) == y.get(u_star) {
        return Err(Error::invalid(format!(
            "configurations must disagree exactly at vertex {u_star}, found {diffs} disagreements"
        )));
    }
    let dist_before = metric_weight(partition, agg_out, u_star);
    coupled_block_update(instance, partition, b, u_star, x, y, rng)?;
    let block = partition.block(b);
    let mut new_disagreements = 0usize;
    let mut dist_after = 0.0;
    for &v in &block.vertices {
        if x.get(v) != y.get(v) {
            new_disagreements += 1;
            dist_after += metric_weight(partition, agg_out, v);
        }
    }
    if !block.contains(u_star) && x.get(u_star) != y.get(u_star) {
        dist_after += dist_before;
    }
    Ok(CouplingTrial {
        block: b,
        dist_before,
        dist_after,
        delta: dist_after - dist_before,
        new_disagreements,
        coalesced: block.contains(u_star) && new_disagreements == 0,
    })
}

/// One step of the grand coupling used by coalescence runs: both chains
/// resample the same uniformly random block, coupled by the shared-uniform
/// chain rule in DFS preorder from the block's lowest member (so the coupling
/// is valid for any boundary pair, not just a single disagreement). Returns
/// the block index and the change in the number of disagreeing vertices.
pub fn coupled_block_step(
    instance: &Instance,
    partition: &BlockPartition,
    x: &mut SpinConfig,
    y: &mut SpinConfig,
    rng: &mut impl Rng,
) -> Result<(usize, i64)> {
    let n = instance.n();
    if partition.n() != n || x.len() != n || y.len() != n {
        return Err(Error::structure(
            "partition, configurations, and instance sizes disagree",
        ));
    }
    let b = uniform_index(rng, partition.num_blocks());
    let block = partition.block(b);
    let before = block
        .vertices
        .iter()
        .filter(|&&v| x.get(v) != y.get(v))
        .count() as i64;
    if block.len() == 1 {
        let v = block.vertices[0];
        let px = site_conditional(instance, x, v);
        let py = site_conditional(instance, y, v);
        let u: f64 = rng.gen();
        x.set(v, spin_from(u, px));
        y.set(v, spin_from(u, py));
    } else {
        let bx = BoundaryCondition::from_config(instance, &block.vertices, x);
        let by = BoundaryCondition::from_config(instance, &block.vertices, y);
        let sys_x = BlockSystem::new(instance, &block.vertices, &bx)?;
        let sys_y = BlockSystem::new(instance, &block.vertices, &by)?;
        let mut seen = BTreeSet::new();
        let order = preorder(
            &instance.graph,
            &[block.vertices[0]],
            |v| block.contains(v),
            &mut seen,
        );
        couple_chain_rule(&sys_x, &sys_y, &order, x, y, rng)?;
    }
    let after = block
        .vertices
        .iter()
        .filter(|&&v| x.get(v) != y.get(v))
        .count() as i64;
    Ok((b, after - before))
}

/// Trace of a coupled pair under the grand coupling, recording the weighted
/// distance and disagreement count alongside the first chain's observables.
pub fn run_coupled_chain(
    instance: &Instance,
    partition: &BlockPartition,
    table: &InfluenceTable,
    x: &mut SpinConfig,
    y: &mut SpinConfig,
    steps: u64,
    stride: u64,
    rng: &mut impl Rng,
) -> Result<Vec<TraceRow>> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    metric_slice(instance, table)?;
    let row = |step: u64,
               unit: Option<u32>,
               x: &SpinConfig,
               y: &SpinConfig|
     -> Result<TraceRow> {
        Ok(TraceRow {
            step,
            updated_unit: unit,
            energy: log_weight(instance, x),
            magnetization: x.magnetization(),
            distance: Some(block_distance(instance, partition, table, x, y)?),
            disagreements: Some(x.disagreements(y)),
        })
    };
    let mut rows = vec![row(0, None, x, y)?];
    for i in 1..=steps {
        let (b, _) = coupled_block_step(instance, partition, x, y, rng)?;
        if i % stride == 0 || i == steps {
            rows.push(row(i, Some(b as u32), x, y)?);
        }
    }
    Ok(rows)
}

/// Result of repeated coalescence runs of the grand coupling started from the
/// all-plus / all-minus pair.
#[derive(Clone, Debug, Serialize)]
pub struct CoalescenceReport {
    pub trials: u64,
    pub max_steps: u64,
    /// Steps until the chains met, per trial; `None` if the cap was hit.
    pub steps: Vec<Option<u64>>,
    pub coalesced: u64,
    pub mean_coalesced_steps: Option<f64>,
}

/// Run `trials` independent coalescence experiments: each starts the pair at
/// (all plus, all minus) and applies coupled block steps until the chains
/// agree or `max_steps` is reached. Trial `t` reads the coupling stream with
/// index `t` of `seed`.
pub fn coalescence_experiment(
    instance: &Instance,
    partition: &BlockPartition,
    trials: u64,
    max_steps: u64,
    seed: u64,
) -> Result<CoalescenceReport> {
    if trials == 0 || trials >= 1 << 32 {
        return Err(Error::invalid("trials must be in 1..2^32"));
    }
    if partition.n() != instance.n() {
        return Err(Error::structure(
            "partition and instance sizes disagree",
        ));
    }
    let n = instance.n();
    let mut steps = Vec::with_capacity(trials as usize);
    for t in 0..trials {
        let mut rng = stream(seed, PURPOSE_COUPLING, t);
        let mut x = SpinConfig::all_plus(n);
        let mut y = SpinConfig::all_minus(n);
        let mut disagree = n as i64;
        let mut taken = None;
        for s in 1..=max_steps {
            let (_, delta) = coupled_block_step(instance, partition, &mut x, &mut y, &mut rng)?;
            disagree += delta;
            if disagree == 0 {
                taken = Some(s);
                break;
            }
        }
        debug_assert_eq!(disagree as usize, x.disagreements(&y));
        steps.push(taken);
    }
    let coalesced = steps.iter().flatten().count() as u64;
    let mean = if coalesced > 0 {
        Some(steps.iter().flatten().sum::<u64>() as f64 / coalesced as f64)
    } else {
        None
    };
    Ok(CoalescenceReport {
        trials,
        max_steps,
        steps,
        coalesced,
        mean_coalesced_steps: mean,
    })
}

/// Empirical distance to stationarity.
#[derive(Clone, Debug, Serialize)]
pub struct TvReport {
    pub steps: u64,
    pub replicas: u64,
    /// Total variation distance between the replica histogram at `steps` and
    /// the exact distribution.
    pub tv: f64,
    /// Scale of the plug-in estimator's upward bias, `sqrt(2^n / replicas) / 2`;
    /// the replica floor keeps it at most 0.05.
    pub bias_scale: f64,
}

/// Estimate the total variation distance to stationarity after `steps`
/// updates by running independent replicas from the all-plus configuration
/// (the coupling-symmetric extreme start; the all-minus start gives the same
/// law because flipping every spin preserves the measure). Requires
/// `replicas >= 100 * 2^n` so the histogram resolves the state space, and
/// n within the exact-summation cap. Replica `r` reads the chain stream with
/// index `r` of `seed`; the estimate does not depend on thread scheduling.
pub fn empirical_tv(
    instance: &Instance,
    dynamics: DynamicsKind,
    steps: u64,
    replicas: u64,
    seed: u64,
) -> Result<TvReport> {
    let n = instance.n();
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::cap(format!(
            "empirical distance needs the exact distribution, so n <= {BRUTE_FORCE_MAX_N}; got {n}"
        )));
    }
    let states: u64 = 1 << n;
    if replicas < 100 * states {
        return Err(Error::invalid(format!(
            "need at least 100 * 2^n = {} replicas for a stable histogram, got {replicas}",
            100 * states
        )));
    }
    if replicas >= 1 << 32 {
        return Err(Error::invalid("replicas must fit a 32-bit stream index"));
    }
    if let DynamicsKind::Block(p) = dynamics {
        if p.n() != n {
            return Err(Error::structure(
                "partition and instance sizes disagree",
            ));
        }
    }
    let exact = brute_force(instance)?;
    let counts = (0..replicas)
        .into_par_iter()
        .try_fold(
            || vec![0u64; states as usize],
            |mut acc, r| -> Result<Vec<u64>> {
                let mut rng = stream(seed, PURPOSE_CHAIN, r);
                let mut state = ChainState::new(SpinConfig::all_plus(n));
                for _ in 0..steps {
                    dynamics.step(instance, &mut state, &mut rng)?;
                }
                acc[state.config.to_bits() as usize] += 1;
                Ok(acc)
            },
        )
        .try_reduce(
            || vec![0u64; states as usize],
            |mut a, b| {
                for (ai, bi) in a.iter_mut().zip(b) {
                    *ai += bi;
                }
                Ok(a)
            },
        )?;
    let hist: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / replicas as f64)
        .collect();
    Ok(TvReport {
        steps,
        replicas,
        tv: exact.tv_to(&hist),
        bias_scale: 0.5 * ((states as f64) / (replicas as f64)).sqrt(),
    })
}
