//! Exact Gibbs computations: brute force for tiny instances, single-site
//! conditionals, and message-passing marginals / samplers / partition
//! functions for tree and unicyclic blocks under boundary conditions.
//!
//! The measure is mu(sigma) proportional to exp(beta * sum over edges of
//! J_e * 1{sigma(x) = sigma(y)}). All block computations run in log space:
//! upward partition-function messages per spin on trees, and unicyclic
//! blocks handled by pinning one cycle vertex (lowest id) and combining the
//! two broken-cycle partition functions.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::partition::BlockKind;

/// Spin assignment, one of {-1, +1} per vertex.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpinConfig(Vec<i8>);

impl SpinConfig {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if let Some(&bad) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::invalid(format!("spin must be +1 or -1, got {bad}")));
        }
        Ok(SpinConfig(spins))
    }

    pub fn all_plus(n: usize) -> Self {
        SpinConfig(vec![1; n])
    }

    pub fn all_minus(n: usize) -> Self {
        SpinConfig(vec![-1; n])
    }

    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        SpinConfig((0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect())
    }

    /// Configuration from its state index: bit i = (spin of vertex i + 1)/2.
    pub fn from_bits(n: usize, bits: u64) -> Self {
        assert!(n <= 64, "bit encoding limited to 64 vertices");
        SpinConfig(
            (0..n)
                .map(|i| if bits >> i & 1 == 1 { 1 } else { -1 })
                .collect(),
        )
    }

    /// State index of this configuration (inverse of `from_bits`).
    pub fn to_bits(&self) -> u64 {
        assert!(self.0.len() <= 64, "bit encoding limited to 64 vertices");
        self.0
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &s)| acc | ((s == 1) as u64) << i)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, v: u32) -> i8 {
        self.0[v as usize]
    }

    pub fn set(&mut self, v: u32, s: i8) {
        debug_assert!(s == 1 || s == -1);
        self.0[v as usize] = s;
    }

    pub fn flip(&mut self, v: u32) {
        self.0[v as usize] = -self.0[v as usize];
    }

    pub fn spins(&self) -> &[i8] {
        &self.0
    }

    /// Mean spin.
    pub fn magnetization(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().map(|&s| s as f64).sum::<f64>() / self.0.len() as f64
    }

    /// Number of vertices where the two configurations differ.
    pub fn disagreements(&self, other: &SpinConfig) -> usize {
        debug_assert_eq!(self.0.len(), other.0.len());
        self.0
            .iter()
            .zip(&other.0)
            .filter(|(a, b)| a != b)
            .count()
    }
}

#[inline]
fn bit(s: i8) -> usize {
    ((s + 1) / 2) as usize
}

/// `ln(e^a + e^b)` without overflow.
#[inline]
pub(crate) fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `1/(1 + e^(-x))`, stable for large |x|.
#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Unnormalized log-weight: `beta * sum over edges of J_e * 1{equal spins}`.
pub fn log_weight(instance: &Instance, config: &SpinConfig) -> f64 {
    assert_eq!(config.len(), instance.n(), "config length mismatch");
    let mut acc = 0.0;
    for (id, &(u, v)) in instance.graph.edges().iter().enumerate() {
        if config.get(u) == config.get(v) {
            acc += instance.coupling(id as u32);
        }
    }
    instance.beta() * acc
}

/// The full distribution over all 2^n configurations, indexed by
/// `SpinConfig::to_bits`.
#[derive(Debug, Clone)]
pub struct BruteForce {
    pub log_z: f64,
    pub probs: Vec<f64>,
}

/// Cap for exact enumeration.
pub const BRUTE_FORCE_MAX_N: usize = 20;

/// Exact enumeration of the Gibbs distribution; n <= 20.
pub fn brute_force(instance: &Instance) -> Result<BruteForce> {
    let n = instance.n();
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::cap(format!(
            "brute force capped at n <= {BRUTE_FORCE_MAX_N}, got {n}"
        )));
    }
    let states = 1usize << n;
    let mut logw = Vec::with_capacity(states);
    for s in 0..states as u64 {
        let cfg = SpinConfig::from_bits(n, s);
        logw.push(log_weight(instance, &cfg));
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for lw in &logw {
        sum += (lw - max).exp();
    }
    let log_z = max + sum.ln();
    let probs = logw.iter().map(|lw| (lw - max).exp() / sum).collect();
    Ok(BruteForce { log_z, probs })
}

impl BruteForce {
    pub fn prob(&self, config: &SpinConfig) -> f64 {
        self.probs[config.to_bits() as usize]
    }

    /// P(spin of v = +1).
    pub fn marginal_plus(&self, v: u32) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(s, _)| *s >> v & 1 == 1)
            .map(|(_, p)| p)
            .sum()
    }

    /// P(spin of v = +1 | the pinned spins), by summing the enumeration.
    pub fn conditional_plus(&self, pins: &[(u32, i8)], v: u32) -> f64 {
        let mut mask = 0usize;
        let mut want = 0usize;
        for &(u, s) in pins {
            mask |= 1 << u;
            if s == 1 {
                want |= 1 << u;
            }
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (s, &p) in self.probs.iter().enumerate() {
            if s & mask == want {
                den += p;
                if s >> v & 1 == 1 {
                    num += p;
                }
            }
        }
        num / den
    }

    /// Total-variation distance to an empirical distribution over state
    /// indices.
    pub fn tv_to(&self, other: &[f64]) -> f64 {
        assert_eq!(self.probs.len(), other.len());
        0.5 * self
            .probs
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// P(spin of v = +1 | all other spins as in `config`): the heat-bath
/// single-site conditional, `sigmoid(beta * (S_plus - S_minus))`.
pub fn site_conditional(instance: &Instance, config: &SpinConfig, v: u32) -> f64 {
    let mut diff = 0.0;
    for &(w, e) in instance.graph.neighbors(v) {
        let j = instance.coupling(e);
        if config.get(w) == 1 {
            diff += j;
        } else {
            diff -= j;
        }
    }
    sigmoid(instance.beta() * diff)
}

/// Spins fixed on a conditioning set disjoint from the sampled block.
#[derive(Debug, Clone, Default)]
pub struct BoundaryCondition {
    spins: BTreeMap<u32, i8>,
}

impl BoundaryCondition {
    pub fn new(pairs: impl IntoIterator<Item = (u32, i8)>) -> Result<Self> {
        let mut spins = BTreeMap::new();
        for (v, s) in pairs {
            if s != 1 && s != -1 {
                return Err(Error::invalid(format!(
                    "boundary spin at {v} must be +1 or -1, got {s}"
                )));
            }
            if spins.insert(v, s).is_some() {
                return Err(Error::invalid(format!("duplicate boundary vertex {v}")));
            }
        }
        Ok(BoundaryCondition { spins })
    }

    pub fn empty() -> Self {
        BoundaryCondition::default()
    }

    /// Extract the outer-boundary spins of `block` from a full configuration.
    pub fn from_config(instance: &Instance, block: &[u32], config: &SpinConfig) -> Self {
        let mut inside = vec![false; instance.n()];
        for &v in block {
            inside[v as usize] = true;
        }
        let mut spins = BTreeMap::new();
        for &v in block {
            for &(w, _) in instance.graph.neighbors(v) {
                if !inside[w as usize] {
                    spins.insert(w, config.get(w));
                }
            }
        }
        BoundaryCondition { spins }
    }

    pub fn spin(&self, v: u32) -> Option<i8> {
        self.spins.get(&v).copied()
    }

    pub fn contains(&self, v: u32) -> bool {
        self.spins.contains_key(&v)
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, i8)> + '_ {
        self.spins.iter().map(|(&v, &s)| (v, s))
    }
}

/// Parent links, preorder, and upward log-messages for the forest of
/// unpinned members.
struct RootedForest {
    /// Member indices, parents before children; covers every unpinned member.
    order: Vec<usize>,
    /// `(parent member index, edge id)`; None for component roots.
    parent: Vec<Option<(usize, u32)>>,
    /// Per spin: external field + pinned-neighbor terms + upward messages
    /// from the vertex's children (its own message to the parent excluded).
    belief: Vec<[f64; 2]>,
    /// Log partition function over the unpinned members, all terms touching
    /// at least one unpinned member included.
    logz_free: f64,
}

/// Exact inference on one block under a boundary condition.
///
/// The conditional measure on the block members is proportional to
/// `exp(sum of fields h_v(s_v) + beta * sum over internal edges of
/// J * 1{equal})`, with `h_v(s) = beta * sum over crossing edges of
/// J * 1{s = assigned outside spin}`. Edges between two boundary vertices are
/// constants and excluded from `log_z`.
pub struct BlockSystem<'a> {
    instance: &'a Instance,
    /// Sorted member vertex ids.
    members: Vec<u32>,
    /// Internal adjacency: per member index, (member index, edge id), sorted.
    madj: Vec<Vec<(usize, u32)>>,
    /// Boundary fields per member, index 0 = spin -1, 1 = spin +1.
    field: Vec<[f64; 2]>,
    kind: BlockKind,
    /// Member indices on the unique cycle, sorted; empty unless unicyclic.
    cycle: Vec<usize>,
}

impl<'a> BlockSystem<'a> {
    /// Boundary keyed by vertex: every outside neighbor of the block must
    /// carry a spin.
    pub fn new(
        instance: &'a Instance,
        block: &[u32],
        boundary: &BoundaryCondition,
    ) -> Result<Self> {
        Self::build(instance, block, |outside, _edge| {
            boundary
                .spin(outside)
                .ok_or_else(|| Error::invalid(format!("missing boundary spin at vertex {outside}")))
        })
        .and_then(|sys| {
            if let Some(&v) = sys.members.iter().find(|&&v| boundary.contains(v)) {
                return Err(Error::invalid(format!(
                    "boundary condition overlaps block at vertex {v}"
                )));
            }
            Ok(sys)
        })
    }

    /// Boundary keyed by crossing edge id. This generalization lets two
    /// crossing edges that share an outside endpoint carry different spins,
    /// which is exactly the auxiliary-vertex construction used by the
    /// unicyclic coupled sampler (one cycle edge rerouted through a phantom
    /// copy of its endpoint).
    pub fn with_edge_spins(
        instance: &'a Instance,
        block: &[u32],
        edge_spins: &BTreeMap<u32, i8>,
    ) -> Result<Self> {
        for (&e, &s) in edge_spins {
            if s != 1 && s != -1 {
                return Err(Error::invalid(format!(
                    "edge boundary spin for edge {e} must be +1 or -1, got {s}"
                )));
            }
        }
        Self::build(instance, block, |outside, edge| {
            edge_spins.get(&edge).copied().ok_or_else(|| {
                Error::invalid(format!(
                    "missing boundary spin for crossing edge {edge} (outside vertex {outside})"
                ))
            })
        })
    }

    fn build(
        instance: &'a Instance,
        block: &[u32],
        outside_spin: impl Fn(u32, u32) -> Result<i8>,
    ) -> Result<Self> {
        if block.is_empty() {
            return Err(Error::invalid("block must be nonempty"));
        }
        let mut members: Vec<u32> = block.to_vec();
        members.sort_unstable();
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::structure("block repeats a vertex"));
        }
        if *members.last().unwrap() as usize >= instance.n() {
            return Err(Error::structure(format!(
                "block vertex {} out of range",
                members.last().unwrap()
            )));
        }
        let k = members.len();
        let idx_of = |v: u32| members.binary_search(&v).ok();
        let mut madj: Vec<Vec<(usize, u32)>> = vec![Vec::new(); k];
        let mut field = vec![[0.0f64; 2]; k];
        let beta = instance.beta();
        let mut internal_twice = 0usize;
        for (i, &v) in members.iter().enumerate() {
            for &(w, e) in instance.graph.neighbors(v) {
                match idx_of(w) {
                    Some(j) => {
                        madj[i].push((j, e));
                        internal_twice += 1;
                    }
                    None => {
                        let s = outside_spin(w, e)?;
                        field[i][bit(s)] += beta * instance.coupling(e);
                    }
                }
            }
        }
        let edges = internal_twice / 2;
        // Connectivity.
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut reached = 1;
        while let Some(v) = stack.pop() {
            for &(w, _) in &madj[v] {
                if !seen[w] {
                    seen[w] = true;
                    reached += 1;
                    stack.push(w);
                }
            }
        }
        if reached != k {
            return Err(Error::structure(
                "block induces a disconnected subgraph",
            ));
        }
        let (kind, cycle) = if k == 1 {
            (BlockKind::Singleton, Vec::new())
        } else if edges == k - 1 {
            (BlockKind::Tree, Vec::new())
        } else if edges == k {
            // 2-core peel: strip leaves until only the cycle remains.
            let mut deg: Vec<usize> = madj.iter().map(Vec::len).collect();
            let mut queue: Vec<usize> = (0..k).filter(|&v| deg[v] == 1).collect();
            let mut removed = vec![false; k];
            while let Some(v) = queue.pop() {
                removed[v] = true;
                for &(w, _) in &madj[v] {
                    if !removed[w] {
                        deg[w] -= 1;
                        if deg[w] == 1 {
                            queue.push(w);
                        }
                    }
                }
            }
            let cyc: Vec<usize> = (0..k).filter(|&v| !removed[v]).collect();
            debug_assert!(cyc.len() >= 3);
            (BlockKind::Unicyclic, cyc)
        } else {
            return Err(Error::structure(format!(
                "block with {k} vertices spans {edges} internal edges; \
                 only trees (k-1) and unicyclic blocks (k) are supported"
            )));
        };
        Ok(BlockSystem {
            instance,
            members,
            madj,
            field,
            kind,
            cycle,
        })
    }

    pub fn members(&self) -> &[u32] {
        &self.members
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    /// Vertex ids on the cycle (unicyclic blocks only), ascending.
    pub fn cycle_vertices(&self) -> Vec<u32> {
        self.cycle.iter().map(|&i| self.members[i]).collect()
    }

    fn index(&self, v: u32) -> Result<usize> {
        self.members
            .binary_search(&v)
            .map_err(|_| Error::invalid(format!("vertex {v} is not in the block")))
    }

    /// Field-plus-pinned terms that appear when `x` is pinned to spin `s`:
    /// its external field and its edges to already-pinned members (each
    /// pinned-pinned edge is charged exactly once, at the second pinning).
    fn pin_term(&self, x: usize, s: i8, pinned: &[Option<i8>]) -> f64 {
        let beta = self.instance.beta();
        let mut acc = self.field[x][bit(s)];
        for &(w, e) in &self.madj[x] {
            if let Some(t) = pinned[w] {
                if t == s {
                    acc += beta * self.instance.coupling(e);
                }
            }
        }
        acc
    }

    /// Upward pass over the forest of unpinned members. `preferred_root`
    /// becomes its component's root when given (marginal queries read the
    /// root belief); other components root at their lowest member index.
    fn rooted_forest(&self, pinned: &[Option<i8>], preferred_root: Option<usize>) -> RootedForest {
        let k = self.members.len();
        let beta = self.instance.beta();
        let mut order = Vec::with_capacity(k);
        let mut parent: Vec<Option<(usize, u32)>> = vec![None; k];
        let mut visited: Vec<bool> = pinned.iter().map(Option::is_some).collect();
        let roots: Vec<usize> = preferred_root
            .into_iter()
            .chain(0..k)
            .filter(|&r| pinned[r].is_none())
            .collect();
        for r in roots {
            if visited[r] {
                continue;
            }
            visited[r] = true;
            let mut stack = vec![r];
            while let Some(v) = stack.pop() {
                order.push(v);
                // Reverse push so the lowest-id child is explored first.
                for &(w, e) in self.madj[v].iter().rev() {
                    if !visited[w] {
                        visited[w] = true;
                        parent[w] = Some((v, e));
                        stack.push(w);
                    }
                }
            }
        }
        let mut belief: Vec<[f64; 2]> = vec![[0.0; 2]; k];
        for &v in &order {
            belief[v] = [self.pin_term(v, -1, pinned), self.pin_term(v, 1, pinned)];
        }
        let mut logz_free = 0.0;
        for &v in order.iter().rev() {
            match parent[v] {
                Some((p, e)) => {
                    let bj = beta * self.instance.coupling(e);
                    let m_minus = log_sum_exp2(belief[v][0] + bj, belief[v][1]);
                    let m_plus = log_sum_exp2(belief[v][0], belief[v][1] + bj);
                    belief[p][0] += m_minus;
                    belief[p][1] += m_plus;
                }
                None => {
                    logz_free += log_sum_exp2(belief[v][0], belief[v][1]);
                }
            }
        }
        RootedForest {
            order,
            parent,
            belief,
            logz_free,
        }
    }

    /// Log partition function over the unpinned members (terms among pinned
    /// members excluded; handled by the caller via `pin_term`). Breaks the
    /// cycle, when still intact, by summing over the lowest-id cycle vertex.
    fn logz_unpinned(&self, pinned: &mut Vec<Option<i8>>) -> f64 {
        let cycle_intact =
            self.kind == BlockKind::Unicyclic && self.cycle.iter().all(|&c| pinned[c].is_none());
        if cycle_intact {
            let pivot = self.cycle[0];
            let mut branches = [0.0f64; 2];
            for s in [-1i8, 1] {
                let term = self.pin_term(pivot, s, pinned);
                pinned[pivot] = Some(s);
                let z = self.rooted_forest(pinned, None).logz_free;
                pinned[pivot] = None;
                branches[bit(s)] = term + z;
            }
            log_sum_exp2(branches[0], branches[1])
        } else {
            self.rooted_forest(pinned, None).logz_free
        }
    }

    /// Log of the block partition function under the boundary: the sum over
    /// all member configurations of the exponentiated fields and internal
    /// edge terms.
    pub fn log_z(&self) -> f64 {
        let mut pinned = vec![None; self.members.len()];
        self.logz_unpinned(&mut pinned)
    }

    /// P(spin of v = +1 | boundary and the pinned member spins). Exact.
    pub fn conditional_spin(&self, pins: &[(u32, i8)], v: u32) -> Result<f64> {
        let vi = self.index(v)?;
        let mut pinned: Vec<Option<i8>> = vec![None; self.members.len()];
        for &(u, s) in pins {
            if s != 1 && s != -1 {
                return Err(Error::invalid(format!("pin at {u} must be +1 or -1")));
            }
            let ui = self.index(u)?;
            if pinned[ui].replace(s).is_some() {
                return Err(Error::invalid(format!("vertex {u} pinned twice")));
            }
        }
        if pinned[vi].is_some() {
            return Err(Error::invalid(format!("query vertex {v} is pinned")));
        }
        let mut branches = [0.0f64; 2];
        for s in [-1i8, 1] {
            let term = self.pin_term(vi, s, &pinned);
            pinned[vi] = Some(s);
            let z = self.logz_unpinned(&mut pinned);
            pinned[vi] = None;
            branches[bit(s)] = term + z;
        }
        Ok(sigmoid(branches[1] - branches[0]))
    }

    /// P(spin of v = +1 | boundary).
    pub fn marginal(&self, v: u32) -> Result<f64> {
        self.conditional_spin(&[], v)
    }

    fn sample_forest(&self, rf: &RootedForest, out: &mut [Option<i8>], rng: &mut impl Rng) {
        let beta = self.instance.beta();
        for &v in &rf.order {
            let p_plus = match rf.parent[v] {
                None => sigmoid(rf.belief[v][1] - rf.belief[v][0]),
                Some((p, e)) => {
                    let bj = beta * self.instance.coupling(e);
                    let sp = out[p].expect("parent sampled before child");
                    let lp = rf.belief[v][1] + if sp == 1 { bj } else { 0.0 };
                    let lm = rf.belief[v][0] + if sp == -1 { bj } else { 0.0 };
                    sigmoid(lp - lm)
                }
            };
            let u: f64 = rng.gen();
            out[v] = Some(if u < p_plus { 1 } else { -1 });
        }
    }

    /// Exact sample from the conditional block distribution: ancestral
    /// sampling from the upward messages, O(|block|) per draw after the
    /// message pass. Unicyclic blocks first draw the lowest-id cycle vertex
    /// from its exact marginal, then sample the broken-cycle forest.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<(u32, i8)> {
        let k = self.members.len();
        let mut out: Vec<Option<i8>> = vec![None; k];
        match self.kind {
            BlockKind::Singleton | BlockKind::Tree => {
                let pinned = vec![None; k];
                let rf = self.rooted_forest(&pinned, None);
                self.sample_forest(&rf, &mut out, rng);
            }
            BlockKind::Unicyclic => {
                let pivot = self.cycle[0];
                let mut pinned: Vec<Option<i8>> = vec![None; k];
                let mut branch = [0.0f64; 2];
                let mut forests: [Option<RootedForest>; 2] = [None, None];
                for s in [-1i8, 1] {
                    let term = self.pin_term(pivot, s, &pinned);
                    pinned[pivot] = Some(s);
                    let rf = self.rooted_forest(&pinned, None);
                    pinned[pivot] = None;
                    branch[bit(s)] = term + rf.logz_free;
                    forests[bit(s)] = Some(rf);
                }
                let p_plus = sigmoid(branch[1] - branch[0]);
                let u: f64 = rng.gen();
                let s0 = if u < p_plus { 1i8 } else { -1 };
                out[pivot] = Some(s0);
                pinned[pivot] = Some(s0);
                let rf = forests[bit(s0)].take().unwrap();
                self.sample_forest(&rf, &mut out, rng);
            }
        }
        self.members
            .iter()
            .zip(out)
            .map(|(&v, s)| (v, s.expect("all members sampled")))
            .collect()
    }

    /// Log-probability of a full member assignment under the conditional
    /// block distribution.
    pub fn log_prob(&self, assignment: &[(u32, i8)]) -> Result<f64> {
        let k = self.members.len();
        if assignment.len() != k {
            return Err(Error::invalid(format!(
                "assignment covers {} vertices, block has {k}",
                assignment.len()
            )));
        }
        let mut spin: Vec<Option<i8>> = vec![None; k];
        for &(v, s) in assignment {
            if s != 1 && s != -1 {
                return Err(Error::invalid(format!("spin at {v} must be +1 or -1")));
            }
            if spin[self.index(v)?].replace(s).is_some() {
                return Err(Error::invalid(format!("vertex {v} assigned twice")));
            }
        }
        let beta = self.instance.beta();
        let mut url = 0.0;
        for i in 0..k {
            let s = spin[i].unwrap();
            url += self.field[i][bit(s)];
            for &(w, e) in &self.madj[i] {
                if w > i && spin[w].unwrap() == s {
                    url += beta * self.instance.coupling(e);
                }
            }
        }
        Ok(url - self.log_z())
    }
}

/// P(spin of v = +1 | boundary) for a tree or unicyclic block.
pub fn block_marginal(
    instance: &Instance,
    block: &[u32],
    boundary: &BoundaryCondition,
    v: u32,
) -> Result<f64> {
    BlockSystem::new(instance, block, boundary)?.marginal(v)
}

/// Exact sample from the conditional Gibbs distribution on the block,
/// returned as (vertex, spin) pairs sorted by vertex.
pub fn sample_block(
    instance: &Instance,
    block: &[u32],
    boundary: &BoundaryCondition,
    rng: &mut impl Rng,
) -> Result<Vec<(u32, i8)>> {
    Ok(BlockSystem::new(instance, block, boundary)?.sample(rng))
}

/// Log of the conditional probability of a specific block assignment.
pub fn block_conditional_log_prob(
    instance: &Instance,
    block: &[u32],
    boundary: &BoundaryCondition,
    assignment: &[(u32, i8)],
) -> Result<f64> {
    BlockSystem::new(instance, block, boundary)?.log_prob(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{gen, Graph};
    use crate::rng::{purpose_stream, PURPOSE_TEST};

    fn inst(n: usize, edges: Vec<(u32, u32)>, js: Vec<f64>, beta: f64) -> Instance {
        Instance::new(Graph::from_edges(n, edges).unwrap(), js, beta).unwrap()
    }

    #[test]
    fn spin_config_basics() {
        assert!(SpinConfig::new(vec![1, -1, 1]).is_ok());
        assert!(SpinConfig::new(vec![1, 0]).is_err());
        let c = SpinConfig::from_bits(4, 0b1010);
        assert_eq!(c.spins(), &[-1, 1, -1, 1]);
        assert_eq!(c.to_bits(), 0b1010);
        assert_eq!(SpinConfig::all_plus(3).to_bits(), 0b111);
        assert_eq!(c.magnetization(), 0.0);
        let mut d = c.clone();
        d.flip(0);
        assert_eq!(c.disagreements(&d), 1);
    }

    #[test]
    fn log_weight_examples() {
        let edgeless = inst(3, vec![], vec![], 1.5);
        assert_eq!(log_weight(&edgeless, &SpinConfig::all_plus(3)), 0.0);
        let one = inst(2, vec![(0, 1)], vec![0.7], 2.0);
        assert!((log_weight(&one, &SpinConfig::all_plus(2)) - 1.4).abs() < 1e-15);
        assert_eq!(
            log_weight(&one, &SpinConfig::new(vec![1, -1]).unwrap()),
            0.0
        );
        let tri = inst(3, vec![(0, 1), (0, 2), (1, 2)], vec![1.0, 1.0, 1.0], 1.0);
        assert!((log_weight(&tri, &SpinConfig::all_plus(3)) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn brute_force_tiny_cases() {
        let single = inst(1, vec![], vec![], 1.0);
        let bf = brute_force(&single).unwrap();
        assert_eq!(bf.probs, vec![0.5, 0.5]);
        assert!((bf.log_z - (2.0f64).ln()).abs() < 1e-15);
        // Single edge with J = ln 2, beta = 1: Z = 6, aligned pairs 1/3 each.
        let pair = inst(2, vec![(0, 1)], vec![(2.0f64).ln()], 1.0);
        let bf = brute_force(&pair).unwrap();
        assert!((bf.log_z - (6.0f64).ln()).abs() < 1e-12);
        assert!((bf.prob(&SpinConfig::all_plus(2)) - 1.0 / 3.0).abs() < 1e-12);
        assert!((bf.prob(&SpinConfig::new(vec![1, -1]).unwrap()) - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn brute_force_flip_symmetry_and_normalization() {
        let instance = gen(9, 3.0, 0.8, 17).unwrap();
        let bf = brute_force(&instance).unwrap();
        let total: f64 = bf.probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let full = (1usize << 9) - 1;
        for s in 0..bf.probs.len() {
            assert_eq!(bf.probs[s], bf.probs[s ^ full], "global flip symmetry");
        }
    }

    #[test]
    fn brute_force_cap() {
        let instance = gen(21, 2.0, 0.5, 1).unwrap();
        assert!(matches!(
            brute_force(&instance),
            Err(Error::CapExceeded(_))
        ));
    }

    #[test]
    fn site_conditional_examples() {
        let iso = inst(1, vec![], vec![], 1.0);
        assert_eq!(site_conditional(&iso, &SpinConfig::all_plus(1), 0), 0.5);
        // One neighbor at +1, beta = 1, J = ln 2: p = 2/3.
        let pair = inst(2, vec![(0, 1)], vec![(2.0f64).ln()], 1.0);
        let p = site_conditional(&pair, &SpinConfig::all_plus(2), 0);
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn site_conditional_matches_brute_force() {
        let instance = gen(8, 3.0, 1.2, 23).unwrap();
        let bf = brute_force(&instance).unwrap();
        let mut rng = purpose_stream(5, PURPOSE_TEST);
        for _ in 0..20 {
            let cfg = SpinConfig::random(8, &mut rng);
            for v in 0..8u32 {
                let pins: Vec<(u32, i8)> = (0..8u32)
                    .filter(|&u| u != v)
                    .map(|u| (u, cfg.get(u)))
                    .collect();
                let exact = bf.conditional_plus(&pins, v);
                let fast = site_conditional(&instance, &cfg, v);
                assert!((exact - fast).abs() < 1e-12, "vertex {v}");
            }
        }
    }

    #[test]
    fn site_conditional_neighbor_flip_symmetry() {
        let instance = gen(10, 3.0, 0.9, 31).unwrap();
        let mut rng = purpose_stream(6, PURPOSE_TEST);
        let cfg = SpinConfig::random(10, &mut rng);
        let mut flipped = cfg.clone();
        for v in 0..10u32 {
            flipped.flip(v);
        }
        for v in 0..10u32 {
            let p = site_conditional(&instance, &cfg, v);
            let q = site_conditional(&instance, &flipped, v);
            assert!((p + q - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pendant_tv_equals_influence() {
        // Pendant w (vertex 1) hanging off u (vertex 0): TV between the
        // conditional marginals of w under the two spins of u is exactly the
        // edge influence.
        for &(beta, j) in &[(1.0, 0.5), (0.7, -2.0), (2.0, 3.1), (0.3, 0.0)] {
            let instance = inst(2, vec![(0, 1)], vec![j], beta);
            let plus = SpinConfig::new(vec![1, 1]).unwrap();
            let minus = SpinConfig::new(vec![-1, 1]).unwrap();
            let p_up = site_conditional(&instance, &plus, 1);
            let p_down = site_conditional(&instance, &minus, 1);
            let tv = (p_up - p_down).abs();
            let gamma = crate::influence::edge_influence(beta, j).unwrap();
            assert!((tv - gamma).abs() < 1e-12, "beta={beta} j={j}");
        }
    }

    #[test]
    fn block_system_structural_errors() {
        let instance = inst(
            4,
            vec![(0, 1), (1, 2), (2, 3), (0, 2), (1, 3)],
            vec![1.0; 5],
            1.0,
        );
        // {0,1,2,3} spans 5 edges: neither tree nor unicyclic.
        let b = BoundaryCondition::empty();
        assert!(BlockSystem::new(&instance, &[0, 1, 2, 3], &b).is_err());
        // Disconnected member sets are rejected: the tree/unicyclic
        // classification by edge count is only meaningful for connected
        // blocks.
        let path = inst(4, vec![(0, 1), (2, 3)], vec![1.0, 1.0], 1.0);
        assert!(BlockSystem::new(&path, &[0, 1, 2, 3], &BoundaryCondition::empty()).is_err());
        assert!(BlockSystem::new(&path, &[0, 3], &BoundaryCondition::empty()).is_err());
        // Missing boundary spin.
        let chain = inst(3, vec![(0, 1), (1, 2)], vec![1.0, 1.0], 1.0);
        assert!(BlockSystem::new(&chain, &[1], &BoundaryCondition::empty()).is_err());
        // Boundary overlapping the block.
        let b = BoundaryCondition::new([(0, 1i8), (1, 1), (2, -1)]).unwrap();
        assert!(BlockSystem::new(&chain, &[1], &b).is_err());
        // Valid singleton with full boundary.
        let b = BoundaryCondition::new([(0, 1i8), (2, -1)]).unwrap();
        let sys = BlockSystem::new(&chain, &[1], &b).unwrap();
        assert_eq!(sys.kind(), BlockKind::Singleton);
    }

    #[test]
    fn singleton_block_matches_site_conditional() {
        let instance = gen(10, 3.0, 1.1, 41).unwrap();
        let mut rng = purpose_stream(7, PURPOSE_TEST);
        let cfg = SpinConfig::random(10, &mut rng);
        for v in 0..10u32 {
            let boundary = BoundaryCondition::from_config(&instance, &[v], &cfg);
            let m = block_marginal(&instance, &[v], &boundary, v).unwrap();
            let s = site_conditional(&instance, &cfg, v);
            assert!((m - s).abs() < 1e-12);
        }
    }

    /// Conditional marginal from brute force: P(sigma_v = + | boundary spins).
    fn brute_conditional(instance: &Instance, boundary: &BoundaryCondition, v: u32) -> f64 {
        let bf = brute_force(instance).unwrap();
        let pins: Vec<(u32, i8)> = boundary.iter().collect();
        bf.conditional_plus(&pins, v)
    }

    #[test]
    fn tree_block_marginals_match_brute_force() {
        // Random graphs; take a spanning-tree-ish connected induced block and
        // condition on everything else.
        let mut rng = purpose_stream(8, PURPOSE_TEST);
        let mut tested = 0;
        for seed in 0..40u64 {
            let instance = gen(9, 2.2, if seed % 3 == 0 { 0.3 } else { 1.4 }, seed).unwrap();
            // Greedily grow a tree block from vertex 0.
            let mut block = vec![0u32];
            let mut in_block = vec![false; 9];
            in_block[0] = true;
            let mut frontier = vec![0u32];
            while let Some(v) = frontier.pop() {
                for &(w, _) in instance.graph.neighbors(v) {
                    if !in_block[w as usize] && block.len() < 6 {
                        // Only add if it keeps the induced subgraph a tree.
                        let internal = instance
                            .graph
                            .neighbors(w)
                            .iter()
                            .filter(|&&(x, _)| in_block[x as usize])
                            .count();
                        if internal == 1 {
                            in_block[w as usize] = true;
                            block.push(w);
                            frontier.push(w);
                        }
                    }
                }
            }
            if block.len() < 2 {
                continue;
            }
            let cfg = SpinConfig::random(9, &mut rng);
            let boundary = BoundaryCondition::from_config(&instance, &block, &cfg);
            for &v in &block {
                let exact = brute_conditional(&instance, &boundary, v);
                let dp = block_marginal(&instance, &block, &boundary, v).unwrap();
                assert!(
                    (exact - dp).abs() < 1e-10,
                    "seed {seed} vertex {v}: {exact} vs {dp}"
                );
            }
            tested += 1;
        }
        assert!(tested >= 10, "too few usable blocks ({tested})");
    }

    #[test]
    fn unicyclic_block_marginals_match_brute_force() {
        // 5-cycle with pendants, plus two outside boundary vertices.
        let instance = inst(
            9,
            vec![
                (0, 1),
                (1, 2),
                (2, 3),
                (3, 4),
                (0, 4), // cycle 0-1-2-3-4
                (2, 5),
                (5, 6), // pendant path
                (0, 7), // boundary edge
                (6, 8), // boundary edge
            ],
            vec![0.8, -1.3, 0.5, 2.0, -0.7, 1.1, -0.4, 0.9, 1.7],
            0.9,
        );
        let block = [0u32, 1, 2, 3, 4, 5, 6];
        for (b7, b8) in [(1i8, 1i8), (1, -1), (-1, 1), (-1, -1)] {
            let boundary = BoundaryCondition::new([(7, b7), (8, b8)]).unwrap();
            let sys = BlockSystem::new(&instance, &block, &boundary).unwrap();
            assert_eq!(sys.kind(), BlockKind::Unicyclic);
            assert_eq!(sys.cycle_vertices(), vec![0, 1, 2, 3, 4]);
            for &v in &block {
                let exact = brute_conditional(&instance, &boundary, v);
                let dp = sys.marginal(v).unwrap();
                assert!(
                    (exact - dp).abs() < 1e-10,
                    "boundary ({b7},{b8}) vertex {v}: {exact} vs {dp}"
                );
            }
        }
    }

    #[test]
    fn triangle_with_zero_couplings_is_uniform() {
        let instance = inst(3, vec![(0, 1), (1, 2), (0, 2)], vec![0.0; 3], 1.0);
        let sys = BlockSystem::new(&instance, &[0, 1, 2], &BoundaryCondition::empty()).unwrap();
        for v in 0..3 {
            assert!((sys.marginal(v).unwrap() - 0.5).abs() < 1e-14);
        }
        assert!((sys.log_z() - (8.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn whole_graph_block_log_z_matches_brute_force() {
        // Tree instance.
        let tree = inst(
            6,
            vec![(0, 1), (1, 2), (1, 3), (3, 4), (3, 5)],
            vec![1.0, -0.5, 0.8, 1.2, -2.0],
            0.7,
        );
        let sys = BlockSystem::new(&tree, &[0, 1, 2, 3, 4, 5], &BoundaryCondition::empty())
            .unwrap();
        let bf = brute_force(&tree).unwrap();
        assert!((sys.log_z() - bf.log_z).abs() < 1e-10);
        for v in 0..6 {
            assert!((sys.marginal(v).unwrap() - bf.marginal_plus(v)).abs() < 1e-10);
        }
        // Unicyclic instance.
        let uni = inst(
            5,
            vec![(0, 1), (1, 2), (2, 0), (2, 3), (3, 4)],
            vec![0.9, -1.1, 0.4, 1.5, -0.6],
            1.3,
        );
        let sys = BlockSystem::new(&uni, &[0, 1, 2, 3, 4], &BoundaryCondition::empty()).unwrap();
        let bf = brute_force(&uni).unwrap();
        assert!((sys.log_z() - bf.log_z).abs() < 1e-10);
        for v in 0..5 {
            assert!((sys.marginal(v).unwrap() - bf.marginal_plus(v)).abs() < 1e-10);
        }
    }

    #[test]
    fn conditional_spin_matches_brute_force() {
        let uni = inst(
            6,
            vec![(0, 1), (1, 2), (2, 3), (3, 0), (2, 4), (4, 5)],
            vec![0.8, -1.2, 0.5, 1.9, -0.3, 0.7],
            1.1,
        );
        let bf = brute_force(&uni).unwrap();
        let sys = BlockSystem::new(&uni, &[0, 1, 2, 3, 4, 5], &BoundaryCondition::empty())
            .unwrap();
        let pin_sets: Vec<Vec<(u32, i8)>> = vec![
            vec![],
            vec![(0, 1)],
            vec![(4, -1)],
            vec![(1, 1), (3, -1)],
            vec![(0, -1), (2, -1), (5, 1)],
            vec![(1, -1), (2, 1), (3, 1), (4, -1), (5, -1)],
        ];
        for pins in &pin_sets {
            for v in 0..6u32 {
                if pins.iter().any(|&(u, _)| u == v) {
                    continue;
                }
                let exact = bf.conditional_plus(pins, v);
                let dp = sys.conditional_spin(pins, v).unwrap();
                assert!(
                    (exact - dp).abs() < 1e-10,
                    "pins {pins:?} vertex {v}: {exact} vs {dp}"
                );
            }
        }
        // Error paths.
        assert!(sys.conditional_spin(&[(0, 1)], 0).is_err());
        assert!(sys.conditional_spin(&[(0, 2)], 1).is_err());
        assert!(sys.conditional_spin(&[(0, 1), (0, 1)], 1).is_err());
    }

    #[test]
    fn log_prob_is_normalized() {
        let uni = inst(
            4,
            vec![(0, 1), (1, 2), (2, 0), (2, 3)],
            vec![0.8, -1.2, 0.5, 1.9],
            1.1,
        );
        let boundary = BoundaryCondition::empty();
        let sys = BlockSystem::new(&uni, &[0, 1, 2, 3], &boundary).unwrap();
        let mut total = 0.0;
        for s in 0..16u64 {
            let cfg = SpinConfig::from_bits(4, s);
            let assignment: Vec<(u32, i8)> = (0..4u32).map(|v| (v, cfg.get(v))).collect();
            total += sys.log_prob(&assignment).unwrap().exp();
        }
        assert!((total - 1.0).abs() < 1e-10);
        // And matches brute force pointwise.
        let bf = brute_force(&uni).unwrap();
        let cfg = SpinConfig::from_bits(4, 0b0110);
        let assignment: Vec<(u32, i8)> = (0..4u32).map(|v| (v, cfg.get(v))).collect();
        let lp = sys.log_prob(&assignment).unwrap();
        assert!((lp.exp() - bf.prob(&cfg)).abs() < 1e-12);
    }

    #[test]
    fn sampler_respects_deterministic_limit() {
        // Boundary +1 across an edge with beta*J = 50: the block spin follows
        // with probability 1/(1+e^-50).
        let instance = inst(2, vec![(0, 1)], vec![50.0], 1.0);
        let boundary = BoundaryCondition::new([(1, 1i8)]).unwrap();
        let mut rng = purpose_stream(9, PURPOSE_TEST);
        for _ in 0..50 {
            let s = sample_block(&instance, &[0], &boundary, &mut rng).unwrap();
            assert_eq!(s, vec![(0, 1)]);
        }
    }

    #[test]
    fn sampler_frequencies_match_marginals() {
        // Tree block with a boundary vertex.
        let instance = inst(
            6,
            vec![(0, 1), (1, 2), (1, 3), (3, 4), (0, 5)],
            vec![0.9, -1.4, 0.6, 1.1, 0.8],
            1.0,
        );
        let block = [0u32, 1, 2, 3, 4];
        let boundary = BoundaryCondition::new([(5, -1i8)]).unwrap();
        let sys = BlockSystem::new(&instance, &block, &boundary).unwrap();
        let draws = 20_000usize;
        let mut plus = vec![0usize; block.len()];
        let mut rng = purpose_stream(10, PURPOSE_TEST);
        for _ in 0..draws {
            for (i, (_, s)) in sys.sample(&mut rng).into_iter().enumerate() {
                if s == 1 {
                    plus[i] += 1;
                }
            }
        }
        for (i, &v) in block.iter().enumerate() {
            let p = sys.marginal(v).unwrap();
            let freq = plus[i] as f64 / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!(
                (freq - p).abs() < 4.5 * se + 1e-9,
                "vertex {v}: freq {freq} vs p {p}"
            );
        }
    }

    #[test]
    fn sampler_distribution_matches_exact_on_unicyclic_block() {
        // Full-config histogram against exact probabilities.
        let instance = inst(
            5,
            vec![(0, 1), (1, 2), (2, 0), (1, 3), (0, 4)],
            vec![0.8, -1.0, 0.6, 1.2, -0.5],
            0.8,
        );
        let block = [0u32, 1, 2, 3];
        let boundary = BoundaryCondition::new([(4, 1i8)]).unwrap();
        let sys = BlockSystem::new(&instance, &block, &boundary).unwrap();
        let draws = 40_000usize;
        let mut counts = vec![0usize; 16];
        let mut rng = purpose_stream(11, PURPOSE_TEST);
        for _ in 0..draws {
            let s = sys.sample(&mut rng);
            let idx = s
                .iter()
                .enumerate()
                .fold(0usize, |acc, (i, &(_, sp))| acc | ((sp == 1) as usize) << i);
            counts[idx] += 1;
        }
        let mut tv = 0.0;
        for idx in 0..16usize {
            let assignment: Vec<(u32, i8)> = block
                .iter()
                .enumerate()
                .map(|(i, &v)| (v, if idx >> i & 1 == 1 { 1i8 } else { -1 }))
                .collect();
            let p = sys.log_prob(&assignment).unwrap().exp();
            tv += (p - counts[idx] as f64 / draws as f64).abs();
        }
        tv *= 0.5;
        assert!(tv < 0.02, "sampled TV {tv}");
    }

    #[test]
    fn extreme_beta_stays_finite() {
        let instance = inst(
            5,
            vec![(0, 1), (1, 2), (2, 3), (3, 4)],
            vec![10.0, -10.0, 9.0, -8.0],
            80.0,
        );
        let sys = BlockSystem::new(&instance, &[0, 1, 2, 3, 4], &BoundaryCondition::empty())
            .unwrap();
        let z = sys.log_z();
        assert!(z.is_finite());
        for v in 0..5 {
            let m = sys.marginal(v).unwrap();
            assert!(m.is_finite() && (0.0..=1.0).contains(&m));
        }
    }

    #[test]
    fn edge_keyed_boundary_matches_vertex_keyed_when_consistent() {
        let instance = inst(4, vec![(0, 1), (1, 2), (2, 3)], vec![0.7, -1.1, 0.4], 1.0);
        let block = [1u32, 2];
        let vertex_b = BoundaryCondition::new([(0, 1i8), (3, -1)]).unwrap();
        // Edge 0 = (0,1), edge 2 = (2,3).
        let edge_b: BTreeMap<u32, i8> = [(0u32, 1i8), (2u32, -1i8)].into_iter().collect();
        let sys_v = BlockSystem::new(&instance, &block, &vertex_b).unwrap();
        let sys_e = BlockSystem::with_edge_spins(&instance, &block, &edge_b).unwrap();
        for &v in &block {
            assert_eq!(sys_v.marginal(v).unwrap(), sys_e.marginal(v).unwrap());
        }
        assert_eq!(sys_v.log_z(), sys_e.log_z());
    }
}
