//! Edge influences and the derived vertex/path weights.
//!
//! The influence of edge `e` with coupling `J` is
//! `Gamma_e = |1 - exp(beta*J)| / (1 + exp(beta*J)) = |tanh(beta*J/2)|`,
//! the worst-case total-variation effect a single-endpoint flip can have on
//! the other endpoint's conditional spin. Everything else in the construction
//! is bookkeeping over Gamma: per-vertex aggregates, the light/heavy vertex
//! weights, multiplicative path weights, and the block-vertex predicate
//! (every short path out of the vertex has weight < 1).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::partition::BlockPartition;
use crate::rng;

/// `|tanh(beta * J / 2)|`, evaluated in the numerically stable exponential
/// form. Requires `beta >= 0` and finite `J`.
pub fn edge_influence(beta: f64, j: f64) -> Result<f64> {
    if !j.is_finite() {
        return Err(Error::invalid(format!("non-finite coupling {j}")));
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!("beta must be finite and >= 0, got {beta}")));
    }
    Ok(gamma(beta, j))
}

/// Unchecked influence kernel: `(1 - e^(-beta|J|)) / (1 + e^(-beta|J|))`.
/// Equal to `|tanh(beta*J/2)|`; never overflows because the exponent is
/// non-positive.
#[inline]
pub(crate) fn gamma(beta: f64, j: f64) -> f64 {
    let t = (-beta * j.abs()).exp();
    (1.0 - t) / (1.0 + t)
}

/// Per-edge influences and per-vertex aggregates for one instance.
#[derive(Debug, Clone)]
pub struct InfluenceTable {
    /// `gamma[e]` for each edge id.
    pub gamma: Vec<f64>,
    /// `agg[v] = sum of gamma over edges incident to v`.
    pub agg: Vec<f64>,
    /// When computed against a partition: `agg_out[v] = sum of gamma over
    /// edges from v that leave v's block`. Zero exactly for internal vertices.
    pub agg_out: Option<Vec<f64>>,
}

/// Influences and aggregates; with a partition also the outward aggregates.
pub fn aggregate_influence(
    instance: &Instance,
    partition: Option<&BlockPartition>,
) -> Result<InfluenceTable> {
    let beta = instance.beta();
    let gamma_v: Vec<f64> = instance
        .couplings()
        .iter()
        .map(|&j| gamma(beta, j))
        .collect();
    let mut agg = vec![0.0; instance.n()];
    for (id, &(u, v)) in instance.graph.edges().iter().enumerate() {
        agg[u as usize] += gamma_v[id];
        agg[v as usize] += gamma_v[id];
    }
    let agg_out = match partition {
        None => None,
        Some(p) => {
            if p.n() != instance.n() {
                return Err(Error::structure(format!(
                    "partition covers {} vertices but instance has {}",
                    p.n(),
                    instance.n()
                )));
            }
            let mut out = vec![0.0; instance.n()];
            for (id, &(u, v)) in instance.graph.edges().iter().enumerate() {
                if p.block_of(u) != p.block_of(v) {
                    out[u as usize] += gamma_v[id];
                    out[v as usize] += gamma_v[id];
                }
            }
            Some(out)
        }
    };
    Ok(InfluenceTable {
        gamma: gamma_v,
        agg,
        agg_out,
    })
}

/// Thresholds and search radii of the block construction. The formula
/// defaults degenerate at desk scale (they are asymptotic in n and d), so
/// every radius is an explicit, overridable parameter and all reports record
/// the values actually used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    /// Slack parameter in (0, 1).
    pub epsilon: f64,
    /// Degree scale used by the heavy-vertex weight `d * agg`.
    pub d: f64,
    /// Max path length examined by the block-vertex predicate.
    pub block_range: u32,
    /// Cycles of length up to this count as short (>= 3).
    pub short_cycle_max_len: u32,
    /// Radius of the ball grown around each short cycle.
    pub cycle_buffer_radius: u32,
    /// Required distance between two short cycles (Condition 1).
    pub cycle_separation: u32,
    /// Barrier-free reach that fails Condition 3 around a heavy vertex.
    pub tree_reach: u32,
    /// Barrier-free reach that fails Condition 2 around a cycle ball.
    pub cycle_reach: u32,
}

impl WeightParams {
    /// Defaults from the asymptotic formulas at instance size `n`:
    /// `block_range = ceil(ln n)`, `short_cycle_max_len = floor(4 ln n /
    /// ln^4 d)` floored at 3, `cycle_buffer_radius = ceil(ln^5 d)`,
    /// `cycle_separation = ceil(2 ln n / ln^2 d)`, `tree_reach =
    /// ceil(4 ln n / sqrt(d))`, `cycle_reach = ceil(2 ln n / sqrt(d))`.
    /// Degenerate values (d close to 1 makes ln d vanish) saturate at n.
    pub fn from_formulas(epsilon: f64, d: f64, n: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::invalid(format!("epsilon must be in (0, 1), got {epsilon}")));
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::invalid(format!("d must be positive, got {d}")));
        }
        if n == 0 {
            return Err(Error::invalid("n must be positive"));
        }
        let ln_n = (n as f64).ln();
        let ln_d = d.ln();
        let sat = |x: f64| -> u32 {
            if x.is_finite() {
                x.min(n as f64) as u32
            } else {
                n as u32
            }
        };
        let params = WeightParams {
            epsilon,
            d,
            block_range: sat(ln_n.ceil()).max(1),
            short_cycle_max_len: sat((4.0 * ln_n / ln_d.powi(4)).floor()).max(3),
            cycle_buffer_radius: sat(ln_d.powi(5).ceil()).max(1),
            cycle_separation: sat((2.0 * ln_n / ln_d.powi(2)).ceil()).max(1),
            tree_reach: sat((4.0 * ln_n / d.sqrt()).ceil()).max(1),
            cycle_reach: sat((2.0 * ln_n / d.sqrt()).ceil()).max(1),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid(format!(
                "epsilon must be in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !(self.d > 0.0) || !self.d.is_finite() {
            return Err(Error::invalid(format!("d must be positive, got {}", self.d)));
        }
        if self.block_range < 1
            || self.cycle_buffer_radius < 1
            || self.cycle_separation < 1
            || self.tree_reach < 1
            || self.cycle_reach < 1
        {
            return Err(Error::invalid("all radii must be >= 1"));
        }
        if self.short_cycle_max_len < 3 {
            return Err(Error::invalid("short_cycle_max_len must be >= 3"));
        }
        Ok(())
    }

    /// Cap every search radius at `bound` (at least 1). Keeps desk-scale runs
    /// meaningful when the asymptotic formulas exceed the graph's diameter.
    pub fn capped_at(mut self, bound: u32) -> Self {
        let b = bound.max(1);
        self.block_range = self.block_range.min(b);
        self.cycle_buffer_radius = self.cycle_buffer_radius.min(b);
        self.cycle_separation = self.cycle_separation.min(b);
        self.tree_reach = self.tree_reach.min(b);
        self.cycle_reach = self.cycle_reach.min(b);
        self
    }

    /// Weight of a light vertex: `1 - epsilon/4`.
    pub fn light_weight(&self) -> f64 {
        1.0 - self.epsilon / 4.0
    }

    /// Aggregate influence above which a vertex is heavy: `1 - epsilon/2`.
    /// The threshold itself is light (inclusive).
    pub fn heavy_threshold(&self) -> f64 {
        1.0 - self.epsilon / 2.0
    }
}

/// `Lambda(u)`: `1 - epsilon/4` when `agg(u) <= 1 - epsilon/2`, else
/// `d * agg(u)`.
pub fn vertex_weight(agg_u: f64, params: &WeightParams) -> f64 {
    if agg_u <= params.heavy_threshold() {
        params.light_weight()
    } else {
        params.d * agg_u
    }
}

fn check_is_path(instance: &Instance, path: &[u32]) -> Result<()> {
    if path.is_empty() {
        return Err(Error::invalid("empty path"));
    }
    for &v in path {
        if v as usize >= instance.n() {
            return Err(Error::structure(format!("path vertex {v} out of range")));
        }
    }
    for w in path.windows(2) {
        if instance.graph.edge_between(w[0], w[1]).is_none() {
            return Err(Error::structure(format!(
                "path step ({}, {}) is not an edge",
                w[0], w[1]
            )));
        }
    }
    let mut sorted: Vec<u32> = path.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::structure("path repeats a vertex"));
    }
    Ok(())
}

/// Log of the multiplicative path weight `M(P) = prod_i Lambda(w_i)`, both
/// endpoints included. Returned in log space so long heavy paths cannot
/// overflow.
pub fn path_log_weight(
    instance: &Instance,
    table: &InfluenceTable,
    params: &WeightParams,
    path: &[u32],
) -> Result<f64> {
    check_is_path(instance, path)?;
    Ok(path
        .iter()
        .map(|&v| vertex_weight(table.agg[v as usize], params).ln())
        .sum())
}

/// Comparison weight `Upsilon(P) = beta * sum |J_e| + sum ln deg(v)`: the
/// edge sum ranges over edges with at least one endpoint on the path, each
/// counted once; the vertex sum ranges over path vertices, with degree 0 and
/// 1 both contributing 0.
pub fn comparison_weight(instance: &Instance, path: &[u32]) -> Result<f64> {
    check_is_path(instance, path)?;
    let mut edge_seen = std::collections::HashSet::new();
    let mut edge_sum = 0.0;
    let mut deg_sum = 0.0;
    for &v in path {
        for &(_, eid) in instance.graph.neighbors(v) {
            if edge_seen.insert(eid) {
                edge_sum += instance.coupling(eid).abs();
            }
        }
        let deg = instance.graph.degree(v);
        if deg > 1 {
            deg_sum += (deg as f64).ln();
        }
    }
    Ok(instance.beta() * edge_sum + deg_sum)
}

/// Precomputed state for block-vertex queries on one instance.
///
/// A vertex `u` is a block vertex when every simple path of length at most
/// `block_range` starting at `u` has weight `M(P) < 1`. The query runs a DFS
/// over simple paths with an admissible branch-and-bound prune: `ext[r][v]`
/// is the best log-weight gain any walk of length `<= r` out of `v` can
/// collect, an upper bound on what any simple-path extension can gain, so a
/// branch dies once `current + ext[remaining][tip] < 0`. Walks dominate
/// simple paths, hence pruned and exhaustive searches always agree.
pub struct BlockVertexAnalysis<'a> {
    instance: &'a Instance,
    /// ln Lambda(v) per vertex.
    log_weight: Vec<f64>,
    /// `ext[r][v]`, rows 0..=effective_range.
    ext: Vec<Vec<f64>>,
    effective_range: u32,
}

impl<'a> BlockVertexAnalysis<'a> {
    pub fn new(
        instance: &'a Instance,
        table: &InfluenceTable,
        params: &WeightParams,
    ) -> Result<Self> {
        params.validate()?;
        if table.agg.len() != instance.n() {
            return Err(Error::structure(
                "influence table does not match instance",
            ));
        }
        let n = instance.n();
        let log_weight: Vec<f64> = table
            .agg
            .iter()
            .map(|&a| vertex_weight(a, params).ln())
            .collect();
        // No simple path has more than n - 1 edges.
        let effective_range = params.block_range.min(n.saturating_sub(1) as u32);
        let mut ext: Vec<Vec<f64>> = Vec::with_capacity(effective_range as usize + 1);
        ext.push(vec![0.0; n]);
        for r in 1..=effective_range as usize {
            let prev = &ext[r - 1];
            let row: Vec<f64> = (0..n as u32)
                .map(|v| {
                    let mut best = 0.0f64;
                    for &(w, _) in instance.graph.neighbors(v) {
                        let cand = log_weight[w as usize] + prev[w as usize];
                        if cand > best {
                            best = cand;
                        }
                    }
                    best
                })
                .collect();
            let stable = row == *prev;
            ext.push(row);
            if stable {
                // Fixed point: all further rows are identical.
                break;
            }
        }
        Ok(BlockVertexAnalysis {
            instance,
            log_weight,
            ext,
            effective_range,
        })
    }

    fn ext_bound(&self, v: u32, remaining: u32) -> f64 {
        let r = (remaining as usize).min(self.ext.len() - 1);
        self.ext[r][v as usize]
    }

    /// `(is_block_vertex, witness)`: the witness is a simple path of length
    /// `<= block_range` from `u` with weight `>= 1`, present exactly when the
    /// answer is false.
    pub fn query(&self, u: u32) -> (bool, Option<Vec<u32>>) {
        let n = self.instance.n();
        assert!((u as usize) < n, "vertex {u} out of range");
        let start_log = self.log_weight[u as usize];
        if start_log + self.ext_bound(u, self.effective_range) < 0.0 {
            return (true, None);
        }
        let mut on_path = vec![false; n];
        let mut path = vec![u];
        on_path[u as usize] = true;
        if self.dfs(&mut path, &mut on_path, start_log) {
            return (false, Some(path));
        }
        (true, None)
    }

    fn dfs(&self, path: &mut Vec<u32>, on_path: &mut [bool], current: f64) -> bool {
        if current >= 0.0 {
            return true;
        }
        let tip = *path.last().unwrap();
        let remaining = self.effective_range - (path.len() as u32 - 1);
        if remaining == 0 {
            return false;
        }
        // Most promising branches first: maximizes the chance of finding a
        // witness before exhausting the subtree. Order does not affect the
        // boolean answer.
        let mut children: Vec<(f64, u32)> = self
            .instance
            .graph
            .neighbors(tip)
            .iter()
            .filter(|&&(w, _)| !on_path[w as usize])
            .map(|&(w, _)| {
                let gain = self.log_weight[w as usize] + self.ext_bound(w, remaining - 1);
                (gain, w)
            })
            .collect();
        children.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for (gain, w) in children {
            if current + gain < 0.0 {
                break; // sorted: every later branch is bounded lower
            }
            path.push(w);
            on_path[w as usize] = true;
            let found = self.dfs(path, on_path, current + self.log_weight[w as usize]);
            if found {
                return true;
            }
            on_path[w as usize] = false;
            path.pop();
        }
        false
    }

    /// Block-vertex flags for every vertex, computed independently per vertex
    /// (parallel, deterministic).
    pub fn all(&self) -> Vec<bool>
    where
        Self: Sync,
    {
        (0..self.instance.n() as u32)
            .into_par_iter()
            .map(|v| self.query(v).0)
            .collect()
    }
}

/// One-off block-vertex query; builds the analysis each call.
pub fn is_block_vertex(
    instance: &Instance,
    table: &InfluenceTable,
    params: &WeightParams,
    u: u32,
) -> Result<(bool, Option<Vec<u32>>)> {
    Ok(BlockVertexAnalysis::new(instance, table, params)?.query(u))
}

/// Exhaustive reference implementation: enumerates every simple path of
/// length `<= block_range` with no pruning. Exponential; use only on tiny
/// graphs to validate the pruned search.
pub fn is_block_vertex_exhaustive(
    instance: &Instance,
    table: &InfluenceTable,
    params: &WeightParams,
    u: u32,
) -> Result<(bool, Option<Vec<u32>>)> {
    params.validate()?;
    let n = instance.n();
    if u as usize >= n {
        return Err(Error::structure(format!("vertex {u} out of range")));
    }
    let log_weight: Vec<f64> = table
        .agg
        .iter()
        .map(|&a| vertex_weight(a, params).ln())
        .collect();
    let range = params.block_range.min(n.saturating_sub(1) as u32);
    fn rec(
        instance: &Instance,
        log_weight: &[f64],
        range: u32,
        path: &mut Vec<u32>,
        on_path: &mut [bool],
        current: f64,
    ) -> bool {
        if current >= 0.0 {
            return true;
        }
        if path.len() as u32 - 1 >= range {
            return false;
        }
        let tip = *path.last().unwrap();
        for &(w, _) in instance.graph.neighbors(tip) {
            if on_path[w as usize] {
                continue;
            }
            path.push(w);
            on_path[w as usize] = true;
            if rec(
                instance,
                log_weight,
                range,
                path,
                on_path,
                current + log_weight[w as usize],
            ) {
                return true;
            }
            on_path[w as usize] = false;
            path.pop();
        }
        false
    }
    let mut path = vec![u];
    let mut on_path = vec![false; n];
    on_path[u as usize] = true;
    if rec(
        instance,
        &log_weight,
        range,
        &mut path,
        &mut on_path,
        log_weight[u as usize],
    ) {
        Ok((false, Some(path)))
    } else {
        Ok((true, None))
    }
}

/// Result of the short-path comparison-weight check: every simple path of
/// length `<= floor(ln n / ln^4 d)` must satisfy
/// `Upsilon(P) <= ln n / ln^2 d`.
#[derive(Debug, Clone, Serialize)]
pub struct UpsilonReport {
    pub max_len: u32,
    pub threshold: f64,
    /// A violating path and its Upsilon value, when one exists.
    pub witness: Option<(Vec<u32>, f64)>,
}

impl UpsilonReport {
    pub fn pass(&self) -> bool {
        self.witness.is_none()
    }
}

/// Check the short-path comparison-weight property by DFS over simple paths.
/// Upsilon is monotone under path extension, so search stops at the first
/// violating prefix; paths are enumerated once (canonical direction).
pub fn check_upsilon_property(instance: &Instance, params: &WeightParams) -> Result<UpsilonReport> {
    params.validate()?;
    let n = instance.n() as f64;
    let ln_d = params.d.ln();
    let max_len_f = if ln_d > 0.0 {
        (n.ln() / ln_d.powi(4)).floor()
    } else {
        f64::INFINITY
    };
    let max_len = if max_len_f.is_finite() {
        (max_len_f.max(0.0) as u32).min(instance.n().saturating_sub(1) as u32)
    } else {
        instance.n().saturating_sub(1) as u32
    };
    let threshold = if ln_d > 0.0 {
        n.ln() / ln_d.powi(2)
    } else {
        f64::INFINITY
    };

    struct Search<'a> {
        instance: &'a Instance,
        threshold: f64,
        max_len: u32,
    }
    impl<'a> Search<'a> {
        fn upsilon(&self, path: &[u32]) -> f64 {
            comparison_weight(self.instance, path).expect("enumerated path is valid")
        }
        fn dfs(&self, path: &mut Vec<u32>, on_path: &mut [bool]) -> Option<(Vec<u32>, f64)> {
            let v = self.upsilon(path);
            if v > self.threshold {
                return Some((path.clone(), v));
            }
            if path.len() as u32 - 1 >= self.max_len {
                return None;
            }
            let tip = *path.last().unwrap();
            for &(w, _) in self.instance.graph.neighbors(tip) {
                if on_path[w as usize] {
                    continue;
                }
                path.push(w);
                on_path[w as usize] = true;
                let hit = self.dfs(path, on_path);
                on_path[w as usize] = false;
                path.pop();
                if hit.is_some() {
                    return hit;
                }
            }
            None
        }
    }
    let search = Search {
        instance,
        threshold,
        max_len,
    };
    let mut witness = None;
    let mut on_path = vec![false; instance.n()];
    for u in 0..instance.n() as u32 {
        let mut path = vec![u];
        on_path[u as usize] = true;
        witness = search.dfs(&mut path, &mut on_path);
        on_path[u as usize] = false;
        if witness.is_some() {
            break;
        }
    }
    Ok(UpsilonReport {
        max_len,
        threshold,
        witness,
    })
}

/// Monte Carlo estimate of the mean edge influence `E[Gamma]` under standard
/// normal couplings.
#[derive(Debug, Clone, Serialize)]
pub struct InfluenceEstimate {
    pub beta: f64,
    pub d: f64,
    pub trials: u64,
    /// Estimate of `E[|tanh(beta*J/2)|]`.
    pub estimate: f64,
    pub std_error: f64,
    /// `d * estimate`, the quantity compared against 1.
    pub d_times_estimate: f64,
    /// True when `d * (estimate + 3 * std_error) < 1`: the uniqueness-style
    /// contraction condition holds with three-standard-error room.
    pub uniqueness_flag: bool,
}

/// Estimate `E[Gamma]` from `trials` standard normal draws. Work is split
/// into fixed-size chunks, one RNG stream per chunk, so the result does not
/// depend on the number of worker threads.
pub fn expected_influence_mc(
    beta: f64,
    d: f64,
    trials: u64,
    seed: u64,
) -> Result<InfluenceEstimate> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!("beta must be finite and >= 0, got {beta}")));
    }
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::invalid(format!("d must be positive, got {d}")));
    }
    const CHUNK: u64 = 1 << 16;
    let chunks = trials.div_ceil(CHUNK);
    let (sum, sum_sq) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            use rand::Rng;
            let mut rng = rng::stream(seed, rng::PURPOSE_MC, c);
            let count = CHUNK.min(trials - c * CHUNK);
            let mut s = 0.0;
            let mut s2 = 0.0;
            for _ in 0..count {
                let j: f64 = rng.sample(rand_distr::StandardNormal);
                let g = gamma(beta, j);
                s += g;
                s2 += g * g;
            }
            (s, s2)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let t = trials as f64;
    let mean = sum / t;
    let var = (sum_sq / t - mean * mean).max(0.0);
    let se = (var / t).sqrt();
    Ok(InfluenceEstimate {
        beta,
        d,
        trials,
        estimate: mean,
        std_error: se,
        d_times_estimate: d * mean,
        uniqueness_flag: d * (mean + 3.0 * se) < 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{gen, Graph};

    fn inst_from_edges(n: usize, edges: Vec<(u32, u32)>, js: Vec<f64>, beta: f64) -> Instance {
        let g = Graph::from_edges(n, edges).unwrap();
        Instance::new(g, js, beta).unwrap()
    }

    #[test]
    fn influence_basics() {
        assert_eq!(edge_influence(1.0, 0.0).unwrap(), 0.0);
        let e = std::f64::consts::E;
        let expected = (e - 1.0) / (e + 1.0);
        assert!((edge_influence(1.0, 1.0).unwrap() - expected).abs() < 1e-15);
        assert!((edge_influence(1.0, 1e6).unwrap() - 1.0).abs() < 1e-12);
        // Symmetric in the coupling sign.
        for j in [0.1, 1.0, 3.7] {
            assert_eq!(
                edge_influence(0.8, j).unwrap(),
                edge_influence(0.8, -j).unwrap()
            );
        }
        assert!(edge_influence(1.0, f64::NAN).is_err());
        assert!(edge_influence(-1.0, 0.5).is_err());
    }

    #[test]
    fn ratio_form_matches_tanh_form() {
        for i in 0..1000 {
            let x = i as f64 * 0.7; // beta * J from 0 to 700
            let direct = ((1.0 - x.exp()).abs()) / (1.0 + x.exp());
            let ours = gamma(1.0, x);
            let tanh_form = (x / 2.0).tanh().abs();
            if direct.is_finite() {
                assert!(
                    (ours - direct).abs() <= 1e-12 * direct.max(1e-300),
                    "x = {x}"
                );
            }
            assert!((ours - tanh_form).abs() <= 1e-12 * tanh_form.max(1e-300));
        }
    }

    #[test]
    fn aggregate_on_a_star() {
        // Star center 0 with leaves 1, 2, 3.
        let inst = inst_from_edges(
            4,
            vec![(0, 1), (0, 2), (0, 3)],
            vec![1.0, -2.0, 0.5],
            0.9,
        );
        let t = aggregate_influence(&inst, None).unwrap();
        let expect: f64 = [1.0f64, 2.0, 0.5]
            .iter()
            .map(|j| (0.9 * j / 2.0).tanh())
            .sum();
        assert!((t.agg[0] - expect).abs() < 1e-12 * 3.0);
        assert!((t.agg[1] - (0.9f64 / 2.0).tanh()).abs() < 1e-14);
        assert!(t.agg_out.is_none());
    }

    #[test]
    fn aggregate_recomputation_matches_sum() {
        let inst = gen(120, 4.0, 0.6, 5).unwrap();
        let t = aggregate_influence(&inst, None).unwrap();
        for v in 0..inst.n() as u32 {
            let direct: f64 = inst
                .graph
                .neighbors(v)
                .iter()
                .map(|&(_, e)| t.gamma[e as usize])
                .sum();
            let deg = inst.graph.degree(v) as f64;
            assert!((t.agg[v as usize] - direct).abs() <= 1e-12 * deg.max(1.0));
        }
    }

    #[test]
    fn weight_branches_and_threshold_inclusivity() {
        let p = WeightParams::from_formulas(0.4, 10.0, 100).unwrap();
        let thresh = p.heavy_threshold(); // 0.8
        assert!((vertex_weight(thresh, &p) - p.light_weight()).abs() < 1e-15);
        assert!((vertex_weight(0.1, &p) - 0.9).abs() < 1e-15);
        let above = thresh + 1e-9;
        assert!((vertex_weight(above, &p) - 10.0 * above).abs() < 1e-12);
    }

    #[test]
    fn path_weight_is_product_of_vertex_weights() {
        // Path 0-1-2 with gamma = tanh(1) per edge: the endpoints stay
        // under the heavy threshold 0.9 while the middle vertex, seeing
        // two edges, lands above it.
        let inst = inst_from_edges(3, vec![(0, 1), (1, 2)], vec![1.0, 1.0], 2.0);
        let p = WeightParams::from_formulas(0.2, 10.0, 3).unwrap();
        let t = aggregate_influence(&inst, None).unwrap();
        assert!(t.agg[0] < p.heavy_threshold());
        assert!(t.agg[1] > p.heavy_threshold());
        let lw = path_log_weight(&inst, &t, &p, &[0, 1, 2]).unwrap();
        let expect =
            (0.95f64).ln() + (10.0 * t.agg[1]).ln() + (0.95f64).ln();
        assert!((lw - expect).abs() < 1e-12);
        // Concatenation adds in log space.
        let a = path_log_weight(&inst, &t, &p, &[0, 1]).unwrap();
        let b = path_log_weight(&inst, &t, &p, &[2]).unwrap();
        assert!((lw - (a + b)).abs() < 1e-12);
        // Non-paths are rejected.
        assert!(path_log_weight(&inst, &t, &p, &[0, 2]).is_err());
        assert!(path_log_weight(&inst, &t, &p, &[0, 1, 0]).is_err());
        assert!(path_log_weight(&inst, &t, &p, &[]).is_err());
    }

    #[test]
    fn comparison_weight_counts_boundary_edges_once() {
        // Path graph 0-1-2-3; Upsilon of sub-path [1, 2] must count all three
        // edges (two incident plus the one inside) exactly once.
        let inst = inst_from_edges(4, vec![(0, 1), (1, 2), (2, 3)], vec![1.0, 2.0, 3.0], 0.5);
        let u = comparison_weight(&inst, &[1, 2]).unwrap();
        let expect = 0.5 * (1.0 + 2.0 + 3.0) + (2.0f64).ln() + (2.0f64).ln();
        assert!((u - expect).abs() < 1e-12);
        // Degree-1 and degree-0 vertices contribute no log-degree term.
        let single = comparison_weight(&inst, &[0]).unwrap();
        assert!((single - 0.5 * 1.0).abs() < 1e-15);
        let iso = inst_from_edges(2, vec![], vec![], 1.0);
        assert_eq!(comparison_weight(&iso, &[0]).unwrap(), 0.0);
    }

    #[test]
    fn block_vertex_trivial_cases() {
        let p = WeightParams::from_formulas(0.4, 10.0, 4).unwrap();
        // Isolated vertices: weight 0.9 < 1, only the trivial path.
        let iso = inst_from_edges(1, vec![], vec![], 1.0);
        let t = aggregate_influence(&iso, None).unwrap();
        let (is_bv, w) = is_block_vertex(&iso, &t, &p, 0).unwrap();
        assert!(is_bv);
        assert!(w.is_none());
        // A vertex with weight >= 1 witnesses itself.
        let heavy = inst_from_edges(2, vec![(0, 1)], vec![50.0], 2.0);
        let th = aggregate_influence(&heavy, None).unwrap();
        assert!(th.agg[0] > p.heavy_threshold());
        let (is_bv, w) = is_block_vertex(&heavy, &th, &p, 0).unwrap();
        assert!(!is_bv);
        assert_eq!(w.unwrap(), vec![0]);
    }

    #[test]
    fn block_vertex_witness_through_neighbor() {
        // 0 light, 1 heavy: path (0, 1) has weight 0.9 * (d * agg(1)) >= 1.
        let inst = inst_from_edges(3, vec![(0, 1), (1, 2)], vec![9.0, 9.0], 2.0);
        let p = WeightParams::from_formulas(0.4, 10.0, 3).unwrap();
        let t = aggregate_influence(&inst, None).unwrap();
        let (is_bv, w) = is_block_vertex(&inst, &t, &p, 0).unwrap();
        assert!(!is_bv);
        let w = w.unwrap();
        let lw = path_log_weight(&inst, &t, &p, &w).unwrap();
        assert!(lw >= 0.0);
        assert_eq!(w[0], 0);
    }

    #[test]
    fn pruned_matches_exhaustive_on_small_graphs() {
        use rand::Rng;
        let mut rng = crate::rng::purpose_stream(99, crate::rng::PURPOSE_TEST);
        for trial in 0..60 {
            let n = rng.gen_range(2..=12);
            let d = rng.gen_range(0.5..4.0);
            let beta = rng.gen_range(0.1..2.5);
            let inst = gen(n, d, beta, trial).unwrap();
            let eps = rng.gen_range(0.05..0.95);
            let mut p = WeightParams::from_formulas(eps, rng.gen_range(1.5..20.0), n).unwrap();
            p.block_range = rng.gen_range(1..=6);
            let t = aggregate_influence(&inst, None).unwrap();
            let analysis = BlockVertexAnalysis::new(&inst, &t, &p).unwrap();
            for v in 0..n as u32 {
                let (fast, fw) = analysis.query(v);
                let (slow, _) = is_block_vertex_exhaustive(&inst, &t, &p, v).unwrap();
                assert_eq!(fast, slow, "trial {trial} vertex {v}");
                if let Some(w) = fw {
                    let lw = path_log_weight(&inst, &t, &p, &w).unwrap();
                    assert!(lw >= 0.0, "witness must have weight >= 1");
                    assert!(w.len() as u32 - 1 <= p.block_range);
                    assert_eq!(w[0], v);
                }
            }
        }
    }

    #[test]
    fn upsilon_property_reports_witness_or_pass() {
        // Single light edge with d large: max_len = 0, only single-vertex
        // paths, and degree-1 endpoints contribute no degree term.
        let inst = inst_from_edges(2, vec![(0, 1)], vec![0.1], 0.2);
        let p = WeightParams::from_formulas(0.4, 50.0, 3).unwrap();
        let rep = check_upsilon_property(&inst, &p).unwrap();
        assert_eq!(rep.max_len, 0);
        assert!(rep.pass(), "tiny couplings clear the threshold");
        // Huge coupling fails already at a single vertex.
        let bad = inst_from_edges(3, vec![(0, 1), (1, 2)], vec![500.0, 0.1], 1.0);
        let rep = check_upsilon_property(&bad, &p).unwrap();
        assert!(!rep.pass());
        let (path, v) = rep.witness.unwrap();
        assert!(v > rep.threshold);
        assert!(path.len() as u32 - 1 <= rep.max_len);
        let recomputed = comparison_weight(&bad, &path).unwrap();
        assert!((recomputed - v).abs() < 1e-12);
    }

    #[test]
    fn expected_influence_zero_beta() {
        let est = expected_influence_mc(0.0, 5.0, 1000, 3).unwrap();
        assert_eq!(est.estimate, 0.0);
        assert!(est.uniqueness_flag);
        assert!(expected_influence_mc(1.0, 5.0, 0, 3).is_err());
    }

    #[test]
    fn expected_influence_near_critical() {
        // At beta_c(d), d * E[Gamma] sits just below 1.
        let d = 10.0;
        let est =
            expected_influence_mc(crate::instance::beta_c(d), d, 200_000, 12).unwrap();
        assert!(est.d_times_estimate > 0.95 && est.d_times_estimate < 1.01);
        // Comfortably inside the uniqueness region at epsilon = 0.2.
        let est2 = expected_influence_mc(
            0.8 * crate::instance::beta_c(d),
            d,
            200_000,
            12,
        )
        .unwrap();
        assert!(est2.uniqueness_flag);
        assert!(est2.d_times_estimate < 0.85);
    }

    #[test]
    fn params_validation_and_caps() {
        assert!(WeightParams::from_formulas(0.0, 5.0, 10).is_err());
        assert!(WeightParams::from_formulas(1.0, 5.0, 10).is_err());
        assert!(WeightParams::from_formulas(0.5, 0.0, 10).is_err());
        let p = WeightParams::from_formulas(0.5, 16.0, 20000).unwrap();
        assert_eq!(p.block_range, 10);
        assert_eq!(p.short_cycle_max_len, 3); // floor(4 ln n / ln^4 d) = 0 -> 3
        let capped = p.clone().capped_at(6);
        assert_eq!(capped.block_range, 6);
        assert!(capped.cycle_buffer_radius <= 6);
        // d near 1 saturates instead of overflowing.
        let degenerate = WeightParams::from_formulas(0.5, 1.0, 50).unwrap();
        assert!(degenerate.cycle_separation <= 50);
        degenerate.validate().unwrap();
    }
}
