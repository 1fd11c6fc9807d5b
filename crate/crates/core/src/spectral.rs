//! Dense spectral diagnostics for the small chains where exact linear algebra
//! is feasible: transition matrices of the single-site and block dynamics
//! (optionally restricted to a vertex set with a frozen outside boundary),
//! relaxation times through the symmetrized spectrum, exact worst-start
//! mixing times, and checks of the comparison and tree/star relaxation
//! bounds against the exact values.
//!
//! State `i` of a chain over `members` assigns `members[k]` spin `+1` exactly
//! when bit `k` of `i` is set, matching the bit layout of
//! [`SpinConfig::to_bits`](crate::gibbs::SpinConfig::to_bits) when the chain
//! covers the whole graph.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gibbs::{sigmoid, BoundaryCondition};
use crate::influence::{comparison_weight, InfluenceTable, WeightParams};
use crate::instance::Instance;
use crate::partition::BlockPartition;

/// Hard ceiling on chain size: at most this many chain vertices, so at most
/// `2^MATRIX_VERTEX_CAP` states. Dense storage near the cap needs gigabytes;
/// the experiments stay far below it.
pub const MATRIX_VERTEX_CAP: usize = 14;

/// Exact mixing times multiply dense matrices, so they get a tighter cap.
pub const MIXING_STATE_CAP: usize = 1 << 12;

/// A dense transition matrix together with its exact stationary law.
#[derive(Clone, Debug)]
pub struct TransitionMatrix {
    members: Vec<u32>,
    p: DMatrix<f64>,
    pi: Vec<f64>,
}

/// Which chain to build a matrix for.
#[derive(Clone, Copy, Debug)]
pub enum ChainKind<'a> {
    /// Single-site heat bath on the whole graph.
    Glauber,
    /// Block dynamics of a partition on the whole graph.
    Block(&'a BlockPartition),
    /// Single-site heat bath on `members` with the outside frozen to
    /// `boundary` (every outside neighbor of `members` needs a spin there).
    RestrictedGlauber {
        members: &'a [u32],
        boundary: &'a BoundaryCondition,
    },
    /// Block dynamics over `blocks` (a disjoint cover of `members`) with the
    /// outside frozen to `boundary`.
    RestrictedBlocks {
        members: &'a [u32],
        blocks: &'a [Vec<u32>],
        boundary: &'a BoundaryCondition,
    },
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Per-chain-vertex interaction data, precomputed once.
struct SiteData {
    /// (other chain bit, coupling) for neighbors inside the chain.
    inside: Vec<(usize, f64)>,
    /// Coupling mass toward frozen spins, by frozen sign: `[minus, plus]`.
    frozen: [f64; 2],
}

fn frozen_bit(s: i8) -> usize {
    usize::from(s == 1)
}

/// Build the dense transition matrix of the requested chain. Rows are exact
/// conditional resampling probabilities; the stationary law is computed by
/// direct summation over the state space. Errors if the chain has more than
/// `MATRIX_VERTEX_CAP` vertices, if a needed boundary spin is missing, or if
/// the blocks do not partition the members.
pub fn transition_matrix(instance: &Instance, kind: ChainKind) -> Result<TransitionMatrix> {
    let n = instance.n();
    let empty = BoundaryCondition::empty();
    let all: Vec<u32> = (0..n as u32).collect();
    let (members, blocks, frozen): (Vec<u32>, Vec<Vec<u32>>, &BoundaryCondition) = match kind {
        ChainKind::Glauber => (all.clone(), all.iter().map(|&v| vec![v]).collect(), &empty),
        ChainKind::Block(p) => {
            if p.n() != n {
                return Err(Error::structure(
                    "partition and instance sizes disagree",
                ));
            }
            (
                all,
                p.blocks().iter().map(|b| b.vertices.clone()).collect(),
                &empty,
            )
        }
        ChainKind::RestrictedGlauber { members, boundary } => (
            members.to_vec(),
            members.iter().map(|&v| vec![v]).collect(),
            boundary,
        ),
        ChainKind::RestrictedBlocks {
            members,
            blocks,
            boundary,
        } => (members.to_vec(), blocks.to_vec(), boundary),
    };

    let mut members = members;
    members.sort_unstable();
    members.dedup();
    if members.is_empty() {
        return Err(Error::invalid("chain needs at least one vertex"));
    }
    if *members.last().unwrap() as usize >= n {
        return Err(Error::structure("chain vertex out of range"));
    }
    if members.len() > MATRIX_VERTEX_CAP {
        return Err(Error::cap(format!(
            "dense chain needs at most {MATRIX_VERTEX_CAP} vertices, got {}",
            members.len()
        )));
    }
    let bit_of: BTreeMap<u32, usize> = members
        .iter()
        .enumerate()
        .map(|(k, &v)| (v, k))
        .collect();
    for &v in &members {
        if frozen.contains(v) {
            return Err(Error::invalid(format!(
                "boundary condition overlaps chain vertex {v}"
            )));
        }
    }

    // Validate the block structure: disjoint cover of the members.
    let mut covered = vec![false; members.len()];
    for block in &blocks {
        if block.is_empty() {
            return Err(Error::invalid("empty block in chain"));
        }
        for &v in block {
            match bit_of.get(&v) {
                None => {
                    return Err(Error::structure(format!(
                        "block vertex {v} is not a chain vertex"
                    )))
                }
                Some(&k) => {
                    if covered[k] {
                        return Err(Error::structure(format!(
                            "chain vertex {v} appears in two blocks"
                        )));
                    }
                    covered[k] = true;
                }
            }
        }
    }
    if !covered.iter().all(|&c| c) {
        return Err(Error::structure(
            "blocks do not cover every chain vertex",
        ));
    }

    let beta = instance.beta();
    let mut sites: Vec<SiteData> = Vec::with_capacity(members.len());
    for &v in &members {
        let mut inside = Vec::new();
        let mut fr = [0.0f64; 2];
        for &(w, e) in instance.graph.neighbors(v) {
            let j = instance.coupling(e);
            match bit_of.get(&w) {
                Some(&k) => inside.push((k, j)),
                None => match frozen.spin(w) {
                    Some(s) => fr[frozen_bit(s)] += j,
                    None => {
                        return Err(Error::invalid(format!(
                            "missing boundary spin at vertex {w}, a neighbor of chain vertex {v}"
                        )))
                    }
                },
            }
        }
        sites.push(SiteData { inside, frozen: fr });
    }

    let states = 1usize << members.len();
    let spin_at = |state: usize, k: usize| -> i8 {
        if state >> k & 1 == 1 {
            1
        } else {
            -1
        }
    };

    // Stationary law by direct summation: edges with both ends in the chain
    // count once, edges to frozen spins count when they agree, anything else
    // is a constant factor that normalization removes.
    let mut log_w = vec![0.0f64; states];
    for (state, lw) in log_w.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, site) in sites.iter().enumerate() {
            let s = spin_at(state, k);
            for &(k2, j) in &site.inside {
                if k2 > k && spin_at(state, k2) == s {
                    acc += j;
                }
            }
            acc += site.frozen[frozen_bit(s)];
        }
        *lw = beta * acc;
    }
    let log_z = log_sum_exp(&log_w);
    let pi: Vec<f64> = log_w.iter().map(|&lw| (lw - log_z).exp()).collect();

    // Conditional plus-probability of chain vertex k given the rest of the
    // state; the heat-bath row of a singleton block.
    let site_plus = |state: usize, k: usize| -> f64 {
        let site = &sites[k];
        let mut plus = site.frozen[1];
        let mut minus = site.frozen[0];
        for &(k2, j) in &site.inside {
            if spin_at(state, k2) == 1 {
                plus += j;
            } else {
                minus += j;
            }
        }
        sigmoid(beta * (plus - minus))
    };

    // Multi-vertex blocks: local bit layout, internal edges, edges to other
    // chain vertices, frozen field. Conditional tables are cached by the
    // state of the block's outside-chain neighbors.
    struct BlockData {
        bits: Vec<usize>,
        inside_edges: Vec<(usize, usize, f64)>,
        cross: Vec<(usize, usize, f64)>,
        frozen: Vec<[f64; 2]>,
        deps: Vec<usize>,
    }
    let block_data: Vec<Option<BlockData>> = blocks
        .iter()
        .map(|block| {
            if block.len() == 1 {
                return None;
            }
            let bits: Vec<usize> = block.iter().map(|v| bit_of[v]).collect();
            let local: BTreeMap<usize, usize> =
                bits.iter().enumerate().map(|(l, &k)| (k, l)).collect();
            let mut inside_edges = Vec::new();
            let mut cross = Vec::new();
            let mut fr = vec![[0.0f64; 2]; bits.len()];
            let mut deps = BTreeSet::new();
            for (l, &k) in bits.iter().enumerate() {
                for &(k2, j) in &sites[k].inside {
                    match local.get(&k2) {
                        Some(&l2) => {
                            if l2 > l {
                                inside_edges.push((l, l2, j));
                            }
                        }
                        None => {
                            cross.push((l, k2, j));
                            deps.insert(k2);
                        }
                    }
                }
                fr[l] = sites[k].frozen;
            }
            Some(BlockData {
                bits,
                inside_edges,
                cross,
                frozen: fr,
                deps: deps.into_iter().collect(),
            })
        })
        .collect();

    let mut cache: HashMap<(usize, u64), Vec<f64>> = HashMap::new();
    let mut p = DMatrix::<f64>::zeros(states, states);
    let pick = 1.0 / blocks.len() as f64;
    for state in 0..states {
        for (bi, block) in blocks.iter().enumerate() {
            match &block_data[bi] {
                None => {
                    let k = bit_of[&block[0]];
                    let plus = site_plus(state, k);
                    p[(state, state | 1 << k)] += pick * plus;
                    p[(state, state & !(1 << k))] += pick * (1.0 - plus);
                }
                Some(data) => {
                    let key: u64 = data
                        .deps
                        .iter()
                        .enumerate()
                        .map(|(i, &k)| ((state >> k & 1) as u64) << i)
                        .sum();
                    let probs = cache.entry((bi, key)).or_insert_with(|| {
                        let sub_states = 1usize << data.bits.len();
                        let mut lw = vec![0.0f64; sub_states];
                        for (sub, w) in lw.iter_mut().enumerate() {
                            let mut acc = 0.0;
                            for &(a, b, j) in &data.inside_edges {
                                if sub >> a & 1 == sub >> b & 1 {
                                    acc += j;
                                }
                            }
                            for &(a, k2, j) in &data.cross {
                                if sub >> a & 1 == state >> k2 & 1 {
                                    acc += j;
                                }
                            }
                            for (a, f) in data.frozen.iter().enumerate() {
                                acc += f[sub >> a & 1];
                            }
                            *w = beta * acc;
                        }
                        let z = log_sum_exp(&lw);
                        lw.iter().map(|&w| (w - z).exp()).collect()
                    });
                    let mut cleared = state;
                    for &k in &data.bits {
                        cleared &= !(1 << k);
                    }
                    for (sub, &prob) in probs.iter().enumerate() {
                        let mut target = cleared;
                        for (a, &k) in data.bits.iter().enumerate() {
                            target |= (sub >> a & 1) << k;
                        }
                        p[(state, target)] += pick * prob;
                    }
                }
            }
        }
    }

    for i in 0..states {
        let sum: f64 = p.row(i).iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::structure(format!(
                "transition row {i} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(TransitionMatrix { members, p, pi })
}

impl TransitionMatrix {
    /// Wrap an externally built chain; validates dimensions, row sums, and
    /// normalization of the stationary vector.
    pub fn from_parts(members: Vec<u32>, p: DMatrix<f64>, pi: Vec<f64>) -> Result<Self> {
        let states = 1usize
            .checked_shl(members.len() as u32)
            .ok_or_else(|| Error::invalid("too many chain vertices"))?;
        if members.len() > MATRIX_VERTEX_CAP {
            return Err(Error::cap(format!(
                "dense chain needs at most {MATRIX_VERTEX_CAP} vertices"
            )));
        }
        if p.nrows() != states || p.ncols() != states || pi.len() != states {
            return Err(Error::structure("matrix dimensions disagree"));
        }
        if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || pi.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::structure("probabilities out of range"));
        }
        for i in 0..states {
            let sum: f64 = p.row(i).iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::structure(format!("row {i} sums to {sum}")));
            }
        }
        if (pi.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::structure("stationary vector is not normalized"));
        }
        Ok(TransitionMatrix { members, p, pi })
    }

    pub fn members(&self) -> &[u32] {
        &self.members
    }

    pub fn states(&self) -> usize {
        self.pi.len()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn stationary(&self) -> &[f64] {
        &self.pi
    }

    /// `max_j |sum_i pi_i P_ij - pi_j|`.
    pub fn stationarity_residual(&self) -> f64 {
        let s = self.states();
        let mut worst = 0.0f64;
        for j in 0..s {
            let mut acc = 0.0;
            for i in 0..s {
                acc += self.pi[i] * self.p[(i, j)];
            }
            worst = worst.max((acc - self.pi[j]).abs());
        }
        worst
    }

    /// `max_ij |pi_i P_ij - pi_j P_ji|`.
    pub fn reversibility_residual(&self) -> f64 {
        let s = self.states();
        let mut worst = 0.0f64;
        for i in 0..s {
            for j in (i + 1)..s {
                worst = worst.max((self.pi[i] * self.p[(i, j)] - self.pi[j] * self.p[(j, i)]).abs());
            }
        }
        worst
    }
}

/// Second eigenvalue data of a reversible chain.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Relaxation {
    /// Second largest eigenvalue magnitude.
    pub lambda_star: f64,
    /// `1 / (1 - lambda_star)`.
    pub tau_rel: f64,
}

/// Relaxation time through the symmetrized matrix `D^{1/2} P D^{-1/2}`.
/// Requires detailed balance (residual at most 1e-12). The dense spectrum is
/// cross-checked by deflated power iteration on the squared matrix; the two
/// must agree to 1e-8.
pub fn relaxation_time(tm: &TransitionMatrix) -> Result<Relaxation> {
    let rev = tm.reversibility_residual();
    if rev > 1e-12 {
        return Err(Error::invalid(format!(
            "chain is not reversible (detailed balance residual {rev:.3e})"
        )));
    }
    let s = tm.states();
    let sqrt_pi: Vec<f64> = tm.pi.iter().map(|&x| x.sqrt()).collect();
    let mut a = DMatrix::<f64>::zeros(s, s);
    for i in 0..s {
        for j in 0..s {
            if tm.pi[j] > 0.0 {
                a[(i, j)] = tm.p[(i, j)] * sqrt_pi[i] / sqrt_pi[j];
            }
        }
    }
    // Exact symmetry up to roundoff is guaranteed by reversibility; average
    // away the roundoff so the symmetric eigensolver sees a symmetric input.
    let at = a.transpose();
    let a = (a + at) * 0.5;

    let eig = a.clone().symmetric_eigen();
    let mut mags: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.abs()).collect();
    mags.sort_by(|x, y| y.partial_cmp(x).unwrap());
    if (mags[0] - 1.0).abs() > 1e-10 {
        return Err(Error::structure(format!(
            "top eigenvalue is {} instead of 1",
            mags[0]
        )));
    }
    let lambda_star = mags[1];
    if lambda_star >= 1.0 - 1e-13 {
        return Err(Error::structure(
            "chain has no spectral gap (reducible or periodic)",
        ));
    }

    // Cross-check: deflated power iteration on A^2 (squaring removes the
    // sign ambiguity between the second-largest and most-negative
    // eigenvalues). Start from the dense solver's eigenvector perturbed by a
    // fixed generic pattern, so the dominant component cannot vanish.
    let top_idx = (0..s)
        .max_by(|&i, &j| {
            eig.eigenvalues[i]
                .partial_cmp(&eig.eigenvalues[j])
                .unwrap()
        })
        .unwrap();
    let second_idx = (0..s)
        .filter(|&i| i != top_idx)
        .max_by(|&i, &j| {
            eig.eigenvalues[i]
                .abs()
                .partial_cmp(&eig.eigenvalues[j].abs())
                .unwrap()
        })
        .unwrap();
    let v1 = nalgebra::DVector::from_iterator(s, sqrt_pi.iter().copied());
    let v1 = &v1 / v1.norm();
    let mut x = eig.eigenvectors.column(second_idx).clone_owned();
    for (i, xi) in x.iter_mut().enumerate() {
        *xi += 0.1 * (((i as f64) * 0.618_033_988_749_894_9).fract() - 0.5);
    }
    x -= &v1 * v1.dot(&x);
    if x.norm() < 1e-12 {
        return Err(Error::structure("power iteration start degenerated"));
    }
    x /= x.norm();
    let mut est = 0.0f64;
    for _ in 0..50_000 {
        let mut y = &a * (&a * &x);
        y -= &v1 * v1.dot(&y);
        let new_est = x.dot(&y);
        let norm = y.norm();
        if norm < 1e-300 {
            est = 0.0;
            break;
        }
        x = y / norm;
        if (new_est - est).abs() <= 1e-13 * new_est.abs().max(1.0) {
            est = new_est;
            break;
        }
        est = new_est;
    }
    let lambda_power = est.max(0.0).sqrt();
    if (lambda_power - lambda_star).abs() > 1e-8 {
        return Err(Error::structure(format!(
            "eigensolver cross-check failed: dense {lambda_star} vs power iteration {lambda_power}"
        )));
    }

    Ok(Relaxation {
        lambda_star,
        tau_rel: 1.0 / (1.0 - lambda_star),
    })
}

fn worst_tv(power: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let s = pi.len();
    let mut worst = 0.0f64;
    for i in 0..s {
        let mut acc = 0.0;
        for j in 0..s {
            acc += (power[(i, j)] - pi[j]).abs();
        }
        worst = worst.max(0.5 * acc);
    }
    worst
}

/// Smallest `t` with `max_state TV(P^t(state, .), pi) <= threshold`, found by
/// doubling matrix powers and bisecting (worst-start total variation is
/// non-increasing in `t`, so the predicate is monotone). Capped at
/// `MIXING_STATE_CAP` states and `2^40` steps.
pub fn mixing_time_exact(tm: &TransitionMatrix, threshold: f64) -> Result<u64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("threshold must be in (0, 1)"));
    }
    if tm.states() > MIXING_STATE_CAP {
        return Err(Error::cap(format!(
            "exact mixing time is limited to {MIXING_STATE_CAP} states, got {}",
            tm.states()
        )));
    }
    let d0 = 1.0 - tm.pi.iter().copied().fold(f64::INFINITY, f64::min);
    if d0 <= threshold {
        return Ok(0);
    }
    // squarings[k] = P^(2^k)
    let mut squarings = vec![tm.p.clone()];
    loop {
        let last = squarings.last().unwrap();
        if worst_tv(last, &tm.pi) <= threshold {
            break;
        }
        if squarings.len() > 40 {
            return Err(Error::cap(
                "chain does not reach the threshold within 2^40 steps",
            ));
        }
        let next = last * last;
        squarings.push(next);
    }
    let k = squarings.len() - 1;
    if k == 0 {
        return Ok(1);
    }
    let power_at = |t: u64| -> DMatrix<f64> {
        let mut acc: Option<DMatrix<f64>> = None;
        for (j, sq) in squarings.iter().enumerate() {
            if t >> j & 1 == 1 {
                acc = Some(match acc {
                    None => sq.clone(),
                    Some(m) => m * sq,
                });
            }
        }
        acc.expect("t > 0")
    };
    let mut lo = 1u64 << (k - 1); // fails the threshold
    let mut hi = 1u64 << k; // meets it
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if worst_tv(&power_at(mid), &tm.pi) <= threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Spectral summary of one chain: eigenvalue gap, relaxation time, exact
/// worst-start mixing time at threshold 1/e, and the numeric residuals of
/// the stationarity and detailed-balance identities.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralReport {
    pub states: usize,
    pub lambda_star: f64,
    pub tau_rel: f64,
    pub t_mix: u64,
    pub stationarity_residual: f64,
    pub reversibility_residual: f64,
}

pub fn spectral_report(instance: &Instance, kind: ChainKind) -> Result<SpectralReport> {
    let tm = transition_matrix(instance, kind)?;
    let relax = relaxation_time(&tm)?;
    let t_mix = mixing_time_exact(&tm, 1.0 / std::f64::consts::E)?;
    Ok(SpectralReport {
        states: tm.states(),
        lambda_star: relax.lambda_star,
        tau_rel: relax.tau_rel,
        t_mix,
        stationarity_residual: tm.stationarity_residual(),
        reversibility_residual: tm.reversibility_residual(),
    })
}

/// Relative slack granted to the exact side of each verified inequality, to
/// absorb eigensolver roundoff.
pub const BOUND_SLACK: f64 = 1e-9;

/// Exact check of the comparison inequality: the relaxation time of the
/// single-site dynamics is at most the relaxation time of the block dynamics
/// times the worst block relaxation time over all boundary conditions (the
/// multiplicity factor is 1 because the blocks partition the vertices).
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub tau_rel: f64,
    pub tau_block: f64,
    /// Worst-boundary relaxation time of the restricted single-site dynamics
    /// on each block, in block order.
    pub block_taus: Vec<f64>,
    pub bound: f64,
    pub pass: bool,
}

/// Caps: the full chains need `n <= 12`; each multi-vertex block needs at
/// most 10 vertices and at most 12 boundary vertices (its relaxation time is
/// maximized over all `2^|boundary|` conditions). Singleton blocks have
/// relaxation time exactly 1: resampling erases the state, so the chain's
/// second eigenvalue is 0 for every boundary.
pub fn verify_comparison_bound(
    instance: &Instance,
    partition: &BlockPartition,
) -> Result<ComparisonReport> {
    let n = instance.n();
    if partition.n() != n {
        return Err(Error::structure(
            "partition and instance sizes disagree",
        ));
    }
    if n > 12 {
        return Err(Error::cap(format!(
            "comparison check needs n <= 12 for the dense full chains, got {n}"
        )));
    }
    let tau_rel = relaxation_time(&transition_matrix(instance, ChainKind::Glauber)?)?.tau_rel;
    let tau_block =
        relaxation_time(&transition_matrix(instance, ChainKind::Block(partition))?)?.tau_rel;

    let mut block_taus = Vec::with_capacity(partition.num_blocks());
    for block in partition.blocks() {
        if block.len() == 1 {
            block_taus.push(1.0);
            continue;
        }
        if block.len() > 10 {
            return Err(Error::cap(format!(
                "comparison check needs blocks of at most 10 vertices, got {}",
                block.len()
            )));
        }
        let boundary: Vec<u32> = outer_neighbors(instance, &block.vertices);
        if boundary.len() > 12 {
            return Err(Error::cap(format!(
                "comparison check enumerates all boundary conditions, needs at most 12 boundary vertices, got {}",
                boundary.len()
            )));
        }
        let mut worst = 1.0f64;
        for mask in 0..1u64 << boundary.len() {
            let bc = BoundaryCondition::new(
                boundary
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| (v, if mask >> i & 1 == 1 { 1 } else { -1 })),
            )?;
            let tm = transition_matrix(
                instance,
                ChainKind::RestrictedGlauber {
                    members: &block.vertices,
                    boundary: &bc,
                },
            )?;
            worst = worst.max(relaxation_time(&tm)?.tau_rel);
        }
        block_taus.push(worst);
    }
    let worst_block = block_taus.iter().copied().fold(1.0f64, f64::max);
    let bound = tau_block * worst_block;
    Ok(ComparisonReport {
        tau_rel,
        tau_block,
        block_taus,
        bound,
        pass: tau_rel <= bound * (1.0 + BOUND_SLACK),
    })
}

pub(crate) fn outer_neighbors(instance: &Instance, members: &[u32]) -> Vec<u32> {
    let set: BTreeSet<u32> = members.iter().copied().collect();
    let mut out = BTreeSet::new();
    for &v in members {
        for &(w, _) in instance.graph.neighbors(v) {
            if !set.contains(&w) {
                out.insert(w);
            }
        }
    }
    out.into_iter().collect()
}

/// Check that the induced subgraph on `members` is a tree; returns its edge
/// count on success.
fn induced_tree_check(instance: &Instance, members: &[u32]) -> Result<()> {
    let set: BTreeSet<u32> = members.iter().copied().collect();
    if set.len() != members.len() {
        return Err(Error::structure("tree vertex repeated"));
    }
    let mut edges = 0usize;
    for &v in members {
        for &(w, _) in instance.graph.neighbors(v) {
            if w > v && set.contains(&w) {
                edges += 1;
            }
        }
    }
    if edges != members.len() - 1 {
        return Err(Error::structure(format!(
            "induced subgraph has {edges} edges on {} vertices, not a tree",
            members.len()
        )));
    }
    // Edge count k-1 plus connectivity is a tree; check connectivity.
    let mut seen = BTreeSet::new();
    let mut stack = vec![members[0]];
    seen.insert(members[0]);
    while let Some(v) = stack.pop() {
        for &(w, _) in instance.graph.neighbors(v) {
            if set.contains(&w) && seen.insert(w) {
                stack.push(w);
            }
        }
    }
    if seen.len() != members.len() {
        return Err(Error::structure("induced subgraph is disconnected"));
    }
    Ok(())
}

/// Result of checking the tree relaxation bound `tau <= exp(m(T, root))`.
#[derive(Clone, Debug, Serialize)]
pub struct TreeBoundCheck {
    pub root: u32,
    /// Maximum comparison weight over root-to-leaf paths.
    pub m_value: f64,
    pub tau: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Exact relaxation time of the single-site dynamics on a tree with a frozen
/// boundary, against `exp(max over root-to-leaf paths of the comparison
/// weight)`. The bound holds for any root; the convention here is the
/// lowest-numbered heavy vertex when the tree has one (heavy vertices
/// dominate the path weights), otherwise the lowest-numbered vertex.
pub fn verify_tree_relaxation_bound(
    instance: &Instance,
    members: &[u32],
    boundary: &BoundaryCondition,
    table: &InfluenceTable,
    params: &WeightParams,
) -> Result<TreeBoundCheck> {
    let mut members: Vec<u32> = members.to_vec();
    members.sort_unstable();
    induced_tree_check(instance, &members)?;
    if table.agg.len() != instance.n() {
        return Err(Error::structure(
            "influence table and instance sizes disagree",
        ));
    }
    let threshold = params.heavy_threshold();
    let root = members
        .iter()
        .copied()
        .find(|&v| table.agg[v as usize] > threshold)
        .unwrap_or(members[0]);

    // Enumerate root-to-leaf paths of the induced tree.
    let set: BTreeSet<u32> = members.iter().copied().collect();
    let mut m_value = f64::NEG_INFINITY;
    let mut stack: Vec<(u32, Option<u32>, Vec<u32>)> = vec![(root, None, vec![root])];
    while let Some((v, parent, path)) = stack.pop() {
        let children: Vec<u32> = instance
            .graph
            .neighbors(v)
            .iter()
            .map(|&(w, _)| w)
            .filter(|&w| set.contains(&w) && Some(w) != parent)
            .collect();
        if children.is_empty() {
            m_value = m_value.max(comparison_weight(instance, &path)?);
        } else {
            for w in children {
                let mut next = path.clone();
                next.push(w);
                stack.push((w, Some(v), next));
            }
        }
    }

    let tm = transition_matrix(
        instance,
        ChainKind::RestrictedGlauber {
            members: &members,
            boundary,
        },
    )?;
    let tau = relaxation_time(&tm)?.tau_rel;
    let bound = m_value.exp();
    Ok(TreeBoundCheck {
        root,
        m_value,
        tau,
        bound,
        pass: tau <= bound * (1.0 + BOUND_SLACK),
    })
}

/// Result of checking the rooted-star block bound
/// `tau_block <= exp(10 ln R + 2 beta sum |J_root,child|)`.
#[derive(Clone, Debug, Serialize)]
pub struct StarBoundCheck {
    pub root: u32,
    /// Number of child subtrees hanging off the root.
    pub rays: usize,
    pub coupling_sum: f64,
    pub tau: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Exact relaxation time of the block dynamics on a rooted tree whose blocks
/// are the root singleton and the child subtrees, against the explicit
/// bound. Needs at least two children (the bound's epoch argument is empty
/// for a single block pair).
pub fn verify_star_relaxation_bound(
    instance: &Instance,
    members: &[u32],
    root: u32,
    boundary: &BoundaryCondition,
) -> Result<StarBoundCheck> {
    let mut members: Vec<u32> = members.to_vec();
    members.sort_unstable();
    induced_tree_check(instance, &members)?;
    let set: BTreeSet<u32> = members.iter().copied().collect();
    if !set.contains(&root) {
        return Err(Error::invalid(format!("root {root} is not a member")));
    }
    let children: Vec<(u32, u32)> = instance
        .graph
        .neighbors(root)
        .iter()
        .copied()
        .filter(|&(w, _)| set.contains(&w))
        .collect();
    let rays = children.len();
    if rays < 2 {
        return Err(Error::invalid(
            "the star bound needs a root with at least two children",
        ));
    }

    // Child subtrees: reachable from each child without passing the root.
    let mut blocks: Vec<Vec<u32>> = vec![vec![root]];
    let mut claimed = BTreeSet::new();
    claimed.insert(root);
    for &(child, _) in &children {
        let mut subtree = Vec::new();
        let mut stack = vec![child];
        claimed.insert(child);
        while let Some(v) = stack.pop() {
            subtree.push(v);
            for &(w, _) in instance.graph.neighbors(v) {
                if set.contains(&w) && w != root && claimed.insert(w) {
                    stack.push(w);
                }
            }
        }
        subtree.sort_unstable();
        blocks.push(subtree);
    }
    if claimed.len() != members.len() {
        return Err(Error::structure(
            "subtrees do not cover the tree",
        ));
    }

    let coupling_sum: f64 = children
        .iter()
        .map(|&(_, e)| instance.coupling(e).abs())
        .sum();
    let tm = transition_matrix(
        instance,
        ChainKind::RestrictedBlocks {
            members: &members,
            blocks: &blocks,
            boundary,
        },
    )?;
    let tau = relaxation_time(&tm)?.tau_rel;
    let bound = (10.0 * (rays as f64).ln() + 2.0 * instance.beta() * coupling_sum).exp();
    Ok(StarBoundCheck {
        root,
        rays,
        coupling_sum,
        tau,
        bound,
        pass: tau <= bound * (1.0 + BOUND_SLACK),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::{brute_force, BlockSystem, SpinConfig};
    use crate::influence::aggregate_influence;
    use crate::instance::{gen, Graph};
    use crate::partition::{Block, BlockKind};

    fn inst(n: usize, edges: Vec<(u32, u32)>, js: Vec<f64>, beta: f64) -> Instance {
        Instance::new(Graph::from_edges(n, edges).unwrap(), js, beta).unwrap()
    }

    fn wp() -> WeightParams {
        WeightParams {
            epsilon: 0.5,
            d: 2.0,
            block_range: 3,
            short_cycle_max_len: 4,
            cycle_buffer_radius: 1,
            cycle_separation: 2,
            tree_reach: 4,
            cycle_reach: 4,
        }
    }

    fn blockv(vertices: Vec<u32>, kind: BlockKind, boundary: Vec<u32>) -> Block {
        Block {
            vertices,
            kind,
            boundary,
            cycle: vec![],
        }
    }

    #[test]
    fn glauber_matrix_is_stationary_and_reversible() {
        let instance = gen(5, 2.0, 0.9, 4).unwrap();
        let tm = transition_matrix(&instance, ChainKind::Glauber).unwrap();
        assert_eq!(tm.states(), 32);
        let exact = brute_force(&instance).unwrap();
        for state in 0..32usize {
            let cfg = SpinConfig::from_bits(5, state as u64);
            assert!(
                (tm.stationary()[state] - exact.prob(&cfg)).abs() < 1e-10,
                "stationary law disagrees with direct enumeration at state {state}"
            );
        }
        assert!(tm.stationarity_residual() < 1e-12);
        assert!(tm.reversibility_residual() < 1e-12);
    }

    #[test]
    fn block_matrix_is_stationary_and_reversible() {
        let instance = inst(
            4,
            vec![(0, 1), (0, 3), (1, 2), (2, 3)],
            vec![1.2, 0.6, -0.9, 0.8],
            0.8,
        );
        let blocks = vec![
            blockv(vec![0, 1], BlockKind::Tree, vec![2, 3]),
            blockv(vec![2], BlockKind::Singleton, vec![1, 3]),
            blockv(vec![3], BlockKind::Singleton, vec![0, 2]),
        ];
        let partition = BlockPartition::from_parts(4, blocks, wp()).unwrap();
        let tm = transition_matrix(&instance, ChainKind::Block(&partition)).unwrap();
        let exact = brute_force(&instance).unwrap();
        for state in 0..16usize {
            let cfg = SpinConfig::from_bits(4, state as u64);
            assert!((tm.stationary()[state] - exact.prob(&cfg)).abs() < 1e-10);
        }
        assert!(tm.stationarity_residual() < 1e-12);
        assert!(tm.reversibility_residual() < 1e-12);
    }

    #[test]
    fn restricted_chain_stationary_matches_block_conditional() {
        let instance = inst(
            5,
            vec![(0, 1), (1, 2), (2, 3), (3, 4)],
            vec![0.8, 1.5, -2.0, 0.7],
            1.2,
        );
        let members = vec![1u32, 2, 3];
        let base = SpinConfig::all_plus(5);
        let bc = BoundaryCondition::from_config(&instance, &members, &base);
        let tm = transition_matrix(
            &instance,
            ChainKind::RestrictedGlauber {
                members: &members,
                boundary: &bc,
            },
        )
        .unwrap();
        let sys = BlockSystem::new(&instance, &members, &bc).unwrap();
        for state in 0..8usize {
            let assignment: Vec<(u32, i8)> = members
                .iter()
                .enumerate()
                .map(|(k, &v)| (v, if state >> k & 1 == 1 { 1 } else { -1 }))
                .collect();
            let p = sys.log_prob(&assignment).unwrap().exp();
            assert!(
                (tm.stationary()[state] - p).abs() < 1e-12,
                "restricted stationary law disagrees with the exact conditional"
            );
        }
        assert!(tm.reversibility_residual() < 1e-12);
    }

    #[test]
    fn hypercube_walk_has_known_relaxation_and_mixing_times() {
        // Without edges every update is a fresh fair coin: the chain is the
        // heat-bath walk on the hypercube, with second eigenvalue 1 - 1/n.
        let instance = inst(4, vec![], vec![], 1.0);
        let tm = transition_matrix(&instance, ChainKind::Glauber).unwrap();
        let relax = relaxation_time(&tm).unwrap();
        assert!((relax.lambda_star - 0.75).abs() < 1e-12);
        assert!((relax.tau_rel - 4.0).abs() < 1e-10);

        let two = inst(2, vec![], vec![], 1.0);
        let tm2 = transition_matrix(&two, ChainKind::Glauber).unwrap();
        // Hand-computed worst-start distances: d(1) = 1/4, d(2) = 1/8.
        assert_eq!(mixing_time_exact(&tm2, 1.0 / std::f64::consts::E).unwrap(), 1);
        assert_eq!(mixing_time_exact(&tm2, 0.2).unwrap(), 2);
        assert_eq!(mixing_time_exact(&tm2, 0.3).unwrap(), 1);
    }

    #[test]
    fn singleton_block_dynamics_equals_glauber_matrix() {
        let instance = gen(5, 2.5, 0.7, 9).unwrap();
        let partition = BlockPartition::all_singletons(&instance, &wp());
        let a = transition_matrix(&instance, ChainKind::Glauber).unwrap();
        let b = transition_matrix(&instance, ChainKind::Block(&partition)).unwrap();
        let diff = (a.p() - b.p()).abs().max();
        assert!(diff < 1e-15, "matrices differ by {diff}");
    }

    #[test]
    fn relaxation_rejects_non_reversible_chains() {
        // Deterministic cycle on 2 states ... use a biased 4-state rotation
        // with uniform stationary law: rows sum to 1, stationary, but not
        // reversible.
        let s = 4usize;
        let mut p = DMatrix::<f64>::zeros(s, s);
        for i in 0..s {
            p[(i, (i + 1) % s)] = 0.9;
            p[(i, i)] = 0.1;
        }
        let tm = TransitionMatrix::from_parts(vec![0, 1], p, vec![0.25; 4]).unwrap();
        assert!(tm.stationarity_residual() < 1e-15);
        let err = relaxation_time(&tm);
        assert!(err.is_err(), "rotation chain must be rejected");
    }

    #[test]
    fn comparison_bound_holds_on_a_partitioned_instance() {
        let instance = inst(
            4,
            vec![(0, 1), (0, 3), (1, 2), (2, 3)],
            vec![1.2, 0.6, -0.9, 0.8],
            0.8,
        );
        let blocks = vec![
            blockv(vec![0, 1], BlockKind::Tree, vec![2, 3]),
            blockv(vec![2], BlockKind::Singleton, vec![1, 3]),
            blockv(vec![3], BlockKind::Singleton, vec![0, 2]),
        ];
        let partition = BlockPartition::from_parts(4, blocks, wp()).unwrap();
        let report = verify_comparison_bound(&instance, &partition).unwrap();
        assert!(report.pass, "comparison bound failed: {report:?}");
        assert_eq!(report.block_taus.len(), 3);
        assert_eq!(report.block_taus[1], 1.0);
        assert_eq!(report.block_taus[2], 1.0);
        assert!(report.tau_rel >= 1.0 && report.tau_block >= 1.0);
    }

    #[test]
    fn tree_relaxation_bound_holds_with_frozen_boundary() {
        let instance = inst(
            5,
            vec![(0, 1), (1, 2), (2, 3), (3, 4)],
            vec![0.8, 1.5, -2.0, 0.7],
            1.2,
        );
        let members = vec![1u32, 2, 3];
        let bc = BoundaryCondition::from_config(&instance, &members, &SpinConfig::all_plus(5));
        let table = aggregate_influence(&instance, None).unwrap();
        let check =
            verify_tree_relaxation_bound(&instance, &members, &bc, &table, &wp()).unwrap();
        assert!(check.pass, "tree bound failed: {check:?}");
        assert!(check.tau >= 1.0);
        assert!(check.bound >= 1.0);
        assert_eq!(check.root, 1, "lowest heavy vertex is the root");
    }

    #[test]
    fn star_relaxation_bound_holds_and_needs_two_rays() {
        let instance = inst(
            5,
            vec![(0, 1), (0, 2), (0, 3), (3, 4)],
            vec![1.4, -0.9, 0.8, 0.5],
            1.0,
        );
        let members = vec![0u32, 1, 2, 3];
        let bc = BoundaryCondition::new([(4u32, 1i8)]).unwrap();
        let check = verify_star_relaxation_bound(&instance, &members, 0, &bc).unwrap();
        assert!(check.pass, "star bound failed: {check:?}");
        assert_eq!(check.rays, 3);
        let expected_sum = 1.4 + 0.9 + 0.8;
        assert!((check.coupling_sum - expected_sum).abs() < 1e-12);

        // A root with a single child is rejected.
        let two = vec![3u32, 4];
        let bc2 = BoundaryCondition::new([(0u32, 1i8)]).unwrap();
        assert!(verify_star_relaxation_bound(&instance, &two, 3, &bc2).is_err());
    }

    #[test]
    fn spectral_report_summarizes_a_small_chain() {
        let instance = gen(4, 2.0, 0.9, 13).unwrap();
        let report = spectral_report(&instance, ChainKind::Glauber).unwrap();
        assert!(report.lambda_star > 0.0 && report.lambda_star < 1.0);
        assert!(report.tau_rel >= 1.0);
        assert!(report.t_mix >= 1);
        assert!(report.stationarity_residual < 1e-12);
        assert!(report.reversibility_residual < 1e-12);
        assert_eq!(report.states, 16);

        let partition = BlockPartition::all_singletons(&instance, &wp());
        let block_report =
            spectral_report(&instance, ChainKind::Block(&partition)).unwrap();
        assert!((block_report.lambda_star - report.lambda_star).abs() < 1e-12);
        assert_eq!(block_report.t_mix, report.t_mix);
    }

    #[test]
    fn caps_and_missing_boundaries_are_rejected() {
        let instance = gen(15, 2.0, 0.5, 2).unwrap();
        let err = transition_matrix(&instance, ChainKind::Glauber);
        assert!(matches!(err, Err(Error::CapExceeded(_))));

        let path = inst(3, vec![(0, 1), (1, 2)], vec![0.5, 0.5], 1.0);
        let empty = BoundaryCondition::empty();
        let err = transition_matrix(
            &path,
            ChainKind::RestrictedGlauber {
                members: &[1],
                boundary: &empty,
            },
        );
        assert!(err.is_err(), "missing boundary spins must be rejected");
    }
}
