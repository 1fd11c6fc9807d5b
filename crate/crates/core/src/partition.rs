//! Influence-based block decomposition.
//!
//! Short cycles become unicyclic blocks padded by a buffer ball, heavy
//! influence regions become tree blocks, and every remaining vertex stands
//! alone. Multi-vertex blocks are grown to closure through non-block
//! vertices, so every boundary vertex of a finished block is a block vertex
//! with exactly one neighbor inside. The builder either returns a partition
//! that passes `validate_partition` or reports which growth condition failed,
//! with a re-checkable witness.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::{aggregate_influence, BlockVertexAnalysis, WeightParams};
use crate::instance::{Graph, Instance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Singleton,
    Tree,
    Unicyclic,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockKind::Singleton => write!(f, "singleton"),
            BlockKind::Tree => write!(f, "tree"),
            BlockKind::Unicyclic => write!(f, "unicyclic"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    /// Member vertices, sorted.
    pub vertices: Vec<u32>,
    pub kind: BlockKind,
    /// Outer boundary: vertices outside the block with a neighbor inside,
    /// sorted.
    pub boundary: Vec<u32>,
    /// The unique cycle in canonical order (lowest vertex first, then its
    /// smaller cycle-neighbor); empty unless unicyclic.
    pub cycle: Vec<u32>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn contains(&self, v: u32) -> bool {
        self.vertices.binary_search(&v).is_ok()
    }
}

/// A partition of the vertex set into singleton, tree, and unicyclic blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPartition {
    n: usize,
    blocks: Vec<Block>,
    /// Block index per vertex.
    vertex_to_block: Vec<u32>,
    /// The parameters the partition was built (or declared) under.
    radii_used: WeightParams,
}

impl BlockPartition {
    /// Assemble from blocks, recomputing the vertex map and checking that the
    /// blocks cover every vertex exactly once.
    pub fn from_parts(n: usize, blocks: Vec<Block>, radii_used: WeightParams) -> Result<Self> {
        let mut vertex_to_block = vec![u32::MAX; n];
        for (i, b) in blocks.iter().enumerate() {
            if b.vertices.is_empty() {
                return Err(Error::structure(format!("block {i} is empty")));
            }
            if !b.vertices.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::structure(format!(
                    "block {i} vertices are not sorted and distinct"
                )));
            }
            for &v in &b.vertices {
                if v as usize >= n {
                    return Err(Error::structure(format!(
                        "block {i} vertex {v} out of range (n = {n})"
                    )));
                }
                if vertex_to_block[v as usize] != u32::MAX {
                    return Err(Error::structure(format!(
                        "vertex {v} appears in blocks {} and {i}",
                        vertex_to_block[v as usize]
                    )));
                }
                vertex_to_block[v as usize] = i as u32;
            }
        }
        if let Some(v) = vertex_to_block.iter().position(|&b| b == u32::MAX) {
            return Err(Error::structure(format!("vertex {v} is in no block")));
        }
        Ok(BlockPartition {
            n,
            blocks,
            vertex_to_block,
            radii_used,
        })
    }

    /// Every vertex its own singleton. Block dynamics driven by this
    /// partition coincides in law with single-site dynamics. Note that it is
    /// generally NOT a valid decomposition under `validate_partition`:
    /// singletons there must be block vertices, which heavy vertices are not.
    pub fn all_singletons(instance: &Instance, params: &WeightParams) -> Self {
        let n = instance.n();
        let blocks = (0..n as u32)
            .map(|v| Block {
                vertices: vec![v],
                kind: BlockKind::Singleton,
                boundary: instance.graph.neighbors(v).iter().map(|&(w, _)| w).collect(),
                cycle: Vec::new(),
            })
            .collect();
        BlockPartition {
            n,
            blocks,
            vertex_to_block: (0..n as u32).collect(),
            radii_used: params.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, i: usize) -> &Block {
        &self.blocks[i]
    }

    /// Index of the block containing `v`.
    pub fn block_of(&self, v: u32) -> usize {
        self.vertex_to_block[v as usize] as usize
    }

    pub fn radii_used(&self) -> &WeightParams {
        &self.radii_used
    }

    pub fn summary(&self) -> PartitionSummary {
        let mut s = PartitionSummary {
            n: self.n,
            num_blocks: self.blocks.len(),
            singletons: 0,
            trees: 0,
            unicyclics: 0,
            largest_block: 0,
        };
        for b in &self.blocks {
            match b.kind {
                BlockKind::Singleton => s.singletons += 1,
                BlockKind::Tree => s.trees += 1,
                BlockKind::Unicyclic => s.unicyclics += 1,
            }
            s.largest_block = s.largest_block.max(b.len());
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)
            .map_err(|e| Error::structure(format!("serializing partition: {e}")))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let raw: BlockPartition = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::structure(format!("parsing partition: {e}")))?;
        // Re-derive the vertex map rather than trusting the file.
        BlockPartition::from_parts(raw.n, raw.blocks, raw.radii_used)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub n: usize,
    pub num_blocks: usize,
    pub singletons: usize,
    pub trees: usize,
    pub unicyclics: usize,
    pub largest_block: usize,
}

/// Why `build_partition` could not produce a decomposition. Witnesses are
/// re-checkable against the instance and parameters alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BuildFailure {
    /// Two distinct short cycles closer than `cycle_separation`.
    Condition1 {
        cycle_a: Vec<u32>,
        cycle_b: Vec<u32>,
        distance: u32,
    },
    /// A cycle block would absorb `vertex` at graph distance
    /// `distance >= cycle_reach` from the buffered core `ball(cycle,
    /// cycle_buffer_radius)`. `path` starts inside the core and runs to
    /// `vertex` through non-block vertices.
    Condition2 {
        cycle: Vec<u32>,
        vertex: u32,
        distance: u32,
        path: Vec<u32>,
    },
    /// The tree block around heavy vertex `root` would absorb `vertex` at
    /// graph distance `distance >= tree_reach`. `path` runs from `root` to
    /// `vertex` through non-block vertices.
    Condition3 {
        root: u32,
        vertex: u32,
        distance: u32,
        path: Vec<u32>,
    },
    /// The grown blocks violate a structural requirement of the
    /// decomposition (block overlap, unexpected extra cycle, boundary vertex
    /// with several inside neighbors, heavy vertex left isolated, ...).
    Structural { message: String },
}

impl fmt::Display for BuildFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuildFailure::Condition1 {
                cycle_a,
                cycle_b,
                distance,
            } => write!(
                f,
                "condition 1: cycles {cycle_a:?} and {cycle_b:?} at distance {distance}"
            ),
            BuildFailure::Condition2 {
                cycle,
                vertex,
                distance,
                ..
            } => write!(
                f,
                "condition 2: cycle {cycle:?} absorbs vertex {vertex} at distance {distance} \
                 from its buffered core"
            ),
            BuildFailure::Condition3 {
                root,
                vertex,
                distance,
                ..
            } => write!(
                f,
                "condition 3: heavy vertex {root} absorbs vertex {vertex} at distance {distance}"
            ),
            BuildFailure::Structural { message } => write!(f, "structural: {message}"),
        }
    }
}

/// Either a finished partition or the first growth failure.
#[derive(Debug, Clone, Serialize)]
pub enum BuildOutcome {
    Partition(BlockPartition),
    Failure(BuildFailure),
}

impl BuildOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, BuildOutcome::Partition(_))
    }

    pub fn as_partition(&self) -> Option<&BlockPartition> {
        match self {
            BuildOutcome::Partition(p) => Some(p),
            BuildOutcome::Failure(_) => None,
        }
    }

    pub fn as_failure(&self) -> Option<&BuildFailure> {
        match self {
            BuildOutcome::Partition(_) => None,
            BuildOutcome::Failure(f) => Some(f),
        }
    }

    /// Unwrap the partition, converting a build failure into an error.
    pub fn into_partition(self) -> Result<BlockPartition> {
        match self {
            BuildOutcome::Partition(p) => Ok(p),
            BuildOutcome::Failure(fail) => Err(Error::structure(format!(
                "partition build failed: {fail}"
            ))),
        }
    }
}

/// Canonical form of a cycle given as a closed vertex sequence: rotate so
/// the lowest vertex leads, orient so its smaller cycle-neighbor comes
/// second.
pub(crate) fn canonicalize_cycle(cycle: &[u32]) -> Vec<u32> {
    let k = cycle.len();
    debug_assert!(k >= 3);
    let pos = (0..k).min_by_key(|&i| cycle[i]).unwrap();
    let fwd: Vec<u32> = (0..k).map(|i| cycle[(pos + i) % k]).collect();
    if fwd[1] <= fwd[k - 1] {
        fwd
    } else {
        let mut rev = Vec::with_capacity(k);
        rev.push(fwd[0]);
        rev.extend(fwd[1..].iter().rev());
        rev
    }
}

/// All simple cycles of length from 3 up to `max_len`, each exactly once in
/// canonical order, sorted lexicographically. Enumerates simple paths that
/// stay above their start vertex, so each cycle is produced from its lowest
/// vertex; the direction with the smaller second vertex is kept.
pub fn find_short_cycles(graph: &Graph, max_len: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    if max_len < 3 {
        return out;
    }
    let n = graph.n();
    let mut on_path = vec![false; n];
    let mut path: Vec<u32> = Vec::new();

    fn extend(
        graph: &Graph,
        start: u32,
        max_len: usize,
        path: &mut Vec<u32>,
        on_path: &mut [bool],
        out: &mut Vec<Vec<u32>>,
    ) {
        let v = *path.last().unwrap();
        for &(w, _) in graph.neighbors(v) {
            if w == start {
                if path.len() >= 3 && path[1] < v {
                    out.push(path.clone());
                }
            } else if w > start && !on_path[w as usize] && path.len() < max_len {
                on_path[w as usize] = true;
                path.push(w);
                extend(graph, start, max_len, path, on_path, out);
                path.pop();
                on_path[w as usize] = false;
            }
        }
    }

    for s in 0..n as u32 {
        on_path[s as usize] = true;
        path.push(s);
        extend(graph, s, max_len as usize, &mut path, &mut on_path, &mut out);
        path.pop();
        on_path[s as usize] = false;
    }
    out.sort();
    out
}

/// Connected components of the subgraph induced by non-block vertices:
/// `comp[v] = Some(id)` for non-block v, and `comps[id]` lists the members.
fn non_block_components(graph: &Graph, is_block: &[bool]) -> (Vec<Option<u32>>, Vec<Vec<u32>>) {
    let n = graph.n();
    let mut comp: Vec<Option<u32>> = vec![None; n];
    let mut comps: Vec<Vec<u32>> = Vec::new();
    for v in 0..n as u32 {
        if is_block[v as usize] || comp[v as usize].is_some() {
            continue;
        }
        let id = comps.len() as u32;
        let mut members = vec![v];
        comp[v as usize] = Some(id);
        let mut queue = VecDeque::from([v]);
        while let Some(x) = queue.pop_front() {
            for &(w, _) in graph.neighbors(x) {
                if !is_block[w as usize] && comp[w as usize].is_none() {
                    comp[w as usize] = Some(id);
                    members.push(w);
                    queue.push_back(w);
                }
            }
        }
        members.sort_unstable();
        comps.push(members);
    }
    (comp, comps)
}

/// Number of edges with both endpoints in `members` (sorted).
fn induced_edge_count(graph: &Graph, members: &[u32]) -> usize {
    let mut twice = 0;
    for &v in members {
        for &(w, _) in graph.neighbors(v) {
            if members.binary_search(&w).is_ok() {
                twice += 1;
            }
        }
    }
    twice / 2
}

/// Sorted outer boundary of `members` (sorted).
fn outer_boundary(graph: &Graph, members: &[u32]) -> Vec<u32> {
    let mut boundary = Vec::new();
    for &v in members {
        for &(w, _) in graph.neighbors(v) {
            if members.binary_search(&w).is_err() {
                boundary.push(w);
            }
        }
    }
    boundary.sort_unstable();
    boundary.dedup();
    boundary
}

/// Shortest path from any source to `target` that leaves the sources only
/// through vertices satisfying `allowed`. Used to produce growth witnesses.
fn witness_path(
    graph: &Graph,
    sources: &[u32],
    target: u32,
    allowed: impl Fn(u32) -> bool,
) -> Vec<u32> {
    let n = graph.n();
    let mut parent: Vec<Option<u32>> = vec![None; n];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    for &s in sources {
        if !seen[s as usize] {
            seen[s as usize] = true;
            queue.push_back(s);
        }
    }
    while let Some(v) = queue.pop_front() {
        if v == target {
            let mut path = vec![v];
            let mut cur = v;
            while let Some(p) = parent[cur as usize] {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return path;
        }
        for &(w, _) in graph.neighbors(v) {
            if !seen[w as usize] && allowed(w) {
                seen[w as usize] = true;
                parent[w as usize] = Some(v);
                queue.push_back(w);
            }
        }
    }
    unreachable!("witness target must be reachable by construction");
}

struct Grower<'a> {
    instance: &'a Instance,
    is_block: Vec<bool>,
    assigned: Vec<Option<u32>>,
    blocks: Vec<Block>,
}

impl<'a> Grower<'a> {
    /// Structural requirements shared by both multi-vertex block kinds:
    /// expected induced edge count and singly-attached block-vertex boundary.
    /// Returns the boundary on success.
    fn check_block_shape(
        &self,
        members: &[u32],
        expected_edges: usize,
        what: &str,
    ) -> std::result::Result<Vec<u32>, BuildFailure> {
        let graph = &self.instance.graph;
        let edges = induced_edge_count(graph, members);
        if edges != expected_edges {
            return Err(BuildFailure::Structural {
                message: format!(
                    "{what} with {} vertices spans {edges} internal edges, expected \
                     {expected_edges}: an extra cycle crosses the grown region",
                    members.len()
                ),
            });
        }
        let boundary = outer_boundary(graph, members);
        for &z in &boundary {
            if !self.is_block[z as usize] {
                return Err(BuildFailure::Structural {
                    message: format!(
                        "{what} leaves non-block vertex {z} on its boundary"
                    ),
                });
            }
            let inside = graph
                .neighbors(z)
                .iter()
                .filter(|&&(w, _)| members.binary_search(&w).is_ok())
                .count();
            if inside != 1 {
                return Err(BuildFailure::Structural {
                    message: format!(
                        "boundary vertex {z} of {what} has {inside} neighbors inside; \
                         the decomposition requires exactly one"
                    ),
                });
            }
        }
        Ok(boundary)
    }

    fn claim(&mut self, members: &[u32], what: &str) -> std::result::Result<(), BuildFailure> {
        let id = self.blocks.len() as u32;
        for &v in members {
            if let Some(other) = self.assigned[v as usize] {
                return Err(BuildFailure::Structural {
                    message: format!(
                        "{what} overlaps block {other} at vertex {v}: blocks grown from \
                         these parameters collide"
                    ),
                });
            }
            self.assigned[v as usize] = Some(id);
        }
        Ok(())
    }
}

/// Build the block decomposition. `Err` is reserved for invalid inputs;
/// a decomposition that cannot be grown under these parameters comes back as
/// `BuildOutcome::Failure` with a witness.
pub fn build_partition(instance: &Instance, params: &WeightParams) -> Result<BuildOutcome> {
    params.validate()?;
    let graph = &instance.graph;
    let n = instance.n();

    // Short cycles and their pairwise separation (Condition 1) come first:
    // this is cheap and fails fast before any influence computation.
    let cycles = find_short_cycles(graph, params.short_cycle_max_len);
    let mut cycle_at: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (i, c) in cycles.iter().enumerate() {
        for &v in c {
            cycle_at[v as usize].push(i as u32);
        }
    }
    for (i, c) in cycles.iter().enumerate() {
        // Distances up to cycle_separation - 1 are exact; anything beyond
        // cannot violate the condition.
        let dist = graph.bfs_from_set(c, Some(params.cycle_separation - 1));
        let mut hit: Option<(u32, u32)> = None; // (distance, other cycle)
        for (v, &dv) in dist.iter().enumerate() {
            if dv == u32::MAX {
                continue;
            }
            for &j in &cycle_at[v] {
                if j as usize != i && hit.map_or(true, |(hd, hj)| (dv, j) < (hd, hj)) {
                    hit = Some((dv, j));
                }
            }
        }
        if let Some((distance, j)) = hit {
            // Report each violating pair once, from its lower index.
            if (i as u32) < j {
                return Ok(BuildOutcome::Failure(BuildFailure::Condition1 {
                    cycle_a: cycles[i].clone(),
                    cycle_b: cycles[j as usize].clone(),
                    distance,
                }));
            }
        }
    }

    // Influence flags.
    let table = aggregate_influence(instance, None)?;
    let analysis = BlockVertexAnalysis::new(instance, &table, params)?;
    let is_block = analysis.all();
    let heavy_threshold = params.heavy_threshold();
    let (comp, comps) = non_block_components(graph, &is_block);

    let mut grower = Grower {
        instance,
        is_block,
        assigned: vec![None; n],
        blocks: Vec::new(),
    };

    // Cycle blocks: buffered core plus every non-block component touching it.
    for cycle in &cycles {
        let core_dist = graph.bfs_from_set(cycle, Some(params.cycle_buffer_radius));
        let core: Vec<u32> = (0..n as u32)
            .filter(|&v| core_dist[v as usize] != u32::MAX)
            .collect();
        let mut comp_ids: Vec<u32> = Vec::new();
        for &v in &core {
            if let Some(id) = comp[v as usize] {
                comp_ids.push(id);
            }
            for &(w, _) in graph.neighbors(v) {
                if let Some(id) = comp[w as usize] {
                    comp_ids.push(id);
                }
            }
        }
        comp_ids.sort_unstable();
        comp_ids.dedup();
        let mut members = core.clone();
        for &id in &comp_ids {
            members.extend_from_slice(&comps[id as usize]);
        }
        members.sort_unstable();
        members.dedup();

        // Condition 2: nothing absorbed may sit at distance >= cycle_reach
        // from the core.
        let reach = graph.bfs_from_set(&core, Some(params.cycle_reach));
        let in_members = |v: u32| members.binary_search(&v).is_ok();
        let violator = members
            .iter()
            .copied()
            .find(|&v| reach[v as usize] == u32::MAX || reach[v as usize] >= params.cycle_reach);
        if let Some(vertex) = violator {
            let exact = graph.bfs_from_set(&core, None);
            let core_set: Vec<bool> = {
                let mut s = vec![false; n];
                for &v in &core {
                    s[v as usize] = true;
                }
                s
            };
            let path = witness_path(graph, &core, vertex, |w| {
                // Growth outside the core happens only through non-block
                // vertices that were actually absorbed.
                core_set[w as usize] || (!grower.is_block[w as usize] && in_members(w))
            });
            return Ok(BuildOutcome::Failure(BuildFailure::Condition2 {
                cycle: cycle.clone(),
                vertex,
                distance: exact[vertex as usize],
                path,
            }));
        }

        match grower.check_block_shape(&members, members.len(), "cycle block") {
            Ok(boundary) => {
                if let Err(fail) = grower.claim(&members, "cycle block") {
                    return Ok(BuildOutcome::Failure(fail));
                }
                grower.blocks.push(Block {
                    vertices: members,
                    kind: BlockKind::Unicyclic,
                    boundary,
                    cycle: cycle.clone(),
                });
            }
            Err(fail) => return Ok(BuildOutcome::Failure(fail)),
        }
    }

    // Tree blocks: the non-block component around each unassigned heavy
    // vertex, lowest id first.
    for u in 0..n as u32 {
        if grower.assigned[u as usize].is_some()
            || grower.is_block[u as usize]
            || table.agg[u as usize] <= heavy_threshold
        {
            continue;
        }
        let id = comp[u as usize].expect("non-block vertex has a component");
        let members = comps[id as usize].clone();
        if members.len() == 1 {
            return Ok(BuildOutcome::Failure(BuildFailure::Structural {
                message: format!(
                    "heavy vertex {u} is isolated among non-block vertices; it can be \
                     neither a singleton nor the seed of a tree block"
                ),
            }));
        }

        // Condition 3: everything absorbed stays within tree_reach of u.
        let reach = graph.bfs_from_set(&[u], Some(params.tree_reach));
        let violator = members
            .iter()
            .copied()
            .find(|&v| reach[v as usize] == u32::MAX || reach[v as usize] >= params.tree_reach);
        if let Some(vertex) = violator {
            let exact = graph.bfs_from_set(&[u], None);
            let in_members = |w: u32| members.binary_search(&w).is_ok();
            let path = witness_path(graph, &[u], vertex, |w| {
                !grower.is_block[w as usize] && in_members(w)
            });
            return Ok(BuildOutcome::Failure(BuildFailure::Condition3 {
                root: u,
                vertex,
                distance: exact[vertex as usize],
                path,
            }));
        }

        match grower.check_block_shape(&members, members.len() - 1, "tree block") {
            Ok(boundary) => {
                if let Err(fail) = grower.claim(&members, "tree block") {
                    return Ok(BuildOutcome::Failure(fail));
                }
                grower.blocks.push(Block {
                    vertices: members,
                    kind: BlockKind::Tree,
                    boundary,
                    cycle: Vec::new(),
                });
            }
            Err(fail) => return Ok(BuildOutcome::Failure(fail)),
        }
    }

    // Everything left is a singleton, and must be a block vertex.
    for v in 0..n as u32 {
        if grower.assigned[v as usize].is_some() {
            continue;
        }
        if !grower.is_block[v as usize] {
            return Ok(BuildOutcome::Failure(BuildFailure::Structural {
                message: format!(
                    "vertex {v} is neither a block vertex nor absorbed by any \
                     multi-vertex block"
                ),
            }));
        }
        let id = grower.blocks.len() as u32;
        grower.assigned[v as usize] = Some(id);
        grower.blocks.push(Block {
            vertices: vec![v],
            kind: BlockKind::Singleton,
            boundary: graph.neighbors(v).iter().map(|&(w, _)| w).collect(),
            cycle: Vec::new(),
        });
    }

    let partition = BlockPartition::from_parts(n, grower.blocks, params.clone())?;
    Ok(BuildOutcome::Partition(partition))
}

/// Re-derive every requirement of the decomposition from scratch: coverage,
/// block structure by kind, block-vertex boundaries attached at exactly one
/// inside vertex, buffered short cycles matching a fresh enumeration, and
/// pairwise cycle separation.
pub fn validate_partition(
    instance: &Instance,
    partition: &BlockPartition,
    params: &WeightParams,
) -> Result<()> {
    params.validate()?;
    let graph = &instance.graph;
    let n = instance.n();
    if partition.n != n {
        return Err(Error::structure(format!(
            "partition is over {} vertices, instance has {n}",
            partition.n
        )));
    }
    // Coverage and map consistency (from_parts re-derives the map; here we
    // check the stored one).
    let mut seen = vec![false; n];
    for (i, b) in partition.blocks.iter().enumerate() {
        if b.vertices.is_empty() {
            return Err(Error::structure(format!("block {i} is empty")));
        }
        if !b.vertices.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::structure(format!("block {i} is not sorted")));
        }
        for &v in &b.vertices {
            if v as usize >= n {
                return Err(Error::structure(format!("block {i} vertex {v} out of range")));
            }
            if seen[v as usize] {
                return Err(Error::structure(format!("vertex {v} in two blocks")));
            }
            seen[v as usize] = true;
            if partition.vertex_to_block[v as usize] as usize != i {
                return Err(Error::structure(format!(
                    "vertex map disagrees with block list at vertex {v}"
                )));
            }
        }
    }
    if seen.iter().any(|&s| !s) {
        return Err(Error::structure("some vertex is in no block"));
    }

    let table = aggregate_influence(instance, None)?;
    let analysis = BlockVertexAnalysis::new(instance, &table, params)?;
    let is_block = analysis.all();

    for (i, b) in partition.blocks.iter().enumerate() {
        let k = b.vertices.len();
        let edges = induced_edge_count(graph, &b.vertices);
        // Structure by kind.
        let expected = match (b.kind, k) {
            (BlockKind::Singleton, 1) => 0,
            (BlockKind::Singleton, _) => {
                return Err(Error::structure(format!("block {i}: singleton with {k} vertices")))
            }
            (BlockKind::Tree, _) if k >= 2 => k - 1,
            (BlockKind::Unicyclic, _) if k >= 3 => k,
            _ => {
                return Err(Error::structure(format!(
                    "block {i}: kind {} impossible with {k} vertices",
                    b.kind
                )))
            }
        };
        if edges != expected {
            return Err(Error::structure(format!(
                "block {i} ({}) has {edges} internal edges, expected {expected}",
                b.kind
            )));
        }
        if k > 1 {
            // Connectivity.
            let mut reached = vec![false; k];
            reached[0] = true;
            let mut stack = vec![b.vertices[0]];
            let mut count = 1;
            while let Some(v) = stack.pop() {
                for &(w, _) in graph.neighbors(v) {
                    if let Ok(j) = b.vertices.binary_search(&w) {
                        if !reached[j] {
                            reached[j] = true;
                            count += 1;
                            stack.push(w);
                        }
                    }
                }
            }
            if count != k {
                return Err(Error::structure(format!("block {i} is disconnected")));
            }
        }
        // Boundary: stored = recomputed, all block vertices, singly attached.
        let boundary = outer_boundary(graph, &b.vertices);
        if boundary != b.boundary {
            return Err(Error::structure(format!(
                "block {i}: stored boundary does not match the graph"
            )));
        }
        if k > 1 {
            for &z in &boundary {
                if !is_block[z as usize] {
                    return Err(Error::structure(format!(
                        "block {i}: boundary vertex {z} is not a block vertex"
                    )));
                }
                let inside = graph
                    .neighbors(z)
                    .iter()
                    .filter(|&&(w, _)| b.vertices.binary_search(&w).is_ok())
                    .count();
                if inside != 1 {
                    return Err(Error::structure(format!(
                        "block {i}: boundary vertex {z} has {inside} inside neighbors"
                    )));
                }
            }
        }
        match b.kind {
            BlockKind::Singleton => {
                if !is_block[b.vertices[0] as usize] {
                    return Err(Error::structure(format!(
                        "singleton vertex {} is not a block vertex",
                        b.vertices[0]
                    )));
                }
            }
            BlockKind::Tree => {
                if !b.cycle.is_empty() {
                    return Err(Error::structure(format!("tree block {i} stores a cycle")));
                }
            }
            BlockKind::Unicyclic => {
                // Recompute the unique cycle by peeling leaves.
                let mut deg: Vec<usize> = b
                    .vertices
                    .iter()
                    .map(|&v| {
                        graph
                            .neighbors(v)
                            .iter()
                            .filter(|&&(w, _)| b.vertices.binary_search(&w).is_ok())
                            .count()
                    })
                    .collect();
                let mut removed = vec![false; k];
                let mut queue: Vec<usize> = (0..k).filter(|&j| deg[j] == 1).collect();
                while let Some(j) = queue.pop() {
                    removed[j] = true;
                    for &(w, _) in graph.neighbors(b.vertices[j]) {
                        if let Ok(wj) = b.vertices.binary_search(&w) {
                            if !removed[wj] {
                                deg[wj] -= 1;
                                if deg[wj] == 1 {
                                    queue.push(wj);
                                }
                            }
                        }
                    }
                }
                let core_set: Vec<u32> = (0..k)
                    .filter(|&j| !removed[j])
                    .map(|j| b.vertices[j])
                    .collect();
                // Walk the core to put it in cyclic order.
                let mut ordered = vec![core_set[0]];
                let mut prev = u32::MAX;
                loop {
                    let cur = *ordered.last().unwrap();
                    let next = graph
                        .neighbors(cur)
                        .iter()
                        .map(|&(w, _)| w)
                        .find(|&w| w != prev && core_set.binary_search(&w).is_ok());
                    match next {
                        Some(w) if w == core_set[0] && ordered.len() >= 3 => break,
                        Some(w) => {
                            prev = cur;
                            ordered.push(w);
                        }
                        None => {
                            return Err(Error::structure(format!(
                                "block {i}: cycle core does not close"
                            )))
                        }
                    }
                }
                if ordered.len() != core_set.len() {
                    return Err(Error::structure(format!(
                        "block {i}: cycle core is not a single cycle"
                    )));
                }
                let canonical = canonicalize_cycle(&ordered);
                if canonical != b.cycle {
                    return Err(Error::structure(format!(
                        "block {i}: stored cycle {:?} differs from derived {:?}",
                        b.cycle, canonical
                    )));
                }
                if b.cycle.len() > params.short_cycle_max_len as usize {
                    return Err(Error::structure(format!(
                        "block {i}: cycle length {} exceeds the short-cycle limit {}",
                        b.cycle.len(),
                        params.short_cycle_max_len
                    )));
                }
                // Cycle kept at least the buffer away from the boundary.
                if !boundary.is_empty() {
                    let dist = graph.bfs_from_set(&b.cycle, None);
                    let min = boundary
                        .iter()
                        .map(|&z| dist[z as usize])
                        .min()
                        .unwrap();
                    if min < params.cycle_buffer_radius {
                        return Err(Error::structure(format!(
                            "block {i}: boundary at distance {min} from the cycle, \
                             buffer requires >= {}",
                            params.cycle_buffer_radius
                        )));
                    }
                }
            }
        }
    }

    // Global short-cycle requirements: pairwise separation, and every short
    // cycle is the cycle of the unicyclic block containing it.
    let cycles = find_short_cycles(graph, params.short_cycle_max_len);
    for (ci, c) in cycles.iter().enumerate() {
        let bid = partition.block_of(c[0]);
        let block = partition.block(bid);
        if block.kind != BlockKind::Unicyclic || block.cycle != *c {
            return Err(Error::structure(format!(
                "short cycle {c:?} is not the cycle of a unicyclic block"
            )));
        }
        let dist = graph.bfs_from_set(c, Some(params.cycle_separation - 1));
        for (cj, other) in cycles.iter().enumerate() {
            if cj == ci {
                continue;
            }
            if let Some(d) = other
                .iter()
                .map(|&v| dist[v as usize])
                .filter(|&d| d != u32::MAX)
                .min()
            {
                return Err(Error::structure(format!(
                    "short cycles {c:?} and {other:?} at distance {d} < separation {}",
                    params.cycle_separation
                )));
            }
        }
    }
    Ok(())
}
