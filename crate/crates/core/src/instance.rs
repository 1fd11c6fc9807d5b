//! Problem instances: sparse Erdos-Renyi graphs with Gaussian couplings.
//!
//! `gen_graph` samples G(n, p) with p = min(1, d/n) bit-reproducibly from a
//! seed; `gen_couplings` attaches i.i.d. standard normal couplings in edge-id
//! order from an independent stream, so regenerating a graph never perturbs
//! couplings and vice versa. Instances serialize to a line-oriented text
//! format with hex-float numerics (see `docs/formats.md`).

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hexfloat;
use crate::rng;

/// Critical inverse temperature `beta_c(d) = sqrt(2*pi) / d`: below it the
/// mean edge influence satisfies `d * E[Gamma] < 1`.
pub fn beta_c(d: f64) -> f64 {
    (2.0 * std::f64::consts::PI).sqrt() / d
}

/// Undirected simple graph on vertices `0..n`. Edges are held
/// lexicographically (`u < v`) and an edge's id is its position in the list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(u32, u32)>,
    /// Per vertex: `(neighbor, edge id)` sorted by neighbor.
    adj: Vec<Vec<(u32, u32)>>,
}

impl Graph {
    /// Build from an edge list, validating simplicity and id ranges. The
    /// edge list is canonicalized to lexicographic order.
    pub fn from_edges(n: usize, mut edges: Vec<(u32, u32)>) -> Result<Self> {
        for e in edges.iter_mut() {
            let (u, v) = *e;
            if u as usize >= n || v as usize >= n {
                return Err(Error::structure(format!(
                    "edge ({u}, {v}) out of range for n = {n}"
                )));
            }
            if u == v {
                return Err(Error::structure(format!("self-loop at vertex {u}")));
            }
            if u > v {
                *e = (v, u);
            }
        }
        edges.sort_unstable();
        if edges.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::structure("duplicate edge"));
        }
        let mut adj = vec![Vec::new(); n];
        for (id, &(u, v)) in edges.iter().enumerate() {
            adj[u as usize].push((v, id as u32));
            adj[v as usize].push((u, id as u32));
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
        }
        Ok(Graph { n, edges, adj })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn edge(&self, id: u32) -> (u32, u32) {
        self.edges[id as usize]
    }

    /// `(neighbor, edge id)` pairs of `v`, sorted by neighbor id.
    pub fn neighbors(&self, v: u32) -> &[(u32, u32)] {
        &self.adj[v as usize]
    }

    pub fn degree(&self, v: u32) -> usize {
        self.adj[v as usize].len()
    }

    /// Edge id joining `u` and `v`, if present.
    pub fn edge_between(&self, u: u32, v: u32) -> Option<u32> {
        let a = &self.adj[u as usize];
        a.binary_search_by_key(&v, |&(w, _)| w)
            .ok()
            .map(|i| a[i].1)
    }

    /// BFS distances from a set of sources; `u32::MAX` marks vertices beyond
    /// `radius` (or unreachable). Multi-source: sources are at distance 0.
    pub fn bfs_from_set(&self, sources: &[u32], radius: Option<u32>) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.n];
        let mut queue = std::collections::VecDeque::new();
        for &s in sources {
            if dist[s as usize] != 0 {
                dist[s as usize] = 0;
                queue.push_back(s);
            }
        }
        while let Some(v) = queue.pop_front() {
            let dv = dist[v as usize];
            if let Some(r) = radius {
                if dv >= r {
                    continue;
                }
            }
            for &(w, _) in self.neighbors(v) {
                if dist[w as usize] == u32::MAX {
                    dist[w as usize] = dv + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Lower bound on the diameter (max over components) by the double-sweep
    /// heuristic: BFS from a vertex, then BFS from the farthest vertex found.
    /// Used only to cap partition radii at a graph-scale quantity.
    pub fn diameter_lower_bound(&self) -> u32 {
        let mut seen = vec![false; self.n];
        let mut best = 0u32;
        for s in 0..self.n as u32 {
            if seen[s as usize] {
                continue;
            }
            let d1 = self.bfs_from_set(&[s], None);
            let mut far = s;
            let mut far_d = 0u32;
            for v in 0..self.n as u32 {
                if d1[v as usize] != u32::MAX {
                    seen[v as usize] = true;
                    if d1[v as usize] > far_d {
                        far_d = d1[v as usize];
                        far = v;
                    }
                }
            }
            let d2 = self.bfs_from_set(&[far], None);
            let ecc = d2
                .iter()
                .filter(|&&x| x != u32::MAX)
                .max()
                .copied()
                .unwrap_or(0);
            best = best.max(ecc).max(far_d);
        }
        best
    }
}

/// A graph with couplings and an inverse temperature.
///
/// `beta >= 0`; `beta == 0` is the degenerate infinite-temperature case where
/// couplings are irrelevant (every configuration has equal weight), kept legal
/// because diagnostics use it as an exactly solvable reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub graph: Graph,
    couplings: Vec<f64>,
    beta: f64,
}

impl Instance {
    pub fn new(graph: Graph, couplings: Vec<f64>, beta: f64) -> Result<Self> {
        if couplings.len() != graph.m() {
            return Err(Error::structure(format!(
                "coupling count {} does not match edge count {}",
                couplings.len(),
                graph.m()
            )));
        }
        if couplings.iter().any(|j| !j.is_finite()) {
            return Err(Error::invalid("non-finite coupling"));
        }
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::invalid(format!("beta must be finite and >= 0, got {beta}")));
        }
        Ok(Instance {
            graph,
            couplings,
            beta,
        })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn coupling(&self, edge_id: u32) -> f64 {
        self.couplings[edge_id as usize]
    }
}

/// Sample `G(n, p)` with `p = min(1, d/n)`. Every one of the `C(n, 2)`
/// vertex pairs is an edge independently with probability `p`; pairs are
/// scanned in lexicographic order with geometric gap skipping, so the cost is
/// `O(n + m)` and the output is a pure function of `(n, d, seed)`.
pub fn gen_graph(n: usize, d: f64, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    if !d.is_finite() || d < 0.0 {
        return Err(Error::invalid(format!("d must be finite and >= 0, got {d}")));
    }
    let total: u64 = (n as u64) * (n as u64 - 1) / 2;
    let p = (d / n as f64).min(1.0);
    let mut edges = Vec::new();
    if p >= 1.0 {
        for u in 0..n as u32 {
            for v in (u + 1)..n as u32 {
                edges.push((u, v));
            }
        }
    } else if p > 0.0 && total > 0 {
        let mut rng = rng::purpose_stream(seed, rng::PURPOSE_GRAPH);
        let geom = Geometric::new(p)
            .map_err(|e| Error::invalid(format!("bad edge probability: {e}")))?;
        // Incremental unranking of pair index k -> (u, v), u < v.
        let mut row: u64 = 0; // current u
        let mut row_start: u64 = 0; // first pair index in row u
        let nm1 = n as u64 - 1;
        let mut k: u64 = 0;
        loop {
            let gap = geom.sample(&mut rng);
            k = match k.checked_add(gap) {
                Some(v) => v,
                None => break,
            };
            if k >= total {
                break;
            }
            while k >= row_start + (nm1 - row) {
                row_start += nm1 - row;
                row += 1;
            }
            let u = row as u32;
            let v = (row + 1 + (k - row_start)) as u32;
            edges.push((u, v));
            k += 1;
        }
    }
    Graph::from_edges(n, edges)
}

/// I.i.d. standard normal couplings, one per edge in edge-id order, from the
/// couplings stream of `seed`.
pub fn gen_couplings(graph: &Graph, seed: u64) -> Vec<f64> {
    let mut rng = rng::purpose_stream(seed, rng::PURPOSE_COUPLINGS);
    (0..graph.m())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Generate a full instance: topology and couplings from disjoint streams of
/// the same seed.
pub fn gen(n: usize, d: f64, beta: f64, seed: u64) -> Result<Instance> {
    let graph = gen_graph(n, d, seed)?;
    let couplings = gen_couplings(&graph, seed);
    Instance::new(graph, couplings, beta)
}

/// Which bound a coupling magnitude violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSide {
    BelowLower,
    AboveUpper,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingViolation {
    pub edge_id: u32,
    pub coupling: f64,
    pub side: BoundSide,
}

/// Report of the coupling-magnitude window check: `n^(-7/3) <= |J_e| <=
/// 10 * sqrt(ln n)` for every edge. The window is what high-probability
/// instances satisfy at large n; at small n violations are ordinary and this
/// is a report, not an error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingBoundsReport {
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub violations: Vec<CouplingViolation>,
}

impl CouplingBoundsReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_couplings(instance: &Instance) -> CouplingBoundsReport {
    let n = instance.n() as f64;
    let lower = n.powf(-7.0 / 3.0);
    let upper = 10.0 * n.ln().max(0.0).sqrt();
    let mut violations = Vec::new();
    for (id, &j) in instance.couplings().iter().enumerate() {
        let mag = j.abs();
        if mag < lower {
            violations.push(CouplingViolation {
                edge_id: id as u32,
                coupling: j,
                side: BoundSide::BelowLower,
            });
        } else if mag > upper {
            violations.push(CouplingViolation {
                edge_id: id as u32,
                coupling: j,
                side: BoundSide::AboveUpper,
            });
        }
    }
    CouplingBoundsReport {
        lower_bound: lower,
        upper_bound: upper,
        violations,
    }
}

/// Write an instance in the text format: header `n beta`, then one `u v J`
/// line per edge in edge-id order, numerics hex-encoded for exactness.
pub fn save<W: Write>(instance: &Instance, mut w: W) -> Result<()> {
    writeln!(
        w,
        "{} {}",
        instance.n(),
        hexfloat::encode(instance.beta())?
    )?;
    for (id, &(u, v)) in instance.graph.edges().iter().enumerate() {
        writeln!(w, "{u} {v} {}", hexfloat::encode(instance.couplings()[id])?)?;
    }
    Ok(())
}

pub fn save_path(instance: &Instance, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    save(instance, std::io::BufWriter::new(f))
}

/// Read the format written by [`save`]. Malformed lines report their 1-based
/// line number and the offending field; structural problems (bad ids,
/// duplicate edges) are structural errors.
pub fn load<R: Read>(r: R) -> Result<Instance> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty file, expected header `n beta`".into(),
        })?;
    let header = header?;
    let mut parts = header.split_whitespace();
    let n: usize = parts
        .next()
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: "missing vertex count".into(),
        })?
        .parse()
        .map_err(|_| Error::Parse {
            line: 1,
            msg: "vertex count is not an integer".into(),
        })?;
    let beta = hexfloat::decode(parts.next().ok_or_else(|| Error::Parse {
        line: 1,
        msg: "missing beta".into(),
    })?)
    .map_err(|e| Error::Parse {
        line: 1,
        msg: format!("beta: {e}"),
    })?;
    if parts.next().is_some() {
        return Err(Error::Parse {
            line: 1,
            msg: "trailing fields after `n beta`".into(),
        });
    }
    let mut edges = Vec::new();
    let mut couplings = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let mut field = |name: &str| {
            parts.next().ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("missing field `{name}`"),
            })
        };
        let u: u32 = field("u")?.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: "field `u` is not an integer".into(),
        })?;
        let v: u32 = field("v")?.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: "field `v` is not an integer".into(),
        })?;
        let j = hexfloat::decode(field("J")?).map_err(|e| Error::Parse {
            line: lineno,
            msg: format!("field `J`: {e}"),
        })?;
        if parts.next().is_some() {
            return Err(Error::Parse {
                line: lineno,
                msg: "trailing fields after `u v J`".into(),
            });
        }
        edges.push((u, v));
        couplings.push(j);
    }
    // Loader accepts edges in any order; ids follow file order only when the
    // file is already lexicographic (as written by `save`), otherwise the
    // canonicalization reorders couplings alongside their edges.
    let order: Vec<usize> = {
        let mut idx: Vec<usize> = (0..edges.len()).collect();
        idx.sort_by_key(|&i| {
            let (u, v) = edges[i];
            (u.min(v), u.max(v))
        });
        idx
    };
    let edges_sorted: Vec<(u32, u32)> = order.iter().map(|&i| edges[i]).collect();
    let couplings_sorted: Vec<f64> = order.iter().map(|&i| couplings[i]).collect();
    let graph = Graph::from_edges(n, edges_sorted)?;
    Instance::new(graph, couplings_sorted, beta)
}

pub fn load_path(path: &Path) -> Result<Instance> {
    let f = std::fs::File::open(path)?;
    load(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_vertex_has_no_edges() {
        let g = gen_graph(1, 5.0, 3).unwrap();
        assert_eq!(g.n(), 1);
        assert_eq!(g.m(), 0);
    }

    #[test]
    fn dense_request_clamps_to_complete_graph() {
        for seed in 0..20 {
            let g = gen_graph(2, 4.0, seed).unwrap();
            assert_eq!(g.m(), 1, "p = min(1, 4/2) = 1 forces the edge");
        }
        let g = gen_graph(5, 10.0, 0).unwrap();
        assert_eq!(g.m(), 10);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen(200, 3.0, 0.7, 42).unwrap();
        let b = gen(200, 3.0, 0.7, 42).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.couplings(), b.couplings());
        let c = gen(200, 3.0, 0.7, 43).unwrap();
        assert_ne!(a.graph.edges(), c.graph.edges());
    }

    #[test]
    fn edge_count_matches_binomial_mean() {
        // n = 100, d = 5: E[m] = C(100,2) * 0.05 = 247.5.
        let n = 100;
        let seeds = 1000u64;
        let mut total = 0u64;
        for seed in 0..seeds {
            total += gen_graph(n, 5.0, seed).unwrap().m() as u64;
        }
        let mean = total as f64 / seeds as f64;
        let p = 0.05;
        let pairs = (n * (n - 1) / 2) as f64;
        let expect = pairs * p;
        let se = (pairs * p * (1.0 - p) / seeds as f64).sqrt();
        assert!(
            (mean - expect).abs() <= 3.0 * se,
            "mean {mean} vs {expect} +- {}",
            3.0 * se
        );
    }

    #[test]
    fn coupling_moments_match_standard_normal() {
        let g = gen_graph(2000, 1000.0, 7).unwrap(); // ~ 1e6 edges
        let j = gen_couplings(&g, 7);
        let m = j.len() as f64;
        assert!(m > 8e5);
        let mean = j.iter().sum::<f64>() / m;
        let var = j.iter().map(|x| x * x).sum::<f64>() / m - mean * mean;
        let abs_mean = j.iter().map(|x| x.abs()).sum::<f64>() / m;
        let pos_frac = j.iter().filter(|&&x| x > 0.0).count() as f64 / m;
        assert!(mean.abs() < 3.0 / m.sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 3.0 * 1.5 / m.sqrt(), "var {var}");
        let half_normal_mean = (2.0 / std::f64::consts::PI).sqrt();
        assert!(
            (abs_mean - half_normal_mean).abs() < 3.0 * 0.7 / m.sqrt(),
            "E|J| {abs_mean} vs {half_normal_mean}"
        );
        assert!((pos_frac - 0.5).abs() < 3.0 * 0.5 / m.sqrt());
    }

    #[test]
    fn coupling_regeneration_is_stable() {
        let g = gen_graph(50, 2.0, 11).unwrap();
        assert_eq!(gen_couplings(&g, 11), gen_couplings(&g, 11));
    }

    #[test]
    fn validate_couplings_flags_violations() {
        let g = Graph::from_edges(10, vec![(0, 1), (1, 2), (2, 3)]).unwrap();
        let lower = 10f64.powf(-7.0 / 3.0);
        let upper = 10.0 * 10f64.ln().sqrt();
        let inst =
            Instance::new(g, vec![0.5, lower / 2.0, -(upper * 2.0)], 1.0).unwrap();
        let report = validate_couplings(&inst);
        assert!(!report.pass());
        assert_eq!(report.violations.len(), 2);
        assert_eq!(report.violations[0].edge_id, 1);
        assert_eq!(report.violations[0].side, BoundSide::BelowLower);
        assert_eq!(report.violations[1].edge_id, 2);
        assert_eq!(report.violations[1].side, BoundSide::AboveUpper);
    }

    #[test]
    fn validate_couplings_passes_in_window() {
        let g = Graph::from_edges(100, vec![(0, 1), (5, 9)]).unwrap();
        let inst = Instance::new(g, vec![0.3, -1.2], 0.5).unwrap();
        assert!(validate_couplings(&inst).pass());
    }

    #[test]
    fn zero_coupling_is_flagged() {
        let g = Graph::from_edges(4, vec![(0, 1)]).unwrap();
        let inst = Instance::new(g, vec![0.0], 1.0).unwrap();
        assert!(!validate_couplings(&inst).pass());
    }

    #[test]
    fn io_round_trip_is_bit_exact() {
        for seed in [0u64, 1, 2] {
            let inst = gen(60, 3.0, 0.8375, seed).unwrap();
            let mut buf = Vec::new();
            save(&inst, &mut buf).unwrap();
            let back = load(&buf[..]).unwrap();
            assert_eq!(back.n(), inst.n());
            assert_eq!(back.beta().to_bits(), inst.beta().to_bits());
            assert_eq!(back.graph.edges(), inst.graph.edges());
            assert_eq!(back.couplings().len(), inst.couplings().len());
            for (a, b) in back.couplings().iter().zip(inst.couplings()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn loader_reports_line_and_field() {
        let bad = "4 0x1p+0\n0 1 zzz\n";
        match load(bad.as_bytes()) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains('J'), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let missing = "4 0x1p+0\n0 1\n";
        assert!(matches!(
            load(missing.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn loader_rejects_structural_problems() {
        // Out-of-range endpoint.
        let bad = "2 0x1p+0\n0 5 0x1p+0\n";
        assert!(matches!(load(bad.as_bytes()), Err(Error::Structure(_))));
        // Duplicate edge.
        let dup = "3 0x1p+0\n0 1 0x1p+0\n1 0 0x1p+0\n";
        assert!(matches!(load(dup.as_bytes()), Err(Error::Structure(_))));
        // Self-loop.
        let loopy = "3 0x1p+0\n1 1 0x1p+0\n";
        assert!(matches!(load(loopy.as_bytes()), Err(Error::Structure(_))));
    }

    #[test]
    fn bfs_and_diameter_helpers() {
        // Path 0-1-2-3 plus isolated 4.
        let g = Graph::from_edges(5, vec![(0, 1), (1, 2), (2, 3)]).unwrap();
        let d = g.bfs_from_set(&[0], None);
        assert_eq!(&d[..4], &[0, 1, 2, 3]);
        assert_eq!(d[4], u32::MAX);
        let capped = g.bfs_from_set(&[0], Some(1));
        assert_eq!(capped[2], u32::MAX);
        assert_eq!(g.diameter_lower_bound(), 3);
    }

    #[test]
    fn beta_c_value() {
        assert!((beta_c(10.0) - 0.2506628274631).abs() < 1e-12);
    }
}
