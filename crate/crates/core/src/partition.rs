//! Balanced min-cut partitioning into client subgraphs.
//!
//! A seeded Fennel-style streaming pass assigns nodes in BFS order, trading
//! neighbour affinity against a convex size penalty. Boundary refinement then
//! moves single nodes to the neighbouring part with the largest positive cut
//! reduction, subject to the balance window, falling back to pairwise swaps
//! when no single move helps, until a pass changes nothing.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng;

pub const DEFAULT_IMBALANCE: f64 = 0.05;
const MAX_REFINEMENT_PASSES: usize = 64;
const FENNEL_GAMMA: f64 = 1.5;
const RESTREAM_PASSES: usize = 30;

/// One client's share of the graph: global node ids (ascending) and the edges
/// among them in local ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientGraph {
    pub nodes: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
}

impl ClientGraph {
    pub fn local_of(&self, global: usize) -> Option<usize> {
        self.nodes.binary_search(&global).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub k: usize,
    pub cut_edges: Vec<(usize, usize)>,
    pub clients: Vec<ClientGraph>,
    /// Cut size after the streaming pass, then after every refinement pass.
    pub cut_history: Vec<usize>,
    pub num_edges: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MissingEdgeReport {
    pub count: usize,
    /// Fraction of all edges, in `[0, 1]`.
    pub fraction: f64,
}

impl Partition {
    pub fn client_sizes(&self) -> Vec<usize> {
        self.clients.iter().map(|c| c.nodes.len()).collect()
    }

    /// Tab-separated `node-id<TAB>client-id`, one line per node, using the
    /// graph's external ids.
    pub fn write_assignment(&self, g: &Graph, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (v, &c) in self.assignment.iter().enumerate() {
            writeln!(f, "{}\t{}", g.ids()[v], c)?;
        }
        f.flush()?;
        Ok(())
    }
}

pub fn missing_edge_report(p: &Partition) -> MissingEdgeReport {
    let count = p.cut_edges.len();
    MissingEdgeReport {
        count,
        fraction: if p.num_edges == 0 {
            0.0
        } else {
            count as f64 / p.num_edges as f64
        },
    }
}

/// Size window `[lo, hi]` allowed for every part.
pub fn balance_bounds(n: usize, k: usize, imbalance: f64) -> (usize, usize) {
    let ideal = n as f64 / k as f64;
    let slack = imbalance * ideal;
    let hi = (n.div_ceil(k)).max((ideal + slack + 1e-9).floor() as usize);
    let lo = (n / k).min((ideal - slack - 1e-9).ceil().max(0.0) as usize);
    (lo, hi)
}

pub fn partition_graph(g: &Graph, k: usize, seed: u64, imbalance: f64) -> Result<Partition> {
    partition_edges(g.n(), g.edges(), k, seed, imbalance)
}

pub fn partition_edges(
    n: usize,
    edges: &[(usize, usize)],
    k: usize,
    seed: u64,
    imbalance: f64,
) -> Result<Partition> {
    if k == 0 || k > n {
        return Err(Error::Config(format!("cannot split {n} nodes into {k} clients")));
    }
    if !(0.0..1.0).contains(&imbalance) {
        return Err(Error::Config(format!("imbalance {imbalance} outside [0, 1)")));
    }
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    let (lo, hi) = balance_bounds(n, k, imbalance);
    let mut rng = rng::stream(seed, &[rng::tag::PARTITION]);

    let mut part = stream_assign(&adj, edges.len(), k, hi, &mut rng);
    rebalance(&adj, &mut part, k, lo);
    let mut history = vec![cut_size(edges, &part)];
    for _ in 0..MAX_REFINEMENT_PASSES {
        let mut moved = refine_pass(&adj, &mut part, k, lo, hi);
        if moved == 0 {
            // single moves are stuck, possibly by the balance window
            moved = swap_pass(&adj, &mut part, k);
        }
        history.push(cut_size(edges, &part));
        if moved == 0 {
            break;
        }
    }
    Ok(assemble(n, edges, k, part, history))
}

fn cut_size(edges: &[(usize, usize)], part: &[usize]) -> usize {
    edges.iter().filter(|&&(u, v)| part[u] != part[v]).count()
}

fn stream_assign(
    adj: &[Vec<usize>],
    m: usize,
    k: usize,
    cap: usize,
    rng: &mut rng::Rng,
) -> Vec<usize> {
    let n = adj.len();
    const NONE: usize = usize::MAX;
    let mut part = vec![NONE; n];
    let mut sizes = vec![0usize; k];
    let alpha = (k as f64).sqrt() * m.max(1) as f64 / (n as f64).powf(FENNEL_GAMMA);

    let mut starts: Vec<usize> = (0..n).filter(|&v| !adj[v].is_empty()).collect();
    starts.shuffle(rng);
    let mut queued = vec![false; n];
    let mut counts = vec![0usize; k];
    let mut visit_order = Vec::with_capacity(n);
    for &s in &starts {
        if queued[s] {
            continue;
        }
        queued[s] = true;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            counts.iter_mut().for_each(|c| *c = 0);
            for &u in &adj[v] {
                if part[u] != NONE {
                    counts[part[u]] += 1;
                }
            }
            let mut best = NONE;
            let mut best_score = f64::NEG_INFINITY;
            for i in 0..k {
                if sizes[i] >= cap {
                    continue;
                }
                let score = counts[i] as f64
                    - alpha * FENNEL_GAMMA * (sizes[i] as f64).powf(FENNEL_GAMMA - 1.0);
                if score > best_score {
                    best_score = score;
                    best = i;
                }
            }
            part[v] = best;
            sizes[best] += 1;
            visit_order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !queued[u]).collect();
            next.sort_unstable();
            next.dedup();
            if next.len() > 1 {
                let offset = rng.random_range(0..next.len());
                next.rotate_left(offset);
            }
            for u in next {
                queued[u] = true;
                queue.push_back(u);
            }
        }
    }

    // Restreaming: revisit every streamed node with full knowledge of its
    // neighbours' current parts.
    let streamed: Vec<usize> = visit_order.clone();
    for pass in 0..RESTREAM_PASSES {
        let alpha = alpha * (0.2 + 0.8 * (pass + 1) as f64 / RESTREAM_PASSES as f64);
        for &v in &streamed {
            let from = part[v];
            sizes[from] -= 1;
            counts.iter_mut().for_each(|c| *c = 0);
            for &u in &adj[v] {
                counts[part[u]] += 1;
            }
            let mut best = from;
            let mut best_score = f64::NEG_INFINITY;
            for i in 0..k {
                if sizes[i] >= cap {
                    continue;
                }
                let score = counts[i] as f64
                    - alpha * FENNEL_GAMMA * (sizes[i] as f64).powf(FENNEL_GAMMA - 1.0);
                if score > best_score {
                    best_score = score;
                    best = i;
                }
            }
            part[v] = best;
            sizes[best] += 1;
        }
    }

    // Isolated nodes: round-robin over parts that still have room.
    let mut cursor = 0;
    for v in 0..n {
        if part[v] != NONE {
            continue;
        }
        while sizes[cursor % k] >= cap {
            cursor += 1;
        }
        part[v] = cursor % k;
        sizes[cursor % k] += 1;
        cursor += 1;
    }
    part
}

/// Fills parts below `lo` by pulling the best-connected node from the largest
/// part. Only needed when the streaming pass leaves a part short.
fn rebalance(adj: &[Vec<usize>], part: &mut [usize], k: usize, lo: usize) {
    let mut sizes = vec![0usize; k];
    for &p in part.iter() {
        sizes[p] += 1;
    }
    while let Some(small) = (0..k).find(|&i| sizes[i] < lo) {
        let large = (0..k).max_by_key(|&i| (sizes[i], std::cmp::Reverse(i))).unwrap();
        let mut best: Option<(i64, usize)> = None;
        for v in (0..part.len()).filter(|&v| part[v] == large) {
            let into = adj[v].iter().filter(|&&u| part[u] == small).count() as i64;
            let stay = adj[v].iter().filter(|&&u| part[u] == large).count() as i64;
            let gain = into - stay;
            if best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, v));
            }
        }
        let (_, v) = best.expect("largest part is non-empty");
        part[v] = small;
        sizes[large] -= 1;
        sizes[small] += 1;
    }
}

/// One sweep of single-node moves with strictly positive gain. Returns the
/// number of moves made.
fn refine_pass(adj: &[Vec<usize>], part: &mut [usize], k: usize, lo: usize, hi: usize) -> usize {
    let mut sizes = vec![0usize; k];
    for &p in part.iter() {
        sizes[p] += 1;
    }
    let mut counts = vec![0i64; k];
    let mut moved = 0;
    for v in 0..part.len() {
        let from = part[v];
        if sizes[from] <= lo {
            continue;
        }
        counts.iter_mut().for_each(|c| *c = 0);
        for &u in &adj[v] {
            counts[part[u]] += 1;
        }
        let mut best = from;
        let mut best_gain = 0i64;
        for t in 0..k {
            if t == from || sizes[t] >= hi {
                continue;
            }
            let gain = counts[t] - counts[from];
            if gain > best_gain {
                best_gain = gain;
                best = t;
            }
        }
        if best != from {
            part[v] = best;
            sizes[from] -= 1;
            sizes[best] += 1;
            moved += 1;
        }
    }
    moved
}

/// One sweep of pairwise boundary swaps with strictly positive gain. Sizes are
/// unchanged, so this escapes optima where the balance window blocks every
/// single move. Returns the number of swaps made.
fn swap_pass(adj: &[Vec<usize>], part: &mut [usize], k: usize) -> usize {
    let link = |v: usize, t: usize, part: &[usize]| adj[v].iter().filter(|&&u| part[u] == t).count() as i64;
    let boundary: Vec<usize> = (0..part.len())
        .filter(|&v| adj[v].iter().any(|&u| part[u] != part[v]))
        .collect();
    let mut swaps = 0;
    for (i, &u) in boundary.iter().enumerate() {
        let a = part[u];
        let mut counts = vec![0i64; k];
        for &w in &adj[u] {
            counts[part[w]] += 1;
        }
        let mut best: Option<(i64, usize)> = None;
        for &v in &boundary[i + 1..] {
            let b = part[v];
            if b == a {
                continue;
            }
            let shared = adj[u].contains(&v) as i64;
            let gain = counts[b] - counts[a] + link(v, a, part) - link(v, b, part) - 2 * shared;
            if gain > best.map_or(0, |(g, _)| g) {
                best = Some((gain, v));
            }
        }
        if let Some((_, v)) = best {
            part[u] = part[v];
            part[v] = a;
            swaps += 1;
        }
    }
    swaps
}

fn assemble(
    n: usize,
    edges: &[(usize, usize)],
    k: usize,
    part: Vec<usize>,
    cut_history: Vec<usize>,
) -> Partition {
    let mut nodes = vec![Vec::new(); k];
    for v in 0..n {
        nodes[part[v]].push(v);
    }
    let mut local = vec![0usize; n];
    for list in &nodes {
        for (i, &v) in list.iter().enumerate() {
            local[v] = i;
        }
    }
    let mut client_edges = vec![Vec::new(); k];
    let mut cut_edges = Vec::new();
    for &(u, v) in edges {
        if part[u] == part[v] {
            client_edges[part[u]].push((local[u], local[v]));
        } else {
            cut_edges.push((u, v));
        }
    }
    let clients = nodes
        .into_iter()
        .zip(client_edges)
        .map(|(nodes, edges)| ClientGraph { nodes, edges })
        .collect();
    Partition {
        assignment: part,
        k,
        cut_edges,
        clients,
        cut_history,
        num_edges: edges.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_client_has_no_cut() {
        let edges = vec![(0, 1), (1, 2), (2, 0), (2, 3)];
        let p = partition_edges(4, &edges, 1, 9, DEFAULT_IMBALANCE).unwrap();
        assert!(p.cut_edges.is_empty());
        assert_eq!(p.clients[0].nodes, vec![0, 1, 2, 3]);
        let r = missing_edge_report(&p);
        assert_eq!((r.count, r.fraction), (0, 0.0));
    }

    #[test]
    fn too_many_clients() {
        assert!(matches!(
            partition_edges(3, &[(0, 1)], 4, 0, 0.05),
            Err(Error::Config(_))
        ));
        assert!(partition_edges(3, &[(0, 1)], 0, 0, 0.05).is_err());
    }

    #[test]
    fn bounds_allow_uneven_division() {
        assert_eq!(balance_bounds(4, 2, 0.0), (2, 2));
        assert_eq!(balance_bounds(5, 2, 0.0), (2, 3));
        assert_eq!(balance_bounds(100, 5, 0.05), (19, 21));
    }

    #[test]
    fn isolated_nodes_round_robin() {
        let p = partition_edges(6, &[], 3, 1, 0.0).unwrap();
        assert_eq!(p.assignment, vec![0, 1, 2, 0, 1, 2]);
    }
}
