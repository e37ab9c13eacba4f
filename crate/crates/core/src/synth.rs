//! Synthetic graphs with known structure.
//!
//! [`cora_like`] produces a citation-style graph with Cora's published size
//! (2485 nodes in one component, 5069 undirected edges, 7 classes, 1433 binary
//! bag-of-words features). Nodes live in a latent plane where each class is a
//! Gaussian blob; most links join latent neighbours and a small share are
//! long-range, which gives the graph the locality that min-cut partitioners
//! exploit on real citation data.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::graph::Graph;
use crate::kernel::Matrix;
use crate::rng;

#[derive(Debug, Clone)]
pub struct CoraLikeParams {
    pub class_weights: Vec<f64>,
    pub nodes: usize,
    pub edges: usize,
    pub dim: usize,
    pub words_per_node: usize,
    /// Words per class-specific vocabulary block.
    pub topic_words: usize,
    /// Probability that a word is drawn from the node's class vocabulary.
    pub topic_share: f64,
    /// Spread of sub-community centres around their class centre, relative to
    /// the spacing of class centres.
    pub blob_spread: f64,
    /// Mean sub-community size.
    pub community_size: usize,
    /// Spread of nodes around their sub-community centre.
    pub community_spread: f64,
    /// Share of non-tree edges that join a random node of the same class.
    pub class_links: f64,
    /// Share of non-tree edges that join a uniformly random node.
    pub long_range: f64,
    /// Probability that a node's label is redrawn uniformly, independent of
    /// the community it sits in.
    pub label_noise: f64,
    /// Candidate pool for local links.
    pub local_neighbours: usize,
}

impl Default for CoraLikeParams {
    fn default() -> Self {
        CoraLikeParams {
            // Class frequencies of the public Cora release.
            class_weights: vec![351.0, 217.0, 418.0, 818.0, 426.0, 298.0, 180.0],
            nodes: 2485,
            edges: 5069,
            dim: 1433,
            words_per_node: 18,
            topic_words: 120,
            topic_share: 0.28,
            blob_spread: 0.6,
            community_size: 40,
            community_spread: 0.025,
            class_links: 0.015,
            long_range: 0.006,
            label_noise: 0.10,
            local_neighbours: 5,
        }
    }
}

pub fn cora_like(seed: u64) -> Result<Graph> {
    latent_graph(&CoraLikeParams::default(), seed)
}

fn class_sizes(weights: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut sizes: Vec<usize> = weights
        .iter()
        .map(|w| (w / total * n as f64).floor() as usize)
        .collect();
    let mut short = n - sizes.iter().sum::<usize>();
    let mut i = 0;
    while short > 0 {
        let k = sizes.len();
        sizes[i % k] += 1;
        short -= 1;
        i += 1;
    }
    sizes
}

pub fn latent_graph(p: &CoraLikeParams, seed: u64) -> Result<Graph> {
    latent_graph_with_communities(p, seed).map(|(g, _)| g)
}

/// Also returns each node's latent sub-community id.
pub fn latent_graph_with_communities(
    p: &CoraLikeParams,
    seed: u64,
) -> Result<(Graph, Vec<usize>)> {
    let mut rng = rng::stream(seed, &[rng::tag::SYNTH]);
    let n = p.nodes;
    let classes = p.class_weights.len();
    let sizes = class_sizes(&p.class_weights, n);
    let mut labels: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &s)| std::iter::repeat_n(c, s))
        .collect();
    labels.shuffle(&mut rng);

    // Class centres on a jittered grid so blobs overlap only at their rims.
    let side = (classes as f64).sqrt().ceil() as usize;
    let centres: Vec<(f64, f64)> = (0..classes)
        .map(|c| {
            let (gx, gy) = ((c % side) as f64, (c / side) as f64);
            (gx + rng.random_range(-0.1..0.1), gy + rng.random_range(-0.1..0.1))
        })
        .collect();
    let blob = Normal::new(0.0, p.blob_spread).expect("finite spread");
    let local = Normal::new(0.0, p.community_spread).expect("finite spread");
    let mut pos = vec![(0.0, 0.0); n];
    let mut by_class = vec![Vec::new(); classes];
    for (v, &c) in labels.iter().enumerate() {
        by_class[c].push(v);
    }
    let mut community = vec![0usize; n];
    let mut next_community = 0;
    for (c, members) in by_class.iter().enumerate() {
        let groups = (members.len() / p.community_size.max(1)).max(1);
        let (cx, cy) = centres[c];
        let sub: Vec<(f64, f64)> = (0..groups)
            .map(|_| (cx + blob.sample(&mut rng), cy + blob.sample(&mut rng)))
            .collect();
        for &v in members {
            let g = rng.random_range(0..groups);
            community[v] = next_community + g;
            let (sx, sy) = sub[g];
            pos[v] = (sx + local.sample(&mut rng), sy + local.sample(&mut rng));
        }
        next_community += groups;
    }
    let dist2 = |a: usize, b: usize| {
        let (dx, dy) = (pos[a].0 - pos[b].0, pos[a].1 - pos[b].1);
        dx * dx + dy * dy
    };

    let mut edges = std::collections::BTreeSet::new();
    // Spanning tree: each node links to its nearest predecessor in a random order.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for i in 1..n {
        let v = order[i];
        let u = order[..i]
            .iter()
            .copied()
            .min_by(|&a, &b| dist2(v, a).total_cmp(&dist2(v, b)))
            .expect("non-empty prefix");
        edges.insert((u.min(v), u.max(v)));
    }

    let knn: Vec<Vec<usize>> = (0..n)
        .map(|v| {
            let mut others: Vec<usize> = (0..n).filter(|&u| u != v).collect();
            let take = p.local_neighbours.min(others.len());
            if take > 0 {
                others.select_nth_unstable_by(take - 1, |&a, &b| dist2(v, a).total_cmp(&dist2(v, b)));
            }
            others.truncate(take);
            others
        })
        .collect();
    // Heavy-tailed activity so a few nodes collect many citations.
    let activity: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            u.powf(-1.0 / 2.5)
        })
        .collect();
    let total_activity: f64 = activity.iter().sum();
    let pick_active = |rng: &mut rng::Rng| {
        let mut t = rng.random_range(0.0..total_activity);
        for (v, &a) in activity.iter().enumerate() {
            if t < a {
                return v;
            }
            t -= a;
        }
        n - 1
    };
    while edges.len() < p.edges {
        let u = pick_active(&mut rng);
        let r: f64 = rng.random();
        let v = if r < p.long_range {
            rng.random_range(0..n)
        } else if r < p.long_range + p.class_links {
            *by_class[labels[u]].choose(&mut rng).expect("class members")
        } else {
            *knn[u].choose(&mut rng).expect("neighbour pool")
        };
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }

    // Structure follows the community's class; the observed label (and the
    // words it emits) occasionally does not.
    for y in labels.iter_mut() {
        if rng.random_bool(p.label_noise) {
            *y = rng.random_range(0..classes);
        }
    }
    let mut feats = Matrix::zeros(n, p.dim);
    for v in 0..n {
        let block = labels[v] * p.topic_words;
        for _ in 0..p.words_per_node {
            let w = if rng.random_bool(p.topic_share) {
                block + rng.random_range(0..p.topic_words)
            } else {
                rng.random_range(0..p.dim)
            };
            feats.set(v, w, 1.0);
        }
    }
    let g = Graph::new(edges.into_iter().collect(), feats, labels, classes)?;
    Ok((g, community))
}

/// Two-or-more-community stochastic block model with Gaussian class features,
/// for small tests.
pub fn planted_partition(
    communities: usize,
    per_community: usize,
    p_in: f64,
    p_out: f64,
    dim: usize,
    signal: f64,
    seed: u64,
) -> Result<Graph> {
    let mut rng = rng::stream(seed, &[rng::tag::SYNTH, 1]);
    let n = communities * per_community;
    let labels: Vec<usize> = (0..n).map(|v| v / per_community).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut feats = Matrix::zeros(n, dim);
    for v in 0..n {
        for j in 0..dim {
            let mean = if j % communities == labels[v] { signal } else { 0.0 };
            feats.set(v, j, mean + normal.sample(&mut rng));
        }
    }
    Graph::new(edges, feats, labels, communities)
}
