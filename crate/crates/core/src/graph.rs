//! Graph container, deterministic role splits and the on-disk dataset format.
//!
//! A dataset directory holds three plain-text files:
//!
//! * `features.tsv`: `node-id<TAB>f1<TAB>...<TAB>fd`, one row per node
//! * `edges.txt`: whitespace-separated `u v` pairs, undirected
//! * `labels.tsv`: `node-id<TAB>class`
//!
//! Lines starting with `#` and blank lines are ignored. Node ids are arbitrary
//! non-negative integers; they are compacted to `0..n` in ascending id order
//! after the largest connected component is extracted.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernel::Matrix;
use crate::rng;

pub const FEATURES_FILE: &str = "features.tsv";
pub const EDGES_FILE: &str = "edges.txt";
pub const LABELS_FILE: &str = "labels.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    /// Stable external identifiers, one per node.
    ids: Vec<u64>,
}

impl Graph {
    /// Validates and canonicalises: edges become `(min, max)` pairs, sorted and
    /// deduplicated. Self loops are rejected.
    pub fn new(
        edges: Vec<(usize, usize)>,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.rows();
        let ids = (0..n as u64).collect();
        Self::with_ids(edges, features, labels, num_classes, ids)
    }

    pub fn with_ids(
        edges: Vec<(usize, usize)>,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        ids: Vec<u64>,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || ids.len() != n {
            return Err(Error::Integrity(format!(
                "{n} feature rows but {} labels and {} ids",
                labels.len(),
                ids.len()
            )));
        }
        if !features.is_finite() {
            return Err(Error::Integrity("non-finite feature value".into()));
        }
        if let Some((v, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::Integrity(format!(
                "node {v} has label {y} outside {num_classes} classes"
            )));
        }
        let mut canon = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Integrity(format!(
                    "edge ({u}, {v}) references a node outside 0..{n}"
                )));
            }
            if u == v {
                return Err(Error::Integrity(format!("self-loop on node {u}")));
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        canon.dedup();
        Ok(Graph {
            n,
            edges: canon,
            features,
            labels,
            num_classes,
            ids,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    /// Connected components as node lists, each sorted, ordered by smallest node.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.n];
        let mut comps = Vec::new();
        for s in 0..self.n {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            let mut comp = vec![s];
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    /// Induced subgraph on `nodes` (in the given order). Node `i` of the result
    /// is `nodes[i]` of `self`.
    pub fn induced(&self, nodes: &[usize]) -> Result<Graph> {
        let mut local = HashMap::with_capacity(nodes.len());
        for (i, &v) in nodes.iter().enumerate() {
            if v >= self.n || local.insert(v, i).is_some() {
                return Err(Error::Integrity(format!("invalid subgraph node {v}")));
            }
        }
        let edges = self
            .edges
            .iter()
            .filter_map(|&(u, v)| Some((*local.get(&u)?, *local.get(&v)?)))
            .collect();
        Graph::with_ids(
            edges,
            self.features.select_rows(nodes),
            nodes.iter().map(|&v| self.labels[v]).collect(),
            self.num_classes,
            nodes.iter().map(|&v| self.ids[v]).collect(),
        )
    }

    /// Restriction to the largest connected component (ties: the component
    /// containing the smallest node).
    pub fn largest_component(&self) -> Result<Graph> {
        let comps = self.components();
        let best = comps
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| a.len().cmp(&b.len()).then(j.cmp(i)))
            .map(|(_, c)| c.clone())
            .unwrap_or_default();
        if best.len() == self.n {
            return Ok(self.clone());
        }
        self.induced(&best)
    }

    /// Applies a node relabelling: node `v` of `self` becomes node `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        let mut inverse = vec![usize::MAX; self.n];
        for (v, &p) in perm.iter().enumerate() {
            if p >= self.n || inverse[p] != usize::MAX {
                return Err(Error::Integrity("not a permutation".into()));
            }
            inverse[p] = v;
        }
        Graph::with_ids(
            self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect(),
            self.features.select_rows(&inverse),
            inverse.iter().map(|&v| self.labels[v]).collect(),
            self.num_classes,
            inverse.iter().map(|&v| self.ids[v]).collect(),
        )
    }
}

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_id(path: &Path, line: usize, tok: Option<&str>) -> Result<u64> {
    let tok = tok.ok_or_else(|| format_err(path, line, "missing node id"))?;
    tok.parse()
        .map_err(|_| format_err(path, line, format!("bad node id `{tok}`")))
}

/// Reads a dataset directory and returns its largest connected component.
pub fn load_graph(dir: &Path) -> Result<Graph> {
    let fpath = dir.join(FEATURES_FILE);
    let epath = dir.join(EDGES_FILE);
    let lpath = dir.join(LABELS_FILE);

    let mut rows: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut dim = None;
    for (ln, line) in data_lines(&fs::read_to_string(&fpath)?) {
        let mut toks = line.split_whitespace();
        let id = parse_id(&fpath, ln, toks.next())?;
        let vals = toks
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format_err(&fpath, ln, format!("bad feature value `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None => dim = Some(vals.len()),
            Some(d) if d != vals.len() => {
                return Err(format_err(
                    &fpath,
                    ln,
                    format!("expected {d} features, found {}", vals.len()),
                ))
            }
            _ => {}
        }
        if rows.insert(id, vals).is_some() {
            return Err(format_err(&fpath, ln, format!("duplicate node id {id}")));
        }
    }

    let mut labels: BTreeMap<u64, usize> = BTreeMap::new();
    for (ln, line) in data_lines(&fs::read_to_string(&lpath)?) {
        let mut toks = line.split_whitespace();
        let id = parse_id(&lpath, ln, toks.next())?;
        let tok = toks
            .next()
            .ok_or_else(|| format_err(&lpath, ln, "missing class"))?;
        let y = tok
            .parse()
            .map_err(|_| format_err(&lpath, ln, format!("bad class `{tok}`")))?;
        if labels.insert(id, y).is_some() {
            return Err(format_err(&lpath, ln, format!("duplicate label for {id}")));
        }
    }
    if labels.len() != rows.len() || !labels.keys().eq(rows.keys()) {
        return Err(Error::Integrity(format!(
            "{} feature rows but {} label rows over different node ids",
            rows.len(),
            labels.len()
        )));
    }

    let index: HashMap<u64, usize> = rows.keys().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut edges = Vec::new();
    for (ln, line) in data_lines(&fs::read_to_string(&epath)?) {
        let mut toks = line.split_whitespace();
        let a = parse_id(&epath, ln, toks.next())?;
        let b = parse_id(&epath, ln, toks.next())?;
        let (Some(&u), Some(&v)) = (index.get(&a), index.get(&b)) else {
            return Err(Error::Integrity(format!(
                "{}:{ln}: edge ({a}, {b}) has an endpoint without features",
                epath.display()
            )));
        };
        if u == v {
            return Err(Error::Integrity(format!(
                "{}:{ln}: self-loop on node {a}",
                epath.display()
            )));
        }
        edges.push((u, v));
    }

    let d = dim.unwrap_or(0);
    let n = rows.len();
    let ids: Vec<u64> = rows.keys().copied().collect();
    let data: Vec<f64> = rows.into_values().flatten().collect();
    let labels: Vec<usize> = labels.into_values().collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Graph::with_ids(edges, Matrix::from_vec(n, d, data)?, labels, num_classes, ids)?
        .largest_component()
}

/// Writes the three dataset files using the graph's external ids.
pub fn write_graph(g: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut f = BufWriter::new(fs::File::create(dir.join(FEATURES_FILE))?);
    for v in 0..g.n {
        write!(f, "{}", g.ids[v])?;
        for x in g.features.row(v) {
            // `{:?}` keeps enough digits to round-trip exactly.
            write!(f, "\t{x:?}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    let mut f = BufWriter::new(fs::File::create(dir.join(EDGES_FILE))?);
    for &(u, v) in &g.edges {
        writeln!(f, "{} {}", g.ids[u], g.ids[v])?;
    }
    f.flush()?;
    let mut f = BufWriter::new(fs::File::create(dir.join(LABELS_FILE))?);
    for v in 0..g.n {
        writeln!(f, "{}\t{}", g.ids[v], g.labels[v])?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Train,
    Valid,
    Calib,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleMask {
    roles: Vec<Role>,
}

impl RoleMask {
    pub fn from_roles(roles: Vec<Role>) -> Self {
        RoleMask { roles }
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn role(&self, v: usize) -> Role {
        self.roles[v]
    }

    pub fn indices(&self, role: Role) -> Vec<usize> {
        (0..self.roles.len())
            .filter(|&v| self.roles[v] == role)
            .collect()
    }

    pub fn count(&self, role: Role) -> usize {
        self.roles.iter().filter(|&&r| r == role).count()
    }

    pub fn restrict(&self, nodes: &[usize]) -> RoleMask {
        RoleMask {
            roles: nodes.iter().map(|&v| self.roles[v]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub calib: f64,
    pub test: f64,
    /// Share of the train fraction held out for validation.
    pub valid_within_train: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.2,
            calib: 0.4,
            test: 0.4,
            valid_within_train: 0.2,
        }
    }
}

/// Assigns roles by ranking nodes on a seeded hash of their external id, so the
/// split follows node identity rather than storage order.
pub fn split_roles(g: &Graph, fr: SplitFractions, seed: u64) -> Result<RoleMask> {
    split_ids(g.ids(), fr, seed)
}

pub fn split_ids(ids: &[u64], fr: SplitFractions, seed: u64) -> Result<RoleMask> {
    let parts = [fr.train, fr.calib, fr.test, fr.valid_within_train];
    if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Config(format!("split fractions out of range: {fr:?}")));
    }
    if ((fr.train + fr.calib + fr.test) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions sum to {}, expected 1",
            fr.train + fr.calib + fr.test
        )));
    }
    let n = ids.len();
    let train_total = (n as f64 * fr.train).round() as usize;
    let calib = ((n as f64 * fr.calib).round() as usize).min(n - train_total);
    let test = n - train_total - calib;
    let valid = (train_total as f64 * fr.valid_within_train).round() as usize;
    let train = train_total - valid;
    let requested = [
        (Role::Train, fr.train > 0.0, train),
        (Role::Valid, fr.train * fr.valid_within_train > 0.0, valid),
        (Role::Calib, fr.calib > 0.0, calib),
        (Role::Test, fr.test > 0.0, test),
    ];
    if let Some((role, _, _)) = requested.iter().find(|(_, want, got)| *want && *got == 0) {
        return Err(Error::Config(format!(
            "{n} nodes are too few: role {role:?} would be empty"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| (rng::derive_seed(seed, &[rng::tag::SPLIT, ids[v]]), ids[v]));
    let mut roles = vec![Role::Test; n];
    for (pos, &v) in order.iter().enumerate() {
        roles[v] = if pos < valid {
            Role::Valid
        } else if pos < train_total {
            Role::Train
        } else if pos < train_total + calib {
            Role::Calib
        } else {
            Role::Test
        };
    }
    Ok(RoleMask { roles })
}

/// Set of undirected edges keyed as `(min, max)`.
pub fn edge_set(edges: &[(usize, usize)]) -> BTreeSet<(usize, usize)> {
    edges.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, edges: Vec<(usize, usize)>) -> Graph {
        let feats = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        Graph::new(edges, feats, vec![0; n], 1).unwrap()
    }

    #[test]
    fn canonicalises_edges() {
        let g = tiny(3, vec![(1, 0), (0, 1), (2, 1)]);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn rejects_self_loop_and_bad_label() {
        let feats = Matrix::zeros(4, 1);
        assert!(matches!(
            Graph::new(vec![(3, 3)], feats.clone(), vec![0; 4], 1),
            Err(Error::Integrity(_))
        ));
        assert!(matches!(
            Graph::new(vec![], feats, vec![0, 0, 0, 2], 2),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn largest_component_compacts() {
        let g = tiny(6, vec![(0, 1), (2, 3), (3, 4), (4, 2)]);
        let lcc = g.largest_component().unwrap();
        assert_eq!(lcc.n(), 3);
        assert_eq!(lcc.ids(), &[2, 3, 4]);
        assert_eq!(lcc.edges().len(), 3);
    }

    #[test]
    fn split_counts_for_hundred_nodes() {
        let ids: Vec<u64> = (0..100).collect();
        let m = split_ids(&ids, SplitFractions::default(), 3).unwrap();
        assert_eq!(m.count(Role::Train), 16);
        assert_eq!(m.count(Role::Valid), 4);
        assert_eq!(m.count(Role::Calib), 40);
        assert_eq!(m.count(Role::Test), 40);
        assert_eq!(m, split_ids(&ids, SplitFractions::default(), 3).unwrap());
        assert_ne!(m, split_ids(&ids, SplitFractions::default(), 4).unwrap());
    }

    #[test]
    fn split_too_small_is_config_error() {
        let ids: Vec<u64> = (0..3).collect();
        assert!(matches!(
            split_ids(&ids, SplitFractions::default(), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn split_rejects_bad_sum() {
        let ids: Vec<u64> = (0..50).collect();
        let fr = SplitFractions {
            train: 0.5,
            calib: 0.4,
            test: 0.4,
            valid_within_train: 0.2,
        };
        assert!(matches!(split_ids(&ids, fr, 0), Err(Error::Config(_))));
    }
}
