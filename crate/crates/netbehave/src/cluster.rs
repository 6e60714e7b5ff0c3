//! Density-based clustering over a precomputed distance matrix.
//!
//! The algorithm follows the hierarchical density-based family: each point
//! gets a core distance (its k-th nearest neighbor), pairwise distances are
//! lifted to mutual reachability, a minimum spanning tree over that graph is
//! condensed into a shallow cluster tree, and clusters are selected by excess
//! of mass. Points that never join a stable cluster are labeled noise.
//!
//! One deliberate deviation from the common reference behavior: the cluster
//! covering the whole dataset is itself a selection candidate (the synthetic
//! root above it is not), so a dataset that is one dense blob comes back as
//! one cluster instead of all-noise.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::distance::SymMatrix;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("need at least 2 points to cluster, got {found}")]
    TooFewPoints { found: usize },
    #[error("k = {k} nearest neighbors requires at least k + 1 = {} points, got {n}", k + 1)]
    KTooLarge { k: usize, n: usize },
    #[error("malformed cluster file: {reason}")]
    Malformed { reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Tuning knobs for [`cluster`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterParams {
    /// Smallest group of connections worth calling a cluster. A cluster
    /// larger than the dataset simply means everything is noise.
    pub min_cluster_size: usize,
    /// Neighbor rank used for core distances; must be at most `n - 1`.
    pub k_nearest_neighbors: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            min_cluster_size: 7,
            k_nearest_neighbors: 7,
        }
    }
}

/// Cluster assignment of one point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClusterLabel {
    Cluster(usize),
    Noise,
}

impl ClusterLabel {
    /// Numeric form: clusters count from 0, noise is -1.
    pub fn as_i64(self) -> i64 {
        match self {
            ClusterLabel::Cluster(c) => c as i64,
            ClusterLabel::Noise => -1,
        }
    }

    pub fn from_i64(v: i64) -> Option<Self> {
        match v {
            -1 => Some(ClusterLabel::Noise),
            c if c >= 0 => Some(ClusterLabel::Cluster(c as usize)),
            _ => None,
        }
    }
}

/// Edge of the mutual-reachability minimum spanning tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// One row of the condensed cluster tree: `child` (a point if `< n`, a
/// cluster otherwise) leaves `parent` at density `lambda = 1 / distance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondensedRecord {
    pub parent: usize,
    pub child: usize,
    pub lambda: f64,
    pub child_size: usize,
}

/// Output of [`cluster`].
#[derive(Debug, Clone)]
pub struct ClusterResult {
    /// Per-point labels, aligned with the input matrix. Cluster ids are
    /// contiguous from 0, ordered by each cluster's smallest member index.
    pub labels: Vec<ClusterLabel>,
    pub n_clusters: usize,
    /// Raw condensed-tree ids of the selected clusters, in label order.
    pub selected: Vec<usize>,
    /// The condensed tree, using raw ids (points `0..n`, synthetic root `n`,
    /// whole-dataset cluster `n + 1`, further clusters upward).
    pub condensed: Vec<CondensedRecord>,
    /// Excess-of-mass stability per condensed cluster id (the synthetic root
    /// is excluded; it is never a candidate).
    pub stabilities: BTreeMap<usize, f64>,
}

/// Density cap: merges at distance 0 get this lambda instead of infinity.
const LAMBDA_SENTINEL: f64 = 1e12;

fn lambda_of(distance: f64) -> f64 {
    if distance <= 1.0 / LAMBDA_SENTINEL {
        LAMBDA_SENTINEL
    } else {
        1.0 / distance
    }
}

/// Distance to each point's k-th nearest *other* point, ties broken by index.
pub fn core_distances(d: &SymMatrix, k: usize) -> Result<Vec<f64>, ClusterError> {
    let n = d.n();
    if n < 2 {
        return Err(ClusterError::TooFewPoints { found: n });
    }
    if k == 0 || k > n - 1 {
        return Err(ClusterError::KTooLarge { k, n });
    }
    let mut core = Vec::with_capacity(n);
    let mut others: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        others.clear();
        others.extend((0..n).filter(|&j| j != i).map(|j| (d.get(i, j), j)));
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        core.push(others[k - 1].0);
    }
    Ok(core)
}

/// Lifts raw distances to mutual reachability:
/// `max(core(a), core(b), d(a, b))`, diagonal left at zero.
pub fn mutual_reachability(d: &SymMatrix, core: &[f64]) -> SymMatrix {
    let n = d.n();
    assert_eq!(core.len(), n, "one core distance per point");
    let mut m = SymMatrix::zeros(n);
    for i in 0..n {
        for j in (i + 1)..n {
            m.set(i, j, d.get(i, j).max(core[i]).max(core[j]));
        }
    }
    m
}

struct Dsu {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        true
    }
}

/// Kruskal's minimum spanning tree. Edges come back in acceptance order,
/// i.e. sorted by `(weight, a, b)`, which later code relies on.
pub fn minimum_spanning_tree(m: &SymMatrix) -> Vec<MstEdge> {
    let n = m.n();
    let mut edges: Vec<MstEdge> = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in (a + 1)..n {
            edges.push(MstEdge { a, b, weight: m.get(a, b) });
        }
    }
    edges.sort_by(|x, y| {
        x.weight
            .total_cmp(&y.weight)
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });
    let mut dsu = Dsu::new(n);
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    for e in edges {
        if dsu.union(e.a, e.b) {
            out.push(e);
            if out.len() + 1 == n {
                break;
            }
        }
    }
    out
}

/// Single-linkage dendrogram node. Leaves are point indices `0..n`; internal
/// node `n + i` describes the i-th merge (in ascending weight order).
struct DendroNode {
    left: usize,
    right: usize,
    weight: f64,
    size: usize,
}

fn build_dendrogram(n: usize, mst: &[MstEdge]) -> Vec<DendroNode> {
    let mut dsu = Dsu::new(n);
    let mut comp_node: Vec<usize> = (0..n).collect();
    let mut nodes: Vec<DendroNode> = Vec::with_capacity(mst.len());
    let node_size = |nodes: &[DendroNode], id: usize| if id < n { 1 } else { nodes[id - n].size };
    for e in mst {
        let (ra, rb) = (dsu.find(e.a), dsu.find(e.b));
        let (na, nb) = (comp_node[ra], comp_node[rb]);
        let (left, right) = (na.min(nb), na.max(nb));
        let size = node_size(&nodes, left) + node_size(&nodes, right);
        let id = n + nodes.len();
        nodes.push(DendroNode { left, right, weight: e.weight, size });
        dsu.union(e.a, e.b);
        let root = dsu.find(e.a);
        comp_node[root] = id;
    }
    nodes
}

fn leaves_under(n: usize, nodes: &[DendroNode], id: usize) -> Vec<usize> {
    let mut stack = vec![id];
    let mut out = Vec::new();
    while let Some(v) = stack.pop() {
        if v < n {
            out.push(v);
        } else {
            stack.push(nodes[v - n].left);
            stack.push(nodes[v - n].right);
        }
    }
    out.sort_unstable();
    out
}

struct CondensedTree {
    records: Vec<CondensedRecord>,
    lambda_birth: BTreeMap<usize, f64>,
    cluster_size: BTreeMap<usize, usize>,
    parent_of: BTreeMap<usize, usize>,
    children_of: BTreeMap<usize, Vec<usize>>,
    /// For each point, the cluster it fell out of.
    point_parent: Vec<usize>,
}

/// Condenses the dendrogram. Ids: points `0..n`, synthetic root `n`, the
/// whole-dataset cluster `n + 1`, then new clusters in breadth-first order.
/// A dendrogram child keeps cluster identity only when its size is at least
/// `max(min_cluster_size, 2)`; smaller children spill their points out at the
/// split density.
fn condense(n: usize, nodes: &[DendroNode], min_cluster_size: usize) -> CondensedTree {
    let root = n;
    let dataset = n + 1;
    let top = n + nodes.len() - 1;
    let lambda_top = lambda_of(nodes[nodes.len() - 1].weight);
    let threshold = min_cluster_size.max(2);

    let mut tree = CondensedTree {
        records: vec![CondensedRecord {
            parent: root,
            child: dataset,
            lambda: lambda_top,
            child_size: n,
        }],
        lambda_birth: BTreeMap::from([(dataset, lambda_top)]),
        cluster_size: BTreeMap::from([(dataset, n)]),
        parent_of: BTreeMap::from([(dataset, root)]),
        children_of: BTreeMap::new(),
        point_parent: vec![usize::MAX; n],
    };

    let mut next_id = n + 2;
    let mut queue = std::collections::VecDeque::new();
    queue.push_back((top, dataset));
    while let Some((v, cluster)) = queue.pop_front() {
        let node = &nodes[v - n];
        let lam = lambda_of(node.weight);
        let size_of = |id: usize| if id < n { 1 } else { nodes[id - n].size };
        let (l, r) = (node.left, node.right);
        let (big_l, big_r) = (size_of(l) >= threshold, size_of(r) >= threshold);
        let spill = |tree: &mut CondensedTree, side: usize| {
            for p in leaves_under(n, nodes, side) {
                tree.records.push(CondensedRecord {
                    parent: cluster,
                    child: p,
                    lambda: lam,
                    child_size: 1,
                });
                tree.point_parent[p] = cluster;
            }
        };
        match (big_l, big_r) {
            (true, true) => {
                for side in [l, r] {
                    let id = next_id;
                    next_id += 1;
                    tree.records.push(CondensedRecord {
                        parent: cluster,
                        child: id,
                        lambda: lam,
                        child_size: size_of(side),
                    });
                    tree.lambda_birth.insert(id, lam);
                    tree.cluster_size.insert(id, size_of(side));
                    tree.parent_of.insert(id, cluster);
                    tree.children_of.entry(cluster).or_default().push(id);
                    queue.push_back((side, id));
                }
            }
            (true, false) => {
                spill(&mut tree, r);
                queue.push_back((l, cluster));
            }
            (false, true) => {
                spill(&mut tree, l);
                queue.push_back((r, cluster));
            }
            (false, false) => {
                spill(&mut tree, l);
                spill(&mut tree, r);
            }
        }
    }
    debug_assert!(tree.point_parent.iter().all(|&p| p != usize::MAX));
    tree
}

fn compute_stabilities(tree: &CondensedTree, root: usize) -> BTreeMap<usize, f64> {
    let mut stab: BTreeMap<usize, f64> = tree.lambda_birth.keys().map(|&c| (c, 0.0)).collect();
    for rec in &tree.records {
        if rec.parent == root {
            continue;
        }
        let birth = tree.lambda_birth[&rec.parent];
        *stab.get_mut(&rec.parent).unwrap() += (rec.lambda - birth) * rec.child_size as f64;
    }
    stab
}

/// Excess-of-mass selection: bottom-up, a cluster is kept when its own
/// stability is at least the best total from its child clusters (ties keep
/// the parent); clusters smaller than `min_cluster_size` are never kept.
fn select_excess_of_mass(
    tree: &CondensedTree,
    stab: &BTreeMap<usize, f64>,
    min_cluster_size: usize,
    root: usize,
) -> Vec<usize> {
    let mut flag: BTreeMap<usize, bool> = BTreeMap::new();
    let mut hat: BTreeMap<usize, f64> = BTreeMap::new();
    for (&cid, &s) in stab.iter().rev() {
        let child_sum: f64 = tree
            .children_of
            .get(&cid)
            .map(|kids| kids.iter().map(|c| hat[c]).sum())
            .unwrap_or(0.0);
        let eligible = tree.cluster_size[&cid] >= min_cluster_size;
        if eligible && s >= child_sum {
            flag.insert(cid, true);
            hat.insert(cid, s);
        } else {
            flag.insert(cid, false);
            hat.insert(cid, child_sum);
        }
    }
    // A selected ancestor absorbs everything below it.
    let mut selected = Vec::new();
    'next: for (&cid, &keep) in &flag {
        if !keep {
            continue;
        }
        let mut up = tree.parent_of[&cid];
        while up != root {
            if flag[&up] {
                continue 'next;
            }
            up = tree.parent_of[&up];
        }
        selected.push(cid);
    }
    selected
}

/// Clusters the points behind a pairwise distance matrix.
pub fn cluster(d: &SymMatrix, params: &ClusterParams) -> Result<ClusterResult, ClusterError> {
    let n = d.n();
    let core = core_distances(d, params.k_nearest_neighbors)?;
    let mreach = mutual_reachability(d, &core);
    let mst = minimum_spanning_tree(&mreach);
    let nodes = build_dendrogram(n, &mst);
    let tree = condense(n, &nodes, params.min_cluster_size);
    let root = n;
    let stabilities = compute_stabilities(&tree, root);
    let selected_raw = select_excess_of_mass(&tree, &stabilities, params.min_cluster_size, root);

    let is_selected: std::collections::BTreeSet<usize> = selected_raw.iter().copied().collect();
    let mut labels = vec![ClusterLabel::Noise; n];
    let mut rank: BTreeMap<usize, usize> = BTreeMap::new();
    let mut selected_in_order = Vec::new();
    for (p, label) in labels.iter_mut().enumerate() {
        let mut c = tree.point_parent[p];
        while c != root {
            if is_selected.contains(&c) {
                let next = rank.len();
                let r = *rank.entry(c).or_insert_with(|| {
                    selected_in_order.push(c);
                    next
                });
                *label = ClusterLabel::Cluster(r);
                break;
            }
            c = tree.parent_of[&c];
        }
    }
    debug_assert_eq!(rank.len(), selected_raw.len(), "every selected cluster has members");

    Ok(ClusterResult {
        labels,
        n_clusters: selected_in_order.len(),
        selected: selected_in_order,
        condensed: tree.records,
        stabilities,
    })
}

/// Serializes the condensed tree and stabilities as a JSON document for
/// debugging. Raw condensed ids are used throughout.
pub fn condensed_tree_json(result: &ClusterResult) -> String {
    let records: Vec<serde_json::Value> = result
        .condensed
        .iter()
        .map(|r| {
            serde_json::json!({
                "parent": r.parent,
                "child": r.child,
                "lambda": r.lambda,
                "child_size": r.child_size,
            })
        })
        .collect();
    let stabilities: serde_json::Map<String, serde_json::Value> = result
        .stabilities
        .iter()
        .map(|(&c, &s)| (c.to_string(), serde_json::json!(s)))
        .collect();
    let doc = serde_json::json!({
        "records": records,
        "stabilities": stabilities,
        "selected": result.selected,
        "n_clusters": result.n_clusters,
    });
    serde_json::to_string_pretty(&doc).expect("condensed tree serializes")
}

/// Writes `key,cluster` rows; the cluster column is the numeric id or the
/// literal `noise`.
pub fn write_clusters_csv<W: Write>(
    keys: &[String],
    labels: &[ClusterLabel],
    w: W,
) -> Result<(), ClusterError> {
    assert_eq!(keys.len(), labels.len(), "one label per key");
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["key", "cluster"])?;
    for (key, label) in keys.iter().zip(labels) {
        let cell = match label {
            ClusterLabel::Cluster(c) => c.to_string(),
            ClusterLabel::Noise => "noise".to_string(),
        };
        wtr.write_record([key.as_str(), &cell])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a file written by [`write_clusters_csv`].
pub fn read_clusters_csv<R: Read>(r: R) -> Result<(Vec<String>, Vec<ClusterLabel>), ClusterError> {
    let mut rdr = csv::Reader::from_reader(r);
    {
        let headers = rdr.headers()?;
        if headers.len() != 2 || &headers[0] != "key" || &headers[1] != "cluster" {
            return Err(ClusterError::Malformed {
                reason: format!("unexpected header {headers:?}"),
            });
        }
    }
    let mut keys = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(ClusterError::Malformed {
                reason: format!("row {i} has {} fields", record.len()),
            });
        }
        let label = if &record[1] == "noise" {
            ClusterLabel::Noise
        } else {
            let value: usize = record[1].parse().map_err(|_| ClusterError::Malformed {
                reason: format!("row {i}: {:?} is neither a cluster id nor \"noise\"", &record[1]),
            })?;
            ClusterLabel::Cluster(value)
        };
        keys.push(record[0].to_string());
        labels.push(label);
    }
    Ok((keys, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix_from(n: usize, f: impl Fn(usize, usize) -> f64) -> SymMatrix {
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            for j in (i + 1)..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Textbook Prim's algorithm, used as an independent check on Kruskal.
    fn prim_total_weight(d: &SymMatrix) -> f64 {
        let n = d.n();
        let mut in_tree = vec![false; n];
        let mut best = vec![f64::INFINITY; n];
        best[0] = 0.0;
        let mut total = 0.0;
        for _ in 0..n {
            let u = (0..n)
                .filter(|&i| !in_tree[i])
                .min_by(|&a, &b| best[a].total_cmp(&best[b]))
                .unwrap();
            in_tree[u] = true;
            total += best[u];
            for v in 0..n {
                if !in_tree[v] {
                    best[v] = best[v].min(d.get(u, v));
                }
            }
        }
        total
    }

    /// Two tight groups (8 and 9 points) plus one far outlier at index 17.
    fn two_blobs_and_outlier() -> SymMatrix {
        matrix_from(18, |i, j| {
            let group = |p: usize| if p < 8 { 0 } else if p < 17 { 1 } else { 2 };
            match (group(i), group(j)) {
                (a, b) if a == b => 0.05,
                (2, _) | (_, 2) => 0.95,
                _ => 0.6,
            }
        })
    }

    #[test]
    fn core_distance_is_the_kth_nearest_other_point() {
        // Distances from 0: 0.1 (to 1), 0.4 (to 2), 0.2 (to 3).
        let m = matrix_from(4, |i, j| match (i, j) {
            (0, 1) => 0.1,
            (0, 2) => 0.4,
            (0, 3) => 0.2,
            _ => 0.3,
        });
        assert_eq!(core_distances(&m, 1).unwrap()[0], 0.1);
        assert_eq!(core_distances(&m, 2).unwrap()[0], 0.2);
        assert_eq!(core_distances(&m, 3).unwrap()[0], 0.4);
    }

    #[test]
    fn k_out_of_range_is_rejected() {
        let m = matrix_from(5, |_, _| 0.5);
        assert!(matches!(core_distances(&m, 5), Err(ClusterError::KTooLarge { k: 5, n: 5 })));
        assert!(matches!(core_distances(&m, 0), Err(ClusterError::KTooLarge { .. })));
        assert!(core_distances(&m, 4).is_ok());
    }

    #[test]
    fn fewer_than_two_points_is_rejected() {
        let m = SymMatrix::zeros(1);
        assert!(matches!(
            cluster(&m, &ClusterParams::default()),
            Err(ClusterError::TooFewPoints { found: 1 })
        ));
    }

    #[test]
    fn mutual_reachability_takes_the_max_of_cores_and_distance() {
        let m = matrix_from(3, |i, j| match (i, j) {
            (0, 1) => 0.2,
            (0, 2) => 0.9,
            _ => 0.3,
        });
        let core = vec![0.5, 0.1, 0.3];
        let mr = mutual_reachability(&m, &core);
        assert_eq!(mr.get(0, 1), 0.5); // core(0) dominates
        assert_eq!(mr.get(0, 2), 0.9); // raw distance dominates
        assert_eq!(mr.get(1, 2), 0.3); // core(2) == raw
        assert_eq!(mr.get(1, 1), 0.0);
    }

    #[test]
    fn kruskal_matches_prim_on_assorted_matrices() {
        let cases: Vec<SymMatrix> = vec![
            matrix_from(6, |i, j| ((i * 7 + j * 13) % 17) as f64 / 17.0 + 0.1),
            matrix_from(9, |i, j| ((i + j) % 5) as f64 + 0.5),
            two_blobs_and_outlier(),
        ];
        for (idx, m) in cases.iter().enumerate() {
            let mst = minimum_spanning_tree(m);
            assert_eq!(mst.len(), m.n() - 1, "case {idx}: edge count");
            let kruskal: f64 = mst.iter().map(|e| e.weight).sum();
            let prim = prim_total_weight(m);
            assert!((kruskal - prim).abs() < 1e-12, "case {idx}: {kruskal} vs {prim}");
            // The tree must connect everything.
            let mut dsu = Dsu::new(m.n());
            for e in &mst {
                dsu.union(e.a, e.b);
            }
            let root = dsu.find(0);
            assert!((0..m.n()).all(|p| dsu.find(p) == root), "case {idx}: connectivity");
        }
    }

    #[test]
    fn mst_edges_arrive_sorted_by_weight() {
        let m = two_blobs_and_outlier();
        let mst = minimum_spanning_tree(&m);
        for pair in mst.windows(2) {
            assert!(pair[0].weight <= pair[1].weight);
        }
    }

    #[test]
    fn one_tight_blob_is_one_cluster_with_no_noise() {
        let m = matrix_from(10, |i, j| 0.01 + 0.002 * (((i + j) % 5) as f64));
        let result = cluster(&m, &ClusterParams::default()).unwrap();
        assert_eq!(result.n_clusters, 1);
        assert!(result.labels.iter().all(|&l| l == ClusterLabel::Cluster(0)));
    }

    #[test]
    fn a_cluster_size_above_the_dataset_size_turns_everything_into_noise() {
        let m = matrix_from(6, |_, _| 0.05);
        let params = ClusterParams { min_cluster_size: 7, k_nearest_neighbors: 3 };
        let result = cluster(&m, &params).unwrap();
        assert_eq!(result.n_clusters, 0);
        assert!(result.labels.iter().all(|&l| l == ClusterLabel::Noise));
    }

    #[test]
    fn two_blobs_separate_and_the_outlier_is_noise() {
        let m = two_blobs_and_outlier();
        let params = ClusterParams { min_cluster_size: 3, k_nearest_neighbors: 3 };
        let result = cluster(&m, &params).unwrap();
        assert_eq!(result.n_clusters, 2);
        for p in 0..8 {
            assert_eq!(result.labels[p], ClusterLabel::Cluster(0), "point {p}");
        }
        for p in 8..17 {
            assert_eq!(result.labels[p], ClusterLabel::Cluster(1), "point {p}");
        }
        assert_eq!(result.labels[17], ClusterLabel::Noise);
    }

    #[test]
    fn three_planted_groups_are_recovered_with_default_params() {
        let group = |p: usize| p / 10;
        let m = matrix_from(30, |i, j| {
            if group(i) == group(j) {
                0.05 + 0.01 * group(i) as f64
            } else {
                0.9
            }
        });
        let result = cluster(&m, &ClusterParams::default()).unwrap();
        assert_eq!(result.n_clusters, 3);
        for p in 0..30 {
            assert_eq!(result.labels[p], ClusterLabel::Cluster(group(p)), "point {p}");
        }
    }

    #[test]
    fn condensed_tree_accounts_for_every_point_exactly_once() {
        let m = two_blobs_and_outlier();
        let params = ClusterParams { min_cluster_size: 3, k_nearest_neighbors: 3 };
        let result = cluster(&m, &params).unwrap();
        let n = m.n();
        let root_record = &result.condensed[0];
        assert_eq!((root_record.parent, root_record.child), (n, n + 1));
        assert_eq!(root_record.child_size, n);
        let mut seen = vec![0usize; n];
        for rec in &result.condensed {
            if rec.child < n {
                seen[rec.child] += 1;
                assert_eq!(rec.child_size, 1);
            }
        }
        assert!(seen.iter().all(|&c| c == 1), "fall-out counts: {seen:?}");
        for (&cid, &s) in &result.stabilities {
            assert!(s >= -1e-9, "cluster {cid} has negative stability {s}");
        }
    }

    #[test]
    fn clustering_is_deterministic() {
        let m = two_blobs_and_outlier();
        let params = ClusterParams { min_cluster_size: 3, k_nearest_neighbors: 3 };
        let a = cluster(&m, &params).unwrap();
        let b = cluster(&m, &params).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.selected, b.selected);
    }

    #[test]
    fn labels_roundtrip_through_csv() {
        let keys: Vec<String> = (0..4).map(|i| format!("k{i}")).collect();
        let labels = vec![
            ClusterLabel::Cluster(0),
            ClusterLabel::Noise,
            ClusterLabel::Cluster(1),
            ClusterLabel::Cluster(0),
        ];
        let mut buf = Vec::new();
        write_clusters_csv(&keys, &labels, &mut buf).unwrap();
        let (keys2, labels2) = read_clusters_csv(buf.as_slice()).unwrap();
        assert_eq!(keys, keys2);
        assert_eq!(labels, labels2);
    }

    #[test]
    fn cluster_csv_rejects_bad_labels() {
        let text = "key,cluster\nk0,-2\n";
        assert!(read_clusters_csv(text.as_bytes()).is_err());
        let text = "key,cluster\nk0,abc\n";
        assert!(read_clusters_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn cluster_csv_spells_noise_out() {
        let keys = vec!["k0".to_string(), "k1".to_string()];
        let labels = vec![ClusterLabel::Cluster(0), ClusterLabel::Noise];
        let mut buf = Vec::new();
        write_clusters_csv(&keys, &labels, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "key,cluster\nk0,0\nk1,noise\n");
    }

    #[test]
    fn core_distances_match_a_hand_enumerated_triangle() {
        // d(0,1)=1, d(0,2)=2, d(1,2)=3.
        let m = matrix_from(3, |i, j| match (i, j) {
            (0, 1) => 1.0,
            (0, 2) => 2.0,
            _ => 3.0,
        });
        assert_eq!(core_distances(&m, 2).unwrap(), vec![2.0, 3.0, 3.0]);
    }

    #[test]
    fn permuting_the_matrix_permutes_the_labels() {
        let m = two_blobs_and_outlier();
        let params = ClusterParams { min_cluster_size: 3, k_nearest_neighbors: 3 };
        let base = cluster(&m, &params).unwrap();

        // Reverse the point order.
        let n = m.n();
        let perm: Vec<usize> = (0..n).rev().collect();
        let mut permuted = SymMatrix::zeros(n);
        for i in 0..n {
            for j in (i + 1)..n {
                permuted.set(i, j, m.get(perm[i], perm[j]));
            }
        }
        let moved = cluster(&permuted, &params).unwrap();
        assert_eq!(moved.n_clusters, base.n_clusters);
        // Membership must move with the points; canonical ids are by smallest
        // member index, so the id values may swap but the partition may not.
        let mut pairs_equal = true;
        for a in 0..n {
            for b in (a + 1)..n {
                let together_base = base.labels[perm[a]] == base.labels[perm[b]]
                    && base.labels[perm[a]] != ClusterLabel::Noise;
                let together_moved =
                    moved.labels[a] == moved.labels[b] && moved.labels[a] != ClusterLabel::Noise;
                pairs_equal &= together_base == together_moved;
            }
        }
        assert!(pairs_equal, "co-membership must be permutation invariant");
        let noise_base: Vec<usize> = (0..n).filter(|&p| base.labels[p] == ClusterLabel::Noise).collect();
        let noise_moved: Vec<usize> = (0..n)
            .filter(|&p| moved.labels[p] == ClusterLabel::Noise)
            .map(|p| perm[p])
            .collect();
        let mut noise_moved = noise_moved;
        noise_moved.sort_unstable();
        assert_eq!(noise_base, noise_moved);
    }

    #[test]
    fn condensed_tree_exports_as_json() {
        let m = two_blobs_and_outlier();
        let params = ClusterParams { min_cluster_size: 3, k_nearest_neighbors: 3 };
        let result = cluster(&m, &params).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&condensed_tree_json(&result)).unwrap();
        assert_eq!(doc["n_clusters"], 2);
        assert_eq!(doc["records"].as_array().unwrap().len(), result.condensed.len());
    }
}
