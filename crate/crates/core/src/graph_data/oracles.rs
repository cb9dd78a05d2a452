//! Exact classical-algorithm oracles producing pointer targets.
//!
//! Shortest-path oracles are generic over the edge weight type so the same
//! code runs on `f64` data and on exact integer weights.

use std::fmt::Debug;
use std::ops::Add;

use num_traits::Zero;

use crate::graph_data::graph::Graph;

/// Edge weight usable by the shortest-path oracles.
pub trait Weight: Copy + PartialOrd + Add<Output = Self> + Zero + Debug {}

impl<W: Copy + PartialOrd + Add<Output = W> + Zero + Debug> Weight for W {}

#[derive(Debug, Clone, PartialEq)]
pub struct ShortestPaths<W> {
    /// Predecessor on a shortest path; the source and unreachable nodes point
    /// to themselves.
    pub pointers: Vec<usize>,
    /// `None` for unreachable nodes.
    pub distances: Vec<Option<W>>,
    /// Relaxation rounds that changed at least one distance (at least 1).
    pub tau: usize,
}

/// Bellman-Ford over directed arcs `(src, dst, w)` on nodes `0..n`.
///
/// Ties among equal-cost predecessors go to the lowest node index.
pub fn bellman_ford<W: Weight>(n: usize, arcs: &[(usize, usize, W)], source: usize) -> ShortestPaths<W> {
    assert!(source < n, "source {source} outside 0..{n}");
    let mut dist: Vec<Option<W>> = vec![None; n];
    dist[source] = Some(W::zero());
    let mut changing_rounds = 0;
    for _ in 0..n {
        let mut changed = false;
        let snapshot = dist.clone();
        for &(s, d, w) in arcs {
            if let Some(ds) = snapshot[s] {
                let cand = ds + w;
                if dist[d].is_none_or(|cur| cand < cur) {
                    dist[d] = Some(cand);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
        changing_rounds += 1;
    }
    let mut pointers: Vec<usize> = (0..n).collect();
    for u in 0..n {
        let Some(du) = dist[u] else { continue };
        if u == source {
            continue;
        }
        pointers[u] = arcs
            .iter()
            .filter(|&&(s, d, w)| d == u && s != u && dist[s].is_some_and(|ds| ds + w == du))
            .map(|&(s, _, _)| s)
            .min()
            .expect("a reachable non-source node has a tight in-arc");
    }
    ShortestPaths {
        pointers,
        distances: dist,
        tau: changing_rounds.max(1),
    }
}

pub fn oracle_bellman_ford(g: &Graph, source: usize) -> ShortestPaths<f64> {
    bellman_ford(g.n, &g.arcs(), source)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllPairs<W> {
    /// `dist[i][j]`, `None` when `j` is unreachable from `i`.
    pub dist: Vec<Vec<Option<W>>>,
    /// `pred[i][j]`: predecessor of `j` on a shortest path from `i`
    /// (`i` itself for direct edges; `None` when unreachable or `i == j`).
    pub pred: Vec<Vec<Option<usize>>>,
}

/// Classical Floyd-Warshall with ascending intermediate node and strict
/// improvement updates.
pub fn floyd_warshall<W: Weight>(n: usize, arcs: &[(usize, usize, W)]) -> AllPairs<W> {
    let mut dist: Vec<Vec<Option<W>>> = vec![vec![None; n]; n];
    let mut pred: Vec<Vec<Option<usize>>> = vec![vec![None; n]; n];
    for (i, row) in dist.iter_mut().enumerate() {
        row[i] = Some(W::zero());
    }
    for &(s, d, w) in arcs {
        if s != d && dist[s][d].is_none_or(|cur| w < cur) {
            dist[s][d] = Some(w);
            pred[s][d] = Some(s);
        }
    }
    for k in 0..n {
        for i in 0..n {
            let Some(dik) = dist[i][k] else { continue };
            for j in 0..n {
                let Some(dkj) = dist[k][j] else { continue };
                let cand = dik + dkj;
                if dist[i][j].is_none_or(|cur| cand < cur) {
                    dist[i][j] = Some(cand);
                    pred[i][j] = pred[k][j];
                }
            }
        }
    }
    AllPairs { dist, pred }
}

/// Edge-pointer targets: for every stored edge, in both orientations when
/// undirected, `(i, j, k)` where `k` is the predecessor of `j` on a shortest
/// path from `i`.
pub fn oracle_floyd_warshall(g: &Graph) -> (Vec<(usize, usize, usize)>, AllPairs<f64>) {
    let ap = floyd_warshall(g.n, &g.arcs());
    let targets = g
        .arcs()
        .into_iter()
        .map(|(i, j, _)| (i, j, ap.pred[i][j].expect("an edge makes its endpoint reachable")))
        .collect();
    (targets, ap)
}

/// Component id per node (Kosaraju). Ids are numbered in order of discovery.
pub fn scc_components(g: &Graph) -> Vec<usize> {
    let n = g.n;
    let mut out_adj = vec![Vec::new(); n];
    let mut in_adj = vec![Vec::new(); n];
    for (s, d, _) in g.arcs() {
        out_adj[s].push(d);
        in_adj[d].push(s);
    }
    // iterative post-order on the forward graph
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut stack = vec![(root, 0usize)];
        while let Some(&mut (u, ref mut next)) = stack.last_mut() {
            if *next < out_adj[u].len() {
                let v = out_adj[u][*next];
                *next += 1;
                if !seen[v] {
                    seen[v] = true;
                    stack.push((v, 0));
                }
            } else {
                order.push(u);
                stack.pop();
            }
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut next_id = 0;
    for &root in order.iter().rev() {
        if comp[root] != usize::MAX {
            continue;
        }
        comp[root] = next_id;
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            for &v in &in_adj[u] {
                if comp[v] == usize::MAX {
                    comp[v] = next_id;
                    stack.push(v);
                }
            }
        }
        next_id += 1;
    }
    comp
}

/// SCC pointers: the lowest-index in-neighbor inside the node's own
/// component, or the node itself when there is none.
pub fn oracle_scc(g: &Graph) -> Vec<usize> {
    let comp = scc_components(g);
    (0..g.n)
        .map(|u| {
            g.in_neighbors(u)
                .into_iter()
                .find(|&v| v != u && comp[v] == comp[u])
                .unwrap_or(u)
        })
        .collect()
}

/// Sorted-order predecessor pointers under a stable sort by `(key, index)`;
/// the minimum points to itself.
pub fn oracle_insertion_sort(keys: &[f64]) -> Vec<usize> {
    let order = sorted_order(keys);
    let mut pointers = vec![0; keys.len()];
    for (pos, &i) in order.iter().enumerate() {
        pointers[i] = if pos == 0 { i } else { order[pos - 1] };
    }
    pointers
}

/// Indices of `keys` in ascending `(key, index)` order.
pub fn sorted_order(keys: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    order
}

/// Walks insertion-sort pointers back into a list order: start at the
/// self-pointing node and repeatedly move to the node that points at the
/// current one. Returns `None` when the pointers do not form a single chain.
pub fn decode_sort_pointers(pointers: &[usize]) -> Option<Vec<usize>> {
    let n = pointers.len();
    let mut successor = vec![None; n];
    let mut head = None;
    for (i, &p) in pointers.iter().enumerate() {
        if p >= n {
            return None;
        }
        if p == i {
            if head.replace(i).is_some() {
                return None;
            }
        } else if successor[p].replace(i).is_some() {
            return None;
        }
    }
    let mut out = Vec::with_capacity(n);
    let mut cur = head;
    while let Some(u) = cur {
        out.push(u);
        if out.len() > n {
            return None;
        }
        cur = successor[u];
    }
    (out.len() == n).then_some(out)
}
