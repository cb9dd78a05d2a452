//! Brute-force reference oracles, kept deliberately naive and independent of
//! the production oracles they are used to check.

use crate::graph_data::graph::Graph;
use crate::graph_data::oracles::Weight;

/// Minimum over all simple paths from `source` of the left-to-right weight
/// sum, by exhaustive depth-first enumeration.
pub fn simple_path_minima<W: Weight>(n: usize, arcs: &[(usize, usize, W)], source: usize) -> Vec<Option<W>> {
    let mut out_adj: Vec<Vec<(usize, W)>> = vec![Vec::new(); n];
    for &(s, d, w) in arcs {
        out_adj[s].push((d, w));
    }
    let mut best: Vec<Option<W>> = vec![None; n];
    let mut on_path = vec![false; n];
    fn dfs<W: Weight>(
        u: usize,
        acc: W,
        adj: &[Vec<(usize, W)>],
        on_path: &mut [bool],
        best: &mut [Option<W>],
    ) {
        if best[u].is_none_or(|b| acc < b) {
            best[u] = Some(acc);
        }
        on_path[u] = true;
        for &(v, w) in &adj[u] {
            if !on_path[v] {
                dfs(v, acc + w, adj, on_path, best);
            }
        }
        on_path[u] = false;
    }
    dfs(source, W::zero(), &out_adj, &mut on_path, &mut best);
    best
}

/// `reach[u][v]`: `v` reachable from `u` (every node reaches itself).
pub fn reachability(g: &Graph) -> Vec<Vec<bool>> {
    let n = g.n;
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for (s, d, _) in g.arcs() {
        reach[s][d] = true;
    }
    // Warshall closure
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    reach
}

/// Component label per node: the smallest node index mutually reachable with
/// it.
pub fn mutual_reachability_labels(g: &Graph) -> Vec<usize> {
    let reach = reachability(g);
    (0..g.n)
        .map(|u| (0..g.n).find(|&v| reach[u][v] && reach[v][u]).expect("u reaches itself"))
        .collect()
}

/// Relabels arbitrary component ids to the smallest member index.
pub fn canonical_labels(comp: &[usize]) -> Vec<usize> {
    (0..comp.len())
        .map(|u| (0..comp.len()).find(|&v| comp[v] == comp[u]).expect("u is in its own class"))
        .collect()
}
