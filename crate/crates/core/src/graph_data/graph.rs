use rand::Rng;
use serde::{Deserialize, Serialize};

/// Weighted graph on nodes `0..n`.
///
/// Undirected graphs store each edge once (`src < dst`); directed graphs store
/// ordered pairs. Self-loops and duplicates are never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub n: usize,
    pub directed: bool,
    pub edges: Vec<(usize, usize, f64)>,
}

impl Graph {
    pub fn new(n: usize, directed: bool) -> Self {
        Self {
            n,
            directed,
            edges: Vec::new(),
        }
    }

    /// Adds an edge; undirected edges are normalized to `src < dst`. Panics on
    /// self-loops, out-of-range nodes and duplicates.
    pub fn add_edge(&mut self, src: usize, dst: usize, weight: f64) {
        assert!(src < self.n && dst < self.n, "edge ({src},{dst}) outside 0..{}", self.n);
        assert_ne!(src, dst, "self-loops are not stored");
        let (a, b) = if self.directed || src < dst { (src, dst) } else { (dst, src) };
        assert!(
            !self.edges.iter().any(|&(s, d, _)| s == a && d == b),
            "duplicate edge ({a},{b})"
        );
        self.edges.push((a, b, weight));
    }

    /// Directed arcs: stored edges, plus their reverses when undirected.
    pub fn arcs(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.edges.len() * 2);
        for &(s, d, w) in &self.edges {
            out.push((s, d, w));
            if !self.directed {
                out.push((d, s, w));
            }
        }
        out
    }

    /// `adj[u][v]` is the weight of arc `u→v`, if present.
    pub fn adjacency(&self) -> Vec<Vec<Option<f64>>> {
        let mut adj = vec![vec![None; self.n]; self.n];
        for (s, d, w) in self.arcs() {
            adj[s][d] = Some(w);
        }
        adj
    }

    /// In-neighbors (sources of arcs into `u`) in ascending order.
    pub fn in_neighbors(&self, u: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.arcs().into_iter().filter(|a| a.1 == u).map(|a| a.0).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Longest shortest-path hop count among reachable ordered pairs,
    /// treating arcs as unit length.
    pub fn hop_diameter(&self) -> usize {
        let mut out_adj = vec![Vec::new(); self.n];
        for (s, d, _) in self.arcs() {
            out_adj[s].push(d);
        }
        let mut best = 0;
        for s in 0..self.n {
            let mut dist = vec![usize::MAX; self.n];
            dist[s] = 0;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in &out_adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        best = best.max(dist[v]);
                        queue.push_back(v);
                    }
                }
            }
        }
        best
    }
}

/// Erdős–Rényi graph: every unordered (or ordered, when `directed`) pair is
/// included independently with probability `p`; weights are iid uniform on
/// `[0, 1)`.
pub fn gen_erdos_renyi<R: Rng + ?Sized>(n: usize, p: f64, directed: bool, rng: &mut R) -> Graph {
    assert!((0.0..=1.0).contains(&p), "edge probability {p} outside [0,1]");
    let mut g = Graph::new(n, directed);
    for i in 0..n {
        for j in 0..n {
            if i == j || (!directed && j < i) {
                continue;
            }
            if rng.random::<f64>() < p {
                let w = rng.random::<f64>();
                g.edges.push((i, j, w));
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn extreme_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(gen_erdos_renyi(6, 0.0, false, &mut rng).edges.is_empty());
        let full = gen_erdos_renyi(4, 1.0, false, &mut rng);
        assert_eq!(full.edges.len(), 6);
        assert!(full.edges.iter().all(|&(s, d, w)| s < d && (0.0..1.0).contains(&w)));
        assert_eq!(gen_erdos_renyi(4, 1.0, true, &mut rng).edges.len(), 12);
    }

    #[test]
    fn edge_count_matches_binomial_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, p, trials) = (16usize, 0.5, 10_000);
        let pairs = (n * (n - 1) / 2) as f64;
        let total: usize = (0..trials)
            .map(|_| gen_erdos_renyi(n, p, false, &mut rng).edges.len())
            .sum();
        let mean = total as f64 / trials as f64;
        let sigma_of_mean = (pairs * p * (1.0 - p) / trials as f64).sqrt();
        assert!((mean - pairs * p).abs() <= 3.0 * sigma_of_mean, "mean {mean}");
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn undirected_duplicates_rejected() {
        let mut g = Graph::new(3, false);
        g.add_edge(0, 1, 0.5);
        g.add_edge(1, 0, 0.5);
    }

    #[test]
    fn diameter_of_path() {
        let mut g = Graph::new(4, false);
        g.add_edge(0, 1, 1.0);
        g.add_edge(1, 2, 1.0);
        g.add_edge(2, 3, 1.0);
        assert_eq!(g.hop_diameter(), 3);
    }
}
