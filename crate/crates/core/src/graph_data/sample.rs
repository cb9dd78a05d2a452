use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_data::graph::{gen_erdos_renyi, Graph};
use crate::graph_data::oracles::{
    oracle_bellman_ford, oracle_floyd_warshall, oracle_insertion_sort, oracle_scc,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    BellmanFord,
    FloydWarshall,
    Scc,
    InsertionSort,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::BellmanFord,
        Algorithm::FloydWarshall,
        Algorithm::Scc,
        Algorithm::InsertionSort,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::BellmanFord => "bellman_ford",
            Algorithm::FloydWarshall => "floyd_warshall",
            Algorithm::Scc => "scc",
            Algorithm::InsertionSort => "insertion_sort",
        }
    }

    /// Width of the raw per-node feature vector.
    pub fn node_raw_dim(self) -> usize {
        match self {
            Algorithm::BellmanFord | Algorithm::InsertionSort => 2,
            Algorithm::FloydWarshall | Algorithm::Scc => 1,
        }
    }

    /// Width of the raw per-message-pair feature vector.
    pub fn edge_raw_dim(self) -> usize {
        match self {
            Algorithm::Scc => 2,
            _ => 1,
        }
    }

    pub fn uses_edge_pointers(self) -> bool {
        self == Algorithm::FloydWarshall
    }

    pub fn is_graph_task(self) -> bool {
        self != Algorithm::InsertionSort
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Pointer targets: one node index per node, or `(i, j, k)` per directed edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Node(Vec<usize>),
    Edge(Vec<(usize, usize, usize)>),
}

impl Target {
    pub fn slots(&self) -> usize {
        match self {
            Target::Node(v) => v.len(),
            Target::Edge(v) => v.len(),
        }
    }

    /// The pointed-to node of every slot, in slot order.
    pub fn pointees(&self) -> Vec<usize> {
        match self {
            Target::Node(v) => v.clone(),
            Target::Edge(v) => v.iter().map(|e| e.2).collect(),
        }
    }
}

/// One problem instance with its oracle outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub algorithm: Algorithm,
    #[serde(flatten)]
    pub graph: Graph,
    pub node_raw: Vec<Vec<f64>>,
    pub target: Target,
    /// Oracle outer-loop step count; diagnostics only.
    pub tau: usize,
}

impl Sample {
    pub fn n(&self) -> usize {
        self.graph.n
    }

    /// Source node of a Bellman-Ford instance (flag in the second raw column).
    pub fn source(&self) -> Option<usize> {
        if self.algorithm != Algorithm::BellmanFord {
            return None;
        }
        self.node_raw.iter().position(|r| r.get(1).copied() == Some(1.0))
    }

    /// Checks the schema and the target-validity invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let bad = |m: String| Err(Error::Data(format!("{} sample: {m}", self.algorithm)));
        if n == 0 {
            return bad("no nodes".into());
        }
        if self.tau < 1 {
            return bad("tau must be at least 1".into());
        }
        if self.node_raw.len() != n || self.node_raw.iter().any(|r| r.len() != self.algorithm.node_raw_dim()) {
            return bad("node_raw does not match the schema".into());
        }
        let expect_directed = self.algorithm == Algorithm::Scc;
        if self.graph.directed != expect_directed {
            return bad(format!("directed flag must be {expect_directed}"));
        }
        for (k, &(s, d, w)) in self.graph.edges.iter().enumerate() {
            if s >= n || d >= n || s == d || !(0.0..=1.0).contains(&w) {
                return bad(format!("edge {k} ({s},{d},{w}) invalid"));
            }
            if !self.graph.directed && s > d {
                return bad(format!("undirected edge {k} not normalized"));
            }
            if self.graph.edges[..k].iter().any(|e| e.0 == s && e.1 == d) {
                return bad(format!("duplicate edge ({s},{d})"));
            }
        }
        match (&self.target, self.algorithm) {
            (Target::Edge(t), Algorithm::FloydWarshall) => {
                let arcs = self.graph.arcs();
                if t.len() != arcs.len() {
                    return bad("one edge pointer per directed edge expected".into());
                }
                for (&(i, j, k), &(s, d, _)) in t.iter().zip(&arcs) {
                    if (i, j) != (s, d) || k >= n {
                        return bad(format!("edge pointer ({i},{j},{k}) invalid"));
                    }
                }
            }
            (Target::Node(t), a) if a != Algorithm::FloydWarshall => {
                if t.len() != n || t.iter().any(|&p| p >= n) {
                    return bad("node pointers out of range".into());
                }
                if a == Algorithm::BellmanFord {
                    let src = self.source().ok_or_else(|| Error::Data("bellman_ford sample without source".into()))?;
                    if t[src] != src {
                        return bad("source must point to itself".into());
                    }
                    let adj = self.graph.adjacency();
                    for (u, &p) in t.iter().enumerate() {
                        if p != u && adj[p][u].is_none() {
                            return bad(format!("pointer {u}->{p} is not an edge"));
                        }
                    }
                }
            }
            _ => return bad("target kind does not match algorithm".into()),
        }
        Ok(())
    }
}

fn positional(i: usize, n: usize) -> f64 {
    i as f64 / n as f64
}

/// Draws one instance of size `n`. Graph tasks draw `p` uniformly from
/// `p_grid`.
pub fn gen_sample<R: Rng + ?Sized>(algorithm: Algorithm, n: usize, p_grid: &[f64], rng: &mut R) -> Sample {
    let pick_p = |rng: &mut R| *p_grid.choose(rng).expect("non-empty edge-probability grid");
    match algorithm {
        Algorithm::BellmanFord => {
            let p = pick_p(rng);
            let graph = gen_erdos_renyi(n, p, false, rng);
            let source = rng.random_range(0..n);
            let sp = oracle_bellman_ford(&graph, source);
            let node_raw = (0..n)
                .map(|i| vec![positional(i, n), if i == source { 1.0 } else { 0.0 }])
                .collect();
            Sample {
                algorithm,
                graph,
                node_raw,
                target: Target::Node(sp.pointers),
                tau: sp.tau,
            }
        }
        Algorithm::FloydWarshall => {
            let p = pick_p(rng);
            let graph = gen_erdos_renyi(n, p, false, rng);
            let (targets, _) = oracle_floyd_warshall(&graph);
            Sample {
                algorithm,
                node_raw: (0..n).map(|i| vec![positional(i, n)]).collect(),
                graph,
                target: Target::Edge(targets),
                tau: n.max(1),
            }
        }
        Algorithm::Scc => {
            let p = pick_p(rng);
            let mut graph = gen_erdos_renyi(n, p, true, rng);
            graph.edges.iter_mut().for_each(|e| e.2 = 1.0);
            let pointers = oracle_scc(&graph);
            Sample {
                algorithm,
                node_raw: (0..n).map(|i| vec![positional(i, n)]).collect(),
                graph,
                target: Target::Node(pointers),
                tau: n.max(1),
            }
        }
        Algorithm::InsertionSort => {
            let keys: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let pointers = oracle_insertion_sort(&keys);
            Sample {
                algorithm,
                graph: Graph::new(n, false),
                node_raw: keys.iter().enumerate().map(|(i, &k)| vec![k, positional(i, n)]).collect(),
                target: Target::Node(pointers),
                tau: n.saturating_sub(1).max(1),
            }
        }
    }
}

/// Relabels nodes: node `i` becomes `perm[i]`. Raw features travel with their
/// node, so positional features are permuted as data rather than recomputed.
pub fn permute_sample(s: &Sample, perm: &[usize]) -> Sample {
    let n = s.n();
    assert_eq!(perm.len(), n, "permutation length");
    let mut graph = Graph::new(n, s.graph.directed);
    for &(a, b, w) in &s.graph.edges {
        graph.add_edge(perm[a], perm[b], w);
    }
    let mut node_raw = vec![Vec::new(); n];
    for (i, r) in s.node_raw.iter().enumerate() {
        node_raw[perm[i]] = r.clone();
    }
    let target = match &s.target {
        Target::Node(t) => {
            let mut out = vec![0; n];
            for (i, &p) in t.iter().enumerate() {
                out[perm[i]] = perm[p];
            }
            Target::Node(out)
        }
        Target::Edge(t) => {
            // keep slot order aligned with the relabeled graph's arcs
            let arcs = graph.arcs();
            let out = arcs
                .iter()
                .map(|&(i, j, _)| {
                    let &(_, _, k) = t
                        .iter()
                        .find(|&&(a, b, _)| perm[a] == i && perm[b] == j)
                        .expect("every arc has a target");
                    (i, j, perm[k])
                })
                .collect();
            Target::Edge(out)
        }
    };
    Sample {
        algorithm: s.algorithm,
        graph,
        node_raw,
        target,
        tau: s.tau,
    }
}
