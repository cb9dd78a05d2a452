//! Problem instances, exact oracles and dataset files.

pub mod dataset;
pub mod graph;
pub mod oracles;
pub mod reference;
pub mod sample;

pub use dataset::{make_dataset, read_jsonl, write_jsonl, DatasetSpec, Split, SplitCounts};
pub use graph::{gen_erdos_renyi, Graph};
pub use oracles::{
    bellman_ford, decode_sort_pointers, floyd_warshall, oracle_bellman_ford, oracle_floyd_warshall,
    oracle_insertion_sort, oracle_scc, scc_components, sorted_order, AllPairs, ShortestPaths, Weight,
};
pub use reference::{canonical_labels, mutual_reachability_labels, reachability, simple_path_minima};
pub use sample::{gen_sample, permute_sample, Algorithm, Sample, Target};
