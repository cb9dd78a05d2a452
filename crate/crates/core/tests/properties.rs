use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dear::graph_data::{
    bellman_ford, decode_sort_pointers, floyd_warshall, gen_erdos_renyi, gen_sample, oracle_bellman_ford,
    oracle_floyd_warshall, oracle_insertion_sort, oracle_scc, scc_components, sorted_order, Algorithm, Graph,
};
use dear::numeric::{masked_max, Tensor};
use dear::verify::{all_passed, equivariance_suite, tape_suite};

fn graph(n: usize, p: f64, directed: bool, seed: u64) -> Graph {
    gen_erdos_renyi(n, p, directed, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn integer_arcs(g: &Graph) -> Vec<(usize, usize, i64)> {
    g.arcs().into_iter().map(|(s, d, w)| (s, d, (w * 1024.0) as i64)).collect()
}

fn naive_group_max(rows: &[Vec<f64>], groups: &[Option<usize>], n_groups: usize) -> Vec<Vec<f64>> {
    let cols = rows[0].len();
    (0..n_groups)
        .map(|g| {
            (0..cols)
                .map(|c| {
                    rows.iter()
                        .zip(groups)
                        .filter(|(_, gr)| **gr == Some(g))
                        .map(|(r, _)| r[c])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect()
        })
        .collect()
}

prop_compose! {
    fn grouped_rows()(n_groups in 1usize..4, cols in 1usize..4, extra in 0usize..6)
        (rows in prop::collection::vec(prop::collection::vec(-3i32..3, cols), n_groups + extra),
         assign in prop::collection::vec(prop::option::weighted(0.8, 0..n_groups), extra),
         n_groups in Just(n_groups))
        -> (Vec<Vec<f64>>, Vec<Option<usize>>, usize)
    {
        // every group owns at least one row; small integers force ties
        let mut groups: Vec<Option<usize>> = (0..n_groups).map(Some).collect();
        groups.extend(assign);
        let rows = rows.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
        (rows, groups, n_groups)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masked_max_matches_naive_and_routes_to_a_winner((rows, groups, n_groups) in grouped_rows()) {
        let t = Tensor::from_rows(&rows).unwrap();
        let (out, arg) = masked_max(&t, &groups, n_groups).unwrap();
        let expect = naive_group_max(&rows, &groups, n_groups);
        let cols = rows[0].len();
        for g in 0..n_groups {
            for c in 0..cols {
                prop_assert_eq!(out.get(g, c), expect[g][c]);
                let winner = arg[g * cols + c];
                prop_assert_eq!(groups[winner], Some(g));
                prop_assert_eq!(rows[winner][c], expect[g][c]);
                // ties go to the lowest row
                let first = (0..rows.len()).find(|&r| groups[r] == Some(g) && rows[r][c] == expect[g][c]);
                prop_assert_eq!(Some(winner), first);
            }
        }
    }

    #[test]
    fn duplicate_messages_leave_the_max_unchanged((rows, groups, n_groups) in grouped_rows(), pick in any::<prop::sample::Index>()) {
        let r = pick.index(rows.len());
        let mut rows2 = rows.clone();
        rows2.push(rows[r].clone());
        let mut groups2 = groups.clone();
        groups2.push(groups[r]);
        let a = masked_max(&Tensor::from_rows(&rows).unwrap(), &groups, n_groups).unwrap().0;
        let b = masked_max(&Tensor::from_rows(&rows2).unwrap(), &groups2, n_groups).unwrap().0;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn bellman_ford_pointer_chains_reach_the_source(n in 1usize..12, p in 0.0f64..1.0, seed in any::<u64>(), src in any::<prop::sample::Index>()) {
        let g = graph(n, p, false, seed);
        let source = src.index(n);
        let sp = oracle_bellman_ford(&g, source);
        for u in 0..n {
            match sp.distances[u] {
                None => prop_assert_eq!(sp.pointers[u], u),
                Some(_) if u == source => prop_assert_eq!(sp.pointers[u], u),
                Some(du) => {
                    let mut cur = u;
                    let mut last = du;
                    let mut hops = 0;
                    while cur != source {
                        cur = sp.pointers[cur];
                        hops += 1;
                        prop_assert!(hops < n, "pointer chain from {} does not reach the source", u);
                        let dc = sp.distances[cur].expect("chain stays reachable");
                        prop_assert!(dc <= last);
                        last = dc;
                    }
                }
            }
        }
    }

    #[test]
    fn floyd_warshall_satisfies_the_triangle_inequality(n in 1usize..9, p in 0.0f64..1.0, seed in any::<u64>()) {
        let g = graph(n, p, false, seed);
        let ap = floyd_warshall(n, &integer_arcs(&g));
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if let (Some(ik), Some(kj)) = (ap.dist[i][k], ap.dist[k][j]) {
                        let ij = ap.dist[i][j];
                        prop_assert!(ij.is_some_and(|d| d <= ik + kj));
                    }
                }
            }
        }
        // every row agrees with single-source Bellman-Ford
        for s in 0..n {
            prop_assert_eq!(&ap.dist[s], &bellman_ford(n, &integer_arcs(&g), s).distances);
        }
    }

    #[test]
    fn scc_pointers_stay_in_their_component(n in 1usize..12, p in 0.0f64..1.0, seed in any::<u64>()) {
        let g = graph(n, p, true, seed);
        let comp = scc_components(&g);
        for (u, &v) in oracle_scc(&g).iter().enumerate() {
            prop_assert_eq!(comp[u], comp[v]);
        }
    }

    #[test]
    fn sort_pointers_decode_ascending(keys in prop::collection::vec(0.0f64..1.0, 1..24)) {
        let order = decode_sort_pointers(&oracle_insertion_sort(&keys)).expect("single chain");
        prop_assert_eq!(&order, &sorted_order(&keys));
        prop_assert!(order.windows(2).all(|w| keys[w[0]] <= keys[w[1]]));
    }

    #[test]
    fn oracles_are_pure(n in 1usize..10, p in 0.0f64..1.0, seed in any::<u64>()) {
        let g = graph(n, p, false, seed);
        prop_assert_eq!(oracle_bellman_ford(&g, 0), oracle_bellman_ford(&g.clone(), 0));
        prop_assert_eq!(oracle_floyd_warshall(&g), oracle_floyd_warshall(&g.clone()));
        let d = graph(n, p, true, seed);
        prop_assert_eq!(oracle_scc(&d), oracle_scc(&d.clone()));
    }

    #[test]
    fn generated_samples_pass_validation(alg in prop::sample::select(Algorithm::ALL.to_vec()), n in 1usize..12, seed in any::<u64>()) {
        let s = gen_sample(alg, n, &[0.1, 0.5, 0.9], &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(s.validate().is_ok());
        prop_assert_eq!(s.n(), n);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn tape_gradients_match_finite_differences(seed in any::<u64>()) {
        let checks = tape_suite(seed).unwrap();
        prop_assert!(all_passed(&checks), "{:?}", checks.iter().filter(|c| !c.passed).collect::<Vec<_>>());
    }

    #[test]
    fn processor_and_decoder_commute_with_relabeling(seed in any::<u64>()) {
        let checks = equivariance_suite(4, 8, 1e-10, seed).unwrap();
        prop_assert!(all_passed(&checks), "{:?}", checks.iter().filter(|c| !c.passed).collect::<Vec<_>>());
    }
}
