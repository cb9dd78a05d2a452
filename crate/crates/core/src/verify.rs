//! Numerical and combinatorial self-checks shared by the `selftest` command
//! and the acceptance tests.
//!
//! Every suite returns one [`Check`] per measured quantity rather than
//! failing fast, so a report can list everything that is off at once.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::deq::{implicit_backward, solve_fixed_point, BackwardConfig, FixedPointMap, ProcessorMap, SolverConfig, StopMode};
use crate::error::Result;
use crate::graph_data::{
    bellman_ford, canonical_labels, decode_sort_pointers, floyd_warshall, gen_erdos_renyi, gen_sample,
    mutual_reachability_labels, oracle_insertion_sort, oracle_scc, permute_sample, scc_components, simple_path_minima,
    Algorithm, DatasetSpec, Sample,
};
use crate::model::decode::{decode_logits, decode_on_tape, loss_on_tape, pointer_loss};
use crate::model::encode::{encode, InstanceLayout};
use crate::model::processor::{apply_step, processor_step, step_constants, step_inputs_on_tape, unroll};
use crate::model::{Model, ModelConfig};
use crate::numeric::{GradTargets, ParamId, Tape, Tensor, Var};

/// One measured quantity against its threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value ≤ threshold`.
    pub fn at_most(suite: &'static str, name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            value,
            threshold,
            passed: value <= threshold,
        }
    }

    /// Boolean check; `value` is the number of violations.
    pub fn exact(suite: &'static str, name: impl Into<String>, violations: usize) -> Self {
        Self::at_most(suite, name, violations as f64, 0.0)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "ok" } else { "FAIL" };
        write!(f, "{status:4} {}::{} {:.3e} (limit {:.1e})", self.suite, self.name, self.value, self.threshold)
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

/// Relative difference of two blocks, `‖a − b‖ / max(‖a‖, ‖b‖)`. Blocks whose
/// norms are both below `floor` are compared absolutely.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("consistent shape")
}

// ---------------------------------------------------------------------------
// classical oracles

/// Exact integer weights: generated weights are multiples of 2⁻⁵³.
fn integer_arcs(arcs: &[(usize, usize, f64)]) -> Vec<(usize, usize, i64)> {
    arcs.iter()
        .map(|&(s, d, w)| (s, d, (w * 9_007_199_254_740_992.0) as i64))
        .collect()
}

/// Compares the production oracles with brute force on `graphs` random graphs
/// of 2 to `max_n` nodes, and insertion-sort pointers on as many key vectors.
pub fn oracle_suite(graphs: usize, max_n: usize, seed: u64) -> Vec<Check> {
    const SUITE: &str = "oracles";
    let grid = DatasetSpec::edge_probability_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut bf_dist, mut bf_ptr, mut fw, mut scc, mut scc_ptr, mut sort) = (0, 0, 0, 0, 0, 0);
    for _ in 0..graphs {
        let n = rng.random_range(2..=max_n);
        let p = grid[rng.random_range(0..grid.len())];

        let g = gen_erdos_renyi(n, p, false, &mut rng);
        let arcs = g.arcs();
        let source = rng.random_range(0..n);
        let sp = bellman_ford(n, &arcs, source);
        if sp.distances != simple_path_minima(n, &arcs, source) {
            bf_dist += 1;
        }
        let tight = (0..n).all(|v| match sp.distances[v] {
            None => sp.pointers[v] == v,
            Some(_) if v == source => sp.pointers[v] == v,
            Some(dv) => arcs
                .iter()
                .any(|&(s, d, w)| s == sp.pointers[v] && d == v && sp.distances[s].is_some_and(|ds| ds + w == dv)),
        });
        if !tight {
            bf_ptr += 1;
        }

        let iarcs = integer_arcs(&arcs);
        let ap = floyd_warshall(n, &iarcs);
        if (0..n).any(|i| ap.dist[i] != bellman_ford(n, &iarcs, i).distances) {
            fw += 1;
        }

        let dg = gen_erdos_renyi(n, p, true, &mut rng);
        let comp = scc_components(&dg);
        if canonical_labels(&comp) != canonical_labels(&mutual_reachability_labels(&dg)) {
            scc += 1;
        }
        if oracle_scc(&dg).iter().enumerate().any(|(u, &v)| comp[u] != comp[v]) {
            scc_ptr += 1;
        }

        let keys: Vec<f64> = (0..rng.random_range(1..=2 * max_n)).map(|_| rng.random()).collect();
        let ok = decode_sort_pointers(&oracle_insertion_sort(&keys)).is_some_and(|order| {
            let mut seen = order.clone();
            seen.sort_unstable();
            seen == (0..keys.len()).collect::<Vec<_>>() && order.windows(2).all(|w| keys[w[0]] <= keys[w[1]])
        });
        if !ok {
            sort += 1;
        }
    }
    vec![
        Check::exact(SUITE, "bellman_ford_vs_simple_paths", bf_dist),
        Check::exact(SUITE, "bellman_ford_pointers_tight", bf_ptr),
        Check::exact(SUITE, "floyd_warshall_vs_all_sources", fw),
        Check::exact(SUITE, "scc_vs_mutual_reachability", scc),
        Check::exact(SUITE, "scc_pointers_in_component", scc_ptr),
        Check::exact(SUITE, "insertion_sort_decodes_ascending", sort),
    ]
}

// ---------------------------------------------------------------------------
// tape operations

type Build = Box<dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>>;

/// Gradient of `Σ R ⊙ op(inputs)` for a fixed random `R`, by tape and by
/// central differences with step `h`.
fn check_op(name: &str, inputs: Vec<Tensor<f64>>, build: &Build, h: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let eval = |inputs: &[Tensor<f64>], weights: Option<&Tensor<f64>>| -> Result<(f64, Vec<Tensor<f64>>, Tensor<f64>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let shape = tape.value(out).shape().to_vec();
        let w = match weights {
            Some(w) => w.clone(),
            None => Tensor::new(shape.clone(), vec![0.0; shape.iter().product()])?,
        };
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv)?;
        let loss = tape.sum(prod);
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        let g = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, g, w))
    };
    let (_, _, zeros) = eval(&inputs, None)?;
    let weights = Tensor::new(
        zeros.shape().to_vec(),
        (0..zeros.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    )?;
    let (_, analytic, _) = eval(&inputs, Some(&weights))?;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let mut fd = Vec::with_capacity(input.len());
        for e in 0..input.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[e] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[e] -= h;
            let fp = eval(&plus, Some(&weights))?.0;
            let fm = eval(&minus, Some(&weights))?.0;
            fd.push((fp - fm) / (2.0 * h));
        }
        worst = worst.max(relative_error(analytic[k].data(), &fd, 1e-8));
    }
    log::debug!("tape op {name}: relative error {worst:.3e}");
    Ok(worst)
}

/// Every differentiable tape operation against central differences
/// (`h = 1e-6`, relative error ≤ 1e-6).
pub fn tape_suite(seed: u64) -> Result<Vec<Check>> {
    const SUITE: &str = "tape";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let idx: Arc<[usize]> = vec![2, 0, 2, 1, 3].into();
    let groups: Arc<[usize]> = vec![0, 1, 0, 2, 1, 0].into();
    let cases: Vec<(&str, Vec<Tensor<f64>>, Build)> = vec![
        ("matmul_t", vec![random_tensor(r, 3, 4), random_tensor(r, 2, 4)], Box::new(|t, v| t.matmul_t(v[0], v[1]))),
        ("matmul_t_cols", vec![random_tensor(r, 3, 3), random_tensor(r, 2, 6)], Box::new(|t, v| {
            t.matmul_t_cols(v[0], v[1], 2)
        })),
        ("add_bias", vec![random_tensor(r, 3, 4), random_tensor(r, 1, 4)], Box::new(|t, v| t.add_bias(v[0], v[1]))),
        ("add", vec![random_tensor(r, 3, 2), random_tensor(r, 3, 2)], Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub", vec![random_tensor(r, 3, 2), random_tensor(r, 3, 2)], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul", vec![random_tensor(r, 3, 2), random_tensor(r, 3, 2)], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("affine", vec![random_tensor(r, 2, 3)], Box::new(|t, v| Ok(t.affine(v[0], -1.5, 0.25)))),
        ("relu", vec![random_tensor(r, 4, 3)], Box::new(|t, v| Ok(t.relu(v[0])))),
        ("sigmoid", vec![random_tensor(r, 4, 3)], Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        ("concat_cols", vec![random_tensor(r, 3, 2), random_tensor(r, 3, 3)], Box::new(|t, v| t.concat_cols(v[0], v[1]))),
        ("sum", vec![random_tensor(r, 3, 3)], Box::new(|t, v| Ok(t.sum(v[0])))),
        ("sum_squares", vec![random_tensor(r, 3, 3)], Box::new(|t, v| Ok(t.sum_squares(v[0])))),
    ];
    let mut checks = Vec::new();
    for (name, inputs, build) in cases {
        let err = check_op(name, inputs, &build, 1e-6, r)?;
        checks.push(Check::at_most(SUITE, name, err, 1e-6));
    }

    // operations with index arguments
    let indexed: Vec<(&str, Vec<Tensor<f64>>, Build)> = vec![
        ("gather_rows", vec![random_tensor(r, 4, 3)], {
            let idx = idx.clone();
            Box::new(move |t, v| t.gather_rows(v[0], idx.clone()))
        }),
        ("segment_max", vec![random_tensor(r, 6, 3)], {
            let groups = groups.clone();
            Box::new(move |t, v| Ok(t.segment_max(v[0], &groups, 3)?.0))
        }),
        ("gather_argmax", vec![random_tensor(r, 6, 3), random_tensor(r, 6, 3)], {
            let groups = groups.clone();
            Box::new(move |t, v| {
                let (_, argmax) = t.segment_max(v[0], &groups, 3)?;
                t.gather_argmax(v[1], argmax)
            })
        }),
        ("masked_xent", vec![random_tensor(r, 3, 4)], Box::new(|t, v| {
            let mask = [true, true, false, true, true, true, true, true, false, true, true, false];
            t.masked_xent(v[0], &mask, vec![3, 0, 1].into())
        })),
    ];
    for (name, inputs, build) in indexed {
        let err = check_op(name, inputs, &build, 1e-6, r)?;
        checks.push(Check::at_most(SUITE, name, err, 1e-6));
    }
    Ok(checks)
}

// ---------------------------------------------------------------------------
// end-to-end gradients

fn random_instance(alg: Algorithm, n: usize, rng: &mut ChaCha8Rng) -> Sample {
    gen_sample(alg, n, &DatasetSpec::edge_probability_grid(), rng)
}

/// A sample whose graph has at least `n − 1` edges; an edgeless graph makes
/// the pointer loss constant.
fn nontrivial_instance(alg: Algorithm, n: usize, rng: &mut ChaCha8Rng) -> Sample {
    loop {
        let s = gen_sample(alg, n, &[0.5], rng);
        if !alg.is_graph_task() || s.graph.edges.len() + 1 >= n {
            return s;
        }
    }
}

fn block_grads(model: &Model<f64>, grads: &[(ParamId, Tensor<f64>)]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
    for (id, g) in grads {
        for (o, x) in out[id.0].iter_mut().zip(g.data()) {
            *o += x;
        }
    }
    out
}

/// Mean pointer loss after one processor step from `H = 0`, without a tape.
fn one_step_loss(model: &Model<f64>, layout: &InstanceLayout<f64>) -> Result<f64> {
    let consts = step_constants(model, &encode(model, layout)?)?;
    let h = apply_step(model, layout, &consts, &Tensor::zeros(&[layout.n, model.latent_dim()]))?;
    pointer_loss(&decode_logits(model, layout, &h)?, &layout.targets)
}

/// Tape gradient of the one-step mean pointer loss against central
/// differences, per parameter block, on a 4-node instance of `algorithm`.
pub fn gradient_suite(algorithm: Algorithm, latent_dim: usize, tolerance: f64, seed: u64) -> Result<Vec<Check>> {
    const SUITE: &str = "gradient";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = nontrivial_instance(algorithm, 4, &mut rng);
    let layout = InstanceLayout::from_sample(&sample)?;
    let mut model = Model::<f64>::new(ModelConfig::new(algorithm, latent_dim), seed)?;

    let analytic = {
        let mut tape = Tape::new();
        let inputs = step_inputs_on_tape(&mut tape, &model, &layout)?;
        let h0 = tape.constant(Tensor::zeros(&[layout.n, latent_dim]));
        let h = processor_step(&mut tape, &model, &layout, inputs, h0)?;
        let logits = decode_on_tape(&mut tape, &model, &layout, h)?;
        let loss = loss_on_tape(&mut tape, &layout, logits)?;
        let loss = tape.affine(loss, 1.0 / layout.num_slots() as f64, 0.0);
        let grads = tape.vjp(loss, Tensor::scalar(1.0), GradTargets::ParamsOnly)?;
        block_grads(&model, &tape.param_grads(&grads))
    };

    let h = 1e-6;
    let ids: Vec<ParamId> = model.params.ids().collect();
    let mut checks = Vec::new();
    for id in ids {
        let len = model.params.get(id).value.len();
        let mut fd = Vec::with_capacity(len);
        for e in 0..len {
            let orig = model.params.get(id).value.data()[e];
            model.params.get_mut(id).value.data_mut()[e] = orig + h;
            let fp = one_step_loss(&model, &layout)?;
            model.params.get_mut(id).value.data_mut()[e] = orig - h;
            let fm = one_step_loss(&model, &layout)?;
            model.params.get_mut(id).value.data_mut()[e] = orig;
            fd.push((fp - fm) / (2.0 * h));
        }
        // blocks with a vanishing gradient (the target-side decoder bias only
        // shifts all logits of a slot) are compared absolutely
        let err = relative_error(&analytic[id.0], &fd, 1e-5);
        let name = format!("{}/{}", algorithm, model.params.get(id).name);
        checks.push(Check::at_most(SUITE, name, err, tolerance));
    }
    Ok(checks)
}

// ---------------------------------------------------------------------------
// solvers

/// `x ↦ A x + b` on an `dim × 1` state.
struct AffineMap {
    a: Tensor<f64>,
    b: Tensor<f64>,
}

impl AffineMap {
    fn apply(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        // A x = x^T A^T as a row, reshaped back to a column
        let row = x.clone().reshape(vec![1, x.len()])?.matmul_t(&self.a)?;
        row.reshape(vec![x.len(), 1])?.add(&self.b)
    }

    /// `(I − A)⁻¹ b` by Gauss-Jordan elimination with partial pivoting.
    fn closed_form(&self) -> Vec<f64> {
        let n = self.b.len();
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n).map(|j| f64::from(u8::from(i == j)) - self.a.get(i, j)).collect();
                row.push(self.b.data()[i]);
                row
            })
            .collect();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).expect("non-empty");
            m.swap(c, p);
            let pivot = m[c][c];
            for v in m[c].iter_mut() {
                *v /= pivot;
            }
            for r in 0..n {
                if r != c {
                    let f = m[r][c];
                    let src = m[c].clone();
                    for (v, s) in m[r].iter_mut().zip(src) {
                        *v -= f * s;
                    }
                }
            }
        }
        m.into_iter().map(|row| row[n]).collect()
    }
}

/// Random `A` with spectral norm exactly `rho` (estimated by power iteration).
fn random_contraction(dim: usize, rho: f64, rng: &mut ChaCha8Rng) -> AffineMap {
    let a = random_tensor(rng, dim, dim);
    let mut v = Tensor::matrix(1, dim, vec![1.0; dim]).expect("shape");
    let mut sigma = 0.0;
    for _ in 0..500 {
        // v ← (AᵀA v) / ‖·‖
        let av = v.matmul_t(&a).expect("shape");
        let at = Tensor::matrix(dim, dim, (0..dim * dim).map(|k| a.get(k % dim, k / dim)).collect()).expect("shape");
        let ata_v = av.matmul_t(&at).expect("shape");
        sigma = ata_v.frobenius_norm().sqrt();
        v = ata_v.scale(1.0 / ata_v.frobenius_norm());
    }
    AffineMap {
        a: a.scale(rho / sigma),
        b: random_tensor(rng, dim, 1),
    }
}

/// Both solvers on `maps` random affine contractions of dimension `dim` with
/// spectral norm up to 0.9: distance to the closed-form fixed point ≤ 1e-5 and
/// Anderson never needing more iterations than Picard.
pub fn solver_suite(maps: usize, dim: usize, seed: u64) -> Result<Vec<Check>> {
    const SUITE: &str = "solver";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = SolverConfig::absolute()
        .with_tolerance(StopMode::Absolute, 1e-9)
        .with_max_iters(2000);
    let (mut worst_picard, mut worst_anderson, mut slower) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..maps {
        let rho = rng.random_range(0.3..=0.9);
        let map = random_contraction(dim, rho, &mut rng);
        let exact = map.closed_form();
        let x0 = Tensor::zeros(&[dim, 1]);
        let picard = solve_fixed_point(|x| map.apply(x), &x0, &base.clone().picard())?;
        let anderson = solve_fixed_point(|x| map.apply(x), &x0, &base)?;
        let dist = |s: &Tensor<f64>| s.data().iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_picard = worst_picard.max(dist(&picard.state));
        worst_anderson = worst_anderson.max(dist(&anderson.state));
        if anderson.iterations > picard.iterations {
            slower += 1;
        }
    }
    Ok(vec![
        Check::at_most(SUITE, "picard_vs_closed_form", worst_picard, 1e-5),
        Check::at_most(SUITE, "anderson_vs_closed_form", worst_anderson, 1e-5),
        Check::exact(SUITE, "anderson_not_slower_than_picard", slower),
    ])
}

// ---------------------------------------------------------------------------
// implicit differentiation

/// Implicit gradients at the equilibrium against backprop through a long
/// unroll, per parameter block, for `processors` random models with
/// parameters scaled by `weight_scale`.
pub fn implicit_suite(
    processors: usize,
    n: usize,
    latent_dim: usize,
    weight_scale: f64,
    unroll_steps: usize,
    tolerance: f64,
    seed: u64,
) -> Result<Vec<Check>> {
    const SUITE: &str = "implicit";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Vec<(String, f64)> = Vec::new();
    for k in 0..processors {
        let alg = Algorithm::ALL[k % Algorithm::ALL.len()];
        let sample = nontrivial_instance(alg, n, &mut rng);
        let layout = InstanceLayout::from_sample(&sample)?;
        let mut model = Model::<f64>::new(ModelConfig::new(alg, latent_dim), rng.random())?;
        for p in model.params.iter_mut() {
            p.value = p.value.scale(weight_scale);
        }
        let slots = layout.num_slots() as f64;

        let unrolled = {
            let mut tape = Tape::new();
            let inputs = step_inputs_on_tape(&mut tape, &model, &layout)?;
            let h = unroll(&mut tape, &model, &layout, inputs, unroll_steps)?;
            let logits = decode_on_tape(&mut tape, &model, &layout, h)?;
            let loss = loss_on_tape(&mut tape, &layout, logits)?;
            let grads = tape.vjp(loss, Tensor::scalar(1.0 / slots), GradTargets::ParamsOnly)?;
            block_grads(&model, &tape.param_grads(&grads))
        };

        let implicit = {
            let map = ProcessorMap::new(&model, &layout)?;
            let cfg = SolverConfig::absolute()
                .with_tolerance(StopMode::Absolute, 1e-12)
                .with_max_iters(500);
            let h0 = Tensor::zeros(&[layout.n, latent_dim]);
            let solved = solve_fixed_point(|h| map.apply(h), &h0, &cfg)?;
            let mut tape = Tape::new();
            let h = tape.input(solved.state.clone());
            let logits = decode_on_tape(&mut tape, &model, &layout, h)?;
            let loss = loss_on_tape(&mut tape, &layout, logits)?;
            let mut grads = tape.vjp(loss, Tensor::scalar(1.0 / slots), GradTargets::All)?;
            let mut params = tape.param_grads(&grads);
            let grad_h = grads.take(h).unwrap_or_else(|| Tensor::zeros(solved.state.shape()));
            let back = BackwardConfig {
                max_iters: 500,
                tolerance: 1e-12,
            };
            params.extend(implicit_backward(&map, &solved.state, &grad_h, &back)?.params);
            block_grads(&model, &params)
        };

        for (i, p) in model.params.iter().enumerate() {
            let err = relative_error(&implicit[i], &unrolled[i], 1e-9);
            match worst.iter_mut().find(|(name, _)| *name == p.name) {
                Some((_, w)) => *w = w.max(err),
                None => worst.push((p.name.clone(), err)),
            }
        }
    }
    Ok(worst
        .into_iter()
        .map(|(name, err)| Check::at_most(SUITE, name, err, tolerance))
        .collect())
}

// ---------------------------------------------------------------------------
// permutation equivariance

/// Row-wise softmax over finite entries.
fn softmax_rows(logits: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|&x| if x.is_finite() { (x - max).exp() } else { 0.0 }).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|x| x / z).collect()
        })
        .collect()
}

/// Largest deviation between outputs on a sample and on its relabeling.
fn equivariance_gap(model: &Model<f64>, sample: &Sample, perm: &[usize], rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let n = sample.n();
    let d = model.latent_dim();
    let permuted = permute_sample(sample, perm);
    let la = InstanceLayout::from_sample(sample)?;
    let lb = InstanceLayout::from_sample(&permuted)?;

    let h = random_tensor(rng, n, d);
    let mut hp = Tensor::zeros(&[n, d]);
    for i in 0..n {
        hp.data_mut()[perm[i] * d..(perm[i] + 1) * d].copy_from_slice(h.row(i));
    }
    let ca = step_constants(model, &encode(model, &la)?)?;
    let cb = step_constants(model, &encode(model, &lb)?)?;
    let oa = apply_step(model, &la, &ca, &h)?;
    let ob = apply_step(model, &lb, &cb, &hp)?;
    let mut state_gap: f64 = 0.0;
    for i in 0..n {
        for (x, y) in oa.row(i).iter().zip(ob.row(perm[i])) {
            state_gap = state_gap.max((x - y).abs());
        }
    }

    let pa = softmax_rows(&decode_logits(model, &la, &oa)?);
    let pb = softmax_rows(&decode_logits(model, &lb, &ob)?);
    let slot_map: Vec<usize> = if la.slot_edges.is_empty() {
        perm.to_vec()
    } else {
        la.slot_edges
            .iter()
            .map(|&(i, j)| {
                lb.slot_edges
                    .iter()
                    .position(|&e| e == (perm[i], perm[j]))
                    .expect("relabeled slot exists")
            })
            .collect()
    };
    let mut dist_gap: f64 = 0.0;
    for (s, row) in pa.iter().enumerate() {
        for (v, &x) in row.iter().enumerate() {
            dist_gap = dist_gap.max((x - pb[slot_map[s]][perm[v]]).abs());
        }
    }
    Ok((state_gap, dist_gap))
}

/// Processor outputs and pointer distributions on `pairs` random
/// (sample, permutation) pairs must commute with the relabeling.
pub fn equivariance_suite(pairs: usize, latent_dim: usize, tolerance: f64, seed: u64) -> Result<Vec<Check>> {
    const SUITE: &str = "equivariance";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let models = Algorithm::ALL
        .iter()
        .map(|&a| Model::<f64>::new(ModelConfig::new(a, latent_dim), seed))
        .collect::<Result<Vec<_>>>()?;
    let (mut state, mut dist) = (0.0f64, 0.0f64);
    for k in 0..pairs {
        let alg = Algorithm::ALL[k % Algorithm::ALL.len()];
        let n = rng.random_range(3..=8);
        let sample = random_instance(alg, n, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let (s, p) = equivariance_gap(&models[k % models.len()], &sample, &perm, &mut rng)?;
        state = state.max(s);
        dist = dist.max(p);
    }
    Ok(vec![
        Check::at_most(SUITE, "processor_output", state, tolerance),
        Check::at_most(SUITE, "pointer_distribution", dist, tolerance),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floors_small_blocks() {
        assert!((relative_error(&[0.0], &[1e-12], 1e-8) - 1e-4).abs() < 1e-18);
        assert!((relative_error(&[1.0, 0.0], &[1.0, 0.1], 1e-8) - 0.1 / 1.01f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn closed_form_solves_known_system() {
        // A = 0.5 I, b = 1 → x* = 2
        let map = AffineMap {
            a: Tensor::eye(3).scale(0.5),
            b: Tensor::matrix(3, 1, vec![1.0; 3]).unwrap(),
        };
        for x in map.closed_form() {
            assert!((x - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn contraction_has_requested_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let map = random_contraction(5, 0.7, &mut rng);
        // ‖A x‖ ≤ 0.7 ‖x‖ for random x
        for _ in 0..50 {
            let x = random_tensor(&mut rng, 5, 1);
            let ax = map.apply(&x).unwrap().sub(&map.b).unwrap();
            assert!(ax.frobenius_norm() <= 0.7 * x.frobenius_norm() + 1e-9);
        }
    }

    #[test]
    fn small_suites_pass() {
        let checks = [
            oracle_suite(50, 6, 1),
            tape_suite(2).unwrap(),
            solver_suite(5, 8, 3).unwrap(),
            equivariance_suite(8, 6, 1e-10, 4).unwrap(),
        ]
        .concat();
        for c in &checks {
            assert!(c.passed, "{c}");
        }
    }
}
