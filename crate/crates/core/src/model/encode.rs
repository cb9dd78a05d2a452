//! Instance layouts and linear input encoding.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph_data::{Algorithm, Sample, Target};
use crate::model::Model;
use crate::numeric::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Parameter-free structure of one instance: raw features, who messages whom,
/// which targets each pointer slot may choose, and the supervised targets.
#[derive(Debug, Clone)]
pub struct InstanceLayout<T> {
    pub algorithm: Algorithm,
    pub n: usize,
    /// `n × node_raw_dim`
    pub node_raw: Tensor<T>,
    /// One row per message pair, aligned with `receivers`/`senders`.
    pub edge_raw: Tensor<T>,
    /// Pair `p` carries a message from `senders[p]` to `receivers[p]`.
    pub receivers: Arc<[usize]>,
    pub senders: Arc<[usize]>,
    /// `(i, j)` owner of each edge-pointer slot; empty for node pointers.
    pub slot_edges: Vec<(usize, usize)>,
    /// `slots × n`, row-major.
    pub candidate_mask: Vec<bool>,
    pub targets: Arc<[usize]>,
}

impl<T: Scalar> InstanceLayout<T> {
    pub fn from_sample(sample: &Sample) -> Result<Self> {
        sample.validate()?;
        let n = sample.n();
        let alg = sample.algorithm;
        let conv = |x: f64| T::from_f64_lossy(x);
        let node_raw = Tensor::matrix(
            n,
            alg.node_raw_dim(),
            sample.node_raw.iter().flatten().map(|&x| conv(x)).collect(),
        )?;
        let adj = sample.graph.adjacency();

        let mut receivers = Vec::new();
        let mut senders = Vec::new();
        let mut edge_raw: Vec<T> = Vec::new();
        match alg {
            Algorithm::BellmanFord | Algorithm::FloydWarshall => {
                for i in 0..n {
                    receivers.push(i);
                    senders.push(i);
                    edge_raw.push(T::zero());
                }
                for (s, d, w) in sample.graph.arcs() {
                    receivers.push(d);
                    senders.push(s);
                    edge_raw.push(conv(w));
                }
            }
            Algorithm::Scc | Algorithm::InsertionSort => {
                for i in 0..n {
                    for j in 0..n {
                        receivers.push(i);
                        senders.push(j);
                        if alg == Algorithm::Scc {
                            let a = |x: Option<f64>| if x.is_some() { T::one() } else { T::zero() };
                            edge_raw.push(a(adj[i][j]));
                            edge_raw.push(a(adj[j][i]));
                        } else {
                            edge_raw.push(T::one());
                        }
                    }
                }
            }
        }
        let pairs = receivers.len();
        let edge_raw = Tensor::matrix(pairs, alg.edge_raw_dim(), edge_raw)?;

        let (slot_edges, candidate_mask, targets) = match &sample.target {
            Target::Node(t) => {
                let mut mask = vec![alg != Algorithm::BellmanFord; n * n];
                if alg == Algorithm::BellmanFord {
                    for u in 0..n {
                        mask[u * n + u] = true;
                        for v in 0..n {
                            if adj[v][u].is_some() {
                                mask[u * n + v] = true;
                            }
                        }
                    }
                }
                (Vec::new(), mask, t.clone())
            }
            Target::Edge(t) => {
                let slots: Vec<(usize, usize)> = t.iter().map(|&(i, j, _)| (i, j)).collect();
                let mask = vec![true; slots.len() * n];
                (slots, mask, t.iter().map(|e| e.2).collect())
            }
        };
        for (slot, &t) in targets.iter().enumerate() {
            if !candidate_mask[slot * n + t] {
                return Err(Error::Data(format!("target {t} of slot {slot} is not a candidate")));
            }
        }
        Ok(Self {
            algorithm: alg,
            n,
            node_raw,
            edge_raw,
            receivers: receivers.into(),
            senders: senders.into(),
            slot_edges,
            candidate_mask,
            targets: targets.into(),
        })
    }

    pub fn num_pairs(&self) -> usize {
        self.receivers.len()
    }

    pub fn num_slots(&self) -> usize {
        self.targets.len()
    }

    pub fn candidates(&self, slot: usize) -> usize {
        self.candidate_mask[slot * self.n..(slot + 1) * self.n]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    /// Expected accuracy of a uniform random guess among candidates.
    pub fn chance_accuracy(&self) -> f64 {
        let slots = self.num_slots();
        if slots == 0 {
            return 1.0;
        }
        (0..slots).map(|s| 1.0 / self.candidates(s) as f64).sum::<f64>() / slots as f64
    }
}

/// Encoded node and pair features, constant for the whole processor rollout.
#[derive(Debug, Clone)]
pub struct EncodedInstance<T> {
    /// `n × d`
    pub node_features: Tensor<T>,
    /// `pairs × d`
    pub edge_features: Tensor<T>,
}

/// Records the two linear encoders on a tape.
pub fn encode_on_tape<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    model: &'a Model<T>,
    layout: &'a InstanceLayout<T>,
) -> Result<(Var, Var)> {
    if layout.algorithm != model.config.algorithm {
        return Err(Error::Data(format!(
            "{} instance given to a {} model",
            layout.algorithm, model.config.algorithm
        )));
    }
    let nr = tape.constant_ref(&layout.node_raw);
    let er = tape.constant_ref(&layout.edge_raw);
    let u = model.layers.node_encoder.forward(tape, &model.params, nr)?;
    let e = model.layers.edge_encoder.forward(tape, &model.params, er)?;
    Ok((u, e))
}

pub fn encode<T: Scalar>(model: &Model<T>, layout: &InstanceLayout<T>) -> Result<EncodedInstance<T>> {
    let mut tape = Tape::new();
    let (u, e) = encode_on_tape(&mut tape, model, layout)?;
    Ok(EncodedInstance {
        edge_features: tape.value(e).clone(),
        node_features: tape.into_value(u),
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph_data::gen_sample;
    use crate::model::ModelConfig;

    #[test]
    fn sorting_layout_is_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = gen_sample(Algorithm::InsertionSort, 5, &[0.5], &mut rng);
        let l = InstanceLayout::<f64>::from_sample(&s).unwrap();
        assert_eq!(l.num_pairs(), 25);
        assert!(l.candidate_mask.iter().all(|&b| b));
        assert!((l.chance_accuracy() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn bellman_ford_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = gen_sample(Algorithm::BellmanFord, 7, &[0.3], &mut rng);
        let l = InstanceLayout::<f64>::from_sample(&s).unwrap();
        assert_eq!(l.num_pairs(), 7 + 2 * s.graph.edges.len());
        for u in 0..7 {
            let deg = s.graph.arcs().iter().filter(|a| a.1 == u).count();
            assert_eq!(l.candidates(u), deg + 1);
        }
    }

    #[test]
    fn zero_encoder_weights_give_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = gen_sample(Algorithm::Scc, 4, &[0.5], &mut rng);
        let mut m = Model::<f64>::new(ModelConfig::new(Algorithm::Scc, 3), 0).unwrap();
        let w = m.layers.node_encoder.weight;
        m.params.get_mut(w).value.fill(0.0);
        let b = m.params.get(m.layers.node_encoder.bias).value.data().to_vec();
        let l = InstanceLayout::from_sample(&s).unwrap();
        let enc = encode(&m, &l).unwrap();
        for r in 0..4 {
            assert_eq!(enc.node_features.row(r), b.as_slice());
        }
    }

    #[test]
    fn schema_mismatch_is_fatal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = gen_sample(Algorithm::Scc, 4, &[0.5], &mut rng);
        let m = Model::<f64>::new(ModelConfig::new(Algorithm::BellmanFord, 3), 0).unwrap();
        let l = InstanceLayout::from_sample(&s).unwrap();
        assert!(encode(&m, &l).is_err());
    }
}
