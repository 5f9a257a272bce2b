//! Corpus-statistics logic graph over an instance's attribute-value pairs and
//! the GCN that propagates pair embeddings along it.
//!
//! Edge weight `e[i][j]` sums `1 / (r_j - r_i)` over every corpus text in
//! which pair `i` is mentioned before pair `j`; closer mentions give heavier
//! edges. Propagation uses the row-normalized weights `e[i][j] / e[i][*]`.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use styled2t_autograd::{ParamId, ParamStore, Tape, Tensor, Var};

use crate::corpus::{detokenize, AttributeValuePair, RankVector};
use crate::error::{Error, Result};
use crate::exec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogicGraph {
    pub num_nodes: usize,
    /// `weights[i][j]`; non-negative with a zero diagonal.
    pub weights: Vec<Vec<f64>>,
}

impl LogicGraph {
    pub fn empty(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            weights: vec![vec![0.0; num_nodes]; num_nodes],
        }
    }

    /// Every off-diagonal weight set to 1 (the unweighted ablation).
    pub fn uniform(num_nodes: usize) -> Self {
        let mut g = Self::empty(num_nodes);
        for i in 0..num_nodes {
            for j in 0..num_nodes {
                if i != j {
                    g.weights[i][j] = 1.0;
                }
            }
        }
        g
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_nodes).filter(move |&j| j != i && self.weights[i][j] > 0.0)
    }

    /// Row-normalized weights; rows without neighbors are zero.
    pub fn normalized(&self) -> Tensor {
        let k = self.num_nodes;
        let mut out = Tensor::zeros(k, k);
        for i in 0..k {
            let total: f64 = self.neighbors(i).map(|j| self.weights[i][j]).sum();
            if total > 0.0 {
                for j in self.neighbors(i) {
                    out.set(i, j, self.weights[i][j] / total);
                }
            }
        }
        out
    }

    pub fn to_json(&self, pairs: &[AttributeValuePair]) -> serde_json::Value {
        serde_json::json!({
            "nodes": pairs.iter().map(node_label).collect::<Vec<_>>(),
            "weights": self.weights,
        })
    }

    pub fn to_dot(&self, pairs: &[AttributeValuePair]) -> String {
        let mut s = String::from("digraph logic {\n");
        for (i, p) in pairs.iter().enumerate() {
            let _ = writeln!(s, "  n{} [label=\"{}\"];", i + 1, node_label(p).replace('"', "\\\""));
        }
        for i in 0..self.num_nodes {
            for j in self.neighbors(i) {
                let _ = writeln!(s, "  n{} -> n{} [label=\"{:.4}\"];", i + 1, j + 1, self.weights[i][j]);
            }
        }
        s.push_str("}\n");
        s
    }
}

fn node_label(p: &AttributeValuePair) -> String {
    format!("{}: {}", detokenize(&p.attribute), detokenize(&p.value))
}

/// Sums the relative-position statistic over the given per-text rank vectors.
pub fn build_logic_graph(num_nodes: usize, corpus_ranks: &[RankVector]) -> LogicGraph {
    let mut g = LogicGraph::empty(num_nodes);
    for ranks in corpus_ranks {
        debug_assert_eq!(ranks.0.len(), num_nodes);
        for i in 0..num_nodes {
            let ri = ranks.0[i];
            if ri == 0 {
                continue;
            }
            for j in 0..num_nodes {
                let rj = ranks.0[j];
                if rj > ri {
                    g.weights[i][j] += 1.0 / (rj - ri) as f64;
                }
            }
        }
    }
    g
}

/// Precomputed first-occurrence positions of value token sequences across a
/// fixed corpus, so graphs for many instances share the text scans.
pub struct CorpusIndex<'c> {
    texts: &'c [Vec<String>],
    positions: HashMap<Vec<String>, Vec<(usize, usize)>>,
}

impl<'c> CorpusIndex<'c> {
    pub fn new(texts: &'c [Vec<String>]) -> Self {
        Self {
            texts,
            positions: HashMap::new(),
        }
    }

    /// Scans the corpus for every distinct value in `instances`.
    pub fn index_values<'a>(&mut self, values: impl IntoIterator<Item = &'a [String]>) {
        let missing: Vec<Vec<String>> = {
            let mut seen = std::collections::BTreeSet::new();
            values
                .into_iter()
                .filter(|v| !self.positions.contains_key(*v))
                .filter(|v| seen.insert(v.to_vec()))
                .map(<[String]>::to_vec)
                .collect()
        };
        let texts = self.texts;
        let found = exec::map(&missing, |v| {
            texts
                .iter()
                .enumerate()
                .filter_map(|(t, text)| crate::corpus::find_subsequence(text, v).map(|p| (t, p)))
                .collect::<Vec<_>>()
        });
        self.positions.extend(missing.into_iter().zip(found));
    }

    /// Ranks of `pairs` within every corpus text mentioning at least one of
    /// them. Texts mentioning none would contribute nothing and are skipped.
    pub fn corpus_ranks(&self, pairs: &[AttributeValuePair]) -> Vec<RankVector> {
        let k = pairs.len();
        let mut per_text: HashMap<usize, Vec<Option<usize>>> = HashMap::new();
        for (i, p) in pairs.iter().enumerate() {
            let hits = match self.positions.get(&p.value) {
                Some(h) => h.clone(),
                None => self
                    .texts
                    .iter()
                    .enumerate()
                    .filter_map(|(t, text)| crate::corpus::find_subsequence(text, &p.value).map(|pos| (t, pos)))
                    .collect(),
            };
            for (t, pos) in hits {
                per_text.entry(t).or_insert_with(|| vec![None; k])[i] = Some(pos);
            }
        }
        let mut texts: Vec<usize> = per_text.keys().copied().collect();
        texts.sort_unstable();
        texts
            .into_iter()
            .map(|t| RankVector::from_positions(&per_text[&t]))
            .collect()
    }

    pub fn graph(&self, pairs: &[AttributeValuePair]) -> LogicGraph {
        build_logic_graph(pairs.len(), &self.corpus_ranks(pairs))
    }
}

/// Graphs for many instances against one corpus.
pub fn build_graphs(instances: &[&[AttributeValuePair]], corpus_texts: &[Vec<String>]) -> Vec<LogicGraph> {
    let mut index = CorpusIndex::new(corpus_texts);
    index.index_values(instances.iter().flat_map(|ps| ps.iter().map(|p| p.value.as_slice())));
    exec::map(instances, |ps| index.graph(ps))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GcnLayer {
    pub w_a: ParamId,
    pub w_b: ParamId,
    pub w_c: ParamId,
    pub b_c: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GcnParams {
    pub dim: usize,
    pub layers: Vec<GcnLayer>,
}

impl GcnParams {
    pub fn register<R: Rng>(store: &mut ParamStore, dim: usize, num_layers: usize, rng: &mut R) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::ConfigInvalid("GCN needs at least one layer".into()));
        }
        let layers = (0..num_layers)
            .map(|l| {
                Ok(GcnLayer {
                    w_a: store.xavier(&format!("gcn.{l}.w_a"), dim, dim, rng)?,
                    w_b: store.xavier(&format!("gcn.{l}.w_b"), dim, dim, rng)?,
                    w_c: store.xavier(&format!("gcn.{l}.w_c"), dim, dim, rng)?,
                    b_c: store.zeros(&format!("gcn.{l}.b_c"), 1, dim)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, layers })
    }
}

/// Refines `node_inits` (K x d, row i = mean token embedding of pair i) with
/// `z' = tanh((N (z W_a) + z W_b) W_c + b_c)` per layer, where `N` is the
/// row-normalized graph. Row-vector convention throughout.
pub fn gcn_propagate(tape: &mut Tape, node_inits: Var, graph: &LogicGraph, params: &GcnParams) -> Result<Var> {
    let (k, d) = tape.shape(node_inits);
    if d != params.dim {
        return Err(Error::ShapeMismatch(format!(
            "node embeddings have width {d}, GCN expects {}",
            params.dim
        )));
    }
    if k != graph.num_nodes {
        return Err(Error::ShapeMismatch(format!(
            "{k} node embeddings for a {}-node graph",
            graph.num_nodes
        )));
    }
    let norm = tape.constant(graph.normalized());
    let mut z = node_inits;
    for layer in &params.layers {
        let w_a = tape.param(layer.w_a);
        let w_b = tape.param(layer.w_b);
        let w_c = tape.param(layer.w_c);
        let b_c = tape.param(layer.b_c);
        let za = tape.matmul(z, w_a);
        let agg = tape.matmul(norm, za);
        let own = tape.matmul(z, w_b);
        let pre = tape.add(agg, own);
        let pre = tape.affine(pre, w_c, b_c);
        z = tape.tanh(pre);
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    use super::*;
    use crate::corpus::tokenize;

    #[test]
    fn one_text_edge_weights() {
        let g = build_logic_graph(2, &[RankVector(vec![1, 3])]);
        assert_eq!(g.weights[0][1], 0.5);
        assert_eq!(g.weights[1][0], 0.0);
    }

    #[test]
    fn opposite_orders_give_symmetric_weights() {
        let g = build_logic_graph(2, &[RankVector(vec![1, 2]), RankVector(vec![2, 1])]);
        assert_eq!(g.weights[0][1], 1.0);
        assert_eq!(g.weights[1][0], 1.0);
    }

    #[test]
    fn absent_pair_has_empty_row_and_column() {
        let g = build_logic_graph(3, &[RankVector(vec![1, 0, 2]), RankVector(vec![2, 0, 1])]);
        for j in 0..3 {
            assert_eq!(g.weights[1][j], 0.0);
            assert_eq!(g.weights[j][1], 0.0);
        }
        assert!(build_logic_graph(2, &[]).weights.iter().flatten().all(|&w| w == 0.0));
    }

    #[test]
    fn weight_shrinks_with_rank_gap() {
        let mut last = f64::INFINITY;
        for gap in 1..6 {
            let g = build_logic_graph(2, &[RankVector(vec![1, 1 + gap])]);
            assert!(g.weights[0][1] <= last);
            last = g.weights[0][1];
        }
    }

    #[test]
    fn index_matches_direct_rank_extraction() {
        let texts: Vec<Vec<String>> = ["a b c", "c x a", "nothing", "b a"].iter().map(|t| tokenize(t)).collect();
        let pairs: Vec<AttributeValuePair> = ["a", "c", "b"]
            .iter()
            .enumerate()
            .map(|(i, v)| AttributeValuePair::new("k", v, i + 1))
            .collect();
        let mut idx = CorpusIndex::new(&texts);
        idx.index_values(pairs.iter().map(|p| p.value.as_slice()));
        let direct: Vec<RankVector> = texts
            .iter()
            .map(|t| RankVector::from_text(&pairs.iter().map(|p| p.value.as_slice()).collect::<Vec<_>>(), t))
            .filter(|r| r.num_present() > 0)
            .collect();
        assert_eq!(idx.corpus_ranks(&pairs), direct);
    }

    #[test]
    fn exports_json_and_dot() {
        let pairs = vec![AttributeValuePair::new("color", "teal", 1), AttributeValuePair::new("fit", "boxy", 2)];
        let g = build_logic_graph(2, &[RankVector(vec![1, 2])]);
        let j = g.to_json(&pairs);
        assert_eq!(j["nodes"][1], "fit: boxy");
        assert_eq!(j["weights"][0][1], 1.0);
        assert!(g.to_dot(&pairs).contains("n1 -> n2"));
    }

    fn gcn_store(dim: usize, zero: bool) -> (ParamStore, GcnParams) {
        let mut s = ParamStore::new();
        let mut rng = StdRng::seed_from_u64(3);
        let p = GcnParams::register(&mut s, dim, 1, &mut rng).unwrap();
        if zero {
            for id in [p.layers[0].w_b, p.layers[0].w_c, p.layers[0].b_c] {
                s.get_mut(id).data_mut().fill(0.0);
            }
        }
        (s, p)
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let (s, p) = gcn_store(4, true);
        let mut tape = Tape::new(&s);
        let init = tape.constant(Tensor::filled(3, 4, 0.7));
        let out = gcn_propagate(&mut tape, init, &LogicGraph::empty(3), &p).unwrap();
        assert!(tape.value(out).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_node_reduces_to_self_term() {
        let (s, p) = gcn_store(4, false);
        let z = Tensor::row_vector(vec![0.3, -0.2, 0.5, 0.1]);
        let mut tape = Tape::new(&s);
        let init = tape.constant(z.clone());
        let out = gcn_propagate(&mut tape, init, &LogicGraph::empty(1), &p).unwrap();
        let l = p.layers[0];
        let expected = z
            .matmul(s.get(l.w_b))
            .matmul(s.get(l.w_c))
            .add_row(s.get(l.b_c))
            .map(f64::tanh);
        assert!(tape.value(out).max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn wrong_width_is_rejected() {
        let (s, p) = gcn_store(4, false);
        let mut tape = Tape::new(&s);
        let init = tape.constant(Tensor::zeros(2, 3));
        assert!(matches!(
            gcn_propagate(&mut tape, init, &LogicGraph::empty(2), &p),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn scaling_outgoing_weights_leaves_output_unchanged() {
        let (s, p) = gcn_store(4, false);
        let mut g = build_logic_graph(3, &[RankVector(vec![1, 2, 3]), RankVector(vec![3, 1, 2])]);
        let mut rng = StdRng::seed_from_u64(1);
        let z = Tensor::from_vec(3, 4, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let run = |g: &LogicGraph| {
            let mut tape = Tape::new(&s);
            let init = tape.constant(z.clone());
            let out = gcn_propagate(&mut tape, init, g, &p).unwrap();
            tape.value(out).clone()
        };
        let before = run(&g);
        for w in &mut g.weights[1] {
            *w *= 7.5;
        }
        let after = run(&g);
        assert!(before.max_abs_diff(&after) < 1e-14);
    }
}
