//! Token embeddings for attribute-value pairs and the transformer encoding of
//! the pair sequence laid out in plan order.

use rand::Rng;
use styled2t_autograd::{Mask, ParamId, ParamStore, Tape, Var};

use crate::corpus::{AttributeValuePair, Plan, Vocabulary, PAD, SEP};
use crate::error::{Error, Result};
use crate::nn::{self, EncoderLayerParams};

/// Trainable token table `|V| x d` and learned positions `max_len x d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingTable {
    pub tokens: ParamId,
    pub positions: ParamId,
    pub max_positions: usize,
}

impl EmbeddingTable {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        vocab_size: usize,
        dim: usize,
        max_positions: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            tokens: store.normal("embed.tokens", vocab_size, dim, std, rng)?,
            positions: store.normal("embed.positions", max_positions, dim, std, rng)?,
            max_positions,
        })
    }

    /// Token rows only (no positions).
    pub fn tokens(&self, tape: &mut Tape, ids: &[usize]) -> Var {
        let table = tape.param(self.tokens);
        tape.select_rows(table, ids)
    }

    /// Token rows plus positions `0..len`.
    pub fn with_positions(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var> {
        if ids.len() > self.max_positions {
            return Err(Error::ShapeMismatch(format!(
                "sequence of {} tokens exceeds {} positions",
                ids.len(),
                self.max_positions
            )));
        }
        let tok = self.tokens(tape, ids);
        let pos_table = tape.param(self.positions);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.select_rows(pos_table, &positions);
        Ok(tape.add(tok, pos))
    }
}

/// `attribute tokens, SEP, value tokens` as ids. Never contains PAD.
pub fn pair_token_ids(pair: &AttributeValuePair, vocab: &Vocabulary) -> Vec<usize> {
    let mut ids = vocab.encode(&pair.attribute);
    ids.push(SEP);
    ids.extend(vocab.encode(&pair.value));
    ids
}

/// Per-pair token-embedding matrices `E^k` (`t_k x d`).
pub fn embed_pairs(tape: &mut Tape, table: &EmbeddingTable, pairs: &[Vec<usize>]) -> Vec<Var> {
    pairs.iter().map(|ids| table.tokens(tape, ids)).collect()
}

/// Stacks the mean row of every `E^k` into a `K x d` matrix.
pub fn node_inits(tape: &mut Tape, embedded: &[Var]) -> Var {
    let means: Vec<Var> = embedded.iter().map(|&e| tape.mean_rows(e)).collect();
    tape.concat_rows(&means)
}

/// Pair token ids concatenated in plan order.
pub fn planned_sequence(pairs: &[Vec<usize>], plan: &Plan) -> Result<Vec<usize>> {
    if !plan.is_permutation_of(pairs.len()) {
        return Err(Error::ShapeMismatch(format!(
            "plan {:?} is not a permutation of {} pairs",
            plan.order,
            pairs.len()
        )));
    }
    Ok(plan.zero_based().into_iter().flat_map(|k| pairs[k].iter().copied()).collect())
}

/// `H_o`: the pair tokens in plan order, with positions, through the data
/// encoder under full bidirectional attention. Shape `T x d`, `T = Σ t_k`.
pub fn encode_planned(
    tape: &mut Tape,
    table: &EmbeddingTable,
    encoder: &[EncoderLayerParams],
    heads: usize,
    pairs: &[Vec<usize>],
    plan: &Plan,
) -> Result<Var> {
    let seq = planned_sequence(pairs, plan)?;
    let x = table.with_positions(tape, &seq)?;
    Ok(nn::encode(tape, encoder, x, heads, &Mask::Full))
}

/// Encodes token sequences padded with PAD to a common length; padding keys
/// are masked out. Returns one `max_len x d` matrix per sequence.
pub fn encode_padded(
    tape: &mut Tape,
    table: &EmbeddingTable,
    encoder: &[EncoderLayerParams],
    heads: usize,
    seqs: &[Vec<usize>],
) -> Result<Vec<Var>> {
    let max_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
    seqs.iter()
        .map(|s| {
            let mut ids = s.clone();
            ids.resize(max_len, PAD);
            let keys: Vec<bool> = (0..max_len).map(|i| i < s.len()).collect();
            let x = table.with_positions(tape, &ids)?;
            Ok(nn::encode(tape, encoder, x, heads, &Mask::Keys(keys)))
        })
        .collect()
}
