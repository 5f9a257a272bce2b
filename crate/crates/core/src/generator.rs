//! Transformer decoder over the memory `[H_o; s]`, its teacher-forced loss
//! and greedy decoding.

use rand::Rng;
use styled2t_autograd::{tensor, ParamId, ParamStore, Tape, Tensor, Var};

use crate::corpus::{BOS, EOS};
use crate::data_encoder::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nn::{self, DecoderLayerParams, IncrementalDecoder, LayerNormParams, StackShape};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderParams {
    pub layers: Vec<DecoderLayerParams>,
    pub final_ln: LayerNormParams,
    /// `|V| x d`
    pub w_y: ParamId,
    /// `1 x |V|`
    pub b_y: ParamId,
    pub heads: usize,
}

impl DecoderParams {
    pub fn register<R: Rng>(store: &mut ParamStore, shape: StackShape, vocab_size: usize, rng: &mut R) -> Result<Self> {
        let layers = nn::register_decoder(store, "decoder", shape, rng)?;
        let final_ln = nn::register_layer_norm(store, "decoder.final_ln", shape.dim)?;
        let w_y = store.xavier("decoder.w_y", vocab_size, shape.dim, rng)?;
        let b_y = store.zeros("decoder.b_y", 1, vocab_size)?;
        Ok(Self {
            layers,
            final_ln,
            w_y,
            b_y,
            heads: shape.heads,
        })
    }
}

/// Appends the style vector as one extra memory row.
pub fn build_memory(tape: &mut Tape, h_o: Var, s: Var) -> Result<Var> {
    let (d_o, d_s) = (tape.shape(h_o).1, tape.shape(s));
    if d_s != (1, d_o) {
        return Err(Error::ShapeMismatch(format!("style vector {d_s:?} does not fit memory width {d_o}")));
    }
    Ok(tape.concat_rows(&[h_o, s]))
}

/// Logits for every position of `prev_tokens`, shape `n x |V|`.
pub fn decode_step_logits(
    tape: &mut Tape,
    table: &EmbeddingTable,
    params: &DecoderParams,
    memory: Var,
    prev_tokens: &[usize],
) -> Result<Var> {
    let dim = tape.params().get(table.tokens).cols();
    if tape.shape(memory).1 != dim {
        return Err(Error::ShapeMismatch(format!(
            "memory width {} differs from model width {dim}",
            tape.shape(memory).1
        )));
    }
    if prev_tokens.is_empty() {
        return Err(Error::ShapeMismatch("decoder input is empty".into()));
    }
    let x = table.with_positions(tape, prev_tokens)?;
    let h = nn::decode(tape, &params.layers, x, memory, params.heads);
    let h = nn::layer_norm(tape, &params.final_ln, h);
    let (w_y, b_y) = (tape.param(params.w_y), tape.param(params.b_y));
    let logits = tape.matmul_bt(h, w_y);
    Ok(tape.add_row(logits, b_y))
}

/// `-Σ_t log P(y_t | y_<t, memory)` over the target followed by EOS.
pub fn generation_loss(
    tape: &mut Tape,
    table: &EmbeddingTable,
    params: &DecoderParams,
    memory: Var,
    target: &[usize],
) -> Result<Var> {
    let mut input = Vec::with_capacity(target.len() + 1);
    input.push(BOS);
    input.extend_from_slice(target);
    let mut gold = target.to_vec();
    gold.push(EOS);
    let logits = decode_step_logits(tape, table, params, memory, &input)?;
    let logp = tape.log_softmax(logits);
    Ok(tape.nll(logp, &gold))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    /// True when `max_len` tokens were produced without an EOS.
    pub truncated: bool,
}

/// Greedy search with a key/value cache. Ties go to the smallest id; the
/// result excludes BOS and EOS.
pub fn greedy_decode(
    store: &ParamStore,
    table: &EmbeddingTable,
    params: &DecoderParams,
    memory: &Tensor,
    max_len: usize,
) -> Result<Decoded> {
    if max_len == 0 {
        return Err(Error::ConfigInvalid("max_len must be at least 1".into()));
    }
    let tokens_tbl = store.get(table.tokens);
    let pos_tbl = store.get(table.positions);
    let limit = max_len.min(table.max_positions);
    let mut dec = IncrementalDecoder::new(store, &params.layers, memory, params.heads);
    let mut out = Vec::new();
    let mut prev = BOS;
    for t in 0..limit {
        let x = Tensor::row_vector(tokens_tbl.row(prev).iter().zip(pos_tbl.row(t)).map(|(a, b)| a + b).collect());
        let h = dec.step(x);
        let h = nn::layer_norm_tensor(store, &params.final_ln, &h);
        let logits = h.matmul_bt(store.get(params.w_y)).add_row(store.get(params.b_y));
        let next = tensor::argmax(logits.row(0));
        if next == EOS {
            return Ok(Decoded {
                tokens: out,
                truncated: false,
            });
        }
        out.push(next);
        prev = next;
    }
    Ok(Decoded {
        tokens: out,
        truncated: true,
    })
}

#[cfg(test)]
mod tests {
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    use super::*;

    struct Fixture {
        store: ParamStore,
        table: EmbeddingTable,
        dec: DecoderParams,
    }

    fn fixture(seed: u64, vocab: usize) -> Fixture {
        let mut store = ParamStore::new();
        let mut rng = StdRng::seed_from_u64(seed);
        let table = EmbeddingTable::register(&mut store, vocab, 8, 32, 0.5, &mut rng).unwrap();
        let shape = StackShape {
            dim: 8,
            heads: 2,
            ff_dim: 16,
            layers: 2,
        };
        let dec = DecoderParams::register(&mut store, shape, vocab, &mut rng).unwrap();
        Fixture { store, table, dec }
    }

    fn memory(rows: usize, seed: u64) -> Tensor {
        let mut rng = StdRng::seed_from_u64(seed);
        Tensor::from_vec(rows, 8, (0..rows * 8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn logits_shape_and_causality() {
        let f = fixture(1, 12);
        let mem = memory(4, 2);
        let mut tape = Tape::new(&f.store);
        let m = tape.constant(mem);
        let a = decode_step_logits(&mut tape, &f.table, &f.dec, m, &[BOS, 7, 8, 9]).unwrap();
        let b = decode_step_logits(&mut tape, &f.table, &f.dec, m, &[BOS, 7, 5, 11]).unwrap();
        assert_eq!(tape.value(a).shape(), (4, 12));
        let (va, vb) = (tape.value(a), tape.value(b));
        assert_eq!(va.row(0), vb.row(0));
        assert_eq!(va.row(1), vb.row(1));
        assert_ne!(va.row(2), vb.row(2));
    }

    #[test]
    fn style_row_reaches_every_position() {
        let f = fixture(3, 12);
        let mem = memory(4, 4);
        let mut other = mem.clone();
        for c in 0..8 {
            other.set(3, c, other.get(3, c) + 0.5);
        }
        let mut tape = Tape::new(&f.store);
        let (m1, m2) = (tape.constant(mem), tape.constant(other));
        let toks = [BOS, 6, 7, 8];
        let a = decode_step_logits(&mut tape, &f.table, &f.dec, m1, &toks).unwrap();
        let b = decode_step_logits(&mut tape, &f.table, &f.dec, m2, &toks).unwrap();
        for t in 0..toks.len() {
            assert_ne!(tape.value(a).row(t), tape.value(b).row(t));
        }
    }

    #[test]
    fn uniform_logits_give_length_times_log_vocab() {
        let mut f = fixture(5, 10);
        f.store.get_mut(f.dec.w_y).data_mut().fill(0.0);
        let mut tape = Tape::new(&f.store);
        let m = tape.constant(memory(3, 6));
        let l = generation_loss(&mut tape, &f.table, &f.dec, m, &[5, 6, 7]).unwrap();
        assert!((tape.value(l).item() - 4.0 * 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn teacher_forced_rows_are_distributions() {
        let f = fixture(7, 10);
        let mut tape = Tape::new(&f.store);
        let m = tape.constant(memory(3, 8));
        let logits = decode_step_logits(&mut tape, &f.table, &f.dec, m, &[BOS, 5, 6]).unwrap();
        let p = tensor::softmax_rows(tape.value(logits));
        for r in 0..3 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn greedy_matches_full_recompute() {
        for seed in 0..6 {
            let f = fixture(seed, 14);
            let mem = memory(5, seed + 50);
            let out = greedy_decode(&f.store, &f.table, &f.dec, &mem, 12).unwrap();
            // replay with full teacher-forced recomputation at each step
            let mut prefix = vec![BOS];
            let mut expected = Vec::new();
            let mut truncated = true;
            for _ in 0..12 {
                let mut tape = Tape::new(&f.store);
                let m = tape.constant(mem.clone());
                let logits = decode_step_logits(&mut tape, &f.table, &f.dec, m, &prefix).unwrap();
                let next = tensor::argmax(tape.value(logits).row(prefix.len() - 1));
                if next == EOS {
                    truncated = false;
                    break;
                }
                expected.push(next);
                prefix.push(next);
            }
            assert_eq!(out.tokens, expected);
            assert_eq!(out.truncated, truncated);
        }
    }

    #[test]
    fn forced_eos_yields_empty_output() {
        let mut f = fixture(9, 10);
        f.store.get_mut(f.dec.w_y).data_mut().fill(0.0);
        f.store.get_mut(f.dec.b_y).set(0, EOS, 5.0);
        let out = greedy_decode(&f.store, &f.table, &f.dec, &memory(2, 1), 20).unwrap();
        assert_eq!(out, Decoded { tokens: vec![], truncated: false });
    }

    #[test]
    fn truncation_is_flagged() {
        let mut f = fixture(9, 10);
        f.store.get_mut(f.dec.w_y).data_mut().fill(0.0);
        f.store.get_mut(f.dec.b_y).set(0, 6, 5.0);
        let out = greedy_decode(&f.store, &f.table, &f.dec, &memory(2, 1), 4).unwrap();
        assert_eq!(out, Decoded { tokens: vec![6; 4], truncated: true });
        assert!(greedy_decode(&f.store, &f.table, &f.dec, &memory(2, 1), 0).is_err());
    }
}
