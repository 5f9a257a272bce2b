//! Style vector from a reference text: a transformer encoding `H_X`, a
//! sigmoid feature mask `M = σ(H_X W_m + b_m)` and `s = mean(M ⊙ H_X)`.
//! A small classifier and a clustering term shape `s` during training.

use rand::Rng;
use styled2t_autograd::{ParamId, ParamStore, Tape, Tensor, Var};

use crate::error::{Error, Result};

/// Probability floor applied before logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StyleHeadParams {
    pub w_m: ParamId,
    pub b_m: ParamId,
    pub w_s1: ParamId,
    pub b_s1: ParamId,
    pub w_s2: ParamId,
    pub b_s2: ParamId,
}

impl StyleHeadParams {
    pub fn register<R: Rng>(store: &mut ParamStore, dim: usize, num_styles: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w_m: store.xavier("style.w_m", dim, dim, rng)?,
            b_m: store.zeros("style.b_m", 1, dim)?,
            w_s1: store.xavier("style.w_s1", dim, dim, rng)?,
            b_s1: store.zeros("style.b_s1", 1, dim)?,
            w_s2: store.xavier("style.w_s2", dim, num_styles, rng)?,
            b_s2: store.zeros("style.b_s2", 1, num_styles)?,
        })
    }
}

pub struct MaskedStyle {
    pub s: Var,
    pub mask: Var,
}

/// Applies the feature mask to an encoded reference `H_X` (`Q x d`).
pub fn masked_style(tape: &mut Tape, head: &StyleHeadParams, h_x: Var) -> Result<MaskedStyle> {
    if tape.shape(h_x).0 == 0 {
        return Err(Error::EmptyReference);
    }
    let (w_m, b_m) = (tape.param(head.w_m), tape.param(head.b_m));
    let pre = tape.affine(h_x, w_m, b_m);
    let mask = tape.sigmoid(pre);
    let gated = tape.mul(mask, h_x);
    let s = tape.mean_rows(gated);
    Ok(MaskedStyle { s, mask })
}

/// Classifier logits `W_s2 tanh(W_s1 s + b_s1) + b_s2` as a `1 x N_s` row.
pub fn style_logits(tape: &mut Tape, head: &StyleHeadParams, s: Var) -> Var {
    let (w1, b1, w2, b2) = (
        tape.param(head.w_s1),
        tape.param(head.b_s1),
        tape.param(head.w_s2),
        tape.param(head.b_s2),
    );
    let h = tape.affine(s, w1, b1);
    let h = tape.tanh(h);
    tape.affine(h, w2, b2)
}

/// Predicted style distribution `ĝ`.
pub fn classify_style(tape: &mut Tape, head: &StyleHeadParams, s: Var) -> Var {
    let logits = style_logits(tape, head, s);
    tape.softmax(logits, &styled2t_autograd::Mask::Full)
}

/// Cross-entropy of `ĝ` against the one-hot label of `style`, on the tape.
/// Computed from log-softmax so it equals `-ln ĝ_u` wherever `ĝ_u` is above
/// the probability floor.
pub fn style_cla_loss(tape: &mut Tape, head: &StyleHeadParams, s: Var, style: usize) -> Var {
    let logits = style_logits(tape, head, s);
    let logp = tape.log_softmax(logits);
    tape.nll(logp, &[style])
}

/// `-Σ g_i ln max(ĝ_i, floor)` for explicit probability vectors.
pub fn cross_entropy(g_hat: &[f64], g: &[f64]) -> f64 {
    g.iter()
        .zip(g_hat)
        .filter(|(gi, _)| **gi != 0.0)
        .map(|(gi, p)| -gi * p.max(PROB_FLOOR).ln())
        .sum()
}

/// Per-style centers for the current batch. Treated as constants.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleCenters {
    pub centers: Vec<Option<Tensor>>,
}

impl StyleCenters {
    /// Means of the style vectors grouped by label.
    pub fn from_batch(vectors: &[(usize, &Tensor)], num_styles: usize) -> Self {
        let mut sums: Vec<Option<(Tensor, usize)>> = vec![None; num_styles];
        for &(style, v) in vectors {
            match &mut sums[style] {
                Some((acc, n)) => {
                    acc.add_assign(v);
                    *n += 1;
                }
                slot @ None => *slot = Some((v.clone(), 1)),
            }
        }
        Self {
            centers: sums
                .into_iter()
                .map(|e| {
                    e.map(|(mut t, n)| {
                        t.scale_assign(1.0 / n as f64);
                        t
                    })
                })
                .collect(),
        }
    }

    pub fn num_styles(&self) -> usize {
        self.centers.len()
    }

    pub fn get(&self, style: usize) -> Result<&Tensor> {
        self.centers
            .get(style)
            .and_then(Option::as_ref)
            .ok_or(Error::MissingCenter(style))
    }
}

/// `||s - s^u||² + (1/N_s) Σ_{v≠u} exp(-||s - s^v||²)` with constant centers.
pub fn style_clu_loss(tape: &mut Tape, s: Var, style: usize, centers: &StyleCenters) -> Result<Var> {
    let n_s = centers.num_styles();
    let own = tape.constant(centers.get(style)?.clone());
    let d = tape.sub(s, own);
    let mut total = tape.sq_norm(d);
    for v in (0..n_s).filter(|&v| v != style) {
        let c = tape.constant(centers.get(v)?.clone());
        let d = tape.sub(s, c);
        let sq = tape.sq_norm(d);
        let neg = tape.neg(sq);
        let e = tape.exp(neg);
        let e = tape.scale(e, 1.0 / n_s as f64);
        total = tape.add(total, e);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    use super::*;

    fn head(dim: usize, ns: usize) -> (ParamStore, StyleHeadParams) {
        let mut s = ParamStore::new();
        let mut rng = StdRng::seed_from_u64(5);
        let h = StyleHeadParams::register(&mut s, dim, ns, &mut rng).unwrap();
        (s, h)
    }

    fn rand_t(r: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = StdRng::seed_from_u64(seed);
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap()
    }

    #[test]
    fn mask_entries_in_open_unit_interval() {
        let (st, h) = head(6, 2);
        let mut tape = Tape::new(&st);
        let hx = tape.constant(rand_t(5, 6, 1));
        let m = masked_style(&mut tape, &h, hx).unwrap();
        assert!(tape.value(m.mask).data().iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn zero_mask_weights_halve_the_mean() {
        let (mut st, h) = head(6, 2);
        st.get_mut(h.w_m).data_mut().fill(0.0);
        let hx_val = rand_t(4, 6, 2);
        let mut tape = Tape::new(&st);
        let hx = tape.constant(hx_val.clone());
        let m = masked_style(&mut tape, &h, hx).unwrap();
        assert!(tape.value(m.mask).data().iter().all(|&x| x == 0.5));
        let expected = hx_val.mean_rows().map(|x| 0.5 * x);
        assert!(tape.value(m.s).max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn single_position_is_elementwise_product() {
        let (st, h) = head(6, 2);
        let hx_val = rand_t(1, 6, 3);
        let mut tape = Tape::new(&st);
        let hx = tape.constant(hx_val.clone());
        let m = masked_style(&mut tape, &h, hx).unwrap();
        let expected = tape.value(m.mask).zip_map(&hx_val, |a, b| a * b);
        assert_eq!(tape.value(m.s), &expected);
    }

    #[test]
    fn empty_reference_is_rejected() {
        let (st, h) = head(6, 2);
        let mut tape = Tape::new(&st);
        let hx = tape.constant(Tensor::zeros(0, 6));
        assert!(matches!(masked_style(&mut tape, &h, hx), Err(Error::EmptyReference)));
    }

    #[test]
    fn classifier_outputs_distributions() {
        let (mut st, h) = head(6, 3);
        let mut tape = Tape::new(&st);
        let s = tape.constant(rand_t(1, 6, 4));
        let g = classify_style(&mut tape, &h, s);
        let sum: f64 = tape.value(g).data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(tape.value(g).data().iter().all(|&p| p > 0.0));
        drop(tape);
        for id in [h.w_s1, h.b_s1, h.w_s2, h.b_s2] {
            st.get_mut(id).data_mut().fill(0.0);
        }
        let mut tape = Tape::new(&st);
        let s = tape.constant(rand_t(1, 6, 4));
        let g = classify_style(&mut tape, &h, s);
        assert!(tape.value(g).data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn larger_logit_wins() {
        let (mut st, h) = head(2, 2);
        for id in [h.w_s1, h.w_s2, h.b_s1] {
            st.get_mut(id).data_mut().fill(0.0);
        }
        st.get_mut(h.b_s2).data_mut().copy_from_slice(&[9.0, -9.0]);
        let mut tape = Tape::new(&st);
        let s = tape.constant(Tensor::row_vector(vec![0.1, 0.2]));
        let g = classify_style(&mut tape, &h, s);
        assert_eq!(tape.value(g).argmax_row(0), 0);
    }

    #[test]
    fn cross_entropy_reductions() {
        assert!(cross_entropy(&[1.0, 0.0], &[1.0, 0.0]).abs() < 1e-15);
        assert!((cross_entropy(&[0.5, 0.5], &[0.0, 1.0]) - 2f64.ln()).abs() < 1e-15);
        let p = [0.2, 0.7, 0.1];
        assert_eq!(cross_entropy(&p, &[0.0, 1.0, 0.0]), -(0.7f64).ln());
        // the floor keeps a zero probability finite
        assert!((cross_entropy(&[0.0, 1.0], &[1.0, 0.0]) + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn tape_cross_entropy_is_minus_log_prob() {
        let (st, h) = head(6, 2);
        let mut tape = Tape::new(&st);
        let s = tape.constant(rand_t(1, 6, 9));
        let g = classify_style(&mut tape, &h, s);
        let g1 = tape.value(g).get(0, 1);
        let l = style_cla_loss(&mut tape, &h, s, 1);
        assert!((tape.value(l).item() + g1.ln()).abs() < 1e-12);
    }

    #[test]
    fn clustering_loss_closed_forms() {
        let st = ParamStore::new();
        // s on its own center, other center at squared distance 4
        let centers = StyleCenters {
            centers: vec![Some(Tensor::row_vector(vec![0.0, 0.0])), Some(Tensor::row_vector(vec![2.0, 0.0]))],
        };
        let mut tape = Tape::new(&st);
        let s = tape.constant(Tensor::row_vector(vec![0.0, 0.0]));
        let l = style_clu_loss(&mut tape, s, 0, &centers).unwrap();
        assert!((tape.value(l).item() - 0.5 * (-4.0f64).exp()).abs() < 1e-15);
        // equidistant at d = 1 from both centers
        let s = tape.constant(Tensor::row_vector(vec![1.0, 0.0]));
        let l = style_clu_loss(&mut tape, s, 1, &centers).unwrap();
        assert!((tape.value(l).item() - (1.0 + 0.5 * (-1.0f64).exp())).abs() < 1e-15);
        assert!(tape.value(l).item() > 0.0);
    }

    #[test]
    fn missing_center_is_an_error() {
        let st = ParamStore::new();
        let v = Tensor::row_vector(vec![1.0]);
        let centers = StyleCenters::from_batch(&[(0, &v)], 2);
        let mut tape = Tape::new(&st);
        let s = tape.constant(v.clone());
        assert!(matches!(style_clu_loss(&mut tape, s, 0, &centers), Err(Error::MissingCenter(1))));
    }

    #[test]
    fn centers_are_group_means() {
        let a = Tensor::row_vector(vec![1.0, 2.0]);
        let b = Tensor::row_vector(vec![3.0, 4.0]);
        let c = Tensor::row_vector(vec![-1.0, 0.0]);
        let centers = StyleCenters::from_batch(&[(0, &a), (1, &c), (0, &b)], 2);
        assert_eq!(centers.get(0).unwrap().data(), &[2.0, 3.0]);
        assert_eq!(centers.get(1).unwrap().data(), &[-1.0, 0.0]);
    }
}
