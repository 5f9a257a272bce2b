use rand::SeedableRng;
use rand::rngs::StdRng;
use styled2t_autograd::check::check_gradients;
use styled2t_autograd::{Mask, ParamStore, Tape, Var};

fn store() -> (ParamStore, Vec<styled2t_autograd::ParamId>) {
    let mut rng = StdRng::seed_from_u64(11);
    let mut s = ParamStore::new();
    let ids = vec![
        s.normal("a", 3, 4, 0.7, &mut rng).unwrap(),
        s.normal("b", 4, 4, 0.7, &mut rng).unwrap(),
        s.normal("bias", 1, 4, 0.7, &mut rng).unwrap(),
        s.normal("gamma", 1, 4, 0.7, &mut rng).unwrap(),
        s.normal("beta", 1, 4, 0.7, &mut rng).unwrap(),
    ];
    (s, ids)
}

/// Scalar function touching every op on the tape.
fn forward(tape: &mut Tape, ids: &[styled2t_autograd::ParamId]) -> Var {
    let a = tape.param(ids[0]);
    let b = tape.param(ids[1]);
    let bias = tape.param(ids[2]);
    let gamma = tape.param(ids[3]);
    let beta = tape.param(ids[4]);

    let h = tape.affine(a, b, bias);
    let h = tape.layer_norm(h, gamma, beta);
    let t = tape.tanh(h);
    let s = tape.sigmoid(h);
    let g = tape.gelu(h);
    let m = tape.mul(t, s);
    let m = tape.sub(m, g);
    let scores = tape.matmul_bt(m, a);
    let p = tape.softmax(scores, &Mask::Causal { offset: 0 });
    let pk = tape.softmax(scores, &Mask::Keys(vec![true, false, true]));
    let p = tape.add(p, pk);
    let ctx = tape.matmul(p, m);
    let left = tape.slice_cols(ctx, 0, 2);
    let right = tape.slice_cols(ctx, 2, 4);
    let swapped = tape.concat_cols(&[right, left]);
    let tr = tape.transpose(swapped);
    let tr = tape.transpose(tr);
    let picked = tape.select_rows(tr, &[2, 0, 2]);
    let stacked = tape.concat_rows(&[picked, ctx]);
    let lp = tape.log_softmax(stacked);
    let nll = tape.nll(lp, &[0, 1, 2, 3, 0, 1]);
    let pooled = tape.mean_rows(stacked);
    let e = tape.exp(pooled);
    let e = tape.scale(e, 0.3);
    let n = tape.sq_norm(e);
    let total = tape.add(nll, n);
    let neg = tape.neg(total);
    tape.sum(neg)
}

#[test]
fn every_op_matches_central_differences() {
    let (s, ids) = store();
    let grads = {
        let mut tape = Tape::new(&s);
        let loss = forward(&mut tape, &ids);
        tape.backward(loss)
    };
    let report = check_gradients(&s, &grads, 1e-5, 1e-6, None, |p| {
        let mut tape = Tape::new(p);
        let loss = forward(&mut tape, &ids);
        tape.value(loss).item()
    });
    assert_eq!(report.checked, 12 + 16 + 4 + 4 + 4);
    assert!(
        report.max_rel_error() < 1e-6,
        "worst coordinate: {:?}",
        report.worst
    );
}

#[test]
fn reused_param_accumulates() {
    let (s, ids) = store();
    let mut tape = Tape::new(&s);
    let a1 = tape.param(ids[0]);
    let a2 = tape.param(ids[0]);
    assert_eq!(a1, a2);
    let sum = tape.add(a1, a2);
    let loss = tape.sum(sum);
    let g = tape.backward(loss);
    assert!(g.get(ids[0]).unwrap().data().iter().all(|&x| x == 2.0));
    assert!(g.get(ids[1]).is_none());
}
