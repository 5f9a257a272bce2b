use proptest::prelude::*;
use styled2t_autograd::tensor::{log_softmax_rows, masked_softmax_rows, softmax_rows};
use styled2t_autograd::{Mask, Tensor};

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-20.0f64..20.0, r * c).prop_map(move |d| Tensor::from_vec(r, c, d).unwrap())
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(x in matrix(5, 7)) {
        let p = softmax_rows(&x);
        for r in 0..p.rows() {
            let s: f64 = p.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.row(r).iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn log_softmax_matches_log_of_softmax(x in matrix(4, 6)) {
        let a = log_softmax_rows(&x);
        let b = softmax_rows(&x).map(f64::ln);
        prop_assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn causal_mask_zeroes_the_future(x in matrix(6, 6)) {
        let p = masked_softmax_rows(&x, &Mask::Causal { offset: 0 });
        for r in 0..p.rows() {
            for c in (r + 1)..p.cols() {
                prop_assert_eq!(p.get(r, c), 0.0);
            }
        }
    }

    #[test]
    fn matmul_transposes_agree(a in matrix(4, 5), seed in 0u64..1000) {
        let b = Tensor::from_vec(
            a.cols(),
            3,
            (0..a.cols() * 3).map(|i| ((i as u64 * 31 + seed) % 17) as f64 - 8.0).collect(),
        )
        .unwrap();
        let ab = a.matmul(&b);
        prop_assert!(ab.max_abs_diff(&a.matmul_bt(&b.transpose())) < 1e-9);
        prop_assert!(ab.transpose().max_abs_diff(&b.matmul_at(&a.transpose())) < 1e-9);
    }
}
