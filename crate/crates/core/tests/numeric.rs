mod common;

use common::{check_op, op_cases, op_slot, random, weighted_sum, OP_KINDS};
use groundchat::numeric::{clip_gradients, eval, grad_check_all, ClipMode, OpKind, Tensor};
use proptest::prelude::*;

#[test]
fn every_primitive_matches_finite_differences() {
    let mut covered = [false; OP_KINDS];
    for case in op_cases() {
        let r = check_op(&case, 1e-6);
        assert!(r.passed(), "{}: {r:?}", case.label);
        assert_eq!(r.checked, case.inputs.iter().map(Tensor::len).sum::<usize>());
        covered[op_slot(&case.kind)] = true;
    }
    assert!(covered.iter().all(|&c| c), "{covered:?}");
}

#[test]
fn composite_gru_like_cell() {
    let ps = [random(&[1, 4], 1), random(&[4, 6], 2), random(&[1, 3], 3), random(&[3, 6], 4)];
    let r = grad_check_all(
        |t, v| {
            let gx = t.matmul(v[0], v[1])?;
            let gh = t.matmul(v[2], v[3])?;
            let z = t.sigmoid(t.slice(t.add(gx, gh)?, 0, 3)?)?;
            let n = t.tanh(t.slice(t.add(gx, gh)?, 3, 3)?)?;
            let keep = t.mul(z, v[2])?;
            let one_minus = t.sub(t.leaf(Tensor::ones(&[1, 3])), z)?;
            let h = t.add(keep, t.mul(one_minus, n)?)?;
            weighted_sum(t, h)
        },
        &ps,
        1e-5,
        1e-6,
    )
    .unwrap();
    assert!(r.passed(), "{r:?}");
}

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-50.0..50.0f64, r * c).prop_map(move |d| Tensor::new(vec![r, c], d).unwrap())
    })
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(x in matrix(5, 8)) {
        let y = eval(&OpKind::Softmax, &[&x]).unwrap();
        for r in 0..y.rows() {
            let s: f64 = y.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(y.row(r).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn clipping_never_increases_the_norm(
        grads in prop::collection::vec(matrix(3, 4), 1..4),
        threshold in 1e-3..100.0f64,
    ) {
        let norm = |g: &[Tensor]| g.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
        let before = norm(&grads);
        let mut clipped = grads.clone();
        let reported = clip_gradients(&mut clipped, threshold, ClipMode::Norm).unwrap();
        let after = norm(&clipped);
        prop_assert!((reported - before).abs() <= 1e-12 * before.max(1.0));
        prop_assert!(after <= before * (1.0 + 1e-12));
        prop_assert!((after - before.min(threshold)).abs() <= 1e-12 * before.max(1.0));

        let mut by_value = grads.clone();
        clip_gradients(&mut by_value, threshold, ClipMode::Value).unwrap();
        prop_assert!(norm(&by_value) <= before * (1.0 + 1e-12));
        prop_assert!(by_value.iter().all(|g| g.data().iter().all(|x| x.abs() <= threshold)));
    }
}
