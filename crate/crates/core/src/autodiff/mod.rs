//! Reverse-mode automatic differentiation over dense tensors.

mod tape;
mod tensor;

pub use tape::{sigmoid, Gradients, Tape, Var, PROB_CLIP};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 2], &[1., 2., 3., 4.]));
        let i = tape.leaf(t(&[2, 2], &[1., 0., 0., 1.]));
        let c = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(c).data(), &[1., 2., 3., 4.]);

        let x = tape.leaf(t(&[1, 2], &[1., 2.]));
        let y = tape.leaf(t(&[2, 1], &[3., 4.]));
        let z = tape.matmul(x, y).unwrap();
        assert_eq!(tape.value(z).data(), &[11.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::<f64>::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::<f64>::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Dimension { .. }));
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn matmul_gradient_of_sum() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[1, 2], &[1., 1.]));
        let b = tape.leaf(t(&[2, 1], &[2., 5.]));
        let c = tape.matmul(a, b).unwrap();
        let s = tape.sum(c);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[2., 5.]);
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1., 0., 2.]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0., 0., 2.]);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0., 0., 1.]);

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s).item(), 0.5);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 0.25);
    }

    #[test]
    fn add_broadcasts_bias_rows_only() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = tape.leaf(t(&[2], &[10., 20.]));
        let y = tape.add(x, b).unwrap();
        assert_eq!(tape.value(y).data(), &[11., 22., 13., 24.]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[2., 2.]);

        let bad = tape.leaf(t(&[3], &[1., 2., 3.]));
        assert!(tape.add(x, bad).is_err());
        assert!(tape.mul(x, bad).is_err());
    }

    #[test]
    fn grad_reverse_identity_forward_negated_backward() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[3.5, -1.]));
        let r = tape.grad_reverse(x, 0.5).unwrap();
        assert_eq!(tape.value(r).data(), tape.value(x).data());
        let w = tape.leaf(t(&[2], &[1., -2.]));
        let y = tape.mul(r, w).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[-0.5, 1.]);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[3.5, -1.]));
        let r = tape.grad_reverse(x, 0.0).unwrap();
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.0));

        assert!(matches!(tape.grad_reverse(x, -0.1), Err(Error::Parameter(_))));
    }

    #[test]
    fn dropout_scaling_and_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2], &[2., 4.]));
        let y = tape.dropout(x, &t(&[1, 2], &[1., 0.]), 0.5).unwrap();
        assert_eq!(tape.value(y).data(), &[4., 0.]);
        let id = tape.dropout(x, &Tensor::ones(&[1, 2]), 1.0).unwrap();
        assert_eq!(tape.value(id).data(), tape.value(x).data());
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2., 0.]);

        assert!(matches!(tape.dropout(x, &Tensor::ones(&[1, 2]), 0.0), Err(Error::Parameter(_))));
        assert!(tape.dropout(x, &t(&[1, 2], &[0.5, 1.]), 1.0).is_err());
    }

    #[test]
    fn dropout_row_mask_broadcasts() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 2], &[1., 2., 3., 4.]));
        let y = tape.dropout(x, &t(&[2], &[0., 1.]), 0.5).unwrap();
        assert_eq!(tape.value(y).data(), &[0., 4., 0., 8.]);
    }

    #[test]
    fn softmax_cross_entropy_cases() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(Tensor::zeros(&[1, 12]));
        let l = tape.softmax_cross_entropy(logits, &[3]).unwrap();
        assert!((tape.value(l).item() - 12f64.ln()).abs() < 1e-12);

        let mut sat = vec![0.0; 12];
        sat[5] = 1e6;
        let logits = tape.leaf(t(&[1, 12], &sat));
        let l = tape.softmax_cross_entropy(logits, &[5]).unwrap();
        assert!(tape.value(l).item() < 1e-6);

        let logits = tape.leaf(t(&[2, 3], &[0.3, -1.2, 2.0, 0.1, 0.0, -0.4]));
        let l = tape.softmax_cross_entropy(logits, &[2, 0]).unwrap();
        let g = tape.backward(l).unwrap();
        let gl = g.get(logits).unwrap();
        for r in 0..2 {
            assert!(gl.row(r).iter().sum::<f64>().abs() < 1e-12);
        }
        assert!(matches!(tape.softmax_cross_entropy(logits, &[3, 0]), Err(Error::Label(_))));
    }

    #[test]
    fn binary_cross_entropy_cases() {
        let ln2 = std::f64::consts::LN_2;
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::scalar(0.5));
        let l = tape.binary_cross_entropy(p, &Tensor::scalar(0.0)).unwrap();
        assert!((tape.value(l).item() - ln2).abs() < 1e-12);

        let p = tape.leaf(t(&[2], &[0.0, 1.0]));
        let l = tape.binary_cross_entropy(p, &t(&[2], &[0., 1.])).unwrap();
        assert!(tape.value(l).item() <= 1.7e-7);

        let p = tape.leaf(t(&[2], &[0.5, 0.5]));
        let l = tape.binary_cross_entropy(p, &t(&[2], &[0., 1.])).unwrap();
        assert!((tape.value(l).item() - ln2).abs() < 1e-12);

        assert!(matches!(
            tape.binary_cross_entropy(p, &t(&[2], &[0., 2.])),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[2], &[1., -3.]));
        let sq = tape.mul(w, w).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[2., -6.]);
        assert!(matches!(tape.backward(sq), Err(Error::Usage(_))));
    }

    #[test]
    fn slice_rows_routes_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3, 1], &[1., 2., 3.]));
        let top = tape.slice_rows(x, 1, 3).unwrap();
        assert_eq!(tape.value(top).data(), &[2., 3.]);
        let s = tape.sum(top);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0., 1., 1.]);
    }

    #[test]
    fn works_in_single_precision() {
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(Tensor::from_f64(vec![2], &[1., -3.]).unwrap());
        let sq = tape.mul(w, w).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[2f32, -6.]);
    }
}
