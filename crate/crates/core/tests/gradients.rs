mod common;

use common::{op_cases, readout, worst_end_to_end_error, worst_op_error};
use proptest::prelude::*;
use uax_core::numerics::{Graph, Tensor};

#[test]
fn every_op_matches_central_differences() {
    for (k, case) in op_cases().iter().enumerate() {
        let err = worst_op_error(case, 20, 100 + k as u64);
        assert!(err < 1e-4, "{}: relative error {err:e}", case.name);
    }
}

#[test]
fn reparameterized_extractor_loss_matches_central_differences() {
    let (err, skipped) = worst_end_to_end_error(3, 7);
    assert!(err < 1e-4, "relative error {err:e}");
    assert!(skipped < 0.25, "{skipped} of coordinates straddle a kink");
}

fn tensor(data: Vec<f64>) -> Tensor {
    Tensor::new(vec![2, data.len() / 2], data).unwrap()
}

proptest! {
    #[test]
    fn backward_is_linear_in_the_root(
        a in prop::collection::vec(-2.0f64..2.0, 6),
        b in prop::collection::vec(-2.0f64..2.0, 6),
    ) {
        let grad_of = |pick: u8| {
            let mut g = Graph::new();
            let x = g.param(tensor(a.clone())).unwrap();
            let y = g.constant(tensor(b.clone())).unwrap();
            let f1 = {
                let t = g.tanh(x).unwrap();
                let m = g.mul(t, y).unwrap();
                g.sum(m).unwrap()
            };
            let f2 = {
                let s = g.mul(x, x).unwrap();
                readout(&mut g, s).unwrap()
            };
            let root = match pick {
                0 => f1,
                1 => f2,
                _ => g.add(f1, f2).unwrap(),
            };
            g.backward(root).unwrap().take(x).unwrap().into_data()
        };
        let (g1, g2, both) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..6 {
            prop_assert!((both[i] - (g1[i] + g2[i])).abs() <= 1e-12 * (1.0 + both[i].abs()));
        }
    }

    #[test]
    fn forward_is_bit_deterministic(data in prop::collection::vec(-1.0f64..1.0, 2 * 3 * 4 * 4)) {
        let run = || {
            let mut g = Graph::new();
            let x = g.constant(Tensor::new(vec![2, 3, 4, 4], data.clone()).unwrap()).unwrap();
            let w = g.constant(Tensor::new(vec![2, 3, 3, 3], (0..54).map(|i| (i as f64).cos()).collect()).unwrap()).unwrap();
            let b = g.constant(Tensor::new(vec![2], vec![0.1, -0.2]).unwrap()).unwrap();
            let y = g.conv2d(x, w, b, uax_core::numerics::ConvParams::new(1, 1)).unwrap();
            let y = g.relu(y).unwrap();
            let p = g.global_avg_pool(y).unwrap();
            g.value(p).unwrap().data().to_vec()
        };
        let (first, second) = (run(), run());
        prop_assert!(first.iter().zip(&second).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
