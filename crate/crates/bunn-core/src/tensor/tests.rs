use std::rc::Rc;

use approx::assert_abs_diff_eq;
use ndarray::{array, Array2};
use rand::Rng;

use super::grad_check::{check_gradients, ScalarFn, FD_STEP};
use super::{Tape, Var};
use crate::graph::Graph;
use crate::rng;

fn random(r: usize, c: usize, seed: u64) -> Array2<f64> {
    let mut g = rng::stream(seed, "tensor-test");
    Array2::from_shape_fn((r, c), |_| g.gen_range(-1.0..1.0))
}

fn assert_grads_match(inputs: &[Array2<f64>], build: &ScalarFn) {
    let reports = check_gradients(inputs, FD_STEP, build).unwrap();
    for (i, rep) in reports.iter().enumerate() {
        assert!(
            rep.max_rel_diff < 1e-5,
            "input {i}: max rel diff {:.3e}",
            rep.max_rel_diff
        );
    }
}

#[test]
fn relu_backward_hand_case() {
    let tape = Tape::new();
    let x = tape.leaf(array![[-1.0, 2.0]]);
    let y = x.relu();
    let loss = y.reduce_sum();
    let grads = tape.backward(&loss).unwrap();
    let gx = grads.get(&x);
    assert_abs_diff_eq!(gx[[0, 0]], 0.0);
    assert_abs_diff_eq!(gx[[0, 1]], 1.0);
}

#[test]
fn mse_of_equal_signals_is_zero() {
    let tape = Tape::new();
    let x = tape.leaf(array![[1.0, 2.0]]);
    let loss = x.mse_loss(&array![[1.0, 2.0]]).unwrap();
    assert_abs_diff_eq!(loss.value()[[0, 0]], 0.0);
}

#[test]
fn constant_loss_has_zero_gradients() {
    let tape = Tape::new();
    let x = tape.leaf(random(2, 2, 1));
    let c = tape.constant(array![[5.0]]);
    let loss = c.scale_by(&x.reduce_sum().scalar_mul(0.0)).unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert_abs_diff_eq!(grads.get(&x).sum(), 0.0);
}

#[test]
fn linear_loss_gradient_is_outer_product() {
    // loss = sum(W x); dW = 1 xᵀ per output row
    let w0 = random(2, 2, 2);
    let x0 = random(2, 1, 3);
    let tape = Tape::new();
    let w = tape.leaf(w0.clone());
    let x = tape.constant(x0.clone());
    let loss = w.matmul(&x).unwrap().reduce_sum();
    let grads = tape.backward(&loss).unwrap();
    let gw = grads.get(&w);
    for i in 0..2 {
        for j in 0..2 {
            assert_abs_diff_eq!(gw[[i, j]], x0[[j, 0]], epsilon = 1e-12);
        }
    }
}

#[test]
fn second_backward_call_fails() {
    let tape = Tape::new();
    let x = tape.leaf(array![[1.0]]);
    let loss = x.reduce_sum();
    tape.backward(&loss).unwrap();
    assert!(tape.backward(&loss).is_err());
}

#[test]
fn non_scalar_loss_rejected() {
    let tape = Tape::new();
    let x = tape.leaf(array![[1.0, 2.0]]);
    assert!(tape.backward(&x).is_err());
}

#[test]
fn detached_tensor_gets_no_gradient() {
    let tape = Tape::new();
    let x = tape.constant(array![[3.0]]);
    let y = tape.leaf(array![[2.0]]);
    let loss = x.hadamard(&y).unwrap().reduce_sum();
    let grads = tape.backward(&loss).unwrap();
    assert_abs_diff_eq!(grads.get(&x)[[0, 0]], 0.0);
    assert_abs_diff_eq!(grads.get(&y)[[0, 0]], 3.0);
}

#[test]
fn matmul_gradcheck_3x4_4x2() {
    let inputs = vec![random(3, 4, 4), random(4, 2, 5)];
    assert_grads_match(&inputs, &|_t, v| {
        let prod = v[0].matmul(&v[1])?;
        let sq = prod.hadamard(&prod)?;
        Ok(sq.reduce_sum())
    });
}

#[test]
fn elementwise_chain_gradcheck() {
    let inputs = vec![random(3, 3, 6), random(3, 3, 7)];
    assert_grads_match(&inputs, &|_t, v| {
        let a = v[0].tanh().hadamard(&v[1].sin())?;
        let b = v[0].cos().sub(&v[1].scalar_mul(0.5))?;
        Ok(a.add(&b)?.gelu().reduce_sum())
    });
}

#[test]
fn broadcast_bias_gradcheck() {
    let inputs = vec![random(4, 3, 8), random(1, 3, 9)];
    assert_grads_match(&inputs, &|_t, v| {
        let y = v[0].add(&v[1])?.relu();
        let z = v[0].add(&v[1])?;
        Ok(y.hadamard(&z)?.reduce_sum())
    });
}

#[test]
fn structural_ops_gradcheck() {
    let inputs = vec![random(4, 3, 10)];
    assert_grads_match(&inputs, &|_t, v| {
        let g = v[0].row_gather(&[0, 2, 2])?;
        let s = v[0].select_cols(1, 3)?.row_gather(&[1, 2, 3])?;
        let cat = Var::concat_cols(&[g, s])?;
        let rows = Var::concat_rows(&[cat.clone(), cat])?;
        let t = rows.transpose().reshape(6, 5)?;
        Ok(t.hadamard(&t)?.reduce_sum())
    });
}

#[test]
fn scalar_tensor_ops_gradcheck() {
    let inputs = vec![random(3, 2, 11), random(1, 1, 12) + 2.0];
    assert_grads_match(&inputs, &|_t, v| {
        let a = v[0].scale_by(&v[1])?;
        let b = v[0].div_by_scalar(&v[1])?;
        let ab = a.add(&b)?;
        Ok(ab.hadamard(&ab)?.reduce_sum())
    });
}

#[test]
fn loss_ops_gradcheck() {
    let target = random(3, 2, 13);
    let inputs = vec![random(3, 2, 14)];
    assert_grads_match(&inputs, &|_t, v| v[0].mse_loss(&target));

    let inputs = vec![random(2, 4, 15)];
    assert_grads_match(&inputs, &|_t, v| v[0].softmax_cross_entropy(&[1, 3]));
}

#[test]
fn graph_ops_gradcheck() {
    let g = Rc::new(Graph::build(4, &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]).unwrap());
    let inputs = vec![random(4, 2, 16)];
    assert_grads_match(&inputs, &|_t, v| {
        let l = v[0].lap_rw_apply(&g)?;
        let a = v[0].adj_sum_apply(&g)?;
        Ok(l.hadamard(&a)?.reduce_sum())
    });
}

#[test]
fn masked_softmax_rows_sum_to_one() {
    let g = Rc::new(Graph::build(4, &[(0, 1), (0, 2), (0, 3), (1, 2)]).unwrap());
    let tape = Tape::new();
    let s = tape.leaf(random(4, 4, 17));
    let a = s.masked_row_softmax(&g).unwrap();
    let av = a.value();
    for u in 0..4 {
        let sum: f64 = g.neighbors(u).iter().map(|&v| av[[u, v]]).sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        // non-neighbors stay zero
        for v in 0..4 {
            if !g.has_edge(u, v) {
                assert_abs_diff_eq!(av[[u, v]], 0.0);
            }
        }
    }
}

#[test]
fn masked_softmax_gradcheck() {
    let g = Rc::new(Graph::build(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (2, 3)]).unwrap());
    let inputs = vec![random(4, 4, 18), random(4, 2, 19)];
    assert_grads_match(&inputs, &|_t, v| {
        let att = v[0].masked_row_softmax(&g)?;
        let y = att.matmul(&v[1])?;
        Ok(y.hadamard(&y)?.reduce_sum())
    });
}

#[test]
fn bundle_apply_gradcheck() {
    // b=2 bundles, d=2, p=2 channels, 3 nodes
    let maps = random(3, 8, 20);
    let x = random(3, 8, 21);
    for transpose in [false, true] {
        assert_grads_match(&[maps.clone(), x.clone()], &|_t, v| {
            let y = v[1].bundle_apply(&v[0], 2, 2, 2, transpose)?;
            Ok(y.hadamard(&y)?.reduce_sum())
        });
    }
}

#[test]
fn bundle_apply_transpose_inverts_for_orthogonal_maps() {
    // single bundle, rotation by 0.7
    let (c, s) = (0.7f64.cos(), 0.7f64.sin());
    let maps = array![[c, s, -s, c], [c, s, -s, c]];
    let x = random(2, 2, 22);
    let tape = Tape::new();
    let m = tape.constant(maps);
    let xv = tape.constant(x.clone());
    let y = xv.bundle_apply(&m, 1, 2, 1, false).unwrap();
    let back = y.bundle_apply(&m, 1, 2, 1, true).unwrap();
    for (a, b) in back.value().iter().zip(x.iter()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
}

#[test]
fn shape_mismatches_are_errors() {
    let tape = Tape::new();
    let a = tape.leaf(random(2, 3, 23));
    let b = tape.leaf(random(2, 2, 24));
    assert!(a.matmul(&b).is_err());
    assert!(a.add(&b).is_err());
    assert!(a.hadamard(&b).is_err());
    assert!(a.reshape(5, 2).is_err());
    assert!(a.select_cols(2, 2).is_err());
    assert!(a.mse_loss(&random(3, 3, 25)).is_err());
}
