use approx::assert_abs_diff_eq;
use ndarray::{array, Array2};
use rand::Rng;
use std::rc::Rc;

use super::*;
use crate::bundle::identity_maps;
use crate::rng;
use crate::tensor::grad_check::{check_gradients, FD_STEP};

fn random(r: usize, c: usize, seed: u64) -> Array2<f64> {
    let mut g = rng::stream(seed, "model-test");
    Array2::from_shape_fn((r, c), |_| g.gen_range(-1.0..1.0))
}

fn random_graph(n: usize, seed: u64) -> Rc<Graph> {
    let mut g = rng::stream(seed, "model-test-graph");
    let mut edges: Vec<(usize, usize)> = (0..n).map(|v| (v, (v + 1) % n)).collect();
    for u in 0..n {
        for v in u + 2..n {
            if g.gen_bool(0.3) && !(u == 0 && v == n - 1) {
                edges.push((u, v));
            }
        }
    }
    Rc::new(Graph::build(n, &edges).unwrap())
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn complete_graph(n: usize) -> Rc<Graph> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            edges.push((u, v));
        }
    }
    Rc::new(Graph::build(n, &edges).unwrap())
}

/// One linear diffusion layer from explicit maps: heat(t) ∘ (OᵀWO·x + b).
fn linear_layer(
    tape: &Tape,
    g: &Rc<Graph>,
    maps: &Array2<f64>,
    w: &Array2<f64>,
    bias: &Array2<f64>,
    t: Option<f64>,
    x: &Var,
) -> Var {
    let b = maps.ncols() / 4;
    let bundle =
        BundleAssignment::from_maps(tape.constant(maps.clone()), b, 2).unwrap();
    let wv = tape.constant(w.clone());
    let bv = tape.constant(bias.clone());
    let encoded = bunn_encode(&bundle, &wv, &bv, x).unwrap();
    // exact diffusion so Jacobians match the dense kernel to round-off
    let op = match t {
        Some(t) => HeatOperator::spectral(g.clone(), t).unwrap(),
        None => HeatOperator::limit(g.clone()).unwrap(),
    };
    bundle_heat_apply(&bundle, &op, &encoded).unwrap()
}

/// ∂y[u_out, ch_out]/∂x via one backward pass of the linear layer.
fn layer_jacobian_row(
    g: &Rc<Graph>,
    maps: &Array2<f64>,
    w: &Array2<f64>,
    t: f64,
    u_out: usize,
    ch_out: usize,
    x0: &Array2<f64>,
) -> Array2<f64> {
    let tape = Tape::new();
    let x = tape.leaf(x0.clone());
    let bias = Array2::zeros((1, x0.ncols()));
    let y = linear_layer(&tape, g, maps, w, &bias, Some(t), &x);
    let scalar = y
        .row_gather(&[u_out])
        .unwrap()
        .select_cols(ch_out, ch_out + 1)
        .unwrap();
    let grads = tape.backward(&scalar).unwrap();
    grads.get(&x)
}

#[test]
fn phi_mlp_zero_weights_yield_trivial_bundle() {
    let mut store = ParamStore::default();
    let mut r = rng::stream(1, "init");
    let phi = PhiNet::new(&mut store, &mut r, PhiKind::Mlp, 3, &[8], 4);
    let g = random_graph(5, 2);
    let tape = Tape::new();
    let vars = store.leaf_all(&tape);
    let pe = tape.constant(random(5, 3, 3));
    let angles = phi.forward(&vars, &g, &pe).unwrap();
    assert!(angles.value().iter().all(|&a| a == 0.0));
    // angle 0 per parity convention: rotations → I, reflections → diag(1,−1)
    let bundle = BundleAssignment::from_angles(&angles).unwrap();
    for v in 0..5 {
        for i in 0..4 {
            let expect = if i < 2 { 1.0 } else { -1.0 };
            assert_abs_diff_eq!(bundle.determinant(v, i), expect, epsilon = 1e-12);
        }
    }
}

#[test]
fn phi_mlp_separates_distinct_encodings() {
    // hand-set single dense layer: angle = first PE coordinate
    let mut store = ParamStore::default();
    let mut r = rng::stream(4, "init");
    let phi = PhiNet::new(&mut store, &mut r, PhiKind::Mlp, 2, &[], 1);
    store.arrays[1] = array![[1.0], [0.0]];
    let g = random_graph(2, 5);
    let tape = Tape::new();
    let vars = store.leaf_all(&tape);
    let pe = tape.constant(array![[0.3, 0.0], [1.2, 0.0]]);
    let angles = phi.forward(&vars, &g, &pe).unwrap().value();
    assert_abs_diff_eq!(angles[[0, 0]], 0.3);
    assert_abs_diff_eq!(angles[[1, 0]], 1.2);
}

#[test]
fn phi_gradcheck_through_layer_loss() {
    let g = random_graph(4, 6);
    let pe0 = random(4, 3, 7);
    let x0 = random(4, 4, 8);
    // inputs: dense weight, dense bias of a 1-layer MLP φ with 2 bundles
    let inputs = vec![random(3, 2, 9), random(1, 2, 10)];
    let reports = check_gradients(&inputs, FD_STEP, &|t, v| {
        let pe = t.constant(pe0.clone());
        let angles = pe.matmul(&v[0])?.add(&v[1])?;
        let bundle = BundleAssignment::from_angles(&angles)?;
        let x = t.constant(x0.clone());
        let op = HeatOperator::taylor(g.clone(), 1.0, 8)?;
        let y = bundle_heat_apply(&bundle, &op, &x)?;
        Ok(y.hadamard(&y)?.reduce_sum())
    })
    .unwrap();
    for rep in &reports {
        assert!(rep.max_rel_diff < 1e-5, "{rep:?}");
    }
}

#[test]
fn sumgnn_with_zero_neighbor_weight_is_node_mlp() {
    let mut store = ParamStore::default();
    let mut r = rng::stream(11, "init");
    let phi = PhiNet::new(&mut store, &mut r, PhiKind::SumGnn, 2, &[], 2);
    store.arrays[1] = random(2, 2, 12); // W_s
    store.arrays[2] = Array2::zeros((2, 2)); // W_n = 0
    let g = random_graph(5, 13);
    let tape = Tape::new();
    let vars = store.leaf_all(&tape);
    let pe0 = random(5, 2, 14);
    let pe = tape.constant(pe0.clone());
    let out = phi.forward(&vars, &g, &pe).unwrap().value();
    let expect = pe0.dot(&store.arrays[1]);
    assert!(max_abs_diff(&out, &expect) < 1e-12);
}

#[test]
fn sumgnn_constant_input_on_regular_graph_is_constant() {
    let mut store = ParamStore::default();
    let mut r = rng::stream(15, "init");
    let phi = PhiNet::new(&mut store, &mut r, PhiKind::SumGnn, 2, &[], 1);
    store.arrays[1] = random(2, 1, 16);
    store.arrays[2] = random(2, 1, 17);
    let g = complete_graph(5);
    let tape = Tape::new();
    let vars = store.leaf_all(&tape);
    let pe = tape.constant(Array2::from_elem((5, 2), 0.4));
    let out = phi.forward(&vars, &g, &pe).unwrap().value();
    for v in 1..5 {
        assert_abs_diff_eq!(out[[v, 0]], out[[0, 0]], epsilon = 1e-12);
    }
}

#[test]
fn sumgnn_is_degree_sensitive_on_path() {
    // P3 with constant input: center aggregates two neighbors, leaves one
    let mut store = ParamStore::default();
    let mut r = rng::stream(18, "init");
    let phi = PhiNet::new(&mut store, &mut r, PhiKind::SumGnn, 1, &[], 1);
    store.arrays[1] = array![[0.5]]; // W_s
    store.arrays[2] = array![[1.0]]; // W_n
    let g = Rc::new(Graph::build(3, &[(0, 1), (1, 2)]).unwrap());
    let tape = Tape::new();
    let vars = store.leaf_all(&tape);
    let pe = tape.constant(Array2::from_elem((3, 1), 1.0));
    let out = phi.forward(&vars, &g, &pe).unwrap().value();
    assert_abs_diff_eq!(out[[0, 0]], 1.5, epsilon = 1e-12);
    assert_abs_diff_eq!(out[[1, 0]], 2.5, epsilon = 1e-12);
    assert_abs_diff_eq!(out[[2, 0]], 1.5, epsilon = 1e-12);
}

#[test]
fn encode_identity_weight_is_identity() {
    let tape = Tape::new();
    let theta = tape.constant(random(4, 2, 19));
    let bundle = BundleAssignment::from_angles(&theta).unwrap();
    let x = tape.constant(random(4, 4, 20));
    let w = tape.constant(Array2::eye(4));
    let b = tape.constant(Array2::zeros((1, 4)));
    let h = bunn_encode(&bundle, &w, &b, &x).unwrap();
    assert!(max_abs_diff(&h.value(), &x.value()) < 1e-12);
}

#[test]
fn encode_trivial_bundle_is_affine_map() {
    let tape = Tape::new();
    let bundle = BundleAssignment::identity(&tape, 3, 1, 2);
    let x0 = random(3, 2, 21);
    let w0 = random(2, 2, 22);
    let b0 = random(1, 2, 23);
    let x = tape.constant(x0.clone());
    let w = tape.constant(w0.clone());
    let b = tape.constant(b0.clone());
    let h = bunn_encode(&bundle, &w, &b, &x).unwrap().value();
    let expect = x0.dot(&w0.t()) + &b0.row(0);
    assert!(max_abs_diff(&h, &expect) < 1e-12);
}

#[test]
fn encode_swap_map_hand_case() {
    // O = swap, W = diag(1,0): OᵀWO x = (0, b) for x = (a, b)
    let tape = Tape::new();
    let maps = tape.constant(array![[0.0, 1.0, 1.0, 0.0]]);
    let bundle = BundleAssignment::from_maps(maps, 1, 2).unwrap();
    let x = tape.constant(array![[0.7, -0.4]]);
    let w = tape.constant(array![[1.0, 0.0], [0.0, 0.0]]);
    let b = tape.constant(Array2::zeros((1, 2)));
    let h = bunn_encode(&bundle, &w, &b, &x).unwrap().value();
    assert_abs_diff_eq!(h[[0, 0]], 0.0, epsilon = 1e-14);
    assert_abs_diff_eq!(h[[0, 1]], -0.4, epsilon = 1e-14);
}

#[test]
fn layer_with_zero_time_and_identity_params_is_identity() {
    let g = random_graph(5, 24);
    let tape = Tape::new();
    let maps = identity_maps(5, 1, 2);
    let x0 = random(5, 2, 25);
    let x = tape.constant(x0.clone());
    let y = linear_layer(
        &tape,
        &g,
        &maps,
        &Array2::eye(2),
        &Array2::zeros((1, 2)),
        Some(0.0),
        &x,
    );
    assert!(max_abs_diff(&y.value(), &x0) < 1e-12);
}

#[test]
fn linear_layer_jacobian_matches_kernel_formula() {
    // ∂y_u/∂x_v = H(t,u,v)·O_uᵀWO_v entrywise, within 1e−7
    for (seed, t) in [(1u64, 0.5), (2, 1.0), (3, 5.0)] {
        let n = 6;
        let g = random_graph(n, 30 + seed);
        let tape = Tape::new();
        let theta = tape.constant(random(n, 1, 40 + seed));
        let bundle = BundleAssignment::from_angles(&theta).unwrap();
        let maps = bundle.maps.value();
        let w = random(2, 2, 50 + seed);
        let x0 = random(n, 2, 60 + seed);
        let kernel = heat_kernel_dense(&g, t).unwrap();
        let block = |v: usize, r: usize, c: usize| maps[[v, r * 2 + c]];
        for u in 0..n {
            for ch in 0..2 {
                let grad = layer_jacobian_row(&g, &maps, &w, t, u, ch, &x0);
                for v in 0..n {
                    // (O_uᵀ W O_v)[ch, j]
                    for j in 0..2 {
                        let mut formula = 0.0;
                        for a in 0..2 {
                            for bq in 0..2 {
                                formula += block(u, a, ch) * w[[a, bq]] * block(v, bq, j);
                            }
                        }
                        formula *= kernel[[u, v]];
                        assert!(
                            (grad[[v, j]] - formula).abs() < 1e-7,
                            "t={t} u={u} v={v}: {} vs {formula}",
                            grad[[v, j]]
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn infinite_time_layer_reaches_consensus() {
    let g = random_graph(6, 70);
    let tape = Tape::new();
    let theta = tape.constant(random(6, 2, 71));
    let bundle = BundleAssignment::from_angles(&theta).unwrap();
    let maps = bundle.maps.value();
    let x0 = random(6, 4, 72);
    let x = tape.constant(x0);
    let w = random(4, 4, 73);
    let bias = random(1, 4, 74);
    let y = linear_layer(&tape, &g, &maps, &w, &bias, None, &x);
    let synced = bundle.synchronize(&y).unwrap().value();
    for v in 1..6 {
        for j in 0..4 {
            assert!(
                (synced[[v, j]] - synced[[0, j]]).abs() < 1e-8,
                "node {v} channel {j}"
            );
        }
    }
}

#[test]
fn nonconstant_maps_avoid_output_collapse() {
    // adjacent nodes keep distinct outputs at t = ∞ when maps differ
    let g = random_graph(6, 75);
    let tape = Tape::new();
    let mut maps = identity_maps(6, 1, 2);
    maps[[2, 0]] = 0.0;
    maps[[2, 1]] = 1.0;
    maps[[2, 2]] = 1.0;
    maps[[2, 3]] = 0.0;
    let x0 = random(6, 2, 76);
    let x = tape.constant(x0);
    let y = linear_layer(
        &tape,
        &g,
        &maps,
        &Array2::eye(2),
        &Array2::zeros((1, 2)),
        None,
        &x,
    )
    .value();
    let u = 2;
    let v = g.neighbors(2)[0];
    let dist: f64 = (0..2).map(|j| (y[[u, j]] - y[[v, j]]).powi(2)).sum::<f64>();
    assert!(dist.sqrt() > 1e-6);
}

#[test]
fn deep_stack_with_swap_map_separates_two_nodes() {
    // five layers at t = ∞: first layer isolates one channel, later layers
    // use identity weights; the swap node keeps a distinct output
    let g = random_graph(7, 77);
    let (u, v) = (3, g.neighbors(3)[0]);
    let mut maps = identity_maps(7, 1, 2);
    maps[[u, 0]] = 0.0;
    maps[[u, 1]] = 1.0;
    maps[[u, 2]] = 1.0;
    maps[[u, 3]] = 0.0;

    let x0 = random(7, 2, 78);
    // h = Σ_w (d_w/2|E|)·O_w x_w, from the closed-form limit
    let tape = Tape::new();
    let x = tape.constant(x0.clone());
    let total = 2.0 * g.edge_count() as f64;
    let mut h = [0.0f64; 2];
    for w in 0..7 {
        let scale = g.degree(w) as f64 / total;
        let (a, b) = (x0[[w, 0]], x0[[w, 1]]);
        let mapped = if w == u { (b, a) } else { (a, b) };
        h[0] += scale * mapped.0;
        h[1] += scale * mapped.1;
    }
    assert!(h[0].abs() > 1e-9, "generic input expected");
    let w1 = if h[0] > 0.0 {
        array![[1.0, 0.0], [0.0, 0.0]]
    } else {
        array![[-1.0, 0.0], [0.0, 0.0]]
    };

    let mut cur = linear_layer(&tape, &g, &maps, &w1, &Array2::zeros((1, 2)), None, &x).relu();
    for _ in 1..5 {
        cur = linear_layer(
            &tape,
            &g,
            &maps,
            &Array2::eye(2),
            &Array2::zeros((1, 2)),
            None,
            &cur,
        )
        .relu();
    }
    let y = cur.value();
    let dist: f64 = (0..2)
        .map(|j| (y[[u, j]] - y[[v, j]]).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(dist > h[0].abs(), "distance {dist}, |h0| = {}", h[0].abs());
}

#[test]
fn trivial_bundle_first_order_layer_is_mean_aggregation() {
    let g = random_graph(6, 80);
    let tape = Tape::new();
    let maps = identity_maps(6, 1, 2);
    let w0 = random(2, 2, 81);
    let x0 = random(6, 2, 82);
    let x = tape.constant(x0.clone());
    let bundle = BundleAssignment::from_maps(tape.constant(maps), 1, 2).unwrap();
    let encoded = bunn_encode(
        &bundle,
        &tape.constant(w0.clone()),
        &tape.constant(Array2::zeros((1, 2))),
        &x,
    )
    .unwrap();
    let op = HeatOperator::taylor(g.clone(), 1.0, 1).unwrap();
    let y = bundle_heat_apply(&bundle, &op, &encoded).unwrap().value();
    let wx = x0.dot(&w0.t());
    for v in 0..6 {
        for j in 0..2 {
            let mean: f64 = g.neighbors(v).iter().map(|&n| wx[[n, j]]).sum::<f64>()
                / g.degree(v) as f64;
            assert_abs_diff_eq!(y[[v, j]], mean, epsilon = 1e-12);
        }
    }
}

fn small_config(layers: usize, t: Option<f64>) -> BunnModelConfig {
    BunnModelConfig {
        in_dim: 2,
        pe_dim: 3,
        out_dim: 2,
        bundles: 2,
        dim: 2,
        channels: 1,
        layers,
        t: vec![t; layers],
        activation: Activation::Relu,
        phi: PhiConfig {
            kind: PhiKind::Mlp,
            hidden: vec![8],
            shared: false,
            use_features: false,
        },
        skip: SkipMode::PostActivation,
    }
}

#[test]
fn zero_layer_model_is_encoder_decoder() {
    let mut r = rng::stream(83, "init");
    let model = BunnModel::new(small_config(0, Some(1.0)), &mut r).unwrap();
    let g = random_graph(4, 84);
    let ops = model.prepare(&g).unwrap();
    let tape = Tape::new();
    let vars = model.store.leaf_all(&tape);
    let x0 = random(4, 2, 85);
    let pe = tape.constant(random(4, 3, 86));
    let x = tape.constant(x0.clone());
    let y = model.forward(&vars, &g, &ops, &pe, &x).unwrap().value();
    let enc = &model.store.arrays[0];
    let dec = &model.store.arrays[2];
    let expect = x0.dot(enc).dot(dec);
    assert!(max_abs_diff(&y, &expect) < 1e-12);
}

#[test]
fn model_smoke_forward_backward() {
    let mut r = rng::stream(87, "init");
    let model = BunnModel::new(small_config(2, Some(1.0)), &mut r).unwrap();
    let (g, _) = crate::graph::barbell_graph(10).unwrap();
    let g = Rc::new(g);
    let n = g.node_count();
    let ops = model.prepare(&g).unwrap();
    let tape = Tape::new();
    let vars = model.store.leaf_all(&tape);
    let pe = tape.constant(random(n, 3, 88));
    let x = tape.constant(random(n, 2, 89));
    let y = model.forward(&vars, &g, &ops, &pe, &x).unwrap();
    let loss = y.mse_loss(&random(n, 2, 90)).unwrap();
    assert!(loss.value()[[0, 0]].is_finite());
    let grads = tape.backward(&loss).unwrap();
    assert!(vars.iter().all(|v| grads.get(v).iter().all(|g| g.is_finite())));
}

#[test]
fn model_gradcheck_end_to_end() {
    let mut r = rng::stream(91, "init");
    let mut cfg = small_config(1, Some(1.0));
    cfg.phi.hidden = vec![];
    let model = BunnModel::new(cfg, &mut r).unwrap();
    // perturb φ weights so bundle gradients are exercised
    for a in model.store.arrays.iter() {
        assert!(a.iter().all(|v| v.is_finite()));
    }
    let mut store = model.store.clone();
    let widx = store.arrays.len() - 5; // φ dense weight of the single layer
    store.arrays[widx] = random(3, 2, 92) * 0.3;
    let g = random_graph(4, 93);
    let ops = model.prepare(&g).unwrap();
    let pe0 = random(4, 3, 94);
    let x0 = random(4, 2, 95);
    let target = random(4, 2, 96);
    let inputs = store.arrays.clone();
    let reports = check_gradients(&inputs, FD_STEP, &|t, v| {
        let pe = t.constant(pe0.clone());
        let x = t.constant(x0.clone());
        let y = model.forward(v, &g, &ops, &pe, &x)?;
        y.mse_loss(&target)
    })
    .unwrap();
    for (i, rep) in reports.iter().enumerate() {
        assert!(rep.max_rel_diff < 1e-4, "param {i}: {rep:?}");
    }
}

#[test]
fn model_is_permutation_equivariant() {
    let mut r = rng::stream(97, "init");
    let mut cfg = small_config(2, Some(1.5));
    cfg.phi.kind = PhiKind::SumGnn;
    let model = BunnModel::new(cfg, &mut r).unwrap();
    // give φ nonzero output weights so bundles are nontrivial
    let mut model = model;
    let plen = model.store.arrays.len();
    for idx in 0..plen {
        if model.store.arrays[idx].iter().all(|&v| v == 0.0) {
            let (rr, cc) = (model.store.arrays[idx].nrows(), model.store.arrays[idx].ncols());
            model.store.arrays[idx] = random(rr, cc, 98 + idx as u64) * 0.3;
        }
    }
    let n = 6;
    let g = random_graph(n, 99);
    let perm: Vec<usize> = vec![3, 0, 5, 1, 4, 2];
    let edges_p: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .map(|&(u, v)| (perm[u], perm[v]))
        .collect();
    let gp = Rc::new(Graph::build(n, &edges_p).unwrap());

    let pe0 = random(n, 3, 100);
    let x0 = random(n, 2, 101);
    let mut pe_p = Array2::zeros((n, 3));
    let mut x_p = Array2::zeros((n, 2));
    for v in 0..n {
        pe_p.row_mut(perm[v]).assign(&pe0.row(v));
        x_p.row_mut(perm[v]).assign(&x0.row(v));
    }

    let ops = model.prepare(&g).unwrap();
    let tape = Tape::new();
    let vars = model.store.leaf_all(&tape);
    let y = model
        .forward(&vars, &g, &ops, &tape.constant(pe0), &tape.constant(x0))
        .unwrap()
        .value();

    let ops_p = model.prepare(&gp).unwrap();
    let tape2 = Tape::new();
    let vars2 = model.store.leaf_all(&tape2);
    let yp = model
        .forward(&vars2, &gp, &ops_p, &tape2.constant(pe_p), &tape2.constant(x_p))
        .unwrap()
        .value();

    for v in 0..n {
        for j in 0..2 {
            assert!(
                (y[[v, j]] - yp[[perm[v], j]]).abs() < 1e-10,
                "node {v} channel {j}"
            );
        }
    }
}

#[test]
fn json_round_trip_is_bit_identical() {
    let mut r = rng::stream(102, "init");
    let model = BunnModel::new(small_config(2, None), &mut r).unwrap();
    let text = model.to_json().unwrap();
    let back = BunnModel::from_json(&text).unwrap();
    for (a, b) in model.store.arrays.iter().zip(back.store.arrays.iter()) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    assert_eq!(text, back.to_json().unwrap());
}

#[test]
fn receptive_field_mask_first_output_channel_is_inert() {
    // with W second row zero and a swap map at v, channel 1 of y_v has an
    // all-zero Jacobian row: e₀ᵀ·swap·W = (second row of W) = 0, and right
    // multiplication by any transport keeps it zero
    let g = complete_graph(4);
    let (u, v) = (1, 0);
    let (maps, w) = receptive_field_params(4, u, v, 0.5, 1.0);
    let x0 = random(4, 2, 103);
    let grad = layer_jacobian_row(&g, &maps, &w, 1.0, v, 0, &x0);
    for node in 0..4 {
        for j in 0..2 {
            assert!(grad[[node, j]].abs() < 1e-10, "node {node} channel {j}");
        }
    }
    assert!(grad.iter().all(|e| e.abs() < 1e-10));
    let _ = u;
}

#[test]
fn receptive_field_mask_blinds_v_to_distractor_channel() {
    // w11 = 0: node v ignores the first input channel of every distractor
    // while reading u's first channel with weight H(t,v,u)·w12
    let g = complete_graph(4);
    let (u, v) = (1, 0);
    let w12 = 1.0;
    let (maps, w) = receptive_field_params(4, u, v, 0.0, w12);
    let x0 = random(4, 2, 104);
    let t = 1.0;
    let kernel = heat_kernel_dense(&g, t).unwrap();
    // assemble ∂y_v/∂x_(·) columns from the two output-channel rows
    let grad0 = layer_jacobian_row(&g, &maps, &w, t, v, 0, &x0);
    let grad1 = layer_jacobian_row(&g, &maps, &w, t, v, 1, &x0);
    for w_i in 0..4 {
        if w_i == u || w_i == v {
            continue;
        }
        // ∂y_v/∂x_{w_i}^{(1)} = 0: blind to their first channel
        assert!(grad0[[w_i, 0]].abs() < 1e-10, "distractor {w_i}");
        assert!(grad1[[w_i, 0]].abs() < 1e-10, "distractor {w_i}");
    }
    // ∂y_v/∂x_u^{(1)} = H(t,v,u)·(0, w12)ᵀ
    assert_abs_diff_eq!(grad0[[u, 0]], 0.0, epsilon = 1e-10);
    assert_abs_diff_eq!(grad1[[u, 0]], kernel[[v, u]] * w12, epsilon = 1e-10);
    assert!(grad1[[u, 0]].abs() > 1e-6);

    // contrast 1: with identity transports, the same weight matrix makes v
    // blind to u's first channel as well — the swap maps are what keep u
    let id = identity_maps(4, 1, 2);
    let gu0 = layer_jacobian_row(&g, &id, &w, t, v, 0, &x0);
    let gu1 = layer_jacobian_row(&g, &id, &w, t, v, 1, &x0);
    assert!(gu0[[u, 0]].abs() < 1e-10);
    assert!(gu1[[u, 0]].abs() < 1e-10);

    // contrast 2: identity transports with a generic first row leave v
    // sensitive to the distractors' first channel (H·W ≠ 0)
    let (_, w_generic) = receptive_field_params(4, u, v, 0.5, 1.0);
    let g0 = layer_jacobian_row(&g, &id, &w_generic, t, v, 0, &x0);
    let distractor = (0..4).find(|&n| n != u && n != v).unwrap();
    assert!(
        g0[[distractor, 0]].abs() > 1e-6,
        "identity transports must not mask the distractor"
    );
}

#[test]
fn universal_identity_on_path() {
    let g = Rc::new(Graph::build(2, &[(0, 1)]).unwrap());
    let target = Array2::eye(2); // identity on 2 nodes × c=1
    let params = UniversalLinearParams::build(&[g], &[target], 1, 1.0).unwrap();
    for seed in 0..5 {
        let x = random(2, 1, 200 + seed);
        let y = params.apply(0, &x).unwrap();
        assert!(max_abs_diff(&y, &x) < 1e-8, "seed {seed}");
    }
}

#[test]
fn universal_random_linear_map_on_path3() {
    let g = Rc::new(Graph::build(3, &[(0, 1), (1, 2)]).unwrap());
    let c = 2;
    let target = random(6, 6, 210);
    let params = UniversalLinearParams::build(&[g], &[target.clone()], c, 1.0).unwrap();
    for seed in 0..100u64 {
        let x = random(3, c, 220 + seed);
        let y = params.apply(0, &x).unwrap();
        // expected: node-major flattened target product
        let flat: Vec<f64> = x.iter().cloned().collect();
        let expect = target.dot(&ndarray::Array1::from_vec(flat));
        for u in 0..3 {
            for j in 0..c {
                assert!(
                    (y[[u, j]] - expect[u * c + j]).abs() < 1e-6,
                    "seed {seed} node {u}"
                );
            }
        }
    }
}

#[test]
fn universal_family_with_two_targets() {
    let p2 = Rc::new(Graph::build(2, &[(0, 1)]).unwrap());
    let k3 = complete_graph(3);
    let t_p2 = random(2, 2, 230);
    let t_k3 = random(3, 3, 231);
    let params =
        UniversalLinearParams::build(&[p2, k3], &[t_p2.clone(), t_k3.clone()], 1, 1.0).unwrap();
    for (gi, tgt, n) in [(0usize, &t_p2, 2usize), (1, &t_k3, 3)] {
        for seed in 0..10u64 {
            let x = random(n, 1, 240 + seed);
            let y = params.apply(gi, &x).unwrap();
            let flat: Vec<f64> = x.iter().cloned().collect();
            let expect = tgt.dot(&ndarray::Array1::from_vec(flat));
            for u in 0..n {
                assert!(
                    (y[[u, 0]] - expect[u]).abs() < 1e-6,
                    "graph {gi} seed {seed}"
                );
            }
        }
    }
}
