use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect(),
    )
    .unwrap()
}

/// Compares reverse-mode gradients of `build` against central differences
/// for every input tensor.
fn grad_check(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut store = ParameterStore::new();
    let ids: Vec<ParamId> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("p{i}"), t.clone()))
        .collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = ids.iter().map(|&id| tape.param(&store, id)).collect();
    let root = build(&mut tape, &vars);
    let grads = tape.backward(root).unwrap().params(&store);
    let mut worst: f64 = 0.0;
    for (i, &id) in ids.iter().enumerate() {
        let numeric = finite_difference(&inputs[i], 1e-5, |probe| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, t)| tape.constant(if j == i { probe.clone() } else { t.clone() }))
                .collect();
            let root = build(&mut tape, &vars);
            tape.value(root).item()
        });
        let analytic = grads.get(id).unwrap();
        worst = worst.max(max_relative_error(analytic.data(), numeric.data(), 1e-6));
    }
    worst
}

#[test]
fn sigmoid_and_leaky_relu_values() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::row(vec![0.0, -1.0]));
    let s = tape.sigmoid(x);
    assert_eq!(tape.value(s).data()[0], 0.5);
    let l = tape.leaky_relu(x, 0.01);
    assert_eq!(tape.value(l).data()[1], -0.01);
}

#[test]
fn softmax_of_equal_inputs_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::column(vec![2.0; 4]));
    let p = tape.softmax(x).unwrap();
    assert!(tape
        .value(p)
        .data()
        .iter()
        .all(|&v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn softmax_is_a_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let n = rng.gen_range(1..10);
        let t = random(&mut rng, n, 1).map(|x| 30.0 * x);
        let mut tape = Tape::new();
        let x = tape.constant(t);
        let p = tape.softmax(x).unwrap();
        let v = tape.value(p).data();
        assert!(v.iter().all(|&y| y >= 0.0));
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn sigmoid_derivative_at_zero() {
    let mut store = ParameterStore::new();
    let id = store.add("x", Tensor::scalar(0.0));
    let mut tape = Tape::new();
    let x = tape.param(&store, id);
    let y = tape.sigmoid(x);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.wrt(x).unwrap().item(), 0.25);
}

#[test]
fn sum_of_softmax_has_zero_gradient() {
    let mut store = ParameterStore::new();
    let id = store.add("x", Tensor::column(vec![0.3, -1.2, 2.0]));
    let mut tape = Tape::new();
    let x = tape.param(&store, id);
    let p = tape.softmax(x).unwrap();
    let s = tape.sum(p);
    let g = tape.backward(s).unwrap();
    assert!(g.wrt(x).unwrap().data().iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn backward_requires_scalar_root() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(2, 1));
    assert!(matches!(
        tape.backward(x),
        Err(DiffError::NonScalarRoot { rows: 2, cols: 1 })
    ));
}

#[test]
fn shape_errors_are_descriptive() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(2, 3));
    let b = tape.constant(Tensor::zeros(2, 3));
    let err = tape.matmul(a, b).unwrap_err();
    assert!(err.to_string().contains("matmul"), "{err}");
    let c = tape.constant(Tensor::zeros(3, 2));
    assert!(tape.add(a, c).is_err());
    assert!(tape.gather_rows(a, vec![5].into()).is_err());
    assert!(tape.segment_sum(a, vec![0, 3].into(), 2).is_err());
}

#[test]
fn detach_blocks_gradient() {
    let mut store = ParameterStore::new();
    let id = store.add("x", Tensor::scalar(2.0));
    let mut tape = Tape::new();
    let x = tape.param(&store, id);
    let d = tape.detach(x);
    let y = tape.mul(x, d).unwrap();
    let g = tape.backward(y).unwrap();
    // d(x * const)/dx = const
    assert_eq!(g.wrt(x).unwrap().item(), 2.0);
    assert!(g.wrt(d).is_none());
}

#[test]
fn min_select_routes_to_argmin() {
    let mut store = ParameterStore::new();
    let id = store.add("x", Tensor::column(vec![3.0, 1.0, 2.0, 5.0, 4.0]));
    let mut tape = Tape::new();
    let x = tape.param(&store, id);
    let m = tape.segment_min(x, &[0, 0, 0, 1, 1], 2).unwrap();
    assert_eq!(tape.value(m).data(), &[1.0, 4.0]);
    let s = tape.sum(m);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0, 1.0]);
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&mut rng, 3, 4);
    let b = random(&mut rng, 3, 4);
    let err = grad_check(&[a, b], |t, v| {
        let s = t.add(v[0], v[1]).unwrap();
        let d = t.sub(s, v[1]).unwrap();
        let m = t.mul(d, v[1]).unwrap();
        let e = t.exp(m);
        let sg = t.sigmoid(e);
        let th = t.tanh(v[0]);
        let lr = t.leaky_relu(th, 0.1);
        let sc = t.scale(lr, 1.7);
        let sh = t.add_scalar(sc, 0.3);
        let om = t.one_minus(sh);
        let prod = t.mul(om, sg).unwrap();
        t.mean(prod)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn structural_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random(&mut rng, 4, 3);
    let b = random(&mut rng, 3, 2);
    let c = random(&mut rng, 4, 2);
    let err = grad_check(&[a, b, c], |t, v| {
        let ab = t.matmul(v[0], v[1]).unwrap();
        let cat = t.concat_cols(ab, v[2]).unwrap();
        let rows = t.concat_rows(cat, cat).unwrap();
        let g = t.gather_rows(rows, Arc::from(vec![0, 7, 3, 3, 5])).unwrap();
        let gc = t.gather_cols(g, Arc::from(vec![3, 0, 0, 2])).unwrap();
        let seg = t
            .segment_sum(gc, Arc::from(vec![1, 0, 1, 2, 0]), 3)
            .unwrap();
        let sm = t.segment_softmax(seg, Arc::from(vec![0, 0, 1]), 2).unwrap();
        let wide = t.reshape(seg, 2, 6).unwrap();
        let mins = t.segment_min(wide, &[0, 0], 1).unwrap();
        let s1 = t.sum(sm);
        let prod = t.mul(sm, seg).unwrap();
        let s2 = t.sum(prod);
        let s3 = t.sum(mins);
        let s = t.add(s1, s2).unwrap();
        t.add(s, s3).unwrap()
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn random_three_layer_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..5 {
        let n = rng.gen_range(2..6);
        let d = rng.gen_range(2..5);
        let x = random(&mut rng, n, d);
        let w1 = random(&mut rng, d, 5);
        let w2 = random(&mut rng, 5, 4);
        let w3 = random(&mut rng, 4, 1);
        let err = grad_check(&[x, w1, w2, w3], |t, v| {
            let h1 = t.matmul(v[0], v[1]).unwrap();
            let a1 = t.tanh(h1);
            let h2 = t.matmul(a1, v[2]).unwrap();
            let a2 = t.leaky_relu(h2, 0.01);
            let h3 = t.matmul(a2, v[3]).unwrap();
            let p = t.softmax(h3).unwrap();
            let q = t.mul(p, h3).unwrap();
            t.sum(q)
        });
        assert!(err < 1e-4, "trial {trial}: {err}");
    }
}

fn gru_store(input: usize, hidden: usize, seed: u64) -> (ParameterStore, GruParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    let p = GruParams::new(&mut store, "gru", input, hidden, &mut rng);
    (store, p)
}

#[test]
fn gru_at_zero_parameters() {
    let (mut store, p) = gru_store(3, 4, 0);
    store.zero_all();
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape, &store);
    let h = tape.constant(Tensor::zeros(2, 4));
    let x = tape.constant(Tensor::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
    let out = gru_cell(&mut tape, &vars, h, x).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn gru_closed_update_gate_keeps_state() {
    let (mut store, p) = gru_store(2, 3, 1);
    store
        .value_mut(p.b_z)
        .data_mut()
        .iter_mut()
        .for_each(|b| *b = -50.0);
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape, &store);
    let h0 = Tensor::from_vec(1, 3, vec![0.3, -0.7, 0.9]).unwrap();
    let h = tape.constant(h0.clone());
    let x = tape.constant(Tensor::from_vec(1, 2, vec![0.2, -0.4]).unwrap());
    let out = gru_cell(&mut tape, &vars, h, x).unwrap();
    for (a, b) in tape.value(out).data().iter().zip(h0.data()) {
        assert!((a - b).abs() <= 1e-3);
    }
}

#[test]
fn gru_gradient_check() {
    let (store, p) = gru_store(3, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = random(&mut rng, 4, 2);
    let x = random(&mut rng, 4, 3);
    let mut inputs: Vec<Tensor> = p.ids().iter().map(|&id| store.value(id).clone()).collect();
    inputs.push(h);
    inputs.push(x);
    let err = grad_check(&inputs, |t, v| {
        let vars = GruVars {
            w_z: v[0],
            u_z: v[1],
            b_z: v[2],
            w_r: v[3],
            u_r: v[4],
            b_r: v[5],
            w_h: v[6],
            u_h: v[7],
            b_h: v[8],
        };
        let h1 = gru_cell(t, &vars, v[9], v[10]).unwrap();
        let h2 = gru_cell(t, &vars, h1, v[10]).unwrap();
        let sq = t.mul(h2, h2).unwrap();
        t.sum(sq)
    });
    assert!(err < 1e-4, "{err}");
}

fn gat_cfg(concat: bool) -> GatConfig {
    GatConfig {
        heads: 2,
        channels: 3,
        concat,
        score_slope: 0.2,
        output_slope: 0.01,
    }
}

#[test]
fn gat_single_node_self_loop() {
    let cfg = gat_cfg(true);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParameterStore::new();
    let p = GatParams::new(&mut store, "gat", 2, &cfg, &mut rng);
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape, &store);
    let e = Tensor::from_vec(1, 2, vec![0.4, -1.1]).unwrap();
    let x = tape.constant(e.clone());
    let adj = Adjacency::with_self_loops(1, &[]);
    let out = gat_layer(&mut tape, &vars, &cfg, x, &adj).unwrap();
    assert_eq!(tape.value(out.attention).data(), &[1.0, 1.0]);
    let we = e.matmul(store.value(p.w));
    let expected = we.map(|v| if v > 0.0 { v } else { 0.01 * v });
    for (a, b) in tape.value(out.features).data().iter().zip(expected.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn gat_equal_scores_split_evenly() {
    let cfg = gat_cfg(false);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParameterStore::new();
    let p = GatParams::new(&mut store, "gat", 2, &cfg, &mut rng);
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape, &store);
    // node 0 has in-neighbors 1 and 2 with identical features, plus its self-loop
    let x = tape.constant(Tensor::from_vec(3, 2, vec![0.5, 0.5, 1.0, -1.0, 1.0, -1.0]).unwrap());
    let adj = Adjacency {
        num_nodes: 3,
        src: vec![1, 2, 1, 2].into(),
        dst: vec![0, 0, 1, 2].into(),
    };
    let out = gat_layer(&mut tape, &vars, &cfg, x, &adj).unwrap();
    let att = tape.value(out.attention);
    for h in 0..2 {
        assert!((att.get(0, h) - 0.5).abs() < 1e-15);
        assert!((att.get(1, h) - 0.5).abs() < 1e-15);
    }
    assert_eq!(tape.value(out.features).shape(), (3, 3));
}

#[test]
fn gat_attention_normalized_and_differentiable() {
    let cfg = gat_cfg(true);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParameterStore::new();
    let p = GatParams::new(&mut store, "gat", 3, &cfg, &mut rng);
    let x0 = random(&mut rng, 5, 3);
    let adj = Adjacency::with_self_loops(5, &[(0, 1), (2, 1), (3, 4), (4, 0), (1, 3)]);
    {
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, &store);
        let x = tape.constant(x0.clone());
        let out = gat_layer(&mut tape, &vars, &cfg, x, &adj).unwrap();
        let att = tape.value(out.attention);
        for node in 0..5 {
            for h in 0..2 {
                let total: f64 = (0..adj.num_edges())
                    .filter(|&k| adj.dst[k] == node)
                    .map(|k| att.get(k, h))
                    .sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
    let inputs = vec![
        store.value(p.w).clone(),
        store.value(p.att_src).clone(),
        store.value(p.att_dst).clone(),
        x0,
    ];
    for concat in [true, false] {
        let cfg = gat_cfg(concat);
        let err = grad_check(&inputs, |t, v| {
            let vars = GatVars {
                w: v[0],
                att_src: v[1],
                att_dst: v[2],
            };
            let out = gat_layer(t, &vars, &cfg, v[3], &adj).unwrap();
            let sq = t.mul(out.features, out.features).unwrap();
            t.sum(sq)
        });
        assert!(err < 1e-4, "concat={concat}: {err}");
    }
}
