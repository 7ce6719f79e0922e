use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn store_with(entries: &[(&str, Vec<usize>, Vec<f64>)]) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (name, shape, data) in entries {
        s.add(*name, Tensor::new(shape.clone(), data.clone()).unwrap());
    }
    s
}

#[test]
fn sigmoid_of_zero_is_half() {
    let s = ParamStore::<f64>::new();
    let mut g = Graph::new(&s);
    let x = g.vector(vec![0.0]);
    let y = g.sigmoid(x);
    assert_eq!(g.scalar(y), 0.5);
}

#[test]
fn identity_matvec() {
    let s = store_with(&[("eye", vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.])]);
    let mut g = Graph::new(&s);
    let m = g.param(ParamId(0));
    let v = g.vector(vec![0.3, -2.0, 7.5]);
    let y = g.matvec(m, v).unwrap();
    assert_eq!(g.value(y).data(), &[0.3, -2.0, 7.5]);
}

#[test]
fn shape_mismatch_names_node() {
    let s = store_with(&[("w", vec![2, 3], vec![0.0; 6])]);
    let mut g = Graph::new(&s);
    let m = g.param(ParamId(0));
    let v = g.vector(vec![1.0, 2.0]);
    match g.matvec(m, v) {
        Err(NumericsError::ShapeMismatch { node, .. }) => assert!(node.contains("matvec")),
        other => panic!("unexpected {other:?}", other = other.map(|_| ())),
    }
}

fn random_mlp(rng: &mut ChaCha8Rng) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.add_xavier("w1", 4, 3, rng);
    s.add_uniform("b1", vec![4], 0.5, rng);
    s.add_xavier("w2", 1, 4, rng);
    s.add_uniform("b2", vec![1], 0.5, rng);
    s
}

fn mlp_graph(s: &ParamStore<f64>, x: &[f64]) -> f64 {
    let mut g = Graph::new(s);
    let xi = g.vector(x.to_vec());
    let h = g.affine(ParamId(0), xi, ParamId(1)).unwrap();
    let h = g.tanh(h);
    let o = g.affine(ParamId(2), h, ParamId(3)).unwrap();
    let o = g.sigmoid(o);
    g.scalar(o)
}

// Straight-line recomputation, no graph machinery.
fn mlp_direct(s: &ParamStore<f64>, x: &[f64]) -> f64 {
    let w1 = s.get(ParamId(0)).data();
    let b1 = s.get(ParamId(1)).data();
    let w2 = s.get(ParamId(2)).data();
    let b2 = s.get(ParamId(3)).data()[0];
    let mut out = b2;
    for r in 0..4 {
        let mut acc = b1[r];
        for c in 0..3 {
            acc += w1[r * 3 + c] * x[c];
        }
        out += w2[r] * acc.tanh();
    }
    1.0 / (1.0 + (-out).exp())
}

#[test]
fn mlp_forward_matches_straight_line() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let s = random_mlp(&mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = mlp_graph(&s, &x);
        let b = mlp_direct(&s, &x);
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}

#[test]
fn sum_gradient_is_ones() {
    let s = store_with(&[("w", vec![5], vec![0.1, 0.2, -3.0, 4.0, 0.0])]);
    let mut g = Graph::new(&s);
    let w = g.param(ParamId(0));
    let l = g.sum(w);
    let mut grads = Gradients::zeros_like(&s);
    g.backward(l, &mut grads).unwrap();
    assert_eq!(grads.get(ParamId(0)).data(), &[1.0; 5]);
}

#[test]
fn sigmoid_gradient_at_zero() {
    let s = store_with(&[("x", vec![1], vec![0.0])]);
    let mut g = Graph::new(&s);
    let x = g.param(ParamId(0));
    let y = g.sigmoid(x);
    let mut grads = Gradients::zeros_like(&s);
    g.backward(y, &mut grads).unwrap();
    assert_eq!(grads.get(ParamId(0)).data(), &[0.25]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let s = store_with(&[("w", vec![2], vec![1.0, 2.0])]);
    let mut g = Graph::new(&s);
    let w = g.param(ParamId(0));
    let mut grads = Gradients::zeros_like(&s);
    assert!(matches!(
        g.backward(w, &mut grads),
        Err(NumericsError::NonScalarLoss(_))
    ));
}

/// Exercises every op on one graph.
fn kitchen_sink_loss(s: &ParamStore<f64>, grads: Option<&mut Gradients<f64>>) -> f64 {
    let mut g = Graph::new(s);
    let e0 = g.row(ParamId(4), 1).unwrap();
    let e1 = g.row(ParamId(4), 2).unwrap();
    let x = g.mean(&[e0, e1]).unwrap();
    let h = g.affine(ParamId(0), x, ParamId(1)).unwrap();
    let h = g.tanh(h);
    let d = g.sub(h, x).unwrap();
    let p = g.mul(h, x).unwrap();
    let cat = g.concat(&[h, d, p]).unwrap();
    let cat = g.scale(cat, 0.7);
    let o = g.affine(ParamId(2), cat, ParamId(3)).unwrap();
    let f = g.sigmoid(o);
    let lf = g.log(f);
    let logits = g.add(h, x).unwrap();
    let bce = g.bce_with_logits(logits, vec![1.0, 0.0, 1.0]).unwrap();
    let sum = g.sum(lf);
    let neg = g.scale(sum, -1.0);
    let two = g.concat(&[neg, bce]).unwrap();
    let loss = g.sum(two);
    let v = g.scalar(loss);
    if let Some(grads) = grads {
        g.backward(loss, grads).unwrap();
    }
    v
}

#[test]
fn kitchen_sink_matches_finite_differences() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        s.add_xavier("w1", 3, 3, &mut rng);
        s.add_uniform("b1", vec![3], 0.5, &mut rng);
        s.add_xavier("w2", 2, 9, &mut rng);
        s.add_uniform("b2", vec![2], 0.5, &mut rng);
        s.add_uniform("emb", vec![4, 3], 1.0, &mut rng);
        let mut grads = Gradients::zeros_like(&s);
        kitchen_sink_loss(&s, Some(&mut grads));
        let report = check_gradients(&mut s, &grads, 100, 1e-5, &mut rng, |p| {
            kitchen_sink_loss(p, None)
        });
        assert!(report.max_relative_error < 1e-6, "{report:?}");
        // rows 0 and 3 are never gathered
        assert!(grads.get(ParamId(4)).row(0).iter().all(|v| *v == 0.0));
    }
}

#[test]
fn dropout_rate_and_scaling() {
    let s = ParamStore::<f64>::new();
    let mut g = Graph::new(&s);
    let x = g.vector(vec![1.0; 20_000]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y = g.dropout(x, 0.2, &mut rng);
    let vals = g.value(y).data();
    let zeros = vals.iter().filter(|v| **v == 0.0).count() as f64 / vals.len() as f64;
    assert!((zeros - 0.2).abs() < 0.01, "{zeros}");
    assert!(vals.iter().all(|v| *v == 0.0 || (*v - 1.25).abs() < 1e-12));
    let same = g.dropout(x, 0.0, &mut rng);
    assert_eq!(same, x);
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut s = store_with(&[("w", vec![3], vec![0.5, -1.0, 2.0])]);
    let before = s.clone();
    let mut adam = AdamState::new(&s, 1e-3);
    let mut grads = Gradients::zeros_like(&s);
    adam.step(&mut s, &mut grads).unwrap();
    assert_eq!(s, before);
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn adam_first_step_is_signed_learning_rate() {
    let mut s = store_with(&[("w", vec![3], vec![0.5, -1.0, 2.0])]);
    let before = s.get(ParamId(0)).data().to_vec();
    let mut adam = AdamState::new(&s, 1e-3).without_clipping();
    let mut grads = Gradients::zeros_like(&s);
    grads
        .get_mut(ParamId(0))
        .data_mut()
        .copy_from_slice(&[0.3, -4.0, 1e-2]);
    adam.step(&mut s, &mut grads).unwrap();
    let after = s.get(ParamId(0)).data();
    for ((a, b), sign) in after.iter().zip(&before).zip([-1.0, 1.0, -1.0]) {
        assert!((a - b - sign * 1e-3).abs() < 1e-8, "{a} {b}");
    }
}

#[test]
fn adam_descends_quadratic() {
    let mut s = store_with(&[("w", vec![1], vec![1.0])]);
    let mut adam = AdamState::new(&s, 1e-2);
    let mut prev = 1.0;
    for _ in 0..10 {
        let w = s.get(ParamId(0)).data()[0];
        let mut grads = Gradients::zeros_like(&s);
        grads.get_mut(ParamId(0)).data_mut()[0] = 2.0 * w;
        adam.step(&mut s, &mut grads).unwrap();
        let w = s.get(ParamId(0)).data()[0];
        assert!(w * w < prev);
        prev = w * w;
    }
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let mut s = store_with(&[("a", vec![1], vec![1.0]), ("b", vec![1], vec![1.0])]);
    let before = s.clone();
    let mut adam = AdamState::new(&s, 1e-3);
    let mut grads = Gradients::zeros_like(&s);
    grads.get_mut(ParamId(1)).data_mut()[0] = f64::NAN;
    match adam.step(&mut s, &mut grads) {
        Err(NumericsError::NonFiniteGradient(name)) => assert_eq!(name, "b"),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(s, before);
    assert_eq!(adam.step_count(), 0);
}

#[test]
fn adam_clips_global_norm() {
    let mut s = store_with(&[("w", vec![2], vec![0.0, 0.0])]);
    let mut adam = AdamState::new(&s, 1e-3);
    let mut grads = Gradients::zeros_like(&s);
    grads.get_mut(ParamId(0)).data_mut().copy_from_slice(&[30.0, 40.0]);
    adam.step(&mut s, &mut grads).unwrap();
    assert!((grads.global_norm() - 5.0).abs() < 1e-12);
}

#[test]
fn sgd_steps_against_the_clipped_gradient() {
    let mut s = store_with(&[("w", vec![2], vec![1.0, -1.0])]);
    let mut grads = Gradients::zeros_like(&s);
    grads.get_mut(ParamId(0)).data_mut().copy_from_slice(&[0.5, -2.0]);
    sgd_step(&mut s, &mut grads, 0.1, Some(5.0)).unwrap();
    assert_eq!(s.get(ParamId(0)).data(), &[1.0 - 0.05, -1.0 + 0.2]);
    grads.get_mut(ParamId(0)).data_mut().copy_from_slice(&[30.0, 40.0]);
    sgd_step(&mut s, &mut grads, 1.0, Some(5.0)).unwrap();
    assert!((s.get(ParamId(0)).data()[0] - (0.95 - 3.0)).abs() < 1e-12);
    let before = s.clone();
    grads.get_mut(ParamId(0)).data_mut()[1] = f64::INFINITY;
    assert!(matches!(sgd_step(&mut s, &mut grads, 1.0, None), Err(NumericsError::NonFiniteGradient(_))));
    assert_eq!(s, before);
}

#[test]
fn seeded_training_is_bitwise_reproducible() {
    let run = || {
        let tree = SeedTree::new(11);
        let mut rng = tree.stream("init");
        let mut s = random_mlp(&mut rng);
        let mut adam = AdamState::new(&s, 1e-2);
        let mut data = tree.stream("data");
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| data.gen_range(-1.0..1.0)).collect();
            let mut g = Graph::new(&s);
            let xi = g.vector(x);
            let h = g.affine(ParamId(0), xi, ParamId(1)).unwrap();
            let h = g.tanh(h);
            let o = g.affine(ParamId(2), h, ParamId(3)).unwrap();
            let l = g.bce_with_logits(o, vec![1.0]).unwrap();
            let mut grads = Gradients::zeros_like(&s);
            g.backward(l, &mut grads).unwrap();
            drop(g);
            adam.step(&mut s, &mut grads).unwrap();
        }
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, 11, serde_json::Value::Null, &s).unwrap();
        bytes
    };
    assert_eq!(run(), run());
}

#[test]
fn named_streams_are_independent_and_stable() {
    let t = SeedTree::new(5);
    let a: Vec<u64> = (0..4).map({
        let mut r = t.stream("bag-sampling");
        move |_| r.gen()
    }).collect();
    let b: Vec<u64> = (0..4).map({
        let mut r = t.stream("bag-sampling");
        move |_| r.gen()
    }).collect();
    let c: Vec<u64> = (0..4).map({
        let mut r = t.stream("dropout");
        move |_| r.gen()
    }).collect();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_ne!(t.child("epoch-1"), t.child("epoch-2"));
    assert_eq!(t.child("epoch-1"), SeedTree::new(5).child("epoch-1"));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = random_mlp(&mut rng);
    let meta = serde_json::json!({"kind": "mlp", "dims": [3, 4, 1]});
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, 42, meta.clone(), &s).unwrap();
    let (header, back) = read_checkpoint::<f64, _>(bytes.as_slice()).unwrap();
    assert_eq!(back, s);
    assert_eq!(header.seed, 42);
    assert_eq!(header.meta, meta);
    assert_eq!(header.params[0].shape, vec![4, 3]);
    let mut again = Vec::new();
    write_checkpoint(&mut again, 42, meta, &back).unwrap();
    assert_eq!(bytes, again);
}

#[test]
fn checkpoint_rejects_garbage() {
    assert!(read_checkpoint::<f64, _>(&b"NOTACKPT\0\0\0\0\0\0\0\0"[..]).is_err());
    let s = store_with(&[("w", vec![1], vec![1.0])]);
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, 0, serde_json::Value::Null, &s).unwrap();
    bytes.push(0);
    assert!(read_checkpoint::<f64, _>(bytes.as_slice()).is_err());
}

#[test]
fn single_precision_graph() {
    let mut s = ParamStore::<f32>::new();
    s.add("w", Tensor::vector(vec![0.0f32, 1.0]));
    let mut g = Graph::new(&s);
    let w = g.param(ParamId(0));
    let y = g.sigmoid(w);
    let l = g.sum(y);
    let mut grads = Gradients::zeros_like(&s);
    g.backward(l, &mut grads).unwrap();
    assert_eq!(grads.get(ParamId(0)).data()[0], 0.25f32);
}
