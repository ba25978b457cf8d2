//! Finite-difference verification of every differentiable op on randomized
//! small shapes: relative error < 1e-3 with an absolute floor of 1e-5, all
//! at 64-bit precision.

use dyadlab_core::seeding::rng_for;
use dyadlab_core::tensor::gradcheck::check_gradients_default;
use dyadlab_core::tensor::{Graph, NodeId, ParamStore, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Uniform values kept away from zero, for kinked ops like relu.
fn uniform_margin(shape: &[usize], rng: &mut ChaCha8Rng, margin: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(
        shape.to_vec(),
        (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(margin..1.0);
                if rng.random::<bool>() {
                    v
                } else {
                    -v
                }
            })
            .collect(),
    )
    .unwrap()
}

fn check(store: &mut ParamStore, forward: impl Fn(&mut Graph, &ParamStore) -> NodeId) {
    if let Err(f) = check_gradients_default(store, forward) {
        panic!(
            "gradient mismatch on `{}`[{}]: analytic {} vs numeric {} (rel {})",
            f.param, f.coord, f.analytic, f.numeric, f.rel_err
        );
    }
}

#[test]
fn matmul_gradients() {
    let mut rng = rng_for(101, &["gradcheck", "matmul"]);
    let mut store = ParamStore::new();
    let a = store.register("a", uniform(&[3, 4], &mut rng));
    let b = store.register("b", uniform(&[4, 5], &mut rng));
    check(&mut store, |g, s| {
        let a = g.param(s, a);
        let b = g.param(s, b);
        let y = g.matmul(a, b).unwrap();
        g.sum(y).unwrap()
    });
}

#[test]
fn bmm_gradients_both_layouts() {
    let mut rng = rng_for(102, &["gradcheck", "bmm"]);
    for transpose_b in [false, true] {
        let mut store = ParamStore::new();
        let a = store.register("a", uniform(&[2, 3, 4], &mut rng));
        let bshape = if transpose_b { [2, 5, 4] } else { [2, 4, 5] };
        let b = store.register("b", uniform(&bshape, &mut rng));
        check(&mut store, |g, s| {
            let a = g.param(s, a);
            let b = g.param(s, b);
            let y = g.bmm(a, b, transpose_b).unwrap();
            // square the output so gradients are input-dependent
            let y2 = g.mul(y, y).unwrap();
            g.mean(y2).unwrap()
        });
    }
}

#[test]
fn elementwise_gradients() {
    let mut rng = rng_for(103, &["gradcheck", "elementwise"]);
    let mut store = ParamStore::new();
    let a = store.register("a", uniform(&[4, 3], &mut rng));
    let b = store.register("b", uniform(&[4, 3], &mut rng));
    let bias = store.register("bias", uniform(&[3], &mut rng));
    check(&mut store, |g, s| {
        let a = g.param(s, a);
        let b = g.param(s, b);
        let bias = g.param(s, bias);
        let sum = g.add(a, b).unwrap();
        let prod = g.mul(sum, b).unwrap();
        let biased = g.add_bias(prod, bias).unwrap();
        let scaled = g.scale(biased, 0.7).unwrap();
        g.mean(scaled).unwrap()
    });
}

#[test]
fn relu_gradients_away_from_kink() {
    let mut rng = rng_for(104, &["gradcheck", "relu"]);
    let mut store = ParamStore::new();
    let a = store.register("a", uniform_margin(&[5, 4], &mut rng, 0.05));
    check(&mut store, |g, s| {
        let a = g.param(s, a);
        let y = g.relu(a).unwrap();
        g.sum(y).unwrap()
    });
}

#[test]
fn layer_norm_gradients() {
    let mut rng = rng_for(105, &["gradcheck", "ln"]);
    let mut store = ParamStore::new();
    let a = store.register("a", uniform(&[4, 6], &mut rng));
    let gain = store.register("gain", uniform_margin(&[6], &mut rng, 0.2));
    let bias = store.register("bias", uniform(&[6], &mut rng));
    check(&mut store, |g, s| {
        let a = g.param(s, a);
        let gain = g.param(s, gain);
        let bias = g.param(s, bias);
        let y = g.layer_norm(a, gain, bias).unwrap();
        let y2 = g.mul(y, y).unwrap();
        g.mean(y2).unwrap()
    });
}

#[test]
fn softmax_gradients() {
    let mut rng = rng_for(106, &["gradcheck", "softmax"]);
    let mut store = ParamStore::new();
    let a = store.register("a", uniform(&[3, 5], &mut rng));
    let weights = uniform(&[3, 5], &mut rng);
    check(&mut store, |g, s| {
        let a = g.param(s, a);
        let y = g.softmax_last(a).unwrap();
        let w = g.input(weights.clone());
        let weighted = g.mul(y, w).unwrap();
        g.sum(weighted).unwrap()
    });
}

#[test]
fn embedding_gradients() {
    let mut rng = rng_for(107, &["gradcheck", "embedding"]);
    let mut store = ParamStore::new();
    let table = store.register("table", uniform(&[7, 4], &mut rng));
    let indices = vec![0usize, 3, 3, 6, 1];
    check(&mut store, |g, s| {
        let t = g.param(s, table);
        let y = g.embedding(t, &indices).unwrap();
        let y2 = g.mul(y, y).unwrap();
        g.mean(y2).unwrap()
    });
}

#[test]
fn gather_rows_gradients() {
    let mut rng = rng_for(108, &["gradcheck", "gather"]);
    let mut store = ParamStore::new();
    let a = store.register("a", uniform(&[6, 3], &mut rng));
    let rows = vec![5usize, 0, 2, 2];
    check(&mut store, |g, s| {
        let a = g.param(s, a);
        let y = g.gather_rows(a, &rows).unwrap();
        let y2 = g.mul(y, y).unwrap();
        g.sum(y2).unwrap()
    });
}

#[test]
fn concat_and_permute_gradients() {
    let mut rng = rng_for(109, &["gradcheck", "concat"]);
    let mut store = ParamStore::new();
    let a = store.register("a", uniform(&[2, 3, 2], &mut rng));
    let b = store.register("b", uniform(&[2, 3, 4], &mut rng));
    check(&mut store, |g, s| {
        let a = g.param(s, a);
        let b = g.param(s, b);
        let cat = g.concat_last(a, b).unwrap();
        let p = g.permute(cat, &[2, 0, 1]).unwrap();
        let r = g.reshape(p, vec![6, 6]).unwrap();
        let sq = g.mul(r, r).unwrap();
        g.mean(sq).unwrap()
    });
}

#[test]
fn conv1d_gradients() {
    let mut rng = rng_for(110, &["gradcheck", "conv"]);
    for (t, stride, pad) in [(9usize, 2usize, 1usize), (8, 2, 1), (7, 1, 1), (10, 4, 0)] {
        let mut store = ParamStore::new();
        let x = store.register("x", uniform(&[2, t, 3], &mut rng));
        let w = store.register("w", uniform(&[4, 3, 2], &mut rng));
        let b = store.register("b", uniform(&[2], &mut rng));
        check(&mut store, |g, s| {
            let x = g.param(s, x);
            let w = g.param(s, w);
            let b = g.param(s, b);
            let y = g.conv1d(x, w, Some(b), stride, pad).unwrap();
            let y2 = g.mul(y, y).unwrap();
            g.mean(y2).unwrap()
        });
    }
}

#[test]
fn conv_transpose1d_gradients() {
    let mut rng = rng_for(111, &["gradcheck", "convt"]);
    for (t, stride, pad) in [(5usize, 2usize, 1usize), (4, 2, 1), (6, 1, 1)] {
        let mut store = ParamStore::new();
        let x = store.register("x", uniform(&[2, t, 2], &mut rng));
        let w = store.register("w", uniform(&[4, 2, 3], &mut rng));
        let b = store.register("b", uniform(&[3], &mut rng));
        check(&mut store, |g, s| {
            let x = g.param(s, x);
            let w = g.param(s, w);
            let b = g.param(s, b);
            let y = g.conv_transpose1d(x, w, Some(b), stride, pad).unwrap();
            let y2 = g.mul(y, y).unwrap();
            g.mean(y2).unwrap()
        });
    }
}

#[test]
fn cross_entropy_gradients() {
    let mut rng = rng_for(112, &["gradcheck", "ce"]);
    let mut store = ParamStore::new();
    let logits = store.register("logits", uniform(&[6, 9], &mut rng));
    let targets = vec![0usize, 4, 8, 2, 2, 7];
    check(&mut store, |g, s| {
        let l = g.param(s, logits);
        g.cross_entropy(l, &targets).unwrap()
    });
}

#[test]
fn mse_and_losses_gradients() {
    let mut rng = rng_for(113, &["gradcheck", "mse"]);
    let mut store = ParamStore::new();
    let a = store.register("a", uniform(&[3, 4], &mut rng));
    let target = uniform(&[3, 4], &mut rng);
    check(&mut store, |g, s| {
        let a = g.param(s, a);
        g.mse(a, target.clone()).unwrap()
    });
}

#[test]
fn straight_through_matches_identity_gradient() {
    // the estimator must hand the encoder exactly the gradient an identity
    // op would: compare against the same loss with no quantization
    let mut rng = rng_for(114, &["gradcheck", "st"]);
    let mut store = ParamStore::new();
    let z = store.register("z", uniform(&[4, 3], &mut rng));
    let quantized = uniform(&[4, 3], &mut rng);
    let weights = uniform(&[4, 3], &mut rng);

    let mut g1 = Graph::new();
    let z1 = g1.param(&store, z);
    let q1 = g1.straight_through(z1, quantized.clone()).unwrap();
    let w1 = g1.input(weights.clone());
    let p1 = g1.mul(q1, w1).unwrap();
    let loss1 = g1.sum(p1).unwrap();
    let back1 = g1.backward(loss1).unwrap();

    let mut g2 = Graph::new();
    let z2 = g2.param(&store, z);
    let w2 = g2.input(weights.clone());
    let p2 = g2.mul(z2, w2).unwrap();
    let loss2 = g2.sum(p2).unwrap();
    let back2 = g2.backward(loss2).unwrap();

    assert_eq!(
        back1.param_grads[0].1.data(),
        back2.param_grads[0].1.data(),
        "straight-through gradient must equal the pass-through gradient"
    );
}

#[test]
fn small_network_end_to_end_gradients() {
    // conv -> relu -> layer norm -> attention-like bmm -> softmax ->
    // cross-entropy, all in one graph
    let mut rng = rng_for(115, &["gradcheck", "net"]);
    let mut store = ParamStore::new();
    let x = store.register("x", uniform(&[1, 8, 3], &mut rng));
    let wc = store.register("wc", uniform(&[4, 3, 6], &mut rng));
    let gain = store.register("gain", uniform_margin(&[6], &mut rng, 0.2));
    let bias = store.register("bias", uniform(&[6], &mut rng));
    let wq = store.register("wq", uniform(&[6, 6], &mut rng));
    let wk = store.register("wk", uniform(&[6, 6], &mut rng));
    let head = store.register("head", uniform(&[6, 5], &mut rng));
    let targets = vec![1usize, 4, 0, 2];
    check(&mut store, |g, s| {
        let x = g.param(s, x);
        let wc = g.param(s, wc);
        let conv = g.conv1d(x, wc, None, 2, 1).unwrap(); // [1,4,6]
        let act = g.relu(conv).unwrap();
        let flat = g.reshape(act, vec![4, 6]).unwrap();
        let gain = g.param(s, gain);
        let bias = g.param(s, bias);
        let normed = g.layer_norm(flat, gain, bias).unwrap();
        let wq = g.param(s, wq);
        let wk = g.param(s, wk);
        let q = g.matmul(normed, wq).unwrap();
        let k = g.matmul(normed, wk).unwrap();
        let q3 = g.reshape(q, vec![1, 4, 6]).unwrap();
        let k3 = g.reshape(k, vec![1, 4, 6]).unwrap();
        let scores = g.bmm(q3, k3, true).unwrap();
        let scaled = g.scale(scores, 1.0 / (6f64).sqrt()).unwrap();
        let attn = g.softmax_last(scaled).unwrap();
        let v3 = g.reshape(normed, vec![1, 4, 6]).unwrap();
        let mixed = g.bmm(attn, v3, false).unwrap();
        let flat2 = g.reshape(mixed, vec![4, 6]).unwrap();
        let head = g.param(s, head);
        let logits = g.matmul(flat2, head).unwrap();
        g.cross_entropy(logits, &targets).unwrap()
    });
}
