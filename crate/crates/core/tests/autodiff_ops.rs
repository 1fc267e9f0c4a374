use ita_core::autodiff::{finite_difference_check, Graph, ParamStore, Segment, Var};
use ita_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    )
    .unwrap()
}

/// Scalarize any node with a fixed random linear functional.
fn project(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.input(random(&mut rng, &shape));
    let m = g.mul(x, r)?;
    Ok(g.sum_all(m))
}

fn store_with(entries: &[(&str, Tensor)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (n, t) in entries {
        s.add(*n, t.clone()).unwrap();
    }
    s
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = store_with(&[
        ("a", random(&mut rng, &[3, 4])),
        ("b", random(&mut rng, &[4, 2])),
    ]);
    let report = finite_difference_check(&mut store, 1e-6, |g| {
        let (a, b) = (g.param_named("a")?, g.param_named("b")?);
        let y = g.matmul(a, b)?;
        project(g, y, 7)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn smooth_unary_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for op in ["tanh", "sigmoid", "neg", "log", "softmax", "scale"] {
        let mut x = random(&mut rng, &[3, 5]);
        if op == "log" {
            x = x.map(|v| v.abs() + 0.1);
        }
        let mut store = store_with(&[("x", x)]);
        let report = finite_difference_check(&mut store, 1e-5, |g| {
            let x = g.param_named("x")?;
            let y = match op {
                "tanh" => g.tanh(x),
                "sigmoid" => g.sigmoid(x),
                "neg" => g.neg(x),
                "log" => g.log(x)?,
                "softmax" => g.softmax(x),
                _ => g.scale(x, -1.7),
            };
            project(g, y, 11)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{op}: {report:?}");
    }
}

#[test]
fn binary_and_structural_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = store_with(&[
        ("a", random(&mut rng, &[4, 3])),
        ("b", random(&mut rng, &[4, 3])),
        ("bias", random(&mut rng, &[3])),
        ("s", random(&mut rng, &[1])),
        ("table", random(&mut rng, &[5, 3])),
    ]);
    let report = finite_difference_check(&mut store, 1e-5, |g| {
        let (a, b, bias, s, table) = (
            g.param_named("a")?,
            g.param_named("b")?,
            g.param_named("bias")?,
            g.param_named("s")?,
            g.param_named("table")?,
        );
        let p = g.mul(a, b)?;
        let q = g.sub(p, a)?;
        let r = g.add_bias(q, bias)?;
        let r = g.mul(r, s)?;
        let e = g.gather(table, &[0, 3, 3, 1])?;
        let r = g.add(r, e)?;
        let c = g.concat_cols(&[r, a])?;
        let sl = g.slice_cols(c, 2, 3)?;
        let sel = g.select_rows(&[true, false, true, false], sl, b)?;
        let y = g.add_scalar(sel, 0.3);
        let y = g.one_minus(y);
        project(g, y, 5)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn relu_gradient_away_from_kinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, &[6, 4]).map(|v| if v.abs() < 0.05 { 0.5 } else { v });
    let mut store = store_with(&[("x", x)]);
    let report = finite_difference_check(&mut store, 1e-6, |g| {
        let x = g.param_named("x")?;
        let y = g.relu(x);
        project(g, y, 3)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn relu_examples() {
    let store = store_with(&[("x", Tensor::new(vec![2], vec![-3.0, 2.0]).unwrap())]);
    let mut g = Graph::new(&store);
    let x = g.param_named("x").unwrap();
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    let s = g.sigmoid(x);
    let z = g.input(Tensor::scalar(0.0));
    let sz = g.sigmoid(z);
    assert_eq!(g.value(sz).data(), &[0.5]);
    assert!(g.value(s).data()[1] > 0.5);
}

#[test]
fn log_of_non_positive_is_a_domain_error() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
    assert!(matches!(g.log(x), Err(ita_core::Error::Domain(_))));
}

#[test]
fn binary_ops_reject_shape_mismatch_but_allow_scalars() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[3, 2]));
    assert!(g.add(a, b).is_err());
    let s = g.input(Tensor::scalar(2.0));
    let y = g.mul(a, s).unwrap();
    assert_eq!(g.value(y).shape(), &[2, 3]);
}

#[test]
fn max_over_time_examples_and_routing() {
    let mut store = store_with(&[(
        "x",
        Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 2.0]]).unwrap(),
    )]);
    {
        let mut g = Graph::new(&store);
        let x = g.param_named("x").unwrap();
        let m = g.max_over_time(x, &[Segment { start: 0, len: 2 }]).unwrap();
        assert_eq!(g.value(m).data(), &[3.0, 5.0]);
        let one = g.max_over_time(x, &[Segment { start: 1, len: 1 }]).unwrap();
        assert_eq!(g.value(one).data(), &[3.0, 2.0]);
        let loss = g.sum_all(m);
        let grads = g.backward(loss).unwrap();
        let gx = grads.get(store.id("x").unwrap()).unwrap();
        assert_eq!(gx.data(), &[0.0, 1.0, 1.0, 0.0]);
    }
    // ties route to the lowest row
    store = store_with(&[("x", Tensor::from_rows(&[vec![2.0], vec![2.0]]).unwrap())]);
    let mut g = Graph::new(&store);
    let x = g.param_named("x").unwrap();
    let m = g.max_over_time(x, &[Segment { start: 0, len: 2 }]).unwrap();
    let loss = g.sum_all(m);
    let grads = g.backward(loss).unwrap();
    assert_eq!(
        grads.get(store.id("x").unwrap()).unwrap().data(),
        &[1.0, 0.0]
    );
}

#[test]
fn max_over_time_rejects_empty_axis() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(Tensor::zeros(&[2, 2]));
    assert!(g.max_over_time(x, &[Segment { start: 0, len: 0 }]).is_err());
    assert!(g.max_over_time(x, &[]).is_err());
}

#[test]
fn max_over_time_gradient_with_distinct_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = store_with(&[("x", random(&mut rng, &[7, 3]))]);
    let report = finite_difference_check(&mut store, 1e-6, |g| {
        let x = g.param_named("x")?;
        let m = g.max_over_time(
            x,
            &[Segment { start: 0, len: 4 }, Segment { start: 4, len: 3 }],
        )?;
        project(g, m, 9)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn unfold_and_attention_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = store_with(&[
        ("x", random(&mut rng, &[9, 2])),
        ("q", random(&mut rng, &[2, 3])),
        ("k0", random(&mut rng, &[2, 3])),
        ("k1", random(&mut rng, &[2, 3])),
        ("k2", random(&mut rng, &[2, 3])),
    ]);
    let report = finite_difference_check(&mut store, 1e-5, |g| {
        let x = g.param_named("x")?;
        let (w, _) = g.unfold(
            x,
            3,
            &[Segment { start: 0, len: 5 }, Segment { start: 5, len: 4 }],
        )?;
        let a = project(g, w, 1)?;
        let q = g.param_named("q")?;
        let ks = [
            g.param_named("k0")?,
            g.param_named("k1")?,
            g.param_named("k2")?,
        ];
        let keys = g.stack(&ks)?;
        let ctx = g.attention(q, keys, &[3, 2])?;
        let b = project(g, ctx, 2)?;
        g.add(a, b)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn losses_and_their_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let logits = random(&mut rng, &[3, 4]);
    let targets = [Some(1), None, Some(3)];
    let mut store = store_with(&[("l", logits.clone())]);
    let ce = finite_difference_check(&mut store, 1e-5, |g| {
        let l = g.param_named("l")?;
        g.cross_entropy(l, &targets)
    })
    .unwrap();
    assert!(ce.max_rel_error < 1e-6, "{ce:?}");
    let nll = finite_difference_check(&mut store, 1e-5, |g| {
        let l = g.param_named("l")?;
        let p = g.softmax(l);
        g.nll_loss(p, &targets)
    })
    .unwrap();
    assert!(nll.max_rel_error < 1e-6, "{nll:?}");

    // both routes agree on the value
    let mut g = Graph::new(&store);
    let l = g.param_named("l").unwrap();
    let a = g.cross_entropy(l, &targets).unwrap();
    let p = g.softmax(l);
    let b = g.nll_loss(p, &targets).unwrap();
    assert!((g.value(a).data()[0] - g.value(b).data()[0]).abs() < 1e-12);
}

#[test]
fn nll_examples() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let onehot = g.input(Tensor::from_rows(&[vec![0.0, 1.0, 0.0, 0.0]]).unwrap());
    let zero = g.nll_loss(onehot, &[Some(1)]).unwrap();
    assert_eq!(g.value(zero).data(), &[0.0]);
    let uniform = g.input(Tensor::filled(&[3, 4], 0.25));
    let l = g.nll_loss(uniform, &[Some(0), Some(2), Some(3)]).unwrap();
    assert!((g.value(l).data()[0] - 3.0 * 4f64.ln()).abs() < 1e-12);
    assert!((g.value(l).data()[0] - 4.1589).abs() < 1e-4);
    assert!(matches!(
        g.nll_loss(uniform, &[Some(4), None, None]),
        Err(ita_core::Error::Index { .. })
    ));
    // padding rows contribute nothing
    let pad = g.nll_loss(uniform, &[None, None, Some(0)]).unwrap();
    assert!((g.value(pad).data()[0] - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn nll_matches_scalar_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let rows: Vec<Vec<f64>> = (0..5)
        .map(|_| {
            let r: Vec<f64> = (0..6).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = r.iter().sum();
            r.iter().map(|v| v / s).collect()
        })
        .collect();
    let targets: Vec<usize> = (0..5).map(|_| rng.gen_range(0..6)).collect();
    let oracle: f64 = rows.iter().zip(&targets).map(|(r, &t)| -r[t].ln()).sum();
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let p = g.input(Tensor::from_rows(&rows).unwrap());
    let t: Vec<_> = targets.iter().map(|&t| Some(t)).collect();
    let l = g.nll_loss(p, &t).unwrap();
    assert!((g.value(l).data()[0] - oracle).abs() < 1e-12);
}

#[test]
fn softmax_matches_extended_precision_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let logits: Vec<f64> = (0..10).map(|_| rng.gen_range(-5.0..5.0)).collect();
    // oracle: exp/sum accumulated with Kahan-compensated summation on
    // unshifted exponentials, independent of max subtraction
    let exps: Vec<f64> = logits.iter().map(|x| x.exp()).collect();
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for e in &exps {
        let y = e - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    let got = ita_core::tensor::softmax(&logits);
    for (g, e) in got.iter().zip(&exps) {
        assert!((g - e / sum).abs() < 1e-12);
    }
    assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(got.iter().all(|&p| p > 0.0));
}

#[test]
fn backward_contract_and_linearity() {
    let store = store_with(&[("p", Tensor::scalar(3.0)), ("q", Tensor::scalar(-1.0))]);
    {
        let mut g = Graph::new(&store);
        let p = g.param_named("p").unwrap();
        let grads = g.backward(p).unwrap();
        assert_eq!(grads.get(store.id("p").unwrap()).unwrap().data(), &[1.0]);
        assert!(grads.get(store.id("q").unwrap()).is_none());
    }
    let branch = |which: &str| {
        let mut g = Graph::new(&store);
        let p = g.param_named("p").unwrap();
        let q = g.param_named("q").unwrap();
        let a = g.tanh(p);
        let b = g.mul(q, q).unwrap();
        let loss = match which {
            "a" => a,
            "b" => b,
            _ => g.add(a, b).unwrap(),
        };
        g.backward(loss).unwrap()
    };
    let (ga, gb, gab) = (branch("a"), branch("b"), branch("ab"));
    let (pid, qid) = (store.id("p").unwrap(), store.id("q").unwrap());
    assert_eq!(gab.get(pid).unwrap().data(), ga.get(pid).unwrap().data());
    assert_eq!(gab.get(qid).unwrap().data(), gb.get(qid).unwrap().data());

    let mut g = Graph::new(&store);
    let x = g.input(Tensor::zeros(&[2, 2]));
    assert!(matches!(g.backward(x), Err(ita_core::Error::Contract(_))));
}

#[test]
fn backward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let store = store_with(&[
        ("a", random(&mut rng, &[5, 5])),
        ("b", random(&mut rng, &[5, 5])),
    ]);
    let run = || {
        let mut g = Graph::new(&store);
        let (a, b) = (g.param_named("a").unwrap(), g.param_named("b").unwrap());
        let y = g.matmul(a, b).unwrap();
        let y = g.tanh(y);
        let y = g.softmax(y);
        let l = g.sum_all(y);
        let l2 = project(&mut g, y, 4).unwrap();
        let l = g.add(l, l2).unwrap();
        g.backward(l).unwrap()
    };
    let (g1, g2) = (run(), run());
    for id in [store.id("a").unwrap(), store.id("b").unwrap()] {
        let (x, y) = (g1.get(id).unwrap(), g2.get(id).unwrap());
        assert!(x
            .data()
            .iter()
            .zip(y.data())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn linear_model_check_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut store = store_with(&[
        ("w", random(&mut rng, &[3, 2])),
        ("b", random(&mut rng, &[2])),
    ]);
    let x = random(&mut rng, &[4, 3]);
    let report = finite_difference_check(&mut store, 1e-4, |g| {
        let (w, b) = (g.param_named("w")?, g.param_named("b")?);
        let xi = g.input(x.clone());
        let y = g.matmul(xi, w)?;
        let y = g.add_bias(y, b)?;
        project(g, y, 8)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-9, "{report:?}");
}

#[test]
fn perturbation_outside_range_is_rejected() {
    let mut store = store_with(&[("x", Tensor::scalar(1.0))]);
    assert!(finite_difference_check(&mut store, 1e-2, |g| g.param_named("x")).is_err());
}

proptest::proptest! {
    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..4, cols in 1usize..6, seed in proptest::prelude::any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[rows, cols]).map(|v| v * 200.0);
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(x);
        let p = g.softmax(x);
        for r in 0..rows {
            let row = g.value(p).row_slice(r);
            proptest::prop_assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
            proptest::prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
