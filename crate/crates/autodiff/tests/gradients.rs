use graftnet_autodiff::gradcheck::{check_inputs, check_params};
use graftnet_autodiff::{ffn, seq_encode, LstmWeights, ParamStore, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-3;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn check(
    name: &str,
    inputs: Vec<(Vec<usize>, Vec<f64>)>,
    f: impl Fn(&mut Tape<f64>, &[graftnet_autodiff::Var]) -> graftnet_autodiff::Result<graftnet_autodiff::Var>,
) {
    let r = check_inputs(&inputs, f).unwrap();
    assert!(
        r.max_rel_error < TOL,
        "{name}: relative error {} at {}",
        r.max_rel_error,
        r.worst
    );
}

#[test]
fn every_op_passes_finite_differences_over_ten_seeds() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x3 = rand_vec(&mut rng, 3, 1.0);
        let w33 = rand_vec(&mut rng, 9, 1.0);
        let b3 = rand_vec(&mut rng, 3, 1.0);
        let y3 = rand_vec(&mut rng, 3, 1.0);

        check(
            "linear",
            vec![(vec![3], x3.clone()), (vec![3, 3], w33.clone()), (vec![3], b3.clone())],
            |t, v| {
                let o = t.linear(v[0], v[1], Some(v[2]))?;
                let s = t.sigmoid(o);
                Ok(t.sum_elements(s))
            },
        );
        check("relu", vec![(vec![3], x3.clone())], |t, v| {
            let a = t.relu(v[0]);
            let sq = t.mul(a, a)?;
            Ok(t.sum_elements(sq))
        });
        check("tanh", vec![(vec![3], x3.clone())], |t, v| {
            let a = t.tanh(v[0]);
            let sq = t.mul(a, a)?;
            Ok(t.sum_elements(sq))
        });
        check("sigmoid", vec![(vec![3], x3.clone())], |t, v| {
            let a = t.sigmoid(v[0]);
            let sq = t.mul(a, a)?;
            Ok(t.sum_elements(sq))
        });
        check(
            "add/sum/mul",
            vec![(vec![3], x3.clone()), (vec![3], y3.clone())],
            |t, v| {
                let a = t.add(v[0], v[1])?;
                let b = t.mul(a, v[0])?;
                let c = t.sum(&[a, b, v[1]])?;
                let d = t.tanh(c);
                Ok(t.sum_elements(d))
            },
        );
        check(
            "dot/scale",
            vec![(vec![3], x3.clone()), (vec![3], y3.clone())],
            |t, v| {
                let d = t.dot(v[0], v[1])?;
                let s = t.scale(v[0], d)?;
                let c = t.scale_const(s, 0.7);
                let th = t.tanh(c);
                Ok(t.sum_elements(th))
            },
        );
        check(
            "concat/slice/gather/scatter",
            vec![(vec![3], x3.clone()), (vec![3], y3.clone())],
            |t, v| {
                let c = t.concat(&[v[0], v[1]])?;
                let s = t.slice(c, 2, 3)?;
                let g = t.gather(c, &[0, 5, 5, 1])?;
                let sc = t.scatter_add(g, &[2, 0, 2, 1], 3)?;
                let m = t.mul(s, sc)?;
                let th = t.tanh(m);
                Ok(t.sum_elements(th))
            },
        );
        let scores = rand_vec(&mut rng, 6, 2.0);
        let weights = rand_vec(&mut rng, 6, 1.0);
        check(
            "grouped_softmax",
            vec![(vec![6], scores), (vec![6], weights)],
            |t, v| {
                let s = t.grouped_softmax(v[0], &[vec![0, 3], vec![1], vec![2, 4, 5]])?;
                t.dot(s, v[1])
            },
        );
        let probs: Vec<f64> = (0..4).map(|_| rng.gen_range(0.05..0.95)).collect();
        check("bce", vec![(vec![4], probs.clone())], |t, v| {
            t.bce(v[0], &[1.0, 0.0, 0.0, 1.0])
        });
        check("weighted_bce", vec![(vec![4], probs)], |t, v| {
            t.weighted_bce(v[0], &[1.0, 0.0, 0.0, 1.0], 3.0)
        });

        // one LSTM cell and a full sequence encoding
        let (m, n) = (3, 2);
        let xs = rand_vec(&mut rng, 4 * m, 1.0);
        let w = rand_vec(&mut rng, 4 * n * (m + n), 0.8);
        let b = rand_vec(&mut rng, 4 * n, 0.5);
        let st = rand_vec(&mut rng, 2 * n, 0.5);
        check(
            "lstm_cell",
            vec![
                (vec![m], xs[..m].to_vec()),
                (vec![2 * n], st),
                (vec![4 * n, m + n], w.clone()),
                (vec![4 * n], b.clone()),
            ],
            |t, v| {
                let s = t.lstm_cell(v[0], v[1], v[2], v[3])?;
                let th = t.tanh(s);
                Ok(t.sum_elements(th))
            },
        );
        check(
            "seq_encode",
            vec![(vec![4 * m], xs), (vec![4 * n, m + n], w), (vec![4 * n], b)],
            |t, v| {
                let toks = (0..4).map(|i| t.slice(v[0], i * m, m)).collect::<Result<Vec<_>, _>>()?;
                let rows = seq_encode(
                    t,
                    &toks,
                    LstmWeights {
                        w: v[1],
                        b: v[2],
                        hidden: n,
                    },
                )?;
                let all = t.concat(&rows)?;
                let sq = t.mul(all, all)?;
                Ok(t.sum_elements(sq))
            },
        );
    }
}

#[test]
fn linear_three_by_three_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let inputs = vec![
        (vec![3], rand_vec(&mut rng, 3, 1.0)),
        (vec![3, 3], rand_vec(&mut rng, 9, 1.0)),
        (vec![3], rand_vec(&mut rng, 3, 1.0)),
    ];
    let r = check_inputs(&inputs, |t, v| {
        let o = t.linear(v[0], v[1], Some(v[2]))?;
        let sq = t.mul(o, o)?;
        Ok(t.sum_elements(sq))
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn composite_ffn_sigmoid_graph_through_param_store() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut store: ParamStore<f64> = ParamStore::new();
        let w1 = store.register_uniform("w1", &[4, 3], 0.9, &mut rng).unwrap();
        let b1 = store.register_uniform("b1", &[4], 0.3, &mut rng).unwrap();
        let w2 = store.register_uniform("w2", &[1, 4], 0.9, &mut rng).unwrap();
        let b2 = store.register_uniform("b2", &[1], 0.3, &mut rng).unwrap();
        let x = rand_vec(&mut rng, 3, 1.0);
        let r = check_params(
            &mut store,
            |s, t| {
                let xv = t.vector(x.clone())?;
                let (w1, b1, w2, b2) = (t.param(s, w1), t.param(s, b1), t.param(s, w2), t.param(s, b2));
                let h = ffn(t, xv, w1, b1)?;
                let z = t.linear(h, w2, Some(b2))?;
                let p = t.sigmoid(z);
                t.bce(p, &[1.0])
            },
            None,
            &mut rng,
        )
        .unwrap();
        assert!(r.max_rel_error < TOL, "seed {seed}: {r:?}");
    }
}
