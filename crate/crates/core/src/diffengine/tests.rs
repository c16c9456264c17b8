use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::linalg3::{random_rotation, Mat3};

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, DiffError>;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Loss = Σ w ⊙ f(inputs) with fixed random weights `w`.
fn loss_of(shapes: &[(usize, usize)], data: &[Vec<f64>], w: &[f64], f: &Build) -> (Tape<f64>, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let leaves: Vec<Var> = shapes.iter().zip(data).map(|(&(r, c), d)| tape.leaf(r, c, d.clone()).unwrap()).collect();
    let out = f(&mut tape, &leaves).unwrap();
    let (r, c) = tape.shape(out);
    let wv = tape.constant(r, c, w[..r * c].to_vec()).unwrap();
    let prod = tape.mul(out, wv).unwrap();
    let loss = tape.sum_all(prod).unwrap();
    (tape, leaves, loss)
}

/// Central differences with h = 1e-5; norm-wise relative error per input.
fn fd_check(shapes: &[(usize, usize)], seed: u64, tol: f64, f: &Build) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<Vec<f64>> = shapes.iter().map(|&(r, c)| rand_vec(&mut rng, r * c)).collect();
    let w = rand_vec(&mut rng, 4096);
    let (tape, leaves, loss) = loss_of(shapes, &data, &w, f);
    let grads = tape.backward(loss).unwrap();
    let h = 1e-5;
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = grads.wrt(*leaf).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; data[k].len()]);
        let mut numeric = vec![0.0; data[k].len()];
        for e in 0..data[k].len() {
            let mut plus = data.clone();
            plus[k][e] += h;
            let mut minus = data.clone();
            minus[k][e] -= h;
            let (tp, _, lp) = loss_of(shapes, &plus, &w, f);
            let (tm, _, lm) = loss_of(shapes, &minus, &w, f);
            numeric[e] = (tp.scalar(lp) - tm.scalar(lm)) / (2.0 * h);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
        assert!(scale > 0.0, "input {k}: zero gradient");
        assert!(diff / scale <= tol, "input {k}: relative error {}", diff / scale);
    }
}

fn rotations(n: usize, seed: u64) -> Arc<[Mat3<f64>]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_rotation(&mut rng)).collect()
}

#[test]
fn sum_gradient_is_ones() {
    let mut t = Tape::new();
    let x = t.leaf(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap();
    let s = t.sum_all(x).unwrap();
    assert_eq!(t.scalar(s), 9.5);
    let g = t.backward(s).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &[1.0; 6]);
}

#[test]
fn logistic_slope_at_zero() {
    let mut t = Tape::new();
    let x = t.leaf(1, 1, vec![0.0]).unwrap();
    let y = t.logistic(x);
    assert_eq!(t.scalar(y), 0.5);
    assert_eq!(t.backward(y).unwrap().wrt(x).unwrap(), &[0.25]);
}

#[test]
fn shape_errors_name_both_shapes() {
    let mut t = Tape::<f64>::new();
    let a = t.leaf(2, 3, vec![0.0; 6]).unwrap();
    let b = t.leaf(2, 2, vec![0.0; 4]).unwrap();
    let msg = t.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("(2, 3)") && msg.contains("(2, 2)"), "{msg}");
    assert!(matches!(t.add(a, b), Err(DiffError::Shape { op: "add", .. })));
    assert!(matches!(t.backward(a), Err(DiffError::NotScalar((2, 3)))));
}

#[test]
fn fd_elementwise() {
    let s = [(3, 4), (3, 4)];
    fd_check(&s, 1, 1e-6, &|t, v| t.add(v[0], v[1]));
    fd_check(&s, 2, 1e-6, &|t, v| t.sub(v[0], v[1]));
    fd_check(&s, 3, 1e-6, &|t, v| t.mul(v[0], v[1]));
    fd_check(&s[..1], 4, 1e-6, &|t, v| Ok(t.tanh(v[0])));
    fd_check(&s[..1], 5, 1e-6, &|t, v| Ok(t.logistic(v[0])));
    fd_check(&s[..1], 6, 1e-6, &|t, v| Ok(t.scale(v[0], -1.7)));
    fd_check(&s[..1], 7, 1e-6, &|t, v| Ok(t.abs(v[0])));
    fd_check(&s[..1], 8, 1e-6, &|t, v| {
        let p = t.logistic(v[0]);
        Ok(t.sqrt(p))
    });
}

#[test]
fn fd_broadcasts_and_products() {
    fd_check(&[(4, 3), (1, 3)], 10, 1e-6, &|t, v| t.add_bias(v[0], v[1]));
    fd_check(&[(4, 3), (4, 1)], 11, 1e-6, &|t, v| t.mul_col(v[0], v[1]));
    fd_check(&[(4, 3), (3, 5)], 12, 1e-6, &|t, v| t.matmul(v[0], v[1]));
    fd_check(&[(3, 6), (3, 8)], 13, 1e-6, &|t, v| t.batched_matmul(v[0], v[1], 3, 2, 4));
}

#[test]
fn fd_structural() {
    fd_check(&[(3, 2), (3, 4), (3, 1)], 20, 1e-6, &|t, v| t.concat(v));
    fd_check(&[(3, 6)], 21, 1e-6, &|t, v| t.slice_cols(v[0], 2, 3));
    fd_check(&[(5, 2)], 22, 1e-6, &|t, v| t.slice_rows(v[0], 1, 3));
    fd_check(&[(4, 6)], 23, 1e-6, &|t, v| t.reshape(v[0], 8, 3));
    fd_check(&[(4, 3)], 24, 1e-6, &|t, v| t.sum_axis(v[0], 0));
    fd_check(&[(4, 3)], 25, 1e-6, &|t, v| t.sum_axis(v[0], 1));
    let idx: Arc<[usize]> = Arc::from(vec![2, 0, 2, 1, 3]);
    let gi = idx.clone();
    fd_check(&[(4, 3)], 26, 1e-6, &move |t, v| t.gather_rows(v[0], gi.clone()));
    fd_check(&[(5, 3)], 27, 1e-6, &move |t, v| t.scatter_add_rows(v[0], idx.clone(), 4));
}

#[test]
fn fd_frame_ops() {
    let m = rotations(3, 30);
    let m2 = m.clone();
    fd_check(&[(3, 6)], 31, 1e-6, &move |t, v| t.rotate_vectors(v[0], m.clone()));
    fd_check(&[(3, 18)], 32, 1e-6, &move |t, v| t.conjugate_tensors(v[0], m2.clone()));
    fd_check(&[(3, 18)], 33, 1e-6, &|t, v| t.symmetrize3(v[0]));
}

#[test]
fn frame_ops_forward_values() {
    let r = rotations(1, 40);
    let mut t = Tape::new();
    let v = t.constant(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
    let out = t.rotate_vectors(v, r.clone()).unwrap();
    let want = r[0] * crate::linalg3::Vec3::new(1.0, 2.0, 3.0);
    for k in 0..3 {
        assert!((t.value(out)[k] - want[k]).abs() < 1e-15);
    }
    let eye = t.constant(1, 9, Mat3::identity().to_flat().to_vec()).unwrap();
    let c = t.conjugate_tensors(eye, r).unwrap();
    let got = Mat3::from_slice(t.value(c));
    assert!((got - Mat3::identity()).max_abs() < 1e-15);
}

#[test]
fn backward_twice_is_identical_and_reused_params_accumulate() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    store.insert("w", Param::glorot(3, 3, &mut rng)).unwrap();
    let mut t = Tape::new();
    let x = t.constant(2, 3, rand_vec(&mut rng, 6)).unwrap();
    let w1 = t.param(&store, "w").unwrap();
    let w2 = t.param(&store, "w").unwrap();
    let h = t.matmul(x, w1).unwrap();
    let h = t.tanh(h);
    let o = t.matmul(h, w2).unwrap();
    let l = t.sum_all(o).unwrap();
    let g1 = t.backward(l).unwrap();
    let g2 = t.backward(l).unwrap();
    let p1 = g1.param_grads(&t, &store);
    assert_eq!(p1, g2.param_grads(&t, &store));
    let sum: Vec<f64> = g1.wrt(w1).unwrap().iter().zip(g1.wrt(w2).unwrap()).map(|(a, b)| a + b).collect();
    assert_eq!(p1[0], sum);
    assert!(matches!(t.param(&store, "nope"), Err(DiffError::UnknownParam(_))));
}

#[test]
fn mlp_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let spec = MlpSpec::new(3, 4, 2, true);
    let mut store = ParamStore::new();
    init_mlp(&mut store, "g", &spec, &mut rng).unwrap();
    for name in ["g.w1", "g.w2"] {
        store.get_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut t = Tape::new();
    let x = t.constant(2, 3, rand_vec(&mut rng, 6)).unwrap();
    let y = mlp_forward(&mut t, &store, "g", &spec, x).unwrap();
    assert_eq!(t.value(y), &[0.5; 4]);

    let one = MlpSpec::new(1, 1, 1, false);
    let mut s1 = ParamStore::new();
    s1.insert("m.w1", Param { rows: 1, cols: 1, data: vec![1.0] }).unwrap();
    s1.insert("m.b1", Param { rows: 1, cols: 1, data: vec![0.0] }).unwrap();
    s1.insert("m.w2", Param { rows: 1, cols: 1, data: vec![2.0] }).unwrap();
    s1.insert("m.b2", Param { rows: 1, cols: 1, data: vec![0.5] }).unwrap();
    let mut t = Tape::new();
    let x = t.constant(2, 1, vec![0.3, -1.2]).unwrap();
    let y = mlp_forward(&mut t, &s1, "m", &one, x).unwrap();
    assert_eq!(t.value(y), &[2.0 * 0.3f64.tanh() + 0.5, 2.0 * (-1.2f64).tanh() + 0.5]);

    let mut t = Tape::new();
    let bad = t.constant(1, 2, vec![0.0; 2]).unwrap();
    assert!(matches!(mlp_forward(&mut t, &s1, "m", &one, bad), Err(DiffError::Shape { .. })));
}

#[test]
fn mlp_gradient_matches_fd() {
    let spec = MlpSpec::new(4, 5, 3, true);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    init_mlp(&mut store, "f", &spec, &mut rng).unwrap();
    let x = rand_vec(&mut rng, 8);
    let loss = |store: &ParamStore<f64>| {
        let mut t = Tape::new();
        let xi = t.constant(2, 4, x.clone()).unwrap();
        let y = mlp_forward(&mut t, store, "f", &spec, xi).unwrap();
        let y2 = t.mul(y, y).unwrap();
        let l = t.sum_all(y2).unwrap();
        let g = t.backward(l).unwrap().param_grads(&t, store);
        (t.scalar(l), g)
    };
    let (_, analytic) = loss(&store);
    for idx in 0..store.len() {
        let mut diff = 0.0;
        let mut norm = 0.0f64;
        for e in 0..store.get_index(idx).len() {
            let mut p = store.clone();
            p.get_index_mut(idx).data[e] += 1e-5;
            let mut m = store.clone();
            m.get_index_mut(idx).data[e] -= 1e-5;
            let n = (loss(&p).0 - loss(&m).0) / 2e-5;
            diff += (n - analytic[idx][e]).powi(2);
            norm = norm.max(n.abs()).max(analytic[idx][e].abs());
        }
        assert!(diff.sqrt() / norm <= 1e-6, "{}: {}", store.name_of(idx), diff.sqrt() / norm);
    }
}

#[test]
fn init_is_deterministic_and_bounded() {
    let spec = MlpSpec::new(7, 16, 5, false);
    let make = |seed| {
        let mut s = ParamStore::<f64>::new();
        init_mlp(&mut s, "x", &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        s
    };
    let (a, b, c) = (make(1), make(1), make(2));
    assert_eq!(a, b);
    assert_ne!(a.get("x.w1"), c.get("x.w1"));
    assert_eq!(a.count(), spec.param_count());
    let bound = glorot_bound(7, 16);
    assert!(a.get("x.w1").unwrap().data.iter().all(|v| v.abs() <= bound));
    assert!(a.get("x.b1").unwrap().data.iter().all(|&v| v == 0.0));
    let mut dup = a.clone();
    assert!(matches!(init_mlp(&mut dup, "x", &spec, &mut ChaCha8Rng::seed_from_u64(0)), Err(DiffError::DuplicateParam(_))));
}

fn scalar_store(v: f64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.insert("p", Param { rows: 1, cols: 1, data: vec![v] }).unwrap();
    s
}

#[test]
fn adam_first_step_and_zero_gradient() {
    let mut s = scalar_store(1.0);
    let mut st = AdamState::new(&s);
    adam_step(&mut s, &[vec![1.0]], &mut st, 0.1, &AdamConfig::default()).unwrap();
    assert!((s.get("p").unwrap().data[0] - 0.9).abs() < 1e-6);

    let mut s = scalar_store(1.0);
    let mut st = AdamState::new(&s);
    adam_step(&mut s, &[vec![0.0]], &mut st, 0.1, &AdamConfig::default()).unwrap();
    assert_eq!(s.get("p").unwrap().data[0], 1.0);

    let err = adam_step(&mut s, &[vec![f64::NAN]], &mut st, 0.1, &AdamConfig::default()).unwrap_err();
    assert!(err.to_string().contains("`p`"));
    assert_eq!(s.get("p").unwrap().data[0], 1.0);
}

#[test]
fn adam_quadratic_bowl() {
    let mut s = ParamStore::new();
    let p0 = [0.6, -0.48, 0.64];
    s.insert("p", Param { rows: 1, cols: 3, data: p0.to_vec() }).unwrap();
    let mut st = AdamState::new(&s);
    for _ in 0..500 {
        let g = s.get("p").unwrap().data.clone();
        adam_step(&mut s, &[g], &mut st, 0.01, &AdamConfig::default()).unwrap();
    }
    let norm = s.get("p").unwrap().data.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e-3, "{norm}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    init_mlp(&mut store, "a", &MlpSpec::new(3, 16, 2, true), &mut rng).unwrap();
    store.get_mut("a.b2").unwrap().data = vec![f64::MIN_POSITIVE, -0.0];
    let mut state = AdamState::new(&store);
    let grads: Vec<Vec<f64>> = store.iter().map(|(_, p)| rand_vec(&mut rng, p.len())).collect();
    adam_step(&mut store, &grads, &mut state, 1e-3, &AdamConfig::default()).unwrap();
    let ck = Checkpoint {
        config: vec![("variant".into(), "tensorial".into()), ("layers".into(), "4".into())],
        params: store,
        optimizer: Some(OptimizerRecord { lr: 1e-3, adam: AdamConfig::default(), state }),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.to_bytes(), ck.to_bytes());
    assert_eq!(back.config_value("layers"), Some("4"));
    let bits = |c: &Checkpoint| c.params.iter().flat_map(|(_, p)| p.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&ck));

    let bytes = ck.to_bytes();
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(DiffError::Checkpoint(_))));
    assert!(matches!(Checkpoint::from_bytes(b"garbage!"), Err(DiffError::Checkpoint(_))));
}
