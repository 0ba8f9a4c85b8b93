mod common;

use std::collections::HashSet;

use common::{central_difference, oracle_mlp, relative_error};
use hpgnn::model::HpgnnConfig;
use hpgnn::nncore::{
    adam_step, init_params, mlp_forward, param_rng, path_hash, AdamConfig, AdamState, MlpSpec,
    NnError, ParamStore, Tape, Tensor, Var,
};
use proptest::prelude::*;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Values bounded away from zero and from each other, so relu kinks and max
/// ties stay farther than the finite-difference step.
fn spread_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let n = rows * cols;
    let mut levels: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0 + 0.5) * 0.1).collect();
    for i in (1..n).rev() {
        levels.swap(i, rng.random_range(0..=i));
    }
    Tensor::matrix(rows, cols, levels).unwrap()
}

/// Records `build` on a fresh tape and reduces its output with fixed random
/// row and column weights to a scalar.
fn scalar_of(
    inputs: &[Tensor],
    build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var, NnError>,
    weights_seed: u64,
) -> (Tape, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.constant(t.clone()).unwrap())
        .collect();
    let out = build(&mut tape, &vars).unwrap();
    let (rows, cols) = (tape.value(out).rows(), tape.value(out).cols());
    let mut rng = ChaCha8Rng::seed_from_u64(weights_seed);
    let rw = tape
        .constant(Tensor::matrix(rows, 1, (0..rows).map(|_| rng.random_range(0.5..1.5)).collect()).unwrap())
        .unwrap();
    let cw = tape
        .constant(Tensor::matrix(cols, 1, (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .unwrap();
    let scaled = tape.scale_rows(out, rw).unwrap();
    let col = tape.matmul(scaled, cw).unwrap();
    let loss = tape.sum(col).unwrap();
    (tape, vars, loss)
}

fn gradient_check(inputs: Vec<Tensor>, build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var, NnError>) {
    let (tape, vars, loss) = scalar_of(&inputs, build, 99);
    let grads = tape.backward(loss).unwrap();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map_or_else(|| vec![0.0; input.len()], |g| g.data().to_vec());
        let numeric = central_difference(input.data(), 1e-5, |x| {
            let mut probe = inputs.clone();
            probe[k] = Tensor::new(input.shape().to_vec(), x.to_vec()).unwrap();
            let (t, _, l) = scalar_of(&probe, build, 99);
            t.value(l).data()[0]
        });
        let err = relative_error(&analytic, &numeric, 1e-8);
        assert!(err <= 1e-4, "input {k}: relative error {err}");
    }
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_tensor(&mut rng, 4, 3);
    let b = random_tensor(&mut rng, 3, 5);
    let c = random_tensor(&mut rng, 4, 3);
    let bias = Tensor::new(vec![3], vec![0.3, -0.2, 0.1]).unwrap();
    let spread = spread_tensor(&mut rng, 6, 3);
    let col = random_tensor(&mut rng, 6, 1);
    let segment = [0, 2, 0, 1, 2, 2];

    gradient_check(vec![a.clone(), b.clone()], &|t, v| t.matmul(v[0], v[1]));
    gradient_check(vec![a.clone(), bias], &|t, v| t.add_bias(v[0], v[1]));
    gradient_check(vec![a.clone(), c.clone()], &|t, v| t.add(v[0], v[1]));
    gradient_check(vec![spread.clone()], &|t, v| t.relu(v[0]));
    gradient_check(vec![a.clone()], &|t, v| t.scale(v[0], -2.5));
    gradient_check(vec![a.clone()], &|t, v| t.sum(v[0]));
    gradient_check(vec![a.clone(), c.clone(), col.clone()], &|t, v| {
        let s = t.gather(v[2], &[0, 1, 2, 3])?;
        t.concat(&[v[0], s, v[1]])
    });
    gradient_check(vec![a.clone()], &|t, v| t.gather(v[0], &[3, 0, 3, 1, 1]));
    gradient_check(vec![spread.clone()], &|t, v| t.segment_max(v[0], &segment, 4));
    gradient_check(vec![spread.clone()], &|t, v| t.segment_sum(v[0], &segment, 3));
    gradient_check(vec![col.clone()], &|t, v| t.segment_softmax(v[0], &segment, 3));
    gradient_check(vec![spread.clone(), col.clone()], &|t, v| t.scale_rows(v[0], v[1]));
    gradient_check(vec![a.clone()], &|t, v| t.softmax_rows(v[0]));
    gradient_check(vec![a, b], &|t, v| {
        let m = t.matmul(v[0], v[1])?;
        let r = t.relu(m)?;
        t.softmax_rows(r)
    });
}

fn store_with(entries: &[(&str, Tensor)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (n, t) in entries {
        s.insert(n, t.clone()).unwrap();
    }
    s
}

#[test]
fn identity_layer_passes_input_through() {
    let eye = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
    let store = store_with(&[("m/w1", eye), ("m/b1", Tensor::zeros(vec![3]))]);
    let spec = MlpSpec::relu(vec![3, 3]).unwrap();
    let mut tape = Tape::new();
    let x = Tensor::from_rows(&[vec![1.5, -2.0, 0.25], vec![0.0, 3.0, -1.0]]).unwrap();
    let input = tape.constant(x.clone()).unwrap();
    let out = mlp_forward(&mut tape, &store, "m", &spec, input).unwrap().output;
    assert_eq!(tape.value(out), &x);
}

#[test]
fn zero_mlp_outputs_zeros() {
    let spec = MlpSpec::relu(vec![4, 6, 2]).unwrap();
    let mut store = ParamStore::new();
    store.register_mlp("m", &spec, 3).unwrap();
    store.zero_values("m");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tape = Tape::new();
    let input = tape.constant(random_tensor(&mut rng, 5, 4)).unwrap();
    let out = mlp_forward(&mut tape, &store, "m", &spec, input).unwrap().output;
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn two_layer_mlp_matches_scalar_trace() {
    let spec = MlpSpec::relu(vec![3, 4, 2]).unwrap();
    let mut store = ParamStore::new();
    store.register_mlp("m", &spec, 17).unwrap();
    // non-zero biases so both terms are exercised
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for name in ["m/b1", "m/b2"] {
        let p = store.get_mut(name).unwrap();
        p.value.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    let layer = |l: usize| {
        let w = store.value(&format!("m/w{l}")).unwrap();
        let rows = (0..w.rows()).map(|r| w.row(r).to_vec()).collect();
        (rows, store.value(&format!("m/b{l}")).unwrap().data().to_vec())
    };
    let layers = vec![layer(1), layer(2)];
    let x = random_tensor(&mut rng, 6, 3);
    let mut tape = Tape::new();
    let input = tape.constant(x.clone()).unwrap();
    let out = mlp_forward(&mut tape, &store, "m", &spec, input).unwrap().output;
    for r in 0..6 {
        let expected = oracle_mlp(x.row(r), &layers);
        for (a, b) in tape.value(out).row(r).iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn sum_of_parameters_has_unit_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = store_with(&[("p/w1", random_tensor(&mut rng, 3, 2)), ("p/b1", Tensor::zeros(vec![2]))]);
    let mut tape = Tape::new();
    let w = tape.param(&store, "p/w1").unwrap();
    let b = tape.param(&store, "p/b1").unwrap();
    let sw = tape.sum(w).unwrap();
    let sb = tape.sum(b).unwrap();
    let loss = tape.add(sw, sb).unwrap();
    tape.backward(loss).unwrap().accumulate_into(&mut store).unwrap();
    assert!(store.grad("p/w1").unwrap().data().iter().all(|&g| g == 1.0));
    assert!(store.grad("p/b1").unwrap().data().iter().all(|&g| g == 1.0));
}

#[test]
fn relu_blocks_negative_inputs() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[vec![-1.0, 2.0, -0.5]]).unwrap()).unwrap();
    let r = tape.relu(x).unwrap();
    let loss = tape.sum(r).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn foreign_loss_is_rejected() {
    let mut big = Tape::new();
    let mut last = big.constant(Tensor::scalar(1.0)).unwrap();
    for _ in 0..3 {
        last = big.scale(last, 2.0).unwrap();
    }
    let empty = Tape::new();
    assert_eq!(empty.backward(last).unwrap_err(), NnError::GraphNotRecorded);
    let x = big.constant(Tensor::zeros(vec![2, 2])).unwrap();
    assert!(matches!(big.backward(x), Err(NnError::NotScalar(_))));
}

#[test]
fn max_routing_survives_small_perturbations() {
    let rows = vec![vec![1.0, 5.0], vec![3.0, 2.0], vec![2.0, 4.0]];
    let run = |rows: &[Vec<f64>]| {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(rows).unwrap()).unwrap();
        let m = tape.segment_max(x, &[0, 0, 0], 1).unwrap();
        let loss = tape.sum(m).unwrap();
        tape.backward(loss).unwrap().get(x).unwrap().clone()
    };
    let base = run(&rows);
    assert_eq!(base.data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    // every non-winning entry moved by less than its gap to the winner
    let mut moved = rows.clone();
    moved[0][0] += 1.5;
    moved[2][0] -= 0.9;
    moved[1][1] += 0.5;
    moved[2][1] += 0.99;
    assert_eq!(run(&moved), base);
}

#[test]
fn max_ties_route_to_lowest_row() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[vec![2.0], vec![2.0], vec![1.0]]).unwrap()).unwrap();
    let m = tape.segment_max(x, &[0, 0, 0], 2).unwrap();
    assert_eq!(tape.value(m).data(), &[2.0, 0.0]);
    let loss = tape.sum(m).unwrap();
    assert_eq!(tape.backward(loss).unwrap().get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
}

proptest! {
    #[test]
    fn gradients_scale_with_the_loss(seed in any::<u64>(), alpha in -4.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tensor(&mut rng, 3, 4);
        let w = random_tensor(&mut rng, 4, 2);
        let grad = |scale: Option<f64>| {
            let mut tape = Tape::new();
            let x = tape.constant(a.clone()).unwrap();
            let wv = tape.constant(w.clone()).unwrap();
            let m = tape.matmul(x, wv).unwrap();
            let r = tape.relu(m).unwrap();
            let s = tape.softmax_rows(r).unwrap();
            let mut loss = tape.sum(s).unwrap();
            let sq = tape.matmul(x, wv).unwrap();
            let total = tape.sum(sq).unwrap();
            loss = tape.add(loss, total).unwrap();
            if let Some(alpha) = scale {
                loss = tape.scale(loss, alpha).unwrap();
            }
            tape.backward(loss).unwrap().get(wv).unwrap().clone()
        };
        let plain = grad(None);
        let scaled = grad(Some(alpha));
        for (p, s) in plain.data().iter().zip(scaled.data()) {
            prop_assert!((alpha * p - s).abs() <= 1e-12 * (1.0 + s.abs()));
        }
    }

    #[test]
    fn identical_parameters_stay_identical(seed in any::<u64>(), steps in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = random_tensor(&mut rng, 2, 3);
        let mut store = store_with(&[("a/w1", init.clone()), ("b/w1", init)]);
        let mut adam = AdamState::new(AdamConfig::default());
        for _ in 0..steps {
            let g = random_tensor(&mut rng, 2, 3);
            store.accumulate_grad("a/w1", &g).unwrap();
            store.accumulate_grad("b/w1", &g).unwrap();
            adam_step(&mut store, &mut adam);
        }
        prop_assert_eq!(store.value("a/w1").unwrap(), store.value("b/w1").unwrap());
    }
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = store_with(&[("p/w1", random_tensor(&mut rng, 3, 3))]);
    let before = store.clone();
    let mut adam = AdamState::new(AdamConfig::default());
    for _ in 0..5 {
        adam_step(&mut store, &mut adam);
    }
    assert_eq!(store, before);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let init = random_tensor(&mut rng, 4, 2);
    let mut store = store_with(&[("p/w1", init.clone())]);
    let config = AdamConfig {
        lr: 0.1,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(config);
    store.accumulate_grad("p/w1", &Tensor::filled(vec![4, 2], 1.0)).unwrap();
    adam_step(&mut store, &mut adam);
    // m̂ = 1 and v̂ = 1 after bias correction
    let expected = 0.1 / (1.0 + config.eps);
    for (w0, w1) in init.data().iter().zip(store.value("p/w1").unwrap().data()) {
        assert!((w0 - w1 - expected).abs() <= 1e-15);
    }
    assert!(store.grad("p/w1").unwrap().data().iter().all(|&g| g == 0.0));
}

#[test]
fn init_is_deterministic_with_zero_biases() {
    let spec = MlpSpec::relu(vec![5, 8, 3]).unwrap();
    let a = init_params(&spec, "x", 42);
    assert_eq!(a, init_params(&spec, "x", 42));
    assert_ne!(a, init_params(&spec, "x", 43));
    for (name, t) in &a {
        if name.contains("/b") {
            assert!(t.data().iter().all(|&v| v == 0.0));
        } else {
            let limit = (6.0 / (t.rows() + t.cols()) as f64).sqrt();
            assert!(t.data().iter().all(|v| v.abs() <= limit));
        }
    }
}

#[test]
fn parameter_paths_draw_distinct_streams() {
    let config = HpgnnConfig::default();
    let mut names = Vec::new();
    for (prefix, spec) in config.layout() {
        names.extend(spec.parameter_shapes(&prefix).into_iter().map(|(n, _)| n));
    }
    let hashes: HashSet<u64> = names.iter().map(|n| path_hash(n)).collect();
    assert_eq!(hashes.len(), names.len());
    let heads: HashSet<[u64; 4]> = names
        .iter()
        .map(|n| {
            let mut rng = param_rng(0, n);
            [rng.next_u64(), rng.next_u64(), rng.next_u64(), rng.next_u64()]
        })
        .collect();
    assert_eq!(heads.len(), names.len());
}
