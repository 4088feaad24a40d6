use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use strokesel_tape::{finite_diff_check, ParamStore, Result, Tape, Tensor, TensorError, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn probe(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let w = Tensor::randn(shape, 1.0, &mut rng(seed ^ 0xabc));
    let w = tape.constant(w)?;
    let y = tape.mul(x, w)?;
    tape.sum(y)
}

fn check_unary(name: &str, shape: &[usize], op: impl Fn(&mut Tape, Var) -> Result<Var>) {
    for seed in 0..3 {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::randn(shape.to_vec(), 1.0, &mut rng(seed)));
        let report = finite_diff_check(
            &store,
            |t, s| {
                let xv = t.param(s, x);
                let y = op(t, xv)?;
                probe(t, y, seed)
            },
            H,
            TOL,
        )
        .unwrap();
        assert!(report.passed, "{name} seed {seed}: {report:?}");
    }
}

#[test]
fn unary_primitives_match_finite_differences() {
    check_unary("relu", &[3, 4], |t, x| t.relu(x));
    check_unary("sigmoid", &[3, 4], |t, x| t.sigmoid(x));
    check_unary("tanh", &[3, 4], |t, x| t.tanh(x));
    check_unary("exp", &[2, 5], |t, x| t.exp(x));
    check_unary("log", &[2, 5], |t, x| {
        let sq = t.square(x)?;
        let shifted = t.add_scalar(sq, 0.5)?;
        t.log(shifted)
    });
    check_unary("softmax_rows", &[3, 4], |t, x| t.softmax_rows(x));
    check_unary("mean", &[3, 4], |t, x| t.mean(x));
    check_unary("sum", &[3, 4], |t, x| t.sum(x));
    check_unary("mean_rows", &[3, 4], |t, x| t.mean_rows(x));
    check_unary("layer_norm", &[3, 6], |t, x| t.layer_norm_rows(x, 1e-5));
    check_unary("l2_normalize_rows", &[3, 4], |t, x| t.l2_normalize_rows(x));
    check_unary("norm_rows", &[3, 4], |t, x| t.norm_rows(x));
    check_unary("gather_rows", &[4, 3], |t, x| t.gather_rows(x, &[2, 0, 2]));
    check_unary("gather_cols", &[4, 3], |t, x| t.gather_cols(x, &[2, 0, 1, 1]));
    check_unary("slice_cols", &[3, 5], |t, x| t.slice_cols(x, 1, 3));
    check_unary("clip", &[3, 4], |t, x| t.clip(x, -0.5, 0.7));
    check_unary("scale", &[2, 2], |t, x| t.scale(x, -3.0));
    check_unary("square", &[2, 3], |t, x| t.square(x));
    check_unary("maxpool2", &[2, 5, 4], |t, x| t.maxpool2(x));
    check_unary("global_avg_pool", &[3, 4, 5], |t, x| t.global_avg_pool(x));
    check_unary("reshape", &[2, 6], |t, x| t.reshape(x, &[3, 4]));
}

fn check_binary(name: &str, sa: &[usize], sb: &[usize], op: impl Fn(&mut Tape, Var, Var) -> Result<Var>) {
    for seed in 0..3 {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::randn(sa.to_vec(), 1.0, &mut rng(seed)));
        let b = store.add("b", Tensor::randn(sb.to_vec(), 1.0, &mut rng(seed + 100)));
        let report = finite_diff_check(
            &store,
            |t, s| {
                let (av, bv) = (t.param(s, a), t.param(s, b));
                let y = op(t, av, bv)?;
                probe(t, y, seed)
            },
            H,
            TOL,
        )
        .unwrap();
        assert!(report.passed, "{name} seed {seed}: {report:?}");
    }
}

#[test]
fn binary_primitives_match_finite_differences() {
    check_binary("matmul", &[3, 4], &[4, 2], |t, a, b| t.matmul(a, b));
    check_binary("add", &[3, 4], &[3, 4], |t, a, b| t.add(a, b));
    check_binary("sub", &[3, 4], &[3, 4], |t, a, b| t.sub(a, b));
    check_binary("mul", &[3, 4], &[3, 4], |t, a, b| t.mul(a, b));
    check_binary("div", &[3, 4], &[3, 4], |t, a, b| {
        let sq = t.square(b)?;
        let d = t.add_scalar(sq, 1.0)?;
        t.div(a, d)
    });
    check_binary("add_row", &[3, 4], &[4], |t, a, b| t.add_row(a, b));
    check_binary("mul_row", &[3, 4], &[1, 4], |t, a, b| t.mul_row(a, b));
    check_binary("minimum", &[3, 4], &[3, 4], |t, a, b| t.minimum(a, b));
    check_binary("concat_rows", &[2, 3], &[1, 3], |t, a, b| t.concat_rows(&[a, b, a]));
    check_binary("concat_cols", &[2, 3], &[2, 1], |t, a, b| t.concat_cols(&[b, a]));
}

#[test]
fn conv2d_matches_finite_differences() {
    for seed in 0..3 {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::randn([2, 6, 5], 1.0, &mut rng(seed)));
        let k = store.add("k", Tensor::randn([3, 2, 3, 3], 0.5, &mut rng(seed + 1)));
        let b = store.add("b", Tensor::randn([3], 0.5, &mut rng(seed + 2)));
        let report = finite_diff_check(
            &store,
            |t, s| {
                let (xv, kv, bv) = (t.param(s, x), t.param(s, k), t.param(s, b));
                let y = t.conv2d_valid(xv, kv, bv)?;
                probe(t, y, seed)
            },
            H,
            TOL,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}

#[test]
fn conv2d_known_value() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::new([1, 3, 3], (1..=9).map(f64::from).collect()).unwrap()).unwrap();
    let k = t.constant(Tensor::new([1, 1, 2, 2], vec![1.0, 0.0, 0.0, -1.0]).unwrap()).unwrap();
    let b = t.constant(Tensor::new([1], vec![0.5]).unwrap()).unwrap();
    let y = t.conv2d_valid(x, k, b).unwrap();
    assert_eq!(t.shape(y), &[1, 2, 2]);
    assert_eq!(t.value(y).data(), &[-3.5, -3.5, -3.5, -3.5]);
}

#[test]
fn relu_forward_and_backward() {
    let mut t = Tape::new();
    let x = t.input(Tensor::new([2], vec![-1.0, 2.0]).unwrap()).unwrap();
    let y = t.relu(x).unwrap();
    assert_eq!(t.value(y).data(), &[0.0, 2.0]);
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &[0.0, 1.0]);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::new([1, 2], vec![0.0, 0.0]).unwrap()).unwrap();
    let y = t.softmax_rows(x).unwrap();
    assert_eq!(t.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn layer_norm_of_constant_row_is_zero_with_finite_grad() {
    let mut t = Tape::new();
    let x = t.input(Tensor::new([1, 4], vec![3.0; 4]).unwrap()).unwrap();
    let y = t.layer_norm_rows(x, 1e-5).unwrap();
    assert!(t.value(y).data().iter().all(|v| *v == 0.0));
    let w = t.constant(Tensor::new([1, 4], vec![1.0, -2.0, 0.5, 3.0]).unwrap()).unwrap();
    let p = t.mul(y, w).unwrap();
    let s = t.sum(p).unwrap();
    let g = t.backward(s).unwrap();
    assert!(g.wrt(x).unwrap().iter().all(|v| v.is_finite()));
}

#[test]
fn sum_of_squares_gradient_is_twice_w() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::new([2], vec![1.0, 2.0]).unwrap());
    let unused = store.add("unused", Tensor::new([3], vec![1.0, 1.0, 1.0]).unwrap());
    let mut t = Tape::new();
    let wv = t.param(&store, w);
    let sq = t.mul(wv, wv).unwrap();
    let loss = t.sum(sq).unwrap();
    let grads = t.backward(loss).unwrap().to_param_grads(&store);
    assert_eq!(grads.get(w), &[2.0, 4.0]);
    assert_eq!(grads.get(unused), &[0.0, 0.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut t = Tape::new();
    let x = t.input(Tensor::zeros([2, 2])).unwrap();
    assert!(matches!(t.backward(x), Err(TensorError::NotScalar(_))));
}

#[test]
fn shape_mismatch_is_reported() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros([2, 3])).unwrap();
    let b = t.constant(Tensor::zeros([2, 3])).unwrap();
    assert!(matches!(t.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
    let c = t.constant(Tensor::zeros([3, 2])).unwrap();
    assert!(matches!(t.add(a, c), Err(TensorError::ShapeMismatch { .. })));
}

#[test]
fn non_finite_values_raise_numeric_error() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::new([2], vec![1.0, 0.0]).unwrap()).unwrap();
    assert!(matches!(t.log(x), Err(TensorError::NumericError { op: "log" })));
}

#[test]
fn zero_row_l2_normalizes_to_zero() {
    let mut t = Tape::new();
    let x = t.input(Tensor::new([2, 2], vec![0.0, 0.0, 3.0, 4.0]).unwrap()).unwrap();
    let y = t.l2_normalize_rows(x).unwrap();
    assert_eq!(t.value(y).data(), &[0.0, 0.0, 0.6, 0.8]);
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    assert!(g.wrt(x).unwrap().iter().all(|v| v.is_finite()));
}

#[test]
fn quadratic_passes_tight_tolerance() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::new([3], vec![0.3, -1.2, 2.0]).unwrap());
    let report = finite_diff_check(
        &store,
        |t, s| {
            let wv = t.param(s, w);
            let sq = t.square(wv)?;
            let sc = t.scale(sq, 1.5)?;
            t.sum(sc)
        },
        H,
        1e-6,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
    assert_eq!(report.checked_scalars, 3);
}

#[test]
fn corrupted_backward_rule_fails_the_check() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::new([3], vec![0.3, -1.2, 2.0]).unwrap());
    let report = finite_diff_check(
        &store,
        |t, s| {
            let wv = t.param(s, w);
            let x = t.value(wv).data().to_vec();
            let value = Tensor::new([3], x.iter().map(|v| v * v).collect())?;
            // d(x^2)/dx reported as x instead of 2x
            let bad = t.custom(
                &[wv],
                value,
                Box::new(move |g| vec![g.iter().zip(&x).map(|(g, x)| g * x).collect()]),
            )?;
            t.sum(bad)
        },
        H,
        TOL,
    )
    .unwrap();
    assert!(!report.passed);
    assert!(report.max_rel_error > 0.4);
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let run = || {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::randn([4, 5], 1.0, &mut rng(9)));
        let b = store.add("b", Tensor::randn([5, 3], 1.0, &mut rng(10)));
        let mut t = Tape::new();
        let (av, bv) = (t.param(&store, a), t.param(&store, b));
        let m = t.matmul(av, bv).unwrap();
        let s = t.softmax_rows(m).unwrap();
        let l = t.log(s).unwrap();
        let loss = t.mean(l).unwrap();
        let g = t.backward(loss).unwrap().to_param_grads(&store);
        (t.scalar(loss), g)
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert_eq!(g1, g2);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..6, seed in 0u64..1000) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::randn([rows, cols], 3.0, &mut rng(seed))).unwrap();
        let y = t.softmax_rows(x).unwrap();
        for r in t.value(y).data().chunks(cols) {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn l2_rows_have_unit_norm(rows in 1usize..5, cols in 1usize..6, seed in 0u64..1000) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::randn([rows, cols], 2.0, &mut rng(seed))).unwrap();
        let y = t.l2_normalize_rows(x).unwrap();
        for r in t.value(y).data().chunks(cols) {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn matmul_chain_gradcheck_on_random_shapes(m in 1usize..4, k in 1usize..4, n in 1usize..4, seed in 0u64..200) {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::randn([m, k], 1.0, &mut rng(seed)));
        let b = store.add("b", Tensor::randn([k, n], 1.0, &mut rng(seed + 1)));
        let report = finite_diff_check(&store, |t, s| {
            let (av, bv) = (t.param(s, a), t.param(s, b));
            let y = t.matmul(av, bv)?;
            let y = t.tanh(y)?;
            probe(t, y, seed)
        }, H, TOL).unwrap();
        prop_assert!(report.passed, "{:?}", report);
    }
}
