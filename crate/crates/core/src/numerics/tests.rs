use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn opts() -> GradCheckOptions {
    GradCheckOptions { coords_per_param: None, ..Default::default() }
}

/// Reduces an arbitrary output to a scalar with fixed random weights so
/// every output coordinate contributes a distinct gradient.
fn weighted_sum(g: &mut Graph<f64>, v: Var, seed: u64) -> Result<Var, NumericsError> {
    let shape = g.shape(v).to_vec();
    let w = g.constant(random(&shape, seed));
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

fn check(inputs: &[Tensor<f64>], f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericsError>) {
    let report = finite_diff_check_tensors(inputs, |g, x| { let y = f(g, x)?; weighted_sum(g, y, 99) }, &opts()).unwrap();
    assert!(report.passed(), "{:?}", report.failures);
    assert!(report.checked > 0);
}

#[test]
fn softmax_of_uniform_input() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap());
    let y = g.softmax(x);
    for &p in g.value(y).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn softmax_fully_masked_row_is_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(vec![2, 2], vec![0.5, 1.0, 0.0, 0.0]).unwrap());
    let mask = Tensor::new(vec![2, 2], vec![0.0, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap();
    let m = g.masked_add(x, Arc::new(mask)).unwrap();
    let y = g.softmax(m);
    assert_eq!(g.value(y).data(), &[1.0, 0.0, 0.0, 0.0]);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().iter().all(|v| v.is_finite()));
}

#[test]
fn layer_norm_rows_are_standardized() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(random(&[4, 16], 3));
    let gamma = g.constant(Tensor::full(&[16], 1.0));
    let beta = g.constant(Tensor::zeros(&[16]));
    let y = g.layer_norm(x, gamma, beta).unwrap();
    for r in 0..4 {
        let row = g.value(y).row(r);
        let mean: f64 = row.iter().sum::<f64>() / 16.0;
        let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-12);
        // eps = 1e-5 inside the root shrinks variance very slightly
        assert!((var - 1.0).abs() < 1e-3, "var {var}");
    }
}

#[test]
fn relu_clamps_negatives() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 2.0]);
}

#[test]
fn sum_gradient_is_all_ones() {
    let mut g = Graph::<f64>::new();
    let x = g.input(random(&[3, 5], 1));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().iter().all(|&v| v == 1.0));
}

#[test]
fn dot_product_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::<f64>::new();
    let x = g.input(random(&[2, 2], 1));
    assert!(matches!(g.backward(x), Err(NumericsError::NonScalarLoss(_))));
}

#[test]
fn matmul_shape_error_names_dims() {
    let mut g = Graph::<f64>::new();
    let a = g.input(random(&[2, 3], 1));
    let b = g.input(random(&[2, 3], 2));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn dropout_identity_cases() {
    let mut g = Graph::<f64>::training(7);
    let x = g.input(random(&[3, 3], 1));
    assert_eq!(g.dropout(x, 0.0), x);
    let mut e = Graph::<f64>::new();
    let y = e.input(random(&[3, 3], 1));
    assert_eq!(e.dropout(y, 0.9), y);
}

#[test]
fn dropout_scales_kept_units() {
    let mut g = Graph::<f64>::training(7);
    let x = g.constant(Tensor::full(&[1, 1000], 1.0));
    let y = g.dropout(x, 0.3);
    let v = g.value(y).data();
    assert!(v.iter().all(|&e| e == 0.0 || (e - 1.0 / 0.7).abs() < 1e-12));
    let kept = v.iter().filter(|&&e| e > 0.0).count();
    assert!((600..800).contains(&kept), "kept {kept}");
}

#[test]
fn constant_function_has_zero_gradients() {
    let x = random(&[2, 3], 5);
    let report = finite_diff_check_tensors(
        &[x],
        |g, _| Ok(g.constant(Tensor::scalar(4.2))),
        &opts(),
    )
    .unwrap();
    assert!(report.passed());
    assert_eq!(report.max_rel_err, 0.0);
}

#[test]
fn non_finite_output_is_an_error() {
    let x = Tensor::new(vec![1], vec![1.0]).unwrap();
    let err = finite_diff_check_tensors(
        &[x],
        |g, v| {
            let z = g.scale(v[0], 0.0);
            let l = g.ln(z, 0.0);
            Ok(g.sum(l))
        },
        &opts(),
    )
    .unwrap_err();
    assert!(matches!(err, NumericsError::NonFinite(_)));
}

#[test]
fn softmax_cross_entropy_gradcheck() {
    let logits = random(&[5, 7], 11);
    let report = finite_diff_check_tensors(
        &[logits],
        |g, v| g.cross_entropy(v[0], &[0, 3, 6, 2, 2], 0.2, Reduction::Mean),
        &opts(),
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.failures);
}

#[test]
fn cross_entropy_sum_reduction_gradcheck() {
    let logits = random(&[3, 4], 12);
    let report =
        finite_diff_check_tensors(&[logits], |g, v| g.cross_entropy(v[0], &[1, 0, 3], 0.0, Reduction::Sum), &opts())
            .unwrap();
    assert!(report.passed(), "{:?}", report.failures);
}

#[test]
fn cross_entropy_of_uniform_logits_is_log_vocab() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[3, 9]));
    let l = g.cross_entropy(x, &[0, 4, 8], 0.2, Reduction::Mean).unwrap();
    assert!((g.value(l).item() - 9f64.ln()).abs() < 1e-12);
}

#[test]
fn gradcheck_matmul_variants() {
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = if ta { random(&[4, 3], 1) } else { random(&[3, 4], 1) };
        let b = if tb { random(&[5, 4], 2) } else { random(&[4, 5], 2) };
        check(&[a, b], |g, v| g.matmul_ex(v[0], v[1], ta, tb));
    }
}

#[test]
fn gradcheck_matmul_self_product() {
    check(&[random(&[3, 4], 1)], |g, v| g.matmul_ex(v[0], v[0], false, true));
}

#[test]
fn gradcheck_elementwise() {
    let (a, b) = (random(&[3, 4], 1), random(&[3, 4], 2));
    check(&[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]));
    check(&[a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]));
    check(&[a.clone(), b], |g, v| g.mul(v[0], v[1]));
    check(&[a.clone()], |g, v| Ok(g.scale(v[0], -1.7)));
    check(&[a], |g, v| Ok(g.relu(v[0])));
}

#[test]
fn gradcheck_add_row() {
    check(&[random(&[3, 4], 1), random(&[4], 2)], |g, v| g.add_row(v[0], v[1]));
}

#[test]
fn gradcheck_concat_and_slice() {
    let (a, b) = (random(&[2, 3], 1), random(&[4, 3], 2));
    check(&[a.clone(), b], |g, v| g.concat_rows(&[v[0], v[1], v[0]]));
    let c = random(&[2, 5], 3);
    check(&[a, c], |g, v| g.concat_cols(&[v[1], v[0]]));
    check(&[random(&[5, 4], 4)], |g, v| g.slice_rows(v[0], 1, 3));
    check(&[random(&[5, 4], 5)], |g, v| g.slice_cols(v[0], 1, 2));
}

#[test]
fn gradcheck_softmax_and_mask() {
    check(&[random(&[3, 5], 1)], |g, v| Ok(g.softmax(v[0])));
    let mut mask = Tensor::zeros(&[3, 5]);
    mask.data_mut()[1] = f64::NEG_INFINITY;
    mask.data_mut()[7] = f64::NEG_INFINITY;
    let mask = Arc::new(mask);
    check(&[random(&[3, 5], 2)], move |g, v| {
        let m = g.masked_add(v[0], mask.clone())?;
        Ok(g.softmax(m))
    });
}

#[test]
fn gradcheck_layer_norm() {
    check(&[random(&[3, 6], 1), random(&[6], 2), random(&[6], 3)], |g, v| g.layer_norm(v[0], v[1], v[2]));
}

#[test]
fn gradcheck_embedding() {
    check(&[random(&[5, 3], 1)], |g, v| g.embedding(v[0], &[4, 0, 4, 2]));
}

#[test]
fn gradcheck_l2_normalize_and_ln() {
    check(&[random(&[3, 4], 1)], |g, v| Ok(g.l2_normalize(v[0])));
    let pos = Tensor::from_fn(&[2, 3], |i| 0.5 + i as f64 * 0.1);
    check(&[pos], |g, v| Ok(g.ln(v[0], 1e-12)));
}

#[test]
fn gradcheck_dropout_with_fixed_mask() {
    // A training graph re-seeded identically draws the same mask every evaluation.
    let x = random(&[3, 4], 1);
    let mut g = Graph::<f64>::training(5);
    let v = g.input(x.clone());
    let y = g.dropout(v, 0.5);
    let s = g.sum(y);
    g.backward(s).unwrap();
    let analytic = g.grad(v).unwrap().to_vec();
    let kept = g.value(y).data().iter().zip(x.data()).map(|(y, x)| y / x).collect::<Vec<_>>();
    for (a, k) in analytic.iter().zip(kept) {
        assert!((a - k).abs() < 1e-12);
    }
}

#[test]
fn l2_normalize_zero_row_stays_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(&[1, 3]));
    let y = g.l2_normalize(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut g = Graph::<f32>::training(3);
        let a = g.input(random(&[6, 8], 1).cast());
        let b = g.input(random(&[8, 5], 2).cast());
        let c = g.matmul(a, b).unwrap();
        let d = g.dropout(c, 0.3);
        let s = g.softmax(d);
        let l = g.cross_entropy(s, &[0, 1, 2, 3, 4, 0], 0.1, Reduction::Mean).unwrap();
        g.backward(l).unwrap();
        (g.grad(a).unwrap().to_vec(), g.grad(b).unwrap().to_vec())
    };
    let (x, y) = (run(), run());
    assert!(x.0.iter().zip(&y.0).all(|(p, q)| p.to_bits() == q.to_bits()));
    assert!(x.1.iter().zip(&y.1).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn gradients_accumulate_over_consumers() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(vec![2], vec![1.0, -3.0]).unwrap());
    let a = g.scale(x, 2.0);
    let b = g.scale(x, 5.0);
    let c = g.add(a, b).unwrap();
    let s = g.sum(c);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[7.0, 7.0]);
}

#[test]
fn param_store_copy_on_write() {
    let mut store = ParamStore::<f32>::new();
    let id = store.insert("w", Tensor::zeros(&[2]));
    let mut g = Graph::new();
    let bound = Bound::new(&mut g, &store, true);
    store.get_mut(id).data_mut()[0] = 1.0;
    assert_eq!(g.value(bound.get(id)).data(), &[0.0, 0.0]);
    assert_eq!(store.get(id).data(), &[1.0, 0.0]);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(data in proptest::collection::vec(-50.0f64..50.0, 12), cols in 1usize..5) {
        let rows = 12 / cols;
        let mut v = data[..rows * cols].to_vec();
        softmax_rows(&mut v, cols);
        for row in v.chunks(cols) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
