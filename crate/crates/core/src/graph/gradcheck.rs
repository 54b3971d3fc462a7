//! Central-difference gradient estimation, used as an independent oracle
//! against the analytic backward pass.

use crate::error::{Error, Result};
use crate::graph::params::{ParamId, ParamStore};

/// Numerically estimates `d f / d param` one coordinate at a time with
/// central differences: `(f(p + h) - f(p - h)) / (2h)`. The store is
/// restored to its original values before returning.
pub fn finite_difference_grad<F>(
    store: &mut ParamStore,
    id: ParamId,
    h: f64,
    mut f: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&ParamStore) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Usage(format!("step size must be positive, got {h}")));
    }
    let n = store.value(id).len();
    let mut grad = vec![0.0; n];
    for k in 0..n {
        let original = store.value(id).data()[k];
        store.get_mut(id).value.data_mut()[k] = original + h;
        let plus = f(store);
        store.get_mut(id).value.data_mut()[k] = original - h;
        let minus = f(store);
        store.get_mut(id).value.data_mut()[k] = original;
        grad[k] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Relative gap `|a - b| / max(|a|, |b|, floor)`. The floor keeps the
/// comparison meaningful when both values are near zero, where the absolute
/// difference is all that matters.
pub fn relative_gap(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest elementwise [`relative_gap`] between two gradient vectors.
pub fn max_relative_gap(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    debug_assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| relative_gap(*a, *b, floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tensor::{Tensor1, Tensor2};
    use crate::graph::Graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn central_difference_of_square_matches_derivative() {
        let mut store = ParamStore::new();
        let w = store.add_vec("w", Tensor1::new(vec![3.0]).unwrap());
        let grad = finite_difference_grad(&mut store, w, 1e-5, |s| {
            let v = s.value(w).data()[0];
            v * v
        })
        .unwrap();
        assert!((grad[0] - 6.0).abs() < 1e-8, "got {}", grad[0]);
        // the probe restores the parameter
        assert_eq!(store.value(w).data()[0], 3.0);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut store = ParamStore::new();
        let w = store.add_vec("w", Tensor1::new(vec![1.5, -2.0]).unwrap());
        let grad = finite_difference_grad(&mut store, w, 1e-5, |_| 42.0).unwrap();
        assert_eq!(grad, vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_non_positive_step() {
        let mut store = ParamStore::new();
        let w = store.add_vec("w", Tensor1::new(vec![1.0]).unwrap());
        assert!(finite_difference_grad(&mut store, w, 0.0, |_| 0.0).is_err());
        assert!(finite_difference_grad(&mut store, w, -1e-5, |_| 0.0).is_err());
    }

    /// Analytic gradients of a small randomly initialized MLP agree with the
    /// numeric estimate on every parameter coordinate.
    #[test]
    fn backward_matches_central_differences_on_a_small_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let init_mat = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
            Tensor2::new(r, c, (0..r * c).map(|_| rng.random_range(-0.8..0.8)).collect())
                .unwrap()
        };
        let w1 = store.add_mat("w1", init_mat(&mut rng, 4, 3));
        let b1 = store.add_vec(
            "b1",
            Tensor1::new((0..4).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap(),
        );
        let w2 = store.add_mat("w2", init_mat(&mut rng, 1, 4));
        let b2 = store.add_vec(
            "b2",
            Tensor1::new(vec![rng.random_range(-0.5..0.5)]).unwrap(),
        );
        let x = vec![0.3, -0.6, 0.9];

        let eval = |s: &ParamStore| -> f64 {
            let mut g = Graph::new(s);
            let xn = g.input(x.clone()).unwrap();
            let h = g.affine(w1, b1, xn).unwrap();
            let h = g.relu(h);
            let y = g.affine(w2, b2, h).unwrap();
            let sq = g.square(y);
            g.value(sq)[0]
        };

        let analytic = {
            let mut g = Graph::new(&store);
            let xn = g.input(x.clone()).unwrap();
            let h = g.affine(w1, b1, xn).unwrap();
            let h = g.relu(h);
            let y = g.affine(w2, b2, h).unwrap();
            let sq = g.square(y);
            g.backward(sq).unwrap()
        };

        for id in [w1, b1, w2, b2] {
            let numeric = finite_difference_grad(&mut store, id, 1e-5, eval).unwrap();
            let gap = max_relative_gap(analytic.get(id), &numeric, 1e-3);
            assert!(gap <= 1e-5, "param {:?}: gap {gap}", id);
        }
    }
}
