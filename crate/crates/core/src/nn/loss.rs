use ndarray::{Array2, Axis};

use super::{Parameterized, Real};
use crate::error::{Error, Result};

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax<F: Real>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax<F: Real>(logits: &Array2<F>) -> Array2<F> {
    log_softmax(logits).mapv(F::exp)
}

/// Mean cross-entropy of `labels` under `softmax(logits)` and its gradient
/// with respect to the logits.
pub fn softmax_cross_entropy<F: Real>(logits: &Array2<F>, labels: &[usize]) -> Result<(F, Array2<F>)> {
    let (b, k) = logits.dim();
    if labels.len() != b {
        return Err(Error::shape("cross-entropy labels", &[b], &[labels.len()]));
    }
    if b == 0 {
        return Err(Error::EmptyDataset);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    let logp = log_softmax(logits);
    let inv_b = F::one() / F::of(b as f64);
    let loss = -labels
        .iter()
        .enumerate()
        .map(|(i, &l)| logp[[i, l]])
        .sum::<F>()
        * inv_b;
    let mut grad = logp.mapv(F::exp);
    for (i, &l) in labels.iter().enumerate() {
        grad[[i, l]] -= F::one();
    }
    grad.mapv_inplace(|g| g * inv_b);
    Ok((loss, grad))
}

/// `λ · Σ w²` over parameters selected by `include`, adding `2λw` to their gradients.
pub fn l2_penalty<F: Real>(
    module: &mut dyn Parameterized<F>,
    prefix: &str,
    lambda: f64,
    include: &dyn Fn(&str) -> bool,
) -> F {
    if lambda == 0.0 {
        return F::zero();
    }
    let lam = F::of(lambda);
    let two_lam = F::of(2.0 * lambda);
    let mut total = F::zero();
    module.visit_params_mut(prefix, &mut |name, p| {
        if include(name) {
            total += p.value.iter().map(|&w| w * w).sum::<F>() * lam;
            p.grad.zip_mut_with(&p.value, |g, &w| *g += two_lam * w);
        }
    });
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_rel_error, numeric_grad};
    use crate::nn::{Dense, Parameterized};
    use crate::seed::rng_from_seed;
    use ndarray::array;
    use rand::Rng as _;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Array2::<f64>::zeros((3, 11));
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 5, 10]).unwrap();
        assert!((loss - 11f64.ln()).abs() < 1e-12);
        assert!((loss - 2.3979).abs() < 1e-4);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = rng_from_seed(0);
        let logits = Array2::from_shape_simple_fn((20, 11), || rng.random_range(-30.0..30.0f64));
        let p = softmax(&logits);
        for row in p.axis_iter(Axis(0)) {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn shift_invariance() {
        let logits: Array2<f64> = array![[0.3, -1.0, 2.0]];
        let shifted = &logits + 7.5;
        let a = softmax(&logits);
        let b = softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn label_out_of_range() {
        let logits = Array2::<f64>::zeros((1, 11));
        assert!(matches!(
            softmax_cross_entropy(&logits, &[11]),
            Err(Error::LabelOutOfRange { label: 11, classes: 11 })
        ));
    }

    #[test]
    fn cross_entropy_gradient() {
        let mut rng = rng_from_seed(1);
        let logits = Array2::from_shape_simple_fn((4, 5), || rng.random_range(-2.0..2.0f64));
        let labels = [0, 3, 4, 1];
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        let mut v: Vec<f64> = logits.iter().copied().collect();
        let num = numeric_grad(&mut v, 1e-5, |v| {
            softmax_cross_entropy(&Array2::from_shape_vec((4, 5), v.to_vec()).unwrap(), &labels)
                .unwrap()
                .0
        });
        assert!(max_rel_error(&g.iter().copied().collect::<Vec<_>>(), &num, 1e-6) < 1e-4);
    }

    #[test]
    fn l2_of_square() {
        // f(w) = w² at w = 3: value 9, gradient 6
        let mut d = Dense::<f64>::zeros(1, 1);
        d.weight.value.fill(3.0);
        let v = l2_penalty(&mut d, "", 1.0, &|n| n == "weight");
        assert_eq!(v, 9.0);
        assert_eq!(d.weight.grad[[0, 0]], 6.0);
        assert_eq!(d.bias.grad[[0]], 0.0);
    }

    #[test]
    fn l2_zero_lambda() {
        let mut d = Dense::<f64>::new(3, 3, &mut rng_from_seed(0));
        assert_eq!(l2_penalty(&mut d, "", 0.0, &|_| true), 0.0);
        let mut total = 0.0;
        d.visit_params("", &mut |_, p| total += p.grad.sum());
        assert_eq!(total, 0.0);
    }
}
