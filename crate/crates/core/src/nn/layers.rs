use ndarray::{Array, Array2, Array3, Axis, Dimension, Ix1, Ix2};
use rand::Rng as _;

use super::{glorot_limit, join, Mode, Param, Parameterized, Real};
use crate::error::{Error, Result};
use crate::seed::Rng;

/// Fully connected layer `y = x·W + b` with `W` stored `(inputs, outputs)`.
#[derive(Debug, Clone)]
pub struct Dense<F> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    cache: Option<Array2<F>>,
}

impl<F: Real> Dense<F> {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Self {
            weight: Param::uniform(&[inputs, outputs], glorot_limit(inputs, outputs), rng),
            bias: Param::zeros(&[outputs]),
            cache: None,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Param::zeros(&[inputs, outputs]),
            bias: Param::zeros(&[outputs]),
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn infer(&self, x: &Array2<F>) -> Result<Array2<F>> {
        if x.ncols() != self.inputs() {
            return Err(Error::shape("dense input", &[self.inputs()], &[x.ncols()]));
        }
        let w = self.weight.value.view().into_dimensionality::<Ix2>().expect("weight");
        let b = self.bias.value.view().into_dimensionality::<Ix1>().expect("bias");
        let mut y = x.dot(&w);
        y += &b;
        Ok(y)
    }

    pub fn forward(&mut self, x: &Array2<F>) -> Result<Array2<F>> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array2<F>) -> Result<Array2<F>> {
        let x = self.cache.take().ok_or(Error::NoForward("dense"))?;
        if dy.dim() != (x.nrows(), self.outputs()) {
            return Err(Error::shape("dense upstream gradient", &[x.nrows(), self.outputs()], dy.shape()));
        }
        let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().expect("weight grad");
        gw += &x.t().dot(dy);
        let mut gb = self.bias.grad.view_mut().into_dimensionality::<Ix1>().expect("bias grad");
        gb += &dy.sum_axis(Axis(0));
        let w = self.weight.value.view().into_dimensionality::<Ix2>().expect("weight");
        Ok(dy.dot(&w.t()))
    }
}

impl<F: Real> Parameterized<F> for Dense<F> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone)]
pub struct Relu<F, D: Dimension> {
    cache: Option<Array<F, D>>,
}

impl<F, D: Dimension> Default for Relu<F, D> {
    fn default() -> Self {
        Self { cache: None }
    }
}

impl<F: Real, D: Dimension> Relu<F, D> {
    pub fn infer(x: &Array<F, D>) -> Array<F, D> {
        x.mapv(|v| if v > F::zero() { v } else { F::zero() })
    }

    pub fn forward(&mut self, x: &Array<F, D>) -> Array<F, D> {
        let y = Self::infer(x);
        self.cache = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Array<F, D>) -> Result<Array<F, D>> {
        let y = self.cache.take().ok_or(Error::NoForward("relu"))?;
        if y.shape() != dy.shape() {
            return Err(Error::shape("relu upstream gradient", y.shape(), dy.shape()));
        }
        let mut dx = dy.clone();
        dx.zip_mut_with(&y, |d, &out| {
            if out <= F::zero() {
                *d = F::zero();
            }
        });
        Ok(dx)
    }
}

/// Inverted dropout: kept activations are scaled by `1 / (1 - rate)` during
/// training, and evaluation is the identity.
#[derive(Debug, Clone)]
pub struct Dropout<F> {
    rate: f64,
    cache: Option<Option<Array2<F>>>,
}

impl<F: Real> Dropout<F> {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {rate} not in [0, 1)")));
        }
        Ok(Self { rate, cache: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward(&mut self, x: &Array2<F>, mode: Mode, rng: &mut Rng) -> Array2<F> {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.cache = Some(None);
            return x.clone();
        }
        let scale = F::of(1.0 / (1.0 - self.rate));
        let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
            if rng.random::<f64>() < self.rate {
                F::zero()
            } else {
                scale
            }
        });
        let y = x * &mask;
        self.cache = Some(Some(mask));
        y
    }

    pub fn backward(&mut self, dy: &Array2<F>) -> Result<Array2<F>> {
        match self.cache.take().ok_or(Error::NoForward("dropout"))? {
            None => Ok(dy.clone()),
            Some(mask) => {
                if mask.dim() != dy.dim() {
                    return Err(Error::shape("dropout upstream gradient", mask.shape(), dy.shape()));
                }
                Ok(dy * &mask)
            }
        }
    }
}

/// Maximum over the time axis: `(batch, time, channels) -> (batch, channels)`.
/// Gradient flows only to the first position attaining the maximum.
#[derive(Debug, Clone, Default)]
pub struct GlobalMaxPool {
    cache: Option<(usize, Array2<usize>)>,
}

impl GlobalMaxPool {
    fn pool<F: Real>(x: &Array3<F>) -> Result<(Array2<F>, Array2<usize>)> {
        let (b, l, c) = x.dim();
        if l == 0 {
            return Err(Error::shape("max pool length", &[1], &[0]));
        }
        let mut out = Array2::from_elem((b, c), F::neg_infinity());
        let mut arg = Array2::zeros((b, c));
        for bi in 0..b {
            for t in 0..l {
                for ch in 0..c {
                    let v = x[[bi, t, ch]];
                    if v > out[[bi, ch]] {
                        out[[bi, ch]] = v;
                        arg[[bi, ch]] = t;
                    }
                }
            }
        }
        Ok((out, arg))
    }

    pub fn infer<F: Real>(x: &Array3<F>) -> Result<Array2<F>> {
        Ok(Self::pool(x)?.0)
    }

    pub fn forward<F: Real>(&mut self, x: &Array3<F>) -> Result<Array2<F>> {
        let (out, arg) = Self::pool(x)?;
        self.cache = Some((x.dim().1, arg));
        Ok(out)
    }

    pub fn backward<F: Real>(&mut self, dy: &Array2<F>) -> Result<Array3<F>> {
        let (l, arg) = self.cache.take().ok_or(Error::NoForward("max pool"))?;
        let (b, c) = arg.dim();
        if dy.dim() != (b, c) {
            return Err(Error::shape("max pool upstream gradient", &[b, c], dy.shape()));
        }
        let mut dx = Array3::zeros((b, l, c));
        for ((bi, ch), &t) in arg.indexed_iter() {
            dx[[bi, t, ch]] = dy[[bi, ch]];
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_rel_error, numeric_grad};
    use crate::seed::rng_from_seed;
    use ndarray::{array, ArrayD};

    fn random2(shape: (usize, usize), rng: &mut Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn max_pool_examples() {
        let x = Array3::from_shape_vec((1, 3, 1), vec![-1.0, 3.0, 2.0]).unwrap();
        assert_eq!(GlobalMaxPool::infer(&x).unwrap(), array![[3.0]]);
        let x = Array3::from_elem((1, 4, 1), 0.7);
        assert_eq!(GlobalMaxPool::infer(&x).unwrap(), array![[0.7]]);
    }

    #[test]
    fn max_pool_gradient_routes_to_argmax() {
        let mut rng = rng_from_seed(1);
        let x = Array3::from_shape_simple_fn((2, 5, 3), || rng.random_range(-1.0..1.0f64));
        let up = random2((2, 3), &mut rng);
        let mut pool = GlobalMaxPool::default();
        pool.forward(&x).unwrap();
        let dx = pool.backward(&up).unwrap();
        let mut xv: Vec<f64> = x.iter().copied().collect();
        let num = numeric_grad(&mut xv, 1e-5, |v| {
            let x = Array3::from_shape_vec((2, 5, 3), v.to_vec()).unwrap();
            (GlobalMaxPool::infer(&x).unwrap() * &up).sum()
        });
        assert!(max_rel_error(&dx.iter().copied().collect::<Vec<_>>(), &num, 1e-6) < 1e-4);
        assert_eq!(dx.iter().filter(|&&v| v != 0.0).count(), 6);
    }

    #[test]
    fn dense_gradients() {
        let mut rng = rng_from_seed(2);
        let mut d = Dense::<f64>::new(4, 3, &mut rng);
        d.bias.value.assign(&array![0.5, -0.5, 0.1].into_dyn());
        let x = random2((5, 4), &mut rng);
        let up = random2((5, 3), &mut rng);
        d.forward(&x).unwrap();
        let dx = d.backward(&up).unwrap();
        let mut xv: Vec<f64> = x.iter().copied().collect();
        let num = numeric_grad(&mut xv, 1e-5, |v| {
            (d.infer(&Array2::from_shape_vec((5, 4), v.to_vec()).unwrap()).unwrap() * &up).sum()
        });
        assert!(max_rel_error(&dx.iter().copied().collect::<Vec<_>>(), &num, 1e-6) < 1e-4);

        let probe = d.clone();
        let mut wv: Vec<f64> = d.weight.value.iter().copied().collect();
        let num = numeric_grad(&mut wv, 1e-5, |v| {
            let mut m = probe.clone();
            m.weight.value = ArrayD::from_shape_vec(vec![4, 3], v.to_vec()).unwrap();
            (m.infer(&x).unwrap() * &up).sum()
        });
        assert!(max_rel_error(&d.weight.grad.iter().copied().collect::<Vec<_>>(), &num, 1e-6) < 1e-4);
    }

    #[test]
    fn relu_gradient() {
        let mut rng = rng_from_seed(3);
        let x = random2((4, 6), &mut rng);
        let up = random2((4, 6), &mut rng);
        let mut relu = Relu::<f64, ndarray::Ix2>::default();
        relu.forward(&x);
        let dx = relu.backward(&up).unwrap();
        let mut xv: Vec<f64> = x.iter().copied().collect();
        let num = numeric_grad(&mut xv, 1e-5, |v| {
            (Relu::infer(&Array2::from_shape_vec((4, 6), v.to_vec()).unwrap()) * &up).sum()
        });
        assert!(max_rel_error(&dx.iter().copied().collect::<Vec<_>>(), &num, 1e-6) < 1e-4);
    }

    #[test]
    fn dropout_behaviour() {
        let mut rng = rng_from_seed(4);
        let x = random2((8, 8), &mut rng);
        let mut none = Dropout::<f64>::new(0.0).unwrap();
        assert_eq!(none.forward(&x, Mode::Train, &mut rng), x);
        let mut d = Dropout::<f64>::new(0.5).unwrap();
        assert_eq!(d.forward(&x, Mode::Eval, &mut rng), x);
        let y = d.forward(&x, Mode::Train, &mut rng);
        for (a, b) in y.iter().zip(&x) {
            assert!(*a == 0.0 || (*a - 2.0 * b).abs() < 1e-15);
        }
        let up = random2((8, 8), &mut rng);
        let dx = d.backward(&up).unwrap();
        for ((g, u), out) in dx.iter().zip(&up).zip(&y) {
            assert!(if *out == 0.0 { *g == 0.0 } else { (*g - 2.0 * u).abs() < 1e-15 });
        }
        assert!(Dropout::<f64>::new(1.0).is_err());
    }

    #[test]
    fn backward_without_forward() {
        let mut d = Dense::<f64>::zeros(2, 2);
        assert!(matches!(d.backward(&Array2::zeros((1, 2))), Err(Error::NoForward(_))));
        let mut p = GlobalMaxPool::default();
        assert!(p.backward(&Array2::<f64>::zeros((1, 2))).is_err());
        let mut r = Relu::<f64, ndarray::Ix2>::default();
        assert!(r.backward(&Array2::zeros((1, 2))).is_err());
    }
}
