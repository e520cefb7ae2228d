//! A small batch-first neural-network engine.
//!
//! Layers record what they need during `forward` and consume it in
//! `backward`, which returns the gradient with respect to the layer input and
//! accumulates parameter gradients in place. A model's backward pass is the
//! reverse-order chain of its layers' backward calls. Calling `backward`
//! without a preceding `forward` is an error.
//!
//! Sequence tensors are laid out `(batch, time, channels)`.

pub mod checkpoint;
mod conv;
mod layers;
mod loss;
mod lstm;
mod optim;

pub use conv::Conv1d;
pub use layers::{Dense, Dropout, GlobalMaxPool, Relu};
pub use loss::{l2_penalty, log_softmax, softmax, softmax_cross_entropy};
pub use lstm::Lstm;
pub use optim::{Adam, AdamConfig, CosineSchedule};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{ArrayD, IxDyn, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng as _;

use crate::seed::Rng;

/// Floating-point element type. Training runs in `f32`; gradient checks use `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn sigmoid(self) -> Self {
        Self::one() / (Self::one() + (-self).exp())
    }

    /// Hyperbolic tangent as used by the recurrent layers.
    fn tanh_act(self) -> Self {
        self.tanh()
    }
}

// f32 activations go through a branch-free exp so the gate loops vectorize.
// Relative error of `exp_f32` is within a few ulp on [-87, 88].
impl Real for f32 {
    #[inline(always)]
    fn sigmoid(self) -> f32 {
        1.0 / (1.0 + exp_f32(-self))
    }

    #[inline(always)]
    fn tanh_act(self) -> f32 {
        1.0 - 2.0 / (exp_f32(2.0 * self) + 1.0)
    }
}

impl Real for f64 {}

#[inline(always)]
fn exp_f32(x: f32) -> f32 {
    const ROUND: f32 = 12_582_912.0; // 1.5 * 2^23
    let x = x.clamp(-87.0, 88.0);
    let n = (x * std::f32::consts::LOG2_E + ROUND) - ROUND;
    let r = x - n * 0.693_359_4 + n * 2.121_944_4e-4;
    let p = ((((1.987_569_1e-4 * r + 1.398_199_9e-3) * r + 8.333_452e-3) * r + 4.166_579_6e-2) * r
        + 1.666_666_5e-1)
        * r
        + 5.000_000_1e-1;
    let y = p * r * r + r + 1.0;
    y * f32::from_bits(((n as i32 + 127) as u32) << 23)
}

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
}

impl<F: Real> Param<F> {
    pub fn new(value: ArrayD<F>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)))
    }

    /// Uniform on [-limit, limit].
    pub fn uniform(shape: &[usize], limit: f64, rng: &mut Rng) -> Self {
        let value = ArrayD::from_shape_simple_fn(IxDyn(shape), || {
            F::of(rng.random_range(-limit..=limit))
        });
        Self::new(value)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

pub(crate) fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Anything holding named parameters. Visit order is the declaration order
/// and is stable, which fixes the order of checkpoints and optimizer state.
pub trait Parameterized<F: Real> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>));

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.len());
        n
    }

    fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(prefix, &mut |name, _| names.push(name.to_string()));
        names
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Snapshot of a module's parameter values, in visit order.
pub type ParameterTree<F> = Vec<(String, ArrayD<F>)>;

pub fn snapshot<F: Real>(module: &dyn Parameterized<F>, prefix: &str) -> ParameterTree<F> {
    let mut out = Vec::new();
    module.visit_params(prefix, &mut |name, p| out.push((name.to_string(), p.value.clone())));
    out
}

/// Restores values captured by [`snapshot`]. Names missing from `tree` are left untouched.
pub fn restore<F: Real>(module: &mut dyn Parameterized<F>, prefix: &str, tree: &ParameterTree<F>) {
    module.visit_params_mut(prefix, &mut |name, p| {
        if let Some((_, v)) = tree.iter().find(|(n, _)| n == name) {
            p.value.assign(v);
        }
    });
}

/// Training switches dropout on; evaluation makes every layer deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central finite-difference oracle for unit tests.

    /// Max over entries of |a − n| / max(|a|, |n|, floor).
    pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
            .fold(0.0, f64::max)
    }

    #[test]
    fn fast_f32_activations() {
        let mut x = -30.0f32;
        while x < 30.0 {
            let s = 1.0 / (1.0 + (-(x as f64)).exp());
            assert!((super::Real::sigmoid(x) as f64 - s).abs() < 1e-6, "sigmoid {x}");
            assert!((super::Real::tanh_act(x) as f64 - (x as f64).tanh()).abs() < 1e-6, "tanh {x}");
            let e = super::exp_f32(x.clamp(-20.0, 20.0)) as f64;
            let r = (x.clamp(-20.0, 20.0) as f64).exp();
            assert!(((e - r) / r).abs() < 1e-6, "exp {x}");
            x += 0.0137;
        }
        assert_eq!(super::Real::tanh_act(200.0f32), 1.0);
        assert_eq!(super::Real::tanh_act(-200.0f32), -1.0);
        assert!(super::Real::sigmoid(-200.0f32) < 1e-30);
    }

    pub fn numeric_grad(x: &mut [f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let orig = x[i];
                x[i] = orig + h;
                let up = f(x);
                x[i] = orig - h;
                let down = f(x);
                x[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }
}
