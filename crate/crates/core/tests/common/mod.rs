//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use contramod_core::contrastive::nt_xent;
use contramod_core::dataio::{split, Dataset, SplitRatio};
use contramod_core::nn::{softmax_cross_entropy, Conv1d, Dense, Dropout, GlobalMaxPool, Lstm, Mode, Parameterized, Relu};
use contramod_core::seed::rng_from_seed;
use contramod_core::sigsyn::{generate_dataset, ModulationScheme, SynthSpec};
use ndarray::{Array, Array2, Array3, Dimension, Ix2, Ix3};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

/// Max over entries of |a − n| / max(|a|, |n|, 1e-6).
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR))
        .fold(0.0, f64::max)
}

pub fn central_diff(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let up = f(x);
            x[i] = orig - FD_STEP;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn random_array<D: Dimension>(shape: D, seed: u64) -> Array<f64, D> {
    let mut rng = rng_from_seed(seed);
    Array::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}

/// Straightforward double-loop NT-Xent: rows 2k and 2k+1 are positives.
pub fn nt_xent_oracle(z: &Array2<f64>, tau: f64) -> f64 {
    let n = z.nrows();
    let sim = |a: usize, b: usize| {
        let (ra, rb) = (z.row(a), z.row(b));
        ra.dot(&rb) / (ra.dot(&ra).sqrt() * rb.dot(&rb).sqrt())
    };
    let mut total = 0.0;
    for i in 0..n {
        let pos = i ^ 1;
        let mut denom = 0.0;
        for k in 0..n {
            if k != i {
                denom += (sim(i, k) / tau).exp();
            }
        }
        total += -((sim(i, pos) / tau).exp() / denom).ln();
    }
    total / n as f64
}

/// Loss `sum(w ⊙ y)` against a fixed random weighting.
fn weighted<D: Dimension>(y: &Array<f64, D>, w: &Array<f64, D>) -> f64 {
    (y * w).sum()
}

fn param_count(m: &dyn Parameterized<f64>) -> usize {
    m.param_count()
}

fn nudge(m: &mut dyn Parameterized<f64>, flat: usize, delta: f64) {
    let mut offset = 0;
    m.visit_params_mut("", &mut |_, p| {
        if flat >= offset && flat < offset + p.len() {
            let v = p.value.iter_mut().nth(flat - offset).unwrap();
            *v += delta;
        }
        offset += p.len();
    });
}

fn flat_grads(m: &dyn Parameterized<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    m.visit_params("", &mut |_, p| out.extend(p.grad.iter().copied()));
    out
}

/// Finite differences over every parameter entry of `m`.
fn param_numeric(m: &mut dyn Parameterized<f64>, loss: &dyn Fn(&dyn Parameterized<f64>) -> f64) -> Vec<f64> {
    (0..param_count(m))
        .map(|k| {
            nudge(m, k, FD_STEP);
            let up = loss(m);
            nudge(m, k, -2.0 * FD_STEP);
            let down = loss(m);
            nudge(m, k, FD_STEP);
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn dense_grad_error() -> f64 {
    let mut layer = Dense::<f64>::new(5, 4, &mut rng_from_seed(1));
    let x = random_array(Ix2(3, 5), 2);
    let w = random_array(Ix2(3, 4), 3);
    layer.zero_grad();
    layer.forward(&x).unwrap();
    let dx = layer.backward(&w).unwrap();
    let analytic = flat_grads(&layer);
    let mut xs = x.iter().copied().collect::<Vec<_>>();
    let num_x = central_diff(&mut xs, |v| {
        weighted(&layer.infer(&Array2::from_shape_vec((3, 5), v.to_vec()).unwrap()).unwrap(), &w)
    });
    let template = layer.clone();
    let num_p = param_numeric(&mut layer, &|m| weighted(&copy_params(m, template.clone()).infer(&x).unwrap(), &w));
    max_rel_error(&dx.iter().copied().collect::<Vec<_>>(), &num_x).max(max_rel_error(&analytic, &num_p))
}

fn copy_params<M: Parameterized<f64>>(from: &dyn Parameterized<f64>, mut to: M) -> M {
    let mut values = Vec::new();
    from.visit_params("", &mut |_, p| values.push(p.value.clone()));
    let mut k = 0;
    to.visit_params_mut("", &mut |_, p| {
        p.value.assign(&values[k]);
        k += 1;
    });
    to
}

fn seq_grad_error<M: Parameterized<f64> + Clone>(
    mut layer: M,
    x: Array3<f64>,
    out_dim: (usize, usize, usize),
    infer: impl Fn(&M, &Array3<f64>) -> Array3<f64>,
    forward: impl Fn(&mut M, &Array3<f64>) -> Array3<f64>,
    backward: impl Fn(&mut M, &Array3<f64>) -> Array3<f64>,
) -> f64 {
    let w = random_array(Ix3(out_dim.0, out_dim.1, out_dim.2), 9);
    layer.zero_grad();
    let y = forward(&mut layer, &x);
    assert_eq!(y.dim(), out_dim);
    let dx = backward(&mut layer, &w);
    let analytic = flat_grads(&layer);
    let shape = x.raw_dim();
    let mut xs = x.iter().copied().collect::<Vec<_>>();
    let num_x = central_diff(&mut xs, |v| {
        weighted(&infer(&layer, &Array3::from_shape_vec(shape, v.to_vec()).unwrap()), &w)
    });
    let template = layer.clone();
    let num_p = param_numeric(&mut layer, &|m| {
        let l = copy_params(m, template.clone());
        weighted(&infer(&l, &x), &w)
    });
    max_rel_error(&dx.iter().copied().collect::<Vec<_>>(), &num_x).max(max_rel_error(&analytic, &num_p))
}

pub fn conv_grad_error() -> f64 {
    let layer = Conv1d::<f64>::new(3, 4, 3, &mut rng_from_seed(4));
    seq_grad_error(
        layer,
        random_array(Ix3(2, 7, 3), 5),
        (2, 7, 4),
        |l, x| l.infer(x).unwrap(),
        |l, x| l.forward(x).unwrap(),
        |l, dy| l.backward(dy).unwrap(),
    )
}

pub fn lstm_grad_error() -> f64 {
    let layer = Lstm::<f64>::new(3, 4, &mut rng_from_seed(6));
    seq_grad_error(
        layer,
        random_array(Ix3(2, 6, 3), 7),
        (2, 6, 4),
        |l, x| l.infer(x).unwrap(),
        |l, x| l.forward(x).unwrap(),
        |l, dy| l.backward(dy).unwrap(),
    )
}

pub fn relu_grad_error() -> f64 {
    // Keep inputs away from the kink so the difference quotient is exact.
    let x = random_array(Ix2(4, 6), 10).mapv(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let w = random_array(Ix2(4, 6), 11);
    let mut relu = Relu::<f64, Ix2>::default();
    relu.forward(&x);
    let dx = relu.backward(&w).unwrap();
    let mut xs = x.iter().copied().collect::<Vec<_>>();
    let num = central_diff(&mut xs, |v| weighted(&Relu::infer(&Array2::from_shape_vec((4, 6), v.to_vec()).unwrap()), &w));
    max_rel_error(&dx.iter().copied().collect::<Vec<_>>(), &num)
}

pub fn maxpool_grad_error() -> f64 {
    let x = random_array(Ix3(2, 5, 3), 12);
    let w = random_array(Ix2(2, 3), 13);
    let mut pool = GlobalMaxPool::default();
    pool.forward(&x).unwrap();
    let dx = pool.backward(&w).unwrap();
    let mut xs = x.iter().copied().collect::<Vec<_>>();
    let num = central_diff(&mut xs, |v| {
        weighted(&GlobalMaxPool::infer(&Array3::from_shape_vec((2, 5, 3), v.to_vec()).unwrap()).unwrap(), &w)
    });
    max_rel_error(&dx.iter().copied().collect::<Vec<_>>(), &num)
}

pub fn dropout_grad_error() -> f64 {
    // With the mask fixed, dropout is linear; recover the mask from a ones input.
    let mut drop = Dropout::<f64>::new(0.4).unwrap();
    let ones = Array2::<f64>::ones((3, 8));
    let mask = drop.forward(&ones, Mode::Train, &mut rng_from_seed(14));
    let w = random_array(Ix2(3, 8), 15);
    let dx = drop.backward(&w).unwrap();
    let x = random_array(Ix2(3, 8), 16);
    let mut xs = x.iter().copied().collect::<Vec<_>>();
    let num = central_diff(&mut xs, |v| weighted(&(&Array2::from_shape_vec((3, 8), v.to_vec()).unwrap() * &mask), &w));
    max_rel_error(&dx.iter().copied().collect::<Vec<_>>(), &num)
}

pub fn cross_entropy_grad_error() -> f64 {
    let logits = random_array(Ix2(4, 5), 17) * 3.0;
    let labels = [0, 3, 4, 1];
    let (_, d) = softmax_cross_entropy(&logits, &labels).unwrap();
    let mut xs = logits.iter().copied().collect::<Vec<_>>();
    let num = central_diff(&mut xs, |v| {
        softmax_cross_entropy(&Array2::from_shape_vec((4, 5), v.to_vec()).unwrap(), &labels).unwrap().0
    });
    max_rel_error(&d.iter().copied().collect::<Vec<_>>(), &num)
}

pub fn nt_xent_grad_error(m: usize, dim: usize, tau: f64, seed: u64) -> f64 {
    let z = random_array(Ix2(2 * m, dim), seed);
    let (_, d) = nt_xent(&z, tau).unwrap();
    let mut xs = z.iter().copied().collect::<Vec<_>>();
    let num = central_diff(&mut xs, |v| nt_xent(&Array2::from_shape_vec((2 * m, dim), v.to_vec()).unwrap(), tau).unwrap().0);
    max_rel_error(&d.iter().copied().collect::<Vec<_>>(), &num)
}

/// Digital schemes only, split 2:1:1.
pub fn digital_dataset(snrs_db: Vec<i8>, frames_per_cell: usize, frame_len: usize, seed: u64) -> Dataset {
    let spec = SynthSpec {
        schemes: vec![ModulationScheme::Bpsk, ModulationScheme::Qpsk, ModulationScheme::Pam4, ModulationScheme::Qam16],
        snrs_db,
        frames_per_cell,
        frame_len,
        master_seed: seed,
        ..Default::default()
    };
    split(&generate_dataset(&spec).unwrap(), seed, SplitRatio::default()).unwrap()
}
