use ndarray::{s, Array1, Array2, Array3, ArrayView3, Axis, IxDyn};

use super::{glorot_limit, join, Param, Parameterized, Real};
use crate::error::{Error, Result};
use crate::seed::Rng;

/// 1-D cross-correlation over time with "same" zero padding.
///
/// For even kernel sizes the extra padding goes on the right, so output
/// position `t` sees inputs `t - (K-1)/2 ..= t + K/2`.
#[derive(Debug, Clone)]
pub struct Conv1d<F> {
    /// `(out_channels, in_channels, kernel)`
    pub weight: Param<F>,
    pub bias: Param<F>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    cache: Option<Array3<F>>,
}

// Target im2col buffer size, in elements.
const COLS_BUDGET: usize = 1 << 18;

impl<F: Real> Conv1d<F> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut Rng) -> Self {
        let limit = glorot_limit(in_channels * kernel, out_channels * kernel);
        Self {
            weight: Param::uniform(&[out_channels, in_channels, kernel], limit, rng),
            bias: Param::zeros(&[out_channels]),
            in_channels,
            out_channels,
            kernel,
            cache: None,
        }
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            weight: Param::zeros(&[out_channels, in_channels, kernel]),
            bias: Param::zeros(&[out_channels]),
            in_channels,
            out_channels,
            kernel,
            cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    fn pad_left(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// Weight reshaped to `(kernel * in_channels, out_channels)`.
    fn weight_matrix(&self) -> Array2<F> {
        let (co, ci, k) = (self.out_channels, self.in_channels, self.kernel);
        let w = self.weight.value.view().into_shape_with_order(IxDyn(&[co, ci, k])).expect("weight shape");
        Array2::from_shape_fn((k * ci, co), |(row, o)| w[[o, row % ci, row / ci]])
    }

    fn check_input(&self, x: &ArrayView3<F>) -> Result<()> {
        let (_, l, c) = x.dim();
        if c != self.in_channels {
            return Err(Error::shape("conv1d input channels", &[self.in_channels], &[c]));
        }
        if self.kernel > l {
            return Err(Error::shape("conv1d kernel vs length", &[l], &[self.kernel]));
        }
        Ok(())
    }

    fn im2col(&self, x: &ArrayView3<F>) -> Array2<F> {
        let (b, l, c) = x.dim();
        let k = self.kernel;
        let pad = self.pad_left() as isize;
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut cols = Array2::zeros((b * l, k * c));
        let cs = cols.as_slice_mut().expect("fresh array");
        for bi in 0..b {
            for t in 0..l {
                let row = (bi * l + t) * k * c;
                for kk in 0..k {
                    let src = t as isize + kk as isize - pad;
                    if src >= 0 && (src as usize) < l {
                        let from = (bi * l + src as usize) * c;
                        cs[row + kk * c..row + (kk + 1) * c].copy_from_slice(&xs[from..from + c]);
                    }
                }
            }
        }
        cols
    }

    fn chunk(&self, l: usize) -> usize {
        (COLS_BUDGET / (l * self.kernel * self.in_channels).max(1)).max(1)
    }

    /// Forward pass without recording anything for backward.
    pub fn infer(&self, x: &Array3<F>) -> Result<Array3<F>> {
        self.check_input(&x.view())?;
        let (b, l, _) = x.dim();
        let wm = self.weight_matrix();
        let bias = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().expect("bias");
        let mut out = Array3::zeros((b, l, self.out_channels));
        let step = self.chunk(l);
        for start in (0..b).step_by(step) {
            let end = (start + step).min(b);
            let cols = self.im2col(&x.slice(s![start..end, .., ..]));
            let mut y = cols.dot(&wm);
            y += &bias;
            let y = y
                .into_shape_with_order((end - start, l, self.out_channels))
                .expect("conv output");
            out.slice_mut(s![start..end, .., ..]).assign(&y);
        }
        Ok(out)
    }

    pub fn forward(&mut self, x: &Array3<F>) -> Result<Array3<F>> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array3<F>) -> Result<Array3<F>> {
        let x = self.cache.take().ok_or(Error::NoForward("conv1d"))?;
        let (b, l, c) = x.dim();
        if dy.dim() != (b, l, self.out_channels) {
            return Err(Error::shape(
                "conv1d upstream gradient",
                &[b, l, self.out_channels],
                dy.shape(),
            ));
        }
        let k = self.kernel;
        let pad = self.pad_left() as isize;
        let wm = self.weight_matrix();
        let mut dwm = Array2::<F>::zeros((k * c, self.out_channels));
        let mut db = Array1::<F>::zeros(self.out_channels);
        let mut dx = Array3::<F>::zeros((b, l, c));
        let step = self.chunk(l);
        for start in (0..b).step_by(step) {
            let end = (start + step).min(b);
            let rows = (end - start) * l;
            let cols = self.im2col(&x.slice(s![start..end, .., ..]));
            let dy2 = dy
                .slice(s![start..end, .., ..])
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((rows, self.out_channels))
                .expect("dy rows");
            dwm += &cols.t().dot(&dy2);
            db += &dy2.sum_axis(Axis(0));
            let dcols = dy2.dot(&wm.t());
            let dcs = dcols.as_slice().expect("standard layout");
            let mut dxc = dx.slice_mut(s![start..end, .., ..]);
            let dxs = dxc.as_slice_mut().expect("contiguous batch slice");
            for bi in 0..end - start {
                for t in 0..l {
                    let row = (bi * l + t) * k * c;
                    for kk in 0..k {
                        let src = t as isize + kk as isize - pad;
                        if src >= 0 && (src as usize) < l {
                            let to = (bi * l + src as usize) * c;
                            for ch in 0..c {
                                dxs[to + ch] += dcs[row + kk * c + ch];
                            }
                        }
                    }
                }
            }
        }
        let ci = self.in_channels;
        let mut gw = self
            .weight
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix3>()
            .expect("weight grad");
        for ((o, ch, kk), g) in gw.indexed_iter_mut() {
            *g += dwm[[kk * ci + ch, o]];
        }
        let mut gb = self.bias.grad.view_mut().into_dimensionality::<ndarray::Ix1>().expect("bias grad");
        gb += &db;
        Ok(dx)
    }
}

impl<F: Real> Parameterized<F> for Conv1d<F> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_rel_error, numeric_grad};
    use crate::seed::rng_from_seed;
    use ndarray::{array, Array};
    use rand::Rng as _;

    fn random3(shape: (usize, usize, usize), rng: &mut Rng) -> Array3<f64> {
        Array::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn same_padding_shape() {
        let mut rng = rng_from_seed(0);
        let conv = Conv1d::<f32>::new(2, 32, 24, &mut rng);
        let y = conv.infer(&Array3::zeros((1, 128, 2))).unwrap();
        assert_eq!(y.dim(), (1, 128, 32));
        assert_eq!(conv.weight.value.shape(), &[32, 2, 24]);
    }

    #[test]
    fn zero_kernels_give_zero_output() {
        let conv = Conv1d::<f64>::zeros(2, 4, 3);
        let mut rng = rng_from_seed(1);
        let y = conv.infer(&random3((2, 5, 2), &mut rng)).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_kernel_sums_channels() {
        let mut conv = Conv1d::<f64>::zeros(2, 1, 1);
        conv.weight.value.fill(1.0);
        // 2×3 input (I row, Q row) in time-major layout
        let i = [0.5, -1.0, 2.0];
        let q = [1.5, 3.0, -0.25];
        let x = Array3::from_shape_fn((1, 3, 2), |(_, t, c)| if c == 0 { i[t] } else { q[t] });
        let y = conv.infer(&x).unwrap();
        for t in 0..3 {
            assert_eq!(y[[0, t, 0]], 1.0 * i[t] + 1.0 * q[t]);
        }
    }

    #[test]
    fn matches_direct_correlation() {
        let mut rng = rng_from_seed(2);
        for k in [1, 2, 3, 4, 5] {
            let conv = Conv1d::<f64>::new(3, 2, k, &mut rng);
            let x = random3((2, 7, 3), &mut rng);
            let y = conv.infer(&x).unwrap();
            let pad = (k - 1) as isize / 2;
            for b in 0..2 {
                for t in 0..7 {
                    for o in 0..2 {
                        let mut acc = conv.bias.value[[o]];
                        for kk in 0..k {
                            let src = t as isize + kk as isize - pad;
                            if (0..7).contains(&src) {
                                for c in 0..3 {
                                    acc += conv.weight.value[[o, c, kk]] * x[[b, src as usize, c]];
                                }
                            }
                        }
                        assert!((y[[b, t, o]] - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let conv = Conv1d::<f64>::zeros(2, 1, 3);
        assert!(matches!(conv.infer(&Array3::zeros((1, 5, 3))), Err(Error::ShapeMismatch { .. })));
        assert!(conv.infer(&Array3::zeros((1, 2, 2))).is_err());
        let mut conv = conv;
        assert!(matches!(conv.backward(&Array3::zeros((1, 5, 1))), Err(Error::NoForward(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rng_from_seed(3);
        let mut conv = Conv1d::<f64>::new(2, 3, 4, &mut rng);
        conv.bias.value.assign(&array![0.1, -0.2, 0.3].into_dyn());
        let x = random3((2, 6, 2), &mut rng);
        let upstream = random3((2, 6, 3), &mut rng);

        conv.forward(&x).unwrap();
        let dx = conv.backward(&upstream).unwrap();
        let loss = |c: &Conv1d<f64>, x: &Array3<f64>| (c.infer(x).unwrap() * &upstream).sum();

        let mut xv = x.iter().copied().collect::<Vec<_>>();
        let num_dx = numeric_grad(&mut xv, 1e-5, |v| {
            loss(&conv, &Array3::from_shape_vec(x.dim(), v.to_vec()).unwrap())
        });
        assert!(max_rel_error(&dx.iter().copied().collect::<Vec<_>>(), &num_dx, 1e-6) < 1e-4);

        let mut wv = conv.weight.value.iter().copied().collect::<Vec<_>>();
        let probe = conv.clone();
        let num_dw = numeric_grad(&mut wv, 1e-5, |v| {
            let mut c = probe.clone();
            c.weight.value = ndarray::ArrayD::from_shape_vec(probe.weight.value.raw_dim(), v.to_vec()).unwrap();
            loss(&c, &x)
        });
        let dw: Vec<f64> = conv.weight.grad.iter().copied().collect();
        assert!(max_rel_error(&dw, &num_dw, 1e-6) < 1e-4);

        let db: Vec<f64> = conv.bias.grad.iter().copied().collect();
        let want: Vec<f64> = (0..3).map(|o| upstream.slice(s![.., .., o]).sum()).collect();
        assert!(max_rel_error(&db, &want, 1e-6) < 1e-10);
    }
}
