use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis, Ix1, Ix2};

use super::{glorot_limit, join, Param, Parameterized, Real};
use crate::error::{Error, Result};
use crate::seed::Rng;

/// Sequence-returning LSTM with zero initial state.
///
/// Gate pre-activations are `x_t·W_ih + h_{t-1}·W_hh + b`, packed as
/// `[input, forget, cell, output]` blocks of `units` columns each.
#[derive(Debug, Clone)]
pub struct Lstm<F> {
    /// `(input_size, 4 * units)`
    pub w_ih: Param<F>,
    /// `(units, 4 * units)`
    pub w_hh: Param<F>,
    /// `(4 * units)`
    pub bias: Param<F>,
    input_size: usize,
    units: usize,
    cache: Option<LstmCache<F>>,
}

#[derive(Debug, Clone)]
struct LstmCache<F> {
    input: Array3<F>,
    /// Activated gates, `(time, batch, 4 * units)`.
    gates: Array3<F>,
    /// Cell states, `(time, batch, units)`.
    cells: Array3<F>,
    /// Hidden states, `(time, batch, units)`.
    hidden: Array3<F>,
}

impl<F: Real> Lstm<F> {
    /// Glorot-uniform kernels, zero biases except +1 on the forget gate.
    pub fn new(input_size: usize, units: usize, rng: &mut Rng) -> Self {
        let w_ih = Param::uniform(&[input_size, 4 * units], glorot_limit(input_size, 4 * units), rng);
        let w_hh = Param::uniform(&[units, 4 * units], glorot_limit(units, 4 * units), rng);
        let mut bias = Param::zeros(&[4 * units]);
        bias.value.slice_mut(s![units..2 * units]).fill(F::one());
        Self {
            w_ih,
            w_hh,
            bias,
            input_size,
            units,
            cache: None,
        }
    }

    pub fn zeros(input_size: usize, units: usize) -> Self {
        Self {
            w_ih: Param::zeros(&[input_size, 4 * units]),
            w_hh: Param::zeros(&[units, 4 * units]),
            bias: Param::zeros(&[4 * units]),
            input_size,
            units,
            cache: None,
        }
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    fn weights(&self) -> (ArrayView2<'_, F>, ArrayView2<'_, F>, ndarray::ArrayView1<'_, F>) {
        (
            self.w_ih.value.view().into_dimensionality::<Ix2>().expect("w_ih"),
            self.w_hh.value.view().into_dimensionality::<Ix2>().expect("w_hh"),
            self.bias.value.view().into_dimensionality::<Ix1>().expect("bias"),
        )
    }

    /// Activates one time step's pre-activations in place and writes the new
    /// cell and hidden states. `c_prev` is `None` at `t = 0`.
    fn cell_step(&self, pre: &mut [F], c_prev: Option<&[F]>, c_out: &mut [F], h_out: &mut [F]) {
        let u = self.units;
        for (bi, row) in pre.chunks_exact_mut(4 * u).enumerate() {
            for v in row[..2 * u].iter_mut() {
                *v = v.sigmoid();
            }
            for v in row[2 * u..3 * u].iter_mut() {
                *v = v.tanh_act();
            }
            for v in row[3 * u..].iter_mut() {
                *v = v.sigmoid();
            }
            let base = bi * u;
            for k in 0..u {
                let cp = c_prev.map_or(F::zero(), |c| c[base + k]);
                let c = row[u + k] * cp + row[k] * row[2 * u + k];
                c_out[base + k] = c;
                h_out[base + k] = row[3 * u + k] * c.tanh_act();
            }
        }
    }

    fn check_input(&self, x: &Array3<F>) -> Result<()> {
        if x.dim().2 != self.input_size {
            return Err(Error::shape("lstm input features", &[self.input_size], &[x.dim().2]));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lstm input"));
        }
        Ok(())
    }

    /// Runs the recurrence time-major. Returns activated gates, cell states
    /// and hidden states, each shaped `(time, batch, ·)`.
    fn run(&self, x: &Array3<F>) -> (Array3<F>, Array3<F>, Array3<F>) {
        let (b, l, fi) = x.dim();
        let u = self.units;
        let (w_ih, w_hh, bias) = self.weights();
        let xt = x.view().permuted_axes([1, 0, 2]).as_standard_layout().into_owned();
        let x2 = xt.into_shape_with_order((l * b, fi)).expect("time-major input");
        let mut gates = x2.dot(&w_ih);
        gates += &bias;
        let mut gates = gates.into_shape_with_order((l, b, 4 * u)).expect("gates");
        let mut cells = Array3::zeros((l, b, u));
        let mut hidden = Array3::zeros((l, b, u));
        for t in 0..l {
            let mut g_t = gates.index_axis_mut(Axis(0), t);
            if t > 0 {
                let h_prev = hidden.index_axis(Axis(0), t - 1);
                general_mat_mul(F::one(), &h_prev, &w_hh, F::one(), &mut g_t);
            }
            let (c_done, mut c_rest) = cells.view_mut().split_at(Axis(0), t);
            let c_prev = if t > 0 {
                Some(c_done.index_axis_move(Axis(0), t - 1))
            } else {
                None
            };
            let mut c_t = c_rest.index_axis_mut(Axis(0), 0);
            let mut h_t = hidden.index_axis_mut(Axis(0), t);
            self.cell_step(
                g_t.as_slice_mut().expect("contiguous gates"),
                c_prev.as_ref().map(|c| c.as_slice().expect("contiguous cells")),
                c_t.as_slice_mut().expect("contiguous cells"),
                h_t.as_slice_mut().expect("contiguous hidden"),
            );
        }
        (gates, cells, hidden)
    }

    fn batch_major(hidden: &Array3<F>) -> Array3<F> {
        hidden.view().permuted_axes([1, 0, 2]).as_standard_layout().into_owned()
    }

    pub fn infer(&self, x: &Array3<F>) -> Result<Array3<F>> {
        self.check_input(x)?;
        let (_, _, hidden) = self.run(x);
        Ok(Self::batch_major(&hidden))
    }

    pub fn forward(&mut self, x: &Array3<F>) -> Result<Array3<F>> {
        self.check_input(x)?;
        let (gates, cells, hidden) = self.run(x);
        let out = Self::batch_major(&hidden);
        self.cache = Some(LstmCache {
            input: x.as_standard_layout().into_owned(),
            gates,
            cells,
            hidden,
        });
        Ok(out)
    }

    /// Backpropagation through time.
    pub fn backward(&mut self, dy: &Array3<F>) -> Result<Array3<F>> {
        let cache = self.cache.take().ok_or(Error::NoForward("lstm"))?;
        let (b, l, fi) = cache.input.dim();
        let u = self.units;
        if dy.dim() != (b, l, u) {
            return Err(Error::shape("lstm upstream gradient", &[b, l, u], dy.shape()));
        }
        let w_hh = self.w_hh.value.view().into_dimensionality::<Ix2>().expect("w_hh").to_owned();
        let w_ih = self.w_ih.value.view().into_dimensionality::<Ix2>().expect("w_ih").to_owned();
        let one = F::one();

        // Pre-activation gradients, (batch, time, 4u) so they line up with the input rows.
        let mut dgates = Array3::<F>::zeros((b, l, 4 * u));
        let mut dh_next = Array2::<F>::zeros((b, u));
        let mut dc_next = Array2::<F>::zeros((b, u));
        let zero_state = Array2::<F>::zeros((b, u));
        let mut dpre = Array2::<F>::zeros((b, 4 * u));
        for t in (0..l).rev() {
            let g_t = cache.gates.slice(s![t, .., ..]);
            let c_t = cache.cells.slice(s![t, .., ..]);
            let c_prev = if t == 0 {
                zero_state.view()
            } else {
                cache.cells.slice(s![t - 1, .., ..])
            };
            let mut dh = dy.slice(s![.., t, ..]).to_owned();
            dh += &dh_next;
            let gs = g_t.as_slice().expect("time-major gates");
            let cs = c_t.as_slice().expect("time-major cells");
            let cps = c_prev.as_slice().expect("time-major cells");
            let dhs = dh.as_slice().expect("owned");
            let dcn = dc_next.as_slice_mut().expect("owned");
            let dp = dpre.as_slice_mut().expect("owned");
            for bi in 0..b {
                let row = bi * 4 * u;
                for k in 0..u {
                    let (i, f, g, o) = (gs[row + k], gs[row + u + k], gs[row + 2 * u + k], gs[row + 3 * u + k]);
                    let idx = bi * u + k;
                    let tc = cs[idx].tanh_act();
                    let dh = dhs[idx];
                    let dc = dh * o * (one - tc * tc) + dcn[idx];
                    dp[row + k] = dc * g * i * (one - i);
                    dp[row + u + k] = dc * cps[idx] * f * (one - f);
                    dp[row + 2 * u + k] = dc * i * (one - g * g);
                    dp[row + 3 * u + k] = dh * tc * o * (one - o);
                    dcn[idx] = dc * f;
                }
            }
            dh_next = dpre.dot(&w_hh.t());
            dgates.slice_mut(s![.., t, ..]).assign(&dpre);
        }

        // h_{t-1} for every (batch, time) row; zero at t = 0.
        let mut h_prev = Array3::<F>::zeros((b, l, u));
        h_prev
            .slice_mut(s![.., 1.., ..])
            .assign(&cache.hidden.slice(s![..l - 1, .., ..]).permuted_axes([1, 0, 2]));
        let rows = b * l;
        let dg2 = dgates.into_shape_with_order((rows, 4 * u)).expect("dgates");
        let hp2 = h_prev.into_shape_with_order((rows, u)).expect("h_prev");
        let x2 = cache.input.into_shape_with_order((rows, fi)).expect("input");

        let mut gw_hh = self.w_hh.grad.view_mut().into_dimensionality::<Ix2>().expect("w_hh grad");
        gw_hh += &hp2.t().dot(&dg2);
        let mut gw_ih = self.w_ih.grad.view_mut().into_dimensionality::<Ix2>().expect("w_ih grad");
        gw_ih += &x2.t().dot(&dg2);
        let db: Array1<F> = dg2.sum_axis(Axis(0));
        let mut gb = self.bias.grad.view_mut().into_dimensionality::<Ix1>().expect("bias grad");
        gb += &db;

        let dx = dg2.dot(&w_ih.t());
        Ok(dx.into_shape_with_order((b, l, fi)).expect("dx"))
    }
}

impl<F: Real> Parameterized<F> for Lstm<F> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        f(&join(prefix, "w_ih"), &self.w_ih);
        f(&join(prefix, "w_hh"), &self.w_hh);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&join(prefix, "w_ih"), &mut self.w_ih);
        f(&join(prefix, "w_hh"), &mut self.w_hh);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
