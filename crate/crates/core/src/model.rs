//! Encoder, projection head and classifier.
//!
//! The encoder maps a batch of frames `(batch, time, 2)` to representations
//! `(batch, repr_dim)` through
//! `conv1 → ReLU → LSTM → LSTM → conv2 → ReLU → global max pool`.
//! Everything up to the second LSTM is the *prefix*, the rest the *suffix*;
//! partial fine-tuning trains only the suffix, so its input can be cached.

use ndarray::{Array2, Array3};

use crate::dataio::IqFrame;
use crate::error::{Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{join, Conv1d, Dense, Dropout, GlobalMaxPool, Mode, Param, Parameterized, Real, Relu, Lstm};
use crate::seed::Rng;
use crate::sigsyn::NUM_CLASSES;

pub const ENCODER_PREFIX: &str = "encoder";
pub const HEAD_PREFIX: &str = "head";
pub const CLASSIFIER_PREFIX: &str = "classifier";

/// Layer widths of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub conv1_filters: usize,
    pub conv1_kernel: usize,
    pub lstm_units: usize,
    pub conv2_filters: usize,
    pub conv2_kernel: usize,
}

impl EncoderConfig {
    /// Full-size encoder: 32×24 conv, two 128-unit LSTMs, 128×8 conv.
    pub fn paper() -> Self {
        Self {
            conv1_filters: 32,
            conv1_kernel: 24,
            lstm_units: 128,
            conv2_filters: 128,
            conv2_kernel: 8,
        }
    }

    /// Narrow encoder with the same layer order and kernel sizes, for
    /// CPU-budget experiments.
    pub fn desk() -> Self {
        Self {
            conv1_filters: 16,
            conv1_kernel: 24,
            lstm_units: 32,
            conv2_filters: 32,
            conv2_kernel: 8,
        }
    }

    pub fn repr_dim(&self) -> usize {
        self.conv2_filters
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.conv1_filters,
            self.conv1_kernel,
            self.lstm_units,
            self.conv2_filters,
            self.conv2_kernel,
        ];
        if fields.contains(&0) {
            return Err(Error::InvalidConfig(format!("encoder widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::paper()
    }
}

/// Stacks frames into a `(batch, time, 2)` tensor with I in channel 0.
pub fn frames_to_batch<'a, F: Real>(frames: impl IntoIterator<Item = &'a IqFrame>) -> Result<Array3<F>> {
    let frames: Vec<&IqFrame> = frames.into_iter().collect();
    let first = frames.first().ok_or(Error::EmptyDataset)?;
    let n = first.len();
    let mut out = Array3::zeros((frames.len(), n, 2));
    for (b, fr) in frames.iter().enumerate() {
        if fr.len() != n {
            return Err(Error::shape("frame batch", &[2, n], &[2, fr.len()]));
        }
        for (t, (&i, &q)) in fr.i().iter().zip(fr.q()).enumerate() {
            out[[b, t, 0]] = F::of(i as f64);
            out[[b, t, 1]] = F::of(q as f64);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Encoder<F: Real> {
    pub conv1: Conv1d<F>,
    pub lstm1: Lstm<F>,
    pub lstm2: Lstm<F>,
    pub conv2: Conv1d<F>,
    config: EncoderConfig,
    relu1: Relu<F, ndarray::Ix3>,
    relu2: Relu<F, ndarray::Ix3>,
    pool: GlobalMaxPool,
}

impl<F: Real> Encoder<F> {
    pub fn new(config: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = config;
        Ok(Self::assemble(
            c,
            Conv1d::new(2, c.conv1_filters, c.conv1_kernel, rng),
            Lstm::new(c.conv1_filters, c.lstm_units, rng),
            Lstm::new(c.lstm_units, c.lstm_units, rng),
            Conv1d::new(c.lstm_units, c.conv2_filters, c.conv2_kernel, rng),
        ))
    }

    pub fn zeros(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        Ok(Self::assemble(
            c,
            Conv1d::zeros(2, c.conv1_filters, c.conv1_kernel),
            Lstm::zeros(c.conv1_filters, c.lstm_units),
            Lstm::zeros(c.lstm_units, c.lstm_units),
            Conv1d::zeros(c.lstm_units, c.conv2_filters, c.conv2_kernel),
        ))
    }

    fn assemble(config: EncoderConfig, conv1: Conv1d<F>, lstm1: Lstm<F>, lstm2: Lstm<F>, conv2: Conv1d<F>) -> Self {
        Self {
            conv1,
            lstm1,
            lstm2,
            conv2,
            config,
            relu1: Relu::default(),
            relu2: Relu::default(),
            pool: GlobalMaxPool::default(),
        }
    }

    pub fn config(&self) -> EncoderConfig {
        self.config
    }

    pub fn repr_dim(&self) -> usize {
        self.config.repr_dim()
    }

    fn check_input(&self, x: &Array3<F>) -> Result<()> {
        let (b, l, c) = x.dim();
        if c != 2 || b == 0 || l == 0 {
            return Err(Error::shape("encoder input", &[b.max(1), l.max(1), 2], x.shape()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder input"));
        }
        Ok(())
    }

    /// Output of the second LSTM, the input of the trainable suffix.
    pub fn infer_features(&self, x: &Array3<F>) -> Result<Array3<F>> {
        self.check_input(x)?;
        let h = Relu::infer(&self.conv1.infer(x)?);
        let h = self.lstm1.infer(&h)?;
        self.lstm2.infer(&h)
    }

    pub fn infer_suffix(&self, features: &Array3<F>) -> Result<Array2<F>> {
        GlobalMaxPool::infer(&Relu::infer(&self.conv2.infer(features)?))
    }

    pub fn infer(&self, x: &Array3<F>) -> Result<Array2<F>> {
        self.infer_suffix(&self.infer_features(x)?)
    }

    pub fn forward_features(&mut self, x: &Array3<F>) -> Result<Array3<F>> {
        self.check_input(x)?;
        let h = self.conv1.forward(x)?;
        let h = self.relu1.forward(&h);
        let h = self.lstm1.forward(&h)?;
        self.lstm2.forward(&h)
    }

    pub fn forward_suffix(&mut self, features: &Array3<F>) -> Result<Array2<F>> {
        let h = self.conv2.forward(features)?;
        let h = self.relu2.forward(&h);
        self.pool.forward(&h)
    }

    pub fn forward(&mut self, x: &Array3<F>) -> Result<Array2<F>> {
        let h = self.forward_features(x)?;
        self.forward_suffix(&h)
    }

    /// Backpropagates through the suffix only; returns the gradient with
    /// respect to its input features.
    pub fn backward_suffix(&mut self, dr: &Array2<F>) -> Result<Array3<F>> {
        let d = self.pool.backward(dr)?;
        let d = self.relu2.backward(&d)?;
        self.conv2.backward(&d)
    }

    pub fn backward_features(&mut self, dh: &Array3<F>) -> Result<Array3<F>> {
        let d = self.lstm2.backward(dh)?;
        let d = self.lstm1.backward(&d)?;
        let d = self.relu1.backward(&d)?;
        self.conv1.backward(&d)
    }

    pub fn backward(&mut self, dr: &Array2<F>) -> Result<Array3<F>> {
        let dh = self.backward_suffix(dr)?;
        self.backward_features(&dh)
    }

    /// Builds an encoder whose widths are read from the stored shapes.
    pub fn from_checkpoint(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let dims = |name: &str, ndim: usize| -> Result<Vec<usize>> {
            let full = join(prefix, name);
            let shape = ck.require(&full)?.shape().to_vec();
            if shape.len() != ndim {
                return Err(Error::Malformed(format!("{full} has {} dims, expected {ndim}", shape.len())));
            }
            Ok(shape)
        };
        let c1 = dims("conv1.weight", 3)?;
        let l1 = dims("lstm1.w_hh", 2)?;
        let c2 = dims("conv2.weight", 3)?;
        let config = EncoderConfig {
            conv1_filters: c1[0],
            conv1_kernel: c1[2],
            lstm_units: l1[0],
            conv2_filters: c2[0],
            conv2_kernel: c2[2],
        };
        let mut enc = Self::zeros(config)?;
        ck.load_into(&mut enc, prefix)?;
        Ok(enc)
    }
}

impl<F: Real> Parameterized<F> for Encoder<F> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.lstm1.visit_params(&join(prefix, "lstm1"), f);
        self.lstm2.visit_params(&join(prefix, "lstm2"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.conv1.visit_params_mut(&join(prefix, "conv1"), f);
        self.lstm1.visit_params_mut(&join(prefix, "lstm1"), f);
        self.lstm2.visit_params_mut(&join(prefix, "lstm2"), f);
        self.conv2.visit_params_mut(&join(prefix, "conv2"), f);
    }
}

/// `z = W2 · ReLU(W1 · r)`.
#[derive(Debug, Clone)]
pub struct ProjectionHead<F: Real> {
    pub fc1: Dense<F>,
    pub fc2: Dense<F>,
    relu: Relu<F, ndarray::Ix2>,
}

impl<F: Real> ProjectionHead<F> {
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        Self::from_layers(Dense::new(input, hidden, rng), Dense::new(hidden, output, rng))
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self::from_layers(Dense::zeros(input, hidden), Dense::zeros(hidden, output))
    }

    pub fn from_layers(fc1: Dense<F>, fc2: Dense<F>) -> Self {
        Self {
            fc1,
            fc2,
            relu: Relu::default(),
        }
    }

    pub fn infer(&self, r: &Array2<F>) -> Result<Array2<F>> {
        self.fc2.infer(&Relu::infer(&self.fc1.infer(r)?))
    }

    pub fn forward(&mut self, r: &Array2<F>) -> Result<Array2<F>> {
        let h = self.fc1.forward(r)?;
        let h = self.relu.forward(&h);
        self.fc2.forward(&h)
    }

    pub fn backward(&mut self, dz: &Array2<F>) -> Result<Array2<F>> {
        let d = self.fc2.backward(dz)?;
        let d = self.relu.backward(&d)?;
        self.fc1.backward(&d)
    }

    pub fn from_checkpoint(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let (i, h) = dense_dims(ck, &join(prefix, "fc1.weight"))?;
        let (_, o) = dense_dims(ck, &join(prefix, "fc2.weight"))?;
        let mut head = Self::zeros(i, h, o);
        ck.load_into(&mut head, prefix)?;
        Ok(head)
    }
}

impl<F: Real> Parameterized<F> for ProjectionHead<F> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.fc1.visit_params(&join(prefix, "fc1"), f);
        self.fc2.visit_params(&join(prefix, "fc2"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.fc1.visit_params_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_params_mut(&join(prefix, "fc2"), f);
    }
}

/// Dense ReLU hidden layer with dropout, then class logits.
#[derive(Debug, Clone)]
pub struct Classifier<F: Real> {
    pub fc1: Dense<F>,
    pub fc2: Dense<F>,
    relu: Relu<F, ndarray::Ix2>,
    dropout: Dropout<F>,
}

impl<F: Real> Classifier<F> {
    pub fn new(input: usize, hidden: usize, classes: usize, dropout: f64, rng: &mut Rng) -> Result<Self> {
        Self::from_layers(Dense::new(input, hidden, rng), Dense::new(hidden, classes, rng), dropout)
    }

    pub fn zeros(input: usize, hidden: usize, classes: usize, dropout: f64) -> Result<Self> {
        Self::from_layers(Dense::zeros(input, hidden), Dense::zeros(hidden, classes), dropout)
    }

    pub fn from_layers(fc1: Dense<F>, fc2: Dense<F>, dropout: f64) -> Result<Self> {
        Ok(Self {
            fc1,
            fc2,
            relu: Relu::default(),
            dropout: Dropout::new(dropout)?,
        })
    }

    pub fn classes(&self) -> usize {
        self.fc2.outputs()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout.rate()
    }

    /// Logits in evaluation mode.
    pub fn infer(&self, r: &Array2<F>) -> Result<Array2<F>> {
        self.fc2.infer(&Relu::infer(&self.fc1.infer(r)?))
    }

    pub fn probabilities(&self, r: &Array2<F>) -> Result<Array2<F>> {
        Ok(crate::nn::softmax(&self.infer(r)?))
    }

    pub fn predict(&self, r: &Array2<F>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.infer(r)?))
    }

    pub fn forward(&mut self, r: &Array2<F>, mode: Mode, rng: &mut Rng) -> Result<Array2<F>> {
        let h = self.fc1.forward(r)?;
        let h = self.relu.forward(&h);
        let h = self.dropout.forward(&h, mode, rng);
        self.fc2.forward(&h)
    }

    pub fn backward(&mut self, dlogits: &Array2<F>) -> Result<Array2<F>> {
        let d = self.fc2.backward(dlogits)?;
        let d = self.dropout.backward(&d)?;
        let d = self.relu.backward(&d)?;
        self.fc1.backward(&d)
    }

    pub fn from_checkpoint(ck: &Checkpoint, prefix: &str, dropout: f64) -> Result<Self> {
        let (i, h) = dense_dims(ck, &join(prefix, "fc1.weight"))?;
        let (_, c) = dense_dims(ck, &join(prefix, "fc2.weight"))?;
        let mut clf = Self::zeros(i, h, c, dropout)?;
        ck.load_into(&mut clf, prefix)?;
        Ok(clf)
    }
}

impl<F: Real> Parameterized<F> for Classifier<F> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.fc1.visit_params(&join(prefix, "fc1"), f);
        self.fc2.visit_params(&join(prefix, "fc2"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.fc1.visit_params_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_params_mut(&join(prefix, "fc2"), f);
    }
}

fn dense_dims(ck: &Checkpoint, name: &str) -> Result<(usize, usize)> {
    match ck.require(name)?.shape() {
        &[i, o] => Ok((i, o)),
        other => Err(Error::Malformed(format!("{name} has shape {other:?}, expected 2 dims"))),
    }
}

/// Index of the first maximum in each row.
pub fn argmax_rows<F: Real>(x: &Array2<F>) -> Vec<usize> {
    x.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Encoder plus optional head and classifier, stored in one checkpoint under
/// the `encoder`, `head` and `classifier` prefixes.
#[derive(Debug, Clone)]
pub struct ModelParams<F: Real> {
    pub encoder: Encoder<F>,
    pub head: Option<ProjectionHead<F>>,
    pub classifier: Option<Classifier<F>>,
}

/// Sizes of the head and classifier layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadConfig {
    pub head_hidden: usize,
    pub projection_dim: usize,
    pub classifier_hidden: usize,
    pub classes: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            head_hidden: 128,
            projection_dim: 64,
            classifier_hidden: 128,
            classes: NUM_CLASSES,
        }
    }
}

impl<F: Real> ModelParams<F> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.add_module(&self.encoder, ENCODER_PREFIX);
        if let Some(h) = &self.head {
            ck.add_module(h, HEAD_PREFIX);
        }
        if let Some(c) = &self.classifier {
            ck.add_module(c, CLASSIFIER_PREFIX);
        }
        ck
    }

    /// Loads whichever parts the checkpoint holds; the encoder is required.
    pub fn from_checkpoint(ck: &Checkpoint, dropout: f64) -> Result<Self> {
        let encoder = Encoder::from_checkpoint(ck, ENCODER_PREFIX)?;
        let head = if ck.has_prefix(&format!("{HEAD_PREFIX}.")) {
            Some(ProjectionHead::from_checkpoint(ck, HEAD_PREFIX)?)
        } else {
            None
        };
        let classifier = if ck.has_prefix(&format!("{CLASSIFIER_PREFIX}.")) {
            Some(Classifier::from_checkpoint(ck, CLASSIFIER_PREFIX, dropout)?)
        } else {
            None
        };
        Ok(Self {
            encoder,
            head,
            classifier,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use ndarray::{array, Axis};
    use rand::Rng as _;

    fn random_batch(b: usize, n: usize, seed: u64) -> Array3<f64> {
        let mut rng = rng_from_seed(seed);
        Array3::from_shape_simple_fn((b, n, 2), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn parameter_counts() {
        let mut rng = rng_from_seed(0);
        let enc = Encoder::<f32>::new(EncoderConfig::paper(), &mut rng).unwrap();
        let mut conv1 = 0;
        enc.conv1.visit_params("", &mut |_, p| conv1 += p.len());
        assert_eq!(conv1, 32 * 2 * 24 + 32);
        assert_eq!(conv1, 1568);
        let lstm1 = 4 * 128 * (32 + 128 + 1);
        let lstm2 = 4 * 128 * (128 + 128 + 1);
        let conv2 = 128 * 128 * 8 + 128;
        assert_eq!(enc.param_count(), conv1 + lstm1 + lstm2 + conv2);
        assert_eq!(enc.param_count(), 346_784);

        let head = ProjectionHead::<f32>::new(128, 128, 64, &mut rng);
        assert_eq!(head.param_count(), 128 * 128 + 128 + 128 * 64 + 64);
        let clf = Classifier::<f32>::new(128, 128, 11, 0.5, &mut rng).unwrap();
        assert_eq!(clf.param_count(), 128 * 128 + 128 + 128 * 11 + 11);
    }

    #[test]
    fn output_is_repr_dim() {
        let mut rng = rng_from_seed(1);
        let enc = Encoder::<f32>::new(EncoderConfig::paper(), &mut rng).unwrap();
        let x = random_batch(2, 128, 2).mapv(|v| v as f32);
        assert_eq!(enc.infer(&x).unwrap().dim(), (2, 128));
    }

    #[test]
    fn zero_encoder_gives_zero_representation() {
        let enc = Encoder::<f64>::zeros(EncoderConfig::desk()).unwrap();
        let r = enc.infer(&random_batch(3, 64, 0)).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_under_fresh_init() {
        let mut rng = rng_from_seed(9);
        let enc = Encoder::<f32>::new(EncoderConfig::desk(), &mut rng).unwrap();
        let x = random_batch(50, 128, 3).mapv(|v| 3.0 * v as f32);
        assert!(enc.infer(&x).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_bad_input() {
        let enc = Encoder::<f64>::zeros(EncoderConfig::desk()).unwrap();
        assert!(matches!(enc.infer(&Array3::zeros((1, 8, 3))), Err(Error::ShapeMismatch { .. })));
        let mut x = Array3::zeros((1, 8, 2));
        x[[0, 0, 0]] = f64::NAN;
        assert!(matches!(enc.infer(&x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn forward_matches_infer() {
        let mut rng = rng_from_seed(4);
        let mut enc = Encoder::<f64>::new(EncoderConfig::desk(), &mut rng).unwrap();
        let x = random_batch(2, 32, 5);
        assert_eq!(enc.forward(&x).unwrap(), enc.infer(&x).unwrap());
    }

    #[test]
    fn time_reversal_changes_output() {
        let mut rng = rng_from_seed(5);
        let enc = Encoder::<f64>::new(EncoderConfig::desk(), &mut rng).unwrap();
        let x = random_batch(1, 32, 6);
        let mut rev = x.clone();
        rev.invert_axis(Axis(1));
        let a = enc.infer(&x).unwrap();
        let b = enc.infer(&rev).unwrap();
        assert!(a.iter().zip(&b).any(|(u, v)| (u - v).abs() > 1e-9));
    }

    #[test]
    fn head_matches_hand_evaluation() {
        let w1 = array![[0.5, -1.0, 0.25], [1.5, 0.2, -0.3], [-0.7, 0.9, 1.1], [0.1, 0.0, -2.0]];
        let b1 = array![0.1, -0.2, 0.05];
        let w2 = array![[1.0, -0.5], [0.3, 0.8], [-1.2, 0.4]];
        let b2 = array![0.0, 0.25];
        let mut head = ProjectionHead::<f64>::zeros(4, 3, 2);
        head.fc1.weight.value.assign(&w1.clone().into_dyn());
        head.fc1.bias.value.assign(&b1.clone().into_dyn());
        head.fc2.weight.value.assign(&w2.clone().into_dyn());
        head.fc2.bias.value.assign(&b2.clone().into_dyn());
        let r = array![[0.3, -0.6, 1.2, 0.8]];
        let z = head.infer(&r).unwrap();
        for k in 0..2 {
            let mut expect = b2[k];
            for j in 0..3 {
                let mut h = b1[j];
                for i in 0..4 {
                    h += r[[0, i]] * w1[[i, j]];
                }
                expect += h.max(0.0) * w2[[j, k]];
            }
            assert!((z[[0, k]] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_second_layer_gives_zero_projection() {
        let mut rng = rng_from_seed(0);
        let mut head = ProjectionHead::<f64>::new(4, 4, 2, &mut rng);
        head.fc2 = Dense::zeros(4, 2);
        assert!(head.infer(&array![[1.0, 2.0, 3.0, 4.0]]).unwrap().iter().all(|&v| v == 0.0));
        let head = ProjectionHead::<f64>::new(4, 4, 2, &mut rng);
        assert!(head.infer(&Array2::zeros((1, 4))).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_classifier_is_uniform() {
        let clf = Classifier::<f64>::zeros(8, 8, 11, 0.5).unwrap();
        let p = clf.probabilities(&random_batch(1, 4, 1).into_shape_with_order((1, 8)).unwrap()).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 11.0).abs() < 1e-12));
    }

    #[test]
    fn classifier_probabilities_sum_to_one() {
        let mut rng = rng_from_seed(3);
        let clf = Classifier::<f64>::new(6, 5, 11, 0.5, &mut rng).unwrap();
        let r = Array2::from_shape_simple_fn((7, 6), || rng.random_range(-4.0..4.0));
        for row in clf.probabilities(&r).unwrap().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut rng = rng_from_seed(3);
        let mut clf = Classifier::<f64>::new(6, 5, 11, 0.5, &mut rng).unwrap();
        let r = Array2::from_shape_simple_fn((4, 6), || rng.random_range(-1.0..1.0));
        let a = clf.forward(&r, Mode::Eval, &mut rng_from_seed(1)).unwrap();
        let b = clf.forward(&r, Mode::Eval, &mut rng_from_seed(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, clf.infer(&r).unwrap());
    }

    #[test]
    fn argmax_picks_first_maximum() {
        assert_eq!(argmax_rows(&array![[0.0, 2.0, 2.0], [5.0, 1.0, 0.0]]), vec![1, 0]);
    }

    #[test]
    fn checkpoint_roundtrip_infers_widths() {
        let mut rng = rng_from_seed(8);
        let model = ModelParams::<f32> {
            encoder: Encoder::new(EncoderConfig::desk(), &mut rng).unwrap(),
            head: None,
            classifier: Some(Classifier::new(32, 16, 11, 0.5, &mut rng).unwrap()),
        };
        let ck = Checkpoint::from_bytes(&model.to_checkpoint().to_bytes().unwrap()).unwrap();
        let back = ModelParams::<f32>::from_checkpoint(&ck, 0.5).unwrap();
        assert_eq!(back.encoder.config(), EncoderConfig::desk());
        assert!(back.head.is_none());
        let x = random_batch(2, 32, 1).mapv(|v| v as f32);
        let r = model.encoder.infer(&x).unwrap();
        assert_eq!(back.encoder.infer(&x).unwrap(), r);
        assert_eq!(
            back.classifier.unwrap().infer(&r).unwrap(),
            model.classifier.as_ref().unwrap().infer(&r).unwrap()
        );
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        use crate::nn::gradcheck::{max_rel_error, numeric_grad};
        let config = EncoderConfig {
            conv1_filters: 3,
            conv1_kernel: 4,
            lstm_units: 4,
            conv2_filters: 5,
            conv2_kernel: 3,
        };
        let mut rng = rng_from_seed(21);
        let mut enc = Encoder::<f64>::new(config, &mut rng).unwrap();
        let x = random_batch(2, 16, 22);
        let coef = Array2::from_shape_simple_fn((2, 5), || rng.random_range(-1.0..1.0));
        let loss = |e: &Encoder<f64>, x: &Array3<f64>| (&e.infer(x).unwrap() * &coef).sum();

        enc.zero_grad();
        enc.forward(&x).unwrap();
        let dx = enc.backward(&coef).unwrap();

        let mut xv: Vec<f64> = x.iter().copied().collect();
        let num = numeric_grad(&mut xv, 1e-5, |v| {
            loss(&enc, &Array3::from_shape_vec(x.raw_dim(), v.to_vec()).unwrap())
        });
        let ana: Vec<f64> = dx.iter().copied().collect();
        assert!(max_rel_error(&ana, &num, 1e-6) < 1e-4);

        for name in enc.param_names("") {
            let mut analytic = Vec::new();
            let mut values = Vec::new();
            enc.visit_params("", &mut |n, p| {
                if n == name {
                    analytic = p.grad.iter().copied().collect();
                    values = p.value.iter().copied().collect();
                }
            });
            let mut probe = enc.clone();
            let num = numeric_grad(&mut values, 1e-5, |v| {
                probe.visit_params_mut("", &mut |n, p| {
                    if n == name {
                        p.value.iter_mut().zip(v).for_each(|(d, s)| *d = *s);
                    }
                });
                loss(&probe, &x)
            });
            let err = max_rel_error(&analytic, &num, 1e-6);
            assert!(err < 1e-4, "{name}: {err}");
        }
    }
}
