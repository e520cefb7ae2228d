//! Downstream training and the experiment protocols.
//!
//! A SemiAMC run pretrains an encoder contrastively on the pretraining pool,
//! trains a classifier on the frozen representations of the labeled frames,
//! then fine-tunes a suffix of the encoder together with the classifier. The
//! supervised baseline trains the same architecture from scratch on the same
//! labeled frames.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{rotate, RotationAngle};
use crate::contrastive::{pretrain, EpochLoss, PretrainConfig};
use crate::dataio::{normalize, select_subsets, Dataset, IqFrame, SplitTag, SubsetSelection, Subsets};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::model::{frames_to_batch, Classifier, Encoder, EncoderConfig, HeadConfig, ProjectionHead, CLASSIFIER_PREFIX, ENCODER_PREFIX};
use crate::nn::{l2_penalty, snapshot, restore, softmax_cross_entropy, Adam, Mode, ParameterTree, Parameterized};
use crate::seed::{derive_rng, derive_seed, Rng};

/// Which encoder parameters fine-tuning may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneScope {
    None,
    /// The second convolution (everything after the LSTMs).
    LastConv,
    Full,
}

impl FinetuneScope {
    fn includes(self, name: &str) -> bool {
        match self {
            FinetuneScope::None => false,
            FinetuneScope::LastConv => name.starts_with("encoder.conv2."),
            FinetuneScope::Full => name.starts_with("encoder."),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FinetuneScope::None => "none",
            FinetuneScope::LastConv => "last_conv",
            FinetuneScope::Full => "full",
        }
    }
}

impl fmt::Display for FinetuneScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FinetuneScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(FinetuneScope::None),
            "last_conv" => Ok(FinetuneScope::LastConv),
            "full" => Ok(FinetuneScope::Full),
            other => Err(Error::InvalidConfig(format!("unknown fine-tune scope {other:?}"))),
        }
    }
}

/// Every hyperparameter of pretraining, probing and fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub encoder: EncoderConfig,
    pub heads: HeadConfig,
    /// Its `seed` is replaced per run.
    pub pretrain: PretrainConfig,
    pub classifier_lr: f64,
    pub classifier_batch: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub finetune_scope: FinetuneScope,
    pub finetune_lr: f64,
    pub finetune_max_epochs: usize,
    pub seeds: Vec<u64>,
    pub dropout: f64,
    pub l2: f64,
    /// Random quarter-turn rotations of the baseline's training frames.
    pub supervised_augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::paper(),
            heads: HeadConfig::default(),
            pretrain: PretrainConfig::default(),
            classifier_lr: 1e-3,
            classifier_batch: 64,
            patience: 30,
            max_epochs: 500,
            finetune_scope: FinetuneScope::LastConv,
            finetune_lr: 1e-4,
            finetune_max_epochs: 500,
            seeds: (0..5).collect(),
            dropout: 0.5,
            l2: 1e-4,
            supervised_augment: false,
        }
    }
}

impl TrainConfig {
    /// Narrow encoder and a shorter, faster pretraining schedule for
    /// single-machine experiments.
    pub fn desk() -> Self {
        Self {
            encoder: EncoderConfig::desk(),
            pretrain: PretrainConfig {
                epochs: 50,
                batch_size: 128,
                lr: 1e-3,
                ..PretrainConfig::default()
            },
            seeds: (0..3).collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.pretrain.validate()?;
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.classifier_batch == 0 {
            return Err(Error::InvalidConfig("classifier batch must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        for (name, v) in [("classifier_lr", self.classifier_lr), ("finetune_lr", self.finetune_lr), ("l2", self.l2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} = {v} is not valid")));
            }
        }
        Ok(())
    }
}

/// Stops once the validation loss has not decreased for `patience`
/// consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: Option<usize>,
    stale: usize,
}

/// Result of feeding one epoch's validation loss to [`EarlyStopping`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Verdict {
        let improved = val_loss < self.best_loss;
        if improved {
            self.best_loss = val_loss;
            self.best_epoch = Some(epoch);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Verdict {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; `None` if no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
}

/// Normalized frames with class labels.
#[derive(Debug, Clone)]
pub struct LabeledFrames {
    pub frames: Vec<IqFrame>,
    pub labels: Vec<usize>,
}

impl LabeledFrames {
    pub fn from_dataset(dataset: &Dataset, indices: &[usize]) -> Result<Self> {
        let frames = indices
            .iter()
            .map(|&i| normalize(dataset.frame(i)))
            .collect::<Result<Vec<_>>>()?;
        let labels = indices.iter().map(|&i| dataset.labels()[i] as usize).collect();
        Ok(Self { frames, labels })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

pub fn normalized_frames(dataset: &Dataset, indices: &[usize]) -> Result<Vec<IqFrame>> {
    indices.iter().map(|&i| normalize(dataset.frame(i))).collect()
}

struct FitSettings {
    lr: f64,
    batch: usize,
    patience: usize,
    max_epochs: usize,
}

/// One model being trained by [`fit`].
trait Trainable {
    fn train_len(&self) -> usize;
    fn train_batch(&mut self, idx: &[usize], lr: f64, rng: &mut Rng) -> Result<f64>;
    fn val_loss(&mut self) -> Result<f64>;
    fn save_best(&mut self);
    fn restore_best(&mut self);
}

fn fit(model: &mut dyn Trainable, settings: &FitSettings, seed: u64) -> Result<TrainOutcome> {
    let mut stopper = EarlyStopping::new(settings.patience);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..model.train_len()).collect();
    for epoch in 0..settings.max_epochs {
        let mut rng = derive_rng(seed, "pipeline/fit", &[epoch as i64]);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(settings.batch) {
            let loss = model.train_batch(chunk, settings.lr, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::NumericFailure(format!("training loss is {loss} in epoch {epoch}")));
            }
            total += loss * chunk.len() as f64;
        }
        let val_loss = model.val_loss()?;
        if !val_loss.is_finite() {
            return Err(Error::NumericFailure(format!("validation loss is {val_loss} in epoch {epoch}")));
        }
        history.push(EpochRecord {
            epoch,
            train_loss: total / order.len() as f64,
            val_loss,
        });
        let verdict = stopper.observe(epoch, val_loss);
        if verdict.improved {
            model.save_best();
        }
        if verdict.stop {
            break;
        }
    }
    if stopper.best_epoch().is_some() {
        model.restore_best();
    }
    Ok(TrainOutcome {
        history,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best_loss(),
    })
}

fn is_weight(name: &str) -> bool {
    !name.ends_with(".bias")
}

fn mean_ce(classifier: &Classifier<f32>, r: &Array2<f32>, labels: &[usize]) -> Result<f64> {
    let (loss, _) = softmax_cross_entropy(&classifier.infer(r)?, labels)?;
    Ok(loss as f64)
}

/// Classifier on precomputed representations.
struct Probe<'a> {
    classifier: &'a mut Classifier<f32>,
    train_r: Array2<f32>,
    train_y: Vec<usize>,
    val_r: Array2<f32>,
    val_y: Vec<usize>,
    l2: f64,
    adam: Adam<f32>,
    best: ParameterTree<f32>,
}

impl Trainable for Probe<'_> {
    fn train_len(&self) -> usize {
        self.train_y.len()
    }

    fn train_batch(&mut self, idx: &[usize], lr: f64, rng: &mut Rng) -> Result<f64> {
        let r = self.train_r.select(Axis(0), idx);
        let y: Vec<usize> = idx.iter().map(|&i| self.train_y[i]).collect();
        self.classifier.zero_grad();
        let logits = self.classifier.forward(&r, Mode::Train, rng)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, &y)?;
        self.classifier.backward(&dlogits)?;
        let penalty = l2_penalty(self.classifier, CLASSIFIER_PREFIX, self.l2, &is_weight);
        self.adam.step(self.classifier, CLASSIFIER_PREFIX, lr, &|_| true);
        Ok((loss + penalty) as f64)
    }

    fn val_loss(&mut self) -> Result<f64> {
        mean_ce(self.classifier, &self.val_r, &self.val_y)
    }

    fn save_best(&mut self) {
        self.best = snapshot(self.classifier, CLASSIFIER_PREFIX);
    }

    fn restore_best(&mut self) {
        restore(self.classifier, CLASSIFIER_PREFIX, &self.best);
    }
}

enum JointInput {
    /// Cached second-LSTM outputs; only the encoder suffix runs.
    Features { train: Array3<f32>, val: Array3<f32> },
    Frames { train: Vec<IqFrame>, val: Array3<f32>, augment: bool },
}

/// Encoder (or its suffix) and classifier trained together.
struct Joint<'a> {
    encoder: &'a mut Encoder<f32>,
    classifier: &'a mut Classifier<f32>,
    scope: FinetuneScope,
    input: JointInput,
    train_y: Vec<usize>,
    val_y: Vec<usize>,
    l2: f64,
    enc_adam: Adam<f32>,
    clf_adam: Adam<f32>,
    best: (ParameterTree<f32>, ParameterTree<f32>),
}

impl Trainable for Joint<'_> {
    fn train_len(&self) -> usize {
        self.train_y.len()
    }

    fn train_batch(&mut self, idx: &[usize], lr: f64, rng: &mut Rng) -> Result<f64> {
        let y: Vec<usize> = idx.iter().map(|&i| self.train_y[i]).collect();
        self.encoder.zero_grad();
        self.classifier.zero_grad();
        let r = match &self.input {
            JointInput::Features { train, .. } => self.encoder.forward_suffix(&train.select(Axis(0), idx))?,
            JointInput::Frames { train, augment, .. } => {
                let frames: Vec<IqFrame> = idx
                    .iter()
                    .map(|&i| {
                        if *augment {
                            rotate(&train[i], RotationAngle::sample(rng))
                        } else {
                            train[i].clone()
                        }
                    })
                    .collect();
                self.encoder.forward(&frames_to_batch(&frames)?)?
            }
        };
        let logits = self.classifier.forward(&r, Mode::Train, rng)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, &y)?;
        let dr = self.classifier.backward(&dlogits)?;
        match self.input {
            JointInput::Features { .. } => {
                self.encoder.backward_suffix(&dr)?;
            }
            JointInput::Frames { .. } => {
                self.encoder.backward(&dr)?;
            }
        }
        let scope = self.scope;
        let mut penalty = l2_penalty(self.classifier, CLASSIFIER_PREFIX, self.l2, &is_weight);
        penalty += l2_penalty(self.encoder, ENCODER_PREFIX, self.l2, &|n| scope.includes(n) && is_weight(n));
        self.clf_adam.step(self.classifier, CLASSIFIER_PREFIX, lr, &|_| true);
        self.enc_adam.step(self.encoder, ENCODER_PREFIX, lr, &|n| scope.includes(n));
        Ok((loss + penalty) as f64)
    }

    fn val_loss(&mut self) -> Result<f64> {
        let r = match &self.input {
            JointInput::Features { val, .. } => self.encoder.infer_suffix(val)?,
            JointInput::Frames { val, .. } => self.encoder.infer(val)?,
        };
        mean_ce(self.classifier, &r, &self.val_y)
    }

    fn save_best(&mut self) {
        self.best = (
            snapshot(self.encoder, ENCODER_PREFIX),
            snapshot(self.classifier, CLASSIFIER_PREFIX),
        );
    }

    fn restore_best(&mut self) {
        restore(self.encoder, ENCODER_PREFIX, &self.best.0);
        restore(self.classifier, CLASSIFIER_PREFIX, &self.best.1);
    }
}

fn check_labeled(train: &LabeledFrames, val: &LabeledFrames) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

fn represent(encoder: &Encoder<f32>, frames: &[IqFrame]) -> Result<Array2<f32>> {
    let mut parts = Vec::new();
    for chunk in frames.chunks(256) {
        parts.push(encoder.infer(&frames_to_batch(chunk)?)?);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Malformed(e.to_string()))
}

fn features(encoder: &Encoder<f32>, frames: &[IqFrame]) -> Result<Array3<f32>> {
    let mut parts = Vec::new();
    for chunk in frames.chunks(256) {
        parts.push(encoder.infer_features(&frames_to_batch(chunk)?)?);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Malformed(e.to_string()))
}

fn new_classifier(encoder: &Encoder<f32>, config: &TrainConfig, seed: u64) -> Result<Classifier<f32>> {
    let mut rng = derive_rng(seed, "pipeline/init/classifier", &[]);
    Classifier::new(
        encoder.repr_dim(),
        config.heads.classifier_hidden,
        config.heads.classes,
        config.dropout,
        &mut rng,
    )
}

/// Trains a fresh classifier on the frozen encoder's representations and
/// returns it with the parameters of its best validation epoch.
pub fn train_classifier(
    encoder: &Encoder<f32>,
    train: &LabeledFrames,
    val: &LabeledFrames,
    config: &TrainConfig,
    seed: u64,
) -> Result<(Classifier<f32>, TrainOutcome)> {
    config.validate()?;
    check_labeled(train, val)?;
    let mut classifier = new_classifier(encoder, config, seed)?;
    let mut probe = Probe {
        classifier: &mut classifier,
        train_r: represent(encoder, &train.frames)?,
        train_y: train.labels.clone(),
        val_r: represent(encoder, &val.frames)?,
        val_y: val.labels.clone(),
        l2: config.l2,
        adam: Adam::default(),
        best: Vec::new(),
    };
    let settings = FitSettings {
        lr: config.classifier_lr,
        batch: config.classifier_batch,
        patience: config.patience,
        max_epochs: config.max_epochs,
    };
    let outcome = fit(&mut probe, &settings, derive_seed(seed, "pipeline/probe", &[]))?;
    Ok((classifier, outcome))
}

/// Trains the classifier together with the encoder parameters selected by
/// `config.finetune_scope`, keeping the best validation epoch.
pub fn finetune(
    encoder: &mut Encoder<f32>,
    classifier: &mut Classifier<f32>,
    train: &LabeledFrames,
    val: &LabeledFrames,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    let scope = config.finetune_scope;
    let input = match scope {
        FinetuneScope::None => return Err(Error::NothingToFinetune),
        FinetuneScope::LastConv => JointInput::Features {
            train: features(encoder, &train.frames)?,
            val: features(encoder, &val.frames)?,
        },
        FinetuneScope::Full => JointInput::Frames {
            train: train.frames.clone(),
            val: frames_to_batch(&val.frames)?,
            augment: false,
        },
    };
    check_labeled(train, val)?;
    let mut joint = Joint {
        encoder,
        classifier,
        scope,
        input,
        train_y: train.labels.clone(),
        val_y: val.labels.clone(),
        l2: config.l2,
        enc_adam: Adam::default(),
        clf_adam: Adam::default(),
        best: (Vec::new(), Vec::new()),
    };
    let settings = FitSettings {
        lr: config.finetune_lr,
        batch: config.classifier_batch,
        patience: config.patience,
        max_epochs: config.finetune_max_epochs,
    };
    fit(&mut joint, &settings, derive_seed(seed, "pipeline/finetune", &[]))
}

/// Trains encoder and classifier from scratch on the labeled frames only.
pub fn supervised_baseline(
    train: &LabeledFrames,
    val: &LabeledFrames,
    config: &TrainConfig,
    seed: u64,
) -> Result<(Encoder<f32>, Classifier<f32>, TrainOutcome)> {
    config.validate()?;
    check_labeled(train, val)?;
    let mut rng = derive_rng(seed, "pipeline/init/supervised", &[]);
    let mut encoder = Encoder::new(config.encoder, &mut rng)?;
    let mut classifier = new_classifier(&encoder, config, derive_seed(seed, "pipeline/supervised", &[]))?;
    let mut joint = Joint {
        encoder: &mut encoder,
        classifier: &mut classifier,
        scope: FinetuneScope::Full,
        input: JointInput::Frames {
            train: train.frames.clone(),
            val: frames_to_batch(&val.frames)?,
            augment: config.supervised_augment,
        },
        train_y: train.labels.clone(),
        val_y: val.labels.clone(),
        l2: config.l2,
        enc_adam: Adam::default(),
        clf_adam: Adam::default(),
        best: (Vec::new(), Vec::new()),
    };
    let settings = FitSettings {
        lr: config.classifier_lr,
        batch: config.classifier_batch,
        patience: config.patience,
        max_epochs: config.max_epochs,
    };
    let outcome = fit(&mut joint, &settings, derive_seed(seed, "pipeline/supervised/fit", &[]))?;
    Ok((encoder, classifier, outcome))
}

/// A contrastively pretrained encoder and projection head.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub encoder: Encoder<f32>,
    pub head: ProjectionHead<f32>,
    pub history: Vec<EpochLoss>,
}

/// Pretrains a freshly initialized encoder and head on normalized `frames`.
/// The batch size is clamped to the pool size.
pub fn pretrain_encoder(frames: &[IqFrame], config: &TrainConfig, seed: u64) -> Result<Pretrained> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = derive_rng(seed, "pipeline/init/pretrain", &[]);
    let mut encoder = Encoder::new(config.encoder, &mut rng)?;
    let mut head = ProjectionHead::new(
        encoder.repr_dim(),
        config.heads.head_hidden,
        config.heads.projection_dim,
        &mut rng,
    );
    let pc = PretrainConfig {
        batch_size: config.pretrain.batch_size.min(frames.len()),
        seed: derive_seed(seed, "pipeline/pretrain", &[]),
        ..config.pretrain
    };
    let history = pretrain(&mut encoder, &mut head, frames, &pc)?;
    Ok(Pretrained { encoder, head, history })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Frozen pretrained encoder, classifier only.
    Probe,
    /// Probe followed by fine-tuning.
    SemiAmc,
    Supervised,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Probe => "probe",
            Method::SemiAmc => "semiamc",
            Method::Supervised => "supervised",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Points are labeled frames per cell.
    Labels,
    /// Points are extra unlabeled frames per cell.
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// `n` or `u`, depending on the sweep.
    pub point: usize,
    pub seed: u64,
    pub method: Method,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub point: usize,
    pub method: Method,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_acc_snr_gt0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub kind: SweepKind,
    pub config: TrainConfig,
    /// Ordered by seed, then point, then method.
    pub records: Vec<RunRecord>,
}

impl ExperimentResult {
    /// Mean and population standard deviation over seeds, per point and method.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut groups: std::collections::BTreeMap<(usize, Method), Vec<&MetricsReport>> = Default::default();
        for r in &self.records {
            groups.entry((r.point, r.method)).or_default().push(&r.report);
        }
        groups
            .into_iter()
            .map(|((point, method), reports)| {
                let n = reports.len() as f64;
                let accs: Vec<f64> = reports.iter().map(|r| r.overall_accuracy).collect();
                let mean = accs.iter().sum::<f64>() / n;
                let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
                let gt0 = reports.iter().map(|r| r.acc_snr_gt0.unwrap_or(f64::NAN)).sum::<f64>() / n;
                Aggregate {
                    point,
                    method,
                    runs: reports.len(),
                    mean_accuracy: mean,
                    std_accuracy: var.sqrt(),
                    mean_acc_snr_gt0: gt0,
                }
            })
            .collect()
    }

    pub fn mean_accuracy(&self, point: usize, method: Method) -> Option<f64> {
        self.aggregates()
            .into_iter()
            .find(|a| a.point == point && a.method == method)
            .map(|a| a.mean_accuracy)
    }

    /// CSV rows `n_or_u,seed,overall_acc,acc_snr_ge0` for one method.
    pub fn to_csv(&self, method: Method) -> String {
        let mut s = String::from("n_or_u,seed,overall_acc,acc_snr_ge0\n");
        for r in self.records.iter().filter(|r| r.method == method) {
            let gt0 = r.report.acc_snr_gt0.map(crate::eval::sig9).map_or(String::new(), |v| v.to_string());
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.point,
                r.seed,
                crate::eval::sig9(r.report.overall_accuracy),
                gt0
            ));
        }
        s
    }
}

type ProgressFn = dyn Fn(&str) + Send + Sync;

/// Shared state for sweeps: parallelism, a cache of pretrained encoders keyed
/// by (seed, pool), and an optional progress sink.
pub struct SweepContext {
    pub jobs: usize,
    cache: Mutex<HashMap<(u64, u64), Pretrained>>,
    progress: Option<Box<ProgressFn>>,
}

impl Default for SweepContext {
    fn default() -> Self {
        Self::new(1)
    }
}

impl SweepContext {
    pub fn new(jobs: usize) -> Self {
        Self {
            jobs: jobs.max(1),
            cache: Mutex::new(HashMap::new()),
            progress: None,
        }
    }

    pub fn with_progress(mut self, f: impl Fn(&str) + Send + Sync + 'static) -> Self {
        self.progress = Some(Box::new(f));
        self
    }

    fn log(&self, msg: &str) {
        if let Some(f) = &self.progress {
            f(msg);
        }
    }

    fn pretrained(&self, dataset: &Dataset, pool: &[usize], config: &TrainConfig, seed: u64) -> Result<Pretrained> {
        let mut h = DefaultHasher::new();
        pool.hash(&mut h);
        let key = (seed, h.finish());
        if let Some(p) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(p.clone());
        }
        self.log(&format!("seed {seed}: pretraining on {} frames", pool.len()));
        let p = pretrain_encoder(&normalized_frames(dataset, pool)?, config, seed)?;
        if let Some(last) = p.history.last() {
            self.log(&format!("seed {seed}: pretrain loss {:.4}", last.loss));
        }
        self.cache.lock().expect("cache lock").insert(key, p.clone());
        Ok(p)
    }
}

/// Runs `f(0..n)` on up to `jobs` threads and returns results in index order.
fn par_map<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let slots: Vec<Mutex<Option<Result<T>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.min(n).max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                *slots[i].lock().expect("slot lock") = Some(f(i));
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}

/// Seed for subset selection in a run with the given seed.
pub fn selection_seed(seed: u64) -> u64 {
    derive_seed(seed, "pipeline/select", &[])
}

fn test_indices(dataset: &Dataset) -> Result<Vec<usize>> {
    if !dataset.has_splits() {
        return Err(Error::InvalidConfig("dataset has no split tags".into()));
    }
    let test = dataset.indices_in(SplitTag::Test);
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(test)
}

/// Probe and fine-tune on one labeled subset; returns (probe, semiamc) reports.
fn semi_run(
    dataset: &Dataset,
    pre: &Pretrained,
    subsets: &Subsets,
    test: &[usize],
    config: &TrainConfig,
    seed: u64,
) -> Result<(MetricsReport, MetricsReport)> {
    let train = LabeledFrames::from_dataset(dataset, &subsets.labeled_train)?;
    let val = LabeledFrames::from_dataset(dataset, &subsets.labeled_val)?;
    let mut encoder = pre.encoder.clone();
    let (mut classifier, _) = train_classifier(&encoder, &train, &val, config, seed)?;
    let probe = evaluate(&encoder, &classifier, dataset, test)?;
    let semi = if config.finetune_scope == FinetuneScope::None {
        probe.clone()
    } else {
        finetune(&mut encoder, &mut classifier, &train, &val, config, seed)?;
        evaluate(&encoder, &classifier, dataset, test)?
    };
    Ok((probe, semi))
}

/// For each labeled count `n`: pretrain on every train frame, run SemiAMC and
/// the supervised baseline on the same labeled subsets, score on the test split.
pub fn run_label_sweep(dataset: &Dataset, n_values: &[usize], config: &TrainConfig, ctx: &SweepContext) -> Result<ExperimentResult> {
    config.validate()?;
    if n_values.is_empty() {
        return Err(Error::InvalidConfig("no n values given".into()));
    }
    let test = test_indices(dataset)?;
    let per_seed = par_map(config.seeds.len(), ctx.jobs, |k| {
        let seed = config.seeds[k];
        let mut records = Vec::new();
        for &n in n_values {
            let subsets = select_subsets(dataset, &SubsetSelection::new(n, None, selection_seed(seed)))?;
            let pre = ctx.pretrained(dataset, &subsets.pretrain_pool(), config, seed)?;
            let run_seed = derive_seed(seed, "pipeline/run", &[n as i64]);
            let (probe, semi) = semi_run(dataset, &pre, &subsets, &test, config, run_seed)?;
            let train = LabeledFrames::from_dataset(dataset, &subsets.labeled_train)?;
            let val = LabeledFrames::from_dataset(dataset, &subsets.labeled_val)?;
            let (enc, clf, _) = supervised_baseline(&train, &val, config, run_seed)?;
            let sup = evaluate(&enc, &clf, dataset, &test)?;
            ctx.log(&format!(
                "seed {seed} n={n}: probe {:.4} semiamc {:.4} supervised {:.4}",
                probe.overall_accuracy, semi.overall_accuracy, sup.overall_accuracy
            ));
            for (method, report) in [(Method::Probe, probe), (Method::SemiAmc, semi), (Method::Supervised, sup)] {
                records.push(RunRecord { point: n, seed, method, report });
            }
        }
        Ok(records)
    })?;
    Ok(ExperimentResult {
        kind: SweepKind::Labels,
        config: config.clone(),
        records: per_seed.into_iter().flatten().collect(),
    })
}

/// For each unlabeled count `u`: pretrain on the `n` labeled plus `u` extra
/// frames per cell, then probe and fine-tune with the `n` labels.
pub fn run_unlabeled_sweep(
    dataset: &Dataset,
    n: usize,
    u_values: &[usize],
    config: &TrainConfig,
    ctx: &SweepContext,
) -> Result<ExperimentResult> {
    config.validate()?;
    if u_values.is_empty() {
        return Err(Error::InvalidConfig("no u values given".into()));
    }
    let test = test_indices(dataset)?;
    let per_seed = par_map(config.seeds.len(), ctx.jobs, |k| {
        let seed = config.seeds[k];
        let mut records = Vec::new();
        for &u in u_values {
            let subsets = select_subsets(dataset, &SubsetSelection::new(n, Some(u), selection_seed(seed)))?;
            let pre = ctx.pretrained(dataset, &subsets.pretrain_pool(), config, seed)?;
            let run_seed = derive_seed(seed, "pipeline/run", &[n as i64]);
            let (probe, semi) = semi_run(dataset, &pre, &subsets, &test, config, run_seed)?;
            ctx.log(&format!(
                "seed {seed} u={u}: probe {:.4} semiamc {:.4}",
                probe.overall_accuracy, semi.overall_accuracy
            ));
            records.push(RunRecord { point: u, seed, method: Method::Probe, report: probe });
            records.push(RunRecord { point: u, seed, method: Method::SemiAmc, report: semi });
        }
        Ok(records)
    })?;
    Ok(ExperimentResult {
        kind: SweepKind::Unlabeled,
        config: config.clone(),
        records: per_seed.into_iter().flatten().collect(),
    })
}
