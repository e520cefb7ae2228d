//! NT-Xent loss and contrastive pretraining.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use crate::augment::make_pair;
use crate::dataio::IqFrame;
use crate::error::{Error, Result};
use crate::model::{frames_to_batch, Encoder, ProjectionHead, ENCODER_PREFIX, HEAD_PREFIX};
use crate::nn::{Adam, CosineSchedule, Parameterized, Real};
use crate::seed::derive_rng;

pub fn cosine_sim<F: Real>(a: &[F], b: &[F]) -> Result<F> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine similarity", &[a.len()], &[b.len()]));
    }
    let dot: F = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|&x| x * x).sum::<F>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<F>().sqrt();
    if na == F::zero() || nb == F::zero() {
        return Err(Error::ZeroNorm);
    }
    Ok(dot / (na * nb))
}

/// Mean NT-Xent loss over the `2M` rows of `z` and its gradient with respect
/// to `z`. Rows `2k` and `2k+1` are the positive pair for source `k`; every
/// other row in the batch is a negative.
pub fn nt_xent<F: Real>(z: &Array2<F>, tau: f64) -> Result<(F, Array2<F>)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidTemperature(tau));
    }
    let (rows, dim) = z.dim();
    if rows == 0 || rows % 2 != 0 {
        return Err(Error::shape("contrastive batch rows", &[rows.max(2) / 2 * 2], &[rows]));
    }
    let norms: Vec<F> = z.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if norms.iter().any(|&n| !n.is_finite()) {
        return Err(Error::NonFinite("embeddings"));
    }
    if norms.iter().any(|&n| n == F::zero()) {
        return Err(Error::ZeroNorm);
    }
    let mut n = z.clone();
    for (mut row, &nr) in n.axis_iter_mut(Axis(0)).zip(&norms) {
        row.mapv_inplace(|v| v / nr);
    }
    let inv_tau = F::of(1.0 / tau);
    let s = n.dot(&n.t()) * inv_tau;

    let scale = F::one() / F::of(rows as f64);
    let mut loss = F::zero();
    // dL/dS, zero on the diagonal
    let mut g = Array2::<F>::zeros((rows, rows));
    for i in 0..rows {
        let pos = i ^ 1;
        let row = s.row(i);
        let max = (0..rows).filter(|&k| k != i).map(|k| row[k]).fold(F::neg_infinity(), F::max);
        let denom: F = (0..rows).filter(|&k| k != i).map(|k| (row[k] - max).exp()).sum();
        loss += denom.ln() + max - row[pos];
        for k in (0..rows).filter(|&k| k != i) {
            g[[i, k]] = (row[k] - max).exp() / denom * scale;
        }
        g[[i, pos]] -= scale;
    }
    loss *= scale;

    let dn = (&g + &g.t()).dot(&n) * inv_tau;
    let mut dz = Array2::zeros((rows, dim));
    for i in 0..rows {
        let ni = n.row(i);
        let dni = dn.row(i);
        let proj = ni.dot(&dni);
        let mut out = dz.row_mut(i);
        for k in 0..dim {
            out[k] = (dni[k] - ni[k] * proj) / norms[i];
        }
    }
    Ok((loss, dz))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub tau: f64,
    /// Stops after this many optimizer steps even if epochs remain. The cosine
    /// schedule then spans exactly these steps.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 512,
            lr: 1e-4,
            tau: 0.5,
            max_steps: None,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidTemperature(self.tau));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("pretrain batch size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} is not valid", self.lr)));
        }
        Ok(())
    }
}

/// One row of the per-epoch loss history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean NT-Xent over the epoch's steps.
    pub loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

/// Trains `encoder` and `head` on rotated view pairs of `frames`, which are
/// expected to be normalized already.
///
/// Each epoch shuffles the pool, drops the incomplete final batch, and
/// draws fresh rotation angles for every frame.
pub fn pretrain(
    encoder: &mut Encoder<f32>,
    head: &mut ProjectionHead<f32>,
    frames: &[IqFrame],
    config: &PretrainConfig,
) -> Result<Vec<EpochLoss>> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.batch_size > frames.len() {
        return Err(Error::BatchTooLarge {
            batch: config.batch_size,
            available: frames.len(),
        });
    }
    let steps_per_epoch = frames.len() / config.batch_size;
    let mut total = config.epochs * steps_per_epoch;
    if let Some(cap) = config.max_steps {
        total = total.min(cap);
    }
    let schedule = CosineSchedule::new(config.lr, total);
    let mut enc_opt = Adam::<f32>::default();
    let mut head_opt = Adam::<f32>::default();
    let mut history = Vec::new();
    let mut step = 0;
    let mut order: Vec<usize> = (0..frames.len()).collect();

    for epoch in 0..config.epochs {
        if step >= total {
            break;
        }
        let mut shuffle = derive_rng(config.seed, "contrastive/shuffle", &[epoch as i64]);
        let mut views = derive_rng(config.seed, "contrastive/views", &[epoch as i64]);
        order.sort_unstable();
        order.shuffle(&mut shuffle);
        let mut sum = 0.0;
        let mut count = 0;
        let mut lr = schedule.lr(step);
        for chunk in order.chunks_exact(config.batch_size) {
            if step >= total {
                break;
            }
            let mut batch = Vec::with_capacity(2 * chunk.len());
            for &idx in chunk {
                let pair = make_pair(&frames[idx], idx, &mut views);
                batch.push(pair.view_i);
                batch.push(pair.view_j);
            }
            let x = frames_to_batch::<f32>(&batch)?;

            encoder.zero_grad();
            head.zero_grad();
            let r = encoder.forward(&x)?;
            let z = head.forward(&r)?;
            let (loss, dz) = nt_xent(&z, config.tau)?;
            if !loss.is_finite() {
                return Err(Error::NumericFailure(format!("pretraining loss is {loss} at step {step}")));
            }
            let dr = head.backward(&dz)?;
            encoder.backward(&dr)?;

            lr = schedule.lr(step);
            enc_opt.step(encoder, ENCODER_PREFIX, lr, &|_| true);
            head_opt.step(head, HEAD_PREFIX, lr, &|_| true);
            step += 1;
            sum += loss as f64;
            count += 1;
        }
        history.push(EpochLoss {
            epoch,
            loss: sum / count as f64,
            lr,
        });
    }
    Ok(history)
}
