//! Frames, datasets, deterministic splits and labeled/unlabeled selection.

mod iqd;

pub use iqd::{decode, encode, load, save, IQD_HEADER_LEN, IQD_MAGIC, IQD_VERSION};

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_rng;
use crate::sigsyn::ModulationScheme;

/// One 2×N frame of I/Q samples, stored row-major (I row then Q row).
#[derive(Debug, Clone, PartialEq)]
pub struct IqFrame {
    data: Vec<f32>,
}

impl IqFrame {
    pub fn new(i: Vec<f32>, q: Vec<f32>) -> Result<Self> {
        if i.len() != q.len() || i.is_empty() {
            return Err(Error::shape("IqFrame", &[2, i.len()], &[2, q.len()]));
        }
        let mut data = i;
        data.extend(q);
        Self::from_rows(data)
    }

    /// Builds a frame from the concatenated I and Q rows.
    pub fn from_rows(data: Vec<f32>) -> Result<Self> {
        if data.is_empty() || data.len() % 2 != 0 {
            return Err(Error::Malformed(format!(
                "frame needs 2N values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("IqFrame"));
        }
        Ok(Self { data })
    }

    /// Samples per row.
    pub fn len(&self) -> usize {
        self.data.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn i(&self) -> &[f32] {
        &self.data[..self.len()]
    }

    pub fn q(&self) -> &[f32] {
        &self.data[self.len()..]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn to_array(&self) -> Array2<f32> {
        Array2::from_shape_vec((2, self.len()), self.data.clone()).expect("2N layout")
    }

    /// Root mean square over all 2N values.
    ///
    /// Accumulated as Σ_k (I_k² + Q_k²) so the result is bit-identical for
    /// any quarter-turn rotation of the frame.
    pub fn rms(&self) -> f64 {
        let ss: f64 = self
            .i()
            .iter()
            .zip(self.q())
            .map(|(&i, &q)| (i as f64) * (i as f64) + (q as f64) * (q as f64))
            .sum();
        (ss / self.data.len() as f64).sqrt()
    }

    pub(crate) fn map_values(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn from_raw(data: Vec<f32>) -> Self {
        Self { data }
    }
}

/// Divides the frame by its RMS over all 2N values.
pub fn normalize(frame: &IqFrame) -> Result<IqFrame> {
    let rms = frame.rms();
    if rms == 0.0 {
        return Err(Error::ZeroPowerFrame);
    }
    if !rms.is_finite() {
        return Err(Error::NonFinite("normalize"));
    }
    Ok(frame.map_values(|v| (v as f64 / rms) as f32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum SplitTag {
    Unassigned = 0,
    Train = 1,
    Val = 2,
    Test = 3,
}

impl SplitTag {
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(SplitTag::Unassigned),
            1 => Ok(SplitTag::Train),
            2 => Ok(SplitTag::Val),
            3 => Ok(SplitTag::Test),
            other => Err(Error::Malformed(format!("split tag {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Unassigned => "unassigned",
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Synthetic,
    Converted,
}

/// Labeled frames with per-frame SNR and split tag, stored as parallel arrays.
#[derive(Debug, Clone)]
pub struct Dataset {
    frame_len: usize,
    frames: Vec<IqFrame>,
    labels: Vec<u8>,
    snrs_db: Vec<i8>,
    splits: Vec<SplitTag>,
    provenance: Provenance,
}

/// Provenance is not stored in IQD files and is ignored by equality.
impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.frame_len == other.frame_len
            && self.frames == other.frames
            && self.labels == other.labels
            && self.snrs_db == other.snrs_db
            && self.splits == other.splits
    }
}

pub type CellKey = (u8, i8);

impl Dataset {
    pub fn from_parts(
        frames: Vec<IqFrame>,
        labels: Vec<u8>,
        snrs_db: Vec<i8>,
        splits: Vec<SplitTag>,
        provenance: Provenance,
    ) -> Result<Self> {
        let n = frames.len();
        if labels.len() != n || snrs_db.len() != n || splits.len() != n {
            return Err(Error::shape(
                "Dataset parallel arrays",
                &[n, n, n],
                &[labels.len(), snrs_db.len(), splits.len()],
            ));
        }
        let frame_len = frames.first().map_or(0, IqFrame::len);
        if let Some(bad) = frames.iter().find(|f| f.len() != frame_len) {
            return Err(Error::shape("Dataset frame length", &[frame_len], &[bad.len()]));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= ModulationScheme::ALL.len()) {
            return Err(Error::UnknownScheme(format!("code {l}")));
        }
        Ok(Self {
            frame_len,
            frames,
            labels,
            snrs_db,
            splits,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn frames(&self) -> &[IqFrame] {
        &self.frames
    }

    pub fn frame(&self, idx: usize) -> &IqFrame {
        &self.frames[idx]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn snrs_db(&self) -> &[i8] {
        &self.snrs_db
    }

    pub fn splits(&self) -> &[SplitTag] {
        &self.splits
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn set_provenance(&mut self, provenance: Provenance) {
        self.provenance = provenance;
    }

    pub fn has_splits(&self) -> bool {
        self.splits.iter().any(|&s| s != SplitTag::Unassigned)
    }

    /// Frame indices of each (label, SNR) cell, in dataset order.
    pub fn cells(&self) -> BTreeMap<CellKey, Vec<usize>> {
        let mut cells: BTreeMap<CellKey, Vec<usize>> = BTreeMap::new();
        for (idx, (&l, &s)) in self.labels.iter().zip(&self.snrs_db).enumerate() {
            cells.entry((l, s)).or_default().push(idx);
        }
        cells
    }

    pub fn indices_in(&self, split: SplitTag) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Distinct SNRs in ascending order.
    pub fn snr_values(&self) -> Vec<i8> {
        let mut v = self.snrs_db.clone();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn with_splits(mut self, splits: Vec<SplitTag>) -> Result<Self> {
        if splits.len() != self.len() {
            return Err(Error::shape("split tags", &[self.len()], &[splits.len()]));
        }
        self.splits = splits;
        Ok(self)
    }

    /// New dataset holding the given frames in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            frame_len: self.frame_len,
            frames: indices.iter().map(|&i| self.frames[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            snrs_db: indices.iter().map(|&i| self.snrs_db[i]).collect(),
            splits: indices.iter().map(|&i| self.splits[i]).collect(),
            provenance: self.provenance,
        }
    }
}

/// Relative sizes of the train/val/test partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self {
            train: 2,
            val: 1,
            test: 1,
        }
    }
}

impl SplitRatio {
    /// (train, val, test) sizes for a cell. Inexact divisions round train and
    /// val down and give the remainder to test.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let total = self.train + self.val + self.test;
        let train = n * self.train / total;
        let val = n * self.val / total;
        (train, val, n - train - val)
    }
}

/// Tags every frame train/val/test, cell by cell.
///
/// Each cell's indices are shuffled with a stream derived from `seed` and the
/// cell key, then cut into consecutive train/val/test runs.
pub fn split(dataset: &Dataset, seed: u64, ratio: SplitRatio) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if ratio.train + ratio.val + ratio.test == 0 {
        return Err(Error::InvalidConfig("split ratio sums to zero".into()));
    }
    let mut tags = vec![SplitTag::Unassigned; dataset.len()];
    for ((label, snr), mut idx) in dataset.cells() {
        let mut rng = derive_rng(seed, "dataio/split", &[label as i64, snr as i64]);
        idx.shuffle(&mut rng);
        let (train, val, _) = ratio.sizes(idx.len());
        for (pos, &i) in idx.iter().enumerate() {
            tags[i] = if pos < train {
                SplitTag::Train
            } else if pos < train + val {
                SplitTag::Val
            } else {
                SplitTag::Test
            };
        }
    }
    dataset.clone().with_splits(tags)
}

/// How many frames per cell to label and how many extra unlabeled frames to
/// add to the pretraining pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSelection {
    pub n_labeled_per_cell: usize,
    /// Defaults to ⌈n/2⌉.
    pub n_val_labeled_per_cell: Option<usize>,
    /// Extra unlabeled train frames per cell; `None` takes every remaining one.
    pub u_unlabeled_per_cell: Option<usize>,
    pub seed: u64,
}

impl SubsetSelection {
    pub fn new(n_labeled_per_cell: usize, u_unlabeled_per_cell: Option<usize>, seed: u64) -> Self {
        Self {
            n_labeled_per_cell,
            n_val_labeled_per_cell: None,
            u_unlabeled_per_cell,
            seed,
        }
    }

    pub fn n_val(&self) -> usize {
        self.n_val_labeled_per_cell
            .unwrap_or(self.n_labeled_per_cell.div_ceil(2))
    }
}

/// Index lists produced by [`select_subsets`], each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Subsets {
    pub labeled_train: Vec<usize>,
    pub labeled_val: Vec<usize>,
    /// Train frames outside `labeled_train` whose labels are withheld.
    pub unlabeled_train: Vec<usize>,
}

impl Subsets {
    /// Frames used for contrastive pretraining: labeled train frames plus the
    /// unlabeled extras.
    pub fn pretrain_pool(&self) -> Vec<usize> {
        let mut pool: Vec<usize> = self
            .labeled_train
            .iter()
            .chain(&self.unlabeled_train)
            .copied()
            .collect();
        pool.sort_unstable();
        pool
    }
}

/// Picks labeled and unlabeled frames per cell by shuffling the cell's split
/// members and taking prefixes, so smaller selections nest inside larger ones
/// for the same seed.
pub fn select_subsets(dataset: &Dataset, selection: &SubsetSelection) -> Result<Subsets> {
    if !dataset.has_splits() {
        return Err(Error::InvalidConfig("dataset has no split tags".into()));
    }
    let n = selection.n_labeled_per_cell;
    let n_val = selection.n_val();
    let mut out = Subsets::default();
    for ((label, snr), idx) in dataset.cells() {
        let scheme = || {
            ModulationScheme::from_code(label)
                .map(|s| s.name().to_string())
                .unwrap_or_else(|_| label.to_string())
        };
        let mut train: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| dataset.splits[i] == SplitTag::Train)
            .collect();
        let mut val: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| dataset.splits[i] == SplitTag::Val)
            .collect();
        let u = selection
            .u_unlabeled_per_cell
            .unwrap_or(train.len().saturating_sub(n));
        if n + u > train.len() {
            return Err(Error::OversizedSelection {
                scheme: scheme(),
                snr_db: snr,
                split: "train",
                requested: n + u,
                available: train.len(),
            });
        }
        if n_val > val.len() {
            return Err(Error::OversizedSelection {
                scheme: scheme(),
                snr_db: snr,
                split: "val",
                requested: n_val,
                available: val.len(),
            });
        }
        let cell = [label as i64, snr as i64];
        train.shuffle(&mut derive_rng(selection.seed, "dataio/select/train", &cell));
        val.shuffle(&mut derive_rng(selection.seed, "dataio/select/val", &cell));
        out.labeled_train.extend_from_slice(&train[..n]);
        out.unlabeled_train.extend_from_slice(&train[n..n + u]);
        out.labeled_val.extend_from_slice(&val[..n_val]);
    }
    out.labeled_train.sort_unstable();
    out.labeled_val.sort_unstable();
    out.unlabeled_train.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigsyn::{generate_dataset, SynthSpec};
    use std::collections::BTreeSet;

    fn toy(per_cell: usize) -> Dataset {
        let spec = SynthSpec {
            schemes: vec![ModulationScheme::Bpsk, ModulationScheme::Qam16],
            snrs_db: vec![0, 10],
            frames_per_cell: per_cell,
            frame_len: 16,
            master_seed: 1,
            ..SynthSpec::default()
        };
        generate_dataset(&spec).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let f = IqFrame::new(vec![2.0; 4], vec![2.0; 4]).unwrap();
        assert!(normalize(&f).unwrap().as_slice().iter().all(|&v| v == 1.0));

        let unit = IqFrame::new(vec![1.0, -1.0, 1.0], vec![-1.0, 1.0, 1.0]).unwrap();
        let n = normalize(&unit).unwrap();
        for (a, b) in n.as_slice().iter().zip(unit.as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }

        let zero = IqFrame::new(vec![0.0; 4], vec![0.0; 4]).unwrap();
        assert!(matches!(normalize(&zero), Err(Error::ZeroPowerFrame)));
    }

    #[test]
    fn normalized_random_frames_have_unit_rms() {
        for f in toy(5).frames() {
            let n = normalize(f).unwrap();
            assert!((n.rms() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn frame_constructor_validates() {
        assert!(IqFrame::new(vec![1.0], vec![1.0, 2.0]).is_err());
        assert!(IqFrame::new(vec![f32::NAN], vec![1.0]).is_err());
        let f = IqFrame::new(vec![1.0, 2.0], vec![3.0, 4.0]).unwrap();
        assert_eq!(f.i(), &[1.0, 2.0]);
        assert_eq!(f.q(), &[3.0, 4.0]);
        assert_eq!(f.to_array().shape(), &[2, 2]);
    }

    #[test]
    fn split_sizes() {
        assert_eq!(SplitRatio::default().sizes(1000), (500, 250, 250));
        assert_eq!(SplitRatio::default().sizes(4), (2, 1, 1));
        assert_eq!(SplitRatio::default().sizes(7), (3, 1, 3));

        let d = split(&toy(4), 3, SplitRatio::default()).unwrap();
        for idx in d.cells().values() {
            let count = |t| idx.iter().filter(|&&i| d.splits()[i] == t).count();
            assert_eq!(
                (count(SplitTag::Train), count(SplitTag::Val), count(SplitTag::Test)),
                (2, 1, 1)
            );
        }
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let d = toy(40);
        let a = split(&d, 9, SplitRatio::default()).unwrap();
        let b = split(&d, 9, SplitRatio::default()).unwrap();
        let c = split(&d, 10, SplitRatio::default()).unwrap();
        assert_eq!(a.splits(), b.splits());
        assert_ne!(a.splits(), c.splits());
    }

    #[test]
    fn split_rejects_empty() {
        let empty = Dataset::from_parts(vec![], vec![], vec![], vec![], Provenance::Synthetic).unwrap();
        assert!(matches!(
            split(&empty, 0, SplitRatio::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn selection_nests_and_excludes() {
        let d = split(&toy(40), 1, SplitRatio::default()).unwrap();
        let small = select_subsets(&d, &SubsetSelection::new(5, Some(3), 4)).unwrap();
        let big = select_subsets(&d, &SubsetSelection::new(10, Some(0), 4)).unwrap();
        let big_set: BTreeSet<_> = big.labeled_train.iter().collect();
        assert!(small.labeled_train.iter().all(|i| big_set.contains(i)));
        assert_eq!(small.labeled_train.len(), 5 * 4);
        assert_eq!(small.labeled_val.len(), 3 * 4);
        assert_eq!(small.unlabeled_train.len(), 3 * 4);

        let lab: BTreeSet<_> = small.labeled_train.iter().collect();
        assert!(small.unlabeled_train.iter().all(|i| !lab.contains(i)));
        for &i in small.labeled_train.iter().chain(&small.unlabeled_train) {
            assert_eq!(d.splits()[i], SplitTag::Train);
        }
        for &i in &small.labeled_val {
            assert_eq!(d.splits()[i], SplitTag::Val);
        }
    }

    #[test]
    fn full_selection_covers_train_split() {
        let d = split(&toy(40), 1, SplitRatio::default()).unwrap();
        let all = select_subsets(&d, &SubsetSelection::new(20, None, 0)).unwrap();
        assert_eq!(all.labeled_train, d.indices_in(SplitTag::Train));
        assert!(all.unlabeled_train.is_empty());

        let pool = select_subsets(&d, &SubsetSelection::new(10, None, 0)).unwrap();
        assert_eq!(pool.pretrain_pool(), d.indices_in(SplitTag::Train));
    }

    #[test]
    fn oversized_selection_names_cell() {
        let d = split(&toy(8), 1, SplitRatio::default()).unwrap();
        let err = select_subsets(&d, &SubsetSelection::new(5, Some(0), 0)).unwrap_err();
        match err {
            Error::OversizedSelection { scheme, requested, available, .. } => {
                assert_eq!(scheme, "BPSK");
                assert_eq!((requested, available), (5, 4));
            }
            other => panic!("{other}"),
        }
    }
}
