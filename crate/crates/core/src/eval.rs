//! Accuracy tables, per-SNR confusion matrices and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::{normalize, Dataset};
use crate::error::{Error, Result};
use crate::model::{frames_to_batch, Classifier, Encoder};

const PREDICT_BATCH: usize = 256;

/// Metrics at one SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrMetrics {
    pub snr_db: i8,
    pub accuracy: f64,
    pub n: u64,
    /// `confusion[true][pred]` counts.
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: usize,
    pub overall_accuracy: f64,
    /// Accuracy over frames with SNR strictly above 0 dB; `None` if there are none.
    pub acc_snr_gt0: Option<f64>,
    pub n_test: u64,
    /// Ascending SNR.
    pub per_snr: Vec<SnrMetrics>,
}

impl MetricsReport {
    pub fn accuracy_at(&self, snr_db: i8) -> Option<f64> {
        self.per_snr.iter().find(|m| m.snr_db == snr_db).map(|m| m.accuracy)
    }

    /// Test frames per (true label, SNR) cell.
    pub fn n_test_per_cell(&self) -> BTreeMap<(u8, i8), u64> {
        let mut out = BTreeMap::new();
        for m in &self.per_snr {
            for (label, row) in m.confusion.iter().enumerate() {
                let n: u64 = row.iter().sum();
                if n > 0 {
                    out.insert((label as u8, m.snr_db), n);
                }
            }
        }
        out
    }

    /// Rounds every float the way report files store them.
    pub fn canonical(&self) -> Self {
        let mut r = self.clone();
        r.overall_accuracy = sig9(r.overall_accuracy);
        r.acc_snr_gt0 = r.acc_snr_gt0.map(sig9);
        for m in &mut r.per_snr {
            m.accuracy = sig9(m.accuracy);
        }
        r
    }
}

/// Rounds to 9 significant digits.
pub fn sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float")
}

/// Builds a report from true labels, SNRs and predicted labels.
pub fn report_from_predictions(labels: &[u8], snrs_db: &[i8], predicted: &[usize], classes: usize) -> Result<MetricsReport> {
    let n = labels.len();
    if snrs_db.len() != n || predicted.len() != n {
        return Err(Error::shape("evaluation inputs", &[n, n, n], &[labels.len(), snrs_db.len(), predicted.len()]));
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut by_snr: BTreeMap<i8, Vec<Vec<u64>>> = BTreeMap::new();
    for ((&y, &s), &p) in labels.iter().zip(snrs_db).zip(predicted) {
        if y as usize >= classes {
            return Err(Error::LabelOutOfRange { label: y as usize, classes });
        }
        if p >= classes {
            return Err(Error::LabelOutOfRange { label: p, classes });
        }
        by_snr.entry(s).or_insert_with(|| vec![vec![0; classes]; classes])[y as usize][p] += 1;
    }
    Ok(assemble(classes, by_snr))
}

fn assemble(classes: usize, by_snr: BTreeMap<i8, Vec<Vec<u64>>>) -> MetricsReport {
    let mut correct = 0;
    let mut total = 0;
    let mut correct_pos = 0;
    let mut total_pos = 0;
    let per_snr = by_snr
        .into_iter()
        .map(|(snr_db, confusion)| {
            let n: u64 = confusion.iter().flatten().sum();
            let c: u64 = (0..classes).map(|k| confusion[k][k]).sum();
            correct += c;
            total += n;
            if snr_db > 0 {
                correct_pos += c;
                total_pos += n;
            }
            SnrMetrics {
                snr_db,
                accuracy: ratio(c, n),
                n,
                confusion,
            }
        })
        .collect();
    MetricsReport {
        classes,
        overall_accuracy: ratio(correct, total),
        acc_snr_gt0: (total_pos > 0).then(|| ratio(correct_pos, total_pos)),
        n_test: total,
        per_snr,
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Predicted class per frame. Frames are normalized before encoding.
pub fn predict(encoder: &Encoder<f32>, classifier: &Classifier<f32>, dataset: &Dataset, indices: &[usize]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(PREDICT_BATCH) {
        let frames = chunk
            .iter()
            .map(|&i| normalize(dataset.frame(i)))
            .collect::<Result<Vec<_>>>()?;
        let r = encoder.infer(&frames_to_batch(&frames)?)?;
        out.extend(classifier.predict(&r)?);
    }
    Ok(out)
}

/// Scores the model on `indices` of `dataset`.
pub fn evaluate(encoder: &Encoder<f32>, classifier: &Classifier<f32>, dataset: &Dataset, indices: &[usize]) -> Result<MetricsReport> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let predicted = predict(encoder, classifier, dataset, indices)?;
    let labels: Vec<u8> = indices.iter().map(|&i| dataset.labels()[i]).collect();
    let snrs: Vec<i8> = indices.iter().map(|&i| dataset.snrs_db()[i]).collect();
    report_from_predictions(&labels, &snrs, &predicted, classifier.classes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// Picks the format from a file extension, defaulting to JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidConfig(format!("unknown report format {other:?}"))),
        }
    }
}

/// CSV form: an accuracy table `snr_db,accuracy,n`, a blank line, then every
/// confusion entry as `true_label,pred_label,count,snr_db`.
pub fn report_to_csv(report: &MetricsReport) -> String {
    let mut s = String::from("snr_db,accuracy,n\n");
    for m in &report.per_snr {
        writeln!(s, "{},{},{}", m.snr_db, sig9(m.accuracy), m.n).unwrap();
    }
    s.push_str("\ntrue_label,pred_label,count,snr_db\n");
    for m in &report.per_snr {
        for (t, row) in m.confusion.iter().enumerate() {
            for (p, &c) in row.iter().enumerate() {
                writeln!(s, "{t},{p},{c},{}", m.snr_db).unwrap();
            }
        }
    }
    s
}

pub fn report_from_csv(text: &str) -> Result<MetricsReport> {
    let bad = |line: &str| Error::Malformed(format!("report line {line:?}"));
    let mut blocks = text.split("\n\n");
    let acc = blocks.next().ok_or_else(|| bad(""))?;
    let conf = blocks.next().ok_or_else(|| Error::Malformed("missing confusion block".into()))?;
    let mut acc_lines = acc.lines();
    if acc_lines.next() != Some("snr_db,accuracy,n") {
        return Err(Error::Malformed("missing accuracy header".into()));
    }
    let mut snrs = Vec::new();
    for line in acc_lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(bad(line));
        }
        snrs.push(f[0].parse::<i8>().map_err(|_| bad(line))?);
    }
    let mut conf_lines = conf.lines();
    if conf_lines.next() != Some("true_label,pred_label,count,snr_db") {
        return Err(Error::Malformed("missing confusion header".into()));
    }
    let mut entries = Vec::new();
    let mut classes = 0;
    for line in conf_lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(line));
        }
        let t: usize = f[0].parse().map_err(|_| bad(line))?;
        let p: usize = f[1].parse().map_err(|_| bad(line))?;
        let c: u64 = f[2].parse().map_err(|_| bad(line))?;
        let s: i8 = f[3].parse().map_err(|_| bad(line))?;
        classes = classes.max(t + 1).max(p + 1);
        entries.push((s, t, p, c));
    }
    let mut by_snr: BTreeMap<i8, Vec<Vec<u64>>> =
        snrs.iter().map(|&s| (s, vec![vec![0; classes]; classes])).collect();
    for (s, t, p, c) in entries {
        by_snr
            .get_mut(&s)
            .ok_or_else(|| Error::Malformed(format!("confusion entry for unlisted SNR {s}")))?[t][p] = c;
    }
    Ok(assemble(classes, by_snr).canonical())
}

pub fn report_to_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(&report.canonical()).expect("report serializes");
    s.push('\n');
    s
}

pub fn report_from_json(text: &str) -> Result<MetricsReport> {
    serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))
}

pub fn write_report(report: &MetricsReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Csv => report_to_csv(report),
        ReportFormat::Json => report_to_json(report),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>, format: ReportFormat) -> Result<MetricsReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        ReportFormat::Csv => report_from_csv(&text),
        ReportFormat::Json => report_from_json(&text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::seq::SliceRandom;

    fn sample() -> (Vec<u8>, Vec<i8>, Vec<usize>) {
        let labels = vec![0, 1, 2, 0, 1, 2, 0, 0];
        let snrs = vec![-2, -2, -2, 0, 0, 4, 4, 4];
        let pred = vec![0, 2, 2, 0, 1, 1, 0, 1];
        (labels, snrs, pred)
    }

    #[test]
    fn perfect_predictions() {
        let labels: Vec<u8> = (0..33).map(|i| (i % 11) as u8).collect();
        let snrs = vec![10i8; 33];
        let pred: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        let r = report_from_predictions(&labels, &snrs, &pred, 11).unwrap();
        assert_eq!(r.overall_accuracy, 1.0);
        let c = &r.per_snr[0].confusion;
        for (t, row) in c.iter().enumerate() {
            for (p, &v) in row.iter().enumerate() {
                assert_eq!(v, if t == p { 3 } else { 0 });
            }
        }
    }

    #[test]
    fn shuffled_labels_near_chance() {
        let labels: Vec<u8> = (0..11_000).map(|i| (i % 11) as u8).collect();
        let snrs = vec![0i8; labels.len()];
        let mut total = 0.0;
        for seed in 0..5 {
            let mut pred: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
            pred.shuffle(&mut rng_from_seed(seed));
            total += report_from_predictions(&labels, &snrs, &pred, 11).unwrap().overall_accuracy;
        }
        assert!((total / 5.0 - 1.0 / 11.0).abs() < 0.02);
    }

    #[test]
    fn table_identities() {
        let (l, s, p) = sample();
        let r = report_from_predictions(&l, &s, &p, 3).unwrap();
        assert_eq!(r.n_test, 8);
        assert_eq!(r.per_snr.iter().map(|m| m.snr_db).collect::<Vec<_>>(), vec![-2, 0, 4]);
        let weighted: f64 = r.per_snr.iter().map(|m| m.accuracy * m.n as f64).sum::<f64>() / r.n_test as f64;
        assert!((weighted - r.overall_accuracy).abs() < 1e-12);
        for m in &r.per_snr {
            let total: u64 = m.confusion.iter().flatten().sum();
            let trace: u64 = (0..3).map(|k| m.confusion[k][k]).sum();
            assert_eq!(total, m.n);
            assert_eq!(trace as f64 / total as f64, m.accuracy);
        }
        // only 4 dB is above zero: 1 of 3 correct
        assert_eq!(r.acc_snr_gt0, Some(1.0 / 3.0));
        assert_eq!(r.n_test_per_cell()[&(0, 4)], 2);
    }

    #[test]
    fn out_of_range_labels() {
        assert!(matches!(
            report_from_predictions(&[0], &[0], &[3], 3),
            Err(Error::LabelOutOfRange { label: 3, .. })
        ));
        assert!(matches!(report_from_predictions(&[], &[], &[], 3), Err(Error::EmptyDataset)));
    }

    #[test]
    fn csv_and_json_roundtrip() {
        let (l, s, p) = sample();
        let r = report_from_predictions(&l, &s, &p, 3).unwrap();
        let csv = report_to_csv(&r);
        assert_eq!(csv.lines().take_while(|l| !l.is_empty()).count(), 4);
        assert_eq!(report_from_csv(&csv).unwrap(), r.canonical());
        assert_eq!(report_from_json(&report_to_json(&r)).unwrap(), r.canonical());
        assert_eq!(report_to_json(&r), report_to_json(&r.clone()));
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(1.0 / 3.0), 0.333333333);
        assert_eq!(sig9(2.0 / 3.0), 0.666666667);
        assert_eq!(sig9(0.0), 0.0);
    }

    #[test]
    fn format_from_path() {
        assert_eq!(ReportFormat::from_path(Path::new("a/report.CSV")), ReportFormat::Csv);
        assert_eq!(ReportFormat::from_path(Path::new("report.json")), ReportFormat::Json);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
