//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use contramod_core::dataio::{load, save};
use contramod_core::eval::{evaluate, read_report, sig9, write_report, MetricsReport, ReportFormat};
use contramod_core::model::{Classifier, Encoder, ModelParams};
use contramod_core::nn::checkpoint::Checkpoint;
use contramod_core::pipeline::{
    finetune as finetune_model, normalized_frames, pretrain_encoder, run_label_sweep, run_unlabeled_sweep,
    selection_seed, train_classifier, ExperimentResult, FinetuneScope, LabeledFrames, Method, SweepContext,
    SweepKind, TrainConfig, TrainOutcome,
};
use contramod_core::{
    generate_dataset, select_subsets, split as split_dataset, Dataset, ModulationScheme, PulseShape, SplitRatio,
    SplitTag, SubsetSelection, SynthSpec,
};

use crate::manifest::{sidecar, RunManifest};
use crate::settings::{parse_list, Settings};
use crate::{Common, LabelArgs, TrainArgs, UsageError};

fn settings(common: &Common) -> Result<Settings> {
    Settings::load(common.config.as_deref())
}

fn finish(settings: &Settings, manifest: &RunManifest, path: &Path) -> Result<()> {
    for key in settings.unused() {
        eprintln!("warning: config key {key} is not used by this subcommand");
    }
    manifest.write(path)
}

fn progress(common: &Common, msg: &str) {
    if !common.quiet {
        eprintln!("{msg}");
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    load(path).with_context(|| format!("loading {}", path.display()))
}

pub fn read_indices(path: &Path, dataset_len: usize) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let idx: usize = line
            .parse()
            .map_err(|_| contramod_core::Error::Malformed(format!("{}:{}: not an index", path.display(), n + 1)))?;
        if idx >= dataset_len {
            return Err(contramod_core::Error::Malformed(format!(
                "{}:{}: index {idx} outside dataset of {dataset_len} frames",
                path.display(),
                n + 1
            ))
            .into());
        }
        out.push(idx);
    }
    Ok(out)
}

pub fn write_indices(path: &Path, indices: &[usize]) -> Result<()> {
    let mut s = String::with_capacity(indices.len() * 6);
    for i in indices {
        let _ = writeln!(s, "{i}");
    }
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub struct GenArgs {
    pub schemes: Option<String>,
    pub snrs: Option<String>,
    pub per_cell: Option<usize>,
    pub frame_len: Option<usize>,
    pub sps: Option<usize>,
    pub pulse: Option<String>,
    pub rolloff: Option<f64>,
    pub out: Option<PathBuf>,
}

pub fn gen(common: &Common, args: GenArgs) -> Result<()> {
    let mut s = settings(common)?;
    let d = SynthSpec::default();
    let schemes: Vec<ModulationScheme> = s.list("schemes", args.schemes, d.schemes.clone())?;
    let spec = SynthSpec {
        schemes,
        snrs_db: s.list("snrs", args.snrs, d.snrs_db.clone())?,
        frames_per_cell: s.get("per-cell", args.per_cell, d.frames_per_cell)?,
        frame_len: s.get("frame-len", args.frame_len, d.frame_len)?,
        samples_per_symbol: s.get("sps", args.sps, d.samples_per_symbol)?,
        pulse: match s.get("pulse", args.pulse, "rect".to_string())?.as_str() {
            "rect" => PulseShape::Rectangular,
            "rrc" => PulseShape::RootRaisedCosine {
                rolloff: s.get("rolloff", args.rolloff, 0.35)?,
            },
            other => return Err(UsageError(format!("unknown pulse {other:?}; use rect or rrc")).into()),
        },
        gain: 1.0,
        master_seed: s.get("seed", common.seed, 0)?,
    };
    let out = s.path("out", args.out)?;
    let ds = generate_dataset(&spec)?;
    save(&out, &ds)?;
    let mut m = RunManifest::new("gen", s.resolved());
    m.output("data", &out);
    m.set("output.data.sha256", crate::manifest::sha256_file(&out)?);
    m.set("frames", ds.len());
    finish(&s, &m, &sidecar(&out, "manifest"))?;
    progress(common, &format!("wrote {} frames to {}", ds.len(), out.display()));
    Ok(())
}

fn parse_ratio(text: &str) -> Result<SplitRatio> {
    let parts = parse_list::<usize>("ratio", &text.replace(':', ","))?;
    match parts.as_slice() {
        [train, val, test] => Ok(SplitRatio { train: *train, val: *val, test: *test }),
        _ => Err(UsageError(format!("--ratio {text:?}: expected train:val:test")).into()),
    }
}

pub fn split(common: &Common, data: Option<PathBuf>, ratio: Option<String>, out: Option<PathBuf>) -> Result<()> {
    let mut s = settings(common)?;
    let data = s.path("data", data)?;
    let ratio = parse_ratio(&s.get("ratio", ratio, "2:1:1".to_string())?)?;
    let seed = s.get("seed", common.seed, 0)?;
    let out = s.path("out", out)?;
    let ds = split_dataset(&load_dataset(&data)?, seed, ratio)?;
    save(&out, &ds)?;
    let mut m = RunManifest::new("split", s.resolved());
    m.input("data", &data)?;
    m.output("data", &out);
    m.set("output.data.sha256", crate::manifest::sha256_file(&out)?);
    for tag in [SplitTag::Train, SplitTag::Val, SplitTag::Test] {
        let path = sidecar(&out, &format!("{}.idx", tag.name()));
        write_indices(&path, &ds.indices_in(tag))?;
        m.output(&format!("{}-indices", tag.name()), &path);
    }
    finish(&s, &m, &sidecar(&out, "manifest"))
}

pub fn select(common: &Common, data: Option<PathBuf>, n: Option<usize>, u: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let mut s = settings(common)?;
    let data = s.path("data", data)?;
    let n = s.require("n", n)?;
    let u = s.optional("u", u)?;
    let seed = s.get("seed", common.seed, 0)?;
    let out = s.path("out", out)?;
    let ds = load_dataset(&data)?;
    let subsets = select_subsets(&ds, &SubsetSelection::new(n, u, selection_seed(seed)))?;
    let mut m = RunManifest::new("select", s.resolved());
    m.input("data", &data)?;
    for (name, idx) in [
        ("labeled_train", subsets.labeled_train.clone()),
        ("labeled_val", subsets.labeled_val.clone()),
        ("unlabeled", subsets.unlabeled_train.clone()),
        ("pool", subsets.pretrain_pool()),
    ] {
        let path = sidecar(&out, &format!("{name}.idx"));
        write_indices(&path, &idx)?;
        m.output(name, &path);
    }
    finish(&s, &m, &sidecar(&out, "manifest"))
}

fn train_config(s: &mut Settings, a: &TrainArgs) -> Result<TrainConfig> {
    let profile = s.get("profile", a.profile.clone(), "paper".to_string())?;
    let base = match profile.as_str() {
        "paper" => TrainConfig::default(),
        "desk" => TrainConfig::desk(),
        other => return Err(UsageError(format!("unknown profile {other:?}; use paper or desk")).into()),
    };
    let mut c = base.clone();
    c.pretrain.epochs = s.get("epochs", a.epochs, base.pretrain.epochs)?;
    c.pretrain.batch_size = s.get("batch", a.batch, base.pretrain.batch_size)?;
    c.pretrain.lr = s.get("lr", a.lr, base.pretrain.lr)?;
    c.pretrain.tau = s.get("tau", a.tau, base.pretrain.tau)?;
    c.pretrain.max_steps = s.optional("max-steps", a.max_steps)?;
    c.classifier_lr = s.get("classifier-lr", a.classifier_lr, base.classifier_lr)?;
    c.classifier_batch = s.get("classifier-batch", a.classifier_batch, base.classifier_batch)?;
    c.patience = s.get("patience", a.patience, base.patience)?;
    c.max_epochs = s.get("max-epochs", a.max_epochs, base.max_epochs)?;
    c.finetune_scope = s.get("scope", a.scope.clone(), base.finetune_scope.to_string())?.parse()?;
    c.finetune_lr = s.get("finetune-lr", a.finetune_lr, base.finetune_lr)?;
    c.finetune_max_epochs = s.get("finetune-max-epochs", a.finetune_max_epochs, base.finetune_max_epochs)?;
    c.dropout = s.get("dropout", a.dropout, base.dropout)?;
    c.l2 = s.get("l2", a.l2, base.l2)?;
    c.supervised_augment = s.flag("supervised-augment", a.supervised_augment)?;
    let e = c.encoder;
    s.note(
        "encoder",
        format!("{}x{}/lstm{}/{}x{}", e.conv1_filters, e.conv1_kernel, e.lstm_units, e.conv2_filters, e.conv2_kernel),
    );
    c.validate()?;
    Ok(c)
}

pub fn pretrain(common: &Common, a: &TrainArgs, data: Option<PathBuf>, indices: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let mut s = settings(common)?;
    let data = s.path("data", data)?;
    let indices = s.optional_path("indices", indices)?;
    let config = train_config(&mut s, a)?;
    let seed = s.get("seed", common.seed, 0)?;
    let out = s.path("out", out)?;
    let ds = load_dataset(&data)?;
    let pool = match &indices {
        Some(p) => read_indices(p, ds.len())?,
        None if ds.has_splits() => ds.indices_in(SplitTag::Train),
        None => (0..ds.len()).collect(),
    };
    progress(common, &format!("pretraining on {} frames", pool.len()));
    let pre = pretrain_encoder(&normalized_frames(&ds, &pool)?, &config, seed)?;
    let params = ModelParams { encoder: pre.encoder, head: Some(pre.head), classifier: None };
    params.to_checkpoint().save(&out)?;

    let mut csv = String::from("epoch,loss,lr\n");
    for e in &pre.history {
        let _ = writeln!(csv, "{},{},{}", e.epoch, sig9(e.loss), sig9(e.lr));
    }
    let loss_path = sidecar(&out, "loss.csv");
    std::fs::write(&loss_path, csv).with_context(|| format!("writing {}", loss_path.display()))?;

    let mut m = RunManifest::new("pretrain", s.resolved());
    m.input("data", &data)?;
    if let Some(p) = &indices {
        m.input("indices", p)?;
    }
    m.output("checkpoint", &out);
    m.output("loss", &loss_path);
    m.set("pool-size", pool.len());
    finish(&s, &m, &sidecar(&out, "manifest"))?;
    if let Some(last) = pre.history.last() {
        progress(common, &format!("final pretrain loss {:.4}", last.loss));
    }
    Ok(())
}

/// Labeled train and validation sets from index files or a fresh selection.
fn labeled_sets(
    s: &mut Settings,
    m: &mut Vec<(String, PathBuf)>,
    ds: &Dataset,
    labels: &LabelArgs,
    seed: u64,
) -> Result<(LabeledFrames, LabeledFrames)> {
    let train_idx = s.optional_path("train-idx", labels.train_idx.clone())?;
    let val_idx = s.optional_path("val-idx", labels.val_idx.clone())?;
    let (train, val) = match (train_idx, val_idx) {
        (Some(t), Some(v)) => {
            let pair = (read_indices(&t, ds.len())?, read_indices(&v, ds.len())?);
            m.push(("train-idx".into(), t));
            m.push(("val-idx".into(), v));
            pair
        }
        (None, None) => {
            let n = s.require("n", labels.n)?;
            let sub = select_subsets(ds, &SubsetSelection::new(n, None, selection_seed(seed)))?;
            (sub.labeled_train, sub.labeled_val)
        }
        _ => return Err(UsageError("--train-idx and --val-idx must be given together".into()).into()),
    };
    Ok((LabeledFrames::from_dataset(ds, &train)?, LabeledFrames::from_dataset(ds, &val)?))
}

fn write_history(path: &Path, outcome: &TrainOutcome) -> Result<()> {
    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for h in &outcome.history {
        let _ = writeln!(csv, "{},{},{}", h.epoch, sig9(h.train_loss), sig9(h.val_loss));
    }
    std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))
}

pub fn train(
    common: &Common,
    a: &TrainArgs,
    labels: &LabelArgs,
    data: Option<PathBuf>,
    encoder: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut s = settings(common)?;
    let data = s.path("data", data)?;
    let enc_path = s.path("encoder", encoder)?;
    let config = train_config(&mut s, a)?;
    let seed = s.get("seed", common.seed, 0)?;
    let out = s.path("out", out)?;
    let ds = load_dataset(&data)?;
    let mut inputs = Vec::new();
    let (train, val) = labeled_sets(&mut s, &mut inputs, &ds, labels, seed)?;
    let ck = Checkpoint::load(&enc_path)?;
    let pre = ModelParams::<f32>::from_checkpoint(&ck, config.dropout)?;
    let (classifier, outcome) = train_classifier(&pre.encoder, &train, &val, &config, seed)?;
    let params = ModelParams { encoder: pre.encoder, head: pre.head, classifier: Some(classifier) };
    params.to_checkpoint().save(&out)?;
    let hist = sidecar(&out, "history.csv");
    write_history(&hist, &outcome)?;

    let mut m = RunManifest::new("train", s.resolved());
    m.input("data", &data)?;
    m.input("encoder", &enc_path)?;
    for (k, p) in &inputs {
        m.input(k, p)?;
    }
    m.output("checkpoint", &out);
    m.output("history", &hist);
    m.set("best-epoch", outcome.best_epoch.map_or("none".into(), |e| e.to_string()));
    finish(&s, &m, &sidecar(&out, "manifest"))?;
    progress(common, &format!("best validation loss {:.4} at epoch {:?}", outcome.best_val_loss, outcome.best_epoch));
    Ok(())
}

fn load_model(path: &Path, dropout: f64) -> Result<(Encoder<f32>, Classifier<f32>, ModelParams<f32>)> {
    let ck = Checkpoint::load(path)?;
    let params = ModelParams::<f32>::from_checkpoint(&ck, dropout)?;
    let classifier = params
        .classifier
        .clone()
        .ok_or_else(|| UsageError(format!("{} holds no classifier; run train first", path.display())))?;
    Ok((params.encoder.clone(), classifier, params))
}

pub fn finetune(
    common: &Common,
    a: &TrainArgs,
    labels: &LabelArgs,
    data: Option<PathBuf>,
    model: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut s = settings(common)?;
    let data = s.path("data", data)?;
    let model = s.path("model", model)?;
    let config = train_config(&mut s, a)?;
    if config.finetune_scope == FinetuneScope::None {
        return Err(contramod_core::Error::NothingToFinetune.into());
    }
    let seed = s.get("seed", common.seed, 0)?;
    let out = s.path("out", out)?;
    let ds = load_dataset(&data)?;
    let mut inputs = Vec::new();
    let (train, val) = labeled_sets(&mut s, &mut inputs, &ds, labels, seed)?;
    let (mut encoder, mut classifier, params) = load_model(&model, config.dropout)?;
    let outcome = finetune_model(&mut encoder, &mut classifier, &train, &val, &config, seed)?;
    let tuned = ModelParams { encoder, head: params.head, classifier: Some(classifier) };
    tuned.to_checkpoint().save(&out)?;
    let hist = sidecar(&out, "history.csv");
    write_history(&hist, &outcome)?;

    let mut m = RunManifest::new("finetune", s.resolved());
    m.input("data", &data)?;
    m.input("model", &model)?;
    for (k, p) in &inputs {
        m.input(k, p)?;
    }
    m.output("checkpoint", &out);
    m.output("history", &hist);
    finish(&s, &m, &sidecar(&out, "manifest"))
}

fn report_format(s: &mut Settings, format: Option<String>, path: &Path) -> Result<ReportFormat> {
    match s.optional("format", format)? {
        Some(f) => Ok(f.parse()?),
        None => Ok(ReportFormat::from_path(path)),
    }
}

pub fn eval(
    common: &Common,
    model: Option<PathBuf>,
    data: Option<PathBuf>,
    indices: Option<PathBuf>,
    out: Option<PathBuf>,
    format: Option<String>,
) -> Result<()> {
    let mut s = settings(common)?;
    let model = s.path("model", model)?;
    let data = s.path("data", data)?;
    let indices = s.optional_path("indices", indices)?;
    let out = s.path("out", out)?;
    let fmt = report_format(&mut s, format, &out)?;
    let ds = load_dataset(&data)?;
    let idx = match &indices {
        Some(p) => read_indices(p, ds.len())?,
        None if ds.has_splits() => ds.indices_in(SplitTag::Test),
        None => (0..ds.len()).collect(),
    };
    let (encoder, classifier, _) = load_model(&model, 0.0)?;
    let report = evaluate(&encoder, &classifier, &ds, &idx)?;
    write_report(&report, &out, fmt)?;
    let mut m = RunManifest::new("eval", s.resolved());
    m.input("data", &data)?;
    m.input("model", &model)?;
    if let Some(p) = &indices {
        m.input("indices", p)?;
    }
    m.output("report", &out);
    finish(&s, &m, &sidecar(&out, "manifest"))?;
    println!("{}", summary(&report));
    Ok(())
}

fn summary(r: &MetricsReport) -> String {
    let mut s = format!("overall accuracy {:.4} over {} frames\n", r.overall_accuracy, r.n_test);
    if let Some(a) = r.acc_snr_gt0 {
        let _ = writeln!(s, "accuracy above 0 dB {a:.4}");
    }
    s.push_str("snr_db  accuracy  n\n");
    for m in &r.per_snr {
        let _ = writeln!(s, "{:>6}  {:>8.4}  {}", m.snr_db, m.accuracy, m.n);
    }
    s.trim_end().to_string()
}

pub fn report(common: &Common, input: Option<PathBuf>, out: Option<PathBuf>, format: Option<String>) -> Result<()> {
    let mut s = settings(common)?;
    let input = s.path("input", input)?;
    let out = s.optional_path("out", out)?;
    let report = read_report(&input, ReportFormat::from_path(&input))?;
    if let Some(out) = out {
        let fmt = report_format(&mut s, format, &out)?;
        write_report(&report, &out, fmt)?;
        let mut m = RunManifest::new("report", s.resolved());
        m.input("report", &input)?;
        m.output("report", &out);
        finish(&s, &m, &sidecar(&out, "manifest"))?;
    }
    println!("{}", summary(&report));
    Ok(())
}

fn sweep_context(common: &Common, jobs: usize) -> SweepContext {
    let ctx = SweepContext::new(jobs);
    if common.quiet {
        ctx
    } else {
        ctx.with_progress(|msg| eprintln!("{msg}"))
    }
}

fn write_sweep(dir: &Path, result: &ExperimentResult, m: &mut RunManifest) -> Result<()> {
    let runs = dir.join("runs");
    std::fs::create_dir_all(&runs).with_context(|| format!("creating {}", runs.display()))?;
    let methods: &[Method] = match result.kind {
        SweepKind::Labels => &[Method::Probe, Method::SemiAmc, Method::Supervised],
        SweepKind::Unlabeled => &[Method::Probe, Method::SemiAmc],
    };
    let axis = match result.kind {
        SweepKind::Labels => "n",
        SweepKind::Unlabeled => "u",
    };
    for &method in methods {
        let path = dir.join(format!("{}.csv", method.name()));
        std::fs::write(&path, result.to_csv(method)).with_context(|| format!("writing {}", path.display()))?;
        m.output(method.name(), &path);
    }
    for r in &result.records {
        let path = runs.join(format!("{}_{axis}{}_seed{}.json", r.method.name(), r.point, r.seed));
        write_report(&r.report, &path, ReportFormat::Json)?;
    }
    let mut summary = format!("{axis},method,runs,mean_acc,std_acc,mean_acc_snr_ge0\n");
    for a in result.aggregates() {
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{}",
            a.point,
            a.method.name(),
            a.runs,
            sig9(a.mean_accuracy),
            sig9(a.std_accuracy),
            sig9(a.mean_acc_snr_gt0)
        );
    }
    let path = dir.join("summary.csv");
    std::fs::write(&path, &summary).with_context(|| format!("writing {}", path.display()))?;
    m.output("summary", &path);
    eprint!("{summary}");
    Ok(())
}

fn sweep_setup(
    common: &Common,
    a: &TrainArgs,
    data: Option<PathBuf>,
    seeds: Option<String>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
) -> Result<(Settings, PathBuf, TrainConfig, usize, PathBuf, Dataset)> {
    let mut s = settings(common)?;
    let data = s.path("data", data)?;
    let mut config = train_config(&mut s, a)?;
    config.seeds = s.list("seeds", seeds, config.seeds.clone())?;
    let jobs = s.get("jobs", jobs, 1)?;
    let out = s.path("out", out)?;
    let ds = load_dataset(&data)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok((s, data, config, jobs, out, ds))
}

pub fn sweep_labels(
    common: &Common,
    a: &TrainArgs,
    data: Option<PathBuf>,
    n: Option<String>,
    seeds: Option<String>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let (mut s, data, config, jobs, out, ds) = sweep_setup(common, a, data, seeds, jobs, out)?;
    let n_values: Vec<usize> = s.list("n", n, vec![1, 2, 5, 10, 20, 30, 40, 50])?;
    let result = run_label_sweep(&ds, &n_values, &config, &sweep_context(common, jobs))?;
    let mut m = RunManifest::new("sweep-labels", s.resolved());
    m.input("data", &data)?;
    write_sweep(&out, &result, &mut m)?;
    finish(&s, &m, &out.join("run.manifest"))
}

#[allow(clippy::too_many_arguments)]
pub fn sweep_unlabeled(
    common: &Common,
    a: &TrainArgs,
    data: Option<PathBuf>,
    n: Option<usize>,
    u: Option<String>,
    seeds: Option<String>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let (mut s, data, config, jobs, out, ds) = sweep_setup(common, a, data, seeds, jobs, out)?;
    let n = s.get("n", n, 10)?;
    let u_values: Vec<usize> = s.list("u", u, vec![0, 10, 50, 100, 200, 300, 400])?;
    let result = run_unlabeled_sweep(&ds, n, &u_values, &config, &sweep_context(common, jobs))?;
    let mut m = RunManifest::new("sweep-unlabeled", s.resolved());
    m.input("data", &data)?;
    write_sweep(&out, &result, &mut m)?;
    finish(&s, &m, &out.join("run.manifest"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_parsing() {
        assert_eq!(parse_ratio("2:1:1").unwrap(), SplitRatio::default());
        assert!(parse_ratio("2:1").is_err());
    }

    #[test]
    fn index_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.idx");
        write_indices(&p, &[3, 1, 4]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "3\n1\n4\n");
        assert_eq!(read_indices(&p, 5).unwrap(), vec![3, 1, 4]);
        assert!(read_indices(&p, 4).is_err());
    }
}
