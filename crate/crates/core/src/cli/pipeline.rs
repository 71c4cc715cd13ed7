//! The four pipeline stages and their on-disk hand-offs.
//!
//! ```text
//! out/
//!   config.json               resolved configuration
//!   dataset/                  inputs.csv, labels.csv, truth.csv, meta.json
//!   model.bin, train.json
//!   attributions/<label>/     attr.csv, per_step.csv, meta.json
//!   metrics.csv, report.json
//!   timings.json, error.json
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::Serialize;
use serde_json::json;

use crate::attribution::{attribute_batch, instance_seed, load_attributions, save_attributions, AttributionMeta};
use crate::autodiff::Tensor;
use crate::cli::config::{ExperimentConfig, MethodEntry, ModelSpec};
use crate::datasets::{generate, load_dataset, save_dataset, Dataset, Labels, SeriesBatch};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_json, write_json, write_table};
use crate::metrics::{black_box_batch, lipschitz_max, white_box_metrics};
use crate::models::{accuracy, load_model, model_digest, save_model, train, Model, TaskKind};

/// Files and directories the pipeline owns inside the output directory.
const ARTIFACTS: [&str; 10] = [
    "config.json",
    "dataset",
    "model.bin",
    "train.json",
    "attributions",
    "metrics.csv",
    "report.json",
    "timings.json",
    "error.json",
    "train_loss.csv",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Train,
    Attribute,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Train => "train",
            Stage::Attribute => "attribute",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage.name(), self.error)
    }
}

impl std::error::Error for StageError {}

/// Overrides of the `attribute` subcommand.
#[derive(Clone, Debug, Default)]
pub struct AttributeOverrides {
    pub method: Option<String>,
    pub steps: Option<usize>,
}

/// Runs one stage, recording its wall time and, on failure, `error.json`.
fn staged<T>(stage: Stage, out: &Path, f: impl FnOnce() -> Result<T>) -> Result<T, StageError> {
    let start = Instant::now();
    let result = f().and_then(|v| {
        record_timing(out, stage, start.elapsed().as_millis() as u64)?;
        Ok(v)
    });
    result.map_err(|error| {
        let _ = write_json(&out.join("error.json"), &json!({"stage": stage.name(), "message": error.to_string()}));
        StageError { stage, error }
    })
}

fn record_timing(out: &Path, stage: Stage, ms: u64) -> Result<()> {
    let path = out.join("timings.json");
    let mut t: BTreeMap<String, u64> = if path.exists() { read_json(&path)? } else { BTreeMap::new() };
    t.insert(stage.name().to_string(), ms);
    write_json(&path, &t)
}

/// Makes `out` ready for a fresh run. A non-empty directory is refused
/// unless `force`, which removes the pipeline's own artifacts only.
pub fn prepare_output(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let non_empty = fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some();
        if non_empty && !force {
            return Err(Error::invalid(format!(
                "output directory {} is not empty; pass --force to overwrite it",
                out.display()
            )));
        }
        for name in ARTIFACTS {
            let p = out.join(name);
            let r = if p.is_dir() {
                fs::remove_dir_all(&p)
            } else if p.exists() {
                fs::remove_file(&p)
            } else {
                Ok(())
            };
            r.map_err(|e| Error::io(&p, e))?;
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

/// Series used for training and series explained.
struct Split {
    train: Vec<usize>,
    explain: Vec<usize>,
}

fn split(cfg: &ExperimentConfig, b: usize) -> Result<Split> {
    let (train, mut explain): (Vec<usize>, Vec<usize>) = match &cfg.model {
        ModelSpec::WhiteBox => (Vec::new(), (0..b).collect()),
        ModelSpec::Train { train_fraction, .. } => {
            if b < 2 {
                return Err(Error::invalid("training needs at least two series"));
            }
            let n = ((train_fraction * b as f64).round() as usize).clamp(1, b - 1);
            ((0..n).collect(), (n..b).collect())
        }
    };
    if let Some(k) = cfg.attribution.instances {
        explain.truncate(k);
    }
    Ok(Split { train, explain })
}

/// Reference set for baselines and LOF: the training series, or every series
/// when nothing was trained.
fn background(ds: &Dataset, s: &Split) -> Result<Tensor> {
    if s.train.is_empty() {
        Ok(ds.batch.inputs.clone())
    } else {
        ds.batch.select(&s.train)
    }
}

fn dataset_dir(out: &Path) -> PathBuf {
    out.join("dataset")
}

fn attribution_dir(out: &Path, label: &str) -> PathBuf {
    out.join("attributions").join(label)
}

pub fn generate_stage(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    write_json(&out.join("config.json"), cfg)?;
    let ds = generate(&cfg.dataset)?;
    info!("generated {} series of {}", ds.batch.len(), cfg.dataset.name());
    save_dataset(&dataset_dir(out), &ds)
}

#[derive(Serialize)]
struct TrainRecord {
    white_box: bool,
    n_train: usize,
    n_explain: usize,
    final_loss: Option<f64>,
    train_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
    model_hash: String,
}

pub fn train_stage(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ds = load_dataset(&dataset_dir(out))?;
    let s = split(cfg, ds.batch.len())?;
    let (model, curve) = match &cfg.model {
        ModelSpec::WhiteBox => {
            let m = ds
                .white_box
                .clone()
                .ok_or_else(|| Error::invalid("dataset has no white-box model"))?;
            (m, Vec::new())
        }
        ModelSpec::Train {
            architecture, train: tc, ..
        } => {
            if architecture.n_features() != ds.batch.n_features() {
                return Err(Error::invalid(format!(
                    "architecture expects {} features, dataset has {}",
                    architecture.n_features(),
                    ds.batch.n_features()
                )));
            }
            let init = Model::init(architecture.clone(), cfg.dataset.task(), tc.seed)?;
            let report = train(&init, &ds.batch.subset(&s.train)?, tc)?;
            (report.model, report.loss_curve)
        }
    };
    let classify = model.task() != TaskKind::Regression && ds.batch.labels.is_some();
    let acc = |idx: &[usize]| -> Result<Option<f64>> {
        if classify && !idx.is_empty() {
            Ok(Some(accuracy(&model, &ds.batch.subset(idx)?)?))
        } else {
            Ok(None)
        }
    };
    let record = TrainRecord {
        white_box: matches!(cfg.model, ModelSpec::WhiteBox),
        n_train: s.train.len(),
        n_explain: s.explain.len(),
        final_loss: curve.last().copied(),
        train_accuracy: acc(&s.train)?,
        test_accuracy: acc(&s.explain)?,
        model_hash: model_digest(&model)?,
    };
    if let Some(a) = record.test_accuracy {
        info!("held-out accuracy {a:.3}");
    }
    save_model(&model, &out.join("model.bin"))?;
    if !curve.is_empty() {
        let rows = curve.iter().enumerate().map(|(e, l)| vec![e.to_string(), fmt_f64(*l)]);
        write_table(&out.join("train_loss.csv"), &["epoch".into(), "loss".into()], rows)?;
    }
    write_json(&out.join("train.json"), &record)
}

/// Methods the attribute stage runs after applying the overrides.
fn selected_methods(cfg: &ExperimentConfig, ov: &AttributeOverrides) -> Result<Vec<MethodEntry>> {
    let mut methods = match &ov.method {
        None => cfg.methods.clone(),
        Some(name) => {
            crate::attribution::Method::check_name(name)?;
            let from_config: Vec<MethodEntry> =
                cfg.methods.iter().filter(|m| m.method.name() == name).cloned().collect();
            if from_config.is_empty() {
                vec![MethodEntry {
                    label: name.clone(),
                    method: crate::attribution::Method::default_for(name)?,
                }]
            } else {
                from_config
            }
        }
    };
    if let Some(steps) = ov.steps {
        for m in &mut methods {
            if !m.method.set_steps(steps) {
                return Err(Error::invalid(format!("method {} has no steps option", m.method.name())));
            }
            m.method.validate()?;
        }
    }
    Ok(methods)
}

pub fn attribute_stage(cfg: &ExperimentConfig, out: &Path, ov: &AttributeOverrides) -> Result<()> {
    let methods = selected_methods(cfg, ov)?;
    let ds = load_dataset(&dataset_dir(out))?;
    let model = load_model(&out.join("model.bin"))?;
    let s = split(cfg, ds.batch.len())?;
    let inputs = ds.batch.select(&s.explain)?;
    let bg = background(&ds, &s)?;
    let hash = model_digest(&model)?;
    for entry in &methods {
        let start = Instant::now();
        let attrs = attribute_batch(&entry.method, &model, &inputs, Some(&bg), cfg.attribution.seed)?;
        let mut shape = vec![attrs.len()];
        shape.extend_from_slice(attrs[0].values.shape());
        let meta = AttributionMeta {
            method: entry.method.name().to_string(),
            options: entry.method.clone(),
            seed: cfg.attribution.seed,
            model_hash: hash.clone(),
            temporal: attrs[0].is_temporal(),
            shape,
            targets: attrs.iter().map(|a| a.targets.clone()).collect(),
        };
        save_attributions(&attribution_dir(out, &entry.label), &attrs, &meta)?;
        info!("{}: {} series in {:.1?}", entry.label, attrs.len(), start.elapsed());
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub method: String,
    pub metric: String,
    pub policy: String,
    pub value: f64,
}

/// Class label of each explained series; the last step's for per-step labels.
fn class_labels(batch: &SeriesBatch, idx: &[usize]) -> Option<Vec<usize>> {
    let labels = batch.labels.as_ref()?;
    let t = batch.seq_len();
    Some(
        idx.iter()
            .map(|&i| match labels {
                Labels::Static(v) => v[i] as usize,
                Labels::Temporal(l) => l.data()[i * t + t - 1] as usize,
            })
            .collect(),
    )
}

pub fn evaluate_stage(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<MetricRow>> {
    let ds = load_dataset(&dataset_dir(out))?;
    let model = load_model(&out.join("model.bin"))?;
    let hash = model_digest(&model)?;
    let s = split(cfg, ds.batch.len())?;
    let inputs = ds.batch.select(&s.explain)?;
    let truth = ds.truth.subset(&s.explain);
    let bg = background(&ds, &s)?;
    let labels = if model.task() == TaskKind::Regression {
        None
    } else {
        class_labels(&ds.batch, &s.explain)
    };
    let (t, n) = (inputs.shape()[1], inputs.shape()[2]);
    let mut rows = Vec::new();
    for entry in &cfg.methods {
        let dir = attribution_dir(out, &entry.label);
        let (attrs, meta) = load_attributions(&dir)?;
        let s_attr = attrs.shape();
        let fits = s_attr[0] == inputs.shape()[0]
            && s_attr[s_attr.len() - 1] == n
            && s_attr[1..s_attr.len() - 1].iter().all(|&d| d == t);
        if !fits {
            return Err(Error::invalid(format!(
                "{} holds attributions of shape {:?} but {} gives {} explained series of shape [{t}, {n}]",
                dir.join("attr.csv").display(),
                s_attr,
                dataset_dir(out).join("inputs.csv").display(),
                inputs.shape()[0]
            )));
        }
        if meta.model_hash != hash {
            return Err(Error::invalid(format!(
                "{} was computed for a different model than {}",
                dir.join("meta.json").display(),
                out.join("model.bin").display()
            )));
        }
        let mut push = |metric: &str, policy: String, value: f64| {
            rows.push(MetricRow {
                method: entry.label.clone(),
                metric: metric.to_string(),
                policy,
                value,
            })
        };
        if cfg.metrics.white_box {
            let report = white_box_metrics(&attrs, &truth)?;
            for (name, v) in &report.values {
                push(name, "none".into(), *v);
            }
        }
        for bb in &cfg.metrics.black_box {
            let v = black_box_batch(
                bb.metric,
                &model,
                &inputs,
                &attrs,
                &bb.policy,
                labels.as_deref(),
                Some(&bg),
                cfg.metrics.seed,
            )?;
            push(bb.metric.name(), bb.policy.label(), v);
        }
        if let Some(l) = &cfg.metrics.lipschitz {
            let b = inputs.shape()[0];
            let mut sum = 0.0;
            for i in 0..b {
                let x = inputs.narrow_leading(i, i + 1)?.reshape(&[t, n])?;
                sum += lipschitz_max(&meta.options, &model, &x, l, Some(&bg), instance_seed(cfg.metrics.seed, i))?;
            }
            push("lipschitz_max", format!("radius_{}", l.radius), sum / b as f64);
        }
    }
    for r in &rows {
        if !r.value.is_finite() {
            return Err(Error::Undefined(format!("{} {} {} is not finite", r.method, r.metric, r.policy)));
        }
    }
    let header = ["method", "metric", "policy", "value"].map(String::from);
    write_table(
        &out.join("metrics.csv"),
        &header,
        rows.iter()
            .map(|r| vec![r.method.clone(), r.metric.clone(), r.policy.clone(), fmt_f64(r.value)]),
    )?;
    Ok(rows)
}

fn write_report(cfg: &ExperimentConfig, out: &Path, rows: &[MetricRow]) -> Result<()> {
    let path = out.join("timings.json");
    let timings: BTreeMap<String, u64> = if path.exists() { read_json(&path)? } else { BTreeMap::new() };
    write_json(
        &out.join("report.json"),
        &json!({
            "config_echo": cfg,
            "stage_timings_ms": timings,
            "metrics": rows,
        }),
    )
}

pub fn generate_cmd(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<(), StageError> {
    prepare_output(out, force).map_err(|error| StageError {
        stage: Stage::Generate,
        error,
    })?;
    staged(Stage::Generate, out, || generate_stage(cfg, out))
}

pub fn train_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<(), StageError> {
    staged(Stage::Train, out, || train_stage(cfg, out))
}

pub fn attribute_cmd(cfg: &ExperimentConfig, out: &Path, ov: &AttributeOverrides) -> Result<(), StageError> {
    staged(Stage::Attribute, out, || attribute_stage(cfg, out, ov))
}

pub fn evaluate_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<MetricRow>, StageError> {
    let rows = staged(Stage::Evaluate, out, || evaluate_stage(cfg, out))?;
    write_report(cfg, out, &rows).map_err(|error| StageError {
        stage: Stage::Evaluate,
        error,
    })?;
    Ok(rows)
}

/// generate, train, attribute and evaluate in sequence.
pub fn run(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<Vec<MetricRow>, StageError> {
    generate_cmd(cfg, out, force)?;
    train_cmd(cfg, out)?;
    attribute_cmd(cfg, out, &AttributeOverrides::default())?;
    evaluate_cmd(cfg, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{
                "dataset": {{"name": "arma", "batch": 4, "seq_len": 10, "seed": 3}},
                "model": {{"kind": "white_box"}},
                "methods": [{{"method": "integrated_gradients", "steps": 8}}, {{"method": "random"}}]
                {extra}
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn minimal_run_reports_auprc_in_range() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let rows = run(&cfg(""), &out, false).unwrap();
        let auprc = rows
            .iter()
            .find(|r| r.method == "integrated_gradients" && r.metric == "auprc")
            .unwrap();
        assert!((0.0..=1.0).contains(&auprc.value));
        for f in ["metrics.csv", "report.json", "model.bin", "attributions/random/attr.csv"] {
            assert!(out.join(f).exists(), "{f}");
        }
    }

    #[test]
    fn refuses_non_empty_output_without_force() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("keep.txt"), "x").unwrap();
        let err = run(&cfg(""), dir.path(), false).unwrap_err();
        assert!(err.to_string().contains("--force"));
        run(&cfg(""), dir.path(), true).unwrap();
        // Only the pipeline's own files are replaced.
        assert!(dir.path().join("keep.txt").exists());
    }

    #[test]
    fn missing_upstream_artifact_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = train_cmd(&cfg(""), dir.path()).unwrap_err();
        assert_eq!(err.stage, Stage::Train);
        assert!(err.to_string().contains("meta.json"), "{err}");
        let text = fs::read_to_string(dir.path().join("error.json")).unwrap();
        assert!(text.contains("\"train\""));
    }

    #[test]
    fn train_split_and_labels() {
        let c = ExperimentConfig::from_json(
            r#"{
                "dataset": {"name": "hmm", "batch": 10, "seq_len": 5},
                "model": {"kind": "train", "architecture": {"type": "rnn", "n_features": 3, "hidden": 4, "n_outputs": 2, "activation": {"kind": "tanh"}}, "train_fraction": 0.7},
                "methods": [{"method": "random"}],
                "attribution": {"instances": 2}
            }"#,
        )
        .unwrap();
        let s = split(&c, 10).unwrap();
        assert_eq!(s.train, (0..7).collect::<Vec<_>>());
        assert_eq!(s.explain, vec![7, 8]);
    }
}
