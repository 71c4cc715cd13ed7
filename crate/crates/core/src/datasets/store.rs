//! Dataset directories: `inputs.csv`, `labels.csv`, `truth.csv`, `meta.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::{arma, Dataset, DatasetSpec, Labels, SaliencyTruth, SeriesBatch, TruthKind};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_json, read_table, table_to_tensor, write_indexed, write_json, write_table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelLayout {
    None,
    Static,
    Temporal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub dataset: DatasetSpec,
    pub seed: u64,
    pub batch: usize,
    pub seq_len: usize,
    pub n_features: usize,
    pub labels: LabelLayout,
    pub truth_kind: TruthKind,
    pub temporal_truth: bool,
}

pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    let batch = &dataset.batch;
    let (b, t, n) = (batch.len(), batch.seq_len(), batch.n_features());

    let mut header = vec!["b".to_string(), "t".to_string()];
    header.extend((0..n).map(|f| format!("f{f}")));
    let rows = (0..b * t).map(|r| {
        let mut row = vec![(r / t).to_string(), (r % t).to_string()];
        row.extend(batch.inputs.data()[r * n..(r + 1) * n].iter().map(|&v| fmt_f64(v)));
        row
    });
    write_table(&dir.join("inputs.csv"), &header, rows)?;

    let layout = match &batch.labels {
        None => LabelLayout::None,
        Some(Labels::Static(v)) => {
            let header = ["b".to_string(), "label".to_string()];
            let rows = v.iter().enumerate().map(|(i, &y)| vec![i.to_string(), fmt_f64(y)]);
            write_table(&dir.join("labels.csv"), &header, rows)?;
            LabelLayout::Static
        }
        Some(Labels::Temporal(l)) => {
            let header = ["b".to_string(), "t".to_string(), "label".to_string()];
            let rows = l
                .data()
                .iter()
                .enumerate()
                .map(|(i, &y)| vec![(i / t).to_string(), (i % t).to_string(), fmt_f64(y)]);
            write_table(&dir.join("labels.csv"), &header, rows)?;
            LabelLayout::Temporal
        }
    };

    write_truth(&dir.join("truth.csv"), &dataset.truth)?;

    let meta = DatasetMeta {
        dataset: dataset.spec.clone(),
        seed: dataset.spec.seed(),
        batch: b,
        seq_len: t,
        n_features: n,
        labels: layout,
        truth_kind: dataset.truth.kind,
        temporal_truth: dataset.truth.is_temporal(),
    };
    write_json(&dir.join("meta.json"), &meta)
}

fn write_truth(path: &Path, truth: &SaliencyTruth) -> Result<()> {
    let names: &[&str] = if truth.is_temporal() {
        &["b", "t", "t_prime", "f"]
    } else {
        &["b", "t", "f"]
    };
    write_indexed(path, &truth.values, names)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta: DatasetMeta = read_json(&dir.join("meta.json"))
        .map_err(|e| missing_or(e, &dir.join("meta.json")))?;
    let (b, t, n) = (meta.batch, meta.seq_len, meta.n_features);

    let inputs_path = dir.join("inputs.csv");
    let inputs = table_to_tensor(&read_table(&inputs_path)?, &[b, t, n], 2, &inputs_path)?;

    let labels_path = dir.join("labels.csv");
    let labels = match meta.labels {
        LabelLayout::None => None,
        LabelLayout::Static => {
            let table = read_table(&labels_path)?;
            Some(Labels::Static(table_to_tensor(&table, &[b], 1, &labels_path)?.into_data()))
        }
        LabelLayout::Temporal => {
            let table = read_table(&labels_path)?;
            Some(Labels::Temporal(table_to_tensor(&table, &[b, t], 2, &labels_path)?))
        }
    };

    let truth_path = dir.join("truth.csv");
    let truth_shape: Vec<usize> = if meta.temporal_truth {
        vec![b, t, t, n]
    } else {
        vec![b, t, n]
    };
    let truth = SaliencyTruth {
        values: table_to_tensor(&read_table(&truth_path)?, &truth_shape, truth_shape.len(), &truth_path)?,
        kind: meta.truth_kind,
    };

    let white_box = match &meta.dataset {
        DatasetSpec::Arma(cfg) => Some(arma::window_regressor(n, cfg.salient_window())?),
        _ => None,
    };
    Ok(Dataset {
        spec: meta.dataset,
        batch: SeriesBatch::new(inputs, labels, None)?,
        truth,
        white_box,
    })
}

fn missing_or(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { .. } if !path.exists() => Error::format(path, "expected file is missing"),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate, HawkesConfig, HmmConfig};

    #[test]
    fn hmm_round_trip() {
        let spec = DatasetSpec::Hmm(HmmConfig {
            batch: 3,
            seq_len: 5,
            ..HmmConfig::default()
        });
        let d = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &d).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.batch, d.batch);
        assert_eq!(back.truth, d.truth);
        let header = std::fs::read_to_string(dir.path().join("inputs.csv")).unwrap();
        assert!(header.starts_with("b,t,f0,f1,f2\n"));
    }

    #[test]
    fn hawkes_temporal_truth_round_trip() {
        let spec = DatasetSpec::Hawkes(HawkesConfig {
            batch: 2,
            bins: 6,
            ..HawkesConfig::default()
        });
        let d = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &d).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.truth, d.truth);
        let text = std::fs::read_to_string(dir.path().join("truth.csv")).unwrap();
        assert!(text.starts_with("b,t,t_prime,f,value\n"));
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("meta.json"), "{err}");
    }
}
