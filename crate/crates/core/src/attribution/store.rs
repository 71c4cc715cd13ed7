//! Attribution directories: `attr.csv`, optional `per_step.csv`, `meta.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::{stack_values, Attribution, Method};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::{read_json, read_table, table_to_tensor, write_indexed, write_json};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionMeta {
    pub method: String,
    pub options: Method,
    pub seed: u64,
    /// SHA-256 of the explained model file.
    pub model_hash: String,
    pub temporal: bool,
    /// `[B, T, N]` or `[B, T, T, N]`.
    pub shape: Vec<usize>,
    pub targets: Vec<Vec<usize>>,
}

pub fn save_attributions(dir: &Path, attributions: &[Attribution], meta: &AttributionMeta) -> Result<()> {
    let values = stack_values(attributions)?;
    if values.shape() != meta.shape.as_slice() {
        return Err(Error::invalid(format!(
            "attributions {:?} do not match the declared shape {:?}",
            values.shape(),
            meta.shape
        )));
    }
    let names: &[&str] = if meta.temporal {
        &["b", "t", "t_prime", "f"]
    } else {
        &["b", "t", "f"]
    };
    write_indexed(&dir.join("attr.csv"), &values, names)?;
    if attributions.iter().all(|a| a.per_step.is_some()) && !attributions.is_empty() {
        let rows: Vec<f64> = attributions
            .iter()
            .flat_map(|a| a.per_step.clone().unwrap_or_default())
            .collect();
        let per = Tensor::new(vec![attributions.len(), rows.len() / attributions.len()], rows)?;
        write_indexed(&dir.join("per_step.csv"), &per, &["b", "t"])?;
    }
    write_json(&dir.join("meta.json"), meta)
}

/// Attribution values `[B, ...]` and their metadata.
pub fn load_attributions(dir: &Path) -> Result<(Tensor, AttributionMeta)> {
    let meta_path = dir.join("meta.json");
    if !meta_path.exists() {
        return Err(Error::format(&meta_path, "expected file is missing"));
    }
    let meta: AttributionMeta = read_json(&meta_path)?;
    let path = dir.join("attr.csv");
    let values = table_to_tensor(&read_table(&path)?, &meta.shape, meta.shape.len(), &path)?;
    Ok((values, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::IgOptions;

    #[test]
    fn round_trip() {
        let a = Attribution {
            method: "temporal_integrated_gradients".into(),
            values: Tensor::new(vec![2, 2], vec![0.1, -0.2, 1.0 / 3.0, 4.0]).unwrap(),
            targets: vec![0, 1],
            per_step: Some(vec![0.5, 0.25]),
        };
        let meta = AttributionMeta {
            method: "integrated_gradients".into(),
            options: Method::IntegratedGradients(IgOptions::default()),
            seed: 3,
            model_hash: "abc".into(),
            temporal: false,
            shape: vec![2, 2, 2],
            targets: vec![vec![0, 1]; 2],
        };
        let dir = tempfile::tempdir().unwrap();
        save_attributions(dir.path(), &[a.clone(), a.clone()], &meta).unwrap();
        let (values, back) = load_attributions(dir.path()).unwrap();
        assert_eq!(back, meta);
        assert_eq!(&values.data()[..4], a.values.data());
        let text = std::fs::read_to_string(dir.path().join("attr.csv")).unwrap();
        assert!(text.starts_with("b,t,f,value\n"));
        assert!(dir.path().join("per_step.csv").exists());
    }

    #[test]
    fn missing_meta_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_attributions(dir.path()).unwrap_err().to_string();
        assert!(err.contains("meta.json"), "{err}");
    }
}
