//! Per-example feature export: `domain,class,perturbed_x,perturbed_y,omega,f0..`.

use std::path::Path;

use ntlab_core::autodiff::{clamped_odds, Tensor};
use ntlab_core::networks::Label;

use crate::checkpoint::Checkpoint;
use crate::dataset::{read_dataset, DatasetRow};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub domain: &'static str,
    pub class: Option<usize>,
    pub perturbed_x: bool,
    pub perturbed_y: bool,
    /// Gate weight, source rows only.
    pub omega: Option<f64>,
    pub features: Vec<f64>,
}

pub fn feature_rows(ck: &Checkpoint, rows: &[DatasetRow]) -> CliResult<Vec<FeatureRow>> {
    let dims = ck.model.dims();
    if let Some(r) = rows.iter().find(|r| r.x.len() != dims.input_dim) {
        return Err(CliError::Format(format!(
            "dataset rows have {} inputs, checkpoint expects {}",
            r.x.len(),
            dims.input_dim
        )));
    }
    if let Some(y) = rows.iter().filter_map(|r| r.y).find(|&y| y >= dims.num_classes) {
        return Err(CliError::Format(format!(
            "dataset label {y} out of range for {} classes",
            dims.num_classes
        )));
    }
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let x = Tensor::from_rows(&rows.iter().map(|r| r.x.as_slice()).collect::<Vec<_>>())?;
    let feats = ck.model.features(&x)?;
    let source_idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].split.is_source()).collect();
    let mut omega = vec![None; rows.len()];
    if !source_idx.is_empty() {
        let xs = Tensor::from_rows(&source_idx.iter().map(|&i| rows[i].x.as_slice()).collect::<Vec<_>>())?;
        let labels: Vec<Label> = source_idx
            .iter()
            .map(|&i| Label::Class(rows[i].y.expect("source rows carry labels")))
            .collect();
        let d = ck.model.discriminate(&xs, &labels)?;
        for (&i, d) in source_idx.iter().zip(d) {
            omega[i] = Some(clamped_odds(d, ck.metadata.omega_clamp));
        }
    }
    Ok(rows
        .iter()
        .enumerate()
        .map(|(i, r)| FeatureRow {
            domain: if r.split.is_source() { "source" } else { "target" },
            class: r.y,
            perturbed_x: r.perturbed_x,
            perturbed_y: r.perturbed_y,
            omega: omega[i],
            features: feats.row(i).to_vec(),
        })
        .collect())
}

pub fn write_features(path: &Path, rows: &[FeatureRow], feature_dim: usize) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["domain", "class", "perturbed_x", "perturbed_y", "omega"]
        .map(String::from)
        .to_vec();
    header.extend((0..feature_dim).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.domain.to_string(),
            r.class.map(|c| c.to_string()).unwrap_or_default(),
            r.perturbed_x.to_string(),
            r.perturbed_y.to_string(),
            r.omega.map(|o| o.to_string()).unwrap_or_default(),
        ];
        rec.extend(r.features.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Loads a checkpoint and a dataset file and writes one feature row per dataset row.
pub fn export_features(checkpoint: &Path, dataset: &Path, out: &Path) -> CliResult<usize> {
    let ck = Checkpoint::load(checkpoint)?;
    let rows = read_dataset(dataset)?;
    let feats = feature_rows(&ck, &rows)?;
    write_features(out, &feats, ck.model.dims().feature_dim)?;
    Ok(feats.len())
}
