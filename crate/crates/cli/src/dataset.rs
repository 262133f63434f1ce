//! Dataset CSV: `split,x0,x1,y,perturbed_x,perturbed_y`, one row per example.

use std::path::Path;

use ntlab_core::data::{DomainData, Example};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Source,
    TargetLabeled,
    TargetUnlabeled,
    TargetTest,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Source => "source",
            Split::TargetLabeled => "target_labeled",
            Split::TargetUnlabeled => "target_unlabeled",
            Split::TargetTest => "target_test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            Split::Source,
            Split::TargetLabeled,
            Split::TargetUnlabeled,
            Split::TargetTest,
        ]
        .into_iter()
        .find(|v| v.name() == s)
    }

    pub fn is_source(self) -> bool {
        self == Split::Source
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub split: Split,
    pub x: Vec<f64>,
    /// Hidden for unlabeled target rows.
    pub y: Option<usize>,
    pub perturbed_x: bool,
    pub perturbed_y: bool,
}

impl DatasetRow {
    pub fn example(&self) -> Option<Example> {
        self.y.map(|y| Example {
            x: self.x.clone(),
            y,
            perturbed_x: self.perturbed_x,
            perturbed_y: self.perturbed_y,
        })
    }
}

pub fn dataset_header(dim: usize) -> Vec<String> {
    let mut h = vec!["split".to_string()];
    h.extend((0..dim).map(|i| format!("x{i}")));
    h.extend(["y", "perturbed_x", "perturbed_y"].map(String::from));
    h
}

pub fn dataset_rows(data: &DomainData) -> Vec<DatasetRow> {
    let labeled = |split: Split, examples: &[Example]| {
        examples
            .iter()
            .map(move |e| DatasetRow {
                split,
                x: e.x.clone(),
                y: Some(e.y),
                perturbed_x: e.perturbed_x,
                perturbed_y: e.perturbed_y,
            })
            .collect::<Vec<_>>()
    };
    let mut rows = labeled(Split::Source, &data.source);
    rows.extend(labeled(Split::TargetLabeled, &data.target_labeled));
    rows.extend(data.target_unlabeled.iter().map(|x| DatasetRow {
        split: Split::TargetUnlabeled,
        x: x.clone(),
        y: None,
        perturbed_x: false,
        perturbed_y: false,
    }));
    rows.extend(labeled(Split::TargetTest, &data.target_test));
    rows
}

pub fn write_dataset(path: &Path, data: &DomainData) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(dataset_header(data.input_dim()))?;
    for r in dataset_rows(data) {
        let mut rec = vec![r.split.name().to_string()];
        rec.extend(r.x.iter().map(f64::to_string));
        rec.push(r.y.map(|y| y.to_string()).unwrap_or_default());
        rec.push(r.perturbed_x.to_string());
        rec.push(r.perturbed_y.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_dataset(path: &Path) -> CliResult<Vec<DatasetRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let dim = header.len().saturating_sub(4);
    if header.len() < 5 || header != dataset_header(dim) {
        return Err(CliError::Format(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    let bad = |line: usize, what: &str| CliError::Format(format!("{}: record {line}: {what}", path.display()));
    let flag = |s: &str, line: usize| match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(line, "flags must be true or false")),
    };
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let split = Split::parse(&rec[0]).ok_or_else(|| bad(line, "unknown split"))?;
        let x = (1..=dim)
            .map(|j| rec[j].parse::<f64>().map_err(|_| bad(line, "non-numeric input")))
            .collect::<CliResult<Vec<_>>>()?;
        let y = match &rec[dim + 1] {
            "" => None,
            s => Some(
                s.parse::<usize>()
                    .map_err(|_| bad(line, "label must be a class index"))?,
            ),
        };
        if y.is_none() && split != Split::TargetUnlabeled {
            return Err(bad(line, "missing label"));
        }
        rows.push(DatasetRow {
            split,
            x,
            y,
            perturbed_x: flag(&rec[dim + 2], line)?,
            perturbed_y: flag(&rec[dim + 3], line)?,
        });
    }
    Ok(rows)
}
