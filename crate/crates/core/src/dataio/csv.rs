use std::path::Path;

use super::FlowRecord;
use crate::error::{Error, Result};

/// Which columns of a flow CSV are features and which is the label.
///
/// Header names are compared after trimming surrounding whitespace
/// (CICIDS2017 exports carry leading spaces).
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub label_column: String,
    pub features: FeatureSelection,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSelection {
    /// Every column except the label and these.
    AllExcept(Vec<String>),
    /// Exactly these columns, in this order.
    Columns(Vec<String>),
}

impl CsvSchema {
    pub fn all_except(label_column: &str, excluded: &[String]) -> Self {
        CsvSchema {
            label_column: label_column.to_string(),
            features: FeatureSelection::AllExcept(excluded.to_vec()),
        }
    }

    pub fn columns(label_column: &str, features: &[String]) -> Self {
        CsvSchema {
            label_column: label_column.to_string(),
            features: FeatureSelection::Columns(features.to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCsv {
    pub feature_names: Vec<String>,
    pub records: Vec<FlowRecord>,
    /// Rows skipped for non-numeric or non-finite features.
    pub dropped: usize,
}

/// Parse a flow CSV, dropping rows with unusable feature values.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<LoadedCsv> {
    let schema_err = |detail: String| Error::Schema {
        path: path.to_path_buf(),
        detail,
    };
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.iter().all(String::is_empty) {
        return Err(Error::EmptyDataset {
            path: path.to_path_buf(),
        });
    }
    let find = |name: &str| headers.iter().position(|h| h == name.trim());
    let label_idx = find(&schema.label_column)
        .ok_or_else(|| schema_err(format!("missing label column `{}`", schema.label_column)))?;
    let feature_idx: Vec<usize> = match &schema.features {
        FeatureSelection::AllExcept(excluded) => {
            for name in excluded {
                if find(name).is_none() {
                    log::warn!("{}: excluded column `{name}` not present", path.display());
                }
            }
            (0..headers.len())
                .filter(|&i| i != label_idx && !excluded.iter().any(|e| e.trim() == headers[i]))
                .collect()
        }
        FeatureSelection::Columns(names) => {
            let missing: Vec<&str> = names
                .iter()
                .filter(|n| find(n).is_none())
                .map(String::as_str)
                .collect();
            if !missing.is_empty() {
                return Err(schema_err(format!("missing feature columns: {}", missing.join(", "))));
            }
            names.iter().map(|n| find(n).unwrap()).collect()
        }
    };
    if feature_idx.is_empty() {
        return Err(schema_err("no feature columns selected".into()));
    }

    let mut records = Vec::new();
    let mut dropped = 0;
    for row in reader.records() {
        let row = row?;
        let parsed: Option<Vec<f64>> = feature_idx
            .iter()
            .map(|&i| {
                row.get(i)
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
            })
            .collect();
        match parsed {
            Some(features) => records.push(FlowRecord {
                features,
                label: row.get(label_idx).unwrap_or_default().trim().to_string(),
            }),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!(
            "{}: dropped {dropped} rows with non-numeric or non-finite features",
            path.display()
        );
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset {
            path: path.to_path_buf(),
        });
    }
    Ok(LoadedCsv {
        feature_names: feature_idx.iter().map(|&i| headers[i].clone()).collect(),
        records,
        dropped,
    })
}

/// Load one CSV, or every `*.csv` in a directory (sorted by file name).
///
/// Files in a directory must agree on the selected feature columns.
pub fn load_data(path: &Path, schema: &CsvSchema) -> Result<LoadedCsv> {
    if !path.is_dir() {
        return load_csv(path, schema);
    }
    let mut files: Vec<_> = std::fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")));
    files.sort();
    let mut out: Option<LoadedCsv> = None;
    for file in &files {
        let part = load_csv(file, schema)?;
        match &mut out {
            None => out = Some(part),
            Some(acc) => {
                if acc.feature_names != part.feature_names {
                    return Err(Error::Schema {
                        path: file.clone(),
                        detail: "feature columns differ from earlier files".into(),
                    });
                }
                acc.records.extend(part.records);
                acc.dropped += part.dropped;
            }
        }
    }
    out.ok_or_else(|| Error::EmptyDataset {
        path: path.to_path_buf(),
    })
}

/// Write records as `feature..., label` with a header row.
pub fn write_csv(
    path: &Path,
    feature_names: &[String],
    label_column: &str,
    records: &[FlowRecord],
) -> Result<()> {
    let mut w = ::csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = feature_names.iter().map(String::as_str).collect();
    header.push(label_column);
    w.write_record(&header)?;
    for r in records {
        let mut row: Vec<String> = r.features.iter().map(|v| v.to_string()).collect();
        row.push(r.label.clone());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
