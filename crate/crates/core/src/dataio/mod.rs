//! Flow-record ingestion, normalization, open-set splitting and persistence.

mod bundle;
mod csv;
mod roles;
mod scaler;

pub use self::bundle::{
    load_bundle, read_bundle, save_bundle, write_bundle, Bundle, SplitSpec, BUNDLE_VERSION,
};
pub use self::csv::{load_csv, load_data, write_csv, CsvSchema, FeatureSelection, LoadedCsv};
pub use self::roles::{make_split, ClassRole, OpenSetSplit, RolesConfig};
pub use self::scaler::Scaler;

use crate::error::{Error, Result};
use crate::numgrad::Tensor;

/// One flow feature vector with its class name.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub features: Vec<f64>,
    pub label: String,
}

/// Feature matrix with class indices into `label_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[N, d]`
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, label_names: Vec<String>) -> Result<Self> {
        if features.rank() != 2 || features.rows() != labels.len() {
            return Err(Error::contract(format!(
                "{} labels for features shaped {:?}",
                labels.len(),
                features.shape()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= label_names.len()) {
            return Err(Error::contract(format!(
                "label {bad} outside a vocabulary of {}",
                label_names.len()
            )));
        }
        Ok(Dataset {
            features,
            labels,
            label_names,
        })
    }

    /// Index records by `vocabulary`; a label outside it is an error.
    pub fn from_records(records: &[FlowRecord], vocabulary: &[String]) -> Result<Self> {
        let d = records.first().map_or(0, |r| r.features.len());
        let mut data = Vec::with_capacity(records.len() * d);
        let mut labels = Vec::with_capacity(records.len());
        for r in records {
            if r.features.len() != d {
                return Err(Error::contract("records differ in feature count"));
            }
            let idx = vocabulary.iter().position(|v| *v == r.label).ok_or_else(|| {
                Error::contract(format!("label `{}` is not in the vocabulary", r.label))
            })?;
            data.extend_from_slice(&r.features);
            labels.push(idx);
        }
        Dataset::new(
            Tensor::matrix(records.len(), d, data)?,
            labels,
            vocabulary.to_vec(),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.label_names.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Stack feature vectors into an `[N, d]` matrix.
pub fn feature_matrix(records: &[FlowRecord], d: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(records.len() * d);
    for r in records {
        if r.features.len() != d {
            return Err(Error::contract(format!(
                "record has {} features, expected {d}",
                r.features.len()
            )));
        }
        data.extend_from_slice(&r.features);
    }
    Tensor::matrix(records.len(), d, data)
}
