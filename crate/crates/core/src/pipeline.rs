//! The train → calibrate → evaluate sequence over an [`OpenSetSplit`].

use crate::dataio::{feature_matrix, Bundle, Dataset, FlowRecord, OpenSetSplit, Scaler, SplitSpec};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport};
use crate::numgrad::Tensor;
use crate::openset::{self, Threshold};
use crate::train::{self, EpochRecord, TrainConfig, TrainHistory};

fn unknown_matrix(records: &[FlowRecord], scaler: &Scaler) -> Result<Tensor> {
    feature_matrix(&scaler.apply(records), scaler.dim())
}

fn known_dataset(records: &[FlowRecord], scaler: &Scaler, labels: &[String]) -> Result<Dataset> {
    if records.is_empty() {
        return Dataset::new(Tensor::matrix(0, scaler.dim(), vec![])?, vec![], labels.to_vec());
    }
    Dataset::from_records(&scaler.apply(records), labels)
}

/// Fit the scaler on known-train, train, and package an uncalibrated bundle.
pub fn fit(
    split: &OpenSetSplit,
    feature_names: &[String],
    label_column: &str,
    config: &TrainConfig,
    split_spec: SplitSpec,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Bundle, TrainHistory)> {
    if split.known_train.is_empty() {
        return Err(Error::Config("no known-class training records".into()));
    }
    let scaler = Scaler::fit(&split.known_train)?;
    let data = known_dataset(&split.known_train, &scaler, &split.known_classes)?;
    let (params, history) = train::train_with(&data, config, on_epoch)?;
    let bundle = Bundle {
        params,
        scaler,
        threshold: None,
        config: config.clone(),
        split: split_spec,
        label_column: label_column.to_string(),
        feature_names: feature_names.to_vec(),
    };
    Ok((bundle, history))
}

/// Choose τ from known-train scores against validation-unknown scores.
pub fn calibrate(bundle: &Bundle, split: &OpenSetSplit) -> Result<Threshold> {
    if split.val_unknown.is_empty() {
        return Err(Error::Config(
            "no validation-unknown records to calibrate against".into(),
        ));
    }
    let known = known_dataset(&split.known_train, &bundle.scaler, &bundle.params.labels)?;
    let unknown = unknown_matrix(&split.val_unknown, &bundle.scaler)?;
    let known_scores = scores(&known.features, bundle)?;
    let unknown_scores = scores(&unknown, bundle)?;
    openset::calibrate(&known_scores, &unknown_scores)
}

/// Score already-scaled features.
fn scores(x: &Tensor, bundle: &Bundle) -> Result<Vec<f64>> {
    Ok(openset::score(x, &bundle.params)?.into_iter().map(|s| s.score).collect())
}

/// Closed-set and open-set metrics on known-test plus test-unknown.
pub fn evaluate(bundle: &Bundle, split: &OpenSetSplit) -> Result<EvalReport> {
    let threshold = bundle
        .threshold
        .as_ref()
        .ok_or_else(|| Error::Config("bundle has no threshold; run calibrate first".into()))?;
    let known = known_dataset(&split.known_test, &bundle.scaler, &bundle.params.labels)?;
    let unknown = unknown_matrix(&split.test_unknown, &bundle.scaler)?;
    metrics::evaluate(&bundle.params, threshold, &known, &unknown)
}
