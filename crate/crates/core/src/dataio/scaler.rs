use serde::{Deserialize, Serialize};

use super::FlowRecord;
use crate::error::{Error, Result};
use crate::numgrad::Tensor;

/// Standard deviations below this are treated as 1 (constant features).
pub const MIN_STD: f64 = 1e-12;

/// Per-feature z-score statistics (population std).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(train: &[FlowRecord]) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::contract("cannot fit a scaler on no records"))?;
        let d = first.features.len();
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        for r in train {
            for (m, v) in mean.iter_mut().zip(&r.features) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in train {
            for ((s, v), m) in var.iter_mut().zip(&r.features).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd < MIN_STD {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Scaler { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn inverse(&self, scaled: &[f64]) -> Vec<f64> {
        scaled
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn apply(&self, records: &[FlowRecord]) -> Vec<FlowRecord> {
        records
            .iter()
            .map(|r| FlowRecord {
                features: self.transform(&r.features),
                label: r.label.clone(),
            })
            .collect()
    }

    pub fn apply_tensor(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.dim() {
            return Err(Error::shape(
                "scaler",
                format!("input width {} vs scaler width {}", x.cols(), self.dim()),
            ));
        }
        let mut out = x.clone();
        let d = self.dim();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[i % d]) / self.std[i % d];
        }
        Ok(out)
    }
}
