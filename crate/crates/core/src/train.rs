//! Mini-batch Adam training of all trainable tensors against the total loss.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::losses::{self, LossBreakdown, LossWeights};
use crate::model::{self, DropoutMasks, Mode, ModelParams};
use crate::numgrad::Tensor;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub dropout_rate: f64,
    pub gamma: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            lambda: 1.0,
            beta: 1.0,
            lr: 1e-3,
            epochs: 30,
            batch_size: 128,
            hidden_dims: vec![256, 128],
            embed_dim: 64,
            dropout_rate: 0.2,
            gamma: 1.0,
            seed: 42,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            lambda: self.lambda,
            beta: self.beta,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("lr = {} must be > 0", self.lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.embed_dim == 0 || self.hidden_dims.contains(&0) {
            return fail("layer widths must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate = {} must be in [0, 1)", self.dropout_rate));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return fail(format!("gamma = {} must be > 0", self.gamma));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam betas must be in [0, 1)".into());
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return fail("adam_eps must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

/// One bias-corrected Adam update of every tensor in `params`.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::contract(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("parameter {i} is {:?}, gradient is {:?}", p.shape(), g.shape()),
            ));
        }
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        state.second = state.first.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        for (((w, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted batch means.
    pub loss: LossBreakdown,
    /// Inference-mode accuracy over the whole training set after the epoch.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub const COLUMNS: [&'static str; 6] = ["epoch", "ce", "margin", "fisher", "total", "acc"];

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Tab-separated table, one header line then one line per epoch.
    pub fn to_table(&self) -> String {
        let mut out = Self::COLUMNS.join("\t");
        out.push('\n');
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{}\t{:.8}\t{:.8}\t{:.8}\t{:.8}\t{:.6}",
                r.epoch, r.loss.ce, r.loss.margin, r.loss.fisher, r.loss.total, r.accuracy
            );
        }
        out
    }
}

/// Fraction of rows whose largest logit is the true label.
pub fn accuracy(data: &Dataset, params: &ModelParams) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let d = model::distances(&data.features, params)?;
    let correct = (0..d.rows())
        .filter(|&i| argmax(d.row(i)) == data.labels[i])
        .count();
    Ok(correct as f64 / data.len() as f64)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Train from a fresh initialization; identical inputs give identical output.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    train_with(data, config, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    data: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainHistory)> {
    let mut trainer = Trainer::new(data, config)?;
    let mut history = TrainHistory::default();
    for _ in 0..config.epochs {
        let record = trainer.epoch(data)?;
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok((trainer.params, history))
}

/// Training state between epochs: parameters, optimizer moments and RNG.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: ModelParams,
    config: TrainConfig,
    state: AdamState,
    rng: rng::Generator,
    epochs_done: usize,
}

impl Trainer {
    /// Validate `config` and initialize parameters for `data`'s width and vocabulary.
    pub fn new(data: &Dataset, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::contract("training set is empty"));
        }
        let counts = data.class_counts();
        for (name, count) in data.label_names.iter().zip(&counts) {
            if *count == 0 {
                log::warn!("known class `{name}` has no training samples; keeping it in the vocabulary");
            }
        }
        let mut rng = rng::generator(config.seed);
        let params = ModelParams::init(
            data.features.cols(),
            &config.hidden_dims,
            config.embed_dim,
            data.label_names.clone(),
            config.gamma,
            &mut rng,
        )?;
        Ok(Trainer {
            params,
            config: config.clone(),
            state: AdamState::default(),
            rng,
            epochs_done: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// One shuffled pass over `data`.
    pub fn epoch(&mut self, data: &Dataset) -> Result<EpochRecord> {
        if data.features.cols() != self.params.input_dim() || data.label_names != self.params.labels {
            return Err(Error::contract("dataset does not match the model being trained"));
        }
        let epoch = self.epochs_done;
        let config = &self.config;
        let weights = config.weights();
        let adam = config.adam();
        let order = rng::permutation(&mut self.rng, data.len());
        let mut sums = [0.0f64; 4];
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let diverged = |detail: String| Error::Diverged {
                epoch,
                batch,
                detail,
            };
            let x = data.features.select_rows(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let masks =
                DropoutMasks::draw(&mut self.rng, idx.len(), &config.hidden_dims, config.dropout_rate);
            let lg = losses::total_loss(&x, &labels, &self.params, weights, Mode::Train, masks.as_ref())
                .map_err(|e| match e {
                    Error::NonFinite { .. } => diverged(e.to_string()),
                    other => other,
                })?;
            let b = lg.breakdown();
            if !b.total.is_finite() {
                return Err(diverged(format!("loss is {}", b.total)));
            }
            let grads = lg.gradients().map_err(|e| diverged(e.to_string()))?;
            adam_step(&mut self.params.trainables_mut(), &grads, &mut self.state, &adam)?;
            let w = idx.len() as f64;
            for (s, v) in sums.iter_mut().zip([b.ce, b.margin, b.fisher, b.total]) {
                *s += v * w;
            }
        }
        if let Err(e) = self.params.validate() {
            return Err(Error::Diverged {
                epoch,
                batch: data.len().div_ceil(config.batch_size) - 1,
                detail: e.to_string(),
            });
        }
        let n = data.len() as f64;
        self.epochs_done += 1;
        Ok(EpochRecord {
            epoch,
            loss: LossBreakdown {
                ce: sums[0] / n,
                margin: sums[1] / n,
                fisher: sums[2] / n,
                total: sums[3] / n,
                weights,
            },
            accuracy: accuracy(data, &self.params)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_fresh_state_is_a_no_op() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let before = p.clone();
        let mut state = AdamState::default();
        let cfg = TrainConfig::default().adam();
        adam_step(&mut [&mut p], &[Tensor::zeros(&[2])], &mut state, &cfg).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_moments_decay_under_zero_gradient() {
        let mut p = Tensor::scalar(0.0);
        let mut state = AdamState::default();
        let cfg = TrainConfig::default().adam();
        adam_step(&mut [&mut p], &[Tensor::scalar(1.0)], &mut state, &cfg).unwrap();
        let (m1, v1) = (state.first[0][0], state.second[0][0]);
        adam_step(&mut [&mut p], &[Tensor::scalar(0.0)], &mut state, &cfg).unwrap();
        assert!(state.first[0][0].abs() < m1.abs());
        assert!(state.second[0][0] < v1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // t = 1: m̂ = g, v̂ = g², so Δ = lr · g / (|g| + ε).
        for g in [0.5, -3.0, 1e-3] {
            let mut p = Tensor::scalar(0.0);
            let mut state = AdamState::default();
            let cfg = AdamConfig {
                lr: 0.01,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            };
            adam_step(&mut [&mut p], &[Tensor::scalar(g)], &mut state, &cfg).unwrap();
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((p.item().unwrap() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_identical_histories_identical_updates() {
        let mut a = Tensor::scalar(1.0);
        let mut b = Tensor::scalar(1.0);
        let mut state = AdamState::default();
        let cfg = TrainConfig::default().adam();
        for g in [0.3, -0.1, 2.0] {
            let grads = [Tensor::scalar(g), Tensor::scalar(g)];
            adam_step(&mut [&mut a, &mut b], &grads, &mut state, &cfg).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = Tensor::zeros(&[2]);
        let mut state = AdamState::default();
        let cfg = TrainConfig::default().adam();
        assert!(adam_step(&mut [&mut p], &[Tensor::zeros(&[3])], &mut state, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig {
                lr: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                dropout_rate: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                embed_dim: 0,
                ..TrainConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn history_table_layout() {
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 0,
                loss: LossBreakdown {
                    ce: 1.0,
                    margin: 0.5,
                    fisher: 0.25,
                    total: 1.75,
                    weights: LossWeights::default(),
                },
                accuracy: 0.5,
            }],
        };
        assert_eq!(
            h.to_table(),
            "epoch\tce\tmargin\tfisher\ttotal\tacc\n0\t1.00000000\t0.50000000\t0.25000000\t1.75000000\t0.500000\n"
        );
    }
}
