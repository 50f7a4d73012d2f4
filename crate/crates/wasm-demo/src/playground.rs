//! Interactive 2-D open-set playground, independent of the browser bindings.

use rpmnet_core::dataio::{Dataset, FlowRecord};
use rpmnet_core::metrics::{self, EvalReport};
use rpmnet_core::openset::{self, Threshold};
use rpmnet_core::synth::{sample_blobs, Blob};
use rpmnet_core::train::{EpochRecord, TrainConfig, Trainer};
use rpmnet_core::{Result, Tensor};

pub const CLASS_NAMES: [&str; 3] = ["A", "B", "C"];
pub const PER_CLASS: usize = 120;
pub const UNKNOWN_COUNT: usize = 120;
pub const SPREAD: f64 = 0.35;
const RADIUS: f64 = 2.0;

fn class_centers() -> Vec<[f64; 2]> {
    (0..CLASS_NAMES.len())
        .map(|k| {
            let angle = std::f64::consts::FRAC_PI_2 + k as f64 * 2.0 * std::f64::consts::PI / 3.0;
            [RADIUS * angle.cos(), RADIUS * angle.sin()]
        })
        .collect()
}

pub fn playground_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        batch_size: 64,
        hidden_dims: vec![24, 24],
        embed_dim: 4,
        dropout_rate: 0.0,
        seed,
        ..TrainConfig::default()
    }
}

fn matrix(records: &[FlowRecord]) -> Tensor {
    let data = records.iter().flat_map(|r| r.features.clone()).collect();
    Tensor::matrix(records.len(), 2, data).expect("2-D records")
}

/// Three known blobs on a circle plus a movable unknown cluster.
pub struct Playground {
    seed: u64,
    known: Dataset,
    val_unknown: Tensor,
    test_unknown: Tensor,
    unknown_center: [f64; 2],
    trainer: Trainer,
    history: Vec<EpochRecord>,
    tau: f64,
}

impl Playground {
    pub fn new(seed: u64) -> Result<Self> {
        let names: Vec<String> = CLASS_NAMES.iter().map(|s| s.to_string()).collect();
        let blobs: Vec<Blob> = class_centers()
            .into_iter()
            .zip(&names)
            .map(|(c, name)| Blob::new(name, PER_CLASS, c.to_vec()))
            .collect();
        let known = Dataset::from_records(&sample_blobs(&blobs, SPREAD, seed)?, &names)?;
        let trainer = Trainer::new(&known, &playground_config(seed))?;
        let mut pg = Playground {
            seed,
            known,
            val_unknown: Tensor::matrix(0, 2, vec![])?,
            test_unknown: Tensor::matrix(0, 2, vec![])?,
            unknown_center: [0.0, 0.0],
            trainer,
            history: Vec::new(),
            tau: f64::NEG_INFINITY,
        };
        pg.move_unknown(0.0, 0.0)?;
        Ok(pg)
    }

    /// Redraw both unknown clusters around `(x, y)`; the model is untouched.
    pub fn move_unknown(&mut self, x: f64, y: f64) -> Result<()> {
        self.unknown_center = [x, y];
        let draws = sample_blobs(
            &[
                Blob::new("val", UNKNOWN_COUNT, vec![x, y]),
                Blob::new("test", UNKNOWN_COUNT, vec![x, y]),
            ],
            SPREAD,
            self.seed.wrapping_add(1),
        )?;
        let (val, test) = draws.split_at(UNKNOWN_COUNT);
        self.val_unknown = matrix(val);
        self.test_unknown = matrix(test);
        Ok(())
    }

    pub fn unknown_center(&self) -> [f64; 2] {
        self.unknown_center
    }

    pub fn train(&mut self, epochs: usize) -> Result<Option<&EpochRecord>> {
        for _ in 0..epochs {
            let record = self.trainer.epoch(&self.known)?;
            self.history.push(record);
        }
        Ok(self.history.last())
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.trainer.epochs_done()
    }

    /// Known samples as `(x, y, class)` then test-unknown samples with class −1.
    pub fn samples(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * (self.known.len() + self.test_unknown.rows()));
        for (i, &label) in self.known.labels.iter().enumerate() {
            out.extend_from_slice(self.known.features.row(i));
            out.push(label as f64);
        }
        for i in 0..self.test_unknown.rows() {
            out.extend_from_slice(self.test_unknown.row(i));
            out.push(-1.0);
        }
        out
    }

    /// Scores and predicted classes over an `nx × ny` grid, row 0 at `y_max`.
    pub fn grid(&self, x_min: f64, x_max: f64, y_min: f64, y_max: f64, nx: usize, ny: usize) -> Result<(Vec<f64>, Vec<usize>)> {
        let step = |lo: f64, hi: f64, n: usize, i: usize| {
            if n <= 1 {
                (lo + hi) / 2.0
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        };
        let mut data = Vec::with_capacity(nx * ny * 2);
        for row in 0..ny {
            let y = step(y_max, y_min, ny, row);
            for col in 0..nx {
                data.push(step(x_min, x_max, nx, col));
                data.push(y);
            }
        }
        let scored = openset::score(&Tensor::matrix(nx * ny, 2, data)?, &self.trainer.params)?;
        Ok((
            scored.iter().map(|s| s.score).collect(),
            scored.iter().map(|s| s.predicted_class).collect(),
        ))
    }

    fn scores(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(openset::score(x, &self.trainer.params)?
            .into_iter()
            .map(|s| s.score)
            .collect())
    }

    /// Pick τ on the validation-unknown cluster and adopt it.
    pub fn calibrate(&mut self) -> Result<Threshold> {
        let known = self.scores(&self.known.features)?;
        let unknown = self.scores(&self.val_unknown)?;
        let t = openset::calibrate(&known, &unknown)?;
        self.tau = t.tau;
        Ok(t)
    }

    pub fn set_tau(&mut self, tau: f64) {
        self.tau = tau;
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Known-class and open-set metrics against the test-unknown cluster.
    pub fn report(&self) -> Result<EvalReport> {
        metrics::evaluate(
            &self.trainer.params,
            &Threshold::fixed(self.tau),
            &self.known,
            &self.test_unknown,
        )
    }

    /// ROC points `(fpr, tpr)` from `(0,0)` to `(1,1)`, one per distinct
    /// score, with "known" as the positive class.
    pub fn roc(&self) -> Result<Vec<[f64; 2]>> {
        let known = self.scores(&self.known.features)?;
        let unknown = self.scores(&self.test_unknown)?;
        Ok(roc_points(&known, &unknown))
    }
}

/// Lower the threshold through every distinct score, highest first.
pub fn roc_points(known: &[f64], unknown: &[f64]) -> Vec<[f64; 2]> {
    let mut all: Vec<(f64, bool)> = known
        .iter()
        .map(|&s| (s, true))
        .chain(unknown.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (p, n) = (known.len().max(1) as f64, unknown.len().max(1) as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut out = vec![[0.0, 0.0]];
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push([fp as f64 / n, tp as f64 / p]);
    }
    out
}
