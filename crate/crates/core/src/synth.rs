//! Gaussian-blob fixtures for tests, demos and smoke runs.

use rand_distr::{Distribution, Normal};

use crate::dataio::{FlowRecord, RolesConfig};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub label: String,
    pub count: usize,
    pub center: Vec<f64>,
}

impl Blob {
    pub fn new(label: &str, count: usize, center: Vec<f64>) -> Self {
        Blob {
            label: label.into(),
            count,
            center,
        }
    }
}

/// Isotropic normal samples around each blob center, blob by blob.
pub fn sample_blobs(blobs: &[Blob], std: f64, seed: u64) -> Result<Vec<FlowRecord>> {
    let dist = Normal::new(0.0, std)
        .map_err(|e| Error::Config(format!("blob std {std}: {e}")))?;
    let dim = blobs.first().map_or(0, |b| b.center.len());
    if blobs.iter().any(|b| b.center.len() != dim) {
        return Err(Error::Config("blob centers differ in dimension".into()));
    }
    let mut r = rng::generator(seed);
    let mut out = Vec::with_capacity(blobs.iter().map(|b| b.count).sum());
    for b in blobs {
        for _ in 0..b.count {
            out.push(FlowRecord {
                features: b.center.iter().map(|c| c + dist.sample(&mut r)).collect(),
                label: b.label.clone(),
            });
        }
    }
    Ok(out)
}

/// Two 2-D classes `a` and `b` centered at `(-1,-1)` and `(1,1)`.
pub fn two_blobs(per_class: usize, std: f64, seed: u64) -> Result<Vec<FlowRecord>> {
    sample_blobs(
        &[
            Blob::new("a", per_class, vec![-1.0, -1.0]),
            Blob::new("b", per_class, vec![1.0, 1.0]),
        ],
        std,
        seed,
    )
}

/// Open-set fixture: imbalanced known classes plus two unseen clusters.
#[derive(Debug, Clone)]
pub struct OpenSetFixture {
    pub records: Vec<FlowRecord>,
    pub feature_names: Vec<String>,
    pub roles: RolesConfig,
}

pub const FIXTURE_DIM: usize = 20;
pub const FIXTURE_STD: f64 = 0.3;
pub const FIXTURE_SEPARATION: f64 = 3.0;
pub const FIXTURE_SUPPORTS: [usize; 4] = [1000, 500, 200, 50];

fn axis(dim: usize, i: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = scale;
    v
}

/// Known classes `k0..k3` sit on separate axes at distance 3 from the origin
/// (pairwise separation 3√2). Two unknown clusters, `val_unknown` and
/// `unknown`, are drawn independently around the centroid of the known means.
pub fn open_set_fixture(unknown_count: usize, seed: u64) -> Result<OpenSetFixture> {
    let d = FIXTURE_DIM;
    let s = FIXTURE_SEPARATION;
    let mut blobs: Vec<Blob> = FIXTURE_SUPPORTS
        .iter()
        .enumerate()
        .map(|(k, &n)| Blob::new(&format!("k{k}"), n, axis(d, k, s)))
        .collect();
    let centroid: Vec<f64> = (0..d)
        .map(|j| blobs.iter().map(|b| b.center[j]).sum::<f64>() / blobs.len() as f64)
        .collect();
    blobs.push(Blob::new("val_unknown", unknown_count, centroid.clone()));
    blobs.push(Blob::new("unknown", unknown_count, centroid));
    let records = sample_blobs(&blobs, FIXTURE_STD, seed)?;
    let roles = RolesConfig {
        label_column: "Label".into(),
        exclude_columns: Vec::new(),
        known: (0..FIXTURE_SUPPORTS.len()).map(|k| format!("k{k}")).collect(),
        validation_unknown: vec!["val_unknown".into()],
        test_unknown: vec!["unknown".into()],
        ignore: Vec::new(),
        wildcard: None,
    };
    Ok(OpenSetFixture {
        records,
        feature_names: (0..d).map(|j| format!("f{j}")).collect(),
        roles,
    })
}
