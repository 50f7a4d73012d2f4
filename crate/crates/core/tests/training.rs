use rpmnet_core::dataio::{self, make_split, Dataset, RolesConfig, SplitSpec};
use rpmnet_core::model::ModelParams;
use rpmnet_core::synth::{self, Blob};
use rpmnet_core::train::{self, TrainConfig};
use rpmnet_core::{openset, pipeline, rng, Error, Tensor};

fn blob_dataset(seed: u64) -> Dataset {
    let records = synth::two_blobs(100, 0.1, seed).unwrap();
    Dataset::from_records(&records, &["a".into(), "b".into()]).unwrap()
}

fn blob_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        ..TrainConfig::default()
    }
}

#[test]
fn two_blobs_are_learned() {
    let (params, history) = train::train(&blob_dataset(5), &blob_config(200)).unwrap();
    assert_eq!(history.len(), 200);
    assert_eq!(history.epochs.last().unwrap().accuracy, 1.0);
    assert!(params.margins().iter().all(|&r| r > 0.0));
}

#[test]
fn loss_trends_down() {
    let (_, history) = train::train(&blob_dataset(6), &blob_config(50)).unwrap();
    let totals: Vec<f64> = history.epochs.iter().map(|e| e.loss.total).collect();
    let tenth = totals.len() / 10;
    let head: f64 = totals[..tenth].iter().sum::<f64>() / tenth as f64;
    let tail: f64 = totals[totals.len() - tenth..].iter().sum::<f64>() / tenth as f64;
    assert!(tail <= head, "first {head}, last {tail}");
}

#[test]
fn zero_epochs_returns_initialization() {
    let data = blob_dataset(7);
    let config = blob_config(0);
    let (params, history) = train::train(&data, &config).unwrap();
    assert!(history.is_empty());
    let init = ModelParams::init(
        2,
        &config.hidden_dims,
        config.embed_dim,
        data.label_names.clone(),
        config.gamma,
        &mut rng::generator(config.seed),
    )
    .unwrap();
    assert_eq!(params, init);
}

#[test]
fn same_seed_same_run() {
    let data = blob_dataset(8);
    let config = blob_config(5);
    let (p1, h1) = train::train(&data, &config).unwrap();
    let (p2, h2) = train::train(&data, &config).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(h1, h2);
    assert_eq!(h1.to_table(), h2.to_table());
    let (p3, _) = train::train(&data, &TrainConfig { seed: 9, ..config }).unwrap();
    assert_ne!(p1, p3);
}

#[test]
fn empty_class_is_kept_in_the_vocabulary() {
    let records = synth::two_blobs(20, 0.1, 1).unwrap();
    let data = Dataset::from_records(&records, &["a".into(), "b".into(), "c".into()]).unwrap();
    let (params, _) = train::train(&data, &blob_config(2)).unwrap();
    assert_eq!(params.num_classes(), 3);
}

#[test]
fn huge_learning_rate_reports_where_it_diverged() {
    let features = Tensor::from_rows(&[[1e150, -1e150], [-1e150, 1e150]]).unwrap();
    let data = Dataset::new(features, vec![0, 1], vec!["a".into(), "b".into()]).unwrap();
    let config = TrainConfig {
        lr: 1e6,
        ..blob_config(3)
    };
    match train::train(&data, &config) {
        Err(Error::Diverged { epoch, batch, .. }) => assert_eq!((epoch, batch), (0, 0)),
        other => panic!("expected divergence, got {other:?}"),
    }
}

fn two_blob_split(unknown_center: [f64; 2]) -> dataio::OpenSetSplit {
    let blobs = [
        Blob::new("a", 200, vec![-1.0, -1.0]),
        Blob::new("b", 200, vec![1.0, 1.0]),
        Blob::new("v", 100, unknown_center.to_vec()),
        Blob::new("u", 100, unknown_center.to_vec()),
    ];
    let records = synth::sample_blobs(&blobs, 0.1, 42).unwrap();
    let roles = RolesConfig::from_toml(
        "known = ['a', 'b']\nvalidation_unknown = ['v']\ntest_unknown = ['u']",
    )
    .unwrap();
    make_split(&records, &roles, 0.8, 42).unwrap()
}

#[test]
fn memorized_blobs_with_distant_unknowns_score_perfectly() {
    let split = two_blob_split([-3.0, 3.0]);
    let spec = SplitSpec { ratio: 0.8, seed: 42 };
    let names = ["x".to_string(), "y".to_string()];
    let (mut bundle, history) =
        pipeline::fit(&split, &names, "Label", &blob_config(200), spec, |_| ()).unwrap();
    assert_eq!(history.epochs.last().unwrap().accuracy, 1.0);
    bundle.threshold = Some(pipeline::calibrate(&bundle, &split).unwrap());
    let report = pipeline::evaluate(&bundle, &split).unwrap();
    let os = report.open_set.unwrap();
    for v in [report.precision, report.recall, report.f1_score, os.auroc, os.aupr_in, os.aupr_out] {
        assert_eq!(v, 1.0, "{}", report.headline());
    }
}

#[test]
fn bundle_file_round_trip_keeps_scores() {
    let split = two_blob_split([-3.0, 3.0]);
    let spec = SplitSpec { ratio: 0.8, seed: 42 };
    let names = ["x".to_string(), "y".to_string()];
    let (mut bundle, _) = pipeline::fit(&split, &names, "Label", &blob_config(3), spec, |_| ()).unwrap();
    bundle.threshold = Some(pipeline::calibrate(&bundle, &split).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.rpmb");
    dataio::save_bundle(&bundle, &path).unwrap();
    let loaded = dataio::load_bundle(&path).unwrap();
    assert_eq!(loaded, bundle);
    let x = bundle
        .scaler
        .apply_tensor(&dataio::feature_matrix(&split.test_unknown, 2).unwrap())
        .unwrap();
    assert_eq!(
        openset::score(&x, &bundle.params).unwrap(),
        openset::score(&x, &loaded.params).unwrap()
    );
}

#[test]
fn evaluate_without_threshold_is_refused() {
    let split = two_blob_split([-3.0, 3.0]);
    let spec = SplitSpec { ratio: 0.8, seed: 42 };
    let names = ["x".to_string(), "y".to_string()];
    let (bundle, _) = pipeline::fit(&split, &names, "Label", &blob_config(1), spec, |_| ()).unwrap();
    assert!(pipeline::evaluate(&bundle, &split).is_err());
}
