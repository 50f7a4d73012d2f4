use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rpmnet_core::dataio::{
    self, load_data, make_split, Bundle, CsvSchema, OpenSetSplit, RolesConfig, SplitSpec,
};
use rpmnet_core::openset;
use rpmnet_core::{pipeline, synth, Tensor};

use crate::config::RunConfig;
use crate::manifest::{sidecar, RunClock, RunManifest, Supersession};

pub struct TrainArgs {
    pub data: PathBuf,
    pub roles: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub beta: Option<f64>,
}

fn load_roles(path: &Path) -> Result<RolesConfig> {
    RolesConfig::from_path(path).map_err(|e| anyhow!(e))
}

fn load_bundle(path: &Path) -> Result<Bundle> {
    dataio::load_bundle(path).with_context(|| format!("loading bundle {}", path.display()))
}

fn refuse_overwrite(input: &Path, output: &Path) -> Result<()> {
    if input == output
        || (output.exists() && std::fs::canonicalize(input)? == std::fs::canonicalize(output)?)
    {
        bail!(
            "refusing to overwrite input {}; choose a different --out",
            input.display()
        );
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let clock = RunClock::start();
    let mut config = RunConfig::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config.train.epochs = epochs;
    }
    if let Some(lr) = args.lr {
        config.train.lr = lr;
    }
    if let Some(beta) = args.beta {
        config.train.beta = beta;
    }
    config.train.validate()?;
    refuse_overwrite(&args.data, &args.out)?;

    let roles = load_roles(&args.roles)?;
    let loaded = load_data(&args.data, &roles.schema())?;
    log::info!(
        "loaded {} records with {} features ({} dropped)",
        loaded.records.len(),
        loaded.feature_names.len(),
        loaded.dropped
    );
    let spec = SplitSpec {
        ratio: config.split_ratio,
        seed: config.train.seed,
    };
    let split = make_split(&loaded.records, &roles, spec.ratio, spec.seed)?;
    log_split(&split);

    let (bundle, history) = pipeline::fit(
        &split,
        &loaded.feature_names,
        &roles.label_column,
        &config.train,
        spec,
        |e| {
            log::info!(
                "epoch {:>4}  total {:.6}  ce {:.6}  margin {:.6}  fisher {:.6}  acc {:.4}",
                e.epoch,
                e.loss.total,
                e.loss.ce,
                e.loss.margin,
                e.loss.fisher,
                e.accuracy
            )
        },
    )?;
    dataio::save_bundle(&bundle, &args.out)?;
    let history_path = sidecar(&args.out, "history.tsv");
    std::fs::write(&history_path, history.to_table())?;

    let mut manifest = RunManifest::new("train", &clock);
    manifest.seed = Some(config.train.seed);
    manifest.input(&args.data)?;
    manifest.input(&args.roles)?;
    if let Some(c) = &args.config {
        manifest.input(c)?;
    }
    manifest.output(&args.out);
    manifest.output(&history_path);
    manifest.split = Some(spec);
    manifest.config = Some(config.train);
    manifest.finish(&clock, &args.out)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn log_split(split: &OpenSetSplit) {
    log::info!(
        "split: {} known-train, {} known-test, {} validation-unknown, {} test-unknown",
        split.known_train.len(),
        split.known_test.len(),
        split.val_unknown.len(),
        split.test_unknown.len()
    );
}

/// Rebuild the training split from the bundle's feature schema and split spec.
fn rebuild_split(bundle: &Bundle, data: &Path, roles_path: &Path) -> Result<OpenSetSplit> {
    let roles = load_roles(roles_path)?;
    if roles.label_column.trim() != bundle.label_column.trim() {
        bail!(
            "roles file {} names label column `{}` but the bundle was trained on `{}`",
            roles_path.display(),
            roles.label_column,
            bundle.label_column
        );
    }
    if roles.known_classes() != bundle.params.labels {
        bail!(
            "known classes in {} ({}) differ from the bundle's ({})",
            roles_path.display(),
            roles.known_classes().join(", "),
            bundle.params.labels.join(", ")
        );
    }
    let schema = CsvSchema::columns(&bundle.label_column, &bundle.feature_names);
    let loaded = load_data(data, &schema)?;
    let split = make_split(&loaded.records, &roles, bundle.split.ratio, bundle.split.seed)?;
    log_split(&split);
    Ok(split)
}

pub fn calibrate(bundle_path: &Path, data: &Path, roles: &Path, out: &Path) -> Result<()> {
    let clock = RunClock::start();
    refuse_overwrite(bundle_path, out)?;
    let mut bundle = load_bundle(bundle_path)?;
    let split = rebuild_split(&bundle, data, roles)?;
    if split.val_unknown.is_empty() {
        bail!(
            "no validation-unknown records in {}; list calibration classes under `validation_unknown` in {}",
            data.display(),
            roles.display()
        );
    }
    let threshold = pipeline::calibrate(&bundle, &split)?;
    eprintln!(
        "τ = {} (validation unknown-F1 {:.4}; {} known, {} unknown scores)",
        threshold.tau, threshold.f1, threshold.known.count, threshold.unknown.count
    );
    let mut manifest = RunManifest::new("calibrate", &clock);
    if let Some(prev) = &bundle.threshold {
        log::info!("superseding τ = {} from {}", prev.tau, bundle_path.display());
        manifest.supersedes = Some(Supersession {
            bundle: bundle_path.display().to_string(),
            previous_tau: prev.tau,
            previous_method: prev.method.clone(),
        });
    }
    bundle.threshold = Some(threshold);
    dataio::save_bundle(&bundle, out)?;

    manifest.seed = Some(bundle.split.seed);
    manifest.input(bundle_path)?;
    manifest.input(data)?;
    manifest.input(roles)?;
    manifest.output(out);
    manifest.split = Some(bundle.split);
    manifest.finish(&clock, out)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

pub fn eval(bundle_path: &Path, data: &Path, roles: &Path, report: &Path) -> Result<()> {
    let clock = RunClock::start();
    let bundle = load_bundle(bundle_path)?;
    if bundle.threshold.is_none() {
        bail!(
            "bundle {} has no threshold; run `rpmnet calibrate` first",
            bundle_path.display()
        );
    }
    let split = rebuild_split(&bundle, data, roles)?;
    let result = pipeline::evaluate(&bundle, &split)?;
    std::fs::write(report, result.to_toml()?)
        .with_context(|| format!("writing {}", report.display()))?;
    print!("{}", result.headline());

    let mut manifest = RunManifest::new("eval", &clock);
    manifest.seed = Some(bundle.split.seed);
    manifest.input(bundle_path)?;
    manifest.input(data)?;
    manifest.input(roles)?;
    manifest.output(report);
    manifest.split = Some(bundle.split);
    manifest.finish(&clock, report)?;
    Ok(())
}

pub const SCORE_COLUMNS: [&str; 3] = ["predicted_label", "score", "is_unknown"];

pub fn score(bundle_path: &Path, data: &Path, out: &Path) -> Result<()> {
    refuse_overwrite(data, out)?;
    let bundle = load_bundle(bundle_path)?;
    let threshold = bundle.threshold.clone().ok_or_else(|| {
        anyhow!(
            "bundle {} has no threshold, so unknown detection is undefined; run `rpmnet calibrate` first",
            bundle_path.display()
        )
    })?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(data)
        .with_context(|| format!("reading {}", data.display()))?;
    let headers = reader.headers()?.clone();
    let trimmed: Vec<&str> = headers.iter().map(str::trim).collect();
    let missing: Vec<&str> = bundle
        .feature_names
        .iter()
        .map(String::as_str)
        .filter(|f| !trimmed.contains(f))
        .collect();
    if !missing.is_empty() {
        let extra: Vec<&str> = trimmed
            .iter()
            .copied()
            .filter(|h| !bundle.feature_names.iter().any(|f| f == h) && *h != bundle.label_column)
            .collect();
        bail!(
            "{} does not match the bundle's feature schema\n  missing columns: {}\n  extra columns: {}",
            data.display(),
            missing.join(", "),
            if extra.is_empty() { "(none)".to_string() } else { extra.join(", ") }
        );
    }
    let idx: Vec<usize> = bundle
        .feature_names
        .iter()
        .map(|f| trimmed.iter().position(|h| h == f).unwrap())
        .collect();

    let rows: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
    let mut valid = Vec::new();
    let mut features = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let parsed: Option<Vec<f64>> = idx
            .iter()
            .map(|&j| row.get(j).and_then(|v| v.trim().parse::<f64>().ok()).filter(|v| v.is_finite()))
            .collect();
        if let Some(v) = parsed {
            features.extend(bundle.scaler.transform(&v));
            valid.push(i);
        }
    }
    if valid.len() < rows.len() {
        log::warn!(
            "{} rows with non-numeric or non-finite features left unscored",
            rows.len() - valid.len()
        );
    }
    let x = Tensor::matrix(valid.len(), idx.len(), features)?;
    let scored = if valid.is_empty() {
        Vec::new()
    } else {
        openset::detect(openset::score(&x, &bundle.params)?, &threshold)
    };

    let mut writer = csv::Writer::from_path(out).with_context(|| format!("writing {}", out.display()))?;
    let mut header = headers.clone();
    for c in SCORE_COLUMNS {
        header.push_field(c);
    }
    writer.write_record(&header)?;
    let mut next = valid.iter().zip(&scored).peekable();
    for (i, row) in rows.iter().enumerate() {
        let mut record = row.clone();
        match next.peek() {
            Some((&j, s)) if j == i => {
                record.push_field(&bundle.params.labels[s.predicted_class]);
                record.push_field(&s.score.to_string());
                record.push_field(if s.is_unknown == Some(true) { "true" } else { "false" });
                next.next();
            }
            _ => {
                for _ in SCORE_COLUMNS {
                    record.push_field("");
                }
            }
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    let flagged = scored.iter().filter(|s| s.is_unknown == Some(true)).count();
    eprintln!(
        "scored {} rows, {flagged} flagged unknown at τ = {}; wrote {}",
        scored.len(),
        threshold.tau,
        out.display()
    );
    Ok(())
}

pub fn synth(out: &Path, roles: Option<&Path>, seed: u64, unknown: usize) -> Result<()> {
    let fixture = synth::open_set_fixture(unknown, seed)?;
    dataio::write_csv(out, &fixture.feature_names, &fixture.roles.label_column, &fixture.records)?;
    if let Some(path) = roles {
        std::fs::write(path, toml::to_string(&fixture.roles)?)?;
    }
    eprintln!("wrote {} records to {}", fixture.records.len(), out.display());
    Ok(())
}
