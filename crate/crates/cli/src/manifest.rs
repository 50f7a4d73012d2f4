use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use rpmnet_core::dataio::{SplitSpec, BUNDLE_VERSION};
use rpmnet_core::TrainConfig;
use serde::Serialize;

/// Audit record written next to the primary output of a run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub versions: Versions,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<Checksum>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<Supersession>,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub rpmnet: String,
    pub bundle_format: String,
}

#[derive(Debug, Serialize)]
pub struct Checksum {
    pub path: String,
    pub bytes: u64,
    pub crc32: String,
}

/// The threshold a recalibration replaced.
#[derive(Debug, Serialize)]
pub struct Supersession {
    pub bundle: String,
    pub previous_tau: f64,
    pub previous_method: String,
}

pub struct RunClock {
    started: Instant,
    started_unix: u64,
}

impl RunClock {
    pub fn start() -> Self {
        RunClock {
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }
}

impl RunManifest {
    pub fn new(command: &str, clock: &RunClock) -> Self {
        RunManifest {
            command: command.into(),
            argv: std::env::args().collect(),
            started_unix: clock.started_unix,
            wall_clock_secs: 0.0,
            versions: Versions {
                rpmnet: env!("CARGO_PKG_VERSION").into(),
                bundle_format: BUNDLE_VERSION.into(),
            },
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            split: None,
            config: None,
            supersedes: None,
        }
    }

    /// Checksum a file, or every file directly inside a directory.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            files.retain(|p| p.is_file());
            files.sort();
            for f in files {
                self.inputs.push(checksum(&f)?);
            }
        } else {
            self.inputs.push(checksum(path)?);
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Stamp the wall-clock time and write to `<primary>.manifest.toml`.
    pub fn finish(mut self, clock: &RunClock, primary: &Path) -> Result<PathBuf> {
        let path = sidecar(primary, "manifest.toml");
        self.output(&path);
        self.wall_clock_secs = clock.started.elapsed().as_secs_f64();
        std::fs::write(&path, toml::to_string(&self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn checksum(path: &Path) -> Result<Checksum> {
    let mut file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut hasher = crc32fast::Hasher::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(Checksum {
        path: path.display().to_string(),
        bytes,
        crc32: format!("{:08x}", hasher.finalize()),
    })
}

/// `model.rpmb` → `model.rpmb.<suffix>`.
pub fn sidecar(primary: &Path, suffix: &str) -> PathBuf {
    let mut name = primary.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}
