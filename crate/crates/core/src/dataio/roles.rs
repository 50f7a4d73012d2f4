use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CsvSchema, FlowRecord};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassRole {
    /// Trained on; split 8:2 into train and test.
    Known,
    /// Used only to calibrate the rejection threshold.
    ValidationUnknown,
    /// Used only for final open-set evaluation.
    TestUnknown,
    /// Dropped before splitting.
    Ignore,
}

fn default_label_column() -> String {
    "Label".into()
}

/// Dataset description: label column, non-feature columns, class roles.
///
/// ```toml
/// label_column = "Label"
/// exclude_columns = ["Flow ID"]
/// known = ["BENIGN", "DDoS"]
/// validation_unknown = ["DoS slowloris"]
/// test_unknown = ["Bot"]
/// ignore = []
/// # wildcard = "test_unknown"   # role for class names not listed above
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolesConfig {
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default)]
    pub exclude_columns: Vec<String>,
    pub known: Vec<String>,
    #[serde(default)]
    pub validation_unknown: Vec<String>,
    #[serde(default)]
    pub test_unknown: Vec<String>,
    #[serde(default)]
    pub ignore: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wildcard: Option<ClassRole>,
}

impl RolesConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RolesConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        RolesConfig::from_toml(&text)
            .map_err(|e| Error::Roles(format!("{}: {e}", path.display())))
    }

    fn listed(&self) -> impl Iterator<Item = (&String, ClassRole)> {
        self.known
            .iter()
            .map(|c| (c, ClassRole::Known))
            .chain(self.validation_unknown.iter().map(|c| (c, ClassRole::ValidationUnknown)))
            .chain(self.test_unknown.iter().map(|c| (c, ClassRole::TestUnknown)))
            .chain(self.ignore.iter().map(|c| (c, ClassRole::Ignore)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.known.is_empty() {
            return Err(Error::Roles("no known classes listed".into()));
        }
        if self.wildcard == Some(ClassRole::Known) {
            return Err(Error::Roles(
                "wildcard role cannot be `known`: the known vocabulary must be explicit".into(),
            ));
        }
        let mut seen: BTreeMap<&str, ClassRole> = BTreeMap::new();
        for (name, role) in self.listed() {
            if let Some(prev) = seen.insert(name.trim(), role) {
                return Err(Error::Roles(format!(
                    "class `{name}` listed as both {prev:?} and {role:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn role_of(&self, class: &str) -> Option<ClassRole> {
        self.listed()
            .find(|(name, _)| name.trim() == class.trim())
            .map(|(_, role)| role)
            .or(self.wildcard)
    }

    /// CSV schema: every column except the label and `exclude_columns`.
    pub fn schema(&self) -> CsvSchema {
        CsvSchema::all_except(&self.label_column, &self.exclude_columns)
    }

    /// Known class names in vocabulary order.
    pub fn known_classes(&self) -> Vec<String> {
        self.known.iter().map(|c| c.trim().to_string()).collect()
    }

    /// Role of every class present in `records`, failing on unassigned names.
    pub fn assign(&self, records: &[FlowRecord]) -> Result<BTreeMap<String, ClassRole>> {
        let present: BTreeSet<&str> = records.iter().map(|r| r.label.as_str()).collect();
        let mut roles = BTreeMap::new();
        let mut unassigned = Vec::new();
        for class in present {
            match self.role_of(class) {
                Some(role) => {
                    roles.insert(class.to_string(), role);
                }
                None => unassigned.push(class),
            }
        }
        if !unassigned.is_empty() {
            return Err(Error::Roles(format!(
                "classes without a role (add them to the roles file or set `wildcard`): {}",
                unassigned.join(", ")
            )));
        }
        Ok(roles)
    }
}

/// Known classes split train/test; unknown classes kept whole.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenSetSplit {
    pub known_classes: Vec<String>,
    pub known_train: Vec<FlowRecord>,
    pub known_test: Vec<FlowRecord>,
    pub val_unknown: Vec<FlowRecord>,
    pub test_unknown: Vec<FlowRecord>,
    pub class_roles: BTreeMap<String, ClassRole>,
}

/// Stratified per-class split of known records; `ratio` goes to training.
pub fn make_split(
    records: &[FlowRecord],
    roles: &RolesConfig,
    ratio: f64,
    seed: u64,
) -> Result<OpenSetSplit> {
    roles.validate()?;
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must be in (0, 1)")));
    }
    let class_roles = roles.assign(records)?;
    let known_classes = roles.known_classes();

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); known_classes.len()];
    let mut val_unknown = Vec::new();
    let mut test_unknown = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match class_roles[&r.label] {
            ClassRole::Known => {
                let k = known_classes.iter().position(|c| *c == r.label).unwrap();
                by_class[k].push(i);
            }
            ClassRole::ValidationUnknown => val_unknown.push(r.clone()),
            ClassRole::TestUnknown => test_unknown.push(r.clone()),
            ClassRole::Ignore => {}
        }
    }

    let mut rng = rng::generator(seed);
    let mut known_train = Vec::new();
    let mut known_test = Vec::new();
    for (class, idx) in known_classes.iter().zip(&by_class) {
        match idx.len() {
            0 => {
                log::warn!("known class `{class}` has no records");
                continue;
            }
            1 => {
                return Err(Error::Roles(format!(
                    "known class `{class}` has a single record; at least 2 are needed to split"
                )));
            }
            _ => {}
        }
        let n = idx.len();
        let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
        let order = rng::permutation(&mut rng, n);
        for (pos, &j) in order.iter().enumerate() {
            let record = records[idx[j]].clone();
            if pos < n_train {
                known_train.push(record);
            } else {
                known_test.push(record);
            }
        }
    }
    Ok(OpenSetSplit {
        known_classes,
        known_train,
        known_test,
        val_unknown,
        test_unknown,
        class_roles,
    })
}
