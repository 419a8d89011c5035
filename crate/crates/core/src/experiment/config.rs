use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{downsample_majority, load_csv, make_blobs, make_moons, Dataset};
use crate::density::FlowArch;
use crate::error::{Error, Result};
use crate::models::{Arch, TrainConfig};
use crate::ppcef::CfConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Moons {
        #[serde(default = "moons_n")]
        n: usize,
        #[serde(default = "moons_noise")]
        noise: f64,
    },
    Blobs {
        #[serde(default = "blobs_n")]
        n: usize,
        #[serde(default = "blobs_centers")]
        centers: usize,
        #[serde(default = "blobs_std")]
        std: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "label_column")]
        label_column: String,
    },
}

fn moons_n() -> usize {
    1024
}
fn moons_noise() -> f64 {
    0.01
}
fn blobs_n() -> usize {
    1500
}
fn blobs_centers() -> usize {
    3
}
fn blobs_std() -> f64 {
    1.0
}
fn label_column() -> String {
    "label".into()
}

impl Default for DatasetSource {
    fn default() -> Self {
        Self::moons()
    }
}

impl DatasetSource {
    pub fn moons() -> Self {
        Self::Moons {
            n: moons_n(),
            noise: moons_noise(),
        }
    }

    pub fn blobs() -> Self {
        Self::Blobs {
            n: blobs_n(),
            centers: blobs_centers(),
            std: blobs_std(),
        }
    }

    /// `moons`, `blobs`, or a path to a CSV file.
    pub fn parse(spec: &str, label: Option<&str>) -> Self {
        match spec {
            "moons" => Self::moons(),
            "blobs" => Self::blobs(),
            path => Self::Csv {
                path: path.into(),
                label_column: label.map_or_else(label_column, String::from),
            },
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Moons { .. } => "moons".into(),
            Self::Blobs { .. } => "blobs".into(),
            Self::Csv { path, .. } => path
                .file_stem()
                .map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned()),
        }
    }

    /// Raw (unscaled) data.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            Self::Moons { n, noise } => make_moons(*n, *noise, seed),
            Self::Blobs { n, centers, std } => make_blobs(*n, *centers, *std, seed),
            Self::Csv { path, label_column } => {
                let load = load_csv(path, label_column)?;
                if !load.rejected_rows.is_empty() {
                    log::warn!(
                        "{}: skipped {} malformed rows (first at line {})",
                        path.display(),
                        load.rejected_rows.len(),
                        load.rejected_rows[0]
                    );
                }
                Ok(load.dataset)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Ppcef,
    Wachter,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppcef" => Ok(Self::Ppcef),
            "wachter" => Ok(Self::Wachter),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub arch: Arch,
    pub hidden: [usize; 2],
    pub train: TrainConfig,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self {
            arch: Arch::Lr,
            hidden: [64, 64],
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub transforms: usize,
    pub hidden: usize,
    /// Missing keys fall back to [`TrainConfig::flow`], not the classifier
    /// defaults.
    #[serde(deserialize_with = "flow_train")]
    pub train: TrainConfig,
}

fn flow_train<'de, D: serde::Deserializer<'de>>(de: D) -> std::result::Result<TrainConfig, D::Error> {
    use serde::de::Error as _;
    let given = serde_json::Value::deserialize(de)?;
    let mut merged = serde_json::to_value(TrainConfig::flow()).map_err(D::Error::custom)?;
    match (given, &mut merged) {
        (serde_json::Value::Object(keys), serde_json::Value::Object(base)) => base.extend(keys),
        (other, _) => return Err(D::Error::custom(format!("flow.train must be a table, got {other}"))),
    }
    serde_json::from_value(merged).map_err(D::Error::custom)
}

impl Default for FlowSection {
    fn default() -> Self {
        let arch = FlowArch::default();
        Self {
            transforms: arch.transforms,
            hidden: arch.hidden,
            train: TrainConfig::flow(),
        }
    }
}

impl FlowSection {
    pub fn arch(&self) -> FlowArch {
        FlowArch {
            transforms: self.transforms,
            hidden: self.hidden,
        }
    }
}

/// Everything one experiment needs; read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    /// Downsample every class to the minority count before splitting.
    pub balance_classes: bool,
    pub classifier: ClassifierSection,
    pub flow: FlowSection,
    pub cf: CfConfig,
    pub method: Method,
    pub k_folds: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Mixture components for the density comparison.
    pub gmm_components: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            balance_classes: true,
            classifier: ClassifierSection::default(),
            flow: FlowSection::default(),
            cf: CfConfig::default(),
            method: Method::Ppcef,
            k_folds: 5,
            seed: 0,
            out: PathBuf::from("runs/default"),
            gmm_components: 1,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_folds < 1 {
            return Err(Error::Config("k_folds must be at least 1".into()));
        }
        if self.flow.transforms < 1 || self.flow.hidden < 1 {
            return Err(Error::Config("flow needs at least one transform and hidden unit".into()));
        }
        if self.gmm_components < 1 {
            return Err(Error::Config("gmm_components must be at least 1".into()));
        }
        if let DatasetSource::Csv { path, .. } = &self.dataset {
            if !path.exists() {
                return Err(Error::Config(format!("dataset file {} does not exist", path.display())));
            }
        }
        self.classifier.train.validate()?;
        self.flow.train.validate()?;
        self.cf.validate()
    }

    /// Hex SHA-256 of the JSON form of the config.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)?;
        Ok(Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Loads, optionally balances, and returns the raw dataset.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let data = self.dataset.load(self.seed)?;
        if self.balance_classes && data.n_classes >= 2 {
            downsample_majority(&data, self.seed)
        } else {
            Ok(data)
        }
    }

    /// Seed for the models of one fold.
    pub fn fold_seed(&self, fold: usize) -> u64 {
        self.seed.wrapping_add(fold as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sections() {
        let cfg = RunConfig::from_toml_str(
            r#"
            seed = 7
            method = "wachter"
            [dataset]
            kind = "blobs"
            centers = 4
            [cf]
            lambda = 5.0
            [flow.train]
            epochs = 3
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.method, Method::Wachter);
        assert_eq!(cfg.dataset, DatasetSource::Blobs { n: 1500, centers: 4, std: 1.0 });
        assert_eq!(cfg.cf.lambda, 5.0);
        assert_eq!(cfg.cf.max_iters, 5000);
        assert_eq!(cfg.flow.train.epochs, 3);
        assert_eq!(cfg.flow.train.input_noise, TrainConfig::flow().input_noise);
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        let other = RunConfig { seed: 1, ..cfg.clone() };
        assert_ne!(other.hash().unwrap(), cfg.hash().unwrap());
        assert_eq!(cfg.hash().unwrap().len(), 64);
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(matches!(RunConfig::from_toml_str("k_folds = \"x\""), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("[cf]\nlamda = 3.0"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("[flow.train]\nepoch = 3"), Err(Error::Config(_))));
        let cfg = RunConfig { k_folds: 0, ..RunConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = RunConfig {
            dataset: DatasetSource::parse("/no/such/file.csv", None),
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
