//! Pipeline configuration file. Every field is optional; missing fields take
//! the desk-scale defaults. See `docs/config.md` for the schema.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uqvox_core::conformal::{ClassRates, HcpConfig, DEFAULT_EPSILON};
use uqvox_core::synth::{classes, ClassifierSpec, NoiseModel, SceneSpec};
use uqvox_core::{CameraIntrinsics, GridGeometry};

use crate::error::CliError;

/// Default calibration share of the voxels.
pub const DEFAULT_SPLIT: f64 = 0.3;

/// Conformal settings as written in a config file. Class keys may be labels
/// (`"5"`) or class names (`"person"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConformalSettings {
    /// Rate used for SCP and for every class without an explicit target.
    pub alpha: f64,
    pub alpha_target: BTreeMap<String, f64>,
    pub rare: Vec<String>,
    pub alpha_o: BTreeMap<String, f64>,
    pub epsilon: f64,
}

impl Default for ConformalSettings {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            alpha_target: BTreeMap::new(),
            rare: vec!["person".into()],
            alpha_o: [("person".to_string(), 0.05)].into_iter().collect(),
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out_dir: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub depth: Option<PathBuf>,
    pub softmax: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Calibration share in (0, 1); the rest is the test split.
    pub split: f64,
    pub scene: Option<SceneSpec>,
    pub classifier: Option<ClassifierSpec>,
    pub noise: NoiseModel,
    pub intrinsics: CameraIntrinsics,
    pub conformal: ConformalSettings,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            split: DEFAULT_SPLIT,
            scene: None,
            classifier: None,
            noise: NoiseModel::default(),
            intrinsics: CameraIntrinsics::desk_default(),
            conformal: ConformalSettings::default(),
            paths: Paths::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check_split(self.split)?;
        self.intrinsics.validate().map_err(|e| CliError::Config(format!("intrinsics: {e}")))?;
        self.noise.validate().map_err(|e| CliError::Config(format!("noise: {e}")))?;
        self.scene().validate().map_err(|e| CliError::Config(format!("scene: {e}")))?;
        let clf = self.classifier();
        clf.validate().map_err(|e| CliError::Config(format!("classifier: {e}")))?;
        if clf.class_count() != self.scene().class_count {
            return Err(CliError::Config(format!(
                "classifier: {} classes but the scene has {}",
                clf.class_count(),
                self.scene().class_count
            )));
        }
        Ok(())
    }

    /// Scene spec with the pipeline seed applied.
    pub fn scene(&self) -> SceneSpec {
        let mut s = self.scene.clone().unwrap_or_else(|| SceneSpec::desk_default(self.seed));
        s.seed = self.seed;
        s
    }

    /// Classifier spec with the pipeline seed applied.
    pub fn classifier(&self) -> ClassifierSpec {
        let mut c = self.classifier.clone().unwrap_or_else(|| ClassifierSpec::desk_default(self.seed));
        c.seed = self.seed;
        c
    }

    pub fn geometry(&self) -> GridGeometry {
        self.scene.as_ref().map_or_else(GridGeometry::desk_default, |s| s.geometry)
    }
}

pub fn check_split(split: f64) -> Result<(), CliError> {
    if !(split > 0.0 && split < 1.0) {
        return Err(CliError::Config(format!("split must lie in (0, 1), got {split}")));
    }
    Ok(())
}

/// Resolve a class given by label or by default class name.
pub fn parse_class(key: &str, class_count: usize) -> Result<u16, CliError> {
    let y = match key.parse::<u16>() {
        Ok(y) => y,
        Err(_) => classes::NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(key))
            .map(|i| i as u16 + 1)
            .ok_or_else(|| CliError::Config(format!("unknown class {key:?}")))?,
    };
    if y == 0 || y as usize > class_count {
        return Err(CliError::Config(format!("class {key:?} outside 1..={class_count}")));
    }
    Ok(y)
}

fn parse_rates(map: &BTreeMap<String, f64>, class_count: usize, field: &str) -> Result<ClassRates, CliError> {
    let mut out = ClassRates::new();
    for (k, &v) in map {
        let y = parse_class(k, class_count).map_err(|e| CliError::Config(format!("{field}: {e}")))?;
        out.insert(y, v);
    }
    Ok(out)
}

impl ConformalSettings {
    /// Per-class targets for labels `from..=class_count`, falling back to `alpha`.
    pub fn targets(&self, class_count: usize, from: u16) -> Result<ClassRates, CliError> {
        let explicit = parse_rates(&self.alpha_target, class_count, "alpha_target")?;
        Ok((from..=class_count as u16).map(|y| (y, explicit.get(&y).copied().unwrap_or(self.alpha))).collect())
    }

    pub fn hcp(&self, class_count: usize) -> Result<HcpConfig, CliError> {
        let rare = self
            .rare
            .iter()
            .map(|k| parse_class(k, class_count))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(format!("rare: {e}")))?;
        let cfg = HcpConfig {
            class_count,
            rare,
            alpha_o: parse_rates(&self.alpha_o, class_count, "alpha_o")?,
            alpha_target: self.targets(class_count, 2)?,
            epsilon: self.epsilon,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// Parse repeated `key=value` flags into a map.
pub fn parse_pairs(pairs: &[String], flag: &str) -> Result<BTreeMap<String, f64>, CliError> {
    let mut out = BTreeMap::new();
    for p in pairs {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--{flag} expects class=value, got {p:?}")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("--{flag}: {v:?} is not a number")))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}
