//! Calibrated models as JSON documents. Infinite quantiles are written as the
//! strings `"inf"` / `"-inf"` since JSON numbers cannot hold them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use uqvox_core::conformal::{ClassCounts, ClassRates, HcpModel};

use crate::container::{write_atomic, ContainerError};

pub(crate) mod inf_f64 {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn to_repr(x: f64) -> Result<serde_json::Value, String> {
        if x.is_nan() {
            return Err("NaN cannot be stored".into());
        }
        Ok(if x == f64::INFINITY {
            "inf".into()
        } else if x == f64::NEG_INFINITY {
            "-inf".into()
        } else {
            x.into()
        })
    }

    pub fn parse(s: &str) -> Result<f64, String> {
        match s {
            "inf" | "+inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            _ => Err(format!("expected a number, \"inf\" or \"-inf\", got {s:?}")),
        }
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*x).map_err(serde::ser::Error::custom)?.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => parse(&s).map_err(serde::de::Error::custom),
        }
    }
}

pub(crate) mod inf_map {
    use super::*;

    pub fn serialize<S: Serializer>(m: &ClassRates, s: S) -> Result<S::Ok, S::Error> {
        let mut out = BTreeMap::new();
        for (&k, &v) in m {
            out.insert(k, inf_f64::to_repr(v).map_err(serde::ser::Error::custom)?);
        }
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ClassRates, D::Error> {
        #[derive(Deserialize)]
        struct W(#[serde(with = "inf_f64")] f64);
        let m: BTreeMap<u16, W> = class_map::deserialize(d)?;
        Ok(m.into_iter().map(|(k, W(v))| (k, v)).collect())
    }
}

/// Class-keyed maps. Keys are read back from their string form so the maps
/// also load inside tagged or flattened documents.
pub(crate) mod class_map {
    use super::*;

    pub fn serialize<V: Serialize, S: Serializer>(m: &BTreeMap<u16, V>, s: S) -> Result<S::Ok, S::Error> {
        m.serialize(s)
    }

    pub fn deserialize<'de, V: Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u16, V>, D::Error> {
        let raw: BTreeMap<String, V> = BTreeMap::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                k.parse::<u16>()
                    .map(|k| (k, v))
                    .map_err(|_| serde::de::Error::custom(format!("class key {k:?} is not a label")))
            })
            .collect()
    }
}

/// How voxels were split when the model was calibrated; evaluation uses the
/// complementary test part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScpDoc {
    pub class_count: usize,
    pub alpha: f64,
    #[serde(with = "inf_f64")]
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CccpDoc {
    pub class_count: usize,
    #[serde(with = "class_map")]
    pub alpha: ClassRates,
    #[serde(with = "inf_map")]
    pub q: ClassRates,
}

/// JSON form of [`HcpModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HcpDoc {
    pub class_count: usize,
    pub rare: Vec<u16>,
    pub epsilon: f64,
    #[serde(with = "inf_map")]
    pub q_o: ClassRates,
    #[serde(with = "class_map")]
    pub alpha_o: ClassRates,
    #[serde(with = "class_map")]
    pub alpha_s: ClassRates,
    #[serde(with = "inf_map")]
    pub q_s: ClassRates,
    #[serde(with = "class_map")]
    pub alpha_target: ClassRates,
    #[serde(with = "class_map")]
    pub counts: BTreeMap<u16, ClassCounts>,
}

impl From<&HcpModel> for HcpDoc {
    fn from(m: &HcpModel) -> Self {
        HcpDoc {
            class_count: m.class_count,
            rare: m.rare.clone(),
            epsilon: m.epsilon,
            q_o: m.q_o.clone(),
            alpha_o: m.alpha_o.clone(),
            alpha_s: m.alpha_s.clone(),
            q_s: m.q_s.clone(),
            alpha_target: m.alpha_target.clone(),
            counts: m.counts.clone(),
        }
    }
}

impl From<HcpDoc> for HcpModel {
    fn from(d: HcpDoc) -> Self {
        HcpModel {
            class_count: d.class_count,
            rare: d.rare,
            epsilon: d.epsilon,
            q_o: d.q_o,
            alpha_o: d.alpha_o,
            alpha_s: d.alpha_s,
            q_s: d.q_s,
            alpha_target: d.alpha_target,
            counts: d.counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Predictor {
    Scp(ScpDoc),
    Cccp(CccpDoc),
    Hcp(HcpDoc),
}

impl Predictor {
    pub fn class_count(&self) -> usize {
        match self {
            Predictor::Scp(d) => d.class_count,
            Predictor::Cccp(d) => d.class_count,
            Predictor::Hcp(d) => d.class_count,
        }
    }

    pub fn method(&self) -> &'static str {
        match self {
            Predictor::Scp(_) => "scp",
            Predictor::Cccp(_) => "cccp",
            Predictor::Hcp(_) => "hcp",
        }
    }
}

/// A model file: the calibrated predictor plus the split it was fit on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub split: SplitRecord,
    #[serde(flatten)]
    pub predictor: Predictor,
}

impl ModelFile {
    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn read(path: &Path) -> Result<Self, ContainerError> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json(&s).map_err(|e| ContainerError::Format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<(), ContainerError> {
        let mut s = self.to_json().map_err(|e| ContainerError::Format(e.to_string()))?;
        s.push('\n');
        write_atomic(path, s.as_bytes())
    }
}
