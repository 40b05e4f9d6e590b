//! Sensor metadata: one record per sensor, stored as TOML.
//!
//! ```toml
//! [[sensor]]
//! sensor_id = "M004"
//! kind = "motion"
//! room = "bedroom"
//!
//! [[sensor]]
//! sensor_id = "D001"
//! kind = "contact"
//! room = "foyer"
//! object = "front door"
//! is_entrance = true
//!
//! [[sensor]]
//! sensor_id = "T001"
//! kind = "environmental"
//! room = "kitchen"
//! variable = "temperature"
//! unit = "°C"
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Motion,
    Contact,
    Plug,
    Environmental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorMetadata {
    pub sensor_id: String,
    pub kind: SensorKind,
    pub room: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
    #[serde(default)]
    pub is_entrance: bool,
    /// Environmental variable for numeric readings (`temperature`,
    /// `humidity`, `power`, or anything else the deployment reports).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl SensorMetadata {
    /// Variable name numeric readings of this sensor are filed under.
    pub fn variable_name(&self) -> &str {
        match (&self.variable, self.kind) {
            (Some(v), _) => v,
            (None, SensorKind::Plug) => "power",
            (None, _) => "temperature",
        }
    }

    /// Unit tag for numeric readings, defaulted from the variable name.
    pub fn unit_tag(&self) -> Option<String> {
        if let Some(u) = &self.unit {
            return Some(u.clone());
        }
        match self.variable_name() {
            "temperature" => Some("°C".into()),
            "humidity" => Some("%RH".into()),
            "power" => Some("W".into()),
            _ => None,
        }
    }

    pub fn accepts_numeric(&self) -> bool {
        matches!(self.kind, SensorKind::Environmental | SensorKind::Plug) || self.variable.is_some()
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct MetadataFile {
    #[serde(default)]
    sensor: Vec<SensorMetadata>,
}

/// Metadata keyed by sensor id; each id appears exactly once.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SensorMetadataSet {
    by_id: BTreeMap<String, SensorMetadata>,
}

impl SensorMetadataSet {
    pub fn new(entries: impl IntoIterator<Item = SensorMetadata>) -> Result<Self, IngestError> {
        let mut by_id = BTreeMap::new();
        for e in entries {
            if e.sensor_id.trim().is_empty() {
                return Err(IngestError::Metadata("empty sensor_id".into()));
            }
            let id = e.sensor_id.clone();
            if by_id.insert(id.clone(), e).is_some() {
                return Err(IngestError::Metadata(format!("duplicate sensor_id {id:?}")));
            }
        }
        Ok(Self { by_id })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, IngestError> {
        let file: MetadataFile = toml::from_str(text).map_err(|e| IngestError::Metadata(e.to_string()))?;
        Self::new(file.sensor)
    }

    pub fn to_toml_string(&self) -> String {
        let file = MetadataFile {
            sensor: self.by_id.values().cloned().collect(),
        };
        toml::to_string(&file).expect("metadata serializes")
    }

    pub fn get(&self, id: &str) -> Option<&SensorMetadata> {
        self.by_id.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SensorMetadata> {
        self.by_id.values()
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn has_entrance(&self) -> bool {
        self.by_id.values().any(|m| m.is_entrance)
    }
}
