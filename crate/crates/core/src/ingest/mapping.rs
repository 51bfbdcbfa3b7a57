//! Raw-label to common-class protocols shared by dataset preparation and
//! evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ClassId, IGNORE};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMapping {
    pub name: String,
    pub source_to_common: BTreeMap<ClassId, ClassId>,
    pub class_names: Vec<String>,
    /// Classes reported per class but left out of the mIoU.
    pub excluded_from_miou: BTreeSet<ClassId>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MappingFile {
    name: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    note: Option<String>,
    class_names: Vec<String>,
    #[serde(default)]
    excluded_from_miou: Vec<String>,
    source_to_common: BTreeMap<String, ClassId>,
}

const BUILTIN: &[(&str, &str)] = &[
    ("dg_semantickitti", include_str!("../../mappings/dg_semantickitti.json")),
    ("dg_nuscenes", include_str!("../../mappings/dg_nuscenes.json")),
    ("uda_semantickitti", include_str!("../../mappings/uda_semantickitti.json")),
    ("uda_nuscenes", include_str!("../../mappings/uda_nuscenes.json")),
    ("synthetic", include_str!("../../mappings/synthetic.json")),
];

impl ClassMapping {
    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let (_, text) = BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("unknown class protocol {name:?}")))?;
        Self::from_json(text, Path::new(name))
    }

    /// A built-in protocol name or a path to a mapping JSON file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if BUILTIN.iter().any(|(n, _)| *n == name_or_path) {
            Self::builtin(name_or_path)
        } else {
            Self::load(Path::new(name_or_path))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    fn from_json(text: &str, path: &Path) -> Result<Self> {
        let file: MappingFile = serde_json::from_str(text).map_err(|e| Error::json(path, e))?;
        let mut source_to_common = BTreeMap::new();
        for (raw, id) in file.source_to_common {
            let raw: ClassId = raw
                .parse()
                .map_err(|_| Error::format(path, format!("raw label {raw:?} is not an integer")))?;
            source_to_common.insert(raw, id);
        }
        let excluded_from_miou = file
            .excluded_from_miou
            .iter()
            .map(|n| {
                file.class_names
                    .iter()
                    .position(|c| c == n)
                    .map(|i| i as ClassId)
                    .ok_or_else(|| Error::format(path, format!("excluded class {n:?} is not a class name")))
            })
            .collect::<Result<_>>()?;
        let mapping = Self {
            name: file.name,
            source_to_common,
            class_names: file.class_names,
            excluded_from_miou,
        };
        mapping.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(mapping)
    }

    pub fn to_json(&self) -> String {
        let file = MappingFile {
            name: self.name.clone(),
            version: 1,
            source_dataset: None,
            note: None,
            class_names: self.class_names.clone(),
            excluded_from_miou: self
                .excluded_from_miou
                .iter()
                .map(|&i| self.class_names[i as usize].clone())
                .collect(),
            source_to_common: self.source_to_common.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        };
        serde_json::to_string_pretty(&file).expect("mapping serializes")
    }

    /// Identity protocol over `class_names`.
    pub fn identity(name: &str, class_names: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            source_to_common: (0..class_names.len() as ClassId).map(|i| (i, i)).collect(),
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
            excluded_from_miou: BTreeSet::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.class_names.len();
        if n == 0 || n > IGNORE as usize {
            return Err(Error::Invalid(format!("protocol has {n} classes")));
        }
        if let Some((raw, id)) = self.source_to_common.iter().find(|(_, &id)| id as usize >= n) {
            return Err(Error::Invalid(format!("raw label {raw} maps to {id}, outside {n} classes")));
        }
        if let Some(id) = self.excluded_from_miou.iter().find(|&&id| id as usize >= n) {
            return Err(Error::Invalid(format!("excluded class {id} out of range")));
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    /// Common class for a raw label; unmapped labels and the 255 sentinel map to 255.
    pub fn map(&self, raw: ClassId) -> ClassId {
        if raw == IGNORE {
            return IGNORE;
        }
        self.source_to_common.get(&raw).copied().unwrap_or(IGNORE)
    }

    pub fn class_id(&self, name: &str) -> Option<ClassId> {
        self.class_names.iter().position(|c| c == name).map(|i| i as ClassId)
    }
}
