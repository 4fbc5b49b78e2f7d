use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer class identifier, contiguous from 0.
pub type ClassId = usize;

/// The ordered set of classes `0..M` with display names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelManifest", into = "LabelManifest")]
pub struct LabelSpace {
    display_names: Vec<String>,
}

/// On-disk form of a label space: the sidecar manifest next to a logit table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelManifest {
    pub num_classes: usize,
    pub class_ids: Vec<ClassId>,
    pub display_names: Vec<String>,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(display_names: impl IntoIterator<Item = S>) -> Result<Self> {
        let display_names: Vec<String> = display_names.into_iter().map(Into::into).collect();
        if display_names.len() < 2 {
            return Err(Error::invalid(format!(
                "label space needs at least 2 classes, got {}",
                display_names.len()
            )));
        }
        Ok(Self { display_names })
    }

    /// Label space with names `"class-0"`, `"class-1"`, ...
    pub fn numbered(num_classes: usize) -> Result<Self> {
        Self::new((0..num_classes).map(|i| format!("class-{i}")))
    }

    pub fn len(&self) -> usize {
        self.display_names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, class: ClassId) -> bool {
        class < self.len()
    }

    pub fn check(&self, class: ClassId) -> Result<()> {
        if self.contains(class) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "class {class} outside label space of size {}",
                self.len()
            )))
        }
    }

    pub fn name(&self, class: ClassId) -> Option<&str> {
        self.display_names.get(class).map(String::as_str)
    }

    pub fn display_names(&self) -> &[String] {
        &self.display_names
    }

    pub fn class_ids(&self) -> impl Iterator<Item = ClassId> {
        0..self.len()
    }

    pub fn read_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

impl TryFrom<LabelManifest> for LabelSpace {
    type Error = Error;

    fn try_from(m: LabelManifest) -> Result<Self> {
        if m.num_classes != m.display_names.len() || m.num_classes != m.class_ids.len() {
            return Err(Error::invalid(format!(
                "manifest declares {} classes but lists {} ids and {} names",
                m.num_classes,
                m.class_ids.len(),
                m.display_names.len()
            )));
        }
        if m.class_ids.iter().enumerate().any(|(i, &c)| i != c) {
            return Err(Error::invalid(
                "class ids must be contiguous from 0 and in order",
            ));
        }
        LabelSpace::new(m.display_names)
    }
}

impl From<LabelSpace> for LabelManifest {
    fn from(ls: LabelSpace) -> Self {
        LabelManifest {
            num_classes: ls.len(),
            class_ids: (0..ls.len()).collect(),
            display_names: ls.display_names,
        }
    }
}
