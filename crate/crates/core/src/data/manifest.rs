use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conformal::{LabelSpace, LogitTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StimulusKind {
    Image,
    Text,
    TextWithHighlight,
}

/// What the participant sees for one example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Asset {
    /// Path relative to the static asset directory.
    Image { path: String },
    /// Inline text; `highlight` is a `[start, end)` word-index span.
    Text {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        highlight: Option<(usize, usize)>,
    },
}

/// Describes one task's calibration and test data and per-example assets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub task_id: String,
    pub label_space: LabelSpace,
    pub cal_path: PathBuf,
    pub test_path: PathBuf,
    pub stimulus_kind: StimulusKind,
    pub assets: BTreeMap<String, Asset>,
}

/// A manifest with both logit tables loaded and cross-checked.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub cal: LogitTable,
    pub test: LogitTable,
}

impl DatasetManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Reads the manifest and the two NDJSON tables it points to.
    ///
    /// Relative table paths resolve against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<LoadedDataset> {
        let path = path.as_ref();
        let manifest = Self::read(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let open = |p: &Path| -> Result<LogitTable> {
            let full = if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            };
            let file = std::fs::File::open(&full)
                .map_err(|e| Error::Config(format!("cannot open {}: {e}", full.display())))?;
            LogitTable::read_ndjson(file, manifest.label_space.clone())
        };
        let cal = open(&manifest.cal_path)?;
        let test = open(&manifest.test_path)?;
        LoadedDataset::new(manifest, cal, test)
    }
}

impl LoadedDataset {
    pub fn new(manifest: DatasetManifest, cal: LogitTable, test: LogitTable) -> Result<Self> {
        if cal.label_space() != &manifest.label_space || test.label_space() != &manifest.label_space
        {
            return Err(Error::invalid("table label space differs from manifest"));
        }
        if let Some(ex) = cal
            .examples()
            .iter()
            .find(|ex| test.get(&ex.example_id).is_some())
        {
            return Err(Error::invalid(format!(
                "example {:?} appears in both calibration and test splits",
                ex.example_id
            )));
        }
        if let Some(ex) = cal
            .examples()
            .iter()
            .chain(test.examples())
            .find(|ex| !manifest.assets.contains_key(&ex.example_id))
        {
            return Err(Error::invalid(format!(
                "example {:?} has no asset",
                ex.example_id
            )));
        }
        Ok(Self {
            manifest,
            cal,
            test,
        })
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.manifest.label_space
    }

    pub fn asset(&self, example_id: &str) -> Option<&Asset> {
        self.manifest.assets.get(example_id)
    }
}
