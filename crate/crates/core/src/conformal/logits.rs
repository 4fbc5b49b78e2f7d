use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::labels::{ClassId, LabelSpace};
use crate::error::{Error, Result};

/// One line of a logit table file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogitExample {
    pub example_id: String,
    pub true_label: ClassId,
    pub logits: Vec<f64>,
}

/// Raw classifier logits with ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTable {
    label_space: LabelSpace,
    examples: Vec<LogitExample>,
    index: HashMap<String, usize>,
}

impl LogitTable {
    pub fn new(label_space: LabelSpace, examples: Vec<LogitExample>) -> Result<Self> {
        let m = label_space.len();
        let mut index = HashMap::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            if ex.logits.len() != m {
                return Err(Error::invalid(format!(
                    "example {:?} has {} logits, label space has {m}",
                    ex.example_id,
                    ex.logits.len()
                )));
            }
            if ex.logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "example {:?} has a non-finite logit",
                    ex.example_id
                )));
            }
            label_space.check(ex.true_label)?;
            if index.insert(ex.example_id.clone(), i).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate example id {:?}",
                    ex.example_id
                )));
            }
        }
        Ok(Self {
            label_space,
            examples,
            index,
        })
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn examples(&self) -> &[LogitExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, example_id: &str) -> Option<&LogitExample> {
        self.index.get(example_id).map(|&i| &self.examples[i])
    }

    /// New table holding only the listed examples, in the listed order.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let examples = ids
            .into_iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| Error::NotFound(format!("example {id:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.label_space.clone(), examples)
    }

    pub fn read_ndjson(reader: impl std::io::Read, label_space: LabelSpace) -> Result<Self> {
        let mut examples = Vec::new();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: LogitExample = serde_json::from_str(&line)
                .map_err(|e| Error::invalid(format!("line {}: {e}", lineno + 1)))?;
            examples.push(ex);
        }
        Self::new(label_space, examples)
    }

    /// Loads `<table>.ndjson` together with its label manifest.
    pub fn load(table: impl AsRef<Path>, manifest: impl AsRef<Path>) -> Result<Self> {
        let labels = LabelSpace::read_manifest(manifest)?;
        Self::read_ndjson(std::fs::File::open(table)?, labels)
    }

    pub fn write_ndjson(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.canonical_bytes())?;
        Ok(())
    }

    pub fn save(&self, table: impl AsRef<Path>, manifest: impl AsRef<Path>) -> Result<()> {
        std::fs::write(table, self.canonical_bytes())?;
        self.label_space.write_manifest(manifest)
    }

    /// Compact JSON, one record per line, `\n` terminated.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for ex in &self.examples {
            serde_json::to_writer(&mut out, ex).expect("logit records always serialize");
            out.push(b'\n');
        }
        out
    }

    /// Lowercase hex SHA-256 of [`Self::canonical_bytes`].
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> LabelSpace {
        LabelSpace::numbered(3).unwrap()
    }

    #[test]
    fn rejects_bad_rows() {
        let bad_len = LogitExample {
            example_id: "a".into(),
            true_label: 0,
            logits: vec![0.0, 1.0],
        };
        assert!(LogitTable::new(labels(), vec![bad_len]).is_err());

        let nan = LogitExample {
            example_id: "a".into(),
            true_label: 0,
            logits: vec![0.0, f64::NAN, 1.0],
        };
        assert!(LogitTable::new(labels(), vec![nan]).is_err());

        let out_of_range = LogitExample {
            example_id: "a".into(),
            true_label: 3,
            logits: vec![0.0; 3],
        };
        assert!(LogitTable::new(labels(), vec![out_of_range]).is_err());

        let ex = LogitExample {
            example_id: "dup".into(),
            true_label: 1,
            logits: vec![0.0; 3],
        };
        assert!(LogitTable::new(labels(), vec![ex.clone(), ex]).is_err());
    }

    #[test]
    fn ndjson_requires_exact_keys() {
        let text = "{\"example_id\":\"x\",\"true_label\":2,\"logits\":[0.5,-1.25,3]}\n\n";
        let t = LogitTable::read_ndjson(text.as_bytes(), labels()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("x").unwrap().logits, vec![0.5, -1.25, 3.0]);

        let extra = "{\"example_id\":\"x\",\"true_label\":2,\"logits\":[0,0,0],\"p\":1}\n";
        assert!(LogitTable::read_ndjson(extra.as_bytes(), labels()).is_err());
    }

    #[test]
    fn fingerprint_is_sha256_of_canonical_bytes() {
        let t = LogitTable::new(
            labels(),
            vec![LogitExample {
                example_id: "e".into(),
                true_label: 0,
                logits: vec![1.0, 2.0, 3.0],
            }],
        )
        .unwrap();
        assert_eq!(
            t.canonical_bytes(),
            b"{\"example_id\":\"e\",\"true_label\":0,\"logits\":[1.0,2.0,3.0]}\n".to_vec()
        );
        let fp = t.fingerprint();
        assert_eq!(fp.len(), 64);
        assert!(fp
            .chars()
            .all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
        // Whitespace in the source file does not change the fingerprint.
        let spaced = "{ \"example_id\": \"e\", \"true_label\": 0, \"logits\": [1, 2, 3] }\n";
        let reread = LogitTable::read_ndjson(spaced.as_bytes(), labels()).unwrap();
        assert_eq!(reread.fingerprint(), fp);
    }
}
