//! Dataset references and the five-file benchmark layout.

use std::fs;
use std::io;
use std::path::Path;

use kgalign_core::synthetic::{LEFT_ATTR_FILE, LEFT_REL_FILE, REFERENCE_FILE, RIGHT_ATTR_FILE, RIGHT_REL_FILE};
use kgalign_core::kg::TripleFile;
use kgalign_core::{parse_kg, KnowledgeGraph, ReferenceAlignment, Side};
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

/// Where a task's graphs come from. Uploads carry the file contents inline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DatasetRef {
    Builtin {
        name: String,
    },
    Uploaded {
        rel_triples_1: String,
        #[serde(default)]
        attr_triples_1: String,
        rel_triples_2: String,
        #[serde(default)]
        attr_triples_2: String,
        #[serde(default)]
        ent_links: Option<String>,
    },
}

/// Raw contents of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetFiles {
    pub left_rel: String,
    pub left_attr: String,
    pub right_rel: String,
    pub right_attr: String,
    pub reference: Option<String>,
}

pub struct LoadedDataset {
    pub left: KnowledgeGraph,
    pub right: KnowledgeGraph,
    pub reference: Option<ReferenceAlignment>,
}

fn valid_builtin_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Names of the bundled datasets: subdirectories holding a left relation file.
pub fn builtin_names(datasets_dir: &Path) -> Vec<String> {
    let Ok(entries) = fs::read_dir(datasets_dir) else { return Vec::new() };
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join(LEFT_REL_FILE).is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| valid_builtin_name(n))
        .collect();
    names.sort();
    names
}

impl DatasetFiles {
    pub fn resolve(dataset: &DatasetRef, datasets_dir: &Path) -> ServiceResult<Self> {
        match dataset {
            DatasetRef::Builtin { name } => {
                if !valid_builtin_name(name) {
                    return Err(ServiceError::InvalidDataset(format!("unknown builtin dataset `{name}`")));
                }
                let dir = datasets_dir.join(name);
                if !dir.join(LEFT_REL_FILE).is_file() {
                    return Err(ServiceError::InvalidDataset(format!("unknown builtin dataset `{name}`")));
                }
                Self::read_from(&dir).map_err(|e| ServiceError::InvalidDataset(format!("{name}: {e}")))
            }
            DatasetRef::Uploaded { rel_triples_1, attr_triples_1, rel_triples_2, attr_triples_2, ent_links } => {
                Ok(DatasetFiles {
                    left_rel: rel_triples_1.clone(),
                    left_attr: attr_triples_1.clone(),
                    right_rel: rel_triples_2.clone(),
                    right_attr: attr_triples_2.clone(),
                    reference: ent_links.clone(),
                })
            }
        }
    }

    /// Reads the layout written by [`DatasetFiles::write_to`]. Attribute files
    /// and the reference are optional.
    pub fn read_from(dir: &Path) -> io::Result<Self> {
        let optional = |name: &str| match fs::read_to_string(dir.join(name)) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        };
        Ok(DatasetFiles {
            left_rel: fs::read_to_string(dir.join(LEFT_REL_FILE))?,
            left_attr: optional(LEFT_ATTR_FILE)?.unwrap_or_default(),
            right_rel: fs::read_to_string(dir.join(RIGHT_REL_FILE))?,
            right_attr: optional(RIGHT_ATTR_FILE)?.unwrap_or_default(),
            reference: optional(REFERENCE_FILE)?,
        })
    }

    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(LEFT_REL_FILE), &self.left_rel)?;
        fs::write(dir.join(LEFT_ATTR_FILE), &self.left_attr)?;
        fs::write(dir.join(RIGHT_REL_FILE), &self.right_rel)?;
        fs::write(dir.join(RIGHT_ATTR_FILE), &self.right_attr)?;
        if let Some(reference) = &self.reference {
            fs::write(dir.join(REFERENCE_FILE), reference)?;
        }
        Ok(())
    }

    /// Parses all files; errors name the offending file.
    pub fn parse(&self) -> ServiceResult<LoadedDataset> {
        let invalid = |file: &str, e: kgalign_core::Error| ServiceError::InvalidDataset(format!("{file}: {e}"));
        // Parse errors name the triple file; map that back to the file name.
        let file_of = |e: &kgalign_core::Error, rel: &'static str, attr: &'static str| match e {
            kgalign_core::Error::MalformedLine { file: TripleFile::Attribute, .. } => attr,
            _ => rel,
        };
        let left = parse_kg(self.left_rel.as_bytes(), self.left_attr.as_bytes(), Side::Left)
            .map_err(|e| invalid(file_of(&e, LEFT_REL_FILE, LEFT_ATTR_FILE), e))?;
        let right = parse_kg(self.right_rel.as_bytes(), self.right_attr.as_bytes(), Side::Right)
            .map_err(|e| invalid(file_of(&e, RIGHT_REL_FILE, RIGHT_ATTR_FILE), e))?;
        if left.num_entities() == 0 || right.num_entities() == 0 {
            return Err(ServiceError::InvalidDataset("both graphs need at least one entity".into()));
        }
        let reference = match &self.reference {
            Some(text) => Some(ReferenceAlignment::parse(text.as_bytes()).map_err(|e| invalid(REFERENCE_FILE, e))?),
            None => None,
        };
        Ok(LoadedDataset { left, right, reference })
    }
}
