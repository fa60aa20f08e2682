//! Structured experience records.
//!
//! Level 1 holds case experiences distilled from one question's contrasted
//! rollouts; levels 2 and up hold strategy experiences summarized from
//! clusters of the level below. The `title` is the retrieval key (child
//! chunk); the `description` is the experience body returned as context
//! (parent payload).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_TAGS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub id: String,
    /// The reply's `type` field: question category plus solving method.
    #[serde(rename = "type")]
    pub kind_label: String,
    pub title: String,
    pub tags: Vec<String>,
    pub description: String,
    pub thinking: String,
    /// Ids of the QA examples this experience was mined from.
    pub qa_ids: Vec<String>,
    /// 1 = case experience, >= 2 = strategy experience.
    pub level: u32,
    /// Ids of the level-(l-1) entries summarized into this one. Empty at level 1.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub child_ids: Vec<String>,
}

impl Experience {
    pub fn validate(&self) -> Result<()> {
        if self.title.is_empty() {
            return Err(Error::Contract(format!("experience {}: empty title", self.id)));
        }
        if self.description.is_empty() {
            return Err(Error::Contract(format!(
                "experience {}: empty description",
                self.id
            )));
        }
        if self.tags.len() > MAX_TAGS {
            return Err(Error::Contract(format!(
                "experience {}: {} tags (max {MAX_TAGS})",
                self.id,
                self.tags.len()
            )));
        }
        if self.level == 0 {
            return Err(Error::Contract(format!("experience {}: level 0", self.id)));
        }
        if self.level == 1 && !self.child_ids.is_empty() {
            return Err(Error::Contract(format!(
                "experience {}: level-1 entry with child_ids",
                self.id
            )));
        }
        if self.level >= 2 && self.child_ids.is_empty() {
            return Err(Error::Contract(format!(
                "experience {}: level-{} entry without child_ids",
                self.id, self.level
            )));
        }
        Ok(())
    }
}

/// Write experiences one per line.
pub fn serialize_experience_file(experiences: &[Experience], path: &std::path::Path) -> Result<()> {
    let mut out = Vec::new();
    for e in experiences {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parse a line-delimited experience file, validating each record.
pub fn parse_experience_file(path: &std::path::Path) -> Result<Vec<Experience>> {
    let data = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (idx, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: Experience = serde_json::from_str(line)
            .map_err(|err| Error::parse(idx + 1, format!("malformed experience: {err}")))?;
        e.validate()
            .map_err(|err| Error::parse(idx + 1, err.to_string()))?;
        out.push(e);
    }
    Ok(out)
}
