//! Persistence and exact parent-child retrieval over the leveled experience
//! base. Titles are the child chunks matched by cosine similarity; the full
//! record is the parent payload returned as context.
//!
//! The index is a flat array scanned exhaustively: bases stay small (they
//! are compressed out of the rollout corpus by clustering), and an exact
//! scan keeps the argmax literal and the tests exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clients::EmbeddingVector;
use crate::error::{Error, Result};
use crate::experience::Experience;
use crate::vecmath;

/// Leveled experience base with per-entry title embeddings.
/// `levels[0]` is level 1 (case experiences).
#[derive(Debug, Clone, PartialEq)]
pub struct Hek {
    pub levels: Vec<Vec<Experience>>,
    pub vectors: Vec<Vec<EmbeddingVector>>,
    pub built_at: String,
    pub embedder_fingerprint: String,
}

impl Hek {
    pub fn new(
        levels: Vec<Vec<Experience>>,
        vectors: Vec<Vec<EmbeddingVector>>,
        built_at: String,
        embedder_fingerprint: String,
    ) -> Result<Self> {
        let hek = Hek {
            levels,
            vectors,
            built_at,
            embedder_fingerprint,
        };
        hek.validate()?;
        Ok(hek)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Contract("experience base has no levels".into()));
        }
        if self.vectors.len() != self.levels.len() {
            return Err(Error::Contract(
                "vector level count differs from experience level count".into(),
            ));
        }
        let dim = self.dim();
        let mut ids = std::collections::BTreeSet::new();
        for (li, entries) in self.levels.iter().enumerate() {
            let expect_level = li as u32 + 1;
            if self.vectors[li].len() != entries.len() {
                return Err(Error::Contract(format!(
                    "level {expect_level}: {} vectors for {} entries",
                    self.vectors[li].len(),
                    entries.len()
                )));
            }
            for e in entries {
                e.validate()?;
                if e.level != expect_level {
                    return Err(Error::Contract(format!(
                        "entry {} at slot for level {expect_level} carries level {}",
                        e.id, e.level
                    )));
                }
                if !ids.insert(e.id.clone()) {
                    return Err(Error::Contract(format!("duplicate id {}", e.id)));
                }
                if li > 0 {
                    for child in &e.child_ids {
                        if !self.levels[li - 1].iter().any(|p| &p.id == child) {
                            return Err(Error::Contract(format!(
                                "entry {} references unknown child {child}",
                                e.id
                            )));
                        }
                    }
                }
            }
            for v in &self.vectors[li] {
                if v.dim() != dim {
                    return Err(Error::Contract("inconsistent vector dimension".into()));
                }
                if v.values.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Contract("non-finite vector entry".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.vectors
            .iter()
            .flat_map(|l| l.first())
            .map(EmbeddingVector::dim)
            .next()
            .unwrap_or(0)
    }

    /// Entries at a 1-based level, if that level exists.
    pub fn level_entries(&self, level: u32) -> Option<&[Experience]> {
        if level == 0 {
            return None;
        }
        self.levels.get(level as usize - 1).map(Vec::as_slice)
    }

    pub fn total_entries(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    built_at: String,
    embedder_fingerprint: String,
    levels: usize,
    dim: usize,
}

/// Write the base as `meta` plus `level_<l>` / `vectors_<l>` line files.
pub fn save_hek(hek: &Hek, dir: &Path) -> Result<()> {
    hek.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let meta = Meta {
        built_at: hek.built_at.clone(),
        embedder_fingerprint: hek.embedder_fingerprint.clone(),
        levels: hek.levels.len(),
        dim: hek.dim(),
    };
    let meta_path = dir.join("meta");
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)
        .map_err(|e| Error::io(meta_path.display().to_string(), e))?;

    for (li, entries) in hek.levels.iter().enumerate() {
        let level = li + 1;
        let mut lines = Vec::new();
        for e in entries {
            serde_json::to_writer(&mut lines, e)?;
            lines.push(b'\n');
        }
        let path = dir.join(format!("level_{level}"));
        fs::write(&path, lines).map_err(|e| Error::io(path.display().to_string(), e))?;

        let mut vlines = Vec::new();
        for v in &hek.vectors[li] {
            serde_json::to_writer(&mut vlines, v)?;
            vlines.push(b'\n');
        }
        let vpath = dir.join(format!("vectors_{level}"));
        fs::write(&vpath, vlines).map_err(|e| Error::io(vpath.display().to_string(), e))?;
    }
    Ok(())
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let data =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (idx, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: T = serde_json::from_str(line).map_err(|e| {
            Error::parse(idx + 1, format!("{}: {e}", path.display()))
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Load a base written by [`save_hek`]. When `expected_fingerprint` is given
/// and differs from the stored one, a warning is returned (not an error).
pub fn load_hek(dir: &Path, expected_fingerprint: Option<&str>) -> Result<(Hek, Vec<String>)> {
    let meta_path = dir.join("meta");
    let meta_text = fs::read_to_string(&meta_path)
        .map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    let meta: Meta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::parse(1, format!("{}: {e}", meta_path.display())))?;

    let mut levels = Vec::with_capacity(meta.levels);
    let mut vectors = Vec::with_capacity(meta.levels);
    for level in 1..=meta.levels {
        let entries: Vec<Experience> = read_lines(&dir.join(format!("level_{level}")))?;
        let vecs: Vec<EmbeddingVector> = read_lines(&dir.join(format!("vectors_{level}")))?;
        levels.push(entries);
        vectors.push(vecs);
    }
    let hek = Hek::new(levels, vectors, meta.built_at, meta.embedder_fingerprint)?;
    if hek.dim() != meta.dim {
        return Err(Error::Contract(format!(
            "meta declares dim {}, vectors carry dim {}",
            meta.dim,
            hek.dim()
        )));
    }

    let mut warnings = Vec::new();
    if let Some(expected) = expected_fingerprint {
        if expected != hek.embedder_fingerprint {
            warnings.push(format!(
                "embedder fingerprint mismatch: base built with `{}`, current config is `{expected}`",
                hek.embedder_fingerprint
            ));
        }
    }
    Ok((hek, warnings))
}

/// Flat retrieval view: one entry per experience, child vector over the
/// title, parent payload the full record.
#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub id: String,
    pub level: u32,
    pub vector: EmbeddingVector,
    pub experience: Experience,
}

#[derive(Debug, Clone, Default)]
pub struct RetrievalIndex {
    pub entries: Vec<IndexEntry>,
}

impl RetrievalIndex {
    pub fn from_hek(hek: &Hek) -> Self {
        let mut entries = Vec::with_capacity(hek.total_entries());
        for (li, level_entries) in hek.levels.iter().enumerate() {
            for (e, v) in level_entries.iter().zip(&hek.vectors[li]) {
                entries.push(IndexEntry {
                    id: e.id.clone(),
                    level: li as u32 + 1,
                    vector: v.clone(),
                    experience: e.clone(),
                });
            }
        }
        RetrievalIndex { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn has_level(&self, level: u32) -> bool {
        self.entries.iter().any(|e| e.level == level)
    }
}

/// Cosine argmax over the child vectors at the requested levels (an empty
/// `levels` slice means the whole base), ties broken by ascending id.
pub fn retrieve_best<'a>(
    index: &'a RetrievalIndex,
    query: &EmbeddingVector,
    levels: &[u32],
) -> Result<(&'a Experience, f64)> {
    let mut best: Option<(&IndexEntry, f64)> = None;
    for entry in &index.entries {
        if !levels.is_empty() && !levels.contains(&entry.level) {
            continue;
        }
        let sim = vecmath::cosine(query.as_slice(), entry.vector.as_slice());
        let better = match &best {
            None => true,
            Some((b, bs)) => sim > *bs || (sim == *bs && entry.id < b.id),
        };
        if better {
            best = Some((entry, sim));
        }
    }
    best.map(|(e, s)| (&e.experience, s)).ok_or_else(|| {
        Error::NotFound(format!("no entries at levels {levels:?}"))
    })
}

fn ranked<'a>(
    index: &'a RetrievalIndex,
    query: &EmbeddingVector,
    keep: impl Fn(&IndexEntry) -> bool,
) -> Vec<(&'a Experience, f64)> {
    let mut hits: Vec<(&IndexEntry, f64)> = index
        .entries
        .iter()
        .filter(|e| keep(e))
        .map(|e| (e, vecmath::cosine(query.as_slice(), e.vector.as_slice())))
        .collect();
    hits.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.id.cmp(&b.0.id))
    });
    hits.into_iter().map(|(e, s)| (&e.experience, s)).collect()
}

/// Level-1 entries with cosine >= threshold, best first, truncated to
/// `top_k`. An empty result is valid.
pub fn retrieve_cases<'a>(
    index: &'a RetrievalIndex,
    query: &EmbeddingVector,
    threshold: f64,
    top_k: usize,
) -> Result<Vec<(&'a Experience, f64)>> {
    if top_k == 0 {
        return Err(Error::Contract("top_k must be >= 1".into()));
    }
    let mut hits = ranked(index, query, |e| e.level == 1);
    hits.retain(|(_, s)| *s >= threshold);
    hits.truncate(top_k);
    Ok(hits)
}

/// Top-k entries at one strategy level by cosine, no threshold filter.
/// Errors when the base has no such level.
pub fn retrieve_strategies<'a>(
    index: &'a RetrievalIndex,
    query: &EmbeddingVector,
    level: u32,
    top_k: usize,
) -> Result<Vec<(&'a Experience, f64)>> {
    if level < 2 {
        return Err(Error::Contract("strategy levels start at 2".into()));
    }
    if top_k == 0 {
        return Err(Error::Contract("top_k must be >= 1".into()));
    }
    if !index.has_level(level) {
        return Err(Error::NotFound(format!("base has no level {level}")));
    }
    let mut hits = ranked(index, query, |e| e.level == level);
    hits.truncate(top_k);
    Ok(hits)
}
