//! Agglomerative clustering of experience embeddings and iterative LLM
//! summarization into higher-level strategy experiences.
//!
//! Embeddings are L2-normalized by the caller and clustered under Euclidean
//! distance; on the unit sphere squared Euclidean distance is monotone in
//! cosine distance, so Ward linkage stays valid while the semantic intent is
//! preserved. Merge order is fully deterministic: equal-distance pairs break
//! ties toward the lexicographically smallest (min member index, max member
//! index) pair, so repeated runs produce identical hierarchies.

use serde::{Deserialize, Serialize};

use crate::clients::{ChatClient, ChatRequest, EmbedClient, EmbeddingVector, Role};
use crate::error::{Error, Result};
use crate::experience::{Experience, MAX_TAGS};
use crate::hek::Hek;
use crate::jsonscan;
use crate::par;
use crate::templates;
use crate::vecmath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Ward,
    Average,
    Complete,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterConfig {
    #[serde(default = "default_linkage")]
    pub linkage: Linkage,
    /// Distance thresholds for levels 2..=max_depth, loosening upward.
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default = "default_max_depth")]
    pub max_depth: u32,
    /// Clusters smaller than this are promoted member-by-member instead of
    /// being summarized.
    #[serde(default = "default_min_summarize")]
    pub min_cluster_size_to_summarize: usize,
}

fn default_linkage() -> Linkage {
    Linkage::Ward
}
fn default_thresholds() -> Vec<f64> {
    vec![0.35, 0.55]
}
fn default_max_depth() -> u32 {
    3
}
fn default_min_summarize() -> usize {
    1
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            linkage: default_linkage(),
            thresholds: default_thresholds(),
            max_depth: default_max_depth(),
            min_cluster_size_to_summarize: default_min_summarize(),
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 2 {
            return Err(Error::Config("cluster.max_depth must be >= 2".into()));
        }
        if self.thresholds.len() != (self.max_depth - 1) as usize {
            return Err(Error::Config(format!(
                "cluster.thresholds must have max_depth - 1 = {} entries, got {}",
                self.max_depth - 1,
                self.thresholds.len()
            )));
        }
        if self.thresholds.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::Config("cluster.thresholds must be positive".into()));
        }
        if self.min_cluster_size_to_summarize < 1 {
            return Err(Error::Config(
                "cluster.min_cluster_size_to_summarize must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    /// One label per input vector, in [0, num_clusters). Label order follows
    /// the position of each cluster's first member.
    pub labels: Vec<usize>,
    pub num_clusters: usize,
}

impl ClusterAssignment {
    /// Member indices per label.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// Bottom-up merging under the chosen linkage: at each step the pair of
/// clusters at minimal linkage distance merges, until the minimal distance
/// exceeds `distance_threshold`. Cluster distances are maintained with the
/// Lance–Williams recurrences.
pub fn agglomerative_cluster(
    vectors: &[EmbeddingVector],
    linkage: Linkage,
    distance_threshold: f64,
) -> Result<ClusterAssignment> {
    let n = vectors.len();
    if n == 0 {
        return Err(Error::Contract("clustering needs at least one vector".into()));
    }
    let dim = vectors[0].dim();
    if vectors.iter().any(|v| v.dim() != dim) {
        return Err(Error::Contract("embedding dimensions differ".into()));
    }
    if n == 1 {
        return Ok(ClusterAssignment {
            labels: vec![0],
            num_clusters: 1,
        });
    }

    // Dense symmetric distance matrix over cluster slots; slot i starts as
    // point i and absorbs merges, keeping rep = smallest original index.
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = vecmath::euclidean(vectors[i].as_slice(), vectors[j].as_slice());
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut rep: Vec<usize> = (0..n).collect();
    let mut parent: Vec<usize> = (0..n).collect();

    loop {
        let mut best: Option<(f64, (usize, usize), (usize, usize))> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if !active[j] {
                    continue;
                }
                let d = dist[i][j];
                let key = (rep[i].min(rep[j]), rep[i].max(rep[j]));
                let better = match &best {
                    None => true,
                    Some((bd, bkey, _)) => d < *bd || (d == *bd && key < *bkey),
                };
                if better {
                    best = Some((d, key, (i, j)));
                }
            }
        }
        let Some((d, _, (i, j))) = best else { break };
        if d > distance_threshold {
            break;
        }

        // Merge j into i and refresh distances via Lance–Williams.
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let (dik, djk) = (dist[i][k], dist[j][k]);
            let updated = match linkage {
                Linkage::Ward => {
                    let sk = size[k] as f64;
                    let num = (si + sk) * dik * dik + (sj + sk) * djk * djk - sk * d * d;
                    (num / (si + sj + sk)).max(0.0).sqrt()
                }
                Linkage::Average => (si * dik + sj * djk) / (si + sj),
                Linkage::Complete => dik.max(djk),
            };
            dist[i][k] = updated;
            dist[k][i] = updated;
        }
        active[j] = false;
        parent[j] = i;
        size[i] += size[j];
        rep[i] = rep[i].min(rep[j]);
    }

    // Resolve each point to its surviving slot, then order clusters by first
    // member.
    let mut root = vec![0usize; n];
    for p in 0..n {
        let mut r = p;
        while parent[r] != r {
            r = parent[r];
        }
        root[p] = r;
    }
    let mut label_of_slot = vec![usize::MAX; n];
    let mut next = 0usize;
    let mut labels = vec![0usize; n];
    for (p, r) in root.iter().enumerate() {
        if label_of_slot[*r] == usize::MAX {
            label_of_slot[*r] = next;
            next += 1;
        }
        labels[p] = label_of_slot[*r];
    }
    Ok(ClusterAssignment {
        labels,
        num_clusters: next,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummarizeOptions {
    #[serde(default = "default_repairs")]
    pub repair_attempts: u32,
    #[serde(default = "default_summary_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
}

fn default_repairs() -> u32 {
    2
}
fn default_summary_tokens() -> u32 {
    1024
}

impl Default for SummarizeOptions {
    fn default() -> Self {
        SummarizeOptions {
            repair_attempts: default_repairs(),
            max_tokens: default_summary_tokens(),
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct ClusterReplyEntry {
    #[serde(default)]
    ids: Vec<String>,
    #[serde(rename = "type", default)]
    kind_label: String,
    title: String,
    #[serde(default)]
    tags: Vec<String>,
    description: String,
    #[serde(default)]
    thinking: String,
}

fn members_payload(members: &[&Experience]) -> String {
    let rendered: Vec<serde_json::Value> = members
        .iter()
        .map(|m| {
            serde_json::json!({
                "type": m.kind_label,
                "title": m.title,
                "tags": m.tags,
                "description": m.description,
                "thinking": m.thinking,
                "qa_groups": m.qa_ids.iter().map(|id| serde_json::json!({"id": id})).collect::<Vec<_>>(),
            })
        })
        .collect();
    serde_json::to_string_pretty(&rendered).expect("members serialize")
}

fn union_qa_ids(members: &[&Experience]) -> Vec<String> {
    let mut ids: Vec<String> = members
        .iter()
        .flat_map(|m| m.qa_ids.iter().cloned())
        .collect();
    ids.sort();
    ids.dedup();
    ids
}

/// Summarize one cluster of level-(l-1) experiences into a level-l strategy
/// experience. The reply is a list of objects; the one covering these
/// members (maximal qa-id overlap) is taken. The result's qa_ids are the
/// deduplicated union of member qa_ids and its child_ids are the member ids.
pub fn summarize_cluster(
    members: &[&Experience],
    level: u32,
    id: &str,
    chat: &dyn ChatClient,
    opts: &SummarizeOptions,
) -> Result<Experience> {
    if members.is_empty() {
        return Err(Error::Contract("summarize_cluster on empty cluster".into()));
    }
    if level < 2 {
        return Err(Error::Contract("strategy levels start at 2".into()));
    }
    if members.iter().any(|m| m.level != level - 1) {
        return Err(Error::Contract(format!(
            "summarize_cluster at level {level} requires members at level {}",
            level - 1
        )));
    }

    let prompt = templates::render(
        templates::CLUSTER_PROMPT,
        &[("experiences", &members_payload(members))],
    );
    let mut request = ChatRequest::new("You organize agent experiences.", prompt);
    request.temperature = opts.temperature;
    request.max_tokens = opts.max_tokens;

    let qa_ids = union_qa_ids(members);
    let mut last_err: Option<Error> = None;
    for attempt in 0..=opts.repair_attempts {
        let reply_text = chat.complete(&request)?;
        match parse_cluster_reply(&reply_text) {
            Ok(entries) => {
                let chosen = entries
                    .iter()
                    .max_by_key(|e| e.ids.iter().filter(|i| qa_ids.contains(i)).count())
                    .expect("non-empty entries");
                return Ok(Experience {
                    id: id.to_string(),
                    kind_label: chosen.kind_label.clone(),
                    title: chosen.title.clone(),
                    tags: chosen.tags.iter().take(MAX_TAGS).cloned().collect(),
                    description: chosen.description.clone(),
                    thinking: chosen.thinking.clone(),
                    qa_ids,
                    level,
                    child_ids: members.iter().map(|m| m.id.clone()).collect(),
                });
            }
            Err(e) => {
                last_err = Some(e);
                if attempt < opts.repair_attempts {
                    request.push(Role::Assistant, reply_text);
                    request.push(Role::User, "Return only the list in the specified format.");
                }
            }
        }
    }
    Err(Error::Summarize(
        last_err
            .map(|e| e.to_string())
            .unwrap_or_else(|| "no attempt made".into()),
    ))
}

fn parse_cluster_reply(text: &str) -> Result<Vec<ClusterReplyEntry>> {
    let entries: Vec<ClusterReplyEntry> = jsonscan::extract_array(text)
        .ok_or_else(|| Error::ReplyParse("no summary list found in reply".into()))?;
    if entries.is_empty() {
        return Err(Error::ReplyParse("summary list is empty".into()));
    }
    for e in &entries {
        if e.title.trim().is_empty() || e.description.trim().is_empty() {
            return Err(Error::ReplyParse(
                "summary entry missing title or description".into(),
            ));
        }
    }
    Ok(entries)
}

/// A member promoted unchanged to the next level (identity summary), used
/// for clusters below the summarization size and for failed summarizations
/// so the partition property always holds.
fn promote_member(member: &Experience, level: u32, id: &str) -> Experience {
    Experience {
        id: id.to_string(),
        kind_label: member.kind_label.clone(),
        title: member.title.clone(),
        tags: member.tags.clone(),
        description: member.description.clone(),
        thinking: member.thinking.clone(),
        qa_ids: member.qa_ids.clone(),
        level,
        child_ids: vec![member.id.clone()],
    }
}

#[derive(Debug)]
pub struct HierarchyBuild {
    pub hek: Hek,
    /// Clusters whose summarization failed and fell back to identity
    /// promotion: (level, cluster index, reason).
    pub summarize_failures: Vec<(u32, usize, String)>,
}

fn embed_titles(
    entries: &[Experience],
    embed: &dyn EmbedClient,
) -> Result<Vec<EmbeddingVector>> {
    let titles: Vec<String> = entries.iter().map(|e| e.title.clone()).collect();
    let mut vectors = embed.embed(&titles)?;
    if vectors.len() != entries.len() {
        return Err(Error::Contract("embedding count mismatch".into()));
    }
    for v in &mut vectors {
        vecmath::normalize(&mut v.values);
    }
    Ok(vectors)
}

/// Iterative hierarchical abstraction: for each level l in 2..=max_depth,
/// embed the previous level's titles, cluster at threshold tau_l, summarize
/// every cluster, and stop early once a level has at most one entry.
pub fn build_hierarchy(
    e1: Vec<Experience>,
    config: &ClusterConfig,
    embed: &dyn EmbedClient,
    chat: &dyn ChatClient,
    built_at: &str,
    opts: &SummarizeOptions,
) -> Result<HierarchyBuild> {
    config.validate()?;
    if e1.is_empty() {
        return Err(Error::Contract("build_hierarchy needs a non-empty level 1".into()));
    }
    for e in &e1 {
        e.validate()?;
        if e.level != 1 {
            return Err(Error::Contract(format!(
                "entry {} has level {}, expected 1",
                e.id, e.level
            )));
        }
    }

    let mut levels: Vec<Vec<Experience>> = Vec::new();
    let mut vectors: Vec<Vec<EmbeddingVector>> = Vec::new();
    vectors.push(embed_titles(&e1, embed)?);
    levels.push(e1);
    let mut failures = Vec::new();

    for level in 2..=config.max_depth {
        let tau = config.thresholds[(level - 2) as usize];
        let prev = levels.last().unwrap();
        let prev_vectors = vectors.last().unwrap();
        let assignment = agglomerative_cluster(prev_vectors, config.linkage, tau)?;
        let clusters = assignment.clusters();

        enum Outcome {
            Summary(Box<Experience>),
            Promoted(Vec<Experience>, Option<String>),
        }
        let outcomes = par::map_indices(clusters.len(), |ci| {
            let members: Vec<&Experience> = clusters[ci].iter().map(|&m| &prev[m]).collect();
            if members.len() < config.min_cluster_size_to_summarize {
                let promoted = members
                    .iter()
                    .map(|m| promote_member(m, level, ""))
                    .collect();
                return Outcome::Promoted(promoted, None);
            }
            match summarize_cluster(&members, level, "", chat, opts) {
                Ok(e) => Outcome::Summary(Box::new(e)),
                Err(err) => {
                    let promoted = members
                        .iter()
                        .map(|m| promote_member(m, level, ""))
                        .collect();
                    Outcome::Promoted(promoted, Some(err.to_string()))
                }
            }
        });

        let mut entries: Vec<Experience> = Vec::new();
        for (ci, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Outcome::Summary(e) => entries.push(*e),
                Outcome::Promoted(promoted, err) => {
                    if let Some(reason) = err {
                        log::warn!("level {level} cluster {ci}: summarization failed: {reason}");
                        failures.push((level, ci, reason));
                    }
                    entries.extend(promoted);
                }
            }
        }
        for (seq, e) in entries.iter_mut().enumerate() {
            e.id = format!("e{level}-{seq:04}");
        }

        vectors.push(embed_titles(&entries, embed)?);
        let stop = entries.len() <= 1;
        levels.push(entries);
        if stop {
            break;
        }
    }

    let hek = Hek::new(levels, vectors, built_at.to_string(), embed.fingerprint())?;
    Ok(HierarchyBuild {
        hek,
        summarize_failures: failures,
    })
}
