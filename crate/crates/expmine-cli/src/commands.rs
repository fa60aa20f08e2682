//! The six pipeline commands. Each returns the process exit code:
//! 0 success, 1 partial (per-item errors recorded), 2 config/usage error
//! (mapped in main).

use std::io::Write;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use expmine::clients::{build_clients, embed_fingerprint, Clients};
use expmine::cluster::build_hierarchy;
use expmine::distill::distill_corpus;
use expmine::error::{Error, Result};
use expmine::eval::run_eval;
use expmine::experience::{parse_experience_file, serialize_experience_file};
use expmine::grpo::{objective_for_groups, ObjectiveInputs};
use expmine::hek::{load_hek, retrieve_best, retrieve_cases, save_hek, RetrievalIndex};
use expmine::rollout::run_batch;
use expmine::trajectory::{parse_dataset_file, parse_trajectory_file, serialize_trajectory_file};

use crate::config::{require, require_exists, PipelineConfig};

fn is_mock(cfg: &PipelineConfig) -> bool {
    cfg.chat.mode == "mock" && cfg.embed.mode == "mock"
}

/// Wall-clock build stamp, pinned to the epoch in mock mode so repeated runs
/// are byte-identical.
fn built_at(cfg: &PipelineConfig) -> String {
    if is_mock(cfg) {
        "unix:0".to_string()
    } else {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        format!("unix:{secs}")
    }
}

fn clients(cfg: &PipelineConfig) -> Result<Clients> {
    build_clients(&cfg.chat, &cfg.embed, &cfg.search, &cfg.client)
}

pub fn cmd_distill(cfg: &PipelineConfig, dry_run: bool) -> Result<u8> {
    let input = require_exists(&cfg.paths.trajectories, "trajectories")?;
    let output = require(&cfg.paths.experiences, "experiences")?;
    if dry_run {
        println!("dry-run: would distill {} -> {}", input.display(), output.display());
        return Ok(0);
    }
    let clients = clients(cfg)?;
    let groups = parse_trajectory_file(&input)?;
    let report = distill_corpus(&groups, clients.chat.as_ref(), &cfg.distill)?;
    serialize_experience_file(&report.experiences, &output)?;
    println!(
        "distilled {} experience(s) from {} group(s); skipped {} (one-sided), {} error(s)",
        report.experiences.len(),
        groups.len(),
        report.skipped,
        report.errors.len()
    );
    for (qid, reason) in &report.errors {
        eprintln!("  {qid}: {reason}");
    }
    Ok(if report.errors.is_empty() { 0 } else { 1 })
}

pub fn cmd_build_hek(cfg: &PipelineConfig, dry_run: bool) -> Result<u8> {
    let input = require_exists(&cfg.paths.experiences, "experiences")?;
    let out_dir = require(&cfg.paths.hek_dir, "hek_dir")?;
    if dry_run {
        println!(
            "dry-run: would build a base from {} into {}",
            input.display(),
            out_dir.display()
        );
        return Ok(0);
    }
    let clients = clients(cfg)?;
    let e1 = parse_experience_file(&input)?;
    let build = build_hierarchy(
        e1,
        &cfg.cluster,
        clients.embed.as_ref(),
        clients.chat.as_ref(),
        &built_at(cfg),
        &cfg.summarize,
    )?;
    save_hek(&build.hek, &out_dir)?;
    let sizes: Vec<String> = build
        .hek
        .levels
        .iter()
        .enumerate()
        .map(|(i, l)| format!("E{}={}", i + 1, l.len()))
        .collect();
    println!(
        "built {} level(s) into {} ({})",
        build.hek.levels.len(),
        out_dir.display(),
        sizes.join(", ")
    );
    for (level, cluster, reason) in &build.summarize_failures {
        eprintln!("  level {level} cluster {cluster}: {reason} (members promoted)");
    }
    Ok(if build.summarize_failures.is_empty() { 0 } else { 1 })
}

fn load_index(cfg: &PipelineConfig, hek_dir: &PathBuf) -> Result<RetrievalIndex> {
    let expected = embed_fingerprint(&cfg.embed);
    let (hek, warnings) = load_hek(hek_dir, Some(&expected))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(RetrievalIndex::from_hek(&hek))
}

pub fn cmd_rollout(cfg: &PipelineConfig, no_hek: bool, dry_run: bool) -> Result<u8> {
    let dataset_path = require_exists(&cfg.paths.dataset, "dataset")?;
    let output = require(&cfg.paths.trajectories, "trajectories")?;
    let hek_dir = if no_hek {
        None
    } else {
        Some(require_exists(&cfg.paths.hek_dir, "hek_dir")?)
    };
    if dry_run {
        println!(
            "dry-run: would roll out {}x{} from {} -> {} (experience base: {})",
            cfg.rollout.k,
            dataset_path.display(),
            dataset_path.display(),
            output.display(),
            hek_dir
                .as_ref()
                .map(|d| d.display().to_string())
                .unwrap_or_else(|| "none".into()),
        );
        return Ok(0);
    }
    let clients = clients(cfg)?;
    let examples = parse_dataset_file(&dataset_path)?;
    let index = match &hek_dir {
        Some(dir) => Some(load_index(cfg, dir)?),
        None => None,
    };
    let outcome = run_batch(
        &examples,
        cfg.rollout.k,
        index.as_ref(),
        &clients,
        &cfg.rollout.config,
        &cfg.reward,
        cfg.seed,
    )?;
    serialize_trajectory_file(&outcome.groups, &output)?;
    let total: usize = outcome.groups.iter().map(|g| g.trajectories.len()).sum();
    let mean_reward = if total == 0 {
        0.0
    } else {
        outcome
            .groups
            .iter()
            .flat_map(|g| g.trajectories.iter().map(|t| t.outcome_reward))
            .sum::<f64>()
            / total as f64
    };
    println!(
        "wrote {} group(s) / {} trajectorie(s) to {} (mean reward {:.3}, {} case injection(s))",
        outcome.groups.len(),
        total,
        output.display(),
        mean_reward,
        outcome.case_injections.len()
    );
    for e in &outcome.episode_errors {
        eprintln!("  {e}");
    }
    Ok(if outcome.episode_errors.is_empty() { 0 } else { 1 })
}

pub fn cmd_eval(cfg: &PipelineConfig, judge: bool, dry_run: bool) -> Result<u8> {
    let dataset_path = require_exists(&cfg.paths.dataset, "dataset")?;
    let traj_path = require_exists(&cfg.paths.trajectories, "trajectories")?;
    let report_path = require(&cfg.paths.report, "report")?;
    if dry_run {
        println!(
            "dry-run: would score {} against {} -> {}",
            traj_path.display(),
            dataset_path.display(),
            report_path.display()
        );
        return Ok(0);
    }
    let examples = parse_dataset_file(&dataset_path)?;
    let groups = parse_trajectory_file(&traj_path)?;
    let trajectories: Vec<_> = groups.into_iter().flat_map(|g| g.trajectories).collect();
    let judge_client = if judge { Some(clients(cfg)?.chat) } else { None };
    let report = run_eval(
        &examples,
        &trajectories,
        judge_client.as_ref().map(|c| c.as_ref()),
    )?;
    let mut body = serde_json::to_string_pretty(&report)?;
    body.push('\n');
    std::fs::write(&report_path, body)
        .map_err(|e| Error::io(report_path.display().to_string(), e))?;
    print!("{}", report.to_table());
    println!("report written to {}", report_path.display());
    Ok(if report.judge_errors.is_empty() { 0 } else { 1 })
}

#[derive(Serialize)]
struct CheckRecord {
    objective: f64,
    #[serde(flatten)]
    diagnostics: expmine::grpo::Diagnostics,
}

pub fn cmd_grpo_check(cfg: &PipelineConfig, dry_run: bool) -> Result<u8> {
    let input = require_exists(&cfg.paths.grpo_input, "grpo_input")?;
    if dry_run {
        println!("dry-run: would check groups from {}", input.display());
        return Ok(0);
    }
    let data = std::fs::read_to_string(&input)
        .map_err(|e| Error::io(input.display().to_string(), e))?;
    let mut groups = Vec::new();
    for (idx, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let g: ObjectiveInputs = serde_json::from_str(line)
            .map_err(|e| Error::parse(idx + 1, format!("malformed group: {e}")))?;
        groups.push(g);
    }
    let results = objective_for_groups(&groups, &cfg.grpo);

    let mut out: Box<dyn Write> = match &cfg.paths.grpo_output {
        Some(path) => Box::new(
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
        ),
        None => Box::new(std::io::stdout()),
    };
    let mut failures = 0usize;
    for (idx, result) in results.iter().enumerate() {
        match result {
            Ok((objective, diagnostics)) => {
                let record = CheckRecord {
                    objective: *objective,
                    diagnostics: *diagnostics,
                };
                writeln!(out, "{}", serde_json::to_string(&record)?)
                    .map_err(|e| Error::io("grpo output", e))?;
            }
            Err(e) => {
                failures += 1;
                writeln!(out, "{}", serde_json::json!({"error": format!("group {}: {e}", idx + 1)}))
                    .map_err(|e| Error::io("grpo output", e))?;
            }
        }
    }
    if let Some(path) = &cfg.paths.grpo_output {
        println!("wrote {} record(s) to {}", results.len(), path.display());
    }
    Ok(if failures == 0 { 0 } else { 1 })
}

pub fn cmd_retrieve(
    cfg: &PipelineConfig,
    query: &str,
    levels: &[u32],
    top_k: usize,
    dry_run: bool,
) -> Result<u8> {
    let hek_dir = require_exists(&cfg.paths.hek_dir, "hek_dir")?;
    if dry_run {
        println!("dry-run: would query {} for {query:?}", hek_dir.display());
        return Ok(0);
    }
    let clients = clients(cfg)?;
    let index = load_index(cfg, &hek_dir)?;
    let query_vec = clients.embed.embed_one(query)?;

    let (best, sim) = retrieve_best(&index, &query_vec, levels)?;
    println!("argmax over the base (levels {}):", format_levels(levels));
    println!("  [L{}] {} (sim {:.6})", best.level, best.id, sim);
    println!("  {}: {}", best.title, best.description);

    let cases = retrieve_cases(
        &index,
        &query_vec,
        cfg.rollout.config.case_threshold,
        top_k,
    )?;
    println!(
        "case experiences with sim >= {:.2} (top {top_k}):",
        cfg.rollout.config.case_threshold
    );
    if cases.is_empty() {
        println!("  none");
    }
    for (i, (e, s)) in cases.iter().enumerate() {
        println!("  {}. {} (sim {s:.6}) {}", i + 1, e.id, e.title);
    }
    Ok(0)
}

fn format_levels(levels: &[u32]) -> String {
    if levels.is_empty() {
        "all".to_string()
    } else {
        levels
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }
}
