//! Acceptance suite. One test per criterion; each prints a pass/fail line.

mod common;

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use expmine::clients::{Clients, EmbedClient, EmbeddingVector, FixtureDoc, FixtureSearch, MockChat, MockEmbed};
use expmine::cluster::{agglomerative_cluster, build_hierarchy, ClusterConfig, Linkage, SummarizeOptions};
use expmine::eval::{cem, em, f1};
use expmine::experience::Experience;
use expmine::grpo::{
    build_token_mask, group_advantages, grpo_objective, kl_estimate, Aggregate, GrpoConfig,
    TokenSequence,
};
use expmine::hek::{
    retrieve_best, retrieve_cases, retrieve_strategies, save_hek, Hek, RetrievalIndex,
};
use expmine::rollout::{run_episode, RolloutConfig};
use expmine::trajectory::{QAExample, SegmentKind};

/// Run a criterion body and print exactly one pass/fail line for it.
fn criterion(number: u32, description: &str, body: impl FnOnce() + std::panic::UnwindSafe) {
    match std::panic::catch_unwind(body) {
        Ok(()) => println!("[PASS] criterion {number}: {description}"),
        Err(payload) => {
            println!("[FAIL] criterion {number}: {description}");
            std::panic::resume_unwind(payload);
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 1 — clustering oracle equivalence
// ---------------------------------------------------------------------------

fn unit_vec(rng: &mut ChaCha20Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

fn oracle_euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn oracle_linkage(points: &[Vec<f64>], a: &[usize], b: &[usize], linkage: Linkage) -> f64 {
    match linkage {
        Linkage::Ward => {
            let dim = points[0].len();
            let centroid = |c: &[usize]| {
                let mut m = vec![0.0; dim];
                for &i in c {
                    for (mm, x) in m.iter_mut().zip(&points[i]) {
                        *mm += x;
                    }
                }
                m.iter_mut().for_each(|x| *x /= c.len() as f64);
                m
            };
            let (na, nb) = (a.len() as f64, b.len() as f64);
            (2.0 * na * nb / (na + nb)).sqrt() * oracle_euclid(&centroid(a), &centroid(b))
        }
        Linkage::Average => {
            let mut sum = 0.0;
            for &i in a {
                for &j in b {
                    sum += oracle_euclid(&points[i], &points[j]);
                }
            }
            sum / (a.len() * b.len()) as f64
        }
        Linkage::Complete => {
            let mut best = 0.0f64;
            for &i in a {
                for &j in b {
                    best = best.max(oracle_euclid(&points[i], &points[j]));
                }
            }
            best
        }
    }
}

/// Naive agglomeration: recompute every cluster pair distance from its
/// definition at every step. Same stop rule and tie-break as the engine.
fn oracle_agglomerate(points: &[Vec<f64>], linkage: Linkage, tau: f64) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(f64, (usize, usize), (usize, usize))> = None;
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                let d = oracle_linkage(points, &clusters[i], &clusters[j], linkage);
                let key = (
                    clusters[i][0].min(clusters[j][0]),
                    clusters[i][0].max(clusters[j][0]),
                );
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
        if d > tau {
            break;
        }
        let absorbed = clusters.remove(j);
        clusters[i].extend(absorbed);
        clusters[i].sort_unstable();
    }
    clusters.sort_by_key(|c| c[0]);
    clusters
}

#[test]
fn criterion_1_clustering_matches_naive_oracle() {
    criterion(
        1,
        "agglomerative clustering equals the naive O(n^3) oracle on 200 random instances",
        || {
            let mut rng = ChaCha20Rng::seed_from_u64(0xC1);
            let started = Instant::now();
            for case in 0..200 {
                let n = rng.gen_range(2..=64);
                let dim = rng.gen_range(2..=8);
                let mut points: Vec<Vec<f64>> = (0..n).map(|_| unit_vec(&mut rng, dim)).collect();
                // a third of the instances carry exact duplicates: tie cases
                if case % 3 == 0 {
                    for _ in 0..(n / 4).max(1) {
                        let src = rng.gen_range(0..n);
                        let dst = rng.gen_range(0..n);
                        points[dst] = points[src].clone();
                    }
                }
                let linkage = [Linkage::Ward, Linkage::Average, Linkage::Complete][case % 3];
                let tau = rng.gen_range(0.05..2.0);

                let vectors: Vec<EmbeddingVector> = points
                    .iter()
                    .map(|p| EmbeddingVector { values: p.clone() })
                    .collect();
                let got = agglomerative_cluster(&vectors, linkage, tau)
                    .unwrap()
                    .clusters();
                let expected = oracle_agglomerate(&points, linkage, tau);
                assert_eq!(
                    got, expected,
                    "case {case}: linkage {linkage:?}, tau {tau}, n {n}"
                );
            }
            let elapsed = started.elapsed();
            assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
        },
    );
}

// ---------------------------------------------------------------------------
// Criterion 2 — hierarchy construction: structure and bit-reproducibility
// ---------------------------------------------------------------------------

fn dir_bytes(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        out.insert(
            entry.file_name().to_string_lossy().into_owned(),
            std::fs::read(entry.path()).unwrap(),
        );
    }
    out
}

#[test]
fn criterion_2_hierarchy_structure_and_reproducibility() {
    criterion(
        2,
        "hierarchy terminates within max_depth, sizes non-increasing, children partition each level, byte-reproducible",
        || {
            let config = ClusterConfig {
                linkage: Linkage::Ward,
                thresholds: vec![1.0, 1.4],
                max_depth: 3,
                min_cluster_size_to_summarize: 1,
            };
            let embed = MockEmbed::new("m", 256, 7);
            let chat = MockChat::agent(7);
            let build = || {
                build_hierarchy(
                    common::synthetic_corpus_40(),
                    &config,
                    &embed,
                    &chat,
                    "unix:0",
                    &SummarizeOptions::default(),
                )
                .unwrap()
            };
            let first = build();
            let hek = &first.hek;

            // termination within max_depth
            assert!(hek.levels.len() <= config.max_depth as usize);
            assert_eq!(hek.levels[0].len(), 40);

            // level sizes non-increasing
            for w in hek.levels.windows(2) {
                assert!(w[1].len() <= w[0].len(), "sizes {:?}", hek.levels.iter().map(Vec::len).collect::<Vec<_>>());
            }

            // child ids partition the level below: every lower id exactly once
            for l in 1..hek.levels.len() {
                let mut seen: Vec<&str> = hek.levels[l]
                    .iter()
                    .flat_map(|e| e.child_ids.iter().map(String::as_str))
                    .collect();
                seen.sort_unstable();
                let mut expected: Vec<&str> = hek.levels[l - 1]
                    .iter()
                    .map(|e| e.id.as_str())
                    .collect();
                expected.sort_unstable();
                assert_eq!(seen, expected, "level {} coverage", l + 1);
            }

            // the six lexical families collapse to six strategies
            assert_eq!(hek.levels[1].len(), 6);

            // two runs, two directories, byte equality
            let second = build();
            let dir_a = tempfile::tempdir().unwrap();
            let dir_b = tempfile::tempdir().unwrap();
            save_hek(&first.hek, dir_a.path()).unwrap();
            save_hek(&second.hek, dir_b.path()).unwrap();
            assert_eq!(dir_bytes(dir_a.path()), dir_bytes(dir_b.path()));
        },
    );
}

// ---------------------------------------------------------------------------
// Criterion 3 — retrieval exactness against a linear-scan oracle
// ---------------------------------------------------------------------------

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn random_index(rng: &mut ChaCha20Rng, size: usize, dim: usize) -> Hek {
    let levels_of: Vec<u32> = (0..size).map(|_| rng.gen_range(1..=3)).collect();
    let mut levels: Vec<Vec<Experience>> = vec![Vec::new(), Vec::new(), Vec::new()];
    let mut vectors: Vec<Vec<EmbeddingVector>> = vec![Vec::new(), Vec::new(), Vec::new()];
    let mut duplicate_pool: Vec<Vec<f64>> = Vec::new();
    for (i, &level) in levels_of.iter().enumerate() {
        // reuse vectors sometimes to force similarity ties
        let v = if !duplicate_pool.is_empty() && rng.gen_bool(0.2) {
            duplicate_pool[rng.gen_range(0..duplicate_pool.len())].clone()
        } else {
            let v = unit_vec(rng, dim);
            duplicate_pool.push(v.clone());
            v
        };
        let li = (level - 1) as usize;
        levels[li].push(Experience {
            id: format!("e{level}-{i:04}"),
            kind_label: "x".into(),
            title: format!("t{i}"),
            tags: vec![],
            description: "d".into(),
            thinking: "".into(),
            qa_ids: vec![format!("q{i}")],
            level,
            child_ids: if level == 1 { vec![] } else { vec![] },
        });
        vectors[li].push(EmbeddingVector { values: v });
    }
    // strategy entries need child ids; point them at a synthetic child
    if levels[0].is_empty() {
        levels[0].push(Experience {
            id: "e1-root".into(),
            kind_label: "x".into(),
            title: "root".into(),
            tags: vec![],
            description: "d".into(),
            thinking: "".into(),
            qa_ids: vec!["q-root".into()],
            level: 1,
            child_ids: vec![],
        });
        vectors[0].push(EmbeddingVector {
            values: unit_vec(rng, dim),
        });
    }
    let root_id = levels[0][0].id.clone();
    for e in &mut levels[1] {
        e.child_ids = vec![root_id.clone()];
    }
    // level-3 entries need a level-2 parent chain; drop them if level 2 empty
    if levels[1].is_empty() && !levels[2].is_empty() {
        levels[2].clear();
        vectors[2].clear();
    }
    let level2_first = levels[1].first().map(|e| e.id.clone());
    for e in &mut levels[2] {
        e.child_ids = vec![level2_first.clone().unwrap()];
    }
    while levels.last().is_some_and(Vec::is_empty) {
        levels.pop();
        vectors.pop();
    }
    Hek::new(levels, vectors, "t0".into(), "f".into()).unwrap()
}

#[test]
fn criterion_3_retrieval_matches_linear_scan_oracle() {
    criterion(
        3,
        "retrieve_best/cases/strategies equal the brute-force oracle; self-similarity 1.0; scale-invariant argmax",
        || {
            let mut rng = ChaCha20Rng::seed_from_u64(0xC3);
            for case in 0..100 {
                let size = rng.gen_range(1..=1000);
                let dim = rng.gen_range(4..=16);
                let hek = random_index(&mut rng, size, dim);
                let index = RetrievalIndex::from_hek(&hek);
                let query = EmbeddingVector {
                    values: unit_vec(&mut rng, dim),
                };

                // oracle rows: (sim, id, level, experience index in index order)
                let rows: Vec<(f64, &str, u32)> = index
                    .entries
                    .iter()
                    .map(|e| {
                        (
                            oracle_cosine(query.as_slice(), e.vector.as_slice()),
                            e.id.as_str(),
                            e.level,
                        )
                    })
                    .collect();

                // retrieve_best over all levels
                let (best, best_sim) = retrieve_best(&index, &query, &[]).unwrap();
                let oracle_best = rows
                    .iter()
                    .cloned()
                    .max_by(|a, b| {
                        a.0.partial_cmp(&b.0)
                            .unwrap()
                            .then_with(|| b.1.cmp(a.1))
                    })
                    .unwrap();
                assert_eq!(best.id, oracle_best.1, "case {case} argmax id");
                assert!((best_sim - oracle_best.0).abs() < 1e-12);

                // positive scaling never changes the argmax
                for scale in [1e-6, 3.5, 1e6] {
                    let scaled = EmbeddingVector {
                        values: query.values.iter().map(|x| x * scale).collect(),
                    };
                    let (b2, _) = retrieve_best(&index, &scaled, &[]).unwrap();
                    assert_eq!(b2.id, best.id, "case {case} scale {scale}");
                }

                // retrieve_cases vs filter-sort-truncate oracle
                let threshold = rng.gen_range(-0.2..0.9);
                let top_k = rng.gen_range(1..=10);
                let got = retrieve_cases(&index, &query, threshold, top_k).unwrap();
                let mut oracle_cases: Vec<(f64, &str)> = rows
                    .iter()
                    .filter(|r| r.2 == 1 && r.0 >= threshold)
                    .map(|r| (r.0, r.1))
                    .collect();
                oracle_cases.sort_by(|a, b| {
                    b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(b.1))
                });
                oracle_cases.truncate(top_k);
                assert_eq!(
                    got.iter().map(|(e, _)| e.id.as_str()).collect::<Vec<_>>(),
                    oracle_cases.iter().map(|r| r.1).collect::<Vec<_>>(),
                    "case {case} cases"
                );
                for ((_, s), (os, _)) in got.iter().zip(&oracle_cases) {
                    assert!((s - os).abs() < 1e-12);
                }

                // retrieve_strategies vs oracle at one level
                for level in [2u32, 3] {
                    let got = retrieve_strategies(&index, &query, level, top_k);
                    let mut oracle_layer: Vec<(f64, &str)> = rows
                        .iter()
                        .filter(|r| r.2 == level)
                        .map(|r| (r.0, r.1))
                        .collect();
                    if oracle_layer.is_empty() {
                        assert!(got.is_err(), "case {case} level {level} should be absent");
                        continue;
                    }
                    oracle_layer.sort_by(|a, b| {
                        b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(b.1))
                    });
                    oracle_layer.truncate(top_k);
                    let got = got.unwrap();
                    assert_eq!(
                        got.iter().map(|(e, _)| e.id.as_str()).collect::<Vec<_>>(),
                        oracle_layer.iter().map(|r| r.1).collect::<Vec<_>>(),
                        "case {case} strategies level {level}"
                    );
                }

                // self-retrieval: an existing vector as the query
                let probe = rng.gen_range(0..index.len());
                let probe_query = index.entries[probe].vector.clone();
                let (_, sim) = retrieve_best(&index, &probe_query, &[]).unwrap();
                assert!((sim - 1.0).abs() < 1e-12, "case {case} self-similarity {sim}");
            }
        },
    );
}

// ---------------------------------------------------------------------------
// Criterion 4 — objective numerics
// ---------------------------------------------------------------------------

/// Independent scalar oracle: the objective written out term by term with
/// the direct min(ratio*adv, clip(ratio)*adv) form.
fn oracle_objective(
    group: &[TokenSequence],
    rewards: &[f64],
    epsilon: f64,
    beta: f64,
    guard: f64,
    aggregate: Aggregate,
) -> f64 {
    let g = group.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g;
    let std = var.sqrt();
    let advantages: Vec<f64> = if std == 0.0 {
        vec![0.0; rewards.len()]
    } else {
        rewards.iter().map(|r| (r - mean) / (std + guard)).collect()
    };

    let mut total = 0.0;
    let mut kl_total = 0.0;
    for (seq, &a) in group.iter().zip(&advantages) {
        let mut term_sum = 0.0;
        let mut kl_sum = 0.0;
        let mut count = 0usize;
        for t in 0..seq.logp_new.len() {
            if seq.mask[t] == 0 {
                continue;
            }
            let ratio = (seq.logp_new[t] - seq.logp_old[t]).exp();
            let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
            term_sum += (ratio * a).min(clipped * a);
            let d = seq.logp_ref[t] - seq.logp_new[t];
            kl_sum += d.exp() - d - 1.0;
            count += 1;
        }
        if count > 0 {
            total += match aggregate {
                Aggregate::TokenMean => term_sum / count as f64,
                Aggregate::SequenceSum => term_sum,
            };
            kl_total += kl_sum / count as f64;
        }
    }
    total / g - beta * (kl_total / g)
}

fn random_sequence(rng: &mut ChaCha20Rng, t: usize, on_policy: bool) -> TokenSequence {
    let logp_old: Vec<f64> = (0..t).map(|_| rng.gen_range(-5.0..0.0)).collect();
    let logp_new: Vec<f64> = if on_policy {
        logp_old.clone()
    } else {
        (0..t).map(|_| rng.gen_range(-5.0..0.0)).collect()
    };
    let logp_ref: Vec<f64> = (0..t).map(|_| rng.gen_range(-5.0..0.0)).collect();
    let mut mask: Vec<u8> = (0..t).map(|_| rng.gen_bool(0.8) as u8).collect();
    if rng.gen_bool(0.05) {
        mask.iter_mut().for_each(|m| *m = 0); // all-masked sequence
    }
    TokenSequence {
        logp_new,
        logp_old,
        logp_ref,
        mask,
    }
}

#[test]
fn criterion_4_objective_matches_scalar_oracle() {
    criterion(
        4,
        "objective matches the independent scalar oracle (1e-9), on-policy zero, masked invariance, kl sign",
        || {
            let mut rng = ChaCha20Rng::seed_from_u64(0xC4);

            // 1000 random groups against the oracle
            for case in 0..1000 {
                let g = rng.gen_range(2..=16);
                let group: Vec<TokenSequence> = (0..g)
                    .map(|_| {
                        let t = rng.gen_range(1..=64);
                        random_sequence(&mut rng, t, false)
                    })
                    .collect();
                let rewards: Vec<f64> = (0..g)
                    .map(|_| {
                        if rng.gen_bool(0.5) {
                            rng.gen_range(0..=1) as f64
                        } else {
                            rng.gen::<f64>()
                        }
                    })
                    .collect();
                let aggregate = if case % 2 == 0 {
                    Aggregate::TokenMean
                } else {
                    Aggregate::SequenceSum
                };
                let config = GrpoConfig {
                    epsilon: [0.1, 0.2, 0.3][case % 3],
                    beta: [0.0, 1e-3, 0.1][case % 3],
                    group_size: None,
                    advantage_eps: 1e-8,
                    aggregate,
                };
                let (got, _) = grpo_objective(&group, &rewards, &config).unwrap();
                let expected = oracle_objective(
                    &group,
                    &rewards,
                    config.epsilon,
                    config.beta,
                    config.advantage_eps,
                    aggregate,
                );
                assert!(
                    (got - expected).abs() < 1e-9,
                    "case {case}: {got} vs {expected}"
                );
            }

            // on-policy with beta = 0: exactly zero for symmetric two-sample
            // groups, and exactly mean(adv) for arbitrary groups
            let beta0 = GrpoConfig {
                beta: 0.0,
                ..GrpoConfig::default()
            };
            for _ in 0..200 {
                let (t1, t2) = (rng.gen_range(1..=64), rng.gen_range(1..=64));
                let mut group = vec![
                    random_sequence(&mut rng, t1, true),
                    random_sequence(&mut rng, t2, true),
                ];
                // a fully masked sequence contributes 0 by definition and
                // would shift the sum; the zero point needs live tokens
                for seq in &mut group {
                    seq.mask[0] = 1;
                }
                let (obj, _) = grpo_objective(&group, &[1.0, 0.0], &beta0).unwrap();
                assert_eq!(obj, 0.0, "on-policy two-sample objective must be exactly 0");
            }
            for _ in 0..100 {
                let g = rng.gen_range(2..=16);
                let group: Vec<TokenSequence> = (0..g)
                    .map(|_| {
                        let t = rng.gen_range(1..=64);
                        random_sequence(&mut rng, t, true)
                    })
                    .collect();
                let rewards: Vec<f64> = (0..g).map(|_| rng.gen::<f64>()).collect();
                let (obj, _) = grpo_objective(&group, &rewards, &beta0).unwrap();
                let adv = group_advantages(&rewards, beta0.advantage_eps).unwrap();
                let structural: f64 = group
                    .iter()
                    .zip(&adv)
                    .map(|(seq, a)| {
                        if seq.mask.iter().all(|m| *m == 0) {
                            0.0
                        } else {
                            *a
                        }
                    })
                    .sum::<f64>()
                    / g as f64;
                assert_eq!(obj, structural, "on-policy objective == mean of advantages");
            }

            // perturbing masked tokens changes nothing, to the last bit
            for _ in 0..100 {
                let g = rng.gen_range(2..=8);
                let group: Vec<TokenSequence> = (0..g)
                    .map(|_| {
                        let t = rng.gen_range(2..=32);
                        random_sequence(&mut rng, t, false)
                    })
                    .collect();
                let rewards: Vec<f64> = (0..g).map(|_| rng.gen::<f64>()).collect();
                let config = GrpoConfig::default();
                let (before, _) = grpo_objective(&group, &rewards, &config).unwrap();
                let mut perturbed = group.clone();
                for seq in &mut perturbed {
                    for t in 0..seq.mask.len() {
                        if seq.mask[t] == 0 {
                            seq.logp_new[t] += rng.gen_range(-1e6..1e6);
                            seq.logp_old[t] = rng.gen_range(-1e6..1e6);
                            seq.logp_ref[t] = rng.gen_range(-1e6..1e6);
                        }
                    }
                }
                let (after, _) = grpo_objective(&perturbed, &rewards, &config).unwrap();
                assert_eq!(before, after);
            }

            // kl estimator: non-negative on 10^4 random inputs, zero iff
            // logp_ref == logp_new on unmasked tokens
            for _ in 0..10_000 {
                let t = rng.gen_range(1..=16);
                let seq = random_sequence(&mut rng, t, false);
                let kl = kl_estimate(&seq);
                assert!(kl >= 0.0, "kl {kl} < 0");
            }
            for _ in 0..200 {
                let t = rng.gen_range(1..=16);
                let mut seq = random_sequence(&mut rng, t, true);
                seq.logp_ref = seq.logp_new.clone();
                assert_eq!(kl_estimate(&seq), 0.0);
                if let Some(first_unmasked) = seq.mask.iter().position(|m| *m == 1) {
                    seq.logp_ref[first_unmasked] += 0.5;
                    assert!(kl_estimate(&seq) > 0.0);
                }
            }
        },
    );
}

// ---------------------------------------------------------------------------
// Criterion 5 — advantage contract
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_advantage_contract() {
    criterion(
        5,
        "advantages sum to 0 within 1e-9 with population std in [1-1e-3, 1]; zero variance yields zeros",
        || {
            let mut rng = ChaCha20Rng::seed_from_u64(0xC5);
            for _ in 0..500 {
                let g = rng.gen_range(2..=16);
                // ensure real spread so the guard stays negligible
                let mut rewards: Vec<f64> = (0..g).map(|_| rng.gen::<f64>()).collect();
                rewards[0] = 0.0;
                rewards[1] = 1.0;
                let adv = group_advantages(&rewards, 1e-8).unwrap();

                let sum: f64 = adv.iter().sum();
                assert!(sum.abs() < 1e-9, "sum {sum}");

                let mean = sum / g as f64;
                let std = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
                    / g as f64)
                    .sqrt();
                assert!(
                    (1.0 - 1e-3..=1.0 + 1e-12).contains(&std),
                    "population std {std}"
                );
            }
            for g in 2..=8 {
                let rewards = vec![0.73; g];
                assert_eq!(group_advantages(&rewards, 1e-8).unwrap(), vec![0.0; g]);
            }
        },
    );
}

// ---------------------------------------------------------------------------
// Criterion 6 — metric suite
// ---------------------------------------------------------------------------

use common::{fixture_f1, METRIC_FIXTURE};

#[test]
fn criterion_6_metric_fixture_and_implications() {
    criterion(
        6,
        "em/cem/f1 reproduce the 20-row hand-scored fixture; em => cem => f1 > 0 on 10^4 random pairs",
        || {
            assert_eq!(METRIC_FIXTURE.len(), 20);
            for (pred, gold, want_em, want_cem, same, ptok, gtok) in METRIC_FIXTURE {
                assert_eq!(em(pred, gold), *want_em, "em({pred:?}, {gold:?})");
                assert_eq!(cem(pred, gold), *want_cem, "cem({pred:?}, {gold:?})");
                let want_f1 = fixture_f1(*same, *ptok, *gtok);
                assert_eq!(f1(pred, gold), want_f1, "f1({pred:?}, {gold:?})");
            }

            // the named value: f1("paris france", "paris") = 2/3
            assert!((f1("paris france", "paris") - 2.0 / 3.0).abs() < 1e-12);

            // implications over random pairs drawn from a small vocabulary
            let mut rng = ChaCha20Rng::seed_from_u64(0xC6);
            let vocab = [
                "the", "a", "an", "paris", "crew", "Skeleton", "1998", "blue,", "fox!", "",
                "don't", "N.Y.", "--", "peak",
            ];
            let phrase = |rng: &mut ChaCha20Rng| {
                let n = rng.gen_range(0..6);
                (0..n)
                    .map(|_| vocab[rng.gen_range(0..vocab.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            for case in 0..10_000 {
                let pred = phrase(&mut rng);
                // half the time derive the gold from the prediction so em/cem hit often
                let gold = if rng.gen_bool(0.3) {
                    pred.to_uppercase()
                } else if rng.gen_bool(0.3) {
                    format!("the {pred}")
                } else {
                    phrase(&mut rng)
                };
                let (e, c, f) = (em(&pred, &gold), cem(&pred, &gold), f1(&pred, &gold));
                if e == 1.0 {
                    assert_eq!(c, 1.0, "case {case}: em=1 but cem=0 ({pred:?}, {gold:?})");
                }
                if c == 1.0 {
                    assert!(f > 0.0, "case {case}: cem=1 but f1=0 ({pred:?}, {gold:?})");
                }
            }
        },
    );
}

// ---------------------------------------------------------------------------
// Criterion 7 — masking plumbing end-to-end
// ---------------------------------------------------------------------------

/// Whitespace tokenizer: spans of token indices per segment, in order.
fn whitespace_spans(segments: &[expmine::trajectory::Segment]) -> Vec<(usize, Range<usize>)> {
    let mut spans = Vec::new();
    let mut cursor = 0usize;
    for (i, seg) in segments.iter().enumerate() {
        let count = seg.text.split_whitespace().count().max(1);
        spans.push((i, cursor..cursor + count));
        cursor += count;
    }
    spans
}

#[test]
fn criterion_7_mask_zeros_coincide_with_injected_segments() {
    criterion(
        7,
        "a scripted episode's token mask is 0 exactly on injected segments",
        || {
            // an episode that searches once (tool response + injected case
            // experience), then answers
            let embed = MockEmbed::new("m", 64, 1);
            let case_exp = Experience {
                id: "e1-x".into(),
                kind_label: "qa".into(),
                title: "peak lookup strategy".into(),
                tags: vec![],
                description: "anchor the peak name in a source".into(),
                thinking: "".into(),
                qa_ids: vec!["q0".into()],
                level: 1,
                child_ids: vec![],
            };
            let strat = Experience {
                id: "e2-0000".into(),
                kind_label: "s".into(),
                title: "strategy".into(),
                tags: vec![],
                description: "plan".into(),
                thinking: "".into(),
                qa_ids: vec!["q0".into()],
                level: 2,
                child_ids: vec!["e1-x".into()],
            };
            let title_vec = |t: &str| {
                let mut v = embed.embed_one(t).unwrap();
                expmine::vecmath::normalize(&mut v.values);
                v
            };
            let hek = Hek::new(
                vec![vec![case_exp.clone()], vec![strat.clone()]],
                vec![
                    vec![title_vec(&case_exp.title)],
                    vec![title_vec(&strat.title)],
                ],
                "t0".into(),
                embed.fingerprint(),
            )
            .unwrap();
            let index = RetrievalIndex::from_hek(&hek);

            let chat = MockChat::scripted(vec![
                "<think>search for the peak</think>\n<tool_call>\n{\"name\":\"search\",\"arguments\":{\"query\":\"peak lookup strategy\"}}\n</tool_call>".into(),
                "\\boxed{Mount Vela}".into(),
            ]);
            let clients = Clients {
                chat: Arc::new(chat),
                embed: Arc::new(embed),
                search: Arc::new(FixtureSearch::new(vec![FixtureDoc {
                    doc_id: "d1".into(),
                    text: "the peak is tall, answer: Mount Vela.".into(),
                }])),
            };
            let example = QAExample {
                id: "q0".into(),
                question: "which peak".into(),
                gold_answers: vec!["Mount Vela".into()],
                hop_count: None,
            };
            let episode = run_episode(
                &example,
                Some(&index),
                &clients,
                &RolloutConfig::default(),
                &expmine::grpo::RewardSpec::default(),
                5,
            )
            .unwrap();

            let segments = &episode.trajectory.segments;
            let kinds: Vec<SegmentKind> = segments.iter().map(|s| s.kind).collect();
            assert_eq!(
                kinds,
                vec![
                    SegmentKind::Think,
                    SegmentKind::ToolCall,
                    SegmentKind::ToolResponse,
                    SegmentKind::Answer
                ]
            );
            // the tool response carries the injected experience
            assert!(segments[2].text.contains("Relevant experience:"));
            assert!(!episode.case_injections.is_empty());

            let spans = whitespace_spans(segments);
            let mask = build_token_mask(&episode.trajectory, &spans).unwrap();

            // oracle: look up each token's segment through the spans and
            // compare with the injected flag
            for (seg_idx, range) in &spans {
                for t in range.clone() {
                    let expected = if segments[*seg_idx].injected { 0u8 } else { 1u8 };
                    assert_eq!(mask[t], expected, "token {t} of segment {seg_idx}");
                }
            }
            // zero positions coincide exactly with the injected segment's span
            let zeros: Vec<usize> = mask
                .iter()
                .enumerate()
                .filter(|(_, m)| **m == 0)
                .map(|(i, _)| i)
                .collect();
            let injected_span = &spans[2];
            assert_eq!(zeros, injected_span.1.clone().collect::<Vec<_>>());
        },
    );
}

// ---------------------------------------------------------------------------
// Criterion 9 — injection policy conformance
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_injection_policy() {
    criterion(
        9,
        "system prompt carries exactly strategy_top_k strategies; every case injection has similarity >= 0.8",
        || {
            let embed = MockEmbed::new("m", 256, 3);
            let title_vec = |t: &str| {
                let mut v = embed.embed_one(t).unwrap();
                expmine::vecmath::normalize(&mut v.values);
                v
            };

            // 3 cases (one title equals the query the agent will issue) and
            // 7 strategies
            let mk = |id: &str, level: u32, title: &str, child: Vec<String>| Experience {
                id: id.into(),
                kind_label: "x".into(),
                title: title.into(),
                tags: vec![],
                description: format!("description for {id}"),
                thinking: "".into(),
                qa_ids: vec!["q0".into()],
                level,
                child_ids: child,
            };
            let cases = vec![
                mk("e1-a", 1, "tallest peak in the western hills near the mill town", vec![]),
                mk("e1-b", 1, "completely unrelated pastry recipe notes", vec![]),
                mk("e1-c", 1, "longest river charting expedition records", vec![]),
            ];
            let strategies: Vec<Experience> = (0..7)
                .map(|i| {
                    mk(
                        &format!("e2-{i:04}"),
                        2,
                        &format!("strategy family {i}"),
                        vec!["e1-a".into()],
                    )
                })
                .collect();
            let hek = Hek::new(
                vec![cases.clone(), strategies.clone()],
                vec![
                    cases.iter().map(|e| title_vec(&e.title)).collect(),
                    strategies.iter().map(|e| title_vec(&e.title)).collect(),
                ],
                "t0".into(),
                embed.fingerprint(),
            )
            .unwrap();
            let index = RetrievalIndex::from_hek(&hek);

            let chat = MockChat::scripted(vec![
                "<think>go</think>\n<tool_call>\n{\"name\":\"search\",\"arguments\":{\"query\":\"tallest peak in the western hills near the mill town\"}}\n</tool_call>".into(),
                "\\boxed{done}".into(),
            ]);
            let clients = Clients {
                chat: Arc::new(chat),
                embed: Arc::new(embed),
                search: Arc::new(FixtureSearch::new(vec![FixtureDoc {
                    doc_id: "d".into(),
                    text: "peak data, answer: done.".into(),
                }])),
            };
            let config = RolloutConfig::default();
            assert_eq!(config.strategy_top_k, 5);
            assert_eq!(config.case_threshold, 0.8);

            let episode = run_episode(
                &expmine::trajectory::QAExample {
                    id: "q0".into(),
                    question: "which tallest peak rises near the mill town".into(),
                    gold_answers: vec!["done".into()],
                    hop_count: None,
                },
                Some(&index),
                &clients,
                &config,
                &expmine::grpo::RewardSpec::default(),
                11,
            )
            .unwrap();

            // exactly strategy_top_k numbered strategy entries in the prompt
            let numbered = episode
                .system_prompt
                .lines()
                .filter(|l| {
                    l.split_once(". ").is_some_and(|(n, _)| {
                        !n.is_empty() && n.chars().all(|c| c.is_ascii_digit())
                    })
                })
                .count();
            assert_eq!(numbered, config.strategy_top_k);

            // injections happened, and every logged similarity clears 0.8
            assert!(!episode.case_injections.is_empty());
            for (id, sim) in &episode.case_injections {
                assert!(
                    *sim >= config.case_threshold,
                    "injection {id} at similarity {sim}"
                );
            }
            // the exact-title case is among them at similarity ~1
            assert!(episode
                .case_injections
                .iter()
                .any(|(id, sim)| id == "e1-a" && (*sim - 1.0).abs() < 1e-9));
        },
    );
}
