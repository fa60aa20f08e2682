//! Benchmarks for the data-parallel stages, labeled by compiled execution
//! mode so the default (rayon) build and the sequential fallback can be
//! compared:
//!
//! ```text
//! cargo bench -p expmine                          # parallel
//! cargo bench -p expmine --no-default-features    # sequential
//! ```

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use expmine::clients::{EmbedClient, MockEmbed};
use expmine::cluster::{agglomerative_cluster, Linkage};
use expmine::eval::run_eval;
use expmine::grpo::{objective_for_groups, GrpoConfig, ObjectiveInputs, TokenSequence};
use expmine::hek::{retrieve_cases, RetrievalIndex};
use expmine::trajectory::{QAExample, Segment, Trajectory};

fn mode() -> &'static str {
    expmine::parallelism_mode()
}

fn bench_embed(c: &mut Criterion) {
    let client = MockEmbed::new("bench", 256, 7);
    let texts: Vec<String> = (0..256)
        .map(|i| format!("question {i} about topic {} and entity {}", i % 13, i % 29))
        .collect();
    c.bench_with_input(
        BenchmarkId::new("embed_256_texts", mode()),
        &texts,
        |b, texts| b.iter(|| client.embed(texts).unwrap()),
    );
}

fn bench_grpo(c: &mut Criterion) {
    let config = GrpoConfig::default();
    let groups: Vec<ObjectiveInputs> = (0..128)
        .map(|g| {
            let sequences: Vec<TokenSequence> = (0..8)
                .map(|s| {
                    let t = 64;
                    TokenSequence {
                        logp_new: (0..t).map(|i| -0.5 - 0.001 * (i + s + g) as f64).collect(),
                        logp_old: (0..t).map(|i| -0.5 - 0.0015 * (i + s) as f64).collect(),
                        logp_ref: (0..t).map(|i| -0.6 - 0.001 * i as f64).collect(),
                        mask: (0..t).map(|i| (i % 3 != 0) as u8).collect(),
                    }
                })
                .collect();
            ObjectiveInputs {
                rewards: (0..8).map(|s| ((s + g) % 2) as f64).collect(),
                sequences,
            }
        })
        .collect();
    c.bench_with_input(
        BenchmarkId::new("grpo_objective_128_groups", mode()),
        &groups,
        |b, groups| b.iter(|| objective_for_groups(groups, &config)),
    );
}

fn bench_eval(c: &mut Criterion) {
    let dataset: Vec<QAExample> = (0..512)
        .map(|i| QAExample {
            id: format!("q{i:04}"),
            question: format!("who wrote entry number {i}"),
            gold_answers: vec![format!("author {} the elder", i % 37)],
            hop_count: None,
        })
        .collect();
    let trajectories: Vec<Trajectory> = dataset
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let answer = if i % 3 == 0 {
                ex.gold_answers[0].clone()
            } else {
                format!("maybe author {}", i % 37)
            };
            Trajectory {
                question_id: ex.id.clone(),
                segments: vec![Segment::answer(answer.clone())],
                outcome_reward: 0.0,
                final_answer: Some(answer),
            }
        })
        .collect();
    c.bench_with_input(
        BenchmarkId::new("eval_512_examples", mode()),
        &(dataset, trajectories),
        |b, (dataset, trajectories)| b.iter(|| run_eval(dataset, trajectories, None).unwrap()),
    );
}

fn bench_cluster(c: &mut Criterion) {
    let embed = MockEmbed::new("bench", 64, 3);
    let titles: Vec<String> = (0..160)
        .map(|i| format!("strategy family {} variant {i}", i % 20))
        .collect();
    let vectors = embed.embed(&titles).unwrap();
    c.bench_with_input(
        BenchmarkId::new("agglomerative_160_points", mode()),
        &vectors,
        |b, vectors| b.iter(|| agglomerative_cluster(vectors, Linkage::Ward, 0.6).unwrap()),
    );
}

fn bench_retrieval(c: &mut Criterion) {
    let embed = MockEmbed::new("bench", 128, 5);
    let entries: Vec<expmine::experience::Experience> = (0..1000)
        .map(|i| expmine::experience::Experience {
            id: format!("e1-{i:04}"),
            kind_label: "qa".into(),
            title: format!("case {} about subject {}", i, i % 97),
            tags: vec![],
            description: "d".into(),
            thinking: "".into(),
            qa_ids: vec![format!("q{i}")],
            level: 1,
            child_ids: vec![],
        })
        .collect();
    let titles: Vec<String> = entries.iter().map(|e| e.title.clone()).collect();
    let vectors = embed.embed(&titles).unwrap();
    let hek = expmine::hek::Hek::new(
        vec![entries],
        vec![vectors],
        "t0".into(),
        embed.fingerprint(),
    )
    .unwrap();
    let index = RetrievalIndex::from_hek(&hek);
    let query = embed.embed_one("case about subject 42").unwrap();
    c.bench_with_input(
        BenchmarkId::new("retrieve_cases_1000_entries", mode()),
        &index,
        |b, index| b.iter(|| retrieve_cases(index, &query, 0.2, 5).unwrap()),
    );
}

criterion_group!(
    benches,
    bench_embed,
    bench_grpo,
    bench_eval,
    bench_cluster,
    bench_retrieval
);
criterion_main!(benches);
