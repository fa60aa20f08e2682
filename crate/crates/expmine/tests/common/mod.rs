//! Fixtures shared by the integration suites.
#![allow(dead_code)]

use expmine::experience::Experience;

/// Hand-scored metric fixture: (prediction, gold, em, cem, num_same,
/// pred_tokens, gold_tokens) — token counts taken on the normalized strings,
/// counted by hand.
pub const METRIC_FIXTURE: &[(&str, &str, f64, f64, usize, usize, usize)] = &[
    ("Skeleton Crew", "Skeleton Crew", 1.0, 1.0, 2, 2, 2),
    ("The Skeleton Crew!", "skeleton crew", 1.0, 1.0, 2, 2, 2),
    ("The answer is Skeleton Crew", "Skeleton Crew", 0.0, 1.0, 2, 4, 2),
    ("paris france", "paris", 0.0, 1.0, 1, 2, 1),
    ("paris", "paris france", 0.0, 0.0, 1, 1, 2),
    ("Mount Greylock", "Mount Greylock", 1.0, 1.0, 2, 2, 2),
    ("mount greylock peak", "Mount Greylock", 0.0, 1.0, 2, 3, 2),
    ("an apple", "apple", 1.0, 1.0, 1, 1, 1),
    ("banana", "apple", 0.0, 0.0, 0, 1, 1),
    ("", "apple", 0.0, 0.0, 0, 0, 1),
    ("apple", "", 0.0, 0.0, 0, 1, 0),
    ("", "", 1.0, 1.0, 0, 0, 0),
    ("the the the", "a an the", 1.0, 1.0, 0, 0, 0),
    ("blue red blue", "blue blue", 0.0, 0.0, 2, 3, 2),
    ("blue blue", "blue red blue", 0.0, 0.0, 2, 2, 3),
    ("don't stop", "dont stop", 1.0, 1.0, 2, 2, 2),
    ("New York City", "york", 0.0, 1.0, 1, 3, 1),
    ("1998", "1998!", 1.0, 1.0, 1, 1, 1),
    ("war and peace", "War, and Peace", 1.0, 1.0, 3, 3, 3),
    ("quick brown fox", "lazy dog", 0.0, 0.0, 0, 3, 2),
];

/// Word-F1 from the hand counts, written out independently of the library.
pub fn fixture_f1(num_same: usize, pred_tokens: usize, gold_tokens: usize) -> f64 {
    if pred_tokens == 0 && gold_tokens == 0 {
        return 1.0;
    }
    if pred_tokens == 0 || gold_tokens == 0 || num_same == 0 {
        return 0.0;
    }
    let p = num_same as f64 / pred_tokens as f64;
    let r = num_same as f64 / gold_tokens as f64;
    2.0 * p * r / (p + r)
}

/// 40 synthetic case experiences in six lexical families. Titles inside one
/// family share almost every token, so a bag-of-words embedding clusters
/// them tightly while families stay far apart.
pub fn synthetic_corpus_40() -> Vec<Experience> {
    let families = [
        ("anchor the timeline year before chaining dependent lookups", 8),
        ("verify entity identity against primary sources before answering", 8),
        ("decompose comparative questions into single fact probes", 7),
        ("prefer official records over aggregator snippets for dates", 7),
        ("cross check population figures across census editions", 5),
        ("resolve geographic containment from region to settlement", 5),
    ];
    let mut out = Vec::new();
    let mut qid = 0usize;
    for (f, (base, count)) in families.iter().enumerate() {
        for i in 0..*count {
            out.push(Experience {
                id: format!("e1-f{f}v{i}"),
                kind_label: "multi-hop qa".into(),
                title: format!("{base} variant {i}"),
                tags: vec!["search".into(), "verification".into()],
                description: format!("Family {f} pattern, observed on sample {i}."),
                thinking: "Contrast of winning and losing attempts.".into(),
                qa_ids: vec![format!("q{qid:03}")],
                level: 1,
                child_ids: vec![],
            });
            qid += 1;
        }
    }
    out
}
