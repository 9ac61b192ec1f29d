//! Bundled four-task synthetic classification suite and the SFT-versus-CoIPO
//! comparison run on it.
//!
//! Tasks: review sentiment (positive/negative), sentence topic
//! (sports/science), object size (big/small) and temperature (hot/cold).
//! Inputs are short compositional phrases; each task has four instruction
//! templates ending in `Answer:`.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::eval::{build_eval_cases, evaluate_cases, CaseKind, CaseResult, EvalCase, EvalError};
use crate::loss::LossConfig;
use crate::model::{build_vocab, encode_triple, train, ModelConfig, ModelError, OptimizerState, ToyLm, Vocab};
use crate::pairs::{build_pairs, make_triples, PairError, PairedExample, RawRecord, TaskTemplate, TARGET_FIELD};
use crate::perturb::{PerturbationConfig, Perturber};
use crate::rng::SeededRng;

pub const SUITE_TEMPLATES_JSON: &str = include_str!("../data/suite/templates.json");
pub const SUITE_RECORDS_JSONL: &str = include_str!("../data/suite/records.jsonl");

pub const SUITE_VOCAB_LIMIT: usize = 200;

struct TaskSpec {
    name: &'static str,
    labels: [&'static str; 2],
    /// Input phrases for each label.
    inputs: fn(usize) -> Vec<String>,
}

fn product(parts: &[&[&str]]) -> Vec<String> {
    let mut out = vec![String::new()];
    for options in parts {
        out = out
            .iter()
            .flat_map(|prefix| {
                options.iter().map(move |o| match (prefix.is_empty(), o.is_empty()) {
                    (true, _) => o.to_string(),
                    (false, true) => prefix.clone(),
                    (false, false) => format!("{prefix} {o}"),
                })
            })
            .collect();
    }
    out
}

fn sentiment(label: usize) -> Vec<String> {
    let subjects: &[&str] = &[
        "the film",
        "the meal",
        "the book",
        "the song",
        "the hotel",
        "the trip",
        "the concert",
        "the movie",
    ];
    let adjs: [&[&str]; 2] = [
        &["great", "wonderful", "lovely", "excellent", "brilliant", "superb"],
        &["awful", "terrible", "boring", "dreadful", "poor", "dull"],
    ];
    product(&[subjects, &["was"], &["", "very"], adjs[label]])
}

fn topic(label: usize) -> Vec<String> {
    let parts: [[&[&str]; 3]; 2] = [
        [
            &["the team", "the player", "the coach", "our club"],
            &["won", "lost", "played"],
            &["the match", "the final", "the race", "the game"],
        ],
        [
            &["the chemist", "the physicist", "the lab", "a biologist"],
            &["measured", "studied", "tested"],
            &["the atom", "the cell", "the gene", "the molecule"],
        ],
    ];
    product(&parts[label])
}

fn size(label: usize) -> Vec<String> {
    let nouns: [&[&str]; 2] = [
        &[
            "elephant", "whale", "mountain", "truck", "giraffe", "ship", "castle", "planet",
        ],
        &["ant", "mouse", "pebble", "bee", "coin", "seed", "button", "flea"],
    ];
    product(&[
        &["the", "a"],
        &["old", "grey", "distant", "quiet", "new", "brown"],
        nouns[label],
    ])
}

fn temperature(label: usize) -> Vec<String> {
    let nouns: [&[&str]; 2] = [
        &[
            "the fire",
            "the desert",
            "the oven",
            "the lava",
            "the sun",
            "the stove",
            "the kettle",
            "the summer",
        ],
        &[
            "the ice",
            "the snow",
            "the glacier",
            "the freezer",
            "the winter",
            "the frost",
            "the iceberg",
            "the blizzard",
        ],
    ];
    product(&[
        nouns[label],
        &["", "today", "at noon", "in the morning", "tonight", "again"],
    ])
}

const TASKS: [TaskSpec; 4] = [
    TaskSpec {
        name: "sentiment",
        labels: ["positive", "negative"],
        inputs: sentiment,
    },
    TaskSpec {
        name: "topic",
        labels: ["sports", "science"],
        inputs: topic,
    },
    TaskSpec {
        name: "size",
        labels: ["big", "small"],
        inputs: size,
    },
    TaskSpec {
        name: "temperature",
        labels: ["hot", "cold"],
        inputs: temperature,
    },
];

/// Four instruction templates per task, each with an `{input}` field.
pub fn suite_templates() -> Vec<TaskTemplate> {
    let t = |task: &str, text: &str, labels: [&str; 2]| {
        TaskTemplate::new(task, text, labels.iter().map(|s| s.to_string()).collect())
    };
    let s = ["positive", "negative"];
    let o = ["sports", "science"];
    let z = ["big", "small"];
    let h = ["hot", "cold"];
    vec![
        t(
            "sentiment",
            "Is the following review positive or negative? {input}\nAnswer:",
            s,
        ),
        t("sentiment", "Decide the sentiment of this review: {input}\nAnswer:", s),
        t(
            "sentiment",
            "Review: {input}\nClassify the review as positive or negative.\nAnswer:",
            s,
        ),
        t(
            "sentiment",
            "Read the review and tell if it is positive or negative. {input}\nAnswer:",
            s,
        ),
        t("topic", "Is this sentence about sports or science? {input}\nAnswer:", o),
        t("topic", "Decide the topic of this sentence: {input}\nAnswer:", o),
        t(
            "topic",
            "Sentence: {input}\nClassify the sentence as sports or science.\nAnswer:",
            o,
        ),
        t(
            "topic",
            "Read the sentence and tell if it is about sports or science. {input}\nAnswer:",
            o,
        ),
        t("size", "Is the following object big or small? {input}\nAnswer:", z),
        t("size", "Decide the size of this object: {input}\nAnswer:", z),
        t(
            "size",
            "Object: {input}\nClassify the object as big or small.\nAnswer:",
            z,
        ),
        t(
            "size",
            "Read the object and tell if it is big or small. {input}\nAnswer:",
            z,
        ),
        t("temperature", "Is the following thing hot or cold? {input}\nAnswer:", h),
        t(
            "temperature",
            "Decide the temperature of this thing: {input}\nAnswer:",
            h,
        ),
        t(
            "temperature",
            "Thing: {input}\nClassify the thing as hot or cold.\nAnswer:",
            h,
        ),
        t(
            "temperature",
            "Read the thing and tell if it is hot or cold. {input}\nAnswer:",
            h,
        ),
    ]
}

/// Every distinct input of every task, in a fixed order.
pub fn suite_records() -> Vec<RawRecord> {
    let mut out = Vec::new();
    for task in &TASKS {
        for (label_idx, label) in task.labels.iter().enumerate() {
            for input in (task.inputs)(label_idx) {
                let fields = BTreeMap::from([
                    ("input".to_string(), input),
                    (TARGET_FIELD.to_string(), label.to_string()),
                ]);
                out.push(RawRecord {
                    task_name: task.name.to_string(),
                    fields,
                });
            }
        }
    }
    out
}

pub fn records_to_jsonl(records: &[RawRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error(transparent)]
    Pairs(#[from] PairError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Perturb(#[from] crate::perturb::PerturbError),
    #[error("could not fit the vocabulary under {0} entries")]
    VocabTooLarge(usize),
}

pub type Result<T> = std::result::Result<T, SuiteError>;

/// Per-task held-out split: `eval_per_task` records of each task go to
/// evaluation, the rest to training. Both sides preserve the input order.
pub fn split_records(
    records: &[RawRecord],
    eval_per_task: usize,
    rng: &mut SeededRng,
) -> (Vec<RawRecord>, Vec<RawRecord>) {
    let mut by_task: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_task.entry(&r.task_name).or_default().push(i);
    }
    let mut held = vec![false; records.len()];
    for idx in by_task.values_mut() {
        rng.shuffle(idx);
        for &i in idx.iter().take(eval_per_task) {
            held[i] = true;
        }
    }
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for (r, h) in records.iter().zip(held) {
        if h {
            eval.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    (train, eval)
}

/// Vocabulary from `corpus` with the smallest count threshold (starting at
/// `min_count`) whose size stays within `limit`.
pub fn bounded_vocab(corpus: &[String], min_count: usize, limit: usize) -> Result<Vocab> {
    let mut m = min_count.max(1);
    loop {
        let v = build_vocab(corpus, m)?;
        if v.len() <= limit {
            return Ok(v);
        }
        m += 1;
        if m > corpus.len() {
            return Err(SuiteError::VocabTooLarge(limit));
        }
    }
}

/// Training corpus for the vocabulary: clean and noisy prompts plus labels.
pub fn vocab_corpus(pairs: &[PairedExample]) -> Vec<String> {
    pairs
        .iter()
        .flat_map(|p| {
            [
                p.original_instruction.clone(),
                p.paraphrased_instruction.clone(),
                p.targets.clone(),
            ]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub seed: u64,
    pub train_pairs: usize,
    pub eval_per_task: usize,
    pub vocab_min_count: usize,
    pub perturbation: PerturbationConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            train_pairs: 2000,
            eval_per_task: 24,
            vocab_min_count: 2,
            perturbation: PerturbationConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSuite {
    pub templates: Vec<TaskTemplate>,
    pub train: Vec<PairedExample>,
    pub eval_cases: Vec<EvalCase>,
    pub vocab: Vocab,
}

/// Assembles training pairs, held-out evaluation cases and a vocabulary from
/// the bundled records and templates.
pub fn build_suite(config: &SuiteConfig) -> Result<SyntheticSuite> {
    let templates = crate::pairs::parse_templates(SUITE_TEMPLATES_JSON)?;
    let records = crate::pairs::parse_records_jsonl(SUITE_RECORDS_JSONL)?;
    let perturber = Perturber::new(config.perturbation.clone())?;
    let (train_records, eval_records) =
        split_records(&records, config.eval_per_task, &mut SeededRng::derive(config.seed, 0));
    let train = build_pairs(
        &train_records,
        &templates,
        &perturber,
        config.train_pairs,
        &mut SeededRng::derive(config.seed, 1),
    )?;
    let eval_cases = build_eval_cases(
        &eval_records,
        &templates,
        &perturber,
        &mut SeededRng::derive(config.seed, 2),
    )?;
    let vocab = bounded_vocab(&vocab_corpus(&train), config.vocab_min_count, SUITE_VOCAB_LIMIT)?;
    Ok(SyntheticSuite {
        templates,
        train,
        eval_cases,
        vocab,
    })
}

/// Clean accuracy, pooled perturbed accuracy and their difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSummary {
    pub clean_acc: f64,
    pub noisy_acc: f64,
    pub drop: f64,
}

pub fn summarize(results: &[CaseResult]) -> RobustnessSummary {
    let acc = |clean: bool| {
        let sel: Vec<&CaseResult> = results
            .iter()
            .filter(|r| (r.kind == CaseKind::Clean) == clean)
            .collect();
        if sel.is_empty() {
            0.0
        } else {
            sel.iter().filter(|r| r.correct).count() as f64 / sel.len() as f64
        }
    };
    let clean_acc = acc(true);
    let noisy_acc = acc(false);
    RobustnessSummary {
        clean_acc,
        noisy_acc,
        drop: clean_acc - noisy_acc,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DirectionalConfig {
    pub seeds: Vec<u64>,
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for DirectionalConfig {
    fn default() -> Self {
        Self {
            seeds: vec![41, 42, 43, 44, 45],
            model: ModelConfig {
                max_seq: 64,
                ..ModelConfig::default()
            },
            epochs: 1,
            batch_size: 64,
            learning_rate: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub method: String,
    pub summary: RobustnessSummary,
    pub final_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalOutcome {
    pub runs: Vec<SeedRun>,
    pub median_drop_sft: f64,
    pub median_drop_coipo: f64,
    pub median_noisy_sft: f64,
    pub median_noisy_coipo: f64,
    pub seconds: f64,
}

impl DirectionalOutcome {
    pub fn drop_ok(&self) -> bool {
        self.median_drop_coipo <= self.median_drop_sft
    }

    pub fn noisy_ok(&self) -> bool {
        self.median_noisy_coipo >= self.median_noisy_sft
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Trains a model from `init` on the suite and summarizes its robustness.
pub fn train_and_evaluate(
    suite: &SyntheticSuite,
    init: &ToyLm,
    loss: &LossConfig,
    config: &DirectionalConfig,
    shuffle_seed: u64,
) -> Result<(ToyLm, RobustnessSummary, f64)> {
    let triples = make_triples(&suite.train, &mut SeededRng::derive(shuffle_seed, 1_000))?;
    let tokens = triples
        .iter()
        .map(|t| encode_triple(&suite.vocab, t))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut opt = OptimizerState::new(config.learning_rate);
    let out = train(
        init.params.clone(),
        &tokens,
        loss,
        &mut opt,
        config.epochs,
        config.batch_size,
        shuffle_seed,
    )?;
    let final_total = out.log.last().map_or(f64::NAN, |m| m.total);
    let model = ToyLm {
        params: out.params,
        ..init.clone()
    };
    let results = evaluate_cases(&model, &suite.eval_cases)?;
    Ok((model, summarize(&results), final_total))
}

/// SFT-only versus CoIPO + CE from identical initializations, one pair of
/// runs per seed.
pub fn run_directional(suite: &SyntheticSuite, config: &DirectionalConfig) -> Result<DirectionalOutcome> {
    let start = Instant::now();
    let mut runs = Vec::new();
    for &seed in &config.seeds {
        let init = ToyLm::new(
            ModelConfig {
                init_seed: seed,
                ..config.model.clone()
            },
            suite.vocab.clone(),
        )?;
        for (method, loss) in [("sft", LossConfig::sft()), ("coipo", LossConfig::default())] {
            let (_, summary, final_total) = train_and_evaluate(suite, &init, &loss, config, seed)?;
            log::info!(
                "seed {seed} {method}: clean={:.4} noisy={:.4} drop={:.4}",
                summary.clean_acc,
                summary.noisy_acc,
                summary.drop
            );
            runs.push(SeedRun {
                seed,
                method: method.to_string(),
                summary,
                final_total,
            });
        }
    }
    let pick = |method: &str, f: fn(&RobustnessSummary) -> f64| -> Vec<f64> {
        runs.iter()
            .filter(|r| r.method == method)
            .map(|r| f(&r.summary))
            .collect()
    };
    Ok(DirectionalOutcome {
        median_drop_sft: median(&pick("sft", |s| s.drop)),
        median_drop_coipo: median(&pick("coipo", |s| s.drop)),
        median_noisy_sft: median(&pick("sft", |s| s.noisy_acc)),
        median_noisy_coipo: median(&pick("coipo", |s| s.noisy_acc)),
        seconds: start.elapsed().as_secs_f64(),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn bundled_files_match_generator() {
        assert_eq!(SUITE_RECORDS_JSONL, records_to_jsonl(&suite_records()));
        let bundled = crate::pairs::parse_templates(SUITE_TEMPLATES_JSON).unwrap();
        assert_eq!(bundled, suite_templates());
    }

    /// Rewrites the bundled files from the generator.
    #[test]
    #[ignore]
    fn regenerate_bundled_files() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/suite");
        std::fs::write(dir.join("records.jsonl"), records_to_jsonl(&suite_records())).unwrap();
        let json = serde_json::to_string_pretty(&suite_templates()).unwrap() + "\n";
        std::fs::write(dir.join("templates.json"), json).unwrap();
    }

    #[test]
    fn records_are_distinct_and_labelled() {
        let records = suite_records();
        let keys: BTreeSet<_> = records.iter().map(|r| (&r.task_name, &r.fields["input"])).collect();
        assert_eq!(keys.len(), records.len());
        let templates = suite_templates();
        for r in &records {
            let opts = &templates
                .iter()
                .find(|t| t.task_name == r.task_name)
                .unwrap()
                .option_labels;
            assert!(opts.contains(&r.fields[TARGET_FIELD]));
        }
        assert_eq!(records.iter().filter(|r| r.task_name == "size").count(), 192);
    }

    #[test]
    fn split_is_disjoint_and_per_task() {
        let records = suite_records();
        let (train, eval) = split_records(&records, 10, &mut SeededRng::new(0));
        assert_eq!(eval.len(), 40);
        assert_eq!(train.len() + eval.len(), records.len());
        assert!(eval.iter().all(|e| !train.contains(e)));
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn small_suite_is_bounded_and_consistent() {
        let cfg = SuiteConfig {
            train_pairs: 200,
            eval_per_task: 4,
            ..SuiteConfig::default()
        };
        let suite = build_suite(&cfg).unwrap();
        assert_eq!(suite.train.len(), 200);
        assert!(suite.vocab.len() <= SUITE_VOCAB_LIMIT);
        assert_eq!(
            suite.eval_cases.iter().filter(|c| c.kind == CaseKind::Clean).count(),
            16
        );
        for c in &suite.eval_cases {
            c.validate().unwrap();
        }
        let again = build_suite(&cfg).unwrap();
        assert_eq!(again.train, suite.train);
        assert_eq!(again.eval_cases, suite.eval_cases);
    }
}
