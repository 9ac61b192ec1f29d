//! Clean/noisy paired examples and contrastive triples.
//!
//! A [`PairedExample`] carries the five-field record used for training data:
//! the rendered clean instruction, its perturbed counterpart, the target
//! label, the task name and the raw keyword fields.

mod jsonl;
mod template;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perturb::{CleanPrompt, PerturbError, PerturbedPrompt, Perturber};
use crate::rng::SeededRng;

pub use jsonl::{read_jsonl, write_jsonl};
pub use template::{load_templates, parse_templates, TaskTemplate};

/// The 8-per-dataset clean instruction templates for MNLI, MRPC, QNLI, QQP
/// and SST-2, as a JSON array of [`TaskTemplate`].
pub const BENCHMARK_TEMPLATES_JSON: &str = include_str!("../../data/templates/noisy_prompt_bench.json");

/// Record field holding the gold label.
pub const TARGET_FIELD: &str = "targets";

#[derive(Debug, Error)]
pub enum PairError {
    #[error("record lacks placeholder field `{0}`")]
    MissingPlaceholder(String),
    #[error("record has no `targets` field")]
    MissingTarget,
    #[error("target `{target}` is not an option of task `{task}`")]
    TargetNotInOptions { target: String, task: String },
    #[error("template syntax error: {0}")]
    TemplateSyntax(String),
    #[error("no templates supplied")]
    NoTemplates,
    #[error("no example with a task other than `{0}`")]
    NoOtherTask(String),
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, PairError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairedExample {
    pub original_instruction: String,
    pub paraphrased_instruction: String,
    pub targets: String,
    pub task_name: String,
    pub keyword_data: BTreeMap<String, String>,
}

/// One training unit for the contrastive objective: a noisy prompt, its clean
/// source and a clean prompt from another task, all sharing one label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveTriple {
    pub noisy: String,
    pub clean_same: String,
    pub clean_other: String,
    pub label: String,
    pub task_name_same: String,
    pub task_name_other: String,
}

/// Renders a uniformly chosen template with `record_fields`, perturbs it with
/// a uniformly chosen kind and returns the paired record together with the
/// perturbation (and its edit log).
pub fn build_pair_traced(
    record_fields: &BTreeMap<String, String>,
    templates: &[TaskTemplate],
    perturber: &Perturber,
    rng: &mut SeededRng,
) -> Result<(PairedExample, PerturbedPrompt)> {
    if templates.is_empty() {
        return Err(PairError::NoTemplates);
    }
    let template = rng.choose(templates);
    let target = record_fields.get(TARGET_FIELD).ok_or(PairError::MissingTarget)?;
    if !template.option_labels.is_empty() && !template.option_labels.contains(target) {
        return Err(PairError::TargetNotInOptions {
            target: target.clone(),
            task: template.task_name.clone(),
        });
    }
    let clean = template.render(record_fields)?;
    let noisy = perturber.perturb(&CleanPrompt::new(clean.clone())?, None, rng)?;
    let keyword_data = record_fields
        .iter()
        .filter(|(k, _)| k.as_str() != TARGET_FIELD)
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let example = PairedExample {
        original_instruction: clean,
        paraphrased_instruction: noisy.text.clone(),
        targets: target.clone(),
        task_name: template.task_name.clone(),
        keyword_data,
    };
    Ok((example, noisy))
}

pub fn build_pair(
    record_fields: &BTreeMap<String, String>,
    templates: &[TaskTemplate],
    perturber: &Perturber,
    rng: &mut SeededRng,
) -> Result<PairedExample> {
    build_pair_traced(record_fields, templates, perturber, rng).map(|(example, _)| example)
}

/// An unrendered source record: the task it belongs to and its template
/// fields, including `targets`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRecord {
    pub task_name: String,
    pub fields: BTreeMap<String, String>,
}

/// Templates belonging to `task_name`.
pub fn templates_for(templates: &[TaskTemplate], task_name: &str) -> Vec<TaskTemplate> {
    templates.iter().filter(|t| t.task_name == task_name).cloned().collect()
}

/// Draws `count` records uniformly with replacement and pairs each with a
/// random template of its task and a random perturbation.
pub fn build_pairs(
    records: &[RawRecord],
    templates: &[TaskTemplate],
    perturber: &Perturber,
    count: usize,
    rng: &mut SeededRng,
) -> Result<Vec<PairedExample>> {
    if records.is_empty() {
        return Err(PairError::Schema {
            line: 0,
            message: "no source records".into(),
        });
    }
    let mut by_task: BTreeMap<&str, Vec<TaskTemplate>> = BTreeMap::new();
    for r in records {
        by_task
            .entry(r.task_name.as_str())
            .or_insert_with(|| templates_for(templates, &r.task_name));
    }
    (0..count)
        .map(|_| {
            let record = rng.choose(records);
            build_pair(&record.fields, &by_task[record.task_name.as_str()], perturber, rng)
        })
        .collect()
}

pub fn read_records_jsonl(path: &std::path::Path) -> Result<Vec<RawRecord>> {
    let text = std::fs::read_to_string(path).map_err(|source| PairError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_records_jsonl(&text)
}

pub fn parse_records_jsonl(text: &str) -> Result<Vec<RawRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PairError::Schema {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Clean instruction of a uniformly chosen example whose task differs from
/// `task_name`.
pub fn sample_unrelated<'a>(
    dataset: &'a [PairedExample],
    task_name: &str,
    rng: &mut SeededRng,
) -> Result<&'a PairedExample> {
    let others: Vec<&PairedExample> = dataset.iter().filter(|e| e.task_name != task_name).collect();
    if others.is_empty() {
        return Err(PairError::NoOtherTask(task_name.to_string()));
    }
    Ok(others[rng.index(others.len())])
}

/// Pairs every example with an unrelated clean prompt.
pub fn make_triples(dataset: &[PairedExample], rng: &mut SeededRng) -> Result<Vec<ContrastiveTriple>> {
    // group indices by task once; sampling stays uniform over other-task examples
    let mut by_task: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in dataset.iter().enumerate() {
        by_task.entry(e.task_name.as_str()).or_default().push(i);
    }
    dataset
        .iter()
        .map(|e| {
            let own = by_task.get(e.task_name.as_str()).map_or(0, Vec::len);
            let n_other = dataset.len() - own;
            if n_other == 0 {
                return Err(PairError::NoOtherTask(e.task_name.clone()));
            }
            let mut k = rng.index(n_other);
            let mut other = None;
            for (task, idx) in &by_task {
                if *task == e.task_name {
                    continue;
                }
                if k < idx.len() {
                    other = Some(&dataset[idx[k]]);
                    break;
                }
                k -= idx.len();
            }
            let other = other.expect("k < n_other");
            Ok(ContrastiveTriple {
                noisy: e.paraphrased_instruction.clone(),
                clean_same: e.original_instruction.clone(),
                clean_other: other.original_instruction.clone(),
                label: e.targets.clone(),
                task_name_same: e.task_name.clone(),
                task_name_other: other.task_name.clone(),
            })
        })
        .collect()
}

/// Seeded shuffle followed by a cut at `train_fraction`.
pub fn shuffle_split<T: Clone>(items: &[T], train_fraction: f64, rng: &mut SeededRng) -> (Vec<T>, Vec<T>) {
    let mut v = items.to_vec();
    rng.shuffle(&mut v);
    let cut = ((v.len() as f64) * train_fraction.clamp(0.0, 1.0)).round() as usize;
    let rest = v.split_off(cut);
    (v, rest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::{replay, PerturbationConfig, RepRange};

    fn qqp_record() -> BTreeMap<String, String> {
        [
            ("question1", "What are some tips for growing and maintaining long hair?"),
            ("question2", "How can I make my hair grow?"),
            ("options_", "OPTIONS:\n- no\n- yes"),
            ("targets", "no"),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
    }

    fn qqp_template() -> TaskTemplate {
        TaskTemplate::new(
            "glue_qqp_10templates",
            "{question1}\n{question2}\nWould you say that these questions are the same?\n{options_}",
            vec!["no".into(), "yes".into()],
        )
    }

    fn example(task: &str, text: &str) -> PairedExample {
        PairedExample {
            original_instruction: text.into(),
            paraphrased_instruction: text.into(),
            targets: "x".into(),
            task_name: task.into(),
            keyword_data: BTreeMap::new(),
        }
    }

    #[test]
    fn qqp_record_builds_table_style_pair() {
        let perturber = Perturber::new(PerturbationConfig {
            stress_phrases: Some(vec!["and 1+1=2".into()]),
            ..Default::default()
        })
        .unwrap();
        let mut found = false;
        for seed in 0..64 {
            let mut rng = SeededRng::new(seed);
            let (ex, noisy) = build_pair_traced(&qqp_record(), &[qqp_template()], &perturber, &mut rng).unwrap();
            assert_eq!(ex.targets, "no");
            assert_eq!(ex.task_name, "glue_qqp_10templates");
            assert_eq!(ex.keyword_data.len(), 3);
            assert!(!ex.keyword_data.contains_key("targets"));
            assert_eq!(
                replay(&ex.original_instruction, &noisy.edits).unwrap(),
                ex.paraphrased_instruction
            );
            if ex.paraphrased_instruction.contains("and 1+1=2") {
                found = true;
            }
        }
        assert!(found);
    }

    #[test]
    fn zero_reps_pair_is_identity() {
        let cfg = PerturbationConfig::default().with_reps(RepRange::new(0, 0));
        let perturber = Perturber::new(cfg).unwrap();
        let ex = build_pair(&qqp_record(), &[qqp_template()], &perturber, &mut SeededRng::new(1)).unwrap();
        assert_eq!(ex.paraphrased_instruction, ex.original_instruction);
    }

    #[test]
    fn build_pair_is_deterministic() {
        let perturber = Perturber::new(PerturbationConfig::default()).unwrap();
        let a = build_pair(&qqp_record(), &[qqp_template()], &perturber, &mut SeededRng::new(8)).unwrap();
        let b = build_pair(&qqp_record(), &[qqp_template()], &perturber, &mut SeededRng::new(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn build_pair_errors() {
        let perturber = Perturber::new(PerturbationConfig::default()).unwrap();
        let mut rec = qqp_record();
        rec.remove("question2");
        assert!(matches!(
            build_pair(&rec, &[qqp_template()], &perturber, &mut SeededRng::new(0)),
            Err(PairError::MissingPlaceholder(f)) if f == "question2"
        ));
        let mut rec = qqp_record();
        rec.insert("targets".into(), "maybe".into());
        assert!(matches!(
            build_pair(&rec, &[qqp_template()], &perturber, &mut SeededRng::new(0)),
            Err(PairError::TargetNotInOptions { .. })
        ));
        let mut rec = qqp_record();
        rec.remove("targets");
        assert!(matches!(
            build_pair(&rec, &[qqp_template()], &perturber, &mut SeededRng::new(0)),
            Err(PairError::MissingTarget)
        ));
        assert!(matches!(
            build_pair(&qqp_record(), &[], &perturber, &mut SeededRng::new(0)),
            Err(PairError::NoTemplates)
        ));
    }

    #[test]
    fn unrelated_sample_comes_from_the_other_task() {
        let ds = vec![example("A", "a1"), example("A", "a2"), example("B", "b1")];
        let mut rng = SeededRng::new(0);
        for _ in 0..20 {
            assert_eq!(sample_unrelated(&ds, "A", &mut rng).unwrap().task_name, "B");
        }
    }

    #[test]
    fn single_task_dataset_has_no_unrelated_prompt() {
        let ds = vec![example("A", "a1"), example("A", "a2")];
        assert!(matches!(
            sample_unrelated(&ds, "A", &mut SeededRng::new(0)),
            Err(PairError::NoOtherTask(_))
        ));
        assert!(make_triples(&ds, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn unrelated_sampling_is_uniform_over_examples() {
        let ds = vec![example("A", "a"), example("B", "b"), example("C", "c")];
        let mut rng = SeededRng::new(42);
        let mut b = 0;
        for _ in 0..1000 {
            if sample_unrelated(&ds, "A", &mut rng).unwrap().task_name == "B" {
                b += 1;
            }
        }
        let f = b as f64 / 1000.0;
        assert!((0.44..=0.56).contains(&f), "{f}");
    }

    #[test]
    fn triples_never_pair_a_task_with_itself() {
        let ds: Vec<PairedExample> = (0..30)
            .map(|i| example(["A", "B", "C"][i % 3], &format!("p{i}")))
            .collect();
        let triples = make_triples(&ds, &mut SeededRng::new(3)).unwrap();
        assert_eq!(triples.len(), 30);
        for t in &triples {
            assert_ne!(t.task_name_same, t.task_name_other);
        }
        let others: std::collections::BTreeSet<&str> = triples.iter().map(|t| t.clean_other.as_str()).collect();
        assert!(others.len() > 10);
    }

    #[test]
    fn split_is_seeded() {
        let items: Vec<u32> = (0..10).collect();
        let (a, b) = shuffle_split(&items, 0.8, &mut SeededRng::new(5));
        assert_eq!((a.len(), b.len()), (8, 2));
        let (c, _) = shuffle_split(&items, 0.8, &mut SeededRng::new(5));
        assert_eq!(a, c);
    }
}
