//! Option-scored accuracy and robustness metrics.
//!
//! A case is classified by scoring every option with the mean per-token
//! log-probability of its tokens after the prompt and taking the argmax
//! (lowest index wins ties). From per-case outcomes the harness derives
//! per-(dataset, kind) accuracy and its drop against the clean baseline,
//! accuracy grouped by structural edit radius, decoding radii, and a
//! five-bucket histogram of relative degradation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loss::{label_mask, log_softmax_row, LogitMatrix, LossError};
use crate::model::{ModelError, ToyLm};
use crate::pairs::{templates_for, PairError, RawRecord, TaskTemplate, TARGET_FIELD};
use crate::perturb::{CleanPrompt, PerturbError, PerturbationKind, Perturber};
use crate::rng::SeededRng;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty case set")]
    EmptySet,
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error("option `{0}` encodes to no tokens")]
    EmptyOption(String),
    #[error("clean accuracy is zero")]
    ZeroCleanAccuracy,
    #[error("no clean baseline for dataset `{0}`")]
    MissingCleanBaseline(String),
    #[error("no perturbed cases")]
    MissingPerturbedRun,
    #[error("invalid report: {0}")]
    InvalidReport(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// `Clean` or one of the perturbation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CaseKind {
    Clean,
    Perturbed(PerturbationKind),
}

impl CaseKind {
    pub fn name(self) -> &'static str {
        match self {
            CaseKind::Clean => "Clean",
            CaseKind::Perturbed(k) => k.name(),
        }
    }

    /// Clean first, then the perturbation kinds in their canonical order.
    pub fn all() -> [CaseKind; 5] {
        let k = PerturbationKind::ALL;
        [
            CaseKind::Clean,
            CaseKind::Perturbed(k[0]),
            CaseKind::Perturbed(k[1]),
            CaseKind::Perturbed(k[2]),
            CaseKind::Perturbed(k[3]),
        ]
    }
}

impl std::fmt::Display for CaseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CaseKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("clean") {
            Ok(CaseKind::Clean)
        } else {
            s.parse::<PerturbationKind>()
                .map(CaseKind::Perturbed)
                .map_err(|e| e.to_string())
        }
    }
}

impl Serialize for CaseKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for CaseKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCase {
    #[serde(default)]
    pub dataset: String,
    pub prompt: String,
    pub options: Vec<String>,
    pub target: String,
    pub radius: usize,
    pub kind: CaseKind,
}

impl EvalCase {
    pub fn new(
        dataset: impl Into<String>,
        prompt: impl Into<String>,
        options: Vec<String>,
        target: impl Into<String>,
        radius: usize,
        kind: CaseKind,
    ) -> Result<Self> {
        let case = Self {
            dataset: dataset.into(),
            prompt: prompt.into(),
            options,
            target: target.into(),
            radius,
            kind,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<()> {
        if self.options.is_empty() {
            return Err(EvalError::InvalidCase("no options".into()));
        }
        if !self.options.contains(&self.target) {
            return Err(EvalError::InvalidCase(format!(
                "target `{}` not among options",
                self.target
            )));
        }
        if (self.radius == 0) != (self.kind == CaseKind::Clean) {
            return Err(EvalError::InvalidCase(format!(
                "radius {} inconsistent with kind {}",
                self.radius, self.kind
            )));
        }
        Ok(())
    }

    pub fn target_index(&self) -> Option<usize> {
        self.options.iter().position(|o| o == &self.target)
    }
}

/// Anything that maps token ids to a `T × V` logit matrix.
pub trait ScoringModel {
    /// Token ids for a prompt, including any start token.
    fn encode_prompt(&self, prompt: &str) -> Vec<usize>;
    fn encode_option(&self, option: &str) -> Vec<usize>;
    fn logits(&self, tokens: &[usize]) -> Result<Array2<f64>>;
}

impl ScoringModel for ToyLm {
    fn encode_prompt(&self, prompt: &str) -> Vec<usize> {
        ToyLm::encode_prompt(self, prompt)
    }

    fn encode_option(&self, option: &str) -> Vec<usize> {
        self.vocab.encode(option)
    }

    fn logits(&self, tokens: &[usize]) -> Result<Array2<f64>> {
        Ok(self.forward(tokens)?.logits)
    }
}

/// Mean log-probability of the option's tokens following the prompt.
pub fn score_option<M: ScoringModel + ?Sized>(model: &M, prompt: &str, option: &str) -> Result<f64> {
    let prompt_ids = model.encode_prompt(prompt);
    let option_ids = model.encode_option(option);
    if option_ids.is_empty() {
        return Err(EvalError::EmptyOption(option.to_string()));
    }
    let mut tokens = prompt_ids.clone();
    tokens.extend_from_slice(&option_ids);
    let logits = LogitMatrix::new(model.logits(&tokens)?, prompt_ids.len(), option_ids.len())?;
    let mask = label_mask(prompt_ids.len(), option_ids.len())?;
    let total: f64 = mask
        .positions()
        .iter()
        .zip(&option_ids)
        .map(|(&t, &y)| log_softmax_row(logits.values().row(t))[y])
        .sum();
    Ok(total / option_ids.len() as f64)
}

/// Index of the best-scoring option; the lowest index wins ties.
pub fn classify<M: ScoringModel + ?Sized>(model: &M, case: &EvalCase) -> Result<usize> {
    if case.options.is_empty() {
        return Err(EvalError::InvalidCase("no options".into()));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, opt) in case.options.iter().enumerate() {
        let s = score_option(model, &case.prompt, opt)?;
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best.0)
}

pub fn accuracy<M: ScoringModel + ?Sized>(model: &M, cases: &[EvalCase]) -> Result<f64> {
    Ok(accuracy_of(&evaluate_cases(model, cases)?))
}

/// Outcome of classifying one case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseResult {
    pub dataset: String,
    pub kind: CaseKind,
    pub radius: usize,
    pub correct: bool,
}

pub fn evaluate_cases<M: ScoringModel + ?Sized>(model: &M, cases: &[EvalCase]) -> Result<Vec<CaseResult>> {
    if cases.is_empty() {
        return Err(EvalError::EmptySet);
    }
    cases
        .iter()
        .map(|c| {
            c.validate()?;
            let chosen = classify(model, c)?;
            Ok(CaseResult {
                dataset: c.dataset.clone(),
                kind: c.kind,
                radius: c.radius,
                correct: c.options[chosen] == c.target,
            })
        })
        .collect()
}

fn accuracy_of(results: &[CaseResult]) -> f64 {
    results.iter().filter(|r| r.correct).count() as f64 / results.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub radius: usize,
    pub accuracy: f64,
}

/// Accuracy per observed radius, radii strictly increasing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AccCurve {
    pub points: Vec<CurvePoint>,
}

impl AccCurve {
    pub fn new(points: Vec<(usize, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(EvalError::InvalidReport(
                "curve radii must be strictly increasing".into(),
            ));
        }
        if points.iter().any(|&(_, a)| !(0.0..=1.0).contains(&a)) {
            return Err(EvalError::InvalidReport("curve accuracy outside [0, 1]".into()));
        }
        Ok(Self {
            points: points
                .into_iter()
                .map(|(radius, accuracy)| CurvePoint { radius, accuracy })
                .collect(),
        })
    }
}

pub fn acc_vs_radius<M: ScoringModel + ?Sized>(model: &M, cases: &[EvalCase]) -> Result<AccCurve> {
    curve_from_results(&evaluate_cases(model, cases)?)
}

pub fn curve_from_results(results: &[CaseResult]) -> Result<AccCurve> {
    if results.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let mut groups: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in results {
        let g = groups.entry(r.radius).or_default();
        g.0 += usize::from(r.correct);
        g.1 += 1;
    }
    AccCurve::new(groups.into_iter().map(|(r, (c, n))| (r, c as f64 / n as f64)).collect())
}

/// Largest measured radius whose accuracy is at least `a`.
pub fn decoding_radius(curve: &AccCurve, a: f64) -> Option<usize> {
    curve.points.iter().rev().find(|p| p.accuracy >= a).map(|p| p.radius)
}

pub const DROP_BUCKET_EDGES: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

/// `max(0, (clean − noisy) / clean)`.
pub fn degradation_rate(acc_clean: f64, acc_noisy: f64) -> Result<f64> {
    if acc_clean <= 0.0 {
        return Err(EvalError::ZeroCleanAccuracy);
    }
    Ok(((acc_clean - acc_noisy) / acc_clean).max(0.0))
}

/// Zero-based bucket of a degradation rate; the last bucket is closed.
pub fn rate_bucket(rate: f64) -> usize {
    DROP_BUCKET_EDGES[1..5].iter().take_while(|&&edge| rate >= edge).count()
}

/// Counts of `(acc_clean, acc_noisy)` pairs per degradation bucket
/// `[0,.2) [.2,.4) [.4,.6) [.6,.8) [.8,1]`.
pub fn drop_buckets(pairs: &[(f64, f64)]) -> Result<[usize; 5]> {
    let mut counts = [0; 5];
    for &(c, n) in pairs {
        counts[rate_bucket(degradation_rate(c, n)?)] += 1;
    }
    Ok(counts)
}

/// Score difference against clean, in the same units as the inputs.
pub fn acc_diff(acc_clean: f64, acc_kind: f64) -> f64 {
    acc_clean - acc_kind
}

/// Mean of `acc_clean − acc_k` over the per-kind accuracies.
pub fn mean_diff(acc_clean: f64, acc_kinds: &[f64]) -> f64 {
    acc_kinds.iter().map(|&a| acc_diff(acc_clean, a)).sum::<f64>() / acc_kinds.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportCell {
    pub dataset: String,
    pub kind: CaseKind,
    pub accuracy: f64,
    pub diff: f64,
    pub cases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AverageCell {
    pub kind: CaseKind,
    pub accuracy: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiusAtThreshold {
    pub threshold: f64,
    pub radius: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub model: String,
    /// One cell per (dataset, kind) observed, clean included with diff 0.
    pub cells: Vec<ReportCell>,
    /// Per kind, the mean over datasets of accuracy and diff.
    pub average: Vec<AverageCell>,
    pub curve: AccCurve,
    pub decoding_radii: Vec<RadiusAtThreshold>,
    /// Counts over (dataset, perturbed kind) cells.
    pub drop_buckets: [usize; 5],
    /// Cells left out of the histogram because their clean accuracy is zero.
    pub drop_excluded: usize,
}

pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.5, 0.6, 0.7, 0.8];

/// Assembles the report from per-case outcomes.
pub fn render_report(model: &str, results: &[CaseResult], thresholds: &[f64]) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let mut groups: BTreeMap<(String, CaseKind), (usize, usize)> = BTreeMap::new();
    for r in results {
        let g = groups.entry((r.dataset.clone(), r.kind)).or_default();
        g.0 += usize::from(r.correct);
        g.1 += 1;
    }
    if !groups.keys().any(|(_, k)| *k != CaseKind::Clean) {
        return Err(EvalError::MissingPerturbedRun);
    }
    let datasets: BTreeSet<&String> = groups.keys().map(|(d, _)| d).collect();
    let mut clean_acc = BTreeMap::new();
    for d in &datasets {
        let (c, n) = groups
            .get(&((*d).clone(), CaseKind::Clean))
            .ok_or_else(|| EvalError::MissingCleanBaseline((*d).clone()))?;
        clean_acc.insert((*d).clone(), *c as f64 / *n as f64);
    }
    let mut cells = Vec::new();
    for ((dataset, kind), (c, n)) in &groups {
        let acc = *c as f64 / *n as f64;
        cells.push(ReportCell {
            dataset: dataset.clone(),
            kind: *kind,
            accuracy: acc,
            diff: acc_diff(clean_acc[dataset], acc),
            cases: *n,
        });
    }

    let mut average = Vec::new();
    for kind in CaseKind::all() {
        let of_kind: Vec<&ReportCell> = cells.iter().filter(|c| c.kind == kind).collect();
        if of_kind.is_empty() {
            continue;
        }
        let m = of_kind.len() as f64;
        average.push(AverageCell {
            kind,
            accuracy: of_kind.iter().map(|c| c.accuracy).sum::<f64>() / m,
            diff: of_kind.iter().map(|c| c.diff).sum::<f64>() / m,
        });
    }

    let curve = curve_from_results(results)?;
    let decoding_radii = thresholds
        .iter()
        .map(|&t| RadiusAtThreshold {
            threshold: t,
            radius: decoding_radius(&curve, t),
        })
        .collect();

    let mut buckets = [0; 5];
    let mut excluded = 0;
    for cell in cells.iter().filter(|c| c.kind != CaseKind::Clean) {
        match degradation_rate(clean_acc[&cell.dataset], cell.accuracy) {
            Ok(rate) => buckets[rate_bucket(rate)] += 1,
            Err(_) => excluded += 1,
        }
    }

    Ok(EvalReport {
        model: model.to_string(),
        cells,
        average,
        curve,
        decoding_radii,
        drop_buckets: buckets,
        drop_excluded: excluded,
    })
}

/// Pretty JSON with sorted keys and every non-integer number printed with
/// exactly six decimals.
pub fn canonical_json(value: &serde_json::Value) -> String {
    fn write(v: &serde_json::Value, indent: usize, out: &mut String) {
        use serde_json::Value;
        let pad = |n: usize| "  ".repeat(n);
        match v {
            Value::Null | Value::Bool(_) | Value::String(_) => out.push_str(&v.to_string()),
            Value::Number(n) => {
                if n.is_f64() {
                    let s = format!("{:.6}", n.as_f64().expect("f64"));
                    out.push_str(if s == "-0.000000" { "0.000000" } else { &s });
                } else {
                    out.push_str(&n.to_string());
                }
            }
            Value::Array(items) => {
                if items.is_empty() {
                    out.push_str("[]");
                    return;
                }
                out.push_str("[\n");
                for (i, item) in items.iter().enumerate() {
                    out.push_str(&pad(indent + 1));
                    write(item, indent + 1, out);
                    out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
                }
                out.push_str(&pad(indent));
                out.push(']');
            }
            Value::Object(map) => {
                if map.is_empty() {
                    out.push_str("{}");
                    return;
                }
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push_str("{\n");
                for (i, k) in keys.iter().enumerate() {
                    out.push_str(&pad(indent + 1));
                    out.push_str(&serde_json::Value::String((*k).clone()).to_string());
                    out.push_str(": ");
                    write(&map[*k], indent + 1, out);
                    out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
                }
                out.push_str(&pad(indent));
                out.push('}');
            }
        }
    }
    let mut out = String::new();
    write(value, 0, &mut out);
    out.push('\n');
    out
}

impl EvalReport {
    pub fn to_canonical_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("report serializes"))
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(json).map_err(|e| EvalError::InvalidReport(e.to_string()))?;
        report.check()?;
        Ok(report)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_canonical_json()).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Structural invariants; tolerances cover six-decimal serialization.
    pub fn check(&self) -> Result<()> {
        let tol = 2e-6;
        AccCurve::new(self.curve.points.iter().map(|p| (p.radius, p.accuracy)).collect())?;
        for cell in &self.cells {
            if !(0.0..=1.0).contains(&cell.accuracy) {
                return Err(EvalError::InvalidReport(format!(
                    "accuracy out of range in {}",
                    cell.dataset
                )));
            }
            let clean = self
                .cells
                .iter()
                .find(|c| c.dataset == cell.dataset && c.kind == CaseKind::Clean)
                .ok_or_else(|| EvalError::MissingCleanBaseline(cell.dataset.clone()))?;
            if (cell.diff - (clean.accuracy - cell.accuracy)).abs() > tol {
                return Err(EvalError::InvalidReport(format!(
                    "diff mismatch for {}/{}",
                    cell.dataset, cell.kind
                )));
            }
        }
        let perturbed = self.cells.iter().filter(|c| c.kind != CaseKind::Clean).count();
        if self.drop_buckets.iter().sum::<usize>() + self.drop_excluded != perturbed {
            return Err(EvalError::InvalidReport(
                "bucket counts do not cover the perturbed cells".into(),
            ));
        }
        Ok(())
    }

    pub fn cell(&self, dataset: &str, kind: CaseKind) -> Option<&ReportCell> {
        self.cells.iter().find(|c| c.dataset == dataset && c.kind == kind)
    }

    pub fn average_for(&self, kind: CaseKind) -> Option<&AverageCell> {
        self.average.iter().find(|c| c.kind == kind)
    }
}

/// Acc/Diff grid with one row per (model, dataset) plus an `avg` row per
/// model. Percentages with two decimals; clean columns carry no diff.
pub fn grid_csv(reports: &[EvalReport]) -> String {
    let kinds = CaseKind::all();
    let mut out = String::from("model,dataset");
    for k in kinds {
        if k == CaseKind::Clean {
            out.push_str(",clean_acc");
        } else {
            let name = k.name().to_ascii_lowercase();
            let _ = write!(out, ",{name}_acc,{name}_diff");
        }
    }
    out.push('\n');
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{:.2}", 100.0 * x + 0.0));
    for r in reports {
        let datasets: BTreeSet<&str> = r.cells.iter().map(|c| c.dataset.as_str()).collect();
        for d in datasets {
            let _ = write!(out, "{},{}", r.model, d);
            for k in kinds {
                let cell = r.cell(d, k);
                out.push(',');
                out.push_str(&fmt(cell.map(|c| c.accuracy)));
                if k != CaseKind::Clean {
                    out.push(',');
                    out.push_str(&fmt(cell.map(|c| c.diff)));
                }
            }
            out.push('\n');
        }
        let _ = write!(out, "{},avg", r.model);
        for k in kinds {
            let cell = r.average_for(k);
            out.push(',');
            out.push_str(&fmt(cell.map(|c| c.accuracy)));
            if k != CaseKind::Clean {
                out.push(',');
                out.push_str(&fmt(cell.map(|c| c.diff)));
            }
        }
        out.push('\n');
    }
    out
}

pub fn read_cases_jsonl(path: &Path) -> Result<Vec<EvalCase>> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let case: EvalCase =
                serde_json::from_str(l).map_err(|e| EvalError::InvalidCase(format!("line {}: {e}", i + 1)))?;
            case.validate()?;
            Ok(case)
        })
        .collect()
}

pub fn write_cases_jsonl(cases: &[EvalCase], path: &Path) -> Result<()> {
    let mut text = String::new();
    for c in cases {
        text.push_str(&serde_json::to_string(c).expect("case serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One clean case per record plus one case per perturbation kind, all from
/// the same randomly chosen template. Perturbations that leave the prompt
/// unchanged, or find nothing to edit, are skipped.
pub fn build_eval_cases(
    records: &[RawRecord],
    templates: &[TaskTemplate],
    perturber: &Perturber,
    rng: &mut SeededRng,
) -> std::result::Result<Vec<EvalCase>, PairError> {
    let mut cases = Vec::new();
    for record in records {
        let own = templates_for(templates, &record.task_name);
        if own.is_empty() {
            return Err(PairError::NoTemplates);
        }
        let template = rng.choose(&own);
        let target = record.fields.get(TARGET_FIELD).ok_or(PairError::MissingTarget)?;
        if !template.option_labels.contains(target) {
            return Err(PairError::TargetNotInOptions {
                target: target.clone(),
                task: record.task_name.clone(),
            });
        }
        let clean = template.render(&record.fields)?;
        let make = |prompt: String, radius, kind| EvalCase {
            dataset: record.task_name.clone(),
            prompt,
            options: template.option_labels.clone(),
            target: target.clone(),
            radius,
            kind,
        };
        cases.push(make(clean.clone(), 0, CaseKind::Clean));
        let prompt = CleanPrompt::new(clean)?;
        for kind in PerturbationKind::ALL {
            match perturber.perturb(&prompt, Some(kind), rng) {
                Ok(noisy) if !noisy.edits.is_empty() => {
                    cases.push(make(noisy.text, noisy.radius, CaseKind::Perturbed(kind)));
                }
                Ok(_) | Err(PerturbError::NoEligibleWord) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(cases)
}
