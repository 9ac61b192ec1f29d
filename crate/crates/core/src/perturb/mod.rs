//! Prompt perturbation engine.
//!
//! Four noise families are supported: character-level typos (DeepWordBug),
//! word-level lexicon substitution (TextFooler), random alphanumeric
//! insertions (CheckList) and distractor phrases (StressTest). Every
//! operation logs its atomic edits so the noisy text can be reconstructed
//! from the clean text, and the number of logged edits is the structural
//! perturbation radius.

mod buffer;
mod char_noise;
mod lexicon;
mod sentence;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededRng;

pub use buffer::{replay, EditBuffer};
pub use char_noise::apply_char_op;
pub use lexicon::Lexicon;
pub use sentence::{CHECKLIST_ALPHABET, DEFAULT_STRESS_PHRASES};

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("prompt has no eligible word for this perturbation")]
    NoEligibleWord,
    #[error("lexicon parse error at line {line}: {message}")]
    LexiconParse { line: usize, message: String },
    #[error("invalid perturbation config: {0}")]
    InvalidConfig(String),
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("edit log does not reproduce the noisy text")]
    ProvenanceMismatch,
    #[error("edit {index} does not match the text it claims to replace")]
    ReplayMismatch { index: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, PerturbError>;

/// A well-formed prompt plus byte ranges that edits must not touch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanPrompt {
    text: String,
    #[serde(default)]
    protected_spans: Vec<(usize, usize)>,
}

impl CleanPrompt {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        Self::with_protected(text, Vec::new())
    }

    pub fn with_protected(text: impl Into<String>, mut spans: Vec<(usize, usize)>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(PerturbError::InvalidPrompt("empty text".into()));
        }
        spans.sort_unstable();
        let mut prev_end = 0;
        for &(start, end) in &spans {
            if start >= end || end > text.len() {
                return Err(PerturbError::InvalidPrompt(format!(
                    "protected span ({start}, {end}) is empty or out of bounds"
                )));
            }
            if start < prev_end {
                return Err(PerturbError::InvalidPrompt(format!(
                    "protected span ({start}, {end}) overlaps its predecessor"
                )));
            }
            if !text.is_char_boundary(start) || !text.is_char_boundary(end) {
                return Err(PerturbError::InvalidPrompt(format!(
                    "protected span ({start}, {end}) splits a character"
                )));
            }
            prev_end = end;
        }
        Ok(Self {
            text,
            protected_spans: spans,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn protected_spans(&self) -> &[(usize, usize)] {
        &self.protected_spans
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PerturbationKind {
    DeepWordBug,
    TextFooler,
    CheckList,
    StressTest,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 4] = [
        PerturbationKind::DeepWordBug,
        PerturbationKind::TextFooler,
        PerturbationKind::CheckList,
        PerturbationKind::StressTest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::DeepWordBug => "DeepWordBug",
            PerturbationKind::TextFooler => "TextFooler",
            PerturbationKind::CheckList => "CheckList",
            PerturbationKind::StressTest => "StressTest",
        }
    }

    /// Character- and word-level kinds draw their repetition count from
    /// `char_word_reps`; the sentence-level kinds use `sentence_reps`.
    pub fn is_sentence_level(self) -> bool {
        matches!(self, PerturbationKind::CheckList | PerturbationKind::StressTest)
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbationKind {
    type Err = PerturbError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "deepwordbug" => Ok(PerturbationKind::DeepWordBug),
            "textfooler" => Ok(PerturbationKind::TextFooler),
            "checklist" => Ok(PerturbationKind::CheckList),
            "stresstest" => Ok(PerturbationKind::StressTest),
            other => Err(PerturbError::InvalidConfig(format!(
                "unknown perturbation kind `{other}`"
            ))),
        }
    }
}

/// Inclusive repetition-count range, serialized as `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct RepRange {
    pub lo: usize,
    pub hi: usize,
}

impl RepRange {
    pub const fn new(lo: usize, hi: usize) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, n: usize) -> bool {
        (self.lo..=self.hi).contains(&n)
    }
}

impl From<[usize; 2]> for RepRange {
    fn from([lo, hi]: [usize; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<RepRange> for [usize; 2] {
    fn from(r: RepRange) -> Self {
        [r.lo, r.hi]
    }
}

impl FromStr for RepRange {
    type Err = PerturbError;

    /// Parses `a..b` (inclusive) or a single count `n`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || PerturbError::InvalidConfig(format!("bad repetition range `{s}`"));
        let (lo, hi) = match s.split_once("..") {
            Some((a, b)) => (
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            ),
            None => {
                let n = s.trim().parse().map_err(|_| bad())?;
                (n, n)
            }
        };
        if lo > hi {
            return Err(bad());
        }
        Ok(Self { lo, hi })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    pub seed: u64,
    pub char_word_reps: RepRange,
    pub sentence_reps: RepRange,
    pub lexicon_path: Option<PathBuf>,
    pub checklist_len: usize,
    /// Replaces the built-in StressTest phrase table when set.
    pub stress_phrases: Option<Vec<String>>,
    /// File with one StressTest phrase per line; used when `stress_phrases` is unset.
    pub phrase_path: Option<PathBuf>,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            char_word_reps: RepRange::new(4, 8),
            sentence_reps: RepRange::new(1, 2),
            lexicon_path: None,
            checklist_len: 10,
            stress_phrases: None,
            phrase_path: None,
        }
    }
}

impl PerturbationConfig {
    /// Sets both repetition ranges to the same value.
    pub fn with_reps(mut self, reps: RepRange) -> Self {
        self.char_word_reps = reps;
        self.sentence_reps = reps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("char_word_reps", self.char_word_reps),
            ("sentence_reps", self.sentence_reps),
        ] {
            if r.lo > r.hi {
                return Err(PerturbError::InvalidConfig(format!(
                    "{name}: lower bound {} exceeds upper bound {}",
                    r.lo, r.hi
                )));
            }
        }
        if self.checklist_len == 0 {
            return Err(PerturbError::InvalidConfig("checklist_len must be at least 1".into()));
        }
        if let Some(phrases) = &self.stress_phrases {
            if phrases.is_empty() || phrases.iter().any(|p| p.trim().is_empty()) {
                return Err(PerturbError::InvalidConfig(
                    "stress phrase table has an empty entry".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn reps_for(&self, kind: PerturbationKind) -> RepRange {
        if kind.is_sentence_level() {
            self.sentence_reps
        } else {
            self.char_word_reps
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    CharInsert,
    CharDelete,
    CharRepeat,
    CharSubstitute,
    CharSwap,
    WordSubstitute,
    SeqInsert,
    PhraseInsert,
}

impl EditOp {
    pub fn is_insertion(self) -> bool {
        matches!(self, EditOp::CharInsert | EditOp::SeqInsert | EditOp::PhraseInsert)
    }
}

/// One atomic edit: at byte `position` of the text as it stood before this
/// edit, `before` was replaced by `after`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRecord {
    pub op: EditOp,
    pub position: usize,
    pub before: String,
    pub after: String,
}

impl EditRecord {
    /// Checks the shape constraints each op places on `before`/`after`.
    pub fn is_consistent(&self) -> bool {
        let b = self.before.chars().count();
        let a = self.after.chars().count();
        match self.op {
            EditOp::CharInsert => b == 0 && a == 1,
            EditOp::CharDelete => b == 1 && a == 0,
            EditOp::CharRepeat => {
                let mut cs = self.after.chars();
                b == 1 && a == 2 && cs.next() == cs.next() && self.after.starts_with(&self.before)
            }
            EditOp::CharSubstitute => b == 1 && a == 1,
            EditOp::CharSwap => {
                let bc: Vec<char> = self.before.chars().collect();
                let ac: Vec<char> = self.after.chars().collect();
                b == 2 && a == 2 && bc[0] == ac[1] && bc[1] == ac[0]
            }
            EditOp::WordSubstitute => b > 0 && a > 0,
            EditOp::SeqInsert | EditOp::PhraseInsert => b == 0 && a > 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedPrompt {
    pub text: String,
    pub kind: PerturbationKind,
    pub edits: Vec<EditRecord>,
    pub radius: usize,
}

/// Holds a validated config together with the loaded lexicon and phrase
/// table, so repeated perturbations do not reload files.
#[derive(Debug, Clone)]
pub struct Perturber {
    config: PerturbationConfig,
    lexicon: Lexicon,
    phrases: Vec<String>,
}

impl Perturber {
    pub fn new(config: PerturbationConfig) -> Result<Self> {
        config.validate()?;
        let lexicon = match &config.lexicon_path {
            Some(path) => Lexicon::from_path(path)?,
            None => Lexicon::embedded().clone(),
        };
        let phrases = match (&config.stress_phrases, &config.phrase_path) {
            (Some(p), _) => p.clone(),
            (None, Some(path)) => load_phrases(path)?,
            (None, None) => DEFAULT_STRESS_PHRASES.iter().map(|s| s.to_string()).collect(),
        };
        Ok(Self {
            config,
            lexicon,
            phrases,
        })
    }

    /// Uses an already-loaded lexicon instead of `config.lexicon_path`.
    pub fn with_lexicon(config: PerturbationConfig, lexicon: Lexicon) -> Result<Self> {
        let mut this = Self::new(PerturbationConfig {
            lexicon_path: None,
            ..config.clone()
        })?;
        this.config = config;
        this.lexicon = lexicon;
        Ok(this)
    }

    pub fn config(&self) -> &PerturbationConfig {
        &self.config
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn deep_word_bug(&self, prompt: &CleanPrompt, rng: &mut SeededRng) -> Result<PerturbedPrompt> {
        let reps = draw_reps(self.config.char_word_reps, rng);
        char_noise::deep_word_bug(prompt, reps, rng)
    }

    pub fn text_fooler(&self, prompt: &CleanPrompt, rng: &mut SeededRng) -> Result<PerturbedPrompt> {
        let reps = draw_reps(self.config.char_word_reps, rng);
        char_noise::text_fooler(prompt, &self.lexicon, reps, rng)
    }

    pub fn checklist(&self, prompt: &CleanPrompt, rng: &mut SeededRng) -> Result<PerturbedPrompt> {
        let reps = draw_reps(self.config.sentence_reps, rng);
        Ok(sentence::checklist(prompt, reps, self.config.checklist_len, rng))
    }

    pub fn stress_test(&self, prompt: &CleanPrompt, rng: &mut SeededRng) -> Result<PerturbedPrompt> {
        let reps = draw_reps(self.config.sentence_reps, rng);
        Ok(sentence::stress_test(prompt, reps, &self.phrases, rng))
    }

    /// Applies `kind`, or a uniformly drawn kind when `kind` is `None`.
    pub fn perturb(
        &self,
        prompt: &CleanPrompt,
        kind: Option<PerturbationKind>,
        rng: &mut SeededRng,
    ) -> Result<PerturbedPrompt> {
        let kind = kind.unwrap_or_else(|| *rng.choose(&PerturbationKind::ALL));
        match kind {
            PerturbationKind::DeepWordBug => self.deep_word_bug(prompt, rng),
            PerturbationKind::TextFooler => self.text_fooler(prompt, rng),
            PerturbationKind::CheckList => self.checklist(prompt, rng),
            PerturbationKind::StressTest => self.stress_test(prompt, rng),
        }
    }
}

fn draw_reps(range: RepRange, rng: &mut SeededRng) -> usize {
    rng.range_inclusive(range.lo, range.hi)
}

fn load_phrases(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|source| PerturbError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let phrases: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if phrases.is_empty() {
        return Err(PerturbError::InvalidConfig(format!(
            "phrase file {} is empty",
            path.display()
        )));
    }
    Ok(phrases)
}

pub fn deep_word_bug(prompt: &CleanPrompt, config: &PerturbationConfig, mut rng: SeededRng) -> Result<PerturbedPrompt> {
    Perturber::new(config.clone())?.deep_word_bug(prompt, &mut rng)
}

pub fn text_fooler(prompt: &CleanPrompt, config: &PerturbationConfig, mut rng: SeededRng) -> Result<PerturbedPrompt> {
    Perturber::new(config.clone())?.text_fooler(prompt, &mut rng)
}

pub fn checklist_noise(
    prompt: &CleanPrompt,
    config: &PerturbationConfig,
    mut rng: SeededRng,
) -> Result<PerturbedPrompt> {
    Perturber::new(config.clone())?.checklist(prompt, &mut rng)
}

pub fn stress_test(prompt: &CleanPrompt, config: &PerturbationConfig, mut rng: SeededRng) -> Result<PerturbedPrompt> {
    Perturber::new(config.clone())?.stress_test(prompt, &mut rng)
}

pub fn perturb(
    prompt: &CleanPrompt,
    kind: Option<PerturbationKind>,
    config: &PerturbationConfig,
    mut rng: SeededRng,
) -> Result<PerturbedPrompt> {
    Perturber::new(config.clone())?.perturb(prompt, kind, &mut rng)
}

/// Edit-count radius of `noisy`, after checking that its edit log really
/// turns `clean` into `noisy.text`.
pub fn structural_radius(clean: &CleanPrompt, noisy: &PerturbedPrompt) -> Result<usize> {
    match replay(clean.text(), &noisy.edits) {
        Ok(text) if text == noisy.text && noisy.radius == noisy.edits.len() => Ok(noisy.radius),
        _ => Err(PerturbError::ProvenanceMismatch),
    }
}
