use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use super::{PerturbError, Result};

static EMBEDDED_TSV: &str = include_str!("../../data/lexicon.tsv");

/// Word-substitution table: lowercase word to candidate replacements.
///
/// File format is UTF-8, one `word<TAB>cand1,cand2,...` entry per line.
/// Blank lines and lines starting with `#` are skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    /// The default table compiled into the crate.
    pub fn embedded() -> &'static Lexicon {
        static LEXICON: OnceLock<Lexicon> = OnceLock::new();
        LEXICON.get_or_init(|| Lexicon::parse(EMBEDDED_TSV).expect("embedded lexicon is well-formed"))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| PerturbError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| PerturbError::LexiconParse {
                line: line_no,
                message: message.to_string(),
            };
            let (word, cands) = line.split_once('\t').ok_or_else(|| err("missing tab separator"))?;
            let word = word.trim();
            if word.is_empty() {
                return Err(err("empty headword"));
            }
            let cands: Vec<String> = cands.split(',').map(|c| c.trim().to_string()).collect();
            if cands.iter().any(String::is_empty) {
                return Err(err("empty candidate"));
            }
            let slot = entries.entry(word.to_lowercase()).or_default();
            for c in cands {
                if !slot.contains(&c) {
                    slot.push(c);
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn candidates(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, word: &str, candidates: Vec<String>) {
        self.entries.insert(word.to_lowercase(), candidates);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entries_and_skips_comments() {
        let lex = Lexicon::parse("# header\nhappy\tglad, joyful\n\nSad\tunhappy\n").unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(
            lex.candidates("HAPPY").unwrap(),
            &["glad".to_string(), "joyful".to_string()]
        );
        assert_eq!(lex.candidates("sad").unwrap(), &["unhappy".to_string()]);
        assert!(lex.candidates("other").is_none());
    }

    #[test]
    fn malformed_lines_report_line_number() {
        match Lexicon::parse("ok\tfine\nbroken line\n") {
            Err(PerturbError::LexiconParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            Lexicon::parse("word\ta,,b"),
            Err(PerturbError::LexiconParse { line: 1, .. })
        ));
        assert!(matches!(
            Lexicon::parse("\tcand"),
            Err(PerturbError::LexiconParse { line: 1, .. })
        ));
    }

    #[test]
    fn embedded_table_is_substantial() {
        let lex = Lexicon::embedded();
        assert!(lex.len() >= 1500, "embedded lexicon has {} entries", lex.len());
        for w in ["decide", "grammar", "reply", "sentence", "classify"] {
            assert!(lex.candidates(w).is_some(), "missing {w}");
        }
    }
}
