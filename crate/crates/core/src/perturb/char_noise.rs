//! Character-level (DeepWordBug) and word-level (TextFooler) noise.

use super::{CleanPrompt, EditBuffer, EditOp, Lexicon, PerturbError, PerturbationKind, PerturbedPrompt, Result};
use crate::rng::SeededRng;

const MIN_WORD_CHARS: usize = 3;
const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

/// A tracked word: its current byte span and the lowercase form it had in
/// the clean prompt.
#[derive(Debug, Clone)]
struct Word {
    start: usize,
    end: usize,
    key: String,
}

/// Maximal alphabetic runs of at least three characters that avoid every
/// protected span.
fn eligible_words(buf: &EditBuffer) -> Vec<Word> {
    let text = buf.text();
    let mut words = Vec::new();
    let mut current: Option<(usize, usize)> = None; // (start byte, char count)
    let flush = |start: usize, count: usize, end: usize, words: &mut Vec<Word>| {
        if count >= MIN_WORD_CHARS && !buf.touches_protected(start, end) {
            words.push(Word {
                start,
                end,
                key: text[start..end].to_lowercase(),
            });
        }
    };
    for (i, c) in text.char_indices() {
        if c.is_alphabetic() {
            current = match current {
                Some((s, n)) => Some((s, n + 1)),
                None => Some((i, 1)),
            };
        } else if let Some((s, n)) = current.take() {
            flush(s, n, i, &mut words);
        }
    }
    if let Some((s, n)) = current {
        flush(s, n, text.len(), &mut words);
    }
    words
}

fn shift_after(words: &mut [Word], index: usize, delta: isize) {
    words[index].end = (words[index].end as isize + delta) as usize;
    for w in &mut words[index + 1..] {
        w.start = (w.start as isize + delta) as usize;
        w.end = (w.end as isize + delta) as usize;
    }
}

/// Applies one character operation to `word` at character index `index`.
///
/// `letter` is the inserted or substituted character; it is ignored by the
/// other operations. Returns `None` when the index is out of range for `op`.
pub fn apply_char_op(word: &str, op: EditOp, index: usize, letter: char) -> Option<String> {
    let mut chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    match op {
        EditOp::CharInsert if index <= n => chars.insert(index, letter),
        EditOp::CharDelete if index < n => {
            chars.remove(index);
        }
        EditOp::CharRepeat if index < n => {
            let c = chars[index];
            chars.insert(index, c);
        }
        EditOp::CharSubstitute if index < n => chars[index] = letter,
        EditOp::CharSwap if index + 1 < n => chars.swap(index, index + 1),
        _ => return None,
    }
    Some(chars.into_iter().collect())
}

fn random_letter(rng: &mut SeededRng) -> char {
    LETTERS[rng.index(LETTERS.len())] as char
}

/// Letter different from `current` when `current` is itself a lowercase letter.
fn substitute_letter(current: char, rng: &mut SeededRng) -> char {
    if current.is_ascii_lowercase() {
        let pool: Vec<u8> = LETTERS.iter().copied().filter(|&b| b as char != current).collect();
        pool[rng.index(pool.len())] as char
    } else {
        random_letter(rng)
    }
}

/// Applies `reps` character edits, each to a uniformly chosen eligible word.
pub(super) fn deep_word_bug(prompt: &CleanPrompt, reps: usize, rng: &mut SeededRng) -> Result<PerturbedPrompt> {
    let mut buf = EditBuffer::new(prompt);
    let mut words = eligible_words(&buf);
    if words.is_empty() {
        return Err(PerturbError::NoEligibleWord);
    }
    for _ in 0..reps {
        let wi = rng.index(words.len());
        let (start, end) = (words[wi].start, words[wi].end);
        let chars: Vec<(usize, char)> = buf.text()[start..end].char_indices().collect();
        let n = chars.len();
        let swappable: Vec<usize> = (0..n.saturating_sub(1))
            .filter(|&i| chars[i].1 != chars[i + 1].1)
            .collect();

        let mut ops = vec![EditOp::CharInsert, EditOp::CharRepeat, EditOp::CharSubstitute];
        if n >= 2 {
            ops.push(EditOp::CharDelete);
        }
        if !swappable.is_empty() {
            ops.push(EditOp::CharSwap);
        }
        let op = *rng.choose(&ops);

        let byte_at = |ci: usize| if ci < n { start + chars[ci].0 } else { end };
        let (position, before, after) = match op {
            EditOp::CharInsert => {
                let ci = rng.range_inclusive(0, n);
                (byte_at(ci), String::new(), random_letter(rng).to_string())
            }
            EditOp::CharDelete => {
                let ci = rng.index(n);
                (byte_at(ci), chars[ci].1.to_string(), String::new())
            }
            EditOp::CharRepeat => {
                let ci = rng.index(n);
                let c = chars[ci].1;
                (byte_at(ci), c.to_string(), format!("{c}{c}"))
            }
            EditOp::CharSubstitute => {
                let ci = rng.index(n);
                let c = chars[ci].1;
                (byte_at(ci), c.to_string(), substitute_letter(c, rng).to_string())
            }
            EditOp::CharSwap => {
                let ci = *rng.choose(&swappable);
                let (a, b) = (chars[ci].1, chars[ci + 1].1);
                (byte_at(ci), format!("{a}{b}"), format!("{b}{a}"))
            }
            _ => unreachable!("not a character op"),
        };
        let delta = buf.apply(op, position, &before, &after);
        shift_after(&mut words, wi, delta);
    }
    Ok(buf.finish(PerturbationKind::DeepWordBug))
}

/// Carries the capitalization of `original` over to `replacement`.
fn match_case(original: &str, replacement: &str) -> String {
    let mut oc = original.chars();
    let first_upper = oc.next().is_some_and(char::is_uppercase);
    let all_upper = first_upper && original.chars().count() > 1 && original.chars().all(|c| !c.is_lowercase());
    if all_upper {
        replacement.to_uppercase()
    } else if first_upper {
        let mut rc = replacement.chars();
        match rc.next() {
            Some(c) => c.to_uppercase().chain(rc).collect(),
            None => String::new(),
        }
    } else {
        replacement.to_string()
    }
}

/// Applies `reps` lexicon substitutions. Targets are the eligible words whose
/// clean form has lexicon candidates; a word hit twice draws again from the
/// candidates of its clean form.
pub(super) fn text_fooler(
    prompt: &CleanPrompt,
    lexicon: &Lexicon,
    reps: usize,
    rng: &mut SeededRng,
) -> Result<PerturbedPrompt> {
    let mut buf = EditBuffer::new(prompt);
    let mut words: Vec<Word> = eligible_words(&buf)
        .into_iter()
        .filter(|w| lexicon.candidates(&w.key).is_some_and(|c| !c.is_empty()))
        .collect();
    if words.is_empty() {
        return Err(PerturbError::NoEligibleWord);
    }
    for _ in 0..reps {
        // candidates that would change the current text; a word whose only
        // candidates equal its current form is skipped while others remain
        let fresh = |w: &Word, text: &str| -> Vec<String> {
            let current = &text[w.start..w.end];
            lexicon
                .candidates(&w.key)
                .expect("filtered above")
                .iter()
                .filter(|c| !c.eq_ignore_ascii_case(current))
                .cloned()
                .collect()
        };
        let changeable: Vec<usize> = (0..words.len())
            .filter(|&i| !fresh(&words[i], buf.text()).is_empty())
            .collect();
        let wi = if changeable.is_empty() {
            rng.index(words.len())
        } else {
            *rng.choose(&changeable)
        };
        let (start, end) = (words[wi].start, words[wi].end);
        let current = buf.text()[start..end].to_string();
        let mut candidates = fresh(&words[wi], buf.text());
        if candidates.is_empty() {
            candidates = lexicon.candidates(&words[wi].key).expect("filtered above").to_vec();
        }
        let replacement = match_case(&current, rng.choose(&candidates));
        let delta = buf.apply(EditOp::WordSubstitute, start, &current, &replacement);
        shift_after(&mut words, wi, delta);
    }
    Ok(buf.finish(PerturbationKind::TextFooler))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::{replay, structural_radius};

    #[test]
    fn substitute_matches_table_example() {
        assert_eq!(
            apply_char_op("decide", EditOp::CharSubstitute, 3, 'm').unwrap(),
            "decmde"
        );
    }

    #[test]
    fn char_ops_on_a_word() {
        assert_eq!(apply_char_op("reply", EditOp::CharInsert, 3, 'v').unwrap(), "repvly");
        assert_eq!(apply_char_op("reply", EditOp::CharInsert, 5, 's').unwrap(), "replys");
        assert_eq!(apply_char_op("must", EditOp::CharSwap, 0, ' ').unwrap(), "umst");
        assert_eq!(
            apply_char_op("acceptable", EditOp::CharDelete, 8, ' ').unwrap(),
            "acceptabe"
        );
        assert_eq!(apply_char_op("only", EditOp::CharRepeat, 1, ' ').unwrap(), "onnly");
        assert!(apply_char_op("ab", EditOp::CharSwap, 1, ' ').is_none());
        assert!(apply_char_op("ab", EditOp::CharDelete, 2, ' ').is_none());
    }

    #[test]
    fn eligible_words_skip_short_and_protected() {
        let p = CleanPrompt::with_protected("is it Acceptable or not", vec![(6, 16)]).unwrap();
        let w = eligible_words(&EditBuffer::new(&p));
        let keys: Vec<&str> = w.iter().map(|w| w.key.as_str()).collect();
        assert_eq!(keys, vec!["not"]);
    }

    #[test]
    fn no_eligible_word_is_an_error() {
        let p = CleanPrompt::new("is it ok").unwrap();
        let mut rng = SeededRng::new(1);
        assert!(matches!(
            deep_word_bug(&p, 4, &mut rng),
            Err(PerturbError::NoEligibleWord)
        ));
    }

    #[test]
    fn deep_word_bug_replays_exactly() {
        let p = CleanPrompt::new("classify the sentence").unwrap();
        let mut rng = SeededRng::new(42);
        let out = deep_word_bug(&p, 4, &mut rng).unwrap();
        assert_eq!(out.radius, 4);
        assert!(out.edits.iter().all(|e| e.is_consistent()));
        assert_eq!(replay(p.text(), &out.edits).unwrap(), out.text);
        assert_eq!(structural_radius(&p, &out).unwrap(), 4);
    }

    #[test]
    fn deep_word_bug_survives_heavy_editing_of_one_short_word() {
        let p = CleanPrompt::new("cat").unwrap();
        for seed in 0..50 {
            let mut rng = SeededRng::new(seed);
            let out = deep_word_bug(&p, 30, &mut rng).unwrap();
            assert_eq!(out.radius, 30);
            assert_eq!(replay(p.text(), &out.edits).unwrap(), out.text);
        }
    }

    #[test]
    fn protected_spans_are_untouched() {
        let text = "Answer with 'entailment' or 'contradiction' please";
        let start = text.find("'entailment'").unwrap();
        let end = text.find("please").unwrap();
        let p = CleanPrompt::with_protected(text, vec![(start, end)]).unwrap();
        for seed in 0..100 {
            let out = deep_word_bug(&p, 8, &mut SeededRng::new(seed)).unwrap();
            assert!(out.text.contains("'entailment' or 'contradiction' "));
        }
    }

    #[test]
    fn single_candidate_lexicon_forces_substitution() {
        let lex = Lexicon::parse("happy\tglad\n").unwrap();
        let p = CleanPrompt::new("happy day").unwrap();
        let out = text_fooler(&p, &lex, 1, &mut SeededRng::new(0)).unwrap();
        assert_eq!(out.text, "glad day");
        assert_eq!(out.edits[0].op, EditOp::WordSubstitute);
    }

    #[test]
    fn text_fooler_keeps_capitalization() {
        let lex = Lexicon::parse("your\taimes\n").unwrap();
        let p = CleanPrompt::new("Your reply").unwrap();
        let out = text_fooler(&p, &lex, 1, &mut SeededRng::new(0)).unwrap();
        assert_eq!(out.text, "Aimes reply");
    }

    #[test]
    fn text_fooler_table_example() {
        let lex = Lexicon::parse("its\tses\ngrammar\ttypist\n").unwrap();
        let p = CleanPrompt::new("its grammar").unwrap();
        // two substitutions landing on different words
        let out = (0..)
            .map(|seed| text_fooler(&p, &lex, 2, &mut SeededRng::new(seed)).unwrap())
            .find(|o| o.edits[0].position != o.edits[1].position)
            .unwrap();
        assert_eq!(out.text, "ses typist");
    }

    #[test]
    fn text_fooler_never_substitutes_a_word_for_itself() {
        let lex = Lexicon::parse("next\tfollowing,subsequent\nfollowing\tnext,subsequent\n").unwrap();
        let p = CleanPrompt::new("the next following item").unwrap();
        for seed in 0..200 {
            let out = text_fooler(&p, &lex, 8, &mut SeededRng::new(seed)).unwrap();
            assert_eq!(out.radius, 8);
            assert!(
                out.edits.iter().all(|e| !e.before.eq_ignore_ascii_case(&e.after)),
                "seed {seed}"
            );
        }
        // only one word, whose single candidate is reached after one hit
        let lex = Lexicon::parse("cat\tdog\n").unwrap();
        let out = text_fooler(&CleanPrompt::new("cat").unwrap(), &lex, 3, &mut SeededRng::new(1)).unwrap();
        assert_eq!(out.radius, 3);
        assert_eq!(out.text, "dog");
    }

    #[test]
    fn text_fooler_without_candidates_errors() {
        let lex = Lexicon::parse("happy\tglad\n").unwrap();
        let p = CleanPrompt::new("sad day").unwrap();
        assert!(matches!(
            text_fooler(&p, &lex, 1, &mut SeededRng::new(0)),
            Err(PerturbError::NoEligibleWord)
        ));
    }

    #[test]
    fn case_matching() {
        assert_eq!(match_case("Word", "term"), "Term");
        assert_eq!(match_case("WORD", "term"), "TERM");
        assert_eq!(match_case("word", "term"), "term");
    }
}
