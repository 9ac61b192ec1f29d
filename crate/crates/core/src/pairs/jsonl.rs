use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{PairError, PairedExample, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PairError + '_ {
    move |source| PairError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes one JSON object per line (LF endings) and returns the count.
pub fn write_jsonl(examples: &[PairedExample], path: &Path) -> Result<usize> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        serde_json::to_writer(&mut w, ex).map_err(|e| PairError::Schema {
            line: 0,
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(examples.len())
}

/// Reads a JSONL file of paired records. Blank lines are skipped; unknown or
/// missing fields are a [`PairError::Schema`] naming the 1-based line.
pub fn read_jsonl(path: &Path) -> Result<Vec<PairedExample>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: PairedExample = serde_json::from_str(&line).map_err(|e| PairError::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(ex);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn ex(i: usize) -> PairedExample {
        let mut kw = BTreeMap::new();
        kw.insert("sentence".to_string(), format!("text {i}\nwith \"quotes\""));
        PairedExample {
            original_instruction: format!("clean {i}"),
            paraphrased_instruction: format!("noisy {i}"),
            targets: "yes".into(),
            task_name: format!("task{}", i % 3),
            keyword_data: kw,
        }
    }

    #[test]
    fn round_trip_three_examples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let data: Vec<_> = (0..3).map(ex).collect();
        assert_eq!(write_jsonl(&data, &path).unwrap(), 3);
        assert_eq!(read_jsonl(&path).unwrap(), data);
        let raw = std::fs::read_to_string(&path).unwrap();
        assert_eq!(raw.lines().count(), 3);
        assert!(!raw.contains('\r'));
    }

    #[test]
    fn records_have_exactly_five_fields() {
        let v = serde_json::to_value(ex(0)).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            [
                "keyword_data",
                "original_instruction",
                "paraphrased_instruction",
                "targets",
                "task_name"
            ]
        );
    }

    #[test]
    fn missing_field_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = serde_json::to_string(&ex(0)).unwrap();
        let bad = r#"{"original_instruction":"a","paraphrased_instruction":"b","task_name":"t","keyword_data":{}}"#;
        std::fs::write(&path, format!("{good}\n{bad}\n")).unwrap();
        match read_jsonl(&path) {
            Err(PairError::Schema { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("targets"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_field_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extra.jsonl");
        let mut v = serde_json::to_value(ex(0)).unwrap();
        v["radius"] = 3.into();
        std::fs::write(&path, format!("{v}\n")).unwrap();
        assert!(matches!(read_jsonl(&path), Err(PairError::Schema { line: 1, .. })));
    }

    #[test]
    fn large_round_trip_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.jsonl");
        let data: Vec<_> = (0..10_000).map(ex).collect();
        write_jsonl(&data, &path).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back.len(), data.len());
        assert!(back
            .iter()
            .zip(&data)
            .all(|(a, b)| a.original_instruction == b.original_instruction));
    }
}
