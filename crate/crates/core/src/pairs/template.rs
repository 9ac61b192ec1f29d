use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PairError, Result};

/// An instruction template for one task. Placeholders are written `{name}`;
/// literal braces are doubled (`{{`, `}}`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTemplate {
    pub task_name: String,
    pub template_text: String,
    #[serde(default)]
    pub option_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece<'a> {
    Literal(String),
    Field(&'a str),
}

fn parse(template: &str) -> Result<Vec<Piece<'_>>> {
    let mut pieces = Vec::new();
    let mut literal = String::new();
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                literal.push('{');
                i += 2;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                literal.push('}');
                i += 2;
            }
            b'{' => {
                let close = template[i + 1..]
                    .find('}')
                    .ok_or_else(|| PairError::TemplateSyntax(format!("unclosed `{{` at byte {i}")))?;
                let name = &template[i + 1..i + 1 + close];
                if name.is_empty() || !name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
                    return Err(PairError::TemplateSyntax(format!("bad placeholder name `{name}`")));
                }
                if !literal.is_empty() {
                    pieces.push(Piece::Literal(std::mem::take(&mut literal)));
                }
                pieces.push(Piece::Field(name));
                i += close + 2;
            }
            b'}' => return Err(PairError::TemplateSyntax(format!("stray `}}` at byte {i}"))),
            _ => {
                // copy one full UTF-8 character
                let ch = template[i..].chars().next().expect("in bounds");
                literal.push(ch);
                i += ch.len_utf8();
            }
        }
    }
    if !literal.is_empty() {
        pieces.push(Piece::Literal(literal));
    }
    Ok(pieces)
}

impl TaskTemplate {
    pub fn new(task_name: impl Into<String>, template_text: impl Into<String>, option_labels: Vec<String>) -> Self {
        Self {
            task_name: task_name.into(),
            template_text: template_text.into(),
            option_labels,
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Result<Vec<String>> {
        let mut names: Vec<String> = Vec::new();
        for piece in parse(&self.template_text)? {
            if let Piece::Field(name) = piece {
                if !names.iter().any(|n| n == name) {
                    names.push(name.to_string());
                }
            }
        }
        Ok(names)
    }

    pub fn render(&self, fields: &BTreeMap<String, String>) -> Result<String> {
        let mut out = String::with_capacity(self.template_text.len());
        for piece in parse(&self.template_text)? {
            match piece {
                Piece::Literal(s) => out.push_str(&s),
                Piece::Field(name) => {
                    let value = fields
                        .get(name)
                        .ok_or_else(|| PairError::MissingPlaceholder(name.to_string()))?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

/// Reads a JSON array of templates.
pub fn load_templates(path: &std::path::Path) -> Result<Vec<TaskTemplate>> {
    let text = std::fs::read_to_string(path).map_err(|source| PairError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_templates(&text)
}

pub fn parse_templates(json: &str) -> Result<Vec<TaskTemplate>> {
    let templates: Vec<TaskTemplate> = serde_json::from_str(json).map_err(|e| PairError::Schema {
        line: e.line(),
        message: e.to_string(),
    })?;
    for t in &templates {
        t.placeholders()?;
    }
    Ok(templates)
}
