use super::{CleanPrompt, EditOp, EditRecord, PerturbError, PerturbationKind, PerturbedPrompt, Result};

/// Working copy of a prompt under perturbation.
///
/// Every mutation goes through [`EditBuffer::apply`], which logs the edit and
/// keeps the protected spans aligned with the shifting text.
#[derive(Debug, Clone)]
pub struct EditBuffer {
    text: String,
    protected: Vec<(usize, usize)>,
    edits: Vec<EditRecord>,
}

impl EditBuffer {
    pub fn new(prompt: &CleanPrompt) -> Self {
        Self {
            text: prompt.text().to_string(),
            protected: prompt.protected_spans().to_vec(),
            edits: Vec::new(),
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// True when `[start, end)` intersects a protected span. An empty range
    /// (an insertion point) collides only if it lies strictly inside a span.
    pub fn touches_protected(&self, start: usize, end: usize) -> bool {
        self.protected.iter().any(|&(s, e)| {
            if start == end {
                s < start && start < e
            } else {
                start < e && s < end
            }
        })
    }

    /// Replaces `before` at byte `position` with `after` and returns the
    /// length delta in bytes.
    pub fn apply(&mut self, op: EditOp, position: usize, before: &str, after: &str) -> isize {
        let end = position + before.len();
        debug_assert_eq!(&self.text[position..end], before);
        debug_assert!(!self.touches_protected(position, end));
        self.text.replace_range(position..end, after);
        let delta = after.len() as isize - before.len() as isize;
        for span in &mut self.protected {
            if span.0 >= end {
                span.0 = (span.0 as isize + delta) as usize;
                span.1 = (span.1 as isize + delta) as usize;
            }
        }
        self.edits.push(EditRecord {
            op,
            position,
            before: before.to_string(),
            after: after.to_string(),
        });
        delta
    }

    pub fn finish(self, kind: PerturbationKind) -> PerturbedPrompt {
        let radius = self.edits.len();
        PerturbedPrompt {
            text: self.text,
            kind,
            edits: self.edits,
            radius,
        }
    }
}

/// Re-applies an edit log to `clean`, checking each edit's `before` text.
pub fn replay(clean: &str, edits: &[EditRecord]) -> Result<String> {
    let mut text = clean.to_string();
    for (index, e) in edits.iter().enumerate() {
        let end = e.position.checked_add(e.before.len());
        match end {
            Some(end) if text.get(e.position..end) == Some(e.before.as_str()) => {
                text.replace_range(e.position..end, &e.after);
            }
            _ => return Err(PerturbError::ReplayMismatch { index }),
        }
    }
    Ok(text)
}
