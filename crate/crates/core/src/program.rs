//! The `IrProgram` record and its JSON Lines representation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One LLVM-IR program with its program-level and per-line labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IrProgram {
    pub id: String,
    pub lines: Vec<String>,
    /// 1 = vulnerable.
    pub label: u8,
    /// One entry per line, 1 where the line is a vulnerability site.
    pub line_labels: Vec<u8>,
}

impl IrProgram {
    /// Builds a program from the JSONL view, where vulnerable lines are given
    /// as 0-based indices.
    pub fn new(
        id: impl Into<String>,
        lines: Vec<String>,
        label: u8,
        vuln_lines: &[usize],
    ) -> Result<Self> {
        let id = id.into();
        let mut line_labels = vec![0u8; lines.len()];
        for &idx in vuln_lines {
            match line_labels.get_mut(idx) {
                Some(slot) => *slot = 1,
                None => {
                    return Err(Error::InvalidProgram {
                        id,
                        reason: format!(
                            "vulnerable line index {idx} out of range for {} lines",
                            lines.len()
                        ),
                    })
                }
            }
        }
        let program = IrProgram {
            id,
            lines,
            label,
            line_labels,
        };
        program.validate()?;
        Ok(program)
    }

    /// Unlabelled program, e.g. for prediction on raw IR text.
    pub fn unlabeled(id: impl Into<String>, lines: Vec<String>) -> Self {
        let line_labels = vec![0; lines.len()];
        IrProgram {
            id: id.into(),
            lines,
            label: 0,
            line_labels,
        }
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn vuln_lines(&self) -> Vec<usize> {
        self.line_labels
            .iter()
            .enumerate()
            .filter_map(|(i, &y)| (y == 1).then_some(i))
            .collect()
    }

    /// Checks the structural invariants that hold for every program, raw or
    /// preprocessed.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::InvalidProgram {
                id: self.id.clone(),
                reason,
            })
        };
        if self.label > 1 {
            return fail(format!("program label must be 0 or 1, got {}", self.label));
        }
        if self.line_labels.len() != self.lines.len() {
            return fail(format!(
                "{} line labels for {} lines",
                self.line_labels.len(),
                self.lines.len()
            ));
        }
        if let Some(bad) = self.line_labels.iter().find(|&&y| y > 1) {
            return fail(format!("line label must be 0 or 1, got {bad}"));
        }
        if self.label == 0 && self.line_labels.contains(&1) {
            return fail("benign program has a vulnerable line".to_string());
        }
        if let Some(i) = self.lines.iter().position(|l| l.contains('\n')) {
            return fail(format!("line {i} contains an embedded newline"));
        }
        Ok(())
    }

    /// True when every line is trimmed and tokens are separated by exactly one
    /// space.
    pub fn is_whitespace_canonical(&self) -> bool {
        self.lines.iter().all(|l| canonical_line(l) == *l)
    }
}

/// Collapses whitespace runs to a single space and trims both ends.
pub fn canonical_line(line: &str) -> String {
    line.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// On-disk JSONL record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramRecord {
    pub id: String,
    pub lines: Vec<String>,
    pub label: u8,
    #[serde(default)]
    pub vuln_lines: Vec<usize>,
}

impl From<&IrProgram> for ProgramRecord {
    fn from(p: &IrProgram) -> Self {
        ProgramRecord {
            id: p.id.clone(),
            lines: p.lines.clone(),
            label: p.label,
            vuln_lines: p.vuln_lines(),
        }
    }
}

impl TryFrom<ProgramRecord> for IrProgram {
    type Error = Error;

    fn try_from(r: ProgramRecord) -> Result<Self> {
        IrProgram::new(r.id, r.lines, r.label, &r.vuln_lines)
    }
}
