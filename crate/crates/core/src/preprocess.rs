//! Normalisation of raw IR programs: user-defined function stripping, local
//! renumbering and the line-count filter.
//!
//! Every rule keeps `line_labels` aligned with `lines`: a surviving line
//! always carries the label it had before the rule ran.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::program::{canonical_line, IrProgram};

/// Programs must have strictly fewer lines than this to be kept.
pub const DEFAULT_MAX_LINES: usize = 265;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Exclusive upper bound on line count. `usize::MAX` disables the filter.
    pub max_lines: usize,
    pub strip_user_functions: bool,
    pub normalize_locals: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            max_lines: DEFAULT_MAX_LINES,
            strip_user_functions: true,
            normalize_locals: true,
        }
    }
}

impl PreprocessConfig {
    /// Disables every rule.
    pub fn identity() -> Self {
        PreprocessConfig {
            max_lines: usize::MAX,
            strip_user_functions: false,
            normalize_locals: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_lines == 0 {
            return Err(Error::Config("max_lines must be at least 1".into()));
        }
        Ok(())
    }
}

fn is_call_line(line: &str) -> bool {
    line.split_whitespace().any(|tok| tok == "call")
}

fn is_define_line(line: &str) -> bool {
    line.trim_start().starts_with("define")
}

/// Index of the line that closes the function opened at `start`, found by
/// brace-depth counting.
fn matching_close(lines: &[String], start: usize) -> Option<usize> {
    let mut depth: i64 = 0;
    let mut opened = false;
    for (j, line) in lines.iter().enumerate().skip(start) {
        for ch in line.chars() {
            match ch {
                '{' => {
                    depth += 1;
                    opened = true;
                }
                '}' => depth -= 1,
                _ => {}
            }
        }
        if opened && depth <= 0 {
            return Some(j);
        }
    }
    None
}

/// Removes every user-defined function wrapper: a `call` line immediately
/// followed by a `define` line, together with the brace that closes that
/// function. The function body stays in place.
///
/// Pairs are handled first-to-last and the program is rescanned after each
/// removal, so a wrapper nested inside another body is removed as well.
pub fn strip_user_functions(program: &IrProgram) -> Result<IrProgram> {
    program.validate()?;
    // (original index, text, label)
    let mut rows: Vec<(usize, String, u8)> = program
        .lines
        .iter()
        .cloned()
        .zip(program.line_labels.iter().copied())
        .enumerate()
        .map(|(i, (l, y))| (i, l, y))
        .collect();

    loop {
        let texts: Vec<String> = rows.iter().map(|r| r.1.clone()).collect();
        let pair = (0..texts.len().saturating_sub(1))
            .find(|&i| is_call_line(&texts[i]) && is_define_line(&texts[i + 1]));
        let Some(call) = pair else { break };
        let define = call + 1;
        let close = matching_close(&texts, define).ok_or_else(|| Error::MalformedFunctionBlock {
            id: program.id.clone(),
            line: rows[define].0,
        })?;

        let mut removed = vec![call, define];
        if close != define {
            removed.push(close);
        }
        for &r in &removed {
            if rows[r].2 == 1 {
                return Err(Error::LabelOnRemovedLine {
                    id: program.id.clone(),
                    line: rows[r].0,
                });
            }
        }
        removed.sort_unstable();
        for &r in removed.iter().rev() {
            rows.remove(r);
        }
    }

    // Unpaired definitions are kept, but must still be well formed.
    let texts: Vec<String> = rows.iter().map(|r| r.1.clone()).collect();
    for (i, t) in texts.iter().enumerate() {
        if is_define_line(t) && matching_close(&texts, i).is_none() {
            return Err(Error::MalformedFunctionBlock {
                id: program.id.clone(),
                line: rows[i].0,
            });
        }
    }

    Ok(IrProgram {
        id: program.id.clone(),
        lines: rows.iter().map(|r| r.1.clone()).collect(),
        label: program.label,
        line_labels: rows.iter().map(|r| r.2).collect(),
    })
}

fn local_ident_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"%[-A-Za-z$._0-9]+").expect("valid regex"))
}

/// Named struct/union/class types share the `%` sigil with locals but are
/// types, not values.
fn is_named_type(ident: &str) -> bool {
    ["%struct.", "%union.", "%class."]
        .iter()
        .any(|p| ident.starts_with(p))
}

/// Renames every local `%name` to `%k`, k being the 1-based rank of its first
/// occurrence across the whole program.
pub fn normalize_locals(program: &IrProgram) -> IrProgram {
    let re = local_ident_re();
    let mut ids: HashMap<String, usize> = HashMap::new();
    let lines = program
        .lines
        .iter()
        .map(|line| {
            re.replace_all(line, |caps: &regex::Captures<'_>| {
                let ident = &caps[0];
                if is_named_type(ident) {
                    return ident.to_string();
                }
                let next = ids.len() + 1;
                let k = *ids.entry(ident.to_string()).or_insert(next);
                format!("%{k}")
            })
            .into_owned()
        })
        .collect();
    IrProgram {
        id: program.id.clone(),
        lines,
        label: program.label,
        line_labels: program.line_labels.clone(),
    }
}

/// Keeps programs with strictly fewer than `cfg.max_lines` lines.
pub fn filter_by_length(programs: &[IrProgram], cfg: &PreprocessConfig) -> Vec<IrProgram> {
    programs
        .iter()
        .filter(|p| p.len() < cfg.max_lines)
        .cloned()
        .collect()
}

/// Trims lines and collapses internal whitespace runs to one space.
pub fn canonicalize_whitespace(program: &IrProgram) -> IrProgram {
    IrProgram {
        id: program.id.clone(),
        lines: program.lines.iter().map(|l| canonical_line(l)).collect(),
        label: program.label,
        line_labels: program.line_labels.clone(),
    }
}

/// Whitespace canonicalisation, then strip, normalise and filter.
pub fn preprocess(programs: &[IrProgram], cfg: &PreprocessConfig) -> Result<Vec<IrProgram>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(programs.len());
    for p in programs {
        let mut q = canonicalize_whitespace(p);
        if cfg.strip_user_functions {
            q = strip_user_functions(&q)?;
        }
        if cfg.normalize_locals {
            q = normalize_locals(&q);
        }
        q.validate()?;
        out.push(q);
    }
    Ok(filter_by_length(&out, cfg))
}
