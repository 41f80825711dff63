//! Whitespace tokenizer over a corpus-derived vocabulary.
//!
//! A program with lines `l1..ln` is encoded as
//! `[CLS] [SEP] l1 [SEP] l2 [SEP] ... ln [SEP]`, so each line is bracketed by
//! separators and neighbouring lines share one.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::program::IrProgram;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
pub const CLS_ID: u32 = 3;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const SEP: &str = "[SEP]";
pub const CLS: &str = "[CLS]";

/// Special tokens in ID order.
pub const SPECIALS: [&str; 4] = [PAD, UNK, SEP, CLS];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    /// Includes the specials at 0..4.
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Builds from regular (non-special) tokens; IDs follow the given order
    /// starting after the specials.
    fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self> {
        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut token_to_id = HashMap::new();
        for tok in tokens {
            if SPECIALS.contains(&tok.as_str()) {
                return Err(Error::MalformedVocabulary(format!(
                    "special token {tok} listed as a regular token"
                )));
            }
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::MalformedVocabulary(format!(
                    "token {tok:?} is empty or contains whitespace"
                )));
            }
            let id = id_to_token.len() as u32;
            if token_to_id.insert(tok.clone(), id).is_some() {
                return Err(Error::MalformedVocabulary(format!("duplicate token {tok}")));
            }
            id_to_token.push(tok);
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
        })
    }

    /// Total number of IDs, specials included.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.len() == SPECIALS.len()
    }

    /// Number of corpus tokens, specials excluded.
    pub fn n_regular(&self) -> usize {
        self.id_to_token.len() - SPECIALS.len()
    }

    /// ID of a corpus token. Specials are not looked up here.
    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Regular tokens in ID order.
    pub fn regular_tokens(&self) -> &[String] {
        &self.id_to_token[SPECIALS.len()..]
    }

    /// One token per line, specials first; the 0-based line number is the ID.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for tok in &self.id_to_token {
            w.write_all(tok.as_bytes())?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = Vec::new();
        for line in r.lines() {
            lines.push(line?);
        }
        for (i, special) in SPECIALS.iter().enumerate() {
            match lines.get(i) {
                Some(l) if l == special => {}
                other => {
                    return Err(Error::MalformedVocabulary(format!(
                        "line {i}: expected {special}, found {other:?}"
                    )))
                }
            }
        }
        Vocabulary::from_tokens(lines.into_iter().skip(SPECIALS.len()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Vocabulary::read_from(std::io::BufReader::new(f))
    }

    /// Rebuilds a vocabulary from its regular tokens in ID order.
    pub fn from_regular_tokens(tokens: Vec<String>) -> Result<Self> {
        Vocabulary::from_tokens(tokens)
    }
}

/// Collects the distinct whitespace-separated tokens of a corpus; IDs are
/// assigned in byte order, so the result does not depend on program order.
pub fn build_vocab(programs: &[IrProgram]) -> Result<Vocabulary> {
    let tokens: BTreeSet<&str> = programs
        .iter()
        .flat_map(|p| p.lines.iter())
        .flat_map(|l| l.split_whitespace())
        .filter(|t| !SPECIALS.contains(t))
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Vocabulary::from_tokens(tokens.into_iter().map(str::to_string))
}

/// The ID sequence of one program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// Half-open token range of each line, separators excluded.
    pub line_spans: Vec<(usize, usize)>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Checks the framing and that every ID is below `vocab_size`.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if let Some(&bad) = self.ids.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::MalformedSequence(format!(
                "id {bad} not below vocabulary size {vocab_size}"
            )));
        }
        if self.ids.len() < 2 || self.ids[0] != CLS_ID || self.ids[1] != SEP_ID {
            return Err(Error::MalformedSequence(
                "sequence must start with [CLS] [SEP]".into(),
            ));
        }
        if *self.ids.last().unwrap() != SEP_ID {
            return Err(Error::MalformedSequence("sequence must end with [SEP]".into()));
        }
        if self.ids[2..].contains(&CLS_ID) {
            return Err(Error::MalformedSequence("[CLS] after position 0".into()));
        }
        Ok(())
    }
}

/// Encodes one program; tokens missing from `vocab` become `[UNK]`.
pub fn encode(program: &IrProgram, vocab: &Vocabulary) -> TokenSequence {
    let mut ids = vec![CLS_ID, SEP_ID];
    let mut line_spans = Vec::with_capacity(program.lines.len());
    for line in &program.lines {
        let start = ids.len();
        ids.extend(
            line.split_whitespace()
                .map(|tok| vocab.id(tok).unwrap_or(UNK_ID)),
        );
        line_spans.push((start, ids.len()));
        ids.push(SEP_ID);
    }
    TokenSequence { ids, line_spans }
}

/// Inverse of [`encode`] for in-vocabulary programs.
pub fn decode(seq: &TokenSequence, vocab: &Vocabulary) -> Result<Vec<String>> {
    seq.validate(vocab.len())?;
    let body = &seq.ids[2..];
    let mut lines = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for &id in body {
        match id {
            SEP_ID => lines.push(std::mem::take(&mut current).join(" ")),
            PAD_ID => {
                return Err(Error::MalformedSequence("[PAD] inside sequence".into()));
            }
            id => current.push(vocab.token(id).expect("validated id")),
        }
    }
    Ok(lines)
}

/// Pads with `[PAD]` or truncates to exactly `max_len` IDs. A truncated
/// sequence keeps a trailing `[SEP]`. The mask is 1 on real tokens.
pub fn pad_or_truncate(seq: &TokenSequence, max_len: usize) -> (Vec<u32>, Vec<u8>) {
    assert!(max_len >= 2, "max_len must be at least 2");
    let n = seq.ids.len();
    if n >= max_len {
        let mut ids = seq.ids[..max_len].to_vec();
        if n > max_len {
            ids[max_len - 1] = SEP_ID;
        }
        (ids, vec![1; max_len])
    } else {
        let mut ids = seq.ids.clone();
        ids.resize(max_len, PAD_ID);
        let mut mask = vec![1u8; n];
        mask.resize(max_len, 0);
        (ids, mask)
    }
}

/// Truncates like [`pad_or_truncate`] but never pads.
pub fn truncate(seq: &TokenSequence, max_len: usize) -> Vec<u32> {
    let (mut ids, mask) = pad_or_truncate(seq, max_len);
    let real = mask.iter().filter(|&&m| m == 1).count();
    ids.truncate(real);
    ids
}
