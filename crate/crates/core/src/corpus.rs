//! JSONL dataset I/O, a seeded synthetic corpus generator and train/test
//! splitting.
//!
//! The generator plants a function-call vulnerability: an unbounded copy such
//! as `call i8* @strcpy(...)` with no `icmp ule` length guard anywhere before
//! it. Benign programs either guard the copy or never make it.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::DEFAULT_MAX_LINES;
use crate::program::{IrProgram, ProgramRecord};

/// Reads JSONL records, one program per non-blank line. Errors carry the
/// 1-based line number.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<IrProgram>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ProgramRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let program = IrProgram::try_from(record).map_err(|e| Error::InvariantViolation {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(program);
    }
    Ok(out)
}

pub fn write_dataset<W: Write>(mut writer: W, programs: &[IrProgram]) -> Result<()> {
    for p in programs {
        serde_json::to_writer(&mut writer, &ProgramRecord::from(p))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<IrProgram>> {
    let f = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(f))
}

pub fn save_dataset(path: impl AsRef<Path>, programs: &[IrProgram]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_dataset(std::io::BufWriter::new(f), programs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_programs: usize,
    pub vulnerable_fraction: f64,
    pub seed: u64,
    /// Bounds on the raw line count, before wrapper stripping.
    pub min_lines: usize,
    pub max_lines: usize,
    /// Unsafe copy routines to plant, e.g. `strcpy`.
    pub pattern_set: Vec<String>,
    /// Chance that a program wraps part of its body in a user-defined
    /// function (a `call` line followed by a `define` block).
    pub wrapper_probability: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_programs: 1000,
            vulnerable_fraction: 0.5,
            seed: 0,
            min_lines: 8,
            max_lines: 16,
            pattern_set: vec!["strcpy".into(), "strcat".into(), "memcpy".into()],
            wrapper_probability: 0.2,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_programs == 0 {
            return err("n_programs must be at least 1".into());
        }
        if !(self.vulnerable_fraction > 0.0 && self.vulnerable_fraction < 1.0) {
            return err(format!(
                "vulnerable_fraction {} not in (0, 1)",
                self.vulnerable_fraction
            ));
        }
        // Room for the prologue, the two guard lines, the copy and the return.
        if self.min_lines < 7 {
            return err("min_lines must be at least 7".into());
        }
        if self.min_lines > self.max_lines || self.max_lines >= DEFAULT_MAX_LINES {
            return err(format!(
                "need min_lines <= max_lines < {DEFAULT_MAX_LINES}, got {}..{}",
                self.min_lines, self.max_lines
            ));
        }
        if self.pattern_set.is_empty() {
            return err("pattern_set is empty".into());
        }
        if let Some(p) = self
            .pattern_set
            .iter()
            .find(|p| p.is_empty() || !p.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_'))
        {
            return err(format!("pattern name {p:?} is not a plain identifier"));
        }
        if !(0.0..=1.0).contains(&self.wrapper_probability) {
            return err("wrapper_probability not in [0, 1]".into());
        }
        Ok(())
    }

    /// Number of vulnerable programs the generator emits.
    pub fn n_vulnerable(&self) -> usize {
        ((self.n_programs as f64 * self.vulnerable_fraction).round() as usize)
            .clamp(1, self.n_programs.saturating_sub(1).max(1))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    /// Unguarded copy.
    Vulnerable,
    /// Guard, then copy.
    Guarded,
    /// No copy at all; may still contain a guard.
    NoCopy { guard: bool },
}

/// Tracks SSA values by rough type so generated lines stay plausible.
struct Emitter<'a> {
    rng: &'a mut ChaCha8Rng,
    next: usize,
    ints: Vec<usize>,
    ptrs: Vec<usize>,
    bufs: Vec<usize>,
    wides: Vec<usize>,
}

impl<'a> Emitter<'a> {
    fn new(rng: &'a mut ChaCha8Rng) -> Self {
        Emitter {
            rng,
            next: 1,
            ints: Vec::new(),
            ptrs: Vec::new(),
            bufs: Vec::new(),
            wides: Vec::new(),
        }
    }

    fn fresh(&mut self) -> usize {
        let v = self.next;
        self.next += 1;
        v
    }

    fn pick(&mut self, pool: fn(&Self) -> &Vec<usize>) -> usize {
        let len = pool(self).len();
        let i = self.rng.gen_range(0..len);
        pool(self)[i]
    }

    fn prologue(&mut self) -> Vec<String> {
        let buf = self.fresh();
        self.bufs.push(buf);
        let src = self.fresh();
        self.ptrs.push(src);
        let n = self.fresh();
        self.ints.push(n);
        vec![
            format!("%{buf} = alloca [64 x i8], align 16"),
            format!("%{src} = alloca i8*, align 8"),
            format!("%{n} = alloca i32, align 4"),
        ]
    }

    fn distractor(&mut self) -> String {
        match self.rng.gen_range(0..9) {
            0 => {
                let p = self.pick(|e| &e.ints);
                let c = self.rng.gen_range(0..100);
                format!("store i32 {c}, i32* %{p}, align 4")
            }
            1 => {
                let p = self.pick(|e| &e.ints);
                let k = self.fresh();
                self.ints.push(k);
                format!("%{k} = load i32, i32* %{p}, align 4")
            }
            2 => {
                let a = self.pick(|e| &e.ints);
                let b = self.pick(|e| &e.ints);
                let op = ["add nsw", "sub nsw", "mul nsw"][self.rng.gen_range(0..3)];
                let k = self.fresh();
                self.ints.push(k);
                format!("%{k} = {op} i32 %{a}, %{b}")
            }
            3 => {
                let a = self.pick(|e| &e.ints);
                let b = self.pick(|e| &e.ints);
                let pred = ["eq", "ne", "slt", "sgt"][self.rng.gen_range(0..4)];
                let k = self.fresh();
                format!("%{k} = icmp {pred} i32 %{a}, %{b}")
            }
            4 => {
                let a = self.pick(|e| &e.ints);
                let k = self.fresh();
                self.wides.push(k);
                format!("%{k} = sext i32 %{a} to i64")
            }
            5 => {
                let b = self.pick(|e| &e.bufs);
                let k = self.fresh();
                self.ptrs.push(k);
                format!(
                    "%{k} = getelementptr inbounds [64 x i8], [64 x i8]* %{b}, i64 0, i64 0"
                )
            }
            6 => {
                let p = self.pick(|e| &e.ptrs);
                let k = self.fresh();
                self.wides.push(k);
                format!("%{k} = call i64 @strlen(i8* %{p})")
            }
            7 => {
                let p = self.pick(|e| &e.ptrs);
                let k = self.fresh();
                self.ints.push(k);
                format!("%{k} = call i32 (i8*, ...) @printf(i8* %{p})")
            }
            _ => {
                let p = self.pick(|e| &e.ptrs);
                format!("call void @free(i8* %{p})")
            }
        }
    }

    /// Bounds check on a length value followed by the branch it guards.
    fn guard(&mut self) -> [String; 2] {
        let k = self.fresh();
        let cmp = if self.wides.is_empty() {
            let n = self.pick(|e| &e.ints);
            format!("%{k} = icmp ule i32 %{n}, 64")
        } else {
            let w = self.pick(|e| &e.wides);
            format!("%{k} = icmp ule i64 %{w}, 64")
        };
        let ok = self.fresh();
        let bad = self.fresh();
        [cmp, format!("br i1 %{k}, label %{ok}, label %{bad}")]
    }

    fn copy(&mut self, routine: &str) -> String {
        let dst = self.pick(|e| &e.ptrs);
        let src = self.pick(|e| &e.ptrs);
        let k = self.fresh();
        self.ptrs.push(k);
        if routine == "memcpy" {
            let n = self.pick(|e| &e.ints);
            format!("%{k} = call i8* @memcpy(i8* %{dst}, i8* %{src}, i32 %{n})")
        } else {
            format!("%{k} = call i8* @{routine}(i8* %{dst}, i8* %{src})")
        }
    }
}

fn generate_one(
    spec: &CorpusSpec,
    index: usize,
    kind: Kind,
    rng: &mut ChaCha8Rng,
) -> IrProgram {
    let total = rng.gen_range(spec.min_lines..=spec.max_lines);
    // A wrapper costs three lines, and the body keeps at least one
    // distractor besides the prologue, guard, copy and return.
    let wrapped = total >= 11 && rng.gen_bool(spec.wrapper_probability);
    let body_len = if wrapped { total - 3 } else { total };
    let routine = spec.pattern_set[rng.gen_range(0..spec.pattern_set.len())].clone();
    let helper = rng.gen_range(0..100_000);

    let mut em = Emitter::new(rng);
    let mut lines = em.prologue();
    let slots = body_len - lines.len();
    // Positions (relative to the slots after the prologue) of the guard and
    // the copy; the guard always comes first and the last slot is the return.
    let copy_at = em.rng.gen_range(2..slots - 1);
    let guard_at = em.rng.gen_range(0..copy_at - 1);
    let has_copy = !matches!(kind, Kind::NoCopy { .. });
    let has_guard = matches!(kind, Kind::Guarded | Kind::NoCopy { guard: true });

    let mut vuln_line = None;
    let mut planted = Vec::new();
    let mut slot = 0;
    while slot < slots {
        if has_guard && slot == guard_at {
            for line in em.guard() {
                planted.push(lines.len());
                lines.push(line);
            }
            slot += 2;
            continue;
        }
        let line = if has_copy && slot == copy_at {
            planted.push(lines.len());
            if kind == Kind::Vulnerable {
                vuln_line = Some(lines.len());
            }
            em.copy(&routine)
        } else {
            em.distractor()
        };
        lines.push(line);
        slot += 1;
    }
    let ret = em.pick(|e| &e.ints);
    *lines.last_mut().unwrap() = format!("ret i32 %{ret}");

    // Move a contiguous stretch of distractors into a user-defined function.
    // The planted lines stay outside it, so stripping never changes the label.
    let gaps: Vec<(usize, usize)> = {
        let mut cuts = planted.clone();
        cuts.push(lines.len() - 1);
        let mut from = 3;
        let mut gaps = Vec::new();
        for c in cuts {
            if c > from {
                gaps.push((from, c));
            }
            from = c + 1;
        }
        gaps
    };
    if wrapped && !gaps.is_empty() {
        let (lo, hi) = gaps[em.rng.gen_range(0..gaps.len())];
        let start = em.rng.gen_range(lo..hi);
        let end = em.rng.gen_range(start + 1..=hi);
        let arg = em.pick(|e| &e.ints);
        let k = em.fresh();
        let header = [
            format!("%{k} = call i32 @helper_{helper}(i32 %{arg})"),
            format!("define internal i32 @helper_{helper}(i32 %{arg}) {{"),
        ];
        lines.insert(end, "}".to_string());
        lines.splice(start..start, header);
        if let Some(v) = vuln_line.as_mut() {
            if *v >= start {
                *v += 2;
            }
            if *v >= end + 2 {
                *v += 1;
            }
        }
    }

    let label = u8::from(kind == Kind::Vulnerable);
    let vuln: Vec<usize> = vuln_line.into_iter().collect();
    IrProgram::new(format!("syn-{}-{index:05}", spec.seed), lines, label, &vuln)
        .expect("generator emits valid programs")
}

/// Deterministic synthetic corpus; exactly `spec.n_vulnerable()` programs are
/// labelled vulnerable, at shuffled positions.
pub fn generate_synthetic(spec: &CorpusSpec) -> Result<Vec<IrProgram>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_vuln = spec.n_vulnerable();
    let mut kinds: Vec<Kind> = (0..spec.n_programs)
        .map(|i| {
            if i < n_vuln {
                Kind::Vulnerable
            } else if i % 2 == 0 {
                Kind::Guarded
            } else {
                Kind::NoCopy { guard: i % 4 == 1 }
            }
        })
        .collect();
    kinds.shuffle(&mut rng);
    Ok(kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| generate_one(spec, i, kind, &mut rng))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Seeded shuffle, then the first `round(n · train_fraction)` programs go to
/// training.
pub fn split(corpus: &[IrProgram], spec: &SplitSpec) -> Result<(Vec<IrProgram>, Vec<IrProgram>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction {} not in (0, 1)",
            spec.train_fraction
        )));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = (corpus.len() as f64 * spec.train_fraction).round() as usize;
    let n_test = corpus.len() - n_train;
    if n_train == 0 || n_test == 0 {
        return Err(Error::DegenerateSplit {
            train: n_train,
            test: n_test,
        });
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{preprocess, PreprocessConfig};
    use std::collections::HashSet;

    fn small(n: usize, seed: u64) -> CorpusSpec {
        CorpusSpec {
            n_programs: n,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn class_mix_is_exact() {
        let c = generate_synthetic(&small(100, 4)).unwrap();
        assert_eq!(c.len(), 100);
        assert_eq!(c.iter().filter(|p| p.label == 1).count(), 50);
        let c = generate_synthetic(&CorpusSpec {
            vulnerable_fraction: 0.3,
            ..small(101, 4)
        })
        .unwrap();
        assert_eq!(c.iter().filter(|p| p.label == 1).count(), 30);
    }

    #[test]
    fn labels_follow_construction() {
        for p in generate_synthetic(&small(300, 1)).unwrap() {
            p.validate().unwrap();
            let copy_line = p.lines.iter().position(|l| {
                ["@strcpy(", "@strcat(", "@memcpy("].iter().any(|r| l.contains(r))
            });
            let guard_line = p.lines.iter().position(|l| l.contains("icmp ule"));
            if p.label == 1 {
                assert_eq!(p.vuln_lines().len(), 1);
                assert_eq!(Some(p.vuln_lines()[0]), copy_line);
                assert!(guard_line.is_none());
            } else {
                assert!(p.vuln_lines().is_empty());
                if let Some(c) = copy_line {
                    assert!(guard_line.unwrap() < c);
                }
            }
            assert!(p.len() >= 8 && p.len() <= 24);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&small(50, 9)).unwrap();
        let b = generate_synthetic(&small(50, 9)).unwrap();
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        write_dataset(&mut ba, &a).unwrap();
        write_dataset(&mut bb, &b).unwrap();
        assert_eq!(ba, bb);
        assert_ne!(a, generate_synthetic(&small(50, 10)).unwrap());
    }

    #[test]
    fn generated_programs_survive_preprocessing() {
        let raw = generate_synthetic(&CorpusSpec {
            wrapper_probability: 1.0,
            ..small(100, 2)
        })
        .unwrap();
        let out = preprocess(&raw, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.len(), raw.len());
        for (r, p) in raw.iter().zip(&out) {
            let wrapped = r.lines.iter().any(|l| l.starts_with("define "));
            assert_eq!(p.len(), r.len() - if wrapped { 3 } else { 0 });
            assert_eq!(p.label, r.label);
            assert_eq!(p.vuln_lines().len(), r.vuln_lines().len());
            assert!(!p.lines.iter().any(|l| l.starts_with("define ")));
            // Guards and copies are never moved into a stripped wrapper.
            let count = |lines: &[String], pat: &str| lines.iter().filter(|l| l.contains(pat)).count();
            for pat in ["icmp ule", "call i8* @"] {
                assert_eq!(count(&p.lines, pat), count(&r.lines, pat), "{}", r.id);
            }
            for &v in &p.vuln_lines() {
                assert!(p.lines[v].contains("call i8* @"));
            }
        }
    }

    #[test]
    fn read_reports_line_numbers() {
        assert!(read_dataset(&b""[..]).unwrap().is_empty());
        let bad = b"{\"id\":\"a\",\"lines\":[\"x\"],\"label\":0,\"vuln_lines\":[]}\n{oops\n";
        assert!(matches!(read_dataset(&bad[..]), Err(Error::Parse { line: 2, .. })));
        let bad = b"{\"id\":\"a\",\"lines\":[\"x\",\"y\",\"z\"],\"label\":1,\"vuln_lines\":[5]}\n";
        assert!(matches!(
            read_dataset(&bad[..]),
            Err(Error::InvariantViolation { line: 1, .. })
        ));
    }

    #[test]
    fn dataset_round_trip() {
        let c = generate_synthetic(&small(20, 3)).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &c).unwrap();
        assert_eq!(read_dataset(&buf[..]).unwrap(), c);
    }

    #[test]
    fn split_partitions() {
        let c = generate_synthetic(&small(10, 3)).unwrap();
        let spec = SplitSpec {
            train_fraction: 0.8,
            seed: 5,
        };
        let (tr, te) = split(&c, &spec).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let ids: HashSet<_> = tr.iter().chain(&te).map(|p| p.id.clone()).collect();
        assert_eq!(ids, c.iter().map(|p| p.id.clone()).collect());
        assert_eq!(split(&c, &spec).unwrap(), (tr, te));
    }

    #[test]
    fn split_rejects_degenerate() {
        let c = generate_synthetic(&small(2, 3)).unwrap();
        let spec = SplitSpec {
            train_fraction: 0.1,
            seed: 0,
        };
        assert!(matches!(split(&c, &spec), Err(Error::DegenerateSplit { .. })));
    }

    #[test]
    fn spec_validation() {
        assert!(CorpusSpec::default().validate().is_ok());
        for bad in [
            CorpusSpec { max_lines: 265, ..Default::default() },
            CorpusSpec { min_lines: 30, max_lines: 20, ..Default::default() },
            CorpusSpec { vulnerable_fraction: 1.0, ..Default::default() },
            CorpusSpec { pattern_set: vec![], ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
