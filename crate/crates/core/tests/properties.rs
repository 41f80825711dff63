//! Property tests over randomly generated programs, vocabularies and
//! attention inputs.

use irvuln::model::ops::{attention_weights, prob_of_positive};
use irvuln::preprocess::{normalize_locals, preprocess, strip_user_functions, PreprocessConfig};
use irvuln::tokenizer::{build_vocab, decode, encode};
use irvuln::IrProgram;
use ndarray::Array2;
use proptest::prelude::*;

/// A straight-line instruction over a few named or numbered locals.
fn instruction() -> impl Strategy<Value = String> {
    let local = prop_oneof![
        (0u32..12).prop_map(|n| format!("%{n}")),
        prop::sample::select(vec!["%x", "%buf", "%len.addr", "%i"]).prop_map(str::to_string),
    ];
    (local.clone(), local, 0u32..100, 0usize..4).prop_map(|(a, b, c, kind)| match kind {
        0 => format!("{a} = add nsw i32 {b}, {c}"),
        1 => format!("store i32 {c}, i32* {a}, align 4"),
        2 => format!("{a} = load %struct.node*, %struct.node** {b}, align 8"),
        _ => format!("{a} = icmp slt i32 {a}, {b}"),
    })
}

#[derive(Clone, Debug)]
enum Chunk {
    Line(String, bool),
    /// A `call` + `define` wrapper around a body of plain lines.
    Wrapper(Vec<String>),
}

fn chunk() -> impl Strategy<Value = Chunk> {
    prop_oneof![
        3 => (instruction(), any::<bool>()).prop_map(|(l, v)| Chunk::Line(l, v)),
        1 => prop::collection::vec(instruction(), 1..4).prop_map(Chunk::Wrapper),
    ]
}

fn program() -> impl Strategy<Value = IrProgram> {
    prop::collection::vec(chunk(), 1..12).prop_map(|chunks| {
        let mut lines = Vec::new();
        let mut vuln = Vec::new();
        for (i, c) in chunks.into_iter().enumerate() {
            match c {
                Chunk::Line(l, v) => {
                    if v {
                        vuln.push(lines.len());
                    }
                    lines.push(l);
                }
                Chunk::Wrapper(body) => {
                    lines.push(format!("%r{i} = call i32 @f{i}(i32 %x)"));
                    lines.push(format!("define internal i32 @f{i}(i32 %x) {{"));
                    lines.extend(body);
                    lines.push("}".to_string());
                }
            }
        }
        let label = u8::from(!vuln.is_empty());
        IrProgram::new("prop", lines, label, &vuln).unwrap()
    })
}

fn labelled_lines(p: &IrProgram) -> Vec<&str> {
    p.vuln_lines().iter().map(|&i| p.lines[i].as_str()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn strip_is_idempotent_and_keeps_labelled_lines(p in program()) {
        let once = strip_user_functions(&p).unwrap();
        let twice = strip_user_functions(&once).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.label, p.label);
        prop_assert_eq!(labelled_lines(&once), labelled_lines(&p));
        prop_assert!(!once.lines.iter().any(|l| l.starts_with("define")));
    }

    #[test]
    fn normalize_is_idempotent_and_line_preserving(p in program()) {
        let once = normalize_locals(&p);
        prop_assert_eq!(&normalize_locals(&once), &once);
        prop_assert_eq!(&once.line_labels, &p.line_labels);
        prop_assert_eq!(once.len(), p.len());
        for (a, b) in once.lines.iter().zip(&p.lines) {
            prop_assert_eq!(a.split(' ').count(), b.split(' ').count());
            prop_assert_eq!(a.contains("%struct.node"), b.contains("%struct.node"));
        }
    }

    #[test]
    fn normalize_is_invariant_to_consistent_renaming(p in program(), shift in 1u32..50) {
        // Renaming every numbered local consistently changes nothing after
        // normalisation.
        let re = regex::Regex::new(r"%([0-9]+)\b").unwrap();
        let renamed = IrProgram {
            lines: p
                .lines
                .iter()
                .map(|l| {
                    re.replace_all(l, |c: &regex::Captures<'_>| {
                        format!("%{}", c[1].parse::<u32>().unwrap() + 100 + shift)
                    })
                    .into_owned()
                })
                .collect(),
            ..p.clone()
        };
        prop_assert_eq!(normalize_locals(&renamed), normalize_locals(&p));
    }

    #[test]
    fn preprocess_conserves_labels(p in program()) {
        let out = preprocess(std::slice::from_ref(&p), &PreprocessConfig::default()).unwrap();
        prop_assert_eq!(out.len(), 1);
        let q = &out[0];
        prop_assert_eq!(q.label, p.label);
        prop_assert_eq!(q.vuln_lines().len(), p.vuln_lines().len());
    }

    #[test]
    fn tokenizer_round_trip(p in program()) {
        let vocab = build_vocab(std::slice::from_ref(&p)).unwrap();
        let seq = encode(&p, &vocab);
        prop_assert_eq!(decode(&seq, &vocab).unwrap(), p.lines.clone());
        prop_assert_eq!(seq.line_spans.len(), p.len());
    }

    #[test]
    fn vocabulary_ignores_corpus_order(
        corpus in prop::collection::vec(program(), 1..6),
        seed in any::<u64>(),
    ) {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut shuffled = corpus.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = build_vocab(&corpus).unwrap();
        let b = build_vocab(&shuffled).unwrap();
        let (mut fa, mut fb) = (Vec::new(), Vec::new());
        a.write_to(&mut fa).unwrap();
        b.write_to(&mut fb).unwrap();
        prop_assert_eq!(fa, fb);
    }

    #[test]
    fn attention_rows_are_distributions(
        n in 1usize..9,
        dk in 1usize..6,
        values in prop::collection::vec(-3.0f64..3.0, 2 * 8 * 5),
        mask_bits in prop::collection::vec(any::<bool>(), 8),
    ) {
        let q = Array2::from_shape_fn((n, dk), |(i, j)| values[i * dk + j]);
        let k = Array2::from_shape_fn((n, dk), |(i, j)| values[40 + i * dk + j]);
        let mut mask: Vec<u8> = mask_bits[..n].iter().map(|&b| u8::from(b)).collect();
        mask[0] = 1;
        let p = attention_weights(q.view(), k.view(), &mask).unwrap();
        for row in p.rows() {
            let kept: f64 = row.iter().zip(&mask).filter(|(_, &m)| m == 1).map(|(w, _)| w).sum();
            prop_assert!((kept - 1.0).abs() <= 1e-6);
            for (w, &m) in row.iter().zip(&mask) {
                if m == 0 {
                    prop_assert!(*w <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn probability_ignores_logit_shift(a in -10.0f64..10.0, b in -10.0f64..10.0, s in -50.0f64..50.0) {
        let p = prob_of_positive([a, b]);
        prop_assert!(p > 0.0 && p < 1.0);
        prop_assert!((prob_of_positive([a + s, b + s]) - p).abs() <= 1e-12);
    }
}
