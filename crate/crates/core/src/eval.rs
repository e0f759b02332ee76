//! Mention-level scoring, McNemar's test and the pairwise overlap matrix.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{augment_annotations, overlap_coefficient, spans, Corpus, Sentence, Span};
use crate::error::{Error, Result};
use crate::par;
use crate::tagspace::{EntityType, Label};

/// 0.01 critical value of chi-square with one degree of freedom.
pub const CHI2_CRITICAL_001: f64 = 6.635;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Prf {
    /// Precision is 0 when nothing was predicted, recall 0 when nothing was
    /// expected.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MentionScores {
    pub overall: Prf,
    pub per_type: BTreeMap<String, Prf>,
}

#[derive(Default)]
struct Counts {
    total: (usize, usize, usize),
    per_type: BTreeMap<String, (usize, usize, usize)>,
}

impl Counts {
    fn add(&mut self, gold: &[Span], pred: &[Span]) {
        let g: HashSet<&Span> = gold.iter().collect();
        let p: HashSet<&Span> = pred.iter().collect();
        for s in pred {
            let e = self.per_type.entry(s.entity_type.to_string()).or_default();
            if g.contains(s) {
                self.total.0 += 1;
                e.0 += 1;
            } else {
                self.total.1 += 1;
                e.1 += 1;
            }
        }
        for s in gold {
            if !p.contains(s) {
                self.total.2 += 1;
                self.per_type.entry(s.entity_type.to_string()).or_default().2 += 1;
            }
        }
    }

    fn finish(self) -> MentionScores {
        let (tp, fp, fn_) = self.total;
        MentionScores {
            overall: Prf::from_counts(tp, fp, fn_),
            per_type: self
                .per_type
                .into_iter()
                .map(|(t, (tp, fp, fn_))| (t, Prf::from_counts(tp, fp, fn_)))
                .collect(),
        }
    }
}

fn check_alignment(gold: &[Sentence], predicted: &[Vec<Label>]) -> Result<()> {
    if gold.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            expected: gold.len(),
            found: predicted.len(),
        });
    }
    for (s, p) in gold.iter().zip(predicted) {
        if s.len() != p.len() {
            return Err(Error::LengthMismatch {
                expected: s.len(),
                found: p.len(),
            });
        }
    }
    Ok(())
}

fn keep(spans: Vec<Span>, filter: Option<&BTreeSet<EntityType>>) -> Vec<Span> {
    match filter {
        Some(f) => spans.into_iter().filter(|s| f.contains(&s.entity_type)).collect(),
        None => spans,
    }
}

/// Exact-match micro-averaged scores. Types outside `filter` are dropped
/// from both sides.
pub fn mention_prf(
    gold: &[Sentence],
    predicted: &[Vec<Label>],
    filter: Option<&BTreeSet<EntityType>>,
) -> Result<MentionScores> {
    check_alignment(gold, predicted)?;
    let mut counts = Counts::default();
    for (s, p) in gold.iter().zip(predicted) {
        counts.add(&keep(spans(&s.gold), filter), &keep(spans(p), filter));
    }
    Ok(counts.finish())
}

/// Like [`mention_prf`], but each sentence is scored only on the types its
/// own schema annotates. Sentences whose schema is missing from `schemas`
/// are scored on every type.
pub fn mention_prf_by_schema(
    gold: &[Sentence],
    predicted: &[Vec<Label>],
    schemas: &BTreeMap<String, BTreeSet<EntityType>>,
) -> Result<MentionScores> {
    check_alignment(gold, predicted)?;
    let mut counts = Counts::default();
    for (s, p) in gold.iter().zip(predicted) {
        let filter = schemas.get(&s.schema_id);
        counts.add(&keep(spans(&s.gold), filter), &keep(spans(p), filter));
    }
    Ok(counts.finish())
}

/// Aligned plain-text rendering of a score table.
pub fn format_scores(scores: &MentionScores) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<12} {:>8} {:>8} {:>8} {:>6} {:>6} {:>6}", "type", "P", "R", "F1", "tp", "fp", "fn");
    let mut row = |name: &str, p: &Prf| {
        let _ = writeln!(
            out,
            "{:<12} {:>8.4} {:>8.4} {:>8.4} {:>6} {:>6} {:>6}",
            name, p.precision, p.recall, p.f1, p.tp, p.fp, p.fn_
        );
    };
    for (t, p) in &scores.per_type {
        row(t, p);
    }
    row("overall", &scores.overall);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    /// Gold mentions only system A finds.
    pub b: usize,
    /// Gold mentions only system B finds.
    pub c: usize,
    pub chi_square: f64,
    pub significant_at_001: bool,
}

impl McNemar {
    /// Continuity-corrected statistic `(|b - c| - 1)² / (b + c)`.
    pub fn from_counts(b: usize, c: usize) -> Self {
        let chi_square = if b + c == 0 {
            0.0
        } else {
            let d = (b as f64 - c as f64).abs() - 1.0;
            d * d / (b + c) as f64
        };
        McNemar {
            b,
            c,
            chi_square,
            significant_at_001: chi_square > CHI2_CRITICAL_001,
        }
    }
}

/// Anchored on gold mentions: false positives do not enter the table.
pub fn mcnemar(gold: &[Sentence], a: &[Vec<Label>], b: &[Vec<Label>]) -> Result<McNemar> {
    check_alignment(gold, a)?;
    check_alignment(gold, b)?;
    let (mut only_a, mut only_b) = (0, 0);
    for ((s, pa), pb) in gold.iter().zip(a).zip(b) {
        let sa: HashSet<Span> = spans(pa).into_iter().collect();
        let sb: HashSet<Span> = spans(pb).into_iter().collect();
        for g in spans(&s.gold) {
            match (sa.contains(&g), sb.contains(&g)) {
                (true, false) => only_a += 1,
                (false, true) => only_b += 1,
                _ => {}
            }
        }
    }
    Ok(McNemar::from_counts(only_a, only_b))
}

/// Symmetric matrix of overlap coefficients between mutually augmented
/// corpora. Rows and columns of corpora without mentions are NaN.
pub fn overlap_matrix(corpora: &[Corpus]) -> Result<Vec<Vec<f64>>> {
    if corpora.len() < 2 {
        return Err(Error::Empty("overlap needs at least two corpora"));
    }
    let n = corpora.len();
    let empty: Vec<bool> = corpora.iter().map(|c| c.mentions().is_empty()).collect();
    for (c, &e) in corpora.iter().zip(&empty) {
        if e {
            log::warn!("corpus {} has no mentions; its overlap row is NaN", c.id);
        }
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values = par::map(&pairs, |&(i, j)| {
        if empty[i] || empty[j] {
            return Ok(f64::NAN);
        }
        let a = augment_annotations(&corpora[i], &corpora[j]).surfaces();
        let b = augment_annotations(&corpora[j], &corpora[i]).surfaces();
        overlap_coefficient(&a, &b)
    });
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] = if empty[i] { f64::NAN } else { 1.0 };
    }
    for (&(i, j), v) in pairs.iter().zip(values) {
        let v = v?;
        m[i][j] = v;
        m[j][i] = v;
    }
    Ok(m)
}

pub fn write_matrix_csv<W: Write>(ids: &[String], matrix: &[Vec<f64>], mut out: W) -> std::io::Result<()> {
    writeln!(out, ",{}", ids.join(","))?;
    for (id, row) in ids.iter().zip(matrix) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
        writeln!(out, "{id},{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(tags: &[&str]) -> Vec<Label> {
        tags.iter().map(|t| t.parse().unwrap()).collect()
    }

    fn sentence(tags: &[&str]) -> Sentence {
        let words: Vec<String> = (0..tags.len()).map(|i| format!("w{i}")).collect();
        let words: Vec<&str> = words.iter().map(String::as_str).collect();
        Sentence::from_parts(&words, labels(tags), "c").unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let g = vec![sentence(&["B-PER", "I-PER", "O", "B-LOC"])];
        let p = vec![g[0].gold.clone()];
        let s = mention_prf(&g, &p, None).unwrap();
        assert_eq!((s.overall.precision, s.overall.recall, s.overall.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn all_outside_predictions() {
        let g = vec![sentence(&["B-PER", "O"])];
        let s = mention_prf(&g, &[labels(&["O", "O"])], None).unwrap();
        assert_eq!(s.overall, Prf::from_counts(0, 0, 1));
        assert_eq!((s.overall.precision, s.overall.recall, s.overall.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hand_counted_example() {
        let g = vec![sentence(&["B-PER", "O", "O", "B-LOC"])];
        let p = vec![labels(&["B-PER", "O", "B-LOC", "I-LOC"])];
        let s = mention_prf(&g, &p, None).unwrap();
        assert_eq!((s.overall.tp, s.overall.fp, s.overall.fn_), (1, 1, 1));
        assert_eq!((s.overall.precision, s.overall.recall, s.overall.f1), (0.5, 0.5, 0.5));
        assert_eq!(s.per_type["PER"].f1, 1.0);
        assert_eq!(s.per_type["LOC"].f1, 0.0);
    }

    #[test]
    fn type_filter_drops_both_sides() {
        let g = vec![sentence(&["B-PER", "O", "B-MISC"])];
        let p = vec![labels(&["B-PER", "B-MISC", "O"])];
        let filter: BTreeSet<EntityType> = ["PER".parse().unwrap()].into();
        let s = mention_prf(&g, &p, Some(&filter)).unwrap();
        assert_eq!(s.overall.f1, 1.0);
        assert!(!s.per_type.contains_key("MISC"));
    }

    #[test]
    fn schema_scoring_ignores_unannotated_types() {
        let mut g = vec![sentence(&["B-PER", "O"]), sentence(&["O", "B-LOC"])];
        g[1].schema_id = "loc".into();
        g[0].schema_id = "per".into();
        let p = vec![labels(&["B-PER", "B-LOC"]), labels(&["B-PER", "B-LOC"])];
        let schemas = BTreeMap::from([
            ("per".to_string(), BTreeSet::from(["PER".parse().unwrap()])),
            ("loc".to_string(), BTreeSet::from(["LOC".parse().unwrap()])),
        ]);
        let s = mention_prf_by_schema(&g, &p, &schemas).unwrap();
        assert_eq!(s.overall, Prf::from_counts(2, 0, 0));
    }

    #[test]
    fn misaligned_input_is_an_error() {
        let g = vec![sentence(&["O"])];
        assert!(mention_prf(&g, &[], None).is_err());
        assert!(mention_prf(&g, &[labels(&["O", "O"])], None).is_err());
        assert!(mcnemar(&g, &[labels(&["O"])], &[]).is_err());
    }

    #[test]
    fn mcnemar_formula() {
        let m = McNemar::from_counts(10, 2);
        assert_eq!(m.chi_square, 49.0 / 12.0);
        assert!(!m.significant_at_001);
        let m = McNemar::from_counts(30, 2);
        assert_eq!(m.chi_square, 729.0 / 32.0);
        assert!(m.significant_at_001);
        assert_eq!(McNemar::from_counts(0, 0).chi_square, 0.0);
    }

    #[test]
    fn mcnemar_counts_gold_mentions() {
        let g = vec![sentence(&["B-PER", "O", "B-LOC", "O"])];
        let a = vec![labels(&["B-PER", "O", "B-LOC", "B-ORG"])];
        let b = vec![labels(&["B-PER", "O", "O", "O"])];
        let m = mcnemar(&g, &a, &b).unwrap();
        assert_eq!((m.b, m.c), (1, 0));
        let same = mcnemar(&g, &a, &a).unwrap();
        assert_eq!((same.b, same.c, same.chi_square), (0, 0, 0.0));
    }

    fn corpus(id: &str, rows: &[(&[&str], &[&str])]) -> Corpus {
        let sentences = rows
            .iter()
            .map(|(w, t)| Sentence::from_parts(w, labels(t), id).unwrap())
            .collect();
        let types = rows
            .iter()
            .flat_map(|(_, t)| labels(t))
            .filter_map(|l| l.entity_type().cloned())
            .collect();
        Corpus::new(id, types, sentences)
    }

    #[test]
    fn overlap_extremes() {
        let a = corpus("a", &[(&["x", "y"], &["B-PER", "O"])]);
        let b = corpus("b", &[(&["p", "q"], &["O", "B-LOC"])]);
        let m = overlap_matrix(&[a.clone(), a.clone(), b]).unwrap();
        assert_eq!(m[0][1], 1.0);
        assert_eq!(m[0][2], 0.0);
        assert_eq!(m[2][2], 1.0);
        let empty = corpus("e", &[(&["z"], &["O"])]);
        let m = overlap_matrix(&[a, empty]).unwrap();
        assert!(m[0][1].is_nan() && m[1][1].is_nan());
        assert_eq!(m[0][0], 1.0);
    }

    #[test]
    fn csv_layout() {
        let mut out = Vec::new();
        write_matrix_csv(&["a".into(), "b".into()], &[vec![1.0, 0.5], vec![0.5, 1.0]], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), ",a,b\na,1.0000,0.5000\nb,0.5000,1.0000\n");
    }

    fn tag_seq(len: usize) -> impl Strategy<Value = Vec<Label>> {
        proptest::collection::vec(
            prop_oneof![Just("O"), Just("B-A"), Just("I-A"), Just("B-B"), Just("I-B")],
            len,
        )
        .prop_map(|v| labels(&v))
    }

    fn pair() -> impl Strategy<Value = (Vec<Label>, Vec<Label>)> {
        (1usize..10).prop_flat_map(|n| (tag_seq(n), tag_seq(n)))
    }

    proptest! {
        #[test]
        fn swapping_gold_and_prediction((x, y) in pair()) {
            let words: Vec<&str> = vec!["w"; x.len()];
            let gx = [Sentence::from_parts(&words, x.clone(), "c").unwrap()];
            let gy = [Sentence::from_parts(&words, y.clone(), "c").unwrap()];
            let a = mention_prf(&gx, &[y], None).unwrap().overall;
            let b = mention_prf(&gy, &[x], None).unwrap().overall;
            prop_assert_eq!(a.tp, b.tp);
            prop_assert_eq!((a.fp, a.fn_), (b.fn_, b.fp));
            prop_assert_eq!((a.precision, a.recall), (b.recall, b.precision));
        }

        #[test]
        fn f1_between_precision_and_recall((x, y) in pair()) {
            let words: Vec<&str> = vec!["w"; x.len()];
            let g = [Sentence::from_parts(&words, x, "c").unwrap()];
            let s = mention_prf(&g, &[y], None).unwrap().overall;
            if s.precision + s.recall > 0.0 {
                prop_assert!(s.f1 >= s.precision.min(s.recall) - 1e-12);
                prop_assert!(s.f1 <= s.precision.max(s.recall) + 1e-12);
            }
        }

        #[test]
        fn mcnemar_is_antisymmetric(b in 0usize..200, c in 0usize..200) {
            let x = McNemar::from_counts(b, c);
            let y = McNemar::from_counts(c, b);
            prop_assert_eq!(x.chi_square, y.chi_square);
        }

        #[test]
        fn mcnemar_self_never_significant((x, y) in pair()) {
            let words: Vec<&str> = vec!["w"; x.len()];
            let g = [Sentence::from_parts(&words, x, "c").unwrap()];
            prop_assert!(!mcnemar(&g, &[y.clone()], &[y]).unwrap().significant_at_001);
        }

        #[test]
        fn overlap_matrix_is_symmetric_with_unit_diagonal(corpora in small_corpora()) {
            let m = overlap_matrix(&corpora).unwrap();
            for i in 0..corpora.len() {
                prop_assert_eq!(m[i][i], 1.0);
                for j in 0..corpora.len() {
                    prop_assert_eq!(m[i][j], m[j][i]);
                    prop_assert!((0.0..=1.0).contains(&m[i][j]));
                }
            }
        }
    }

    /// Two to four corpora over a four-word vocabulary, each with a mention.
    fn small_corpora() -> impl Strategy<Value = Vec<Corpus>> {
        let sentence = (1usize..6).prop_flat_map(|n| (proptest::collection::vec(0usize..4, n), tag_seq(n)));
        let corpus = proptest::collection::vec(sentence, 1..4);
        proptest::collection::vec(corpus, 2..5)
            .prop_map(|cs| {
                cs.into_iter()
                    .enumerate()
                    .map(|(i, rows)| {
                        let vocab = ["a", "b", "c", "d"];
                        let id = format!("c{i}");
                        let sentences: Vec<Sentence> = rows
                            .into_iter()
                            .map(|(w, t)| {
                                let words: Vec<&str> = w.iter().map(|&k| vocab[k]).collect();
                                Sentence::from_parts(&words, t, &id).unwrap()
                            })
                            .collect();
                        let types = sentences
                            .iter()
                            .flat_map(|s| s.gold.iter().filter_map(|l| l.entity_type().cloned()))
                            .collect();
                        Corpus::new(id, types, sentences)
                    })
                    .collect::<Vec<_>>()
            })
            .prop_filter("every corpus needs a mention", |cs| cs.iter().all(|c| !c.mentions().is_empty()))
    }
}
