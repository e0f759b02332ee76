//! CoNLL corpora, mention extraction, partialization, annotation
//! augmentation and subsampling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::tagspace::{CorpusSchema, EntityType, Label};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Middle columns of the CoNLL line, kept verbatim.
    pub aux: Vec<String>,
}

impl Token {
    pub fn new(text: impl Into<String>) -> Self {
        Token {
            text: text.into(),
            aux: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub gold: Vec<Label>,
    pub schema_id: String,
}

impl Sentence {
    /// Builds a sentence from bare token strings and labels.
    pub fn from_parts(words: &[&str], gold: Vec<Label>, schema_id: &str) -> Result<Self> {
        if words.len() != gold.len() {
            return Err(Error::LengthMismatch {
                expected: words.len(),
                found: gold.len(),
            });
        }
        Ok(Sentence {
            tokens: words.iter().map(|w| Token::new(*w)).collect(),
            gold,
            schema_id: schema_id.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }

    pub fn surface(&self, start: usize, end: usize) -> String {
        self.tokens[start..end]
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub id: String,
    pub schema: CorpusSchema,
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn new(id: impl Into<String>, types: BTreeSet<EntityType>, sentences: Vec<Sentence>) -> Self {
        let id = id.into();
        Corpus {
            schema: CorpusSchema::new(id.clone(), types),
            id,
            sentences,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// All gold mentions, ordered by sentence then position.
    pub fn mentions(&self) -> Vec<Mention> {
        let idx: Vec<usize> = (0..self.sentences.len()).collect();
        par::map(&idx, |&i| extract_mentions(&self.sentences[i], i))
            .into_iter()
            .flatten()
            .collect()
    }

    /// De-duplicated mention surface strings.
    pub fn surfaces(&self) -> BTreeSet<String> {
        self.mentions().into_iter().map(|m| m.surface).collect()
    }

    /// Returns a copy whose sentences all point at this corpus's schema.
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self.schema.corpus_id = self.id.clone();
        for s in &mut self.sentences {
            s.schema_id = self.id.clone();
        }
        self
    }
}

/// A typed token span `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub entity_type: EntityType,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mention {
    pub sentence_index: usize,
    pub start: usize,
    pub end: usize,
    pub entity_type: EntityType,
    pub surface: String,
}

/// Segments a label sequence into maximal B-initiated runs. A dangling
/// `I-t` (not preceded by `B-t`/`I-t`) starts a new span.
pub fn spans(labels: &[Label]) -> Vec<Span> {
    let mut out = Vec::new();
    let mut open: Option<(usize, &EntityType)> = None;
    for (i, label) in labels.iter().enumerate() {
        match label {
            Label::I(t) if open.is_some_and(|(_, ot)| ot == t) => {}
            _ => {
                if let Some((start, t)) = open.take() {
                    out.push(Span {
                        start,
                        end: i,
                        entity_type: t.clone(),
                    });
                }
                if let Label::B(t) | Label::I(t) = label {
                    open = Some((i, t));
                }
            }
        }
    }
    if let Some((start, t)) = open {
        out.push(Span {
            start,
            end: labels.len(),
            entity_type: t.clone(),
        });
    }
    out
}

/// Paints non-overlapping spans as B/I over an all-`O` sequence.
pub fn paint(len: usize, spans: &[Span]) -> Vec<Label> {
    let mut labels = vec![Label::O; len];
    for s in spans {
        labels[s.start] = Label::B(s.entity_type.clone());
        for l in &mut labels[s.start + 1..s.end] {
            *l = Label::I(s.entity_type.clone());
        }
    }
    labels
}

pub fn extract_mentions(sentence: &Sentence, sentence_index: usize) -> Vec<Mention> {
    spans(&sentence.gold)
        .into_iter()
        .map(|s| Mention {
            sentence_index,
            surface: sentence.surface(s.start, s.end),
            start: s.start,
            end: s.end,
            entity_type: s.entity_type,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InsideRepair {
    /// Rewrite an `I-t` that does not continue a mention to `B-t`.
    #[default]
    Repair,
    Strict,
}

#[derive(Clone, Debug, Default)]
pub struct ReadOptions {
    pub corpus_id: String,
    pub repair: InsideRepair,
    /// Explicit schema; inferred from the tags present when `None`.
    pub schema: Option<BTreeSet<EntityType>>,
}

impl ReadOptions {
    pub fn new(corpus_id: impl Into<String>) -> Self {
        ReadOptions {
            corpus_id: corpus_id.into(),
            ..Default::default()
        }
    }
}

/// Reads whitespace-separated CoNLL columns: token first, tag last, blank
/// lines between sentences, `-DOCSTART-` lines skipped.
pub fn read_conll<R: BufRead>(reader: R, opts: &ReadOptions) -> Result<Corpus> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut gold: Vec<Label> = Vec::new();
    let mut seen = BTreeSet::new();

    let mut flush = |tokens: &mut Vec<Token>, gold: &mut Vec<Label>| {
        if !tokens.is_empty() {
            sentences.push(Sentence {
                tokens: std::mem::take(tokens),
                gold: std::mem::take(gold),
                schema_id: opts.corpus_id.clone(),
            });
        }
    };

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            flush(&mut tokens, &mut gold);
            continue;
        }
        if cols[0] == "-DOCSTART-" {
            continue;
        }
        if cols.len() < 2 {
            return Err(Error::MissingColumns { line: lineno });
        }
        let tag = cols[cols.len() - 1];
        let mut label: Label = tag.parse().map_err(|_| Error::MalformedTag {
            line: lineno,
            tag: tag.to_string(),
        })?;
        if let Label::I(t) = &label {
            let continues = matches!(gold.last(), Some(Label::B(p) | Label::I(p)) if p == t);
            if !continues {
                match opts.repair {
                    InsideRepair::Repair => label = Label::B(t.clone()),
                    InsideRepair::Strict => {
                        return Err(Error::DanglingInside {
                            line: lineno,
                            tag: tag.to_string(),
                        })
                    }
                }
            }
        }
        if let Some(t) = label.entity_type() {
            if let Some(schema) = &opts.schema {
                if !schema.contains(t) {
                    return Err(Error::UnknownType(t.to_string()));
                }
            }
            seen.insert(t.clone());
        }
        tokens.push(Token {
            text: cols[0].to_string(),
            aux: cols[1..cols.len() - 1].iter().map(|s| s.to_string()).collect(),
        });
        gold.push(label);
    }
    flush(&mut tokens, &mut gold);

    let types = opts.schema.clone().unwrap_or(seen);
    Ok(Corpus::new(opts.corpus_id.clone(), types, sentences))
}

pub fn write_conll<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    write_tagged(&corpus.sentences, |i| &corpus.sentences[i].gold, &mut out)
}

/// Writes sentences with a replacement tag column (used for predictions).
pub fn write_predictions<W: Write>(
    sentences: &[Sentence],
    predictions: &[Vec<Label>],
    mut out: W,
) -> std::io::Result<()> {
    write_tagged(sentences, |i| &predictions[i], &mut out)
}

fn write_tagged<'a, W: Write>(
    sentences: &[Sentence],
    tags: impl Fn(usize) -> &'a Vec<Label>,
    out: &mut W,
) -> std::io::Result<()> {
    for (i, s) in sentences.iter().enumerate() {
        for (tok, label) in s.tokens.iter().zip(tags(i)) {
            out.write_all(tok.text.as_bytes())?;
            for a in &tok.aux {
                write!(out, " {a}")?;
            }
            writeln!(out, " {label}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// How sentences are split into partially annotated parts.
#[derive(Clone, Debug)]
pub enum PartitionPlan {
    /// Shuffle sentences under the seed, deal them round-robin into `parts`
    /// parts; type `j` (in lexicographic order) is kept by part `j % parts`.
    RandomByType { parts: usize },
    /// `assignment[s]` indexes into `kept` for sentence `s`.
    Explicit {
        kept: Vec<BTreeSet<EntityType>>,
        assignment: Vec<usize>,
    },
}

/// Splits a fully annotated corpus into partially annotated corpora: in each
/// part every label of a type the part does not keep becomes `O`. Sentences
/// keep their original relative order within a part.
pub fn partialize(corpus: &Corpus, plan: &PartitionPlan, seed: u64) -> Result<Vec<Corpus>> {
    let (kept, assignment) = match plan {
        PartitionPlan::RandomByType { parts } => {
            let types: Vec<&EntityType> = corpus.schema.annotated_types.iter().collect();
            if *parts == 0 {
                return Err(Error::Config("at least one part is required".into()));
            }
            if *parts > types.len() {
                return Err(Error::TooManyParts {
                    parts: *parts,
                    types: types.len(),
                });
            }
            let mut kept = vec![BTreeSet::new(); *parts];
            for (j, t) in types.into_iter().enumerate() {
                kept[j % parts].insert(t.clone());
            }
            let mut order: Vec<usize> = (0..corpus.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut assignment = vec![0; corpus.len()];
            for (k, &s) in order.iter().enumerate() {
                assignment[s] = k % parts;
            }
            (kept, assignment)
        }
        PartitionPlan::Explicit { kept, assignment } => {
            if assignment.len() != corpus.len() {
                return Err(Error::LengthMismatch {
                    expected: corpus.len(),
                    found: assignment.len(),
                });
            }
            if let Some(&bad) = assignment.iter().find(|&&a| a >= kept.len()) {
                return Err(Error::Config(format!("assignment to unknown part {bad}")));
            }
            for t in kept.iter().flatten() {
                if !corpus.schema.annotates(t) {
                    return Err(Error::UnknownType(t.to_string()));
                }
            }
            (kept.clone(), assignment.clone())
        }
    };

    let mut parts: Vec<Corpus> = kept
        .iter()
        .map(|types| {
            let names: Vec<&str> = types.iter().map(|t| t.as_str()).collect();
            let id = format!("{}-{}", corpus.id, names.join("+"));
            Corpus::new(id, types.clone(), Vec::new())
        })
        .collect();
    for (s, &p) in corpus.sentences.iter().zip(&assignment) {
        let part = &mut parts[p];
        let gold = s
            .gold
            .iter()
            .map(|l| match l.entity_type() {
                Some(t) if !part.schema.annotates(t) => Label::O,
                _ => l.clone(),
            })
            .collect();
        part.sentences.push(Sentence {
            tokens: s.tokens.clone(),
            gold,
            schema_id: part.id.clone(),
        });
    }
    Ok(parts)
}

/// Marks every unannotated token run of `target` that exactly matches a
/// donor mention surface as a mention. Existing target mentions win; among
/// candidates the longest match starting leftmost is claimed first.
pub fn augment_annotations(target: &Corpus, donor: &Corpus) -> Corpus {
    // surface tokens -> type (smallest type name when a surface is ambiguous)
    let mut lexicon: HashMap<Vec<&str>, &EntityType> = HashMap::new();
    let donor_mentions: Vec<(usize, usize, usize, EntityType)> = donor
        .mentions()
        .into_iter()
        .map(|m| (m.sentence_index, m.start, m.end, m.entity_type))
        .collect();
    for (si, start, end, ty) in &donor_mentions {
        let key: Vec<&str> = donor.sentences[*si].tokens[*start..*end]
            .iter()
            .map(|t| t.text.as_str())
            .collect();
        lexicon
            .entry(key)
            .and_modify(|e| {
                if ty < *e {
                    *e = ty
                }
            })
            .or_insert(ty);
    }
    let max_len = lexicon.keys().map(|k| k.len()).max().unwrap_or(0);

    let sentences = par::map(&target.sentences, |s| {
        let mut taken = vec![false; s.len()];
        let mut found = spans(&s.gold);
        for sp in &found {
            taken[sp.start..sp.end].iter_mut().for_each(|t| *t = true);
        }
        let words: Vec<&str> = s.words().collect();
        let mut added = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let mut claimed = 0;
            for len in (1..=max_len.min(words.len() - i)).rev() {
                if taken[i..i + len].iter().any(|&t| t) {
                    continue;
                }
                if let Some(ty) = lexicon.get(&words[i..i + len]) {
                    added.push(Span {
                        start: i,
                        end: i + len,
                        entity_type: (*ty).clone(),
                    });
                    claimed = len;
                    break;
                }
            }
            i += claimed.max(1);
        }
        if added.is_empty() {
            return s.clone();
        }
        found.extend(added);
        found.sort();
        Sentence {
            tokens: s.tokens.clone(),
            gold: paint(s.len(), &found),
            schema_id: s.schema_id.clone(),
        }
    });

    let mut types = target.schema.annotated_types.clone();
    types.extend(spans_types(&sentences));
    Corpus {
        id: target.id.clone(),
        schema: CorpusSchema::new(target.schema.corpus_id.clone(), types),
        sentences,
    }
}

fn spans_types(sentences: &[Sentence]) -> BTreeSet<EntityType> {
    sentences
        .iter()
        .flat_map(|s| s.gold.iter().filter_map(|l| l.entity_type().cloned()))
        .collect()
}

/// `|a ∩ b| / min(|a|, |b|)` over de-duplicated surface strings.
pub fn overlap_coefficient(a: &BTreeSet<String>, b: &BTreeSet<String>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedOverlap);
    }
    let shared = a.intersection(b).count();
    Ok(shared as f64 / a.len().min(b.len()) as f64)
}

/// Uniform sample of `n` sentences without replacement. The sample is the
/// first `n` entries of a seeded permutation, so samples of different sizes
/// under one seed are nested prefixes.
pub fn sample_subset(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus> {
    if n > corpus.len() {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: corpus.len(),
        });
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Corpus {
        id: corpus.id.clone(),
        schema: corpus.schema.clone(),
        sentences: order[..n]
            .iter()
            .map(|&i| corpus.sentences[i].clone())
            .collect(),
    })
}

/// Per-type mention counts, used in summaries.
pub fn mention_counts(corpus: &Corpus) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for m in corpus.mentions() {
        *counts.entry(m.entity_type.to_string()).or_insert(0) += 1;
    }
    counts
}
