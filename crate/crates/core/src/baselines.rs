//! Comparison systems: single-task models, the multi-task model with one
//! CRF head per corpus, and vote combination of head predictions.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{paint, spans, Corpus, Sentence, Span};
use crate::encoder::HeadParams;
use crate::error::{Error, Result};
use crate::eval::{mention_prf, Prf};
use crate::model::{Head, Model, ModelKind};
use crate::par;
use crate::tagspace::{EntityType, Label, TagSpace};
use crate::training::{
    build_vocab, evaluate_epoch, examples_for, optimize, train, Batching, Evaluator, LoopSpec, TrainConfig,
    TrainOutcome,
};

/// A single-task model: standard CRF training on one corpus.
pub fn train_stm(corpus: &Corpus, dev: Option<&Corpus>, config: &TrainConfig) -> Result<TrainOutcome> {
    train(std::slice::from_ref(corpus), dev.map(std::slice::from_ref).unwrap_or(&[]), config)
}

/// Mean local F1 of every head on its own dev corpus.
fn local_f1(model: &Model, dev: &[Corpus]) -> Result<Prf> {
    let mut f1 = 0.0;
    let mut p = 0.0;
    let mut r = 0.0;
    for (h, d) in dev.iter().enumerate() {
        let pred: Vec<Vec<Label>> = par::map(&d.sentences, |s| model.predict_with(h, s))
            .into_iter()
            .collect::<Result<_>>()?;
        let s = mention_prf(&d.sentences, &pred, None)?.overall;
        f1 += s.f1;
        p += s.precision;
        r += s.recall;
    }
    let n = dev.len().max(1) as f64;
    Ok(Prf {
        precision: p / n,
        recall: r / n,
        f1: f1 / n,
        ..Prf::default()
    })
}

/// Multi-task model: a shared encoder with one head per corpus over that
/// corpus's own types. `dev`, when non-empty, pairs with `corpora` by index.
pub fn train_mtm(corpora: &[Corpus], dev: &[Corpus], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if corpora.is_empty() || corpora.iter().all(Corpus::is_empty) {
        return Err(Error::Empty("training corpora"));
    }
    if !dev.is_empty() && dev.len() != corpora.len() {
        return Err(Error::LengthMismatch {
            expected: corpora.len(),
            found: dev.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let heads = corpora
        .iter()
        .map(|c| (c.id.clone(), TagSpace::new(c.schema.annotated_types.iter().cloned())))
        .collect();
    let model = Model::multi_head(build_vocab(corpora), heads, config.dims, &mut rng);
    let mut examples = Vec::new();
    let mut groups = Vec::new();
    for (h, c) in corpora.iter().enumerate() {
        let ex = examples_for(&model, c, h)?;
        groups.push((examples.len()..examples.len() + ex.len()).collect());
        examples.extend(ex);
    }
    let evaluate = |m: &Model| local_f1(m, dev);
    let spec = LoopSpec {
        examples: &examples,
        groups,
        batching: Batching::RoundRobin,
        evaluate: (!dev.is_empty()).then_some(&evaluate as &Evaluator),
    };
    let (model, epoch, dev_f1, history) = optimize(model, spec, config, &mut rng)?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            config: config.clone(),
            epoch,
            dev_f1,
        },
        history,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    pub entity_type: EntityType,
    /// Name of the head that produced the span.
    pub source: String,
}

fn rank(priority: &[String], source: &str) -> usize {
    priority.iter().position(|p| p == source).unwrap_or(priority.len())
}

/// Merges per-head spans into one global sequence of length `len`.
///
/// Transitively overlapping spans form a cluster that is expanded to its
/// outermost boundaries. The cluster takes the type of its longest member;
/// ties go to the head earlier in `priority`, then to the leftmost span.
/// Every cluster is painted as a mention, so entities always beat `O`.
pub fn vote_combine(len: usize, predictions: &[SpanPrediction], priority: &[String]) -> Vec<Label> {
    let mut all: Vec<&SpanPrediction> = predictions.iter().filter(|p| p.start < p.end && p.end <= len).collect();
    all.sort_by(|a, b| {
        (a.start, a.end, &a.entity_type, &a.source).cmp(&(b.start, b.end, &b.entity_type, &b.source))
    });
    let mut merged = Vec::new();
    let mut i = 0;
    while i < all.len() {
        let mut end = all[i].end;
        let mut j = i + 1;
        while j < all.len() && all[j].start < end {
            end = end.max(all[j].end);
            j += 1;
        }
        let cluster = &all[i..j];
        let winner = cluster
            .iter()
            .min_by(|a, b| {
                let ka = (std::cmp::Reverse(a.end - a.start), rank(priority, &a.source), a.start, &a.source, &a.entity_type);
                let kb = (std::cmp::Reverse(b.end - b.start), rank(priority, &b.source), b.start, &b.source, &b.entity_type);
                ka.cmp(&kb)
            })
            .expect("non-empty cluster");
        if cluster.len() > 1 {
            log::debug!(
                "vote conflict over [{}, {}): {} spans, chose {} from {}",
                all[i].start,
                end,
                cluster.len(),
                winner.entity_type,
                winner.source
            );
        }
        merged.push(Span {
            start: all[i].start,
            end,
            entity_type: winner.entity_type.clone(),
        });
        i = j;
    }
    paint(len, &merged)
}

/// Decodes every head of a multi-head model and vote-combines the spans.
pub fn predict_vote(model: &Model, sentence: &Sentence, priority: &[String]) -> Result<Vec<Label>> {
    if sentence.is_empty() {
        return Ok(Vec::new());
    }
    let input = model.prepare(sentence);
    let mut predictions = Vec::new();
    for (h, head) in model.heads.iter().enumerate() {
        let labels = head.space.decode(&model.decode(h, &input)?);
        predictions.extend(spans(&labels).into_iter().map(|s| SpanPrediction {
            start: s.start,
            end: s.end,
            entity_type: s.entity_type,
            source: head.name.clone(),
        }));
    }
    Ok(vote_combine(sentence.len(), &predictions, priority))
}

pub fn predict_vote_sentences(model: &Model, sentences: &[Sentence], priority: &[String]) -> Result<Vec<Vec<Label>>> {
    par::map(sentences, |s| predict_vote(model, s, priority)).into_iter().collect()
}

/// Default head priority: training-corpus order.
pub fn default_priority(model: &Model) -> Vec<String> {
    model.heads.iter().map(|h| h.name.clone()).collect()
}

/// Replaces the heads of a multi-head model with one fresh head over the
/// target corpus's types and trains it together with the shared encoder.
pub fn mtm_finetune(checkpoint: &Checkpoint, corpus: &Corpus, dev: &[Corpus], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let base = &checkpoint.model;
    let types: BTreeSet<EntityType> = corpus.schema.annotated_types.clone();
    // A zero projection decodes all-O until trained.
    let space = TagSpace::new(types);
    let head = Head {
        name: "global".into(),
        params: HeadParams::zeros(base.encoder.dims.output_dim(), space.num_labels()),
        space,
    };
    let model = Model {
        kind: ModelKind::Unified,
        vocab: base.vocab.clone(),
        encoder: base.encoder.clone(),
        heads: vec![head],
    };
    let examples = examples_for(&model, corpus, 0)?;
    if examples.is_empty() {
        return Ok(TrainOutcome {
            checkpoint: Checkpoint {
                model,
                config: config.clone(),
                epoch: 0,
                dev_f1: None,
            },
            history: Vec::new(),
        });
    }
    let evaluate = |m: &Model| evaluate_epoch(m, dev).map(|s| s.overall);
    let spec = LoopSpec {
        groups: vec![(0..examples.len()).collect()],
        examples: &examples,
        batching: Batching::Pooled,
        evaluate: (!dev.is_empty()).then_some(&evaluate as &Evaluator),
    };
    let (model, epoch, dev_f1, history) = optimize(model, spec, config, &mut rng)?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            config: config.clone(),
            epoch,
            dev_f1,
        },
        history,
    })
}
