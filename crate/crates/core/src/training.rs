//! Multi-corpus training under the discounted likelihood, plus fine-tuning.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{Corpus, Sentence};
use crate::encoder::{EncoderDims, Vocab};
use crate::error::{Error, Result};
use crate::eval::{mention_prf_by_schema, MentionScores, Prf};
use crate::model::{Example, Model, ModelKind};
use crate::optim::{Adam, AdamConfig};
use crate::par;
use crate::tagspace::{union_tag_space, EntityType, Label, TagSpace};

/// Grid searched over for both discount factors.
pub const DISCOUNT_GRID: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Discount of alternative labels in the gold energy.
    #[serde(rename = "M")]
    pub m: f64,
    /// Discount of alternative labels in the partition.
    #[serde(rename = "M_prime")]
    pub m_prime: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without dev-F1 improvement before stopping.
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub dims: EncoderDims,
    /// Dev corpus paths, resolved by the caller.
    pub dev: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            m: 0.0,
            m_prime: 0.0,
            learning_rate: 5e-3,
            batch_size: 16,
            max_epochs: 30,
            patience: 5,
            clip_norm: 5.0,
            seed: 0,
            dims: EncoderDims::default(),
            dev: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.m) || !(0.0..=1.0).contains(&self.m_prime) {
            return bad("M and M_prime must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return bad("learning_rate and clip_norm must be positive");
        }
        if self.batch_size == 0 || self.patience == 0 {
            return bad("batch_size and patience must be at least 1");
        }
        let d = self.dims;
        if d.word_dim == 0 || d.char_dim == 0 || d.char_hidden == 0 || d.word_hidden == 0 {
            return bad("encoder dimensions must be positive");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }
}

/// One JSON-lines metrics record. Epoch 0 describes the initial model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sentence NLL over the epoch (initial NLL for epoch 0).
    pub loss: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// How an epoch's examples are cut into batches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Batching {
    /// Shuffle all examples together.
    Pooled,
    /// One group per batch, cycling through groups; groups that run out are
    /// reshuffled and reused until the largest group is exhausted.
    RoundRobin,
}

pub(crate) fn make_batches(groups: &[Vec<usize>], batching: Batching, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    match batching {
        Batching::Pooled => {
            let mut all: Vec<usize> = groups.iter().flatten().copied().collect();
            all.shuffle(rng);
            all.chunks(size).map(<[usize]>::to_vec).collect()
        }
        Batching::RoundRobin => {
            let rounds = groups.iter().map(|g| g.len().div_ceil(size)).max().unwrap_or(0);
            let mut queues: Vec<(Vec<usize>, usize)> = groups
                .iter()
                .map(|g| {
                    let mut g = g.clone();
                    g.shuffle(rng);
                    (g, 0)
                })
                .collect();
            let mut out = Vec::new();
            for _ in 0..rounds {
                for (queue, pos) in queues.iter_mut().filter(|(q, _)| !q.is_empty()) {
                    if *pos >= queue.len() {
                        queue.shuffle(rng);
                        *pos = 0;
                    }
                    let end = (*pos + size).min(queue.len());
                    out.push(queue[*pos..end].to_vec());
                    *pos = end;
                }
            }
            out
        }
    }
}

/// Mean NLL over `examples` (parallel, summed in order).
pub fn mean_loss(model: &Model, examples: &[Example], m: f64, m_prime: f64) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let losses = par::map(examples, |ex| model.loss(ex, m, m_prime));
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / examples.len() as f64)
}

pub(crate) type Evaluator<'a> = dyn Fn(&Model) -> Result<Prf> + Sync + 'a;

pub(crate) struct LoopSpec<'a> {
    pub examples: &'a [Example],
    pub groups: Vec<Vec<usize>>,
    pub batching: Batching,
    pub evaluate: Option<&'a Evaluator<'a>>,
}

/// The shared optimization loop; returns the best-dev model, its epoch and
/// dev F1, and the per-epoch history.
pub(crate) fn optimize(
    mut model: Model,
    spec: LoopSpec,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Model, usize, Option<f64>, Vec<EpochRecord>)> {
    let started = Instant::now();
    let mut adam = Adam::new(config.adam());
    let mut history = Vec::new();
    let dev_score = |model: &Model| -> Result<Prf> {
        match spec.evaluate {
            Some(f) => f(model),
            None => Ok(Prf::default()),
        }
    };

    let initial = mean_loss(&model, spec.examples, config.m, config.m_prime)?;
    let dev = dev_score(&model)?;
    history.push(record(0, initial, &dev, &started));
    let mut best = (dev.f1, model.clone(), 0usize);
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        let batches = make_batches(&spec.groups, spec.batching, config.batch_size, rng);
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for (bi, batch) in batches.iter().enumerate() {
            let results = par::map(batch, |&i| model.loss_and_grads(&spec.examples[i], config.m, config.m_prime));
            let mut grads = model.grads_template();
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, g) = r?;
                batch_loss += loss;
                grads.add(&g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: bi,
                    what: format!("loss {batch_loss}"),
                });
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut model, &mut grads);
            if !model.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: bi,
                    what: "non-finite parameter".into(),
                });
            }
            loss_sum += batch_loss;
            count += batch.len();
        }
        let dev = dev_score(&model)?;
        let mean = if count == 0 { 0.0 } else { loss_sum / count as f64 };
        history.push(record(epoch, mean, &dev, &started));
        log::info!("epoch {epoch}: loss {mean:.4} dev f1 {:.4}", dev.f1);
        if spec.evaluate.is_none() || dev.f1 > best.0 {
            best = (dev.f1, model.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let dev_f1 = spec.evaluate.map(|_| best.0);
    Ok((best.1, best.2, dev_f1, history))
}

fn record(epoch: usize, loss: f64, dev: &Prf, started: &Instant) -> EpochRecord {
    EpochRecord {
        epoch,
        loss,
        precision: dev.precision,
        recall: dev.recall,
        f1: dev.f1,
        wall_time: started.elapsed().as_secs_f64(),
    }
}

pub(crate) fn build_vocab(corpora: &[Corpus]) -> Vocab {
    Vocab::build(corpora.iter().flat_map(|c| c.sentences.iter().flat_map(Sentence::words)))
}

/// Examples for head `head` from `corpus`, masked by its schema.
pub(crate) fn examples_for(model: &Model, corpus: &Corpus, head: usize) -> Result<Vec<Example>> {
    let space = &model.heads[head].space;
    for t in &corpus.schema.annotated_types {
        if !space.contains_type(t) {
            return Err(Error::UnknownType(t.to_string()));
        }
    }
    let mask = space.annotation_mask(&corpus.schema)?;
    let items: Vec<&Sentence> = corpus.sentences.iter().filter(|s| !s.is_empty()).collect();
    par::map(&items, |s| model.example(s, head, &mask)).into_iter().collect()
}

/// Groups consecutive example ranges, one per corpus.
fn contiguous_groups(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&n| {
            let g = (start..start + n).collect();
            start += n;
            g
        })
        .collect()
}

/// Types each dev corpus annotates, keyed by the schema id its sentences carry.
pub fn dev_schemas(dev: &[Corpus]) -> BTreeMap<String, BTreeSet<EntityType>> {
    let mut out: BTreeMap<String, BTreeSet<EntityType>> = BTreeMap::new();
    for c in dev {
        out.entry(c.schema.corpus_id.clone())
            .or_default()
            .extend(c.schema.annotated_types.iter().cloned());
        for s in &c.sentences {
            out.entry(s.schema_id.clone())
                .or_default()
                .extend(c.schema.annotated_types.iter().cloned());
        }
    }
    out
}

/// Viterbi predictions of a unified model (parallel over sentences).
pub fn predict_sentences(model: &Model, sentences: &[Sentence]) -> Result<Vec<Vec<Label>>> {
    par::map(sentences, |s| model.predict(s)).into_iter().collect()
}

/// Dev scores of a unified model, each sentence scored under its own schema.
pub fn evaluate_epoch(model: &Model, dev: &[Corpus]) -> Result<MentionScores> {
    let sentences: Vec<Sentence> = dev.iter().flat_map(|c| c.sentences.iter().cloned()).collect();
    let predicted = predict_sentences(model, &sentences)?;
    mention_prf_by_schema(&sentences, &predicted, &dev_schemas(dev))
}

/// Trains a unified tagger over the union of the corpora's types.
pub fn train(corpora: &[Corpus], dev: &[Corpus], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if corpora.iter().all(Corpus::is_empty) {
        return Err(Error::Empty("training corpora"));
    }
    let space = union_tag_space(corpora.iter().map(|c| &c.schema.annotated_types))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = Model::unified(build_vocab(corpora), space, config.dims, &mut rng);
    let mut examples = Vec::new();
    let mut sizes = Vec::new();
    for c in corpora {
        let ex = examples_for(&model, c, 0)?;
        sizes.push(ex.len());
        examples.extend(ex);
    }
    let evaluate = |m: &Model| evaluate_epoch(m, dev).map(|s| s.overall);
    let spec = LoopSpec {
        examples: &examples,
        groups: contiguous_groups(&sizes),
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

/// Continues training a unified checkpoint (encoder and transitions reused)
/// on `corpus`. Words outside the checkpoint vocabulary map to UNK.
pub fn fine_tune(checkpoint: &Checkpoint, corpus: &Corpus, dev: &[Corpus], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if checkpoint.model.kind != ModelKind::Unified {
        return Err(Error::Config("fine_tune expects a unified checkpoint".into()));
    }
    let model = checkpoint.model.clone();
    let examples = examples_for(&model, corpus, 0)?;
    if examples.is_empty() {
        return Ok(TrainOutcome {
            checkpoint: checkpoint.clone(),
            history: Vec::new(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
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

/// Global tag space a set of corpora trains into.
pub fn global_space(corpora: &[Corpus]) -> Result<TagSpace> {
    union_tag_space(corpora.iter().map(|c| &c.schema.annotated_types))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_and_validates() {
        let c: TrainConfig = toml::from_str("M = 0.2\nM_prime = 1.0\nbatch_size = 4\n[dims]\nword_dim = 8\nchar_dim = 4\nchar_hidden = 4\nword_hidden = 8\n").unwrap();
        assert_eq!((c.m, c.m_prime, c.batch_size), (0.2, 1.0, 4));
        assert!(c.validate().is_ok());
        assert!(TrainConfig { m: 1.5, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..c }.validate().is_err());
        assert!(toml::from_str::<TrainConfig>("momentum = 1").is_err());
    }

    #[test]
    fn pooled_batches_cover_every_example_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let groups = vec![(0..7).collect(), (7..10).collect()];
        let b = make_batches(&groups, Batching::Pooled, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn round_robin_recycles_small_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let groups = vec![(0..8).collect(), (8..10).collect(), vec![]];
        let b = make_batches(&groups, Batching::RoundRobin, 2, &mut rng);
        assert_eq!(b.len(), 8);
        for (i, batch) in b.iter().enumerate() {
            let from_first = batch.iter().all(|&x| x < 8);
            assert_eq!(from_first, i % 2 == 0);
        }
        let mut first: Vec<usize> = b.iter().step_by(2).flatten().copied().collect();
        first.sort();
        assert_eq!(first, (0..8).collect::<Vec<_>>());
    }
}
