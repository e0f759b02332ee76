//! A shared encoder with one or more CRF heads.
//!
//! A unified tagger has a single head over the global tag space; the
//! multi-task baseline has one head per training corpus, each over that
//! corpus's local space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::encoder::{EncoderDims, EncoderGrads, EncoderParams, HeadParams, SentenceInput, Vocab};
use crate::error::{Error, Result};
use crate::lattice::{nll_gradients, viterbi, Lattice, MaskConfig, PartialAnnotation};
use crate::tagspace::{Label, LabelId, TagSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Unified,
    MultiHead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    /// Corpus id for multi-head models, `"global"` for unified ones.
    pub name: String,
    pub space: TagSpace,
    pub params: HeadParams,
}

impl Head {
    pub fn new<R: Rng>(name: impl Into<String>, space: TagSpace, input: usize, rng: &mut R) -> Self {
        let params = HeadParams::new(input, space.num_labels(), rng);
        Head {
            name: name.into(),
            space,
            params,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub vocab: Vocab,
    pub encoder: EncoderParams,
    pub heads: Vec<Head>,
}

/// One training sentence, already indexed against a model's vocabulary and
/// the tag space of the head it trains.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: SentenceInput,
    pub annotation: PartialAnnotation,
    pub head: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub encoder: EncoderGrads,
    /// Indexed like `Model::heads`; `None` for heads no example touched.
    pub heads: Vec<Option<HeadParams>>,
}

impl Grads {
    pub fn add(&mut self, other: &Grads) {
        self.encoder.add(&other.encoder);
        for (a, b) in self.heads.iter_mut().zip(&other.heads) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.add(b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    /// Squared L2 norm over every entry.
    pub fn norm_sq(&self) -> f64 {
        let sq = |xs: &[f64]| xs.iter().map(|x| x * x).sum::<f64>();
        let e = &self.encoder;
        let mut total: f64 = [&e.word_emb, &e.char_emb]
            .iter()
            .flat_map(|s| s.rows.values())
            .map(|v| sq(v))
            .sum();
        for l in [&e.char_fwd, &e.char_bwd, &e.word_fwd, &e.word_bwd] {
            total += sq(&l.weight.data) + sq(&l.bias.data);
        }
        for h in self.heads.iter().flatten() {
            total += h.tensors().iter().map(|(_, t)| sq(&t.data)).sum::<f64>();
        }
        total
    }

    pub fn scale(&mut self, factor: f64) {
        let e = &mut self.encoder;
        for s in [&mut e.word_emb, &mut e.char_emb] {
            s.rows.values_mut().flatten().for_each(|x| *x *= factor);
        }
        for l in [&mut e.char_fwd, &mut e.char_bwd, &mut e.word_fwd, &mut e.word_bwd] {
            l.weight.data.iter_mut().chain(l.bias.data.iter_mut()).for_each(|x| *x *= factor);
        }
        for h in self.heads.iter_mut().flatten() {
            for t in h.tensors_mut() {
                t.data.iter_mut().for_each(|x| *x *= factor);
            }
        }
    }
}

impl Model {
    pub fn unified<R: Rng>(vocab: Vocab, space: TagSpace, dims: EncoderDims, rng: &mut R) -> Self {
        let encoder = EncoderParams::new(dims, &vocab, rng);
        let head = Head::new("global", space, dims.output_dim(), rng);
        Model {
            kind: ModelKind::Unified,
            vocab,
            encoder,
            heads: vec![head],
        }
    }

    pub fn multi_head<R: Rng>(vocab: Vocab, heads: Vec<(String, TagSpace)>, dims: EncoderDims, rng: &mut R) -> Self {
        let encoder = EncoderParams::new(dims, &vocab, rng);
        let heads = heads
            .into_iter()
            .map(|(name, space)| Head::new(name, space, dims.output_dim(), rng))
            .collect();
        Model {
            kind: ModelKind::MultiHead,
            vocab,
            encoder,
            heads,
        }
    }

    pub fn head_index(&self, name: &str) -> Option<usize> {
        self.heads.iter().position(|h| h.name == name)
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.heads.iter().all(|h| h.params.is_finite())
    }

    pub fn prepare(&self, sentence: &Sentence) -> SentenceInput {
        self.vocab.prepare(sentence.words())
    }

    /// Indexes a sentence for training `head`. Types the head's space does
    /// not know are an error; `annotated` is the head-space annotation mask
    /// of the sentence's schema.
    pub fn example(&self, sentence: &Sentence, head: usize, annotated: &[bool]) -> Result<Example> {
        let space = &self.heads[head].space;
        let gold = space.ids(&sentence.gold)?;
        Ok(Example {
            input: self.prepare(sentence),
            annotation: PartialAnnotation::from_schema(space, gold, annotated)?,
            head,
        })
    }

    pub fn grads_template(&self) -> Grads {
        Grads {
            encoder: self.encoder.zero_grads(),
            heads: vec![None; self.heads.len()],
        }
    }

    pub fn lattice(&self, head: usize, input: &SentenceInput) -> Result<Lattice> {
        let h = &self.heads[head];
        let hidden = self.encoder.forward(input)?.hidden;
        Lattice::with_bio(&h.space, h.params.emissions(&hidden)?, &h.params.transitions.data)
    }

    /// NLL of one example under `(m, m')`.
    pub fn loss(&self, ex: &Example, m: f64, m_prime: f64) -> Result<f64> {
        let lattice = self.lattice(ex.head, &ex.input)?;
        let mask = MaskConfig::new(m, m_prime, ex.annotation.clone())?;
        crate::lattice::neg_log_likelihood(&lattice, &mask)
    }

    /// NLL of one example and its gradient with respect to every parameter.
    pub fn loss_and_grads(&self, ex: &Example, m: f64, m_prime: f64) -> Result<(f64, Grads)> {
        let h = &self.heads[ex.head];
        let trace = self.encoder.forward(&ex.input)?;
        let emissions = h.params.emissions(&trace.hidden)?;
        let lattice = Lattice::with_bio(&h.space, emissions, &h.params.transitions.data)?;
        let mask = MaskConfig::new(m, m_prime, ex.annotation.clone())?;
        let lg = nll_gradients(&lattice, &mask)?;

        let mut head_grads = HeadParams::zeros(h.params.weight.cols, h.space.num_labels());
        let d_hidden = h.params.backward(&trace.hidden, &lg.emissions, &mut head_grads);
        head_grads.transitions.data = lg.transitions;
        let mut grads = self.grads_template();
        self.encoder.backward(&ex.input, &trace, &d_hidden, &mut grads.encoder);
        grads.heads[ex.head] = Some(head_grads);
        Ok((lg.nll, grads))
    }

    pub fn decode(&self, head: usize, input: &SentenceInput) -> Result<Vec<LabelId>> {
        Ok(viterbi(&self.lattice(head, input)?).0)
    }

    /// Viterbi labels of `sentence` under `head`.
    pub fn predict_with(&self, head: usize, sentence: &Sentence) -> Result<Vec<Label>> {
        if sentence.is_empty() {
            return Ok(Vec::new());
        }
        let ids = self.decode(head, &self.prepare(sentence))?;
        Ok(self.heads[head].space.decode(&ids))
    }

    /// Global prediction of a unified model (its only head).
    pub fn predict(&self, sentence: &Sentence) -> Result<Vec<Label>> {
        if self.kind != ModelKind::Unified {
            return Err(Error::Config("multi-head models predict through vote combination".into()));
        }
        self.predict_with(0, sentence)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagspace::EntityType;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn model_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = EncoderDims {
            word_dim: 2,
            char_dim: 2,
            char_hidden: 2,
            word_hidden: 3,
        };
        let vocab = Vocab::build(["ab", "c", "d"]);
        let space = TagSpace::new(["A", "B"].map(|t| EntityType::new(t).unwrap()));
        let mut model = Model::unified(vocab, space.clone(), dims, &mut rng);
        for x in model.heads[0].params.transitions.data.iter_mut() {
            *x = rng.gen_range(-0.5..0.5);
        }
        let s = Sentence::from_parts(
            &["ab", "c", "d"],
            vec![Label::B("A".parse().unwrap()), Label::O, Label::O],
            "x",
        )
        .unwrap();
        let ex = model.example(&s, 0, &[true, false]).unwrap();
        assert!(ex.annotation.has_alternatives());
        let (m, mp) = (0.3, 0.7);
        let (_, g) = model.loss_and_grads(&ex, m, mp).unwrap();
        let eps = 1e-5;
        let hg = g.heads[0].as_ref().unwrap();
        for slot in 0..3 {
            for k in 0..model.heads[0].params.tensors()[slot].1.data.len() {
                let orig = model.heads[0].params.tensors()[slot].1.data[k];
                model.heads[0].params.tensors_mut()[slot].data[k] = orig + eps;
                let plus = model.loss(&ex, m, mp).unwrap();
                model.heads[0].params.tensors_mut()[slot].data[k] = orig - eps;
                let minus = model.loss(&ex, m, mp).unwrap();
                model.heads[0].params.tensors_mut()[slot].data[k] = orig;
                let num = (plus - minus) / (2.0 * eps);
                let ana = hg.tensors()[slot].1.data[k];
                assert!((ana - num).abs() <= 1e-6 * ana.abs().max(1.0), "slot {slot} k {k}: {ana} vs {num}");
            }
        }
        for k in 0..model.encoder.word_fwd.weight.data.len() {
            let orig = model.encoder.word_fwd.weight.data[k];
            model.encoder.word_fwd.weight.data[k] = orig + eps;
            let plus = model.loss(&ex, m, mp).unwrap();
            model.encoder.word_fwd.weight.data[k] = orig - eps;
            let minus = model.loss(&ex, m, mp).unwrap();
            model.encoder.word_fwd.weight.data[k] = orig;
            let num = (plus - minus) / (2.0 * eps);
            let ana = g.encoder.word_fwd.weight.data[k];
            assert!((ana - num).abs() <= 1e-6 * ana.abs().max(1.0));
        }
    }

    #[test]
    fn grads_accumulate_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vocab = Vocab::build(["a"]);
        let space = TagSpace::new(["A"].map(|t| EntityType::new(t).unwrap()));
        let model = Model::multi_head(
            vocab,
            vec![("x".into(), space.clone()), ("y".into(), space)],
            EncoderDims::default(),
            &mut rng,
        );
        let s = Sentence::from_parts(&["a"], vec![Label::O], "x").unwrap();
        let ex = model.example(&s, 1, &[true]).unwrap();
        let (_, g) = model.loss_and_grads(&ex, 1.0, 1.0).unwrap();
        assert!(g.heads[0].is_none() && g.heads[1].is_some());
        let mut sum = model.grads_template();
        sum.add(&g);
        sum.add(&g);
        let mut double = g.clone();
        double.scale(2.0);
        assert!((sum.norm_sq() - double.norm_sq()).abs() < 1e-9 * double.norm_sq());
        assert!(model.predict(&s).is_err());
    }
}
