//! Seeded synthetic NER corpora with planted per-type lexicons.
//!
//! Every entity word belongs to exactly one lexicon phrase. "Ambiguous"
//! filler tokens are words of the most frequent lexicon phrases used outside
//! any phrase and labeled `O`, so a word alone does not decide its tag. Each
//! type also has a few `O`-labeled cue words that often precede its mentions
//! and give context a chance to tell real mentions from ambiguous filler.

use std::collections::{BTreeSet, HashSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sentence, Token};
use crate::error::{Error, Result};
use crate::tagspace::{EntityType, Label};

const DEFAULT_TYPE_NAMES: [&str; 4] = ["LOC", "MISC", "ORG", "PER"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_types: usize,
    /// Overrides the default names (`LOC`, `MISC`, `ORG`, `PER`, `TYPE4`, ...).
    pub type_names: Option<Vec<String>>,
    /// Phrases per type.
    pub lexicon_size: usize,
    pub max_phrase_len: usize,
    pub sentences: usize,
    /// Slots per sentence, uniform in `[min_slots, max_slots]`. A slot is
    /// either a filler token or a whole entity phrase.
    pub min_slots: usize,
    pub max_slots: usize,
    /// Probability that a slot holds an entity phrase.
    pub entity_density: f64,
    /// Probability that a filler slot uses an ambiguous entity word.
    pub ambiguous_filler: f64,
    /// Ambiguous words come from this many most frequent phrases per type.
    pub ambiguous_phrases: usize,
    /// Probability that a mention is preceded by one of its type's cue words
    /// (labeled `O`). Cue words never precede filler.
    pub cue_rate: f64,
    pub cues_per_type: usize,
    pub filler_vocab: usize,
    /// Zipf exponent for phrase frequencies within a lexicon.
    pub zipf_exponent: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_types: 4,
            type_names: None,
            lexicon_size: 150,
            max_phrase_len: 3,
            sentences: 5000,
            min_slots: 5,
            max_slots: 12,
            entity_density: 0.2,
            ambiguous_filler: 0.2,
            ambiguous_phrases: 10,
            cue_rate: 0.5,
            cues_per_type: 3,
            filler_vocab: 1500,
            zipf_exponent: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn type_names(&self) -> Vec<String> {
        match &self.type_names {
            Some(names) => names.clone(),
            None => (0..self.num_types)
                .map(|i| match DEFAULT_TYPE_NAMES.get(i) {
                    Some(n) => n.to_string(),
                    None => format!("TYPE{i}"),
                })
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_types == 0 || self.lexicon_size == 0 || self.filler_vocab == 0 {
            return bad("num_types, lexicon_size and filler_vocab must be positive");
        }
        if self.max_phrase_len == 0 || self.min_slots == 0 || self.min_slots > self.max_slots {
            return bad("need max_phrase_len >= 1 and 1 <= min_slots <= max_slots");
        }
        if [self.entity_density, self.ambiguous_filler, self.cue_rate]
            .iter()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return bad("entity_density, ambiguous_filler and cue_rate must lie in [0, 1]");
        }
        if self.zipf_exponent < 0.0 || !self.zipf_exponent.is_finite() {
            return bad("zipf_exponent must be finite and non-negative");
        }
        if self.type_names().len() != self.num_types {
            return bad("type_names must have num_types entries");
        }
        Ok(())
    }
}

pub struct SyntheticGenerator {
    spec: SyntheticSpec,
    types: Vec<EntityType>,
    lexicons: Vec<Vec<Vec<String>>>,
    filler: Vec<String>,
    ambiguous: Vec<String>,
    cues: Vec<Vec<String>>,
    phrase_dist: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl SyntheticGenerator {
    pub fn new(spec: SyntheticSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut used = HashSet::new();
        let types = spec
            .type_names()
            .into_iter()
            .map(EntityType::new)
            .collect::<Result<Vec<_>>>()?;
        let lexicons: Vec<Vec<Vec<String>>> = (0..spec.num_types)
            .map(|_| {
                (0..spec.lexicon_size)
                    .map(|_| {
                        let len = rng.gen_range(1..=spec.max_phrase_len);
                        let phrase: Vec<String> =
                            (0..len).map(|_| fresh_word(&mut rng, &mut used)).collect();
                        phrase
                    })
                    .collect()
            })
            .collect();
        let ambiguous = lexicons
            .iter()
            .flat_map(|lex| lex.iter().take(spec.ambiguous_phrases).flatten().cloned())
            .collect();
        let cues = (0..spec.num_types)
            .map(|_| (0..spec.cues_per_type).map(|_| fresh_word(&mut rng, &mut used)).collect())
            .collect();
        let filler = (0..spec.filler_vocab)
            .map(|_| fresh_word(&mut rng, &mut used))
            .collect();
        let weights: Vec<f64> = (0..spec.lexicon_size)
            .map(|r| 1.0 / ((r + 1) as f64).powf(spec.zipf_exponent))
            .collect();
        let phrase_dist = WeightedIndex::new(weights).map_err(|e| Error::Config(e.to_string()))?;
        Ok(SyntheticGenerator {
            spec,
            types,
            lexicons,
            filler,
            ambiguous,
            cues,
            phrase_dist,
            rng,
        })
    }

    pub fn types(&self) -> &[EntityType] {
        &self.types
    }

    pub fn lexicon(&self, type_index: usize) -> &[Vec<String>] {
        &self.lexicons[type_index]
    }

    /// Draws one sentence; returns it with the number of planted phrases.
    pub fn sentence(&mut self, schema_id: &str) -> (Sentence, usize) {
        let slots = self.rng.gen_range(self.spec.min_slots..=self.spec.max_slots);
        let mut tokens = Vec::new();
        let mut gold = Vec::new();
        let mut planted = 0;
        for _ in 0..slots {
            if self.rng.gen_bool(self.spec.entity_density) {
                let ti = self.rng.gen_range(0..self.types.len());
                let pi = self.phrase_dist.sample(&mut self.rng);
                let ty = &self.types[ti];
                let cues = &self.cues[ti];
                if !cues.is_empty() && self.rng.gen_bool(self.spec.cue_rate) {
                    tokens.push(Token::new(cues[self.rng.gen_range(0..cues.len())].clone()));
                    gold.push(Label::O);
                }
                for (k, w) in self.lexicons[ti][pi].iter().enumerate() {
                    tokens.push(Token::new(w.clone()));
                    gold.push(if k == 0 { Label::B(ty.clone()) } else { Label::I(ty.clone()) });
                }
                planted += 1;
            } else {
                let w = if !self.ambiguous.is_empty() && self.rng.gen_bool(self.spec.ambiguous_filler) {
                    self.ambiguous[self.rng.gen_range(0..self.ambiguous.len())].clone()
                } else {
                    self.filler[self.rng.gen_range(0..self.filler.len())].clone()
                };
                tokens.push(Token::new(w));
                gold.push(Label::O);
            }
        }
        (
            Sentence {
                tokens,
                gold,
                schema_id: schema_id.to_string(),
            },
            planted,
        )
    }

    /// Draws `n` sentences into a fully annotated corpus.
    pub fn corpus(&mut self, id: &str, n: usize) -> (Corpus, usize) {
        let mut planted = 0;
        let sentences = (0..n)
            .map(|_| {
                let (s, p) = self.sentence(id);
                planted += p;
                s
            })
            .collect();
        let types: BTreeSet<EntityType> = self.types.iter().cloned().collect();
        (Corpus::new(id, types, sentences), planted)
    }
}

/// Generates `spec.sentences` sentences under `seed`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Corpus> {
    let mut generator = SyntheticGenerator::new(spec.clone(), seed)?;
    Ok(generator.corpus("synthetic", spec.sentences).0)
}

fn fresh_word(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    const ONSETS: [&str; 16] = [
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr",
    ];
    const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];
    loop {
        let syllables = rng.gen_range(2..=3);
        let word: String = (0..syllables)
            .map(|_| {
                let o = ONSETS[rng.gen_range(0..ONSETS.len())];
                let v = VOWELS[rng.gen_range(0..VOWELS.len())];
                format!("{o}{v}")
            })
            .collect();
        if used.insert(word.clone()) {
            return word;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::write_conll;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            sentences: 300,
            lexicon_size: 20,
            filler_vocab: 200,
            ..Default::default()
        }
    }

    #[test]
    fn mention_count_matches_planted() {
        let spec = SyntheticSpec {
            sentences: 2000,
            ..small()
        };
        let mut g = SyntheticGenerator::new(spec, 11).unwrap();
        let (c, planted) = g.corpus("s", 2000);
        assert!(planted > 0);
        assert_eq!(c.mentions().len(), planted);
        assert_eq!(c.schema.annotated_types.len(), 4);
    }

    #[test]
    fn every_mention_is_a_lexicon_phrase_of_its_type() {
        let mut g = SyntheticGenerator::new(small(), 5).unwrap();
        let (c, _) = g.corpus("s", 300);
        let mut ambiguous = 0;
        for m in c.mentions() {
            let words: Vec<String> = c.sentences[m.sentence_index].tokens[m.start..m.end]
                .iter()
                .map(|t| t.text.clone())
                .collect();
            let ti = g.types().iter().position(|t| *t == m.entity_type).unwrap();
            assert!(g.lexicon(ti).contains(&words), "{words:?}");
        }
        let lexicon_words: HashSet<&String> = (0..4).flat_map(|t| g.lexicon(t)).flatten().collect();
        for s in &c.sentences {
            for (tok, l) in s.tokens.iter().zip(&s.gold) {
                if l.is_outside() && lexicon_words.contains(&tok.text) {
                    ambiguous += 1;
                }
            }
        }
        assert!(ambiguous > 0);
    }

    #[test]
    fn full_cue_rate_precedes_every_mention() {
        let spec = SyntheticSpec {
            cue_rate: 1.0,
            ..small()
        };
        let mut g = SyntheticGenerator::new(spec, 2).unwrap();
        let (c, _) = g.corpus("s", 200);
        for m in c.mentions() {
            assert!(m.start > 0);
            let s = &c.sentences[m.sentence_index];
            let ti = g.types().iter().position(|t| *t == m.entity_type).unwrap();
            assert!(g.cues[ti].contains(&s.tokens[m.start - 1].text));
            assert!(s.gold[m.start - 1].is_outside());
        }
    }

    #[test]
    fn zero_density_is_all_outside() {
        let spec = SyntheticSpec {
            entity_density: 0.0,
            ..small()
        };
        let c = generate_synthetic(&spec, 1).unwrap();
        assert!(c.sentences.iter().all(|s| s.gold.iter().all(Label::is_outside)));
        assert_eq!(c.schema.annotated_types.len(), 4);
    }

    #[test]
    fn same_seed_same_bytes() {
        let dump = |seed| {
            let mut out = Vec::new();
            write_conll(&generate_synthetic(&small(), seed).unwrap(), &mut out).unwrap();
            out
        };
        assert_eq!(dump(3), dump(3));
        assert_ne!(dump(3), dump(4));
    }

    #[test]
    fn spec_parses_from_key_value_text() {
        let spec: SyntheticSpec = toml::from_str("num_types = 2\nsentences = 10\nentity_density = 0.5\n").unwrap();
        assert_eq!(spec.type_names(), ["LOC", "MISC"]);
        assert!(toml::from_str::<SyntheticSpec>("bogus = 1").is_err());
        let bad = SyntheticSpec {
            min_slots: 5,
            max_slots: 2,
            ..small()
        };
        assert!(SyntheticGenerator::new(bad, 0).is_err());
    }
}
