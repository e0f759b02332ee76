//! Entity types, BIO labels, corpus schemas and the global tag space.
//!
//! Labels are indexed densely: `O` is always index 0, followed by
//! `B-t`, `I-t` for each type `t` in lexicographic order. The lattice code
//! works exclusively with these indices.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a label inside a [`TagSpace`].
pub type LabelId = usize;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityType(String);

impl EntityType {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::InvalidTypeName(name));
        }
        Ok(EntityType(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for EntityType {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        EntityType::new(value)
    }
}

impl From<EntityType> for String {
    fn from(value: EntityType) -> Self {
        value.0
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EntityType::new(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    O,
    B(EntityType),
    I(EntityType),
}

impl Label {
    pub fn entity_type(&self) -> Option<&EntityType> {
        match self {
            Label::O => None,
            Label::B(t) | Label::I(t) => Some(t),
        }
    }

    pub fn is_outside(&self) -> bool {
        matches!(self, Label::O)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::O => f.write_str("O"),
            Label::B(t) => write!(f, "B-{t}"),
            Label::I(t) => write!(f, "I-{t}"),
        }
    }
}

/// Parses `O`, `B-<TYPE>` or `I-<TYPE>`. The type is everything after the
/// first `-`, so type names may themselves contain dashes.
impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(Label::O);
        }
        let bad = || Error::MalformedTag {
            line: 0,
            tag: s.to_string(),
        };
        let (prefix, name) = s.split_once('-').ok_or_else(bad)?;
        let ty = EntityType::new(name).map_err(|_| bad())?;
        match prefix {
            "B" => Ok(Label::B(ty)),
            "I" => Ok(Label::I(ty)),
            _ => Err(bad()),
        }
    }
}

/// The set of entity types a corpus is annotated for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSchema {
    pub corpus_id: String,
    pub annotated_types: BTreeSet<EntityType>,
}

impl CorpusSchema {
    pub fn new(corpus_id: impl Into<String>, annotated_types: BTreeSet<EntityType>) -> Self {
        CorpusSchema {
            corpus_id: corpus_id.into(),
            annotated_types,
        }
    }

    pub fn annotates(&self, ty: &EntityType) -> bool {
        self.annotated_types.contains(ty)
    }
}

/// A lattice endpoint: either a real label or the virtual START/STOP state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    /// START when used as a source, STOP when used as a target.
    Boundary,
    Label(LabelId),
}

#[derive(Clone, Debug)]
pub struct TagSpace {
    types: Vec<EntityType>,
    labels: Vec<Label>,
    index: HashMap<Label, LabelId>,
}

impl PartialEq for TagSpace {
    fn eq(&self, other: &Self) -> bool {
        self.types == other.types
    }
}

impl Eq for TagSpace {}

impl TagSpace {
    pub fn new(types: impl IntoIterator<Item = EntityType>) -> Self {
        let types: Vec<EntityType> = types
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut labels = Vec::with_capacity(1 + 2 * types.len());
        labels.push(Label::O);
        for t in &types {
            labels.push(Label::B(t.clone()));
            labels.push(Label::I(t.clone()));
        }
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        TagSpace {
            types,
            labels,
            index,
        }
    }

    pub fn types(&self) -> &[EntityType] {
        &self.types
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, id: LabelId) -> &Label {
        &self.labels[id]
    }

    pub fn id(&self, label: &Label) -> Result<LabelId> {
        self.index.get(label).copied().ok_or_else(|| {
            Error::UnknownType(label.entity_type().map(|t| t.to_string()).unwrap_or_default())
        })
    }

    pub fn contains_type(&self, ty: &EntityType) -> bool {
        self.types.binary_search(ty).is_ok()
    }

    pub fn type_index(&self, ty: &EntityType) -> Option<usize> {
        self.types.binary_search(ty).ok()
    }

    /// Type index of label `id`, or `None` for `O`.
    pub fn type_of(&self, id: LabelId) -> Option<usize> {
        (id > 0).then(|| (id - 1) / 2)
    }

    pub fn is_begin(&self, id: LabelId) -> bool {
        id > 0 && id % 2 == 1
    }

    pub fn begin_id(&self, type_index: usize) -> LabelId {
        1 + 2 * type_index
    }

    pub fn inside_id(&self, type_index: usize) -> LabelId {
        2 + 2 * type_index
    }

    pub fn ids(&self, labels: &[Label]) -> Result<Vec<LabelId>> {
        labels.iter().map(|l| self.id(l)).collect()
    }

    pub fn decode(&self, ids: &[LabelId]) -> Vec<Label> {
        ids.iter().map(|&i| self.labels[i].clone()).collect()
    }

    /// Per-type flag: is the type annotated by `schema`? Errors if the schema
    /// names a type outside the space.
    pub fn annotation_mask(&self, schema: &CorpusSchema) -> Result<Vec<bool>> {
        let mut mask = vec![false; self.types.len()];
        for t in &schema.annotated_types {
            let i = self
                .type_index(t)
                .ok_or_else(|| Error::UnknownType(t.to_string()))?;
            mask[i] = true;
        }
        Ok(mask)
    }

    /// Labels consistent with `gold` under `schema`: the gold label itself
    /// and, where gold is `O`, every label of a type the schema leaves
    /// unannotated.
    pub fn valid_labels(&self, gold: &Label, schema: &CorpusSchema) -> Result<Vec<Label>> {
        let gold_id = self.id(gold)?;
        let mask = self.annotation_mask(schema)?;
        Ok(self
            .valid_mask(gold_id, &mask)
            .into_iter()
            .enumerate()
            .filter(|&(_, v)| v)
            .map(|(i, _)| self.labels[i].clone())
            .collect())
    }

    pub fn alternative_labels(&self, gold: &Label, schema: &CorpusSchema) -> Result<Vec<Label>> {
        Ok(self
            .valid_labels(gold, schema)?
            .into_iter()
            .filter(|l| l != gold)
            .collect())
    }

    /// Index-level version of [`valid_labels`](Self::valid_labels).
    pub fn valid_mask(&self, gold: LabelId, annotated: &[bool]) -> Vec<bool> {
        let mut valid = self.alternative_mask(gold, annotated);
        valid[gold] = true;
        valid
    }

    /// Index-level version of [`alternative_labels`](Self::alternative_labels).
    pub fn alternative_mask(&self, gold: LabelId, annotated: &[bool]) -> Vec<bool> {
        let mut alt = vec![false; self.num_labels()];
        if gold == 0 {
            for (ti, &seen) in annotated.iter().enumerate() {
                if !seen {
                    alt[self.begin_id(ti)] = true;
                    alt[self.inside_id(ti)] = true;
                }
            }
        }
        alt
    }

    /// BIO well-formedness: `I-t` may only follow `B-t` or `I-t`.
    pub fn bio_transition_allowed(&self, from: Step, to: Step) -> bool {
        match to {
            Step::Label(to) if to > 0 && !self.is_begin(to) => match from {
                Step::Boundary => false,
                Step::Label(from) => self.type_of(from) == self.type_of(to),
            },
            _ => true,
        }
    }

    pub fn is_well_formed(&self, ids: &[LabelId]) -> bool {
        let mut prev = Step::Boundary;
        for &id in ids {
            if !self.bio_transition_allowed(prev, Step::Label(id)) {
                return false;
            }
            prev = Step::Label(id);
        }
        true
    }
}

/// Builds the global tag space over the union of the given type sets.
pub fn union_tag_space<'a, I>(schemas: I) -> Result<TagSpace>
where
    I: IntoIterator<Item = &'a BTreeSet<EntityType>>,
{
    let mut any = false;
    let mut all = BTreeSet::new();
    for s in schemas {
        any = true;
        all.extend(s.iter().cloned());
    }
    if !any {
        return Err(Error::NoSchemas);
    }
    Ok(TagSpace::new(all))
}
