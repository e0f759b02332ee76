//! Corpus arguments of the form `PATH[@TYPE,TYPE...]`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use unified_ner::corpus::{read_conll, Corpus, ReadOptions};
use unified_ner::tagspace::EntityType;

/// A CoNLL file plus an optional explicit schema. Without `@TYPES` the
/// annotated types are the ones whose tags occur in the file.
#[derive(Clone, Debug)]
pub struct CorpusArg {
    pub path: PathBuf,
    pub types: Option<BTreeSet<EntityType>>,
}

impl FromStr for CorpusArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (path, types) = match s.rsplit_once('@') {
            Some((p, t)) => {
                let types = t
                    .split(',')
                    .filter(|x| !x.is_empty())
                    .map(|x| EntityType::new(x).map_err(|e| e.to_string()))
                    .collect::<Result<BTreeSet<_>, _>>()?;
                (p, Some(types))
            }
            None => (s, None),
        };
        if path.is_empty() {
            return Err("empty corpus path".into());
        }
        Ok(CorpusArg {
            path: PathBuf::from(path),
            types,
        })
    }
}

/// Corpus id used for a file: its stem.
pub fn corpus_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into())
}

impl CorpusArg {
    pub fn plain(path: &Path) -> Self {
        CorpusArg {
            path: path.to_path_buf(),
            types: None,
        }
    }

    pub fn load(&self) -> Result<Corpus> {
        let file = File::open(&self.path).with_context(|| format!("opening {}", self.path.display()))?;
        let opts = ReadOptions {
            schema: self.types.clone(),
            ..ReadOptions::new(corpus_id(&self.path))
        };
        read_conll(BufReader::new(file), &opts).with_context(|| format!("reading {}", self.path.display()))
    }
}

pub fn load_all(args: &[CorpusArg]) -> Result<Vec<Corpus>> {
    args.iter().map(CorpusArg::load).collect()
}
