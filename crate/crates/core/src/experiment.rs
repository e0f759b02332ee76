//! The zero-shot plus fine-tuning protocol over model variants and seeds.
//!
//! Each (variant, seed) cell trains one model on the partial corpora,
//! scores it on every global evaluation corpus, then fine-tunes a copy on
//! each budget-sized nested sample of a fully annotated pool and scores
//! again. Budget 0 means the trained model as is; for the multi-task model
//! that is vote combination, for larger budgets a new global head.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{default_priority, mtm_finetune, predict_vote_sentences, train_mtm};
use crate::checkpoint::Checkpoint;
use crate::corpus::{partialize, sample_subset, Corpus, PartitionPlan};
use crate::error::{Error, Result};
use crate::eval::{mcnemar, mention_prf, McNemar};
use crate::model::{Model, ModelKind};
use crate::par;
use crate::synthetic::{SyntheticGenerator, SyntheticSpec};
use crate::tagspace::Label;
use crate::training::{fine_tune, predict_sentences, train, TrainConfig};

pub const DEFAULT_BUDGETS: [usize; 5] = [0, 50, 100, 200, 400];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Variant {
    Unified { m: f64, m_prime: f64 },
    Mtm,
}

impl Variant {
    pub const UNIFIED_00: Variant = Variant::Unified { m: 0.0, m_prime: 0.0 };
    pub const UNIFIED_01: Variant = Variant::Unified { m: 0.0, m_prime: 1.0 };
    pub const UNIFIED_11: Variant = Variant::Unified { m: 1.0, m_prime: 1.0 };

    pub fn canonical() -> Vec<Variant> {
        vec![Variant::UNIFIED_00, Variant::UNIFIED_01, Variant::UNIFIED_11, Variant::Mtm]
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Variant::Mtm => write!(f, "mtm"),
            Variant::Unified { m, m_prime } => match (m, m_prime) {
                (0.0, 0.0) => write!(f, "unified-00"),
                (0.0, 1.0) => write!(f, "unified-01"),
                (1.0, 1.0) => write!(f, "unified-11"),
                _ => write!(f, "unified-{m}-{m_prime}"),
            },
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// `unified-00`, `unified-01`, `unified-11`, `mtm`, or `unified-<M>-<M'>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown variant {s:?}"));
        match s {
            "mtm" => return Ok(Variant::Mtm),
            "unified-00" => return Ok(Variant::UNIFIED_00),
            "unified-01" => return Ok(Variant::UNIFIED_01),
            "unified-11" => return Ok(Variant::UNIFIED_11),
            _ => {}
        }
        let rest = s.strip_prefix("unified-").ok_or_else(bad)?;
        let (m, mp) = rest.split_once('-').ok_or_else(bad)?;
        let m: f64 = m.parse().map_err(|_| bad())?;
        let m_prime: f64 = mp.parse().map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&m) || !(0.0..=1.0).contains(&m_prime) {
            return Err(bad());
        }
        Ok(Variant::Unified { m, m_prime })
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Corpora an experiment runs over.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    /// Partially annotated training corpora.
    pub train: Vec<Corpus>,
    /// Dev splits matching `train` by index.
    pub dev: Vec<Corpus>,
    /// Fully annotated corpora for global evaluation.
    pub eval: Vec<Corpus>,
    /// Fully annotated pool fine-tuning samples are drawn from.
    pub finetune_pool: Corpus,
    /// Fully annotated dev set for fine-tuning early stopping.
    pub finetune_dev: Corpus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSetup {
    pub spec: SyntheticSpec,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub finetune_pool: usize,
    pub finetune_dev: usize,
    /// Number of single-type parts the training data is split into.
    pub parts: usize,
    pub data_seed: u64,
}

impl Default for SyntheticSetup {
    fn default() -> Self {
        SyntheticSetup {
            spec: SyntheticSpec::default(),
            train: 4000,
            dev: 500,
            test: 500,
            finetune_pool: 1000,
            finetune_dev: 500,
            parts: 4,
            data_seed: 2024,
        }
    }
}

impl SyntheticSetup {
    /// Draws every split from one generator, so all splits share lexicons.
    pub fn generate(&self) -> Result<ExperimentData> {
        let mut g = SyntheticGenerator::new(self.spec.clone(), self.data_seed)?;
        let (train, _) = g.corpus("train", self.train);
        let (dev, _) = g.corpus("dev", self.dev);
        let (test, _) = g.corpus("test", self.test);
        let (pool, _) = g.corpus("pool", self.finetune_pool);
        let (pool_dev, _) = g.corpus("pool-dev", self.finetune_dev);
        let plan = PartitionPlan::RandomByType { parts: self.parts };
        let train = partialize(&train, &plan, self.data_seed)?;
        let dev = partialize(&dev, &plan, self.data_seed)?
            .into_iter()
            .zip(&train)
            .map(|(d, t)| d.with_id(t.id.clone()))
            .collect();
        Ok(ExperimentData {
            train,
            dev,
            eval: vec![test],
            finetune_pool: pool,
            finetune_dev: pool_dev,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub variants: Vec<Variant>,
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Base training configuration; `M`, `M_prime` and `seed` are set per cell.
    pub train: TrainConfig,
    /// Fine-tuning configuration; `seed` is set per cell.
    pub finetune: TrainConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            variants: Variant::canonical(),
            budgets: DEFAULT_BUDGETS.to_vec(),
            seeds: (0..5).collect(),
            train: TrainConfig::default(),
            // Fine-tuning starts from a trained model; a fifth of the base
            // rate keeps the first Adam steps from undoing it.
            finetune: TrainConfig {
                learning_rate: 1e-3,
                max_epochs: 15,
                ..TrainConfig::default()
            },
        }
    }
}

impl ExperimentPlan {
    pub fn cells(&self) -> Vec<(Variant, u64)> {
        self.variants
            .iter()
            .flat_map(|&v| self.seeds.iter().map(move |&s| (v, s)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: String,
    pub corpus: String,
    pub budget: usize,
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McNemarRow {
    pub seed: u64,
    pub corpus: String,
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub test: McNemar,
}

/// Output of one (variant, seed) cell.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub variant: Variant,
    pub seed: u64,
    pub rows: Vec<ResultRow>,
    /// Budget-0 predictions per evaluation corpus.
    pub zero_shot: Vec<Vec<Vec<Label>>>,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentResults {
    pub rows: Vec<ResultRow>,
    pub mcnemar: Vec<McNemarRow>,
}

/// Global predictions of a trained model.
pub fn predict_global(model: &Model, corpus: &Corpus) -> Result<Vec<Vec<Label>>> {
    match model.kind {
        ModelKind::Unified => predict_sentences(model, &corpus.sentences),
        ModelKind::MultiHead => predict_vote_sentences(model, &corpus.sentences, &default_priority(model)),
    }
}

/// Trains the base model of a cell.
pub fn train_variant(data: &ExperimentData, plan: &ExperimentPlan, variant: Variant, seed: u64) -> Result<Checkpoint> {
    let mut cfg = plan.train.clone();
    cfg.seed = seed;
    let out = match variant {
        Variant::Unified { m, m_prime } => {
            cfg.m = m;
            cfg.m_prime = m_prime;
            train(&data.train, &data.dev, &cfg)?
        }
        Variant::Mtm => train_mtm(&data.train, &data.dev, &cfg)?,
    };
    Ok(out.checkpoint)
}

fn row(variant: Variant, corpus: &Corpus, budget: usize, seed: u64, pred: &[Vec<Label>]) -> Result<ResultRow> {
    let s = mention_prf(&corpus.sentences, pred, None)?.overall;
    Ok(ResultRow {
        variant: variant.to_string(),
        corpus: corpus.id.clone(),
        budget,
        seed,
        precision: s.precision,
        recall: s.recall,
        f1: s.f1,
    })
}

pub fn run_cell(data: &ExperimentData, plan: &ExperimentPlan, variant: Variant, seed: u64) -> Result<CellResult> {
    if data.train.is_empty() || data.eval.is_empty() {
        return Err(Error::Empty("experiment corpora"));
    }
    let base = train_variant(data, plan, variant, seed)?;
    let mut rows = Vec::new();
    let mut zero_shot = Vec::new();
    let mut ft = plan.finetune.clone();
    ft.seed = seed;
    for &budget in &plan.budgets {
        if budget == 0 {
            for corpus in &data.eval {
                let pred = predict_global(&base.model, corpus)?;
                rows.push(row(variant, corpus, 0, seed, &pred)?);
                zero_shot.push(pred);
            }
            continue;
        }
        let sample = sample_subset(&data.finetune_pool, budget, seed)?;
        let dev = std::slice::from_ref(&data.finetune_dev);
        let tuned = match variant {
            Variant::Unified { m, m_prime } => {
                ft.m = m;
                ft.m_prime = m_prime;
                fine_tune(&base, &sample, dev, &ft)?
            }
            Variant::Mtm => mtm_finetune(&base, &sample, dev, &ft)?,
        };
        for corpus in &data.eval {
            let pred = predict_global(&tuned.checkpoint.model, corpus)?;
            rows.push(row(variant, corpus, budget, seed, &pred)?);
        }
    }
    log::info!("finished {variant} seed {seed}");
    Ok(CellResult {
        variant,
        seed,
        rows,
        zero_shot,
    })
}

/// Pairwise McNemar tests between variants at budget 0, per seed and corpus.
pub fn zero_shot_mcnemar(data: &ExperimentData, cells: &[CellResult]) -> Result<Vec<McNemarRow>> {
    let mut by_seed: BTreeMap<u64, Vec<&CellResult>> = BTreeMap::new();
    for c in cells.iter().filter(|c| !c.zero_shot.is_empty()) {
        by_seed.entry(c.seed).or_default().push(c);
    }
    let mut out = Vec::new();
    for (seed, group) in by_seed {
        for (ci, corpus) in data.eval.iter().enumerate() {
            for i in 0..group.len() {
                for j in i + 1..group.len() {
                    out.push(McNemarRow {
                        seed,
                        corpus: corpus.id.clone(),
                        a: group[i].variant.to_string(),
                        b: group[j].variant.to_string(),
                        test: mcnemar(&corpus.sentences, &group[i].zero_shot[ci], &group[j].zero_shot[ci])?,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Runs every cell (concurrently when the parallel feature is on); result
/// order follows `plan.cells()`.
pub fn run_experiment(data: &ExperimentData, plan: &ExperimentPlan) -> Result<(ExperimentResults, Vec<CellResult>)> {
    let cells = plan.cells();
    let results: Vec<CellResult> = par::map(&cells, |&(v, s)| run_cell(data, plan, v, s))
        .into_iter()
        .collect::<Result<_>>()?;
    let rows = results.iter().flat_map(|c| c.rows.iter().cloned()).collect();
    let mcnemar = zero_shot_mcnemar(data, &results)?;
    Ok((ExperimentResults { rows, mcnemar }, results))
}

pub const RESULTS_HEADER: &str = "variant,corpus,budget,seed,precision,recall,f1";

pub fn write_rows_csv<W: Write>(rows: &[ResultRow], mut out: W, header: bool) -> std::io::Result<()> {
    if header {
        writeln!(out, "{RESULTS_HEADER}")?;
    }
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6}",
            r.variant, r.corpus, r.budget, r.seed, r.precision, r.recall, r.f1
        )?;
    }
    Ok(())
}

pub fn parse_rows_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line == RESULTS_HEADER || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Config(format!("malformed results row {}: {line}", i + 1));
        if f.len() != 7 {
            return Err(bad());
        }
        rows.push(ResultRow {
            variant: f[0].to_string(),
            corpus: f[1].to_string(),
            budget: f[2].parse().map_err(|_| bad())?,
            seed: f[3].parse().map_err(|_| bad())?,
            precision: f[4].parse().map_err(|_| bad())?,
            recall: f[5].parse().map_err(|_| bad())?,
            f1: f[6].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

pub fn write_mcnemar_csv<W: Write>(rows: &[McNemarRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "seed,corpus,a,b,b_count,c_count,chi_square,significant_at_0.01")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{}",
            r.seed, r.corpus, r.a, r.b, r.test.b, r.test.c, r.test.chi_square, r.test.significant_at_001
        )?;
    }
    Ok(())
}

/// Median of the values (mean of the middle pair for even counts).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Per-seed median of `metric` over rows matching `variant` and `budget`.
pub fn median_of(rows: &[ResultRow], variant: &str, budget: usize, metric: fn(&ResultRow) -> f64) -> f64 {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.variant == variant && r.budget == budget)
        .map(metric)
        .collect();
    median(&v)
}
