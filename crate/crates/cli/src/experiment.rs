//! `uner experiment`: the full variant × seed × budget matrix with resume.
//!
//! Each finished cell leaves `cells/<variant>_seed<s>.csv` plus its budget-0
//! predictions, and is recorded in `progress.json`; `--resume` skips cells
//! listed there. Result files are assembled in plan order at the end.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use unified_ner::corpus::{read_conll, write_predictions, ReadOptions};
use unified_ner::experiment::{
    parse_rows_csv, run_cell, write_mcnemar_csv, write_rows_csv, zero_shot_mcnemar, CellResult, ExperimentData,
    ExperimentPlan, SyntheticSetup, Variant,
};
use unified_ner::par;

use crate::inputs::{load_all, CorpusArg};
use crate::manifest::{write_atomic, Recorder};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusFiles {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub eval: Vec<String>,
    pub finetune_pool: String,
    pub finetune_dev: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plan: ExperimentPlan,
    pub synthetic: Option<SyntheticSetup>,
    pub corpora: Option<CorpusFiles>,
}

fn parse_arg(s: &str) -> Result<CorpusArg> {
    s.parse().map_err(|e: String| anyhow::anyhow!(e))
}

impl ExperimentConfig {
    pub fn data(&self, rec: &mut Recorder) -> Result<ExperimentData> {
        match (&self.synthetic, &self.corpora) {
            (Some(setup), None) => Ok(setup.generate()?),
            (None, Some(files)) => {
                let args = |v: &[String]| v.iter().map(|s| parse_arg(s)).collect::<Result<Vec<_>>>();
                let train = args(&files.train)?;
                let dev = args(&files.dev)?;
                let eval = args(&files.eval)?;
                let pool = parse_arg(&files.finetune_pool)?;
                let pool_dev = parse_arg(&files.finetune_dev)?;
                for a in train.iter().chain(&dev).chain(&eval).chain([&pool, &pool_dev]) {
                    rec.input(&a.path);
                }
                Ok(ExperimentData {
                    train: load_all(&train)?,
                    dev: load_all(&dev)?,
                    eval: load_all(&eval)?,
                    finetune_pool: pool.load()?,
                    finetune_dev: pool_dev.load()?,
                })
            }
            _ => bail!("the experiment config needs exactly one of [synthetic] or [corpora]"),
        }
    }
}

#[derive(Default, Serialize, Deserialize)]
struct Progress {
    completed: BTreeSet<String>,
}

fn cell_name(v: Variant, seed: u64) -> String {
    format!("{v}_seed{seed}")
}

struct Layout {
    cells: PathBuf,
}

impl Layout {
    fn rows(&self, name: &str) -> PathBuf {
        self.cells.join(format!("{name}.csv"))
    }

    fn zero_shot(&self, name: &str, corpus: &str) -> PathBuf {
        self.cells.join(format!("{name}.{corpus}.conll"))
    }
}

fn save_cell(layout: &Layout, data: &ExperimentData, cell: &CellResult) -> Result<()> {
    let name = cell_name(cell.variant, cell.seed);
    for (corpus, pred) in data.eval.iter().zip(&cell.zero_shot) {
        let mut buf = Vec::new();
        write_predictions(&corpus.sentences, pred, &mut buf)?;
        write_atomic(&layout.zero_shot(&name, &corpus.id), &buf)?;
    }
    let mut buf = Vec::new();
    write_rows_csv(&cell.rows, &mut buf, true)?;
    write_atomic(&layout.rows(&name), &buf)
}

fn load_cell(layout: &Layout, data: &ExperimentData, variant: Variant, seed: u64) -> Result<CellResult> {
    let name = cell_name(variant, seed);
    let path = layout.rows(&name);
    let rows = parse_rows_csv(&fs::read_to_string(&path).with_context(|| format!("resuming from {}", path.display()))?)?;
    let mut zero_shot = Vec::new();
    if rows.iter().any(|r| r.budget == 0) {
        for corpus in &data.eval {
            let p = layout.zero_shot(&name, &corpus.id);
            let file = File::open(&p).with_context(|| format!("resuming from {}", p.display()))?;
            let read = read_conll(BufReader::new(file), &ReadOptions::new(corpus.id.clone()))?;
            zero_shot.push(read.sentences.into_iter().map(|s| s.gold).collect());
        }
    }
    Ok(CellResult {
        variant,
        seed,
        rows,
        zero_shot,
    })
}

/// Runs (or resumes) the experiment into `out_dir`.
pub fn run(config: &ExperimentConfig, out_dir: &Path, resume: bool, mut rec: Recorder) -> Result<()> {
    let data = config.data(&mut rec)?;
    let plan = &config.plan;
    if plan.variants.is_empty() || plan.seeds.is_empty() || plan.budgets.is_empty() {
        bail!("the plan needs at least one variant, seed and budget");
    }
    let layout = Layout {
        cells: out_dir.join("cells"),
    };
    fs::create_dir_all(&layout.cells)?;
    let progress_path = out_dir.join("progress.json");
    let progress = if resume && progress_path.exists() {
        serde_json::from_slice(&fs::read(&progress_path)?).context("reading progress.json")?
    } else {
        Progress::default()
    };
    let progress = Mutex::new(progress);
    let cells = plan.cells();
    let results = par::map(&cells, |&(v, s)| -> Result<CellResult> {
        let name = cell_name(v, s);
        if progress.lock().expect("progress lock").completed.contains(&name) {
            log::info!("skipping finished cell {name}");
            return load_cell(&layout, &data, v, s);
        }
        let cell = run_cell(&data, plan, v, s)?;
        save_cell(&layout, &data, &cell)?;
        let mut p = progress.lock().expect("progress lock");
        p.completed.insert(name);
        write_atomic(&progress_path, &serde_json::to_vec_pretty(&*p)?)?;
        Ok(cell)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let rows: Vec<_> = results.iter().flat_map(|c| c.rows.iter().cloned()).collect();
    let mut buf = Vec::new();
    write_rows_csv(&rows, &mut buf, true)?;
    let results_path = out_dir.join("results.csv");
    write_atomic(&results_path, &buf)?;
    let mut buf = Vec::new();
    write_mcnemar_csv(&zero_shot_mcnemar(&data, &results)?, &mut buf)?;
    let mcnemar_path = out_dir.join("mcnemar.csv");
    write_atomic(&mcnemar_path, &buf)?;

    rec.config(config)?;
    rec.output(&results_path);
    rec.output(&mcnemar_path);
    rec.write(&out_dir.join("manifest.json"))
}
