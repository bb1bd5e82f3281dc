//! End-to-end commands over files: dataset generation, oracle queries,
//! training, evaluation and fixture synthesis. The command-line tool is a
//! thin layer over these.
//!
//! Directory layout shared by every command:
//! - `train.txt`, `dev.txt`, `test.txt`: tab-separated triples
//! - `queries/{train,dev,test}.jsonl`: regex queries
//! - `generation_report.json`, `model.ckpt` (+ `.json`), `train_log.jsonl`,
//!   `run_report.json`, `<tag>_report.json`, `<tag>_ranks.jsonl`

use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{build_dataset, builtin_templates, DatasetError, DatasetSpec, GenerationReport, SplitTargets, TemplateSet};
use crate::eval::{evaluate_split, EvalError, EvalOptions, EvalReport};
use crate::fixtures::{build_fixture, write_fixture, Fixture, FixtureError, FixtureName};
use crate::kb::{read_queries, write_queries, GraphSelector, KbError, KnowledgeBase, LoadSummary, RegexQuery, Split};
use crate::model::checkpoint::{self, Checkpoint};
use crate::model::ModelError;
use crate::regex::{parse, ParseError, Variant};
use crate::train::{train, EpochLog, RunReport, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: file not found")]
    MissingFile { path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("regex {regex:?}: {source}")]
    Parse {
        regex: String,
        #[source]
        source: ParseError,
    },
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn require(path: &Path) -> Result<(), PipelineError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::MissingFile { path: path.to_path_buf() })
    }
}

fn create_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| PipelineError::Json { path: path.to_path_buf(), message: e.to_string() })?;
    write_with(path, |w| writeln!(w, "{text}"))
}

fn to_value<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("configs serialize")
}

/// Triple files for the three splits. Dev and test are optional.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriplePaths {
    pub train: PathBuf,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
}

impl TriplePaths {
    /// `train.txt`, `dev.txt` and `test.txt` inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self { train: dir.join("train.txt"), dev: Some(dir.join("dev.txt")), test: Some(dir.join("test.txt")) }
    }

    fn files(&self) -> impl Iterator<Item = (Split, &PathBuf)> {
        [(Split::Train, Some(&self.train)), (Split::Dev, self.dev.as_ref()), (Split::Test, self.test.as_ref())]
            .into_iter()
            .filter_map(|(s, p)| p.map(|p| (s, p)))
    }

    /// Every configured file that does not exist.
    pub fn missing(&self) -> Vec<PathBuf> {
        self.files().filter(|(_, p)| !p.is_file()).map(|(_, p)| p.clone()).collect()
    }

    /// Loads train, then dev, then test, so entity ids follow first
    /// appearance in that order.
    pub fn load(&self) -> Result<(KnowledgeBase, Vec<LoadSummary>), PipelineError> {
        let mut kb = KnowledgeBase::new();
        let mut summaries = Vec::new();
        for (split, path) in self.files() {
            require(path)?;
            summaries.push(kb.load_triples(path, split)?);
        }
        Ok((kb, summaries))
    }
}

/// Query files in `dir/queries`.
pub fn query_path(dir: &Path, split: Split) -> PathBuf {
    dir.join("queries").join(format!("{split}.jsonl"))
}

pub fn load_queries(kb: &KnowledgeBase, path: &Path) -> Result<Vec<RegexQuery>, PipelineError> {
    require(path)?;
    let f = fs::File::open(path).map_err(io_err(path))?;
    Ok(read_queries(kb, BufReader::new(f))?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenConfig {
    pub triples: TriplePaths,
    pub dataset: TemplateSet,
    pub queries_per_template: usize,
    #[serde(default)]
    pub split_targets: SplitTargets,
    pub max_answers: usize,
    pub max_len: usize,
    pub attempt_factor: usize,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl GenConfig {
    pub fn new(triples: TriplePaths, dataset: TemplateSet, out_dir: PathBuf) -> Self {
        Self {
            triples,
            dataset,
            queries_per_template: 1000,
            split_targets: SplitTargets::default(),
            max_answers: 50,
            max_len: crate::kb::DEFAULT_MAX_PATH_LEN,
            attempt_factor: 100,
            seed: 0,
            workers: 1,
            out_dir,
        }
    }
}

/// Generates, routes and caps a query dataset, writing the three query
/// files and the generation report.
pub fn cmd_gen(config: &GenConfig) -> Result<GenerationReport, PipelineError> {
    let (kb, _) = config.triples.load()?;
    let spec = DatasetSpec {
        templates: builtin_templates(config.dataset),
        queries_per_template: config.queries_per_template,
        split_targets: config.split_targets.clone(),
        max_answers: config.max_answers,
        max_len: config.max_len,
        seed: config.seed,
        attempt_factor: config.attempt_factor,
    };
    let (splits, mut report) = build_dataset(&kb, &spec, config.workers)?;
    report.config = to_value(config);
    create_dir(&config.out_dir.join("queries"))?;
    for s in Split::ALL {
        let path = query_path(&config.out_dir, s);
        write_with(&path, |w| write_queries(&kb, splits.get(s), w))?;
    }
    write_json(&config.out_dir.join("generation_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    Exact,
    Capped(usize),
}

/// Answers of `(head, regex, ?)`, as sorted entity names.
pub fn cmd_oracle(
    triples: &TriplePaths,
    graph: GraphSelector,
    head: &str,
    regex: &str,
    mode: OracleMode,
) -> Result<Vec<String>, PipelineError> {
    let (kb, _) = triples.load()?;
    let parsed = parse(regex).map_err(|source| PipelineError::Parse { regex: regex.to_string(), source })?;
    let expr = kb.resolve_regex(&parsed)?;
    let head = kb.entity(head)?;
    let answers = match mode {
        OracleMode::Exact => kb.answer_set_exact(graph, head, &expr)?,
        OracleMode::Capped(n) => kb.answer_set_capped(graph, head, &expr, n)?,
    };
    let mut names: Vec<String> = answers.iter().map(|e| kb.entity_name(*e).to_string()).collect();
    names.sort();
    Ok(names)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub triples: TriplePaths,
    /// Regex training queries; without them only the single-hop stage has data.
    #[serde(default)]
    pub train_queries: Option<PathBuf>,
    #[serde(default)]
    pub dev_queries: Option<PathBuf>,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

impl TrainRunConfig {
    /// Every problem with the configuration, not just the first.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut errs: Vec<String> =
            self.triples.missing().into_iter().map(|p| format!("{}: file not found", p.display())).collect();
        for p in [&self.train_queries, &self.dev_queries].into_iter().flatten() {
            if !p.is_file() {
                errs.push(format!("{}: file not found", p.display()));
            }
        }
        if let Err(TrainError::InvalidConfig(e)) = self.train.validate() {
            errs.extend(e);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::InvalidConfig(errs))
        }
    }
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Trains both stages and writes the checkpoint, the per-epoch log and the
/// run report. `progress` sees every epoch as it finishes.
pub fn cmd_train(config: &TrainRunConfig, progress: &mut dyn FnMut(&EpochLog)) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let (kb, _) = config.triples.load()?;
    let load = |p: &Option<PathBuf>| p.as_deref().map(|p| load_queries(&kb, p)).transpose();
    let regex_train = load(&config.train_queries)?.unwrap_or_default();
    let regex_dev = load(&config.dev_queries)?.unwrap_or_default();

    create_dir(&config.out_dir)?;
    let log_path = config.out_dir.join("train_log.jsonl");
    let mut log = BufWriter::new(fs::File::create(&log_path).map_err(io_err(&log_path))?);
    let mut log_err = None;
    let outcome = train(&kb, &regex_train, &regex_dev, &config.train, &mut |e| {
        if log_err.is_none() {
            let line = serde_json::to_string(e).expect("epoch logs serialize");
            log_err = writeln!(log, "{line}").err();
        }
        progress(e);
    })?;
    if let Some(e) = log_err {
        return Err(io_err(&log_path)(e));
    }
    log.flush().map_err(io_err(&log_path))?;

    let echo = serde_json::json!({ "run": config, "report": &outcome.report });
    let ckpt = config.out_dir.join(CHECKPOINT_FILE);
    checkpoint::save(&ckpt, &outcome.params, kb.entities().names(), kb.relations().names(), echo.clone())
        .map_err(ModelError::from)?;
    write_json(&config.out_dir.join("run_report.json"), &echo)?;
    Ok(outcome.report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRunConfig {
    pub triples: TriplePaths,
    pub queries: PathBuf,
    pub checkpoint: PathBuf,
    /// Defaults to the variant the checkpoint was trained with.
    #[serde(default)]
    pub variant: Option<Variant>,
    #[serde(default)]
    pub options: EvalOptions,
    pub out_dir: PathBuf,
    /// File-name prefix for the report and the per-pair ranks.
    pub tag: String,
}

fn trained_variant(ckpt: &Checkpoint) -> Option<Variant> {
    let v = ckpt.sidecar.extra.pointer("/run/train/variant")?;
    serde_json::from_value(v.clone()).ok()
}

/// Ranks every pair of a query file against a checkpoint and writes
/// `<tag>_report.json` and `<tag>_ranks.jsonl`.
pub fn cmd_eval(config: &EvalRunConfig) -> Result<EvalReport, PipelineError> {
    let (kb, _) = config.triples.load()?;
    require(&config.checkpoint)?;
    let ckpt = checkpoint::load(&config.checkpoint)?;
    ckpt.check_vocab(kb.entities().names(), kb.relations().names()).map_err(ModelError::from)?;
    let variant = match config.variant.or_else(|| trained_variant(&ckpt)) {
        Some(v) => v,
        None => {
            return Err(PipelineError::InvalidConfig(vec![
                "no variant given and the checkpoint does not record one".into(),
            ]))
        }
    };
    let queries = load_queries(&kb, &config.queries)?;
    let (mut report, outcomes) = evaluate_split(&ckpt.params, variant, &queries, config.options)?;
    report.config = to_value(config);

    create_dir(&config.out_dir)?;
    write_json(&config.out_dir.join(format!("{}_report.json", config.tag)), &report)?;
    let ranks = config.out_dir.join(format!("{}_ranks.jsonl", config.tag));
    write_with(&ranks, |w| {
        for o in &outcomes {
            let line = serde_json::json!({
                "query": o.query,
                "type": o.query_type,
                "target": kb.entity_name(o.target),
                "rank": o.rank,
                "candidates": o.candidates,
            });
            writeln!(w, "{line}")?;
        }
        Ok(())
    })?;
    Ok(report)
}

/// Builds a fixture and writes it to `out_dir`.
pub fn cmd_fixture(name: FixtureName, seed: u64, out_dir: &Path) -> Result<Fixture, PipelineError> {
    let fixture = build_fixture(name, seed)?;
    write_fixture(&fixture, out_dir)?;
    Ok(fixture)
}
