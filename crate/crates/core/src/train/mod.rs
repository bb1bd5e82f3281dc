//! Two-stage training: single-hop pretraining, then regex queries.

mod loss;
mod sampling;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use loss::{
    adversarial_weights, example_loss, loss_from_distances, loss_value, negative_weights, uniform_weights, Sampling,
};
pub use sampling::negative_sample;

use crate::eval::{self, EvalError, EvalOptions};
use crate::ids::EntityId;
use crate::kb::{GraphSelector, KnowledgeBase, RegexQuery, Split};
use crate::model::{Forward, ModelConfig, ModelError, ModelKind, ModelParams};
use crate::numeric::{adam_step, AdamConfig, AdamState, Gradients, NumericError, ParamStore};
use crate::regex::{is_answerable, Regex, RegexExpr, Variant};
use crate::rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("answer set of {answers} entities covers the whole entity set; no negatives exist")]
    DegenerateQuery { answers: usize },
    #[error("non-finite loss in {stage} epoch {epoch} batch {batch}; batch examples:\n{dump}")]
    NonFiniteLoss { stage: Stage, epoch: usize, batch: usize, dump: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    SingleHop,
    Regex,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::SingleHop => "single-hop",
            Stage::Regex => "regex",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub lr: f64,
    /// Epoch cap.
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub variant: Variant,
    pub batch_size: usize,
    pub negatives: usize,
    pub single_hop: StageConfig,
    pub regex: StageConfig,
    /// Negative weighting in single-hop training of the complex models.
    /// Query2Box and every regex stage use uniform weights.
    pub single_hop_sampling: Sampling,
    /// Dev evaluations without improvement before stopping.
    pub patience: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub workers: usize,
    /// Evaluate at most this many dev queries (in file order).
    pub dev_limit: Option<usize>,
}

impl TrainConfig {
    /// Settings used for FB15K-Regex.
    pub fn fb15k(kind: ModelKind, variant: Variant) -> Self {
        let dim = if kind.is_complex() { 400 } else { 800 };
        Self {
            model: ModelConfig::new(kind, dim, 24.0, 0.2),
            variant,
            batch_size: 1024,
            negatives: 256,
            single_hop: StageConfig { lr: 1e-4, epochs: 1000 },
            regex: StageConfig { lr: 1e-4, epochs: 500 },
            single_hop_sampling: Sampling::SelfAdversarial { temperature: 1.0 },
            patience: 10,
            eval_every: 5,
            seed: 0,
            workers: 1,
            dev_limit: None,
        }
    }

    /// Settings used for Wiki100-Regex.
    pub fn wiki100(kind: ModelKind, variant: Variant) -> Self {
        let mut c = Self::fb15k(kind, variant);
        c.model.gamma = 20.0;
        c.single_hop.lr = 1e-3;
        c
    }

    /// Lists every violated constraint.
    pub fn validate(&self) -> Result<(), TrainError> {
        let mut errs = Vec::new();
        if let Err(ModelError::InvalidConfig(m)) = self.model.validate() {
            errs.push(m);
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be at least 1".into());
        }
        if self.negatives == 0 {
            errs.push("negatives must be at least 1".into());
        }
        for (name, s) in [("single_hop", self.single_hop), ("regex", self.regex)] {
            if !(s.lr.is_finite() && s.lr > 0.0) {
                errs.push(format!("{name}.lr must be positive, got {}", s.lr));
            }
        }
        if let Sampling::SelfAdversarial { temperature } = self.single_hop_sampling {
            if !(temperature.is_finite() && temperature >= 0.0) {
                errs.push(format!("temperature must be non-negative, got {temperature}"));
            }
        }
        if self.patience == 0 {
            errs.push("patience must be at least 1".into());
        }
        if self.eval_every == 0 {
            errs.push("eval_every must be at least 1".into());
        }
        if self.workers == 0 {
            errs.push("workers must be at least 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(TrainError::InvalidConfig(errs))
        }
    }

    fn sampling_for(&self, stage: Stage) -> Sampling {
        match (stage, self.model.kind) {
            (Stage::SingleHop, ModelKind::RotateBox | ModelKind::Rotate) => self.single_hop_sampling,
            _ => Sampling::Uniform,
        }
    }

    fn stage(&self, stage: Stage) -> StageConfig {
        match stage {
            Stage::SingleHop => self.single_hop,
            Stage::Regex => self.regex,
        }
    }
}

/// Decision after a sequence of dev evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub stop: bool,
    /// Index of the best evaluation (first one on ties).
    pub best: usize,
}

/// Stops once `patience` evaluations in a row failed to beat the best.
pub fn early_stop(history: &[f64], patience: usize) -> StopDecision {
    assert!(!history.is_empty(), "early stopping needs at least one evaluation");
    let mut best = 0;
    for (i, &m) in history.iter().enumerate() {
        if m > history[best] {
            best = i;
        }
    }
    StopDecision { stop: history.len() - 1 - best >= patience, best }
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: Stage,
    pub mean_loss: f64,
    pub dev_mrr: Option<f64>,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_dev_mrr: Option<f64>,
    pub stopped_early: bool,
    pub examples: usize,
    /// Training queries the variant cannot embed, and their answer pairs.
    pub skipped_queries: usize,
    pub skipped_pairs: usize,
}

/// Training examples: queries with filters and (query, answer) pairs.
#[derive(Debug, Clone, Default)]
pub struct TrainSet {
    pub queries: Vec<TrainQuery>,
    pub examples: Vec<(usize, EntityId)>,
    pub skipped_queries: usize,
    pub skipped_pairs: usize,
}

#[derive(Debug, Clone)]
pub struct TrainQuery {
    pub head: EntityId,
    pub expr: RegexExpr,
    /// Answers excluded from negatives.
    pub filter: BTreeSet<EntityId>,
}

impl TrainSet {
    /// `(h, r, ?)` queries from the training triples, filtered by the full
    /// graph.
    pub fn single_hop(kb: &KnowledgeBase) -> Self {
        let mut grouped: BTreeMap<(EntityId, crate::ids::RelationId), Vec<EntityId>> = BTreeMap::new();
        for t in kb.triples(Split::Train) {
            grouped.entry((t.head, t.relation)).or_default().push(t.tail);
        }
        let mut set = TrainSet::default();
        for ((h, r), tails) in grouped {
            let filter = kb.tails(GraphSelector::Full, r, h).iter().copied().collect();
            let qi = set.queries.len();
            set.queries.push(TrainQuery { head: h, expr: Regex::rel(r), filter });
            set.examples.extend(tails.into_iter().map(|t| (qi, t)));
        }
        set
    }

    /// Regex training queries the variant can embed.
    pub fn regex(queries: &[RegexQuery], variant: Variant, max_branches: usize) -> Self {
        let mut set = TrainSet::default();
        for q in queries {
            if !is_answerable(&q.expr, variant, max_branches) {
                set.skipped_queries += 1;
                set.skipped_pairs += q.answers.len();
                continue;
            }
            let qi = set.queries.len();
            set.queries.push(TrainQuery { head: q.head, expr: q.expr.clone(), filter: q.filter_set().clone() });
            set.examples.extend(q.answers.iter().map(|a| (qi, *a)));
        }
        set
    }
}

struct Prepared {
    query: usize,
    answer: EntityId,
    negatives: Vec<EntityId>,
}

fn batch_gradients(
    params: &ModelParams,
    set: &TrainSet,
    batch: &[Prepared],
    variant: Variant,
    sampling: Sampling,
) -> Result<(Vec<f64>, Gradients), TrainError> {
    let mut grads = params.store.zero_gradients();
    let mut losses = Vec::with_capacity(batch.len());
    for ex in batch {
        let q = &set.queries[ex.query];
        let mut fwd = Forward::new(params);
        let loss = example_loss(&mut fwd, variant, q.head, &q.expr, ex.answer, &ex.negatives, params.config.gamma, sampling)?
            .expect("training sets hold answerable queries only");
        let value = fwd.tape.scalar(loss);
        losses.push(value);
        if value.is_finite() {
            fwd.tape.backward(loss, &mut grads)?;
        }
    }
    Ok((losses, grads))
}

fn dump_batch(set: &TrainSet, batch: &[Prepared], losses: &[f64]) -> String {
    batch
        .iter()
        .zip(losses)
        .filter(|(_, l)| !l.is_finite())
        .take(20)
        .map(|(ex, l)| {
            let q = &set.queries[ex.query];
            format!("  head {} expr {:?} answer {} loss {l}", q.head, q.expr, ex.answer)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn dev_mrr(params: &ModelParams, variant: Variant, dev: &[RegexQuery], config: &TrainConfig) -> Result<Option<f64>, TrainError> {
    let dev = match config.dev_limit {
        Some(n) => &dev[..n.min(dev.len())],
        None => dev,
    };
    if dev.is_empty() {
        return Ok(None);
    }
    let opts = EvalOptions { workers: config.workers, ..Default::default() };
    let (report, _) = eval::evaluate_split(params, variant, dev, opts)?;
    Ok(Some(report.overall.mrr))
}

/// Runs one stage: seeded shuffling, batching, Adam updates, periodic dev
/// evaluation with early stopping. Parameters end at the best evaluated
/// state.
pub fn train_stage(
    params: &mut ModelParams,
    stage: Stage,
    set: &TrainSet,
    dev: &[RegexQuery],
    config: &TrainConfig,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<StageReport, TrainError> {
    config.validate()?;
    let sc = config.stage(stage);
    let sampling = config.sampling_for(stage);
    let variant = config.variant;
    let mut report = StageReport {
        stage,
        epochs_run: 0,
        best_epoch: None,
        best_dev_mrr: None,
        stopped_early: false,
        examples: set.examples.len(),
        skipped_queries: set.skipped_queries,
        skipped_pairs: set.skipped_pairs,
    };
    if set.examples.is_empty() || sc.epochs == 0 {
        return Ok(report);
    }
    let mut shuffle_rng = rng::stream(config.seed, &format!("shuffle/{stage}"));
    let mut sample_rng = rng::stream(config.seed, &format!("sampling/{stage}"));
    let mut adam = AdamState::new(&params.store, AdamConfig::with_lr(sc.lr));
    let mut order: Vec<usize> = (0..set.examples.len()).collect();
    let mut history: Vec<f64> = Vec::new();
    let mut best_store: Option<ParamStore> = None;
    let n_entities = params.num_entities();

    for epoch in 1..=sc.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (query, answer) = set.examples[i];
                let negatives = negative_sample(n_entities, &set.queries[query].filter, config.negatives, &mut sample_rng)?;
                batch.push(Prepared { query, answer, negatives });
            }
            let workers = config.workers.min(batch.len());
            let (losses, mut grads) = if workers <= 1 {
                batch_gradients(params, set, &batch, variant, sampling)?
            } else {
                let shard = batch.len().div_ceil(workers);
                let shared: &ModelParams = params;
                let parts: Vec<Result<(Vec<f64>, Gradients), TrainError>> = std::thread::scope(|s| {
                    let handles: Vec<_> = batch
                        .chunks(shard)
                        .map(|c| s.spawn(move || batch_gradients(shared, set, c, variant, sampling)))
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
                });
                let mut losses = Vec::with_capacity(batch.len());
                let mut total = params.store.zero_gradients();
                for p in parts {
                    let (l, g) = p?;
                    losses.extend(l);
                    total.add_assign(&g);
                }
                (losses, total)
            };
            if losses.iter().any(|l| !l.is_finite()) {
                return Err(TrainError::NonFiniteLoss { stage, epoch, batch: b, dump: dump_batch(set, &batch, &losses) });
            }
            loss_sum += losses.iter().sum::<f64>();
            grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut params.store, &grads, &mut adam)?;
        }
        report.epochs_run = epoch;
        let evaluate = epoch % config.eval_every == 0 || epoch == sc.epochs;
        let mrr = if evaluate { dev_mrr(params, variant, dev, config)? } else { None };
        let mut stop = false;
        if let Some(m) = mrr {
            history.push(m);
            let d = early_stop(&history, config.patience);
            if d.best == history.len() - 1 {
                best_store = Some(params.store.clone());
                report.best_epoch = Some(epoch);
                report.best_dev_mrr = Some(m);
            }
            stop = d.stop;
        }
        log(&EpochLog {
            epoch,
            stage,
            mean_loss: loss_sum / set.examples.len() as f64,
            dev_mrr: mrr,
            lr: sc.lr,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        if stop {
            report.stopped_early = true;
            break;
        }
    }
    if let Some(best) = best_store {
        params.store = best;
    }
    Ok(report)
}

/// Result of a full run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub single_hop: StageReport,
    pub regex: Option<StageReport>,
    /// Test single-hop MRR after pretraining and after regex training.
    pub single_hop_test_mrr_before_regex: Option<f64>,
    pub single_hop_test_mrr_after_regex: Option<f64>,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    /// Snapshot taken after the single-hop stage.
    pub pretrained: ModelParams,
    pub report: RunReport,
}

fn single_hop_mrr(params: &ModelParams, queries: &[RegexQuery], config: &TrainConfig) -> Result<Option<f64>, TrainError> {
    if queries.is_empty() {
        return Ok(None);
    }
    let opts = EvalOptions { workers: config.workers, ..Default::default() };
    Ok(Some(eval::evaluate_split(params, Variant::Comp, queries, opts)?.0.overall.mrr))
}

/// Initializes a model and runs both stages. The regex stage is skipped
/// for the baseline variant, which only ever sees single-hop queries.
pub fn train(
    kb: &KnowledgeBase,
    regex_train: &[RegexQuery],
    regex_dev: &[RegexQuery],
    config: &TrainConfig,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let mut init_rng = rng::stream(config.seed, "init");
    let mut params = ModelParams::init(config.model, kb.num_entities(), kb.num_relations(), &mut init_rng)?;

    let single_set = TrainSet::single_hop(kb);
    let single_dev = eval::single_hop_queries(kb, Split::Dev);
    let single_test = eval::single_hop_queries(kb, Split::Test);
    let single = train_stage(&mut params, Stage::SingleHop, &single_set, &single_dev, config, log)?;
    let before = single_hop_mrr(&params, &single_test, config)?;
    let pretrained = params.clone();

    let (regex, after) = if config.variant == Variant::Baseline {
        (None, before)
    } else {
        params.copy_relations_to_plus();
        let set = TrainSet::regex(regex_train, config.variant, config.model.max_branches);
        let report = train_stage(&mut params, Stage::Regex, &set, regex_dev, config, log)?;
        (Some(report), single_hop_mrr(&params, &single_test, config)?)
    };
    Ok(TrainOutcome {
        params,
        pretrained,
        report: RunReport {
            config: config.clone(),
            single_hop: single,
            regex,
            single_hop_test_mrr_before_regex: before,
            single_hop_test_mrr_after_regex: after,
        },
    })
}

/// Compares the analytic gradient of one example's loss (uniform
/// weights) with central differences over every parameter coordinate.
/// Returns `None` when some rectifier, abs, min or max input lies within
/// `min_kink` of its kink, where finite differences are meaningless.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check_example(
    params: &mut ModelParams,
    variant: Variant,
    head: EntityId,
    expr: &RegexExpr,
    answer: EntityId,
    negatives: &[EntityId],
    h: f64,
    rel_tol: f64,
    abs_floor: f64,
    min_kink: f64,
) -> Result<Option<crate::numeric::GradCheckReport>, TrainError> {
    let meta = params.clone();
    let gamma = params.config.gamma;
    let mut grads = params.store.zero_gradients();
    {
        let mut fwd = Forward::new(&meta);
        let Some(loss) = example_loss(&mut fwd, variant, head, expr, answer, negatives, gamma, Sampling::Uniform)? else {
            return Ok(None);
        };
        if fwd.tape.kink_margin() < min_kink {
            return Ok(None);
        }
        fwd.tape.backward(loss, &mut grads)?;
    }
    let report = crate::numeric::check_gradients(&mut params.store, &grads, h, rel_tol, abs_floor, |store| {
        let mut fwd = Forward::with_store(&meta, store);
        let loss = example_loss(&mut fwd, variant, head, expr, answer, negatives, gamma, Sampling::Uniform)
            .expect("loss on a perturbed store")
            .expect("answerable");
        fwd.tape.scalar(loss)
    });
    Ok(Some(report))
}

#[cfg(test)]
mod tests;
