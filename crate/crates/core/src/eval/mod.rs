//! Filtered ranking, MRR and HITS@K.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ids::EntityId;
use crate::kb::{GraphSelector, KnowledgeBase, RegexQuery, Split};
use crate::model::{score_all, ModelError, ModelParams};
use crate::regex::{is_answerable, Regex, RegexExpr, Variant};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("target {target} is not in the query's answer set")]
    TargetNotAnswer { target: EntityId },
    #[error("query {query} mentions entity {entity}, outside the model's {entities} entities")]
    VocabMismatch { query: usize, entity: EntityId, entities: usize },
    #[error("score for the target is not finite")]
    NonFiniteScore,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Filtered rank; average-rank tie-breaking makes it fractional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rank {
    Finite(f64),
    /// The variant could not embed the query.
    Infinite,
}

impl Rank {
    pub fn reciprocal(self) -> f64 {
        match self {
            Rank::Finite(r) => 1.0 / r,
            Rank::Infinite => 0.0,
        }
    }

    /// Integer rank used for HITS thresholds (half-up rounding).
    pub fn rounded(self) -> Option<u64> {
        match self {
            Rank::Finite(r) => Some((r + 0.5).floor() as u64),
            Rank::Infinite => None,
        }
    }

    pub fn within(self, k: u64) -> bool {
        self.rounded().is_some_and(|r| r <= k)
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Rank::Finite(_))
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rank::Finite(r) => write!(f, "{r}"),
            Rank::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Rank {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Rank::Finite(r) => s.serialize_f64(*r),
            Rank::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Rank {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(r) => Ok(Rank::Finite(r)),
            Raw::Text(t) if t == "inf" => Ok(Rank::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad rank {t:?}"))),
        }
    }
}

/// One ranked (query, answer) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOutcome {
    /// Index of the query in the evaluated list.
    pub query: usize,
    #[serde(rename = "type")]
    pub query_type: String,
    pub target: EntityId,
    pub rank: Rank,
    /// `|E| - |answers| + 1`.
    pub candidates: usize,
}

/// Rank of `target` among itself and every non-answer, by ascending
/// distance. Ties with the target count half.
pub fn rank_among(scores: &[f64], target: EntityId, answers: &BTreeSet<EntityId>) -> Result<(Rank, usize), EvalError> {
    if !answers.contains(&target) {
        return Err(EvalError::TargetNotAnswer { target });
    }
    let t = scores[target.index()];
    if t.is_nan() {
        return Err(EvalError::NonFiniteScore);
    }
    let (mut closer, mut ties, mut candidates) = (0usize, 0usize, 1usize);
    for (i, &s) in scores.iter().enumerate() {
        if answers.contains(&EntityId(i as u32)) {
            continue;
        }
        candidates += 1;
        if s < t {
            closer += 1;
        } else if s == t {
            ties += 1;
        }
    }
    Ok((Rank::Finite(1.0 + closer as f64 + ties as f64 / 2.0), candidates))
}

/// Filtered rank of one target for one query under `variant`.
pub fn filtered_rank(
    params: &ModelParams,
    variant: Variant,
    query: &RegexQuery,
    target: EntityId,
    full_answers: &BTreeSet<EntityId>,
) -> Result<RankOutcome, EvalError> {
    if !full_answers.contains(&target) {
        return Err(EvalError::TargetNotAnswer { target });
    }
    let candidates = params.num_entities() - full_answers.len() + 1;
    let rank = match score_all(params, variant, query.head, &query.expr)? {
        Some(scores) => rank_among(&scores, target, full_answers)?.0,
        None => Rank::Infinite,
    };
    Ok(RankOutcome { query: 0, query_type: query.query_type.clone(), target, rank, candidates })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits5: f64,
    pub hits10: f64,
    pub count: usize,
}

/// Mean reciprocal rank and HITS@{1,5,10}; infinite ranks count as misses.
pub fn metrics(ranks: &[Rank]) -> Metrics {
    if ranks.is_empty() {
        return Metrics::default();
    }
    let n = ranks.len() as f64;
    let frac = |k| ranks.iter().filter(|r| r.within(k)).count() as f64 / n;
    Metrics {
        mrr: ranks.iter().map(|r| r.reciprocal()).sum::<f64>() / n,
        hits1: frac(1),
        hits5: frac(5),
        hits10: frac(10),
        count: ranks.len(),
    }
}

/// Whether every variant can embed `expr`.
pub fn answerable_by_all(expr: &RegexExpr, max_branches: usize) -> bool {
    Variant::ALL.iter().all(|v| is_answerable(expr, *v, max_branches))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Keep only queries every variant can answer.
    pub answerable_by_all: bool,
    /// Drop infinite ranks from the metric denominators.
    pub exclude_infinite: bool,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub overall: Metrics,
    pub per_type: BTreeMap<String, Metrics>,
    /// Pairs with a finite rank.
    pub evaluated: usize,
    /// Pairs whose query the variant cannot embed.
    pub unanswerable: usize,
    pub total_pairs: usize,
    pub queries: usize,
    pub options: EvalOptions,
    #[serde(default)]
    pub config: serde_json::Value,
}

fn rank_query(params: &ModelParams, variant: Variant, index: usize, q: &RegexQuery) -> Result<Vec<RankOutcome>, EvalError> {
    let n = params.num_entities();
    for &e in std::iter::once(&q.head).chain(q.answers.iter()).chain(q.filter_set().iter()) {
        if e.index() >= n {
            return Err(EvalError::VocabMismatch { query: index, entity: e, entities: n });
        }
    }
    let filter = q.filter_set();
    let scores = score_all(params, variant, q.head, &q.expr)?;
    q.answers
        .iter()
        .map(|&t| {
            let (rank, candidates) = match &scores {
                Some(s) => rank_among(s, t, filter)?,
                None => {
                    if !filter.contains(&t) {
                        return Err(EvalError::TargetNotAnswer { target: t });
                    }
                    (Rank::Infinite, n - filter.len() + 1)
                }
            };
            Ok(RankOutcome { query: index, query_type: q.query_type.clone(), target: t, rank, candidates })
        })
        .collect()
}

/// Ranks every (query, answer) pair. Work is split into contiguous chunks
/// across `options.workers` threads and merged in query order.
pub fn rank_queries(
    params: &ModelParams,
    variant: Variant,
    queries: &[RegexQuery],
    options: EvalOptions,
) -> Result<Vec<RankOutcome>, EvalError> {
    let keep: Vec<usize> = (0..queries.len())
        .filter(|&i| !options.answerable_by_all || answerable_by_all(&queries[i].expr, params.config.max_branches))
        .collect();
    let workers = options.workers.max(1).min(keep.len().max(1));
    let run = |idx: &[usize]| -> Result<Vec<RankOutcome>, EvalError> {
        let mut out = Vec::new();
        for &i in idx {
            out.extend(rank_query(params, variant, i, &queries[i])?);
        }
        Ok(out)
    };
    if workers == 1 {
        return run(&keep);
    }
    let chunk = keep.len().div_ceil(workers);
    let parts: Vec<Result<Vec<RankOutcome>, EvalError>> = std::thread::scope(|s| {
        let handles: Vec<_> = keep.chunks(chunk).map(|c| s.spawn(move || run(c))).collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Summarizes outcomes overall and per query type.
pub fn summarize(outcomes: &[RankOutcome], variant: Variant, queries: usize, options: EvalOptions) -> EvalReport {
    let included = |o: &&RankOutcome| !options.exclude_infinite || o.rank.is_finite();
    let ranks: Vec<Rank> = outcomes.iter().filter(included).map(|o| o.rank).collect();
    let mut by_type: BTreeMap<String, Vec<Rank>> = BTreeMap::new();
    for o in outcomes.iter().filter(included) {
        by_type.entry(o.query_type.clone()).or_default().push(o.rank);
    }
    let evaluated = outcomes.iter().filter(|o| o.rank.is_finite()).count();
    EvalReport {
        variant,
        overall: metrics(&ranks),
        per_type: by_type.into_iter().map(|(t, r)| (t, metrics(&r))).collect(),
        evaluated,
        unanswerable: outcomes.len() - evaluated,
        total_pairs: outcomes.len(),
        queries,
        options,
        config: serde_json::Value::Null,
    }
}

/// Ranks and summarizes a query split.
pub fn evaluate_split(
    params: &ModelParams,
    variant: Variant,
    queries: &[RegexQuery],
    options: EvalOptions,
) -> Result<(EvalReport, Vec<RankOutcome>), EvalError> {
    let outcomes = rank_queries(params, variant, queries, options)?;
    let kept = outcomes.iter().map(|o| o.query).collect::<BTreeSet<_>>().len();
    Ok((summarize(&outcomes, variant, kept, options), outcomes))
}

/// Groups the triples of `split` into single-hop queries `(h, r, ?)`,
/// with full-graph tails as the filter.
pub fn single_hop_queries(kb: &KnowledgeBase, split: Split) -> Vec<RegexQuery> {
    let mut grouped: BTreeMap<(EntityId, crate::ids::RelationId), BTreeSet<EntityId>> = BTreeMap::new();
    for t in kb.triples(split) {
        grouped.entry((t.head, t.relation)).or_default().insert(t.tail);
    }
    grouped
        .into_iter()
        .map(|((h, r), answers)| {
            let full: BTreeSet<EntityId> = kb.tails(GraphSelector::Full, r, h).iter().copied().collect();
            RegexQuery {
                head: h,
                expr: Regex::rel(r),
                full_answers: (full != answers).then_some(full),
                answers,
                query_type: "r1".into(),
            }
        })
        .collect()
}

/// Monte-Carlo MRR of a scorer that assigns i.i.d. uniform scores: each
/// pair is ranked once among `|E| - |answers| + 1` candidates. Returns the
/// mean and its standard error.
pub fn random_scorer_mrr<R: Rng>(queries: &[RegexQuery], num_entities: usize, rng: &mut R) -> (f64, f64) {
    let mut rr = Vec::new();
    for q in queries {
        let candidates = num_entities - q.filter_set().len() + 1;
        for _ in &q.answers {
            let t: f64 = rng.gen();
            let mut closer = 0usize;
            for _ in 1..candidates {
                if rng.gen::<f64>() < t {
                    closer += 1;
                }
            }
            rr.push(1.0 / (1 + closer) as f64);
        }
    }
    mean_and_stderr(&rr)
}

pub(crate) fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}
