//! Regex-query dataset synthesis: template instantiation over a split KB,
//! reachability-based routing of answers into train/dev/test, and
//! per-template undersampling.

mod templates;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{EntityId, RelationId};
use crate::kb::{GraphSelector, KbError, KnowledgeBase, RegexQuery, Split, DEFAULT_MAX_PATH_LEN};
use crate::regex::{to_nfa, RegexExpr};
use crate::rng::stream;

pub use templates::{builtin_templates, QueryTemplate, TemplateSet};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unknown template set {0:?} (expected fb15k-regex or wiki100-regex)")]
    UnknownTemplateSet(String),
    #[error("bad template {tag:?}: {message}")]
    BadTemplate { tag: String, message: String },
    #[error("template {template}: target {target} exceeds the {available} available queries")]
    TargetTooLarge { template: String, target: usize, available: usize },
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Kb(#[from] KbError),
}

/// Optional per-split caps applied by undersampling after routing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitTargets {
    #[serde(default)]
    pub train: Option<usize>,
    #[serde(default)]
    pub dev: Option<usize>,
    #[serde(default)]
    pub test: Option<usize>,
}

impl SplitTargets {
    pub fn get(&self, split: Split) -> Option<usize> {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub templates: Vec<QueryTemplate>,
    /// Queries to generate per template before splitting.
    pub queries_per_template: usize,
    /// Per-template caps on each split, enforced by `rebalance`.
    pub split_targets: SplitTargets,
    pub max_answers: usize,
    pub max_len: usize,
    pub seed: u64,
    /// Attempts allowed per wanted query.
    pub attempt_factor: usize,
}

impl DatasetSpec {
    pub fn new(templates: Vec<QueryTemplate>, queries_per_template: usize, seed: u64) -> Self {
        Self {
            templates,
            queries_per_template,
            split_targets: SplitTargets::default(),
            max_answers: 50,
            max_len: DEFAULT_MAX_PATH_LEN,
            seed,
            attempt_factor: 100,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidSpec(m.to_string()));
        if self.templates.is_empty() {
            return bad("no templates");
        }
        if self.max_answers == 0 {
            return bad("max_answers must be at least 1");
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1");
        }
        if self.attempt_factor == 0 {
            return bad("attempt_factor must be at least 1");
        }
        let mut tags = HashSet::new();
        for t in &self.templates {
            if !tags.insert(&t.tag) {
                return Err(DatasetError::InvalidSpec(format!("template {} listed twice", t.tag)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateReport {
    pub template: String,
    pub target: usize,
    pub generated: usize,
    pub attempts: usize,
    pub rejected_empty: usize,
    pub rejected_too_many: usize,
    pub rejected_duplicate: usize,
    pub rejected_no_head: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub queries: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub seed: u64,
    pub max_answers: usize,
    pub max_len: usize,
    pub templates: Vec<TemplateReport>,
    /// Split -> template -> counts, filled once the queries are routed.
    #[serde(default)]
    pub splits: BTreeMap<String, BTreeMap<String, SplitCounts>>,
    pub warnings: Vec<String>,
    /// Echo of the settings that produced the dataset.
    #[serde(default)]
    pub config: serde_json::Value,
}

/// Canonical output order: template tag, head, then expression.
fn sort_canonical(queries: &mut [RegexQuery]) {
    queries.sort_by(|a, b| (&a.query_type, a.head, &a.expr).cmp(&(&b.query_type, b.head, &b.expr)));
}

/// Samples queries for every template. Each template draws from its own
/// random stream, so templates can run on separate workers and the output
/// does not depend on the worker count.
pub fn generate_queries(
    kb: &KnowledgeBase,
    spec: &DatasetSpec,
    workers: usize,
) -> Result<(Vec<RegexQuery>, GenerationReport), DatasetError> {
    spec.validate()?;
    let workers = workers.max(1).min(spec.templates.len());
    let chunk = spec.templates.len().div_ceil(workers);
    let results: Vec<(Vec<RegexQuery>, TemplateReport, Option<String>)> = std::thread::scope(|s| {
        let handles: Vec<_> = spec
            .templates
            .chunks(chunk)
            .map(|ts| s.spawn(move || ts.iter().map(|t| generate_for_template(kb, spec, t)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("generation worker panicked")).collect()
    });

    let mut report = GenerationReport {
        seed: spec.seed,
        max_answers: spec.max_answers,
        max_len: spec.max_len,
        ..Default::default()
    };
    let mut all = Vec::new();
    for (qs, tr, warning) in results {
        all.extend(qs);
        report.templates.push(tr);
        report.warnings.extend(warning);
    }
    sort_canonical(&mut all);
    Ok((all, report))
}

fn generate_for_template(
    kb: &KnowledgeBase,
    spec: &DatasetSpec,
    template: &QueryTemplate,
) -> (Vec<RegexQuery>, TemplateReport, Option<String>) {
    let target = spec.queries_per_template;
    let mut report = TemplateReport { template: template.tag.clone(), target, ..Default::default() };
    let n_rel = kb.num_relations();
    if n_rel < template.arity {
        let w = format!("{}: needs {} distinct relations, KB has {}", template.tag, template.arity, n_rel);
        return (Vec::new(), report, Some(w));
    }
    let mut rng = stream(spec.seed, &format!("generation/{}", template.tag));
    let mut heads_cache: HashMap<RelationId, Vec<EntityId>> = HashMap::new();
    let mut seen: HashSet<(EntityId, RegexExpr)> = HashSet::new();
    let mut out = Vec::with_capacity(target);
    let max_attempts = target.saturating_mul(spec.attempt_factor);

    while out.len() < target && report.attempts < max_attempts {
        report.attempts += 1;
        let rels: Vec<RelationId> =
            index::sample(&mut rng, n_rel, template.arity).into_iter().map(|i| RelationId(i as u32)).collect();
        let expr = template.instantiate(&rels);

        let mut heads = BTreeSet::new();
        for r in expr.first_leaves() {
            let hs = heads_cache.entry(*r).or_insert_with(|| kb.heads_with(GraphSelector::Full, *r));
            heads.extend(hs.iter().copied());
        }
        if heads.is_empty() {
            report.rejected_no_head += 1;
            continue;
        }
        let heads: Vec<EntityId> = heads.into_iter().collect();
        let head = heads[rng.gen_range(0..heads.len())];
        if seen.contains(&(head, expr.clone())) {
            report.rejected_duplicate += 1;
            continue;
        }
        let answers = kb.capped_with_nfa(GraphSelector::Full, head, &to_nfa(&expr), spec.max_len);
        if answers.is_empty() {
            report.rejected_empty += 1;
            continue;
        }
        if answers.len() > spec.max_answers {
            report.rejected_too_many += 1;
            continue;
        }
        seen.insert((head, expr.clone()));
        out.push(RegexQuery { head, expr, answers, query_type: template.tag.clone(), full_answers: None });
    }
    report.generated = out.len();
    let warning = (out.len() < target).then(|| {
        format!("{}: generated {} of {} queries in {} attempts", template.tag, out.len(), target, report.attempts)
    });
    (out, report, warning)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitQueries {
    pub train: Vec<RegexQuery>,
    pub dev: Vec<RegexQuery>,
    pub test: Vec<RegexQuery>,
}

impl SplitQueries {
    pub fn get(&self, split: Split) -> &[RegexQuery] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn get_mut(&mut self, split: Split) -> &mut Vec<RegexQuery> {
        match split {
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
            Split::Test => &mut self.test,
        }
    }

    /// Query and pair counts per split and template.
    pub fn counts(&self) -> BTreeMap<String, BTreeMap<String, SplitCounts>> {
        Split::ALL
            .iter()
            .map(|&s| {
                let mut per: BTreeMap<String, SplitCounts> = BTreeMap::new();
                for q in self.get(s) {
                    let c = per.entry(q.query_type.clone()).or_default();
                    c.queries += 1;
                    c.pairs += q.answers.len();
                }
                (s.to_string(), per)
            })
            .collect()
    }
}

/// Routes each (head, expr, answer) pair to the first split whose graph
/// union reaches it: train, then train+dev, else test. A query appears in
/// a split when at least one of its pairs lands there. Each routed query
/// keeps the full-graph answer set alongside its own answers: it filters
/// ranking on dev/test and keeps true answers out of training negatives.
pub fn split_queries(kb: &KnowledgeBase, queries: &[RegexQuery], max_len: usize) -> SplitQueries {
    let mut out = SplitQueries::default();
    for q in queries {
        let nfa = to_nfa(&q.expr);
        let on_train = kb.capped_with_nfa(GraphSelector::Train, q.head, &nfa, max_len);
        let on_train_dev = kb.capped_with_nfa(GraphSelector::TrainDev, q.head, &nfa, max_len);
        let mut parts: [BTreeSet<EntityId>; 3] = Default::default();
        for &a in &q.answers {
            let s = if on_train.contains(&a) {
                0
            } else if on_train_dev.contains(&a) {
                1
            } else {
                2
            };
            parts[s].insert(a);
        }
        let [train, dev, test] = parts;
        let mk = |answers: BTreeSet<EntityId>, full: Option<BTreeSet<EntityId>>| RegexQuery {
            head: q.head,
            expr: q.expr.clone(),
            answers,
            query_type: q.query_type.clone(),
            full_answers: full,
        };
        let full = |part: &BTreeSet<EntityId>| (part != &q.answers).then(|| q.answers.clone());
        if !train.is_empty() {
            let f = full(&train);
            out.train.push(mk(train, f));
        }
        if !dev.is_empty() {
            out.dev.push(mk(dev, Some(q.answers.clone())));
        }
        if !test.is_empty() {
            out.test.push(mk(test, Some(q.answers.clone())));
        }
    }
    for s in Split::ALL {
        sort_canonical(out.get_mut(s));
    }
    out
}

/// Groups queries by template tag, preserving order within each group.
pub fn group_by_template(queries: Vec<RegexQuery>) -> BTreeMap<String, Vec<RegexQuery>> {
    let mut groups: BTreeMap<String, Vec<RegexQuery>> = BTreeMap::new();
    for q in queries {
        groups.entry(q.query_type.clone()).or_default().push(q);
    }
    groups
}

/// Undersamples each template with a target to exactly that many queries,
/// uniformly without replacement and keeping the original order. Templates
/// without a target pass through. Oversampling is refused.
pub fn rebalance<R: Rng + ?Sized>(
    groups: BTreeMap<String, Vec<RegexQuery>>,
    targets: &BTreeMap<String, usize>,
    rng: &mut R,
) -> Result<BTreeMap<String, Vec<RegexQuery>>, DatasetError> {
    let mut out = BTreeMap::new();
    for (tag, qs) in groups {
        let Some(&target) = targets.get(&tag) else {
            out.insert(tag, qs);
            continue;
        };
        if target > qs.len() {
            return Err(DatasetError::TargetTooLarge { template: tag, target, available: qs.len() });
        }
        if target == qs.len() {
            out.insert(tag, qs);
            continue;
        }
        let mut keep = index::sample(rng, qs.len(), target).into_vec();
        keep.sort_unstable();
        let mut slots: Vec<Option<RegexQuery>> = qs.into_iter().map(Some).collect();
        let picked = keep.into_iter().map(|i| slots[i].take().expect("indices are distinct")).collect();
        out.insert(tag, picked);
    }
    for tag in targets.keys() {
        if !out.contains_key(tag) {
            return Err(DatasetError::TargetTooLarge { template: tag.clone(), target: targets[tag], available: 0 });
        }
    }
    Ok(out)
}

/// Targets clamped to what each template has, so a cap never fails.
pub fn clamp_targets(groups: &BTreeMap<String, Vec<RegexQuery>>, cap: usize) -> BTreeMap<String, usize> {
    groups.iter().map(|(t, qs)| (t.clone(), cap.min(qs.len()))).collect()
}

/// The full generation pipeline: sample, route, then cap each split per
/// template. Returns the routed splits and the generation report.
pub fn build_dataset(
    kb: &KnowledgeBase,
    spec: &DatasetSpec,
    workers: usize,
) -> Result<(SplitQueries, GenerationReport), DatasetError> {
    let (queries, mut report) = generate_queries(kb, spec, workers)?;
    let mut splits = split_queries(kb, &queries, spec.max_len);
    for s in Split::ALL {
        let Some(cap) = spec.split_targets.get(s) else { continue };
        let groups = group_by_template(std::mem::take(splits.get_mut(s)));
        let targets = clamp_targets(&groups, cap);
        let mut rng = stream(spec.seed, &format!("rebalance/{s}"));
        let kept = rebalance(groups, &targets, &mut rng)?;
        let mut flat: Vec<RegexQuery> = kept.into_values().flatten().collect();
        sort_canonical(&mut flat);
        *splits.get_mut(s) = flat;
    }
    report.splits = splits.counts();
    Ok((splits, report))
}

#[cfg(test)]
mod tests;
