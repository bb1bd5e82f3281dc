use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::kb::{GraphSelector, Split};
use crate::regex::Regex;

fn random_kb(seed: u64, n_ent: usize, n_rel: usize, n_edges: usize) -> KnowledgeBase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kb = KnowledgeBase::new();
    for i in 0..n_ent {
        kb.intern_entity(&format!("e{i}"));
    }
    for r in 0..n_rel {
        kb.intern_relation(&format!("p{r}"));
    }
    for _ in 0..n_edges {
        let h = rng.gen_range(0..n_ent);
        let t = rng.gen_range(0..n_ent);
        let r = rng.gen_range(0..n_rel);
        let split = match rng.gen_range(0..10) {
            0 => Split::Dev,
            1 => Split::Test,
            _ => Split::Train,
        };
        // a triple drawn twice keeps its first split
        let _ = kb.add_triple(&format!("e{h}"), &format!("p{r}"), &format!("e{t}"), split);
    }
    kb
}

fn star_kb(leaves: usize) -> KnowledgeBase {
    let mut kb = KnowledgeBase::new();
    for i in 0..leaves {
        kb.add_triple("hub", "r", &format!("leaf{i}"), Split::Train).unwrap();
    }
    kb
}

fn single(tag: &str) -> Vec<QueryTemplate> {
    vec![QueryTemplate::parse(tag).unwrap()]
}

#[test]
fn oversized_answer_sets_are_rejected() {
    let kb = star_kb(51);
    let mut spec = DatasetSpec::new(single("r1"), 1, 3);
    spec.attempt_factor = 5;
    let (qs, report) = generate_queries(&kb, &spec, 1).unwrap();
    assert!(qs.is_empty());
    assert_eq!(report.templates[0].rejected_too_many, 5);
    assert_eq!(report.warnings.len(), 1);

    let kb = star_kb(50);
    let (qs, _) = generate_queries(&kb, &spec, 1).unwrap();
    assert_eq!(qs.len(), 1);
    assert_eq!(qs[0].answers.len(), 50);
}

#[test]
fn empty_answer_sets_are_resampled() {
    let mut kb = KnowledgeBase::new();
    kb.add_triple("a", "x", "b", Split::Train).unwrap();
    kb.add_triple("c", "y", "d", Split::Train).unwrap();
    kb.add_triple("d", "x", "e", Split::Train).unwrap();
    // x/y is always empty, y/x answers {e} from c
    let spec = DatasetSpec::new(single("r1/r2"), 1, 0);
    let (qs, report) = generate_queries(&kb, &spec, 1).unwrap();
    assert_eq!(qs.len(), 1);
    assert_eq!(kb.regex_to_string(&qs[0].expr), "y/x");
    assert_eq!(qs[0].answers, BTreeSet::from([kb.entity("e").unwrap()]));
    let r = &report.templates[0];
    assert_eq!(r.attempts, 1 + r.rejected_empty + r.rejected_duplicate);
}

#[test]
fn relations_are_distinct_and_heads_have_a_first_edge() {
    let kb = random_kb(5, 40, 6, 300);
    let spec = DatasetSpec::new(builtin_templates(TemplateSet::Fb15kRegex), 15, 11);
    let (qs, report) = generate_queries(&kb, &spec, 2).unwrap();
    assert!(!qs.is_empty());
    assert_eq!(report.templates.len(), 21);
    for q in &qs {
        let leaves: BTreeSet<_> = q.expr.leaves().into_iter().collect();
        assert_eq!(leaves.len(), q.expr.leaves().len(), "{}", kb.regex_to_string(&q.expr));
        assert!(q.expr.first_leaves().iter().any(|r| !kb.tails(GraphSelector::Full, **r, q.head).is_empty()));
        assert!(!q.answers.is_empty() && q.answers.len() <= spec.max_answers);
        let expected = kb.answer_set_capped(GraphSelector::Full, q.head, &q.expr, 5).unwrap();
        assert_eq!(q.answers, expected);
    }
    let distinct: BTreeSet<_> = qs.iter().map(|q| (q.head, q.expr.clone())).collect();
    assert_eq!(distinct.len(), qs.len());
}

#[test]
fn generation_is_deterministic_across_runs_and_workers() {
    let kb = random_kb(9, 30, 5, 200);
    let spec = DatasetSpec::new(builtin_templates(TemplateSet::Fb15kRegex), 8, 42);
    let (a, ra) = generate_queries(&kb, &spec, 1).unwrap();
    let (b, rb) = generate_queries(&kb, &spec, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    let mut other = spec.clone();
    other.seed = 43;
    assert_ne!(generate_queries(&kb, &other, 1).unwrap().0, a);
}

#[test]
fn routing_follows_the_first_reaching_graph() {
    let mut kb = KnowledgeBase::new();
    kb.add_triple("a", "r", "b", Split::Train).unwrap();
    kb.add_triple("b", "r", "c", Split::Dev).unwrap();
    kb.add_triple("c", "r", "d", Split::Test).unwrap();
    let e = |n: &str| kb.entity(n).unwrap();
    let expr = Regex::plus(Regex::rel(kb.relation("r").unwrap()));
    let answers = kb.answer_set_capped(GraphSelector::Full, e("a"), &expr, 5).unwrap();
    let q = RegexQuery { head: e("a"), expr, answers: answers.clone(), query_type: "r1+".into(), full_answers: None };
    let s = split_queries(&kb, &[q], 5);
    assert_eq!(s.train[0].answers, BTreeSet::from([e("b")]));
    assert_eq!(s.dev[0].answers, BTreeSet::from([e("c")]));
    assert_eq!(s.test[0].answers, BTreeSet::from([e("d")]));
    assert_eq!(s.train[0].full_answers.as_ref(), Some(&answers));
    assert_eq!(s.dev[0].full_answers.as_ref(), Some(&answers));
    assert_eq!(s.test[0].filter_set(), &answers);
}

fn check_partition(kb: &KnowledgeBase, queries: &[RegexQuery], s: &SplitQueries) {
    let mut routed: BTreeMap<(EntityId, RegexExpr), Vec<(EntityId, Split)>> = BTreeMap::new();
    for split in Split::ALL {
        for q in s.get(split) {
            assert!(!q.answers.is_empty());
            let on_train = kb.answer_set_capped(GraphSelector::Train, q.head, &q.expr, 5).unwrap();
            for a in &q.answers {
                routed.entry((q.head, q.expr.clone())).or_default().push((*a, split));
                if split != Split::Train {
                    assert!(!on_train.contains(a), "held-out pair answerable on train graph");
                }
            }
        }
    }
    for q in queries {
        let got = routed.remove(&(q.head, q.expr.clone())).unwrap_or_default();
        let answers: Vec<EntityId> = got.iter().map(|(a, _)| *a).collect();
        let unique: BTreeSet<EntityId> = answers.iter().copied().collect();
        assert_eq!(unique.len(), answers.len(), "pair routed twice");
        assert_eq!(unique, q.answers);
    }
    assert!(routed.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn split_routing_is_a_partition(seed in 0u64..10_000) {
        let kb = random_kb(seed, 25, 4, 120);
        let spec = DatasetSpec::new(builtin_templates(TemplateSet::Fb15kRegex), 4, seed);
        let (qs, _) = generate_queries(&kb, &spec, 1).unwrap();
        let s = split_queries(&kb, &qs, 5);
        check_partition(&kb, &qs, &s);
    }
}

fn dummy_queries(tag: &str, n: usize) -> Vec<RegexQuery> {
    (0..n)
        .map(|i| RegexQuery {
            head: EntityId(i as u32),
            expr: Regex::rel(RelationId(0)),
            answers: BTreeSet::from([EntityId(0)]),
            query_type: tag.into(),
            full_answers: None,
        })
        .collect()
}

#[test]
fn rebalance_undersamples_to_the_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let groups = BTreeMap::from([("r1+".to_string(), dummy_queries("r1+", 80_000))]);
    let targets = BTreeMap::from([("r1+".to_string(), 25_000)]);
    let out = rebalance(groups.clone(), &targets, &mut rng).unwrap();
    let kept = &out["r1+"];
    assert_eq!(kept.len(), 25_000);
    assert!(kept.windows(2).all(|w| w[0].head < w[1].head), "order kept, no duplicates");

    let same = BTreeMap::from([("r1+".to_string(), 80_000)]);
    assert_eq!(rebalance(groups.clone(), &same, &mut rng).unwrap(), groups);

    let too_many = BTreeMap::from([("r1+".to_string(), 80_001)]);
    let err = rebalance(groups.clone(), &too_many, &mut rng).unwrap_err();
    assert!(err.to_string().contains("r1+"), "{err}");
    let missing = BTreeMap::from([("r1|r2".to_string(), 1)]);
    assert!(matches!(rebalance(groups, &missing, &mut rng), Err(DatasetError::TargetTooLarge { .. })));
}

#[test]
fn rebalance_is_seeded() {
    let groups = BTreeMap::from([("a".to_string(), dummy_queries("a", 100))]);
    let targets = BTreeMap::from([("a".to_string(), 10)]);
    let run = |s| rebalance(groups.clone(), &targets, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
    assert_eq!(run(4), run(4));
    assert_ne!(run(4), run(5));
}

#[test]
fn rebalance_flattens_a_skewed_mix() {
    let sizes = [("a", 3000), ("b", 2500), ("c", 2000), ("d", 150), ("e", 120), ("f", 100), ("g", 90)];
    let groups: BTreeMap<String, Vec<RegexQuery>> =
        sizes.iter().map(|(t, n)| (t.to_string(), dummy_queries(t, *n))).collect();
    let total: usize = sizes.iter().map(|(_, n)| n).sum();
    let top3: usize = sizes[..3].iter().map(|(_, n)| n).sum();
    assert!(top3 as f64 / total as f64 > 0.8);

    let targets = clamp_targets(&groups, 150);
    let out = rebalance(groups, &targets, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let counts: Vec<usize> = out.values().map(Vec::len).collect();
    let total: usize = counts.iter().sum();
    let top3: usize = counts[..3].iter().sum();
    assert!((top3 as f64 / total as f64) < 0.5);
    assert_eq!(counts.iter().max(), Some(&150));
    assert!(*counts.iter().min().unwrap() as f64 >= 0.6 * 150.0);
}

#[test]
fn build_dataset_applies_split_caps() {
    let kb = random_kb(2, 40, 5, 300);
    let mut spec = DatasetSpec::new(builtin_templates(TemplateSet::Wiki100Regex), 30, 8);
    spec.split_targets = SplitTargets { train: Some(5), dev: None, test: Some(2) };
    let (splits, report) = build_dataset(&kb, &spec, 1).unwrap();
    let counts = &report.splits;
    for (tag, c) in &counts["train"] {
        assert!(c.queries <= 5, "{tag}");
    }
    for c in counts["test"].values() {
        assert!(c.queries <= 2);
    }
    assert_eq!(counts["dev"].values().map(|c| c.queries).sum::<usize>(), splits.dev.len());
    let (again, _) = build_dataset(&kb, &spec, 3).unwrap();
    assert_eq!(again, splits);
    let json = serde_json::to_string(&report).unwrap();
    assert!(json.contains("rejected_too_many"));
}

#[test]
fn spec_validation() {
    let mut spec = DatasetSpec::new(single("r1"), 1, 0);
    spec.max_answers = 0;
    assert!(spec.validate().is_err());
    let mut spec = DatasetSpec::new(vec![QueryTemplate::parse("r1").unwrap(); 2], 1, 0);
    assert!(spec.validate().is_err());
    spec.templates.pop();
    assert!(spec.validate().is_ok());
}
