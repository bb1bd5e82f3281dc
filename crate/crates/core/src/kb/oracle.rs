//! Ground-truth answer sets for regex queries.
//!
//! Both oracles walk the product of the KB graph and the regex NFA. The
//! exact oracle does a visited-set BFS, which terminates because the product
//! space is finite. The capped oracle advances one path length per layer so
//! it returns exactly the answers of compatible paths up to `max_len`.

use std::collections::{BTreeSet, HashSet, VecDeque};

use super::{GraphSelector, KbError, KnowledgeBase};
use crate::ids::{EntityId, RelationId};
use crate::regex::{to_nfa, RegexExpr, RegexNfa};

/// Default path-length cap used for dataset construction.
pub const DEFAULT_MAX_PATH_LEN: usize = 5;

impl KnowledgeBase {
    /// All entities reachable from `head` along any path of `expr`'s
    /// language, without a length bound.
    pub fn answer_set_exact(
        &self,
        graph: GraphSelector,
        head: EntityId,
        expr: &RegexExpr,
    ) -> Result<BTreeSet<EntityId>, KbError> {
        self.check_regex(expr)?;
        self.check_entity(head)?;
        Ok(self.exact_with_nfa(graph, head, &to_nfa(expr)))
    }

    /// Union of the answers of compatible paths with length at most
    /// `max_len`.
    pub fn answer_set_capped(
        &self,
        graph: GraphSelector,
        head: EntityId,
        expr: &RegexExpr,
        max_len: usize,
    ) -> Result<BTreeSet<EntityId>, KbError> {
        self.check_regex(expr)?;
        self.check_entity(head)?;
        Ok(self.capped_with_nfa(graph, head, &to_nfa(expr), max_len))
    }

    fn check_entity(&self, e: EntityId) -> Result<(), KbError> {
        if e.index() < self.num_entities() {
            Ok(())
        } else {
            Err(KbError::UnknownEntity(e.to_string()))
        }
    }

    pub(crate) fn exact_with_nfa(
        &self,
        graph: GraphSelector,
        head: EntityId,
        nfa: &RegexNfa<RelationId>,
    ) -> BTreeSet<EntityId> {
        let adj = self.adjacency(graph);
        let states = nfa.num_states();
        let mut seen = vec![false; self.num_entities() * states];
        let mut queue = VecDeque::from([(head, nfa.start())]);
        seen[head.index() * states + nfa.start()] = true;
        let mut answers = BTreeSet::new();
        while let Some((node, state)) = queue.pop_front() {
            for &(rel, next_state) in nfa.transitions_from(state) {
                for &next in adj.tails(rel, node) {
                    let slot = next.index() * states + next_state;
                    if !seen[slot] {
                        seen[slot] = true;
                        if nfa.is_accepting(next_state) {
                            answers.insert(next);
                        }
                        queue.push_back((next, next_state));
                    }
                }
            }
        }
        answers
    }

    pub(crate) fn capped_with_nfa(
        &self,
        graph: GraphSelector,
        head: EntityId,
        nfa: &RegexNfa<RelationId>,
        max_len: usize,
    ) -> BTreeSet<EntityId> {
        let adj = self.adjacency(graph);
        let mut answers = BTreeSet::new();
        let mut frontier: Vec<(EntityId, usize)> = vec![(head, nfa.start())];
        // A repeated frontier means every later layer repeats too.
        let mut seen_frontiers: HashSet<Vec<(EntityId, usize)>> = HashSet::new();
        for _ in 0..max_len {
            let mut next = BTreeSet::new();
            for &(node, state) in &frontier {
                for &(rel, next_state) in nfa.transitions_from(state) {
                    for &t in adj.tails(rel, node) {
                        next.insert((t, next_state));
                    }
                }
            }
            answers.extend(next.iter().filter(|(_, s)| nfa.is_accepting(*s)).map(|(e, _)| *e));
            frontier = next.into_iter().collect();
            if frontier.is_empty() || !seen_frontiers.insert(frontier.clone()) {
                break;
            }
        }
        answers
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::Split;
    use crate::regex::{enumerate_paths, parse, Regex};
    use proptest::prelude::*;

    fn chain(n: usize) -> KnowledgeBase {
        let mut kb = KnowledgeBase::new();
        let names: Vec<String> = (0..n).map(|i| ((b'a' + i as u8) as char).to_string()).collect();
        for w in names.windows(2) {
            kb.add_triple(&w[0], "r", &w[1], Split::Train).unwrap();
        }
        kb
    }

    fn names(kb: &KnowledgeBase, set: &BTreeSet<EntityId>) -> Vec<String> {
        let mut v: Vec<String> = set.iter().map(|e| kb.entity_name(*e).to_string()).collect();
        v.sort();
        v
    }

    fn q(kb: &KnowledgeBase, text: &str) -> RegexExpr {
        kb.resolve_regex(&parse(text).unwrap()).unwrap()
    }

    /// Brute force: follow every enumerated path explicitly.
    fn by_paths(kb: &KnowledgeBase, g: GraphSelector, head: EntityId, expr: &RegexExpr, max_len: usize) -> BTreeSet<EntityId> {
        let mut out = BTreeSet::new();
        for path in enumerate_paths(expr, max_len) {
            let mut cur = BTreeSet::from([head]);
            for &r in path.relations() {
                cur = cur.iter().flat_map(|&e| kb.tails(g, r, e).iter().copied()).collect();
            }
            out.extend(cur);
        }
        out
    }

    #[test]
    fn chain_plus() {
        let kb = chain(3);
        let a = kb.entity("a").unwrap();
        let ans = kb.answer_set_exact(GraphSelector::Full, a, &q(&kb, "r+")).unwrap();
        assert_eq!(names(&kb, &ans), ["b", "c"]);
    }

    #[test]
    fn two_cycle_plus_includes_start() {
        let mut kb = KnowledgeBase::new();
        kb.add_triple("a", "r", "b", Split::Train).unwrap();
        kb.add_triple("b", "r", "a", Split::Train).unwrap();
        let a = kb.entity("a").unwrap();
        let ans = kb.answer_set_exact(GraphSelector::Full, a, &q(&kb, "r+")).unwrap();
        assert_eq!(names(&kb, &ans), ["a", "b"]);
    }

    #[test]
    fn depth_cap_on_seven_chain() {
        let kb = chain(7);
        let a = kb.entity("a").unwrap();
        let ans = kb.answer_set_capped(GraphSelector::Full, a, &q(&kb, "r+"), 5).unwrap();
        assert_eq!(names(&kb, &ans), ["b", "c", "d", "e", "f"]);
        let exact = kb.answer_set_exact(GraphSelector::Full, a, &q(&kb, "r+")).unwrap();
        assert!(ans.is_subset(&exact));
        assert_eq!(exact.len(), 6);
    }

    #[test]
    fn compose_plus_on_four_nodes() {
        // a -r1-> b -r2-> c -r2-> d -r2-> b
        let mut kb = KnowledgeBase::new();
        for (h, r, t) in [("a", "r1", "b"), ("b", "r2", "c"), ("c", "r2", "d"), ("d", "r2", "b")] {
            kb.add_triple(h, r, t, Split::Train).unwrap();
        }
        let a = kb.entity("a").unwrap();
        let expr = q(&kb, "r1/r2+");
        let capped = kb.answer_set_capped(GraphSelector::Full, a, &expr, 5).unwrap();
        let mut union = BTreeSet::new();
        for p in ["r1/r2", "r1/r2/r2", "r1/r2/r2/r2", "r1/r2/r2/r2/r2"] {
            union.extend(kb.answer_set_exact(GraphSelector::Full, a, &q(&kb, p)).unwrap());
        }
        assert_eq!(capped, union);
        assert_eq!(names(&kb, &capped), ["b", "c", "d"]);
    }

    #[test]
    fn unknown_relation_is_an_error() {
        let kb = chain(3);
        let bad = Regex::Rel(RelationId(9));
        let err = kb.answer_set_exact(GraphSelector::Full, EntityId(0), &bad).unwrap_err();
        assert!(matches!(err, KbError::UnknownRelation(_)));
        assert!(kb.resolve_regex(&parse("r/zz").unwrap()).is_err());
    }

    #[test]
    fn graph_selector_limits_edges() {
        let mut kb = chain(3);
        kb.add_triple("c", "r", "d", Split::Test).unwrap();
        let a = kb.entity("a").unwrap();
        let expr = q(&kb, "r+");
        assert_eq!(kb.answer_set_exact(GraphSelector::Train, a, &expr).unwrap().len(), 2);
        assert_eq!(kb.answer_set_exact(GraphSelector::TrainDev, a, &expr).unwrap().len(), 2);
        assert_eq!(kb.answer_set_exact(GraphSelector::Full, a, &expr).unwrap().len(), 3);
    }

    fn arb_kb_and_query() -> impl Strategy<Value = (Vec<(u32, u32, u32)>, u32, Regex<u32>)> {
        let expr = (0u32..3).prop_map(Regex::Rel).prop_recursive(3, 16, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Regex::compose(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Regex::disj(a, b)),
                inner.prop_map(Regex::plus),
            ]
        });
        (prop::collection::vec((0u32..12, 0u32..3, 0u32..12), 0..40), 0u32..12, expr)
    }

    fn build(edges: &[(u32, u32, u32)], acyclic: bool) -> KnowledgeBase {
        let mut kb = KnowledgeBase::new();
        for i in 0..12 {
            kb.intern_entity(&format!("n{i}"));
        }
        for r in 0..3 {
            kb.intern_relation(&format!("r{r}"));
        }
        for &(h, r, t) in edges {
            if acyclic && h >= t {
                continue;
            }
            kb.add_triple(&format!("n{h}"), &format!("r{r}"), &format!("n{t}"), Split::Train).unwrap();
        }
        kb
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn exact_matches_path_enumeration_on_dags((edges, head, expr) in arb_kb_and_query()) {
            let kb = build(&edges, true);
            let expr = expr.map(&mut |r| RelationId(*r));
            // the longest path in a 12-node DAG has 11 edges
            let want = by_paths(&kb, GraphSelector::Full, EntityId(head), &expr, 11);
            let got = kb.answer_set_exact(GraphSelector::Full, EntityId(head), &expr).unwrap();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn capped_matches_path_enumeration((edges, head, expr) in arb_kb_and_query(), cap in 1usize..=5) {
            let kb = build(&edges, false);
            let expr = expr.map(&mut |r| RelationId(*r));
            let want = by_paths(&kb, GraphSelector::Full, EntityId(head), &expr, cap);
            let got = kb.answer_set_capped(GraphSelector::Full, EntityId(head), &expr, cap).unwrap();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn capped_is_monotone_and_bounded((edges, head, expr) in arb_kb_and_query()) {
            let kb = build(&edges, false);
            let expr = expr.map(&mut |r| RelationId(*r));
            let exact = kb.answer_set_exact(GraphSelector::Full, EntityId(head), &expr).unwrap();
            let mut prev = BTreeSet::new();
            for cap in 1..=8 {
                let cur = kb.answer_set_capped(GraphSelector::Full, EntityId(head), &expr, cap).unwrap();
                prop_assert!(prev.is_subset(&cur));
                prop_assert!(cur.is_subset(&exact));
                prev = cur;
            }
            let big = 12 * to_nfa(&expr).num_states();
            let dominated = kb.answer_set_capped(GraphSelector::Full, EntityId(head), &expr, big).unwrap();
            prop_assert_eq!(dominated, exact);
        }
    }
}
