//! Thompson construction followed by epsilon elimination.

use std::collections::{BTreeSet, VecDeque};

use super::Regex;

pub type StateId = usize;

/// Epsilon-free NFA over relation symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegexNfa<T> {
    num_states: usize,
    start: StateId,
    accepting: Vec<bool>,
    transitions: Vec<(StateId, T, StateId)>,
    out: Vec<Vec<(T, StateId)>>,
}

impl<T: Clone + Ord> RegexNfa<T> {
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn is_accepting(&self, s: StateId) -> bool {
        self.accepting[s]
    }

    pub fn accepting_states(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.num_states).filter(|&s| self.accepting[s])
    }

    /// All transitions, sorted.
    pub fn transitions(&self) -> &[(StateId, T, StateId)] {
        &self.transitions
    }

    pub fn transitions_from(&self, s: StateId) -> &[(T, StateId)] {
        &self.out[s]
    }

    pub fn accepts(&self, word: &[T]) -> bool {
        let mut current = BTreeSet::from([self.start]);
        for sym in word {
            let mut next = BTreeSet::new();
            for &s in &current {
                next.extend(self.out[s].iter().filter(|(t, _)| t == sym).map(|&(_, d)| d));
            }
            if next.is_empty() {
                return false;
            }
            current = next;
        }
        current.iter().any(|&s| self.accepting[s])
    }
}

struct Builder<T> {
    eps: Vec<Vec<StateId>>,
    sym: Vec<Vec<(T, StateId)>>,
}

impl<T: Clone> Builder<T> {
    fn state(&mut self) -> StateId {
        self.eps.push(Vec::new());
        self.sym.push(Vec::new());
        self.eps.len() - 1
    }

    /// Returns the (start, accept) pair of the fragment for `expr`.
    fn fragment(&mut self, expr: &Regex<T>) -> (StateId, StateId) {
        match expr {
            Regex::Rel(r) => {
                let s = self.state();
                let f = self.state();
                self.sym[s].push((r.clone(), f));
                (s, f)
            }
            Regex::Compose(a, b) => {
                let (sa, fa) = self.fragment(a);
                let (sb, fb) = self.fragment(b);
                self.eps[fa].push(sb);
                (sa, fb)
            }
            Regex::Disj(a, b) => {
                let s = self.state();
                let (sa, fa) = self.fragment(a);
                let (sb, fb) = self.fragment(b);
                let f = self.state();
                self.eps[s].extend([sa, sb]);
                self.eps[fa].push(f);
                self.eps[fb].push(f);
                (s, f)
            }
            Regex::Plus(a) => {
                let (sa, fa) = self.fragment(a);
                self.eps[fa].push(sa);
                (sa, fa)
            }
        }
    }

    fn closure(&self, s: StateId) -> Vec<StateId> {
        let mut seen = vec![false; self.eps.len()];
        let mut stack = vec![s];
        let mut out = Vec::new();
        seen[s] = true;
        while let Some(p) = stack.pop() {
            out.push(p);
            for &q in &self.eps[p] {
                if !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        out
    }
}

/// Compiles a regex to an epsilon-free NFA accepting exactly its language.
///
/// Unreachable states are dropped and the survivors renumbered in
/// breadth-first order from the start state, so the result is canonical for
/// a given tree.
pub fn to_nfa<T: Clone + Ord>(expr: &Regex<T>) -> RegexNfa<T> {
    let mut b = Builder { eps: Vec::new(), sym: Vec::new() };
    let (start, accept) = b.fragment(expr);

    let n = b.eps.len();
    let mut accepting = vec![false; n];
    let mut moves: Vec<BTreeSet<(T, StateId)>> = vec![BTreeSet::new(); n];
    for (s, out) in moves.iter_mut().enumerate() {
        for p in b.closure(s) {
            if p == accept {
                accepting[s] = true;
            }
            out.extend(b.sym[p].iter().cloned());
        }
    }

    let mut renumber = vec![usize::MAX; n];
    let mut order = Vec::new();
    let mut queue = VecDeque::from([start]);
    renumber[start] = 0;
    order.push(start);
    while let Some(s) = queue.pop_front() {
        for (_, d) in &moves[s] {
            if renumber[*d] == usize::MAX {
                renumber[*d] = order.len();
                order.push(*d);
                queue.push_back(*d);
            }
        }
    }

    let num_states = order.len();
    let mut out = vec![Vec::new(); num_states];
    let mut transitions = Vec::new();
    for (new, &old) in order.iter().enumerate() {
        for (sym, d) in &moves[old] {
            out[new].push((sym.clone(), renumber[*d]));
            transitions.push((new, sym.clone(), renumber[*d]));
        }
    }
    transitions.sort();
    RegexNfa {
        num_states,
        start: 0,
        accepting: order.iter().map(|&s| accepting[s]).collect(),
        transitions,
        out,
    }
}
