//! Explicit enumeration of the relation paths compatible with a regex.

use std::collections::BTreeSet;

use super::Regex;

/// A non-empty sequence of relations.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationPath<T>(Vec<T>);

impl<T> RelationPath<T> {
    /// Returns `None` for an empty sequence.
    pub fn new(rels: Vec<T>) -> Option<Self> {
        (!rels.is_empty()).then_some(Self(rels))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn relations(&self) -> &[T] {
        &self.0
    }
}

/// All paths of the regex's language with length at most `max_len`.
pub fn enumerate_paths<T: Clone + Ord>(expr: &Regex<T>, max_len: usize) -> BTreeSet<RelationPath<T>> {
    words(expr, max_len)
        .into_iter()
        .map(|w| RelationPath(w))
        .collect()
}

fn words<T: Clone + Ord>(expr: &Regex<T>, max_len: usize) -> BTreeSet<Vec<T>> {
    let mut out = BTreeSet::new();
    if max_len == 0 {
        return out;
    }
    match expr {
        Regex::Rel(r) => {
            out.insert(vec![r.clone()]);
        }
        Regex::Disj(a, b) => {
            out = words(a, max_len);
            out.extend(words(b, max_len));
        }
        Regex::Compose(a, b) => {
            let left = words(a, max_len);
            let right = words(b, max_len);
            for x in &left {
                for y in right.iter().filter(|y| x.len() + y.len() <= max_len) {
                    let mut w = x.clone();
                    w.extend(y.iter().cloned());
                    out.insert(w);
                }
            }
        }
        Regex::Plus(a) => {
            let base = words(a, max_len);
            let mut frontier = base.clone();
            out = base.clone();
            while !frontier.is_empty() {
                let mut next = BTreeSet::new();
                for x in &frontier {
                    for y in base.iter().filter(|y| x.len() + y.len() <= max_len) {
                        let mut w = x.clone();
                        w.extend(y.iter().cloned());
                        if !out.contains(&w) {
                            next.insert(w);
                        }
                    }
                }
                out.extend(next.iter().cloned());
                frontier = next;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regex::parse;

    fn paths(text: &str, max_len: usize) -> Vec<String> {
        enumerate_paths(&parse(text).unwrap(), max_len)
            .into_iter()
            .map(|p| p.relations().join("/"))
            .collect()
    }

    #[test]
    fn compose_with_plus() {
        assert_eq!(paths("r1/r2+", 4), ["r1/r2", "r1/r2/r2", "r1/r2/r2/r2"]);
    }

    #[test]
    fn single_relation() {
        assert_eq!(paths("r", 5), ["r"]);
    }

    #[test]
    fn plus_of_disjunction_matches_brute_force() {
        // every word over {r1, r2} of length 1 or 2
        let alphabet = ["r1", "r2"];
        let mut expected: Vec<String> = alphabet.iter().map(|s| s.to_string()).collect();
        for a in alphabet {
            for b in alphabet {
                expected.push(format!("{a}/{b}"));
            }
        }
        expected.sort();
        assert_eq!(paths("(r1|r2)+", 2), expected);
    }

    #[test]
    fn small_cap_can_be_empty() {
        assert!(paths("a/b/c", 2).is_empty());
        assert!(paths("a", 0).is_empty());
    }

    #[test]
    fn path_rejects_empty() {
        assert!(RelationPath::<u32>::new(vec![]).is_none());
        assert_eq!(RelationPath::new(vec![1, 2]).unwrap().len(), 2);
    }
}
