//! Regular expressions over knowledge-base relations.
//!
//! The grammar has four productions: a relation leaf, composition `a/b`
//! ("followed by"), disjunction `a|b` and Kleene plus `a+`. The AST is
//! generic over its leaf type so the same tree shape serves parsed surface
//! strings (`Regex<String>`), interned queries (`Regex<RelationId>`) and
//! template patterns with numbered placeholders (`Regex<usize>`).

mod dnf;
mod nfa;
mod parse;
mod paths;

use std::fmt;

pub use dnf::{dnf_decompose, is_answerable, Decomposition, Variant, DEFAULT_MAX_BRANCHES};
pub use nfa::{to_nfa, RegexNfa, StateId};
pub use parse::{parse, ParseError, ParseErrorKind};
pub use paths::{enumerate_paths, RelationPath};

use crate::ids::RelationId;

/// Regex tree over leaves of type `T`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regex<T> {
    Rel(T),
    Compose(Box<Regex<T>>, Box<Regex<T>>),
    Disj(Box<Regex<T>>, Box<Regex<T>>),
    Plus(Box<Regex<T>>),
}

/// A regex over interned relation ids.
pub type RegexExpr = Regex<RelationId>;

impl<T> Regex<T> {
    pub fn rel(leaf: T) -> Self {
        Regex::Rel(leaf)
    }

    pub fn compose(left: Self, right: Self) -> Self {
        Regex::Compose(Box::new(left), Box::new(right))
    }

    pub fn disj(left: Self, right: Self) -> Self {
        Regex::Disj(Box::new(left), Box::new(right))
    }

    pub fn plus(inner: Self) -> Self {
        Regex::Plus(Box::new(inner))
    }

    /// Rebuilds the tree with every leaf mapped through `f`.
    pub fn map<U, F: FnMut(&T) -> U>(&self, f: &mut F) -> Regex<U> {
        match self {
            Regex::Rel(r) => Regex::Rel(f(r)),
            Regex::Compose(a, b) => Regex::compose(a.map(f), b.map(f)),
            Regex::Disj(a, b) => Regex::disj(a.map(f), b.map(f)),
            Regex::Plus(a) => Regex::plus(a.map(f)),
        }
    }

    /// Fallible variant of [`Regex::map`]; stops at the first error.
    pub fn try_map<U, E, F: FnMut(&T) -> Result<U, E>>(&self, f: &mut F) -> Result<Regex<U>, E> {
        Ok(match self {
            Regex::Rel(r) => Regex::Rel(f(r)?),
            Regex::Compose(a, b) => Regex::compose(a.try_map(f)?, b.try_map(f)?),
            Regex::Disj(a, b) => Regex::disj(a.try_map(f)?, b.try_map(f)?),
            Regex::Plus(a) => Regex::plus(a.try_map(f)?),
        })
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&T> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a T>) {
        match self {
            Regex::Rel(r) => out.push(r),
            Regex::Compose(a, b) | Regex::Disj(a, b) => {
                a.collect_leaves(out);
                b.collect_leaves(out);
            }
            Regex::Plus(a) => a.collect_leaves(out),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Regex::Rel(_) => 1,
            Regex::Compose(a, b) | Regex::Disj(a, b) => 1 + a.node_count() + b.node_count(),
            Regex::Plus(a) => 1 + a.node_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Regex::Rel(_) => 1,
            Regex::Compose(a, b) | Regex::Disj(a, b) => 1 + a.depth().max(b.depth()),
            Regex::Plus(a) => 1 + a.depth(),
        }
    }

    pub fn contains_disj(&self) -> bool {
        match self {
            Regex::Rel(_) => false,
            Regex::Disj(..) => true,
            Regex::Compose(a, b) => a.contains_disj() || b.contains_disj(),
            Regex::Plus(a) => a.contains_disj(),
        }
    }

    /// Flattens a chain of nested disjunctions into its operands.
    pub fn disjuncts(&self) -> Vec<&Regex<T>> {
        let mut out = Vec::new();
        self.collect_disjuncts(&mut out);
        out
    }

    fn collect_disjuncts<'a>(&'a self, out: &mut Vec<&'a Regex<T>>) {
        match self {
            Regex::Disj(a, b) => {
                a.collect_disjuncts(out);
                b.collect_disjuncts(out);
            }
            other => out.push(other),
        }
    }

    /// Relations that can occur first on a compatible path.
    pub fn first_leaves(&self) -> Vec<&T> {
        match self {
            Regex::Rel(r) => vec![r],
            Regex::Compose(a, _) => a.first_leaves(),
            Regex::Disj(a, b) => {
                let mut v = a.first_leaves();
                v.extend(b.first_leaves());
                v
            }
            Regex::Plus(a) => a.first_leaves(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Regex::Disj(..) => 0,
            Regex::Compose(..) => 1,
            Regex::Plus(_) => 2,
            Regex::Rel(_) => 3,
        }
    }
}

/// Prints with the minimal parentheses needed for `parse` to rebuild the
/// same tree (`+` binds tightest, then `/`, then `|`, both binary operators
/// left-associative).
impl<T: fmt::Display> fmt::Display for Regex<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child<T: fmt::Display>(
            f: &mut fmt::Formatter<'_>,
            node: &Regex<T>,
            parens: bool,
        ) -> fmt::Result {
            if parens {
                write!(f, "({node})")
            } else {
                write!(f, "{node}")
            }
        }
        match self {
            Regex::Rel(r) => write!(f, "{r}"),
            Regex::Compose(a, b) => {
                child(f, a, a.precedence() < 1)?;
                f.write_str("/")?;
                child(f, b, b.precedence() <= 1)
            }
            Regex::Disj(a, b) => {
                child(f, a, false)?;
                f.write_str("|")?;
                child(f, b, b.precedence() == 0)
            }
            Regex::Plus(a) => {
                child(f, a, a.precedence() < 2)?;
                f.write_str("+")
            }
        }
    }
}
