//! Disjunctive decomposition and per-variant answerability.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Regex;

/// Upper bound on the number of branches a decomposition may produce.
pub const DEFAULT_MAX_BRANCHES: usize = 64;

/// Operator variants: how Kleene plus and disjunction are embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Single-hop training only; `r+` read as `r`, disjunction by aggregation.
    Baseline,
    /// Free-parameter `r+` boxes, disjunction by aggregation.
    FreeAgg,
    /// Free-parameter `r+` boxes, DeepSets disjunction.
    FreeDeepsets,
    /// Projection operator for `+`, disjunction by aggregation.
    ProjAgg,
    /// Projection operator for `+`, DeepSets disjunction.
    Comp,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::FreeAgg,
        Variant::FreeDeepsets,
        Variant::ProjAgg,
        Variant::Comp,
    ];

    pub fn uses_aggregation(self) -> bool {
        matches!(self, Variant::Baseline | Variant::FreeAgg | Variant::ProjAgg)
    }

    pub fn uses_free_plus(self) -> bool {
        matches!(self, Variant::Baseline | Variant::FreeAgg | Variant::FreeDeepsets)
    }

    pub fn uses_projection(self) -> bool {
        matches!(self, Variant::ProjAgg | Variant::Comp)
    }

    pub fn uses_deepsets(self) -> bool {
        matches!(self, Variant::FreeDeepsets | Variant::Comp)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::FreeAgg => "free-agg",
            Variant::FreeDeepsets => "free-deepsets",
            Variant::ProjAgg => "proj-agg",
            Variant::Comp => "comp",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant {s:?} (expected one of baseline, free-agg, free-deepsets, proj-agg, comp)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decomposition<T> {
    /// Disjunction-free parts whose languages union to the input's.
    Parts(Vec<Regex<T>>),
    Undecomposable,
}

impl<T> Decomposition<T> {
    pub fn parts(self) -> Option<Vec<Regex<T>>> {
        match self {
            Decomposition::Parts(p) => Some(p),
            Decomposition::Undecomposable => None,
        }
    }

    pub fn is_decomposable(&self) -> bool {
        matches!(self, Decomposition::Parts(_))
    }
}

/// Rewrites `expr` as `c1 | ... | cN` with disjunction-free `ci` by
/// distributing composition over disjunction. A disjunction under `+`
/// blocks the rewrite, as does exceeding `max_branches`.
pub fn dnf_decompose<T: Clone>(expr: &Regex<T>, max_branches: usize) -> Decomposition<T> {
    match dnf(expr, max_branches) {
        Some(parts) => Decomposition::Parts(parts),
        None => Decomposition::Undecomposable,
    }
}

fn dnf<T: Clone>(expr: &Regex<T>, cap: usize) -> Option<Vec<Regex<T>>> {
    let parts = match expr {
        Regex::Rel(_) => vec![expr.clone()],
        Regex::Plus(inner) => {
            if inner.contains_disj() {
                return None;
            }
            vec![expr.clone()]
        }
        Regex::Disj(a, b) => {
            let mut p = dnf(a, cap)?;
            p.extend(dnf(b, cap)?);
            p
        }
        Regex::Compose(a, b) => {
            let left = dnf(a, cap)?;
            let right = dnf(b, cap)?;
            if left.len().saturating_mul(right.len()) > cap {
                return None;
            }
            let mut p = Vec::with_capacity(left.len() * right.len());
            for x in &left {
                for y in &right {
                    p.push(Regex::compose(x.clone(), y.clone()));
                }
            }
            p
        }
    };
    (parts.len() <= cap).then_some(parts)
}

fn plus_wraps_only_relations<T>(expr: &Regex<T>) -> bool {
    match expr {
        Regex::Rel(_) => true,
        Regex::Plus(inner) => matches!(**inner, Regex::Rel(_)),
        Regex::Compose(a, b) | Regex::Disj(a, b) => {
            plus_wraps_only_relations(a) && plus_wraps_only_relations(b)
        }
    }
}

/// Whether `variant` can embed `expr` at all.
pub fn is_answerable<T: Clone>(expr: &Regex<T>, variant: Variant, max_branches: usize) -> bool {
    if variant.uses_free_plus() && !plus_wraps_only_relations(expr) {
        return false;
    }
    if variant.uses_aggregation() {
        return dnf_decompose(expr, max_branches).is_decomposable();
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regex::{enumerate_paths, parse};
    use proptest::prelude::*;

    fn strs(parts: Vec<Regex<String>>) -> Vec<String> {
        parts.iter().map(ToString::to_string).collect()
    }

    #[test]
    fn distributes_prefix_over_plus_branches() {
        let parts = dnf_decompose(&parse("r1/(r2+|r3+)").unwrap(), 64).parts().unwrap();
        assert_eq!(strs(parts), ["r1/r2+", "r1/r3+"]);
    }

    #[test]
    fn disjunction_free_is_identity() {
        let parts = dnf_decompose(&parse("r1").unwrap(), 64).parts().unwrap();
        assert_eq!(strs(parts), ["r1"]);
    }

    #[test]
    fn disjunction_under_plus_is_undecomposable() {
        assert_eq!(
            dnf_decompose(&parse("(r1|r2)+").unwrap(), 64),
            Decomposition::Undecomposable
        );
    }

    #[test]
    fn branch_cap_is_enforced() {
        // 2^7 = 128 branches
        let text = ["(a|b)"; 7].join("/");
        let e = parse(&text).unwrap();
        assert!(!dnf_decompose(&e, 64).is_decomposable());
        assert_eq!(dnf_decompose(&e, 128).parts().unwrap().len(), 128);
    }

    #[test]
    fn answerability_per_variant() {
        let disj_plus = parse("(r1|r2)+").unwrap();
        assert!(!is_answerable(&disj_plus, Variant::FreeAgg, 64));
        assert!(is_answerable(&disj_plus, Variant::Comp, 64));
        assert!(!is_answerable(&disj_plus, Variant::Baseline, 64));
        assert!(!is_answerable(&disj_plus, Variant::ProjAgg, 64));
        assert!(!is_answerable(&disj_plus, Variant::FreeDeepsets, 64));

        let comp_plus = parse("(r1/r2)+").unwrap();
        assert!(!is_answerable(&comp_plus, Variant::FreeAgg, 64));
        assert!(!is_answerable(&comp_plus, Variant::Baseline, 64));
        assert!(is_answerable(&comp_plus, Variant::ProjAgg, 64));
        assert!(is_answerable(&comp_plus, Variant::Comp, 64));

        let plain = parse("(r1+|r2+)/r3").unwrap();
        for v in Variant::ALL {
            assert!(is_answerable(&plain, v, 64), "{v}");
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("agg".parse::<Variant>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(400))]
        #[test]
        fn parts_union_to_the_same_language(
            expr in crate::regex::parse::tests::arb_regex(4),
            max_len in 1usize..=5,
        ) {
            if let Decomposition::Parts(parts) = dnf_decompose(&expr, 64) {
                prop_assert!(parts.iter().all(|p| !p.contains_disj()));
                let mut union = std::collections::BTreeSet::new();
                for p in &parts {
                    union.extend(enumerate_paths(p, max_len));
                }
                prop_assert_eq!(union, enumerate_paths(&expr, max_len));
            }
        }
    }
}
