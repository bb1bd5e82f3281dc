//! Query templates with numbered relation placeholders.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::ids::RelationId;
use crate::regex::{parse, Regex, RegexExpr};

/// A regex over placeholders `r1..rN` (N <= 3).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryTemplate {
    pub pattern: Regex<usize>,
    pub tag: String,
    pub arity: usize,
}

impl QueryTemplate {
    /// Parses a tag such as `(r1|r2)/r3+`.
    pub fn parse(tag: &str) -> Result<Self, DatasetError> {
        let bad = |m: String| DatasetError::BadTemplate { tag: tag.to_string(), message: m };
        let expr = parse(tag).map_err(|e| bad(e.to_string()))?;
        let pattern = expr.try_map(&mut |name: &String| {
            name.strip_prefix('r')
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|n| (1..=3).contains(n))
                .ok_or_else(|| bad(format!("placeholder {name:?} is not r1, r2 or r3")))
        })?;
        let mut used: Vec<usize> = pattern.leaves().into_iter().copied().collect();
        used.sort_unstable();
        used.dedup();
        let arity = used.len();
        if used != (1..=arity).collect::<Vec<_>>() {
            return Err(bad("placeholders must be numbered contiguously from r1".into()));
        }
        let tag = pattern.map(&mut |i| format!("r{i}")).to_string();
        Ok(Self { pattern, tag, arity })
    }

    /// Substitutes `relations[i - 1]` for placeholder `ri`.
    pub fn instantiate(&self, relations: &[RelationId]) -> RegexExpr {
        assert_eq!(relations.len(), self.arity, "one relation per placeholder");
        self.pattern.map(&mut |i| relations[i - 1])
    }
}

/// Template sets shipped with the tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateSet {
    Fb15kRegex,
    Wiki100Regex,
}

impl TemplateSet {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateSet::Fb15kRegex => "fb15k-regex",
            TemplateSet::Wiki100Regex => "wiki100-regex",
        }
    }
}

impl fmt::Display for TemplateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateSet {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fb15k-regex" => Ok(TemplateSet::Fb15kRegex),
            "wiki100-regex" => Ok(TemplateSet::Wiki100Regex),
            other => Err(DatasetError::UnknownTemplateSet(other.to_string())),
        }
    }
}

const FB15K: [&str; 21] = [
    "r1+",
    "r1/r2",
    "r1+/r2+",
    "r1+/r2+/r3+",
    "r1/r2+",
    "r1+/r2",
    "r1+/r2+/r3",
    "r1+/r2/r3+",
    "r1/r2+/r3+",
    "r1/r2/r3+",
    "r1/r2+/r3",
    "r1+/r2/r3",
    "r1|r2",
    "(r1|r2)/r3",
    "r1/(r2|r3)",
    "r1+|r2+",
    "(r1|r2)/r3+",
    "(r1+|r2+)/r3",
    "r1+/(r2|r3)",
    "r1/(r2+|r3+)",
    "(r1|r2)+",
];

const WIKI100: [&str; 5] = ["r1+", "r1+/r2+", "r1/r2+", "r1|r2", "(r1|r2)+"];

pub fn builtin_templates(set: TemplateSet) -> Vec<QueryTemplate> {
    let tags: &[&str] = match set {
        TemplateSet::Fb15kRegex => &FB15K,
        TemplateSet::Wiki100Regex => &WIKI100,
    };
    tags.iter().map(|t| QueryTemplate::parse(t).expect("built-in templates parse")).collect()
}
