//! Regex queries and their line-oriented JSON file format.
//!
//! One object per line:
//! `{"head": "<entity>", "regex": "<surface syntax>", "answers": [...], "type": "<tag>"}`.
//! Dev and test files additionally carry `full_answers`, the answer set
//! over the full graph, which drives filtered ranking and negative
//! sampling.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{KbError, KnowledgeBase};
use crate::ids::EntityId;
use crate::regex::{parse, RegexExpr};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegexQuery {
    pub head: EntityId,
    pub expr: RegexExpr,
    pub answers: BTreeSet<EntityId>,
    pub query_type: String,
    /// Full-graph answers; `None` when `answers` already is that set.
    pub full_answers: Option<BTreeSet<EntityId>>,
}

impl RegexQuery {
    /// Answers used for filtering: the full-graph set when known.
    pub fn filter_set(&self) -> &BTreeSet<EntityId> {
        self.full_answers.as_ref().unwrap_or(&self.answers)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub head: String,
    pub regex: String,
    pub answers: Vec<String>,
    #[serde(rename = "type")]
    pub query_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_answers: Option<Vec<String>>,
}

fn sorted_names(kb: &KnowledgeBase, set: &BTreeSet<EntityId>) -> Vec<String> {
    let mut v: Vec<String> = set.iter().map(|e| kb.entity_name(*e).to_string()).collect();
    v.sort();
    v
}

impl QueryRecord {
    pub fn from_query(kb: &KnowledgeBase, q: &RegexQuery) -> Self {
        QueryRecord {
            head: kb.entity_name(q.head).to_string(),
            regex: kb.regex_to_string(&q.expr),
            answers: sorted_names(kb, &q.answers),
            query_type: q.query_type.clone(),
            full_answers: q.full_answers.as_ref().map(|f| sorted_names(kb, f)),
        }
    }

    pub fn to_query(&self, kb: &KnowledgeBase) -> Result<RegexQuery, String> {
        let expr = parse(&self.regex).map_err(|e| e.to_string())?;
        let expr = kb.resolve_regex(&expr).map_err(|e| e.to_string())?;
        let ids = |names: &[String]| -> Result<BTreeSet<EntityId>, String> {
            names.iter().map(|n| kb.entity(n).map_err(|e| e.to_string())).collect()
        };
        Ok(RegexQuery {
            head: kb.entity(&self.head).map_err(|e| e.to_string())?,
            expr,
            answers: ids(&self.answers)?,
            query_type: self.query_type.clone(),
            full_answers: self.full_answers.as_deref().map(ids).transpose()?,
        })
    }
}

pub fn write_queries<W: Write>(kb: &KnowledgeBase, queries: &[RegexQuery], mut out: W) -> std::io::Result<()> {
    for q in queries {
        let line = serde_json::to_string(&QueryRecord::from_query(kb, q)).map_err(std::io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_queries<R: BufRead>(kb: &KnowledgeBase, input: R) -> Result<Vec<RegexQuery>, KbError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let bad = |message: String| KbError::BadQuery { line: i + 1, message };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QueryRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        out.push(rec.to_query(kb).map_err(bad)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::Split;

    #[test]
    fn record_round_trip_through_json_lines() {
        let mut kb = KnowledgeBase::new();
        kb.add_triple("a", "r1", "b", Split::Train).unwrap();
        kb.add_triple("b", "r2", "c", Split::Test).unwrap();
        let q = RegexQuery {
            head: kb.entity("a").unwrap(),
            expr: kb.resolve_regex(&parse("r1/r2+").unwrap()).unwrap(),
            answers: BTreeSet::from([kb.entity("c").unwrap()]),
            query_type: "r1/r2+".into(),
            full_answers: Some(BTreeSet::from([kb.entity("c").unwrap()])),
        };
        let mut buf = Vec::new();
        write_queries(&kb, std::slice::from_ref(&q), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "{\"head\":\"a\",\"regex\":\"r1/r2+\",\"answers\":[\"c\"],\"type\":\"r1/r2+\",\"full_answers\":[\"c\"]}\n"
        );
        let back = read_queries(&kb, buf.as_slice()).unwrap();
        assert_eq!(back, vec![q]);
    }

    #[test]
    fn bad_lines_report_their_number() {
        let mut kb = KnowledgeBase::new();
        kb.add_triple("a", "r", "b", Split::Train).unwrap();
        let text = "{\"head\":\"a\",\"regex\":\"r\",\"answers\":[\"b\"],\"type\":\"r\"}\n{\"head\":\"a\",\"regex\":\"r/q\",\"answers\":[],\"type\":\"x\"}\n";
        let err = read_queries(&kb, text.as_bytes()).unwrap_err();
        assert!(matches!(err, KbError::BadQuery { line: 2, .. }), "{err}");
    }
}
