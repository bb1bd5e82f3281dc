//! Knowledge base storage: interned vocabularies, split triple sets and
//! per-relation adjacency, plus the ground-truth answer oracles.

mod oracle;
mod query;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{EntityId, RelationId};
use crate::regex::{Regex, RegexExpr};

pub use oracle::DEFAULT_MAX_PATH_LEN;
pub use query::{read_queries, write_queries, QueryRecord, RegexQuery};

#[derive(Debug, Error)]
pub enum KbError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected 3 tab-separated fields, found {fields}")]
    Malformed { path: PathBuf, line: usize, fields: usize },
    #[error("triple ({head}, {relation}, {tail}) is already in the {existing} split, cannot add it to {requested}")]
    SplitConflict {
        head: String,
        relation: String,
        tail: String,
        existing: Split,
        requested: Split,
    },
    #[error("unknown relation {0:?}")]
    UnknownRelation(String),
    #[error("unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("query file line {line}: {message}")]
    BadQuery { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// Which union of splits a traversal runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphSelector {
    Train,
    TrainDev,
    Full,
}

impl GraphSelector {
    fn includes(self, split: Split) -> bool {
        match self {
            GraphSelector::Train => split == Split::Train,
            GraphSelector::TrainDev => split != Split::Test,
            GraphSelector::Full => true,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// Bidirectional string <-> dense id map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_names<I: IntoIterator<Item = String>>(names: I) -> Self {
        let mut v = Vocab::default();
        for n in names {
            v.intern(&n);
        }
        v
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// relation -> head -> sorted tails
#[derive(Debug, Default)]
pub(crate) struct Adjacency {
    by_relation: Vec<HashMap<EntityId, Vec<EntityId>>>,
}

impl Adjacency {
    pub(crate) fn tails(&self, rel: RelationId, head: EntityId) -> &[EntityId] {
        self.by_relation
            .get(rel.index())
            .and_then(|m| m.get(&head))
            .map_or(&[], Vec::as_slice)
    }

    pub(crate) fn heads(&self, rel: RelationId) -> impl Iterator<Item = EntityId> + '_ {
        self.by_relation.get(rel.index()).into_iter().flat_map(|m| m.keys().copied())
    }
}

/// Per-split counts reported after a load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LoadSummary {
    pub split: Split,
    pub lines: usize,
    pub added: usize,
    pub duplicates: usize,
}

#[derive(Debug, Default)]
pub struct KnowledgeBase {
    entities: Vocab,
    relations: Vocab,
    splits: [BTreeSet<Triple>; 3],
    adjacency: [OnceLock<Adjacency>; 3],
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity(&self, name: &str) -> Result<EntityId, KbError> {
        self.entities.get(name).map(EntityId).ok_or_else(|| KbError::UnknownEntity(name.to_string()))
    }

    pub fn relation(&self, name: &str) -> Result<RelationId, KbError> {
        self.relations
            .get(name)
            .map(RelationId)
            .ok_or_else(|| KbError::UnknownRelation(name.to_string()))
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        self.entities.name(id.0)
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        self.relations.name(id.0)
    }

    /// Registers an entity without any triple (used by fixtures and tests).
    pub fn intern_entity(&mut self, name: &str) -> EntityId {
        EntityId(self.entities.intern(name))
    }

    pub fn intern_relation(&mut self, name: &str) -> RelationId {
        RelationId(self.relations.intern(name))
    }

    pub fn triples(&self, split: Split) -> &BTreeSet<Triple> {
        &self.splits[split.index()]
    }

    pub fn triples_in(&self, graph: GraphSelector) -> impl Iterator<Item = &Triple> + '_ {
        Split::ALL
            .into_iter()
            .filter(move |s| graph.includes(*s))
            .flat_map(move |s| self.splits[s.index()].iter())
    }

    pub fn split_of(&self, triple: &Triple) -> Option<Split> {
        Split::ALL.into_iter().find(|s| self.splits[s.index()].contains(triple))
    }

    /// Adds a named triple; returns `false` if it was already present in
    /// the same split.
    pub fn add_triple(&mut self, head: &str, relation: &str, tail: &str, split: Split) -> Result<bool, KbError> {
        let t = Triple {
            head: self.intern_entity(head),
            relation: self.intern_relation(relation),
            tail: self.intern_entity(tail),
        };
        self.insert(t, split)
    }

    pub fn insert(&mut self, t: Triple, split: Split) -> Result<bool, KbError> {
        assert!(t.head.index() < self.num_entities() && t.tail.index() < self.num_entities());
        assert!(t.relation.index() < self.num_relations());
        match self.split_of(&t) {
            Some(existing) if existing == split => Ok(false),
            Some(existing) => Err(KbError::SplitConflict {
                head: self.entity_name(t.head).to_string(),
                relation: self.relation_name(t.relation).to_string(),
                tail: self.entity_name(t.tail).to_string(),
                existing,
                requested: split,
            }),
            None => {
                self.splits[split.index()].insert(t);
                self.adjacency = Default::default();
                Ok(true)
            }
        }
    }

    /// Loads a tab-separated `head<TAB>relation<TAB>tail` file into `split`.
    pub fn load_triples(&mut self, path: &Path, split: Split) -> Result<LoadSummary, KbError> {
        let io = |source| KbError::Io { path: path.to_path_buf(), source };
        let reader = BufReader::new(File::open(path).map_err(io)?);
        let mut summary = LoadSummary { split, lines: 0, added: 0, duplicates: 0 };
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io)?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(KbError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    fields: fields.len(),
                });
            }
            summary.lines += 1;
            if self.add_triple(fields[0], fields[1], fields[2], split)? {
                summary.added += 1;
            } else {
                summary.duplicates += 1;
            }
        }
        Ok(summary)
    }

    /// Writes one split as `head<TAB>relation<TAB>tail` lines in id order.
    pub fn write_triples<W: Write>(&self, split: Split, mut out: W) -> std::io::Result<()> {
        for t in self.triples(split) {
            writeln!(out, "{}\t{}\t{}", self.entity_name(t.head), self.relation_name(t.relation), self.entity_name(t.tail))?;
        }
        Ok(())
    }

    pub(crate) fn adjacency(&self, graph: GraphSelector) -> &Adjacency {
        self.adjacency[graph.index()].get_or_init(|| {
            let mut by_relation: Vec<HashMap<EntityId, Vec<EntityId>>> =
                vec![HashMap::new(); self.num_relations()];
            for t in self.triples_in(graph) {
                by_relation[t.relation.index()].entry(t.head).or_default().push(t.tail);
            }
            for m in &mut by_relation {
                for tails in m.values_mut() {
                    tails.sort_unstable();
                    tails.dedup();
                }
            }
            Adjacency { by_relation }
        })
    }

    /// Tails reachable from `head` over one `rel` edge.
    pub fn tails(&self, graph: GraphSelector, rel: RelationId, head: EntityId) -> &[EntityId] {
        self.adjacency(graph).tails(rel, head)
    }

    /// Entities with at least one outgoing `rel` edge, sorted.
    pub fn heads_with(&self, graph: GraphSelector, rel: RelationId) -> Vec<EntityId> {
        let mut v: Vec<EntityId> = self.adjacency(graph).heads(rel).collect();
        v.sort_unstable();
        v
    }

    /// Interns a parsed regex's relation names.
    pub fn resolve_regex(&self, expr: &Regex<String>) -> Result<RegexExpr, KbError> {
        expr.try_map(&mut |name: &String| self.relation(name))
    }

    pub fn regex_to_string(&self, expr: &RegexExpr) -> String {
        expr.map(&mut |r: &RelationId| self.relation_name(*r).to_string()).to_string()
    }

    pub(crate) fn check_regex(&self, expr: &RegexExpr) -> Result<(), KbError> {
        match expr.leaves().into_iter().find(|r| r.index() >= self.num_relations()) {
            Some(r) => Err(KbError::UnknownRelation(r.to_string())),
            None => Ok(()),
        }
    }
}
