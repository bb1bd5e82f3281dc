//! Small synthetic knowledge bases with known structure.
//!
//! `chain`, `cycle`, `hierarchy` and `symmetric` are hand-sized graphs with
//! documented queries; all their triples sit in the train split. `planted`
//! is a ~200-entity graph with regular structure, split 80/10/10, plus a
//! generated regex-query dataset.

use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    build_dataset, builtin_templates, DatasetError, DatasetSpec, GenerationReport, SplitQueries, SplitTargets,
    TemplateSet,
};
use crate::kb::{write_queries, GraphSelector, KbError, KnowledgeBase, RegexQuery, Split};
use crate::regex::parse;
use crate::rng::stream;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("unknown fixture {0:?} (expected chain, cycle, hierarchy, symmetric or planted)")]
    Unknown(String),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureName {
    Chain,
    Cycle,
    Hierarchy,
    Symmetric,
    Planted,
}

impl FixtureName {
    pub const ALL: [FixtureName; 5] =
        [FixtureName::Chain, FixtureName::Cycle, FixtureName::Hierarchy, FixtureName::Symmetric, FixtureName::Planted];

    pub fn as_str(self) -> &'static str {
        match self {
            FixtureName::Chain => "chain",
            FixtureName::Cycle => "cycle",
            FixtureName::Hierarchy => "hierarchy",
            FixtureName::Symmetric => "symmetric",
            FixtureName::Planted => "planted",
        }
    }
}

impl fmt::Display for FixtureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FixtureName {
    type Err = FixtureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FixtureName::ALL.into_iter().find(|f| f.as_str() == s).ok_or_else(|| FixtureError::Unknown(s.to_string()))
    }
}

/// A fixture: the KB, its query splits and the generation report when
/// the queries were sampled.
#[derive(Debug)]
pub struct Fixture {
    pub name: FixtureName,
    pub seed: u64,
    pub kb: KnowledgeBase,
    pub queries: SplitQueries,
    pub report: Option<GenerationReport>,
}

/// Shape of the planted graph and its query set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub groups: usize,
    pub positions: usize,
    pub queries_per_template: usize,
    pub dev_cap: usize,
    pub test_cap: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self { groups: 20, positions: 10, queries_per_template: 150, dev_cap: 8, test_cap: 16 }
    }
}

pub fn build_fixture(name: FixtureName, seed: u64) -> Result<Fixture, FixtureError> {
    match name {
        FixtureName::Planted => planted(&PlantedConfig::default(), seed),
        FixtureName::Chain => small(name, seed, chain, &["a\tr+", "a\tr/r", "d\tr+"]),
        FixtureName::Cycle => small(name, seed, cycle, &["a\tr+", "a\tr", "b\tr/r"]),
        FixtureName::Hierarchy => small(name, seed, hierarchy, &["n0\tr1", "n0\tr2", "n0\tr1+", "n0\tr2+"]),
        FixtureName::Symmetric => small(name, seed, symmetric, &["p0\tfriend", "p0\tfriend/friend"]),
    }
}

/// Seven entities a..g joined by `r` in a line.
fn chain(kb: &mut KnowledgeBase, _seed: u64) -> Result<(), KbError> {
    let names = ["a", "b", "c", "d", "e", "f", "g"];
    for w in names.windows(2) {
        kb.add_triple(w[0], "r", w[1], Split::Train)?;
    }
    Ok(())
}

fn cycle(kb: &mut KnowledgeBase, _seed: u64) -> Result<(), KbError> {
    kb.add_triple("a", "r", "b", Split::Train)?;
    kb.add_triple("b", "r", "a", Split::Train)?;
    Ok(())
}

/// Every `r1` edge is also an `r2` edge; `r2` has extra edges of its own.
fn hierarchy(kb: &mut KnowledgeBase, seed: u64) -> Result<(), KbError> {
    let mut rng = stream(seed, "fixture/hierarchy");
    let n = 12;
    for i in 0..n {
        kb.intern_entity(&format!("n{i}"));
    }
    for h in 0..n {
        for t in 0..n {
            if h == t {
                continue;
            }
            let u: f64 = rng.gen();
            if u < 0.12 {
                kb.add_triple(&format!("n{h}"), "r1", &format!("n{t}"), Split::Train)?;
                kb.add_triple(&format!("n{h}"), "r2", &format!("n{t}"), Split::Train)?;
            } else if u < 0.2 {
                kb.add_triple(&format!("n{h}"), "r2", &format!("n{t}"), Split::Train)?;
            }
        }
    }
    // n0 always has an r1 edge so the documented queries are non-empty
    kb.add_triple("n0", "r1", "n1", Split::Train)?;
    kb.add_triple("n0", "r2", "n1", Split::Train)?;
    Ok(())
}

/// `friend` holds in both directions for every pair it links.
fn symmetric(kb: &mut KnowledgeBase, seed: u64) -> Result<(), KbError> {
    let mut rng = stream(seed, "fixture/symmetric");
    let n = 10;
    for i in 0..n {
        kb.intern_entity(&format!("p{i}"));
    }
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(0.25) || (a == 0 && b == 1) {
                kb.add_triple(&format!("p{a}"), "friend", &format!("p{b}"), Split::Train)?;
                kb.add_triple(&format!("p{b}"), "friend", &format!("p{a}"), Split::Train)?;
            }
        }
    }
    Ok(())
}

fn small(
    name: FixtureName,
    seed: u64,
    build: fn(&mut KnowledgeBase, u64) -> Result<(), KbError>,
    documented: &[&str],
) -> Result<Fixture, FixtureError> {
    let mut kb = KnowledgeBase::new();
    build(&mut kb, seed)?;
    let mut queries = Vec::new();
    for line in documented {
        let (head, regex) = line.split_once('\t').expect("head<TAB>regex");
        let expr = kb.resolve_regex(&parse(regex).expect("documented queries parse"))?;
        let head = kb.entity(head)?;
        let answers = kb.answer_set_exact(GraphSelector::Full, head, &expr)?;
        queries.push(RegexQuery { head, expr, answers, query_type: regex.to_string(), full_answers: None });
    }
    let queries = SplitQueries { test: queries, ..Default::default() };
    Ok(Fixture { name, seed, kb, queries, report: None })
}

/// Entity at `position` within `group`.
fn node(group: usize, position: usize) -> String {
    format!("g{group:02}p{position}")
}

/// Groups of entities laid out as rings, with five relations:
/// - `next`: one step around the group's ring
/// - `near`: one or two steps around the ring, so `next` implies `near`
/// - `link`: same position in the following group, groups also forming a ring
/// - `mirror`: position reflected within the group (its own inverse)
/// - `twin`: same position in the paired group (symmetric)
///
/// Closures of the ring relations cover a whole group or a whole position
/// class. Triples are shuffled with the seed and split 80/10/10, then
/// queries are generated from every built-in template.
pub fn planted(config: &PlantedConfig, seed: u64) -> Result<Fixture, FixtureError> {
    let (g_n, p_n) = (config.groups, config.positions);
    let mut kb = KnowledgeBase::new();
    for g in 0..g_n {
        for p in 0..p_n {
            kb.intern_entity(&node(g, p));
        }
    }
    for r in ["next", "near", "link", "mirror", "twin"] {
        kb.intern_relation(r);
    }
    let mut triples = Vec::new();
    for g in 0..g_n {
        for p in 0..p_n {
            let from = node(g, p);
            triples.push((from.clone(), "next", node(g, (p + 1) % p_n)));
            triples.push((from.clone(), "near", node(g, (p + 1) % p_n)));
            triples.push((from.clone(), "near", node(g, (p + 2) % p_n)));
            triples.push((from.clone(), "link", node((g + 1) % g_n, p)));
            triples.push((from.clone(), "mirror", node(g, p_n - 1 - p)));
            if (g ^ 1) < g_n {
                triples.push((from, "twin", node(g ^ 1, p)));
            }
        }
    }
    // tiny grids can map two steps onto the same triple
    triples.sort();
    triples.dedup();
    let mut rng = stream(seed, "fixture/planted/split");
    triples.shuffle(&mut rng);
    let n = triples.len();
    let (n_train, n_dev) = (n * 8 / 10, n / 10);
    for (i, (h, r, t)) in triples.iter().enumerate() {
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
        kb.add_triple(h, r, t, split)?;
    }

    let mut templates = builtin_templates(TemplateSet::Fb15kRegex);
    for t in builtin_templates(TemplateSet::Wiki100Regex) {
        if !templates.contains(&t) {
            templates.push(t);
        }
    }
    let mut spec = DatasetSpec::new(templates, config.queries_per_template, seed);
    spec.split_targets = SplitTargets { train: None, dev: Some(config.dev_cap), test: Some(config.test_cap) };
    let (queries, mut report) = build_dataset(&kb, &spec, 1)?;
    report.config = serde_json::json!({ "fixture": "planted", "seed": seed, "planted": config });
    Ok(Fixture { name: FixtureName::Planted, seed, kb, queries, report: Some(report) })
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<(), FixtureError> {
    let err = |source| FixtureError::Io { path: path.display().to_string(), source };
    let mut w = BufWriter::new(fs::File::create(path).map_err(err)?);
    f(&mut w).and_then(|_| w.flush()).map_err(err)
}

/// Writes `{train,dev,test}.txt` triples, `queries/{train,dev,test}.jsonl`
/// and, for sampled fixtures, `generation_report.json`.
pub fn write_fixture(fixture: &Fixture, dir: &Path) -> Result<(), FixtureError> {
    let qdir = dir.join("queries");
    fs::create_dir_all(&qdir).map_err(|source| FixtureError::Io { path: qdir.display().to_string(), source })?;
    for s in Split::ALL {
        write_file(&dir.join(format!("{s}.txt")), |w| fixture.kb.write_triples(s, w))?;
        write_file(&qdir.join(format!("{s}.jsonl")), |w| write_queries(&fixture.kb, fixture.queries.get(s), w))?;
    }
    if let Some(report) = &fixture.report {
        write_file(&dir.join("generation_report.json"), |w| {
            serde_json::to_writer_pretty(&mut *w, report).map_err(io::Error::other)?;
            writeln!(w)
        })?;
    }
    Ok(())
}
