//! Run configuration file.
//!
//! ```toml
//! seed = 7
//! workers = 1
//! out = "runs/planted"
//!
//! [data]
//! dir = "fixtures/planted"   # train.txt, dev.txt, test.txt, queries/*.jsonl
//! # or name the files one by one:
//! # train = "kb/train.txt"
//! # dev = "kb/dev.txt"
//! # test = "kb/test.txt"
//! # train_queries = "q/train.jsonl"
//! # dev_queries = "q/dev.jsonl"
//! # test_queries = "q/test.jsonl"
//!
//! [gen]
//! dataset = "fb15k-regex"
//! queries_per_template = 1000
//! max_answers = 50
//! max_len = 5
//! attempt_factor = 100
//! train_cap = 25000
//!
//! [train]
//! preset = "fb15k"           # or "wiki100"; the keys below override it
//! model = "rotate-box"
//! variant = "comp"
//! dim = 400
//! gamma = 24.0
//! alpha = 0.2
//! batch_size = 1024
//! negatives = 256
//! single_hop_lr = 1e-4
//! single_hop_epochs = 1000
//! regex_lr = 1e-4
//! regex_epochs = 500
//! patience = 10
//! eval_every = 5
//! adversarial_temperature = 1.0   # 0 switches to uniform weights
//!
//! [eval]
//! variant = "comp"
//! types_answerable_by = "all"     # or "variant"
//! exclude_infinite = false
//! ```
//!
//! Command-line flags override every key.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub gen: GenSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dir: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub train_queries: Option<PathBuf>,
    pub dev_queries: Option<PathBuf>,
    pub test_queries: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSection {
    pub dataset: Option<String>,
    pub queries_per_template: Option<usize>,
    pub max_answers: Option<usize>,
    pub max_len: Option<usize>,
    pub attempt_factor: Option<usize>,
    pub train_cap: Option<usize>,
    pub dev_cap: Option<usize>,
    pub test_cap: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub preset: Option<String>,
    pub model: Option<String>,
    pub variant: Option<String>,
    pub dim: Option<usize>,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub offset_init: Option<f64>,
    pub max_branches: Option<usize>,
    pub batch_size: Option<usize>,
    pub negatives: Option<usize>,
    pub single_hop_lr: Option<f64>,
    pub single_hop_epochs: Option<usize>,
    pub regex_lr: Option<f64>,
    pub regex_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub eval_every: Option<usize>,
    pub adversarial_temperature: Option<f64>,
    pub dev_limit: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub variant: Option<String>,
    pub types_answerable_by: Option<String>,
    pub exclude_infinite: Option<bool>,
    pub checkpoint: Option<PathBuf>,
    pub tag: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

impl DataSection {
    /// Fills unset fields from `other`, which takes priority.
    pub fn overridden_by(&self, other: &DataSection) -> DataSection {
        let pick = |a: &Option<PathBuf>, b: &Option<PathBuf>| b.clone().or_else(|| a.clone());
        DataSection {
            dir: pick(&self.dir, &other.dir),
            train: pick(&self.train, &other.train),
            dev: pick(&self.dev, &other.dev),
            test: pick(&self.test, &other.test),
            train_queries: pick(&self.train_queries, &other.train_queries),
            dev_queries: pick(&self.dev_queries, &other.dev_queries),
            test_queries: pick(&self.test_queries, &other.test_queries),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_example_parses() {
        let doc: String = include_str!("config.rs")
            .lines()
            .take_while(|l| l.starts_with("//!"))
            .map(|l| l.trim_start_matches("//!").strip_prefix(' ').unwrap_or(""))
            .skip_while(|l| !l.starts_with("```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("```"))
            .collect::<Vec<_>>()
            .join("\n");
        let cfg: FileConfig = toml::from_str(&doc).unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.train.gamma, Some(24.0));
        assert_eq!(cfg.eval.types_answerable_by.as_deref(), Some("all"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[train]\ngama = 3.0\n").is_err());
    }
}
