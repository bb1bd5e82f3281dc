mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{DataSection, FileConfig};
use kbregex::dataset::{SplitTargets, TemplateSet};
use kbregex::eval::EvalOptions;
use kbregex::fixtures::FixtureName;
use kbregex::kb::{GraphSelector, Split};
use kbregex::model::ModelKind;
use kbregex::pipeline::{
    cmd_eval, cmd_fixture, cmd_gen, cmd_oracle, cmd_train, query_path, EvalRunConfig, GenConfig, OracleMode,
    TrainRunConfig, TriplePaths, CHECKPOINT_FILE,
};
use kbregex::regex::Variant;
use kbregex::train::{Sampling, TrainConfig};

/// Regex queries over incomplete knowledge bases.
#[derive(Debug, Parser)]
#[command(name = "kbregex", version)]
struct Cli {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a regex-query dataset from split triples.
    Gen(GenArgs),
    /// Print the answers of one query, one entity per line.
    Oracle(OracleArgs),
    /// Train a model (single-hop stage, then regex stage).
    Train(Box<TrainArgs>),
    /// Rank a query file against a checkpoint.
    Eval(EvalArgs),
    /// Write a synthetic knowledge base with queries.
    Fixture(FixtureArgs),
}

#[derive(Debug, Default, Args)]
struct DataArgs {
    /// Directory holding train.txt, dev.txt, test.txt and queries/.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    train_triples: Option<PathBuf>,
    #[arg(long)]
    dev_triples: Option<PathBuf>,
    #[arg(long)]
    test_triples: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CommonArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory [default: $KBREGEX_OUT, else ./kbregex-out].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: CommonArgs,
    /// fb15k-regex or wiki100-regex.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    queries_per_template: Option<usize>,
    #[arg(long)]
    max_answers: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    attempt_factor: Option<usize>,
    /// Per-template cap on train queries.
    #[arg(long)]
    train_cap: Option<usize>,
    #[arg(long)]
    dev_cap: Option<usize>,
    #[arg(long)]
    test_cap: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GraphArg {
    Train,
    TrainDev,
    Full,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    data: DataArgs,
    head: String,
    regex: String,
    /// Only follow paths of at most this many relations.
    #[arg(long)]
    capped: Option<usize>,
    #[arg(long, value_enum, default_value = "full")]
    graph: GraphArg,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    train_queries: Option<PathBuf>,
    #[arg(long)]
    dev_queries: Option<PathBuf>,
    /// fb15k or wiki100 defaults.
    #[arg(long)]
    preset: Option<String>,
    /// rotate-box, rotate or query2box.
    #[arg(long)]
    model: Option<String>,
    /// baseline, free-agg, free-deepsets, proj-agg or comp.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    offset_init: Option<f64>,
    #[arg(long)]
    max_branches: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    single_hop_lr: Option<f64>,
    #[arg(long)]
    single_hop_epochs: Option<usize>,
    #[arg(long)]
    regex_lr: Option<f64>,
    #[arg(long)]
    regex_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Self-adversarial temperature for single-hop training; 0 means uniform.
    #[arg(long)]
    adversarial_temperature: Option<f64>,
    #[arg(long)]
    dev_limit: Option<usize>,
    /// Print one line per epoch.
    #[arg(long)]
    verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AnswerableBy {
    /// Every query; ones this variant cannot embed rank at infinity.
    Variant,
    /// Only queries that every variant can embed.
    All,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: CommonArgs,
    /// Query file [default: <data>/queries/test.jsonl].
    #[arg(long)]
    queries: Option<PathBuf>,
    /// [default: <out>/model.ckpt]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Defaults to the variant the checkpoint was trained with.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long, value_enum)]
    types_answerable_by: Option<AnswerableBy>,
    /// Leave infinite ranks out of the metrics instead of counting them as 0.
    #[arg(long)]
    exclude_infinite: bool,
    /// File-name prefix of the report.
    #[arg(long)]
    tag: Option<String>,
}

#[derive(Debug, Args)]
struct FixtureArgs {
    /// chain, cycle, hierarchy, symmetric or planted.
    name: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory [default: $KBREGEX_OUT/<name>, else ./kbregex-out/<name>].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_out() -> PathBuf {
    std::env::var_os("KBREGEX_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("kbregex-out"))
}

fn parse_named<T: std::str::FromStr>(what: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| anyhow!("{what}: {e}"))
}

struct Resolved {
    data: DataSection,
    seed: u64,
    workers: usize,
    out: PathBuf,
}

fn resolve(file: &FileConfig, data: &DataArgs, common: Option<&CommonArgs>) -> Resolved {
    let flags = DataSection {
        dir: data.data.clone(),
        train: data.train_triples.clone(),
        dev: data.dev_triples.clone(),
        test: data.test_triples.clone(),
        ..Default::default()
    };
    let seed = common.and_then(|c| c.seed).or(file.seed).unwrap_or(0);
    let workers = common.and_then(|c| c.workers).or(file.workers).unwrap_or(1);
    let out = common.and_then(|c| c.out.clone()).or_else(|| file.out.clone()).unwrap_or_else(default_out);
    Resolved { data: file.data.overridden_by(&flags), seed, workers, out }
}

fn triple_paths(data: &DataSection) -> Result<TriplePaths> {
    let from_dir = data.dir.as_deref().map(TriplePaths::in_dir);
    let train = data
        .train
        .clone()
        .or_else(|| from_dir.as_ref().map(|t| t.train.clone()))
        .ok_or_else(|| anyhow!("no training triples: pass --data DIR or --train-triples FILE"))?;
    Ok(TriplePaths {
        train,
        dev: data.dev.clone().or_else(|| from_dir.as_ref().and_then(|t| t.dev.clone())),
        test: data.test.clone().or_else(|| from_dir.as_ref().and_then(|t| t.test.clone())),
    })
}

fn queries_for(data: &DataSection, explicit: &Option<PathBuf>, split: Split) -> Option<PathBuf> {
    explicit.clone().or_else(|| data.dir.as_deref().map(|d| query_path(d, split)).filter(|p| p.is_file()))
}

fn run_gen(file: &FileConfig, args: &GenArgs) -> Result<()> {
    let r = resolve(file, &args.data, Some(&args.common));
    let g = &file.gen;
    let dataset = args.dataset.clone().or_else(|| g.dataset.clone()).unwrap_or_else(|| "fb15k-regex".into());
    let dataset: TemplateSet = parse_named("dataset", &dataset)?;
    let mut cfg = GenConfig::new(triple_paths(&r.data)?, dataset, r.out);
    cfg.seed = r.seed;
    cfg.workers = r.workers;
    cfg.queries_per_template = args.queries_per_template.or(g.queries_per_template).unwrap_or(cfg.queries_per_template);
    cfg.max_answers = args.max_answers.or(g.max_answers).unwrap_or(cfg.max_answers);
    cfg.max_len = args.max_len.or(g.max_len).unwrap_or(cfg.max_len);
    cfg.attempt_factor = args.attempt_factor.or(g.attempt_factor).unwrap_or(cfg.attempt_factor);
    cfg.split_targets = SplitTargets {
        train: args.train_cap.or(g.train_cap),
        dev: args.dev_cap.or(g.dev_cap),
        test: args.test_cap.or(g.test_cap),
    };
    let report = cmd_gen(&cfg)?;
    for t in &report.templates {
        println!("{:16} {:>6} / {:<6} attempts {}", t.template, t.generated, t.target, t.attempts);
    }
    for (split, per) in &report.splits {
        let q: usize = per.values().map(|c| c.queries).sum();
        let p: usize = per.values().map(|c| c.pairs).sum();
        println!("{split}: {q} queries, {p} pairs");
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {}", cfg.out_dir.display());
    Ok(())
}

fn run_oracle(file: &FileConfig, args: &OracleArgs) -> Result<()> {
    let r = resolve(file, &args.data, None);
    let graph = match args.graph {
        GraphArg::Train => GraphSelector::Train,
        GraphArg::TrainDev => GraphSelector::TrainDev,
        GraphArg::Full => GraphSelector::Full,
    };
    let mode = args.capped.map_or(OracleMode::Exact, OracleMode::Capped);
    for name in cmd_oracle(&triple_paths(&r.data)?, graph, &args.head, &args.regex, mode)? {
        println!("{name}");
    }
    Ok(())
}

fn train_config(file: &FileConfig, args: &TrainArgs, seed: u64, workers: usize) -> Result<TrainConfig> {
    let t = &file.train;
    let kind: ModelKind = parse_named("model", args.model.as_deref().or(t.model.as_deref()).unwrap_or("rotate-box"))?;
    let variant: Variant = parse_named("variant", args.variant.as_deref().or(t.variant.as_deref()).unwrap_or("comp"))?;
    let mut c = match args.preset.as_deref().or(t.preset.as_deref()).unwrap_or("fb15k") {
        "fb15k" => TrainConfig::fb15k(kind, variant),
        "wiki100" => TrainConfig::wiki100(kind, variant),
        other => bail!("preset: unknown preset {other:?} (expected fb15k or wiki100)"),
    };
    macro_rules! set {
        ($field:expr, $name:ident) => {
            if let Some(v) = args.$name.or(t.$name) {
                $field = v;
            }
        };
    }
    set!(c.model.dim, dim);
    set!(c.model.gamma, gamma);
    set!(c.model.alpha, alpha);
    set!(c.model.offset_init, offset_init);
    set!(c.model.max_branches, max_branches);
    set!(c.batch_size, batch_size);
    set!(c.negatives, negatives);
    set!(c.single_hop.lr, single_hop_lr);
    set!(c.single_hop.epochs, single_hop_epochs);
    set!(c.regex.lr, regex_lr);
    set!(c.regex.epochs, regex_epochs);
    set!(c.patience, patience);
    set!(c.eval_every, eval_every);
    if let Some(temp) = args.adversarial_temperature.or(t.adversarial_temperature) {
        c.single_hop_sampling =
            if temp == 0.0 { Sampling::Uniform } else { Sampling::SelfAdversarial { temperature: temp } };
    }
    c.dev_limit = args.dev_limit.or(t.dev_limit).or(c.dev_limit);
    c.seed = seed;
    c.workers = workers;
    Ok(c)
}

fn run_train(file: &FileConfig, args: &TrainArgs) -> Result<()> {
    let r = resolve(file, &args.data, Some(&args.common));
    let train = train_config(file, args, r.seed, r.workers)?;
    let cfg = TrainRunConfig {
        triples: triple_paths(&r.data)?,
        train_queries: queries_for(&r.data, &args.train_queries.clone().or(r.data.train_queries.clone()), Split::Train),
        dev_queries: queries_for(&r.data, &args.dev_queries.clone().or(r.data.dev_queries.clone()), Split::Dev),
        train,
        out_dir: r.out,
    };
    let verbose = args.verbose;
    let report = cmd_train(&cfg, &mut |e| {
        if verbose {
            let dev = e.dev_mrr.map(|m| format!(" dev MRR {m:.4}")).unwrap_or_default();
            eprintln!("{} epoch {:>4} loss {:.5}{dev} ({} ms)", e.stage, e.epoch, e.mean_loss, e.wall_ms);
        }
    })?;
    for stage in std::iter::once(&report.single_hop).chain(report.regex.as_ref()) {
        println!(
            "{}: {} epochs, best dev MRR {} at epoch {}{}",
            stage.stage,
            stage.epochs_run,
            stage.best_dev_mrr.map_or("-".into(), |m| format!("{m:.4}")),
            stage.best_epoch.map_or("-".into(), |e| e.to_string()),
            if stage.skipped_queries > 0 { format!(", {} queries skipped", stage.skipped_queries) } else { String::new() },
        );
    }
    let fmt = |m: Option<f64>| m.map_or("-".into(), |m| format!("{m:.4}"));
    println!(
        "single-hop test MRR: {} before regex training, {} after",
        fmt(report.single_hop_test_mrr_before_regex),
        fmt(report.single_hop_test_mrr_after_regex)
    );
    println!("wrote {}", cfg.out_dir.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn run_eval(file: &FileConfig, args: &EvalArgs) -> Result<()> {
    let r = resolve(file, &args.data, Some(&args.common));
    let e = &file.eval;
    let queries = args
        .queries
        .clone()
        .or_else(|| r.data.test_queries.clone())
        .or_else(|| r.data.dir.as_deref().map(|d| query_path(d, Split::Test)))
        .ok_or_else(|| anyhow!("no query file: pass --queries FILE or --data DIR"))?;
    let variant = args.variant.as_deref().or(e.variant.as_deref()).map(|v| parse_named::<Variant>("variant", v)).transpose()?;
    let by = match (args.types_answerable_by, e.types_answerable_by.as_deref()) {
        (Some(b), _) => b,
        (None, Some(s)) => AnswerableBy::from_str(s, true).map_err(|m| anyhow!("types_answerable_by: {m}"))?,
        (None, None) => AnswerableBy::Variant,
    };
    let cfg = EvalRunConfig {
        triples: triple_paths(&r.data)?,
        queries,
        checkpoint: args.checkpoint.clone().or_else(|| e.checkpoint.clone()).unwrap_or_else(|| r.out.join(CHECKPOINT_FILE)),
        variant,
        options: EvalOptions {
            answerable_by_all: by == AnswerableBy::All,
            exclude_infinite: args.exclude_infinite || e.exclude_infinite.unwrap_or(false),
            workers: r.workers,
        },
        out_dir: r.out,
        tag: args.tag.clone().or_else(|| e.tag.clone()).unwrap_or_else(|| "eval".into()),
    };
    let report = cmd_eval(&cfg)?;
    println!("{:16} {:>7} {:>7} {:>7} {:>7} {:>6}", "type", "MRR", "H@1", "H@5", "H@10", "pairs");
    let row = |name: &str, m: &kbregex::eval::Metrics| {
        println!("{name:16} {:7.4} {:7.4} {:7.4} {:7.4} {:>6}", m.mrr, m.hits1, m.hits5, m.hits10, m.count)
    };
    for (t, m) in &report.per_type {
        row(t, m);
    }
    row("overall", &report.overall);
    if report.unanswerable > 0 {
        println!("{} of {} pairs unanswerable by {}", report.unanswerable, report.total_pairs, report.variant);
    }
    println!("wrote {}", cfg.out_dir.join(format!("{}_report.json", cfg.tag)).display());
    Ok(())
}

fn run_fixture(args: &FixtureArgs) -> Result<()> {
    let name: FixtureName = parse_named("fixture", &args.name)?;
    let out = args.out.clone().unwrap_or_else(|| default_out().join(name.as_str()));
    let f = cmd_fixture(name, args.seed, &out)?;
    let count = |s| f.kb.triples(s).len();
    println!(
        "{name}: {} entities, {} relations, {}/{}/{} triples",
        f.kb.num_entities(),
        f.kb.num_relations(),
        count(Split::Train),
        count(Split::Dev),
        count(Split::Test)
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Gen(a) => run_gen(&file, a),
        Command::Oracle(a) => run_oracle(&file, a),
        Command::Train(a) => run_train(&file, a),
        Command::Eval(a) => run_eval(&file, a),
        Command::Fixture(a) => run_fixture(a),
    }
    .with_context(|| format!("{} failed", subcommand_name(&cli.command)))
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Gen(_) => "gen",
        Command::Oracle(_) => "oracle",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Fixture(_) => "fixture",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
