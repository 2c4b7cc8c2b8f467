//! Command-line surface tying the pipeline together:
//! `generate` synthetic raw data, `prepare` a corpus, `train` a model, then
//! `eval` / `sweep` / `attention` against a checkpoint.
//!
//! Every subcommand writes a `manifest.txt` under `--out` before doing any
//! work, so a run can be reproduced from its manifest alone. Exit codes:
//! 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::data::{self, ingest, store, SplitConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{self, SweepAxis, DEFAULT_KS};
use crate::model::{Checkpoint, ModelConfig, RecurrentCell, Variant};
use crate::train::{self, TrainConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "pkgrec",
    version,
    about = "Session-based package recommendation over social and dependency graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Write a synthetic raw dataset (events, follows, dependencies).
    Generate(GenerateArgs),
    /// Ingest raw files, segment sessions, filter, split, and store a corpus.
    Prepare(PrepareArgs),
    /// Train a model on a prepared corpus and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a stored split and report HR@K / NDCG@K.
    Eval(EvalArgs),
    /// Retrain and evaluate across one hyperparameter axis.
    Sweep(SweepArgs),
    /// Export attention records and their variance analytics.
    Attention(AttentionArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Output directory for events.tsv, social.tsv, dependency.tsv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub developers: usize,
    #[arg(long, default_value_t = 40)]
    pub packages: usize,
    #[arg(long, default_value_t = 3)]
    pub topics: usize,
    #[arg(long, default_value_t = 12)]
    pub weeks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub avg_friends: usize,
    #[arg(long, default_value_t = 0.85)]
    pub session_rate: f64,
    #[arg(long, default_value_t = 3)]
    pub min_items: usize,
    #[arg(long, default_value_t = 8)]
    pub max_items: usize,
    /// Probability an item copies from a friend's previous-week session.
    #[arg(long, default_value_t = 0.3)]
    pub p_social: f64,
    /// Probability an item follows a dependency of an in-session package.
    #[arg(long, default_value_t = 0.3)]
    pub p_dep: f64,
    #[arg(long, default_value_t = 0.05)]
    pub p_noise: f64,
    #[arg(long, default_value_t = 0.1)]
    pub topic_drift: f64,
    /// Within-cluster popularity exponent for topic draws (0 = uniform).
    #[arg(long, default_value_t = 0.0)]
    pub popularity_skew: f64,
}

#[derive(Args)]
pub struct PrepareArgs {
    /// Watch events file: developer<TAB>package<TAB>unix_timestamp.
    #[arg(long)]
    pub events: PathBuf,
    /// Follow edges file: follower<TAB>followee.
    #[arg(long)]
    pub social: PathBuf,
    /// Dependency edges file: package<TAB>dependency.
    #[arg(long)]
    pub deps: PathBuf,
    /// Output corpus directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Minimum friends (outgoing follows) to keep a developer.
    #[arg(long = "m", default_value_t = 0)]
    pub min_friends: usize,
    /// Minimum followers (incoming follows) to keep a developer.
    #[arg(long = "n", default_value_t = 0)]
    pub min_followers: usize,
    /// Minimum distinct watchers to keep a package.
    #[arg(long = "k", default_value_t = 0)]
    pub min_watchers: usize,
    /// Session length in weeks.
    #[arg(long, default_value_t = 1)]
    pub lifespan: u64,
    #[command(flatten)]
    pub split: SplitArgs,
}

/// Trailing-window split controls, shared by prepare and the lifespan sweep.
#[derive(Args, Clone)]
pub struct SplitArgs {
    /// Width of the trailing window pooled for validation/test.
    #[arg(long, default_value_t = 104)]
    pub reserve_weeks: u64,
    #[arg(long, default_value_t = 0.5)]
    pub valid_frac: f64,
    #[arg(long, default_value_t = 0.5)]
    pub test_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

impl SplitArgs {
    fn to_config(&self) -> SplitConfig {
        SplitConfig {
            reserve_weeks: self.reserve_weeks,
            valid_frac: self.valid_frac,
            test_frac: self.test_frac,
            seed: self.split_seed,
        }
    }
}

/// Model and optimizer knobs. Precedence: defaults < `--config` file
/// (flat key=value lines) < explicit flags.
#[derive(Args, Default, Clone)]
pub struct KnobArgs {
    /// Flat key=value config file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// One of: full, social-only, dependency-only, dynamic-only, static-only.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// First-layer social neighborhood sample budget (0 disables the side).
    #[arg(long)]
    pub social_budget: Option<usize>,
    /// First-layer dependency neighborhood sample budget (0 disables).
    #[arg(long)]
    pub dependency_budget: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Recurrent cell: lstm or tanh.
    #[arg(long)]
    pub cell: Option<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Prepared corpus directory (from `prepare`).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory for checkpoint.txt and train.log.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub knobs: KnobArgs,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Which stored split to score: train, valid, or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Comma-separated K values.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    pub ks: Vec<usize>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Axis to vary: beta (social budget), gamma (dependency budget), or
    /// lifespan (session-merge factor).
    #[arg(long)]
    pub axis: String,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
    /// Comma-separated K values.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    pub ks: Vec<usize>,
    #[command(flatten)]
    pub knobs: KnobArgs,
    /// Must match the values used at prepare time so the lifespan axis
    /// re-splits consistently.
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Args)]
pub struct AttentionArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Resolved model/training knobs.
#[derive(Debug, Default, Clone, PartialEq)]
struct Knobs {
    embed_dim: Option<usize>,
    hidden_dim: Option<usize>,
    layers: Option<usize>,
    social_budget: Option<usize>,
    dependency_budget: Option<usize>,
    dropout: Option<f64>,
    cell: Option<RecurrentCell>,
    variant: Option<Variant>,
    seed: Option<u64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
}

impl Knobs {
    fn from_file(path: &Path) -> Result<Knobs> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut knobs = Knobs::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |reason: String| Error::Malformed {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| malformed("expected key=value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| malformed(format!("bad {what} value {value:?}"));
            match key {
                "embed_dim" => knobs.embed_dim = Some(value.parse().map_err(|_| bad(key))?),
                "hidden_dim" => knobs.hidden_dim = Some(value.parse().map_err(|_| bad(key))?),
                "layers" => knobs.layers = Some(value.parse().map_err(|_| bad(key))?),
                "social_budget" => {
                    knobs.social_budget = Some(value.parse().map_err(|_| bad(key))?)
                }
                "dependency_budget" => {
                    knobs.dependency_budget = Some(value.parse().map_err(|_| bad(key))?)
                }
                "dropout" => knobs.dropout = Some(value.parse().map_err(|_| bad(key))?),
                "cell" => {
                    knobs.cell = Some(RecurrentCell::parse(value).ok_or_else(|| bad(key))?)
                }
                "variant" => {
                    knobs.variant = Some(Variant::parse(value).ok_or_else(|| bad(key))?)
                }
                "seed" => knobs.seed = Some(value.parse().map_err(|_| bad(key))?),
                "epochs" => knobs.epochs = Some(value.parse().map_err(|_| bad(key))?),
                "batch_size" => knobs.batch_size = Some(value.parse().map_err(|_| bad(key))?),
                "lr" => knobs.lr = Some(value.parse().map_err(|_| bad(key))?),
                other => return Err(malformed(format!("unknown key {other:?}"))),
            }
        }
        Ok(knobs)
    }

    fn from_args(args: &KnobArgs) -> Result<Knobs> {
        let variant = match &args.variant {
            Some(name) => Some(Variant::parse(name).ok_or_else(|| {
                Error::Usage(format!(
                    "unknown variant {name:?}; expected one of full, social-only, \
                     dependency-only, dynamic-only, static-only"
                ))
            })?),
            None => None,
        };
        let cell = match &args.cell {
            Some(name) => Some(RecurrentCell::parse(name).ok_or_else(|| {
                Error::Usage(format!("unknown cell {name:?}; expected lstm or tanh"))
            })?),
            None => None,
        };
        Ok(Knobs {
            embed_dim: args.embed_dim,
            hidden_dim: args.hidden_dim,
            layers: args.layers,
            social_budget: args.social_budget,
            dependency_budget: args.dependency_budget,
            dropout: args.dropout,
            cell,
            variant,
            seed: args.seed,
            epochs: args.epochs,
            batch_size: args.batch_size,
            lr: args.lr,
        })
    }

    /// `other` wins wherever it is set.
    fn overlay(self, other: Knobs) -> Knobs {
        Knobs {
            embed_dim: other.embed_dim.or(self.embed_dim),
            hidden_dim: other.hidden_dim.or(self.hidden_dim),
            layers: other.layers.or(self.layers),
            social_budget: other.social_budget.or(self.social_budget),
            dependency_budget: other.dependency_budget.or(self.dependency_budget),
            dropout: other.dropout.or(self.dropout),
            cell: other.cell.or(self.cell),
            variant: other.variant.or(self.variant),
            seed: other.seed.or(self.seed),
            epochs: other.epochs.or(self.epochs),
            batch_size: other.batch_size.or(self.batch_size),
            lr: other.lr.or(self.lr),
        }
    }

    fn resolve(self) -> Result<(ModelConfig, TrainConfig, Variant)> {
        let defaults = ModelConfig::default();
        let config = ModelConfig {
            embed_dim: self.embed_dim.unwrap_or(defaults.embed_dim),
            hidden_dim: self.hidden_dim.unwrap_or(defaults.hidden_dim),
            layers: self.layers.unwrap_or(defaults.layers),
            social_budget: self.social_budget.unwrap_or(defaults.social_budget),
            dependency_budget: self
                .dependency_budget
                .unwrap_or(defaults.dependency_budget),
            dropout: self.dropout.unwrap_or(defaults.dropout),
            cell: self.cell.unwrap_or(defaults.cell),
        };
        if config.embed_dim == 0 || config.hidden_dim == 0 || config.layers == 0 {
            return Err(Error::Usage(
                "embed_dim, hidden_dim, and layers must all be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Usage(format!(
                "dropout must be in [0, 1), got {}",
                config.dropout
            )));
        }
        let tdefaults = TrainConfig::default();
        let tconfig = TrainConfig {
            epochs: self.epochs.unwrap_or(tdefaults.epochs),
            batch_size: self.batch_size.unwrap_or(tdefaults.batch_size),
            lr: self.lr.unwrap_or(tdefaults.lr),
            seed: self.seed.unwrap_or(tdefaults.seed),
        };
        if tconfig.batch_size == 0 {
            return Err(Error::Usage("batch size must be at least 1".into()));
        }
        Ok((config, tconfig, self.variant.unwrap_or(Variant::Full)))
    }
}

fn resolve_knobs(args: &KnobArgs) -> Result<(ModelConfig, TrainConfig, Variant)> {
    let mut knobs = Knobs::default();
    if let Some(path) = &args.config {
        knobs = knobs.overlay(Knobs::from_file(path)?);
    }
    knobs = knobs.overlay(Knobs::from_args(args)?);
    knobs.resolve()
}

/// Map an error onto the documented process exit code.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Usage(_) => 1,
        Error::Numeric { .. } => 3,
        _ => 2,
    }
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let kind = e.kind();
            let _ = e.print();
            return if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(args) => cmd_generate(args),
        Command::Prepare(args) => cmd_prepare(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Attention(args) => cmd_attention(args),
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_manifest(out: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut text = String::new();
    for (key, value) in entries {
        let _ = writeln!(text, "{key}={value}");
    }
    write_file(&out.join("manifest.txt"), &text)
}

fn knob_entries(config: &ModelConfig, tconfig: &TrainConfig, variant: Variant) -> Vec<(&'static str, String)> {
    vec![
        ("variant", variant.as_str().to_string()),
        ("embed_dim", config.embed_dim.to_string()),
        ("hidden_dim", config.hidden_dim.to_string()),
        ("layers", config.layers.to_string()),
        ("social_budget", config.social_budget.to_string()),
        ("dependency_budget", config.dependency_budget.to_string()),
        ("dropout", config.dropout.to_string()),
        ("cell", config.cell.as_str().to_string()),
        ("epochs", tconfig.epochs.to_string()),
        ("batch_size", tconfig.batch_size.to_string()),
        ("lr", tconfig.lr.to_string()),
        ("seed", tconfig.seed.to_string()),
    ]
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let config = SynthConfig {
        developers: args.developers,
        packages: args.packages,
        topics: args.topics,
        weeks: args.weeks,
        seed: args.seed,
        avg_friends: args.avg_friends,
        session_rate: args.session_rate,
        min_items: args.min_items,
        max_items: args.max_items,
        p_social: args.p_social,
        p_dep: args.p_dep,
        p_noise: args.p_noise,
        topic_drift: args.topic_drift,
        popularity_skew: args.popularity_skew,
    };
    ensure_dir(&args.out)?;
    write_manifest(
        &args.out,
        &[
            ("subcommand", "generate".to_string()),
            ("version", TOOL_VERSION.to_string()),
            ("out", args.out.display().to_string()),
            ("developers", config.developers.to_string()),
            ("packages", config.packages.to_string()),
            ("topics", config.topics.to_string()),
            ("weeks", config.weeks.to_string()),
            ("seed", config.seed.to_string()),
            ("avg_friends", config.avg_friends.to_string()),
            ("session_rate", config.session_rate.to_string()),
            ("min_items", config.min_items.to_string()),
            ("max_items", config.max_items.to_string()),
            ("p_social", config.p_social.to_string()),
            ("p_dep", config.p_dep.to_string()),
            ("p_noise", config.p_noise.to_string()),
            ("topic_drift", config.topic_drift.to_string()),
            ("popularity_skew", config.popularity_skew.to_string()),
        ],
    )?;
    let synth = data::generate(&config);
    synth.write_to(&args.out)?;
    println!(
        "wrote {} event lines, {} follow lines, {} dependency lines to {}",
        synth.events.lines().count(),
        synth.social.lines().count(),
        synth.dependency.lines().count(),
        args.out.display()
    );
    Ok(())
}

fn cmd_prepare(args: PrepareArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    let split_config = args.split.to_config();
    write_manifest(
        &args.out,
        &[
            ("subcommand", "prepare".to_string()),
            ("version", TOOL_VERSION.to_string()),
            ("events", args.events.display().to_string()),
            ("social", args.social.display().to_string()),
            ("deps", args.deps.display().to_string()),
            ("out", args.out.display().to_string()),
            ("m", args.min_friends.to_string()),
            ("n", args.min_followers.to_string()),
            ("k", args.min_watchers.to_string()),
            ("lifespan", args.lifespan.to_string()),
            ("reserve_weeks", split_config.reserve_weeks.to_string()),
            ("valid_frac", split_config.valid_frac.to_string()),
            ("test_frac", split_config.test_frac.to_string()),
            ("split_seed", split_config.seed.to_string()),
        ],
    )?;
    let raw = ingest(&args.events, &args.social, &args.deps)?;
    let (corpus, split) = data::prepare(
        &raw,
        args.lifespan,
        args.min_friends,
        args.min_followers,
        args.min_watchers,
        &split_config,
    )?;
    store::save(&args.out, &corpus, &split)?;
    let stats = corpus.stats();
    println!(
        "prepared {} developers, {} packages, {} sessions ({} train / {} valid / {} test, {} developers excluded)",
        stats.developers,
        stats.packages,
        stats.sessions,
        split.train.len(),
        split.valid.len(),
        split.test.len(),
        split.excluded_developers.len()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let (config, tconfig, variant) = resolve_knobs(&args.knobs)?;
    ensure_dir(&args.out)?;
    let mut entries = vec![
        ("subcommand", "train".to_string()),
        ("version", TOOL_VERSION.to_string()),
        ("corpus", args.corpus.display().to_string()),
        ("out", args.out.display().to_string()),
    ];
    entries.extend(knob_entries(&config, &tconfig, variant));
    write_manifest(&args.out, &entries)?;

    let (corpus, split) = store::load(&args.corpus)?;
    let log_path = args.out.join("train.log");
    let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let result = train::train(&corpus, &split, &config, variant, &tconfig, |epoch| {
        let line = epoch.line();
        println!("{line}");
        writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))
    })?;

    let checkpoint = Checkpoint {
        config,
        variant,
        seed: tconfig.seed,
        params: result.best_params,
    };
    let ckpt_path = args.out.join("checkpoint.txt");
    checkpoint.save(&ckpt_path)?;
    println!(
        "trained on {} instances; best epoch {} (valid HR@10 {:.4}); checkpoint at {}",
        result.num_instances,
        result.best_epoch,
        result.best_valid_hr10,
        ckpt_path.display()
    );
    Ok(())
}

fn split_sessions<'a>(
    split: &'a crate::data::DatasetSplit,
    which: &str,
) -> Result<&'a [crate::data::Session]> {
    match which {
        "train" => Ok(&split.train),
        "valid" => Ok(&split.valid),
        "test" => Ok(&split.test),
        other => Err(Error::Usage(format!(
            "unknown split {other:?}; expected train, valid, or test"
        ))),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    write_manifest(
        &args.out,
        &[
            ("subcommand", "eval".to_string()),
            ("version", TOOL_VERSION.to_string()),
            ("corpus", args.corpus.display().to_string()),
            ("checkpoint", args.checkpoint.display().to_string()),
            ("out", args.out.display().to_string()),
            ("split", args.split.clone()),
            (
                "ks",
                args.ks
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ],
    )?;
    let (corpus, split) = store::load(&args.corpus)?;
    let sessions = split_sessions(&split, &args.split)?;
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let report = eval::evaluate(
        &corpus,
        &checkpoint.params,
        &checkpoint.config,
        checkpoint.variant,
        sessions,
        &args.ks,
        checkpoint.seed,
    )?;
    write_file(&args.out.join("report.csv"), &report.to_csv())?;
    write_file(&args.out.join("report.txt"), &report.to_table())?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let axis = SweepAxis::parse(&args.axis).ok_or_else(|| {
        Error::Usage(format!(
            "unknown axis {:?}; expected beta, gamma, or lifespan",
            args.axis
        ))
    })?;
    let (config, tconfig, variant) = resolve_knobs(&args.knobs)?;
    ensure_dir(&args.out)?;
    let mut entries = vec![
        ("subcommand", "sweep".to_string()),
        ("version", TOOL_VERSION.to_string()),
        ("corpus", args.corpus.display().to_string()),
        ("out", args.out.display().to_string()),
        ("axis", axis.as_str().to_string()),
        (
            "values",
            args.values
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
        ),
    ];
    entries.extend(knob_entries(&config, &tconfig, variant));
    write_manifest(&args.out, &entries)?;

    let (corpus, split) = store::load(&args.corpus)?;
    let rows = eval::sweep(
        &corpus,
        &split,
        &args.split.to_config(),
        &config,
        variant,
        &tconfig,
        axis,
        &args.values,
        &args.ks,
    )?;

    let mut combined = String::from("axis,value,K,hr,ndcg,instances\n");
    for row in &rows {
        let name = format!("report_{}_{}", axis.as_str(), row.value);
        write_file(&args.out.join(format!("{name}.csv")), &row.report.to_csv())?;
        write_file(&args.out.join(format!("{name}.txt")), &row.report.to_table())?;
        for metric in &row.report.rows {
            let _ = writeln!(
                combined,
                "{},{},{},{:.4},{:.4},{}",
                axis.as_str(),
                row.value,
                metric.k,
                metric.hr,
                metric.ndcg,
                row.report.instances
            );
        }
        println!("{} = {}", axis.as_str(), row.value);
        print!("{}", row.report.to_table());
    }
    write_file(&args.out.join("sweep.csv"), &combined)?;
    Ok(())
}

fn cmd_attention(args: AttentionArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    write_manifest(
        &args.out,
        &[
            ("subcommand", "attention".to_string()),
            ("version", TOOL_VERSION.to_string()),
            ("corpus", args.corpus.display().to_string()),
            ("checkpoint", args.checkpoint.display().to_string()),
            ("out", args.out.display().to_string()),
        ],
    )?;
    let (corpus, _split) = store::load(&args.corpus)?;
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let records = eval::collect_attention(
        &corpus,
        &checkpoint.params,
        &checkpoint.config,
        checkpoint.variant,
        &corpus.sessions,
        checkpoint.seed,
    )?;
    let stats = eval::attention_stats(&records, checkpoint.config.layers);
    write_file(&args.out.join("attention.csv"), &eval::records_to_csv(&records))?;
    write_file(&args.out.join("variances.csv"), &eval::stats_to_csv(&stats))?;
    println!(
        "exported {} records covering {} developer-friend pairs",
        records.len(),
        stats.intra_session.len()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn knob_args(argv: &[&str]) -> KnobArgs {
        let mut full = vec!["pkgrec", "train", "--corpus", "c", "--out", "o"];
        full.extend_from_slice(argv);
        let cli = Cli::try_parse_from(full).unwrap();
        match cli.command {
            Command::Train(args) => args.knobs,
            _ => unreachable!(),
        }
    }

    #[test]
    fn defaults_match_documented_settings() {
        let (config, tconfig, variant) = resolve_knobs(&knob_args(&[])).unwrap();
        assert_eq!(config, ModelConfig::default());
        assert_eq!(config.embed_dim, 100);
        assert_eq!(config.hidden_dim, 100);
        assert_eq!(config.layers, 2);
        assert_eq!(config.dropout, 0.2);
        assert_eq!(tconfig.epochs, 20);
        assert_eq!(tconfig.batch_size, 200);
        assert_eq!(tconfig.lr, 0.001);
        assert_eq!(variant, Variant::Full);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(
            &path,
            "# comment\nembed_dim = 8\nhidden_dim=6\nvariant=social-only\nepochs=3\n",
        )
        .unwrap();
        let args = knob_args(&[
            "--config",
            path.to_str().unwrap(),
            "--embed-dim",
            "12",
            "--seed",
            "9",
        ]);
        let (config, tconfig, variant) = resolve_knobs(&args).unwrap();
        assert_eq!(config.embed_dim, 12, "flag beats file");
        assert_eq!(config.hidden_dim, 6, "file beats default");
        assert_eq!(config.layers, 2, "default fills the rest");
        assert_eq!(variant, Variant::SocialOnly);
        assert_eq!(tconfig.epochs, 3);
        assert_eq!(tconfig.seed, 9);
    }

    #[test]
    fn config_file_errors_name_line_and_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "embed_dim=8\nwat=1\n").unwrap();
        let err = Knobs::from_file(&path).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("wat"), "{err}");

        fs::write(&path, "embed_dim=alot\n").unwrap();
        let err = Knobs::from_file(&path).unwrap_err().to_string();
        assert!(err.contains(":1:") && err.contains("embed_dim"), "{err}");

        fs::write(&path, "just words\n").unwrap();
        assert!(Knobs::from_file(&path).is_err());
    }

    #[test]
    fn invalid_knob_values_are_usage_errors() {
        let err = resolve_knobs(&knob_args(&["--variant", "both"])).unwrap_err();
        assert_eq!(exit_code(&err), 1);
        let err = resolve_knobs(&knob_args(&["--dropout", "1.5"])).unwrap_err();
        assert_eq!(exit_code(&err), 1);
        let err = resolve_knobs(&knob_args(&["--layers", "0"])).unwrap_err();
        assert_eq!(exit_code(&err), 1);
        let err = resolve_knobs(&knob_args(&["--batch-size", "0"])).unwrap_err();
        assert_eq!(exit_code(&err), 1);
        let err = resolve_knobs(&knob_args(&["--cell", "gru"])).unwrap_err();
        assert_eq!(exit_code(&err), 1);
    }

    #[test]
    fn exit_codes_follow_error_family() {
        assert_eq!(exit_code(&Error::Usage("x".into())), 1);
        assert_eq!(exit_code(&Error::data("x")), 2);
        assert_eq!(
            exit_code(&Error::Numeric {
                epoch: 1,
                batch: 0,
                detail: "x".into()
            }),
            3
        );
    }

    #[test]
    fn eval_defaults_to_test_split_and_standard_ks() {
        let cli = Cli::try_parse_from([
            "pkgrec", "eval", "--corpus", "c", "--checkpoint", "k", "--out", "o",
        ])
        .unwrap();
        match cli.command {
            Command::Eval(args) => {
                assert_eq!(args.split, "test");
                assert_eq!(args.ks, vec![10, 20, 50]);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn sweep_values_parse_as_comma_list() {
        let cli = Cli::try_parse_from([
            "pkgrec", "sweep", "--corpus", "c", "--out", "o", "--axis", "beta",
            "--values", "0,5,10",
        ])
        .unwrap();
        match cli.command {
            Command::Sweep(args) => {
                assert_eq!(args.values, vec![0, 5, 10]);
                assert_eq!(args.axis, "beta");
            }
            _ => unreachable!(),
        }
    }
}
