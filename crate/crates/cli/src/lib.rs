//! `pmsys` command-line front end.
//!
//! Exit codes: 0 success (including `--help`), 1 invalid invocation or
//! input, 2 failure while running.

mod commands;
mod render;

use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, missing or malformed inputs.
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub(crate) fn invalid(msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(msg.to_string())
}

pub(crate) fn failed(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "pmsys", version, about = "Affect, status and behaviour analytics pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Print machine-readable JSON on stdout instead of a table
    #[arg(long, global = true)]
    pub json: bool,

    /// Worker threads for data-parallel stages (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ForestArgs {
    /// Number of trees
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    /// Features tried per split (default: ceil(sqrt(M)))
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub min_leaf: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Word-category profile of each post (or of --text)
    AnalyzeText {
        /// Posts table (CSV or JSONL)
        #[arg(long, required_unless_present = "text")]
        input: Option<PathBuf>,
        #[arg(long, conflicts_with = "input")]
        text: Option<String>,
        /// Lexicon file (default: bundled demo lexicon)
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Personality traits from questionnaire answers, or from text with --trait-model
    ScoreTraits {
        /// Questionnaire responses table, or posts table with --trait-model
        #[arg(long)]
        input: PathBuf,
        /// Questionnaire definition (default: bundled 50-item inventory)
        #[arg(long, conflicts_with = "trait_model")]
        questionnaire: Option<PathBuf>,
        /// Linear trait coefficients; switches to text scoring
        #[arg(long)]
        trait_model: Option<PathBuf>,
        /// Lexicon for text scoring (default: bundled demo lexicon)
        #[arg(long, requires = "trait_model")]
        lexicon: Option<PathBuf>,
        /// Extra per-user features for text scoring: CSV with a user_ref column
        #[arg(long, requires = "trait_model")]
        extra_features: Option<PathBuf>,
        /// Traits table (questionnaire mode) or JSON (text mode)
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Five-emotion vector per post and per user
    ScoreEmotions {
        #[arg(long)]
        input: PathBuf,
        /// Emotion lexicon with categories anger, disgust, fear, joy, sadness
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train naive Bayes on a labeled corpus; report holdout accuracy
    Sentiment {
        /// CSV with text,label (pos/neg)
        #[arg(long)]
        input: PathBuf,
        /// Posts to classify with the model trained on the whole corpus
        #[arg(long)]
        classify: Option<PathBuf>,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Label fixed time windows as Idle, Slow, Down or Error
    LabelStatus {
        /// Posts table
        #[arg(long)]
        input: PathBuf,
        /// Response-time samples table
        #[arg(long)]
        responses: Option<PathBuf>,
        /// Keyword rules (default: built-in rules)
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        window_mins: i64,
        /// Events table
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Link social profiles to system users
    MatchUsers {
        /// Posts table (username mentions)
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        users: PathBuf,
        /// Minimum unique score for a basic-info match
        #[arg(long)]
        match_threshold: Option<f64>,
        /// Minimum score for a candidate proposal
        #[arg(long)]
        candidate_threshold: Option<f64>,
        /// Candidates proposed per profile
        #[arg(long)]
        k: Option<usize>,
        /// JSON report
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Behaviour class per user timeline, and stage of each post
    SegmentTimeline {
        /// Timelines table
        #[arg(long)]
        input: PathBuf,
        /// Call opening time (RFC 3339)
        #[arg(long)]
        open: String,
        #[arg(long)]
        close: String,
        /// End of the extension period (default: --close)
        #[arg(long)]
        extension: Option<String>,
        /// Posts whose user_ref is a user id get a stage
        #[arg(long)]
        posts: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Correlation, regression and screening statistics over CSV columns
    Stats {
        /// Numeric CSV with a header row
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        test: StatTest,
        /// Column(s): one for correlations, comma list for ols/vif/mahalanobis
        #[arg(long)]
        x: String,
        /// Response column (correlations, partial, ols)
        #[arg(long)]
        y: Option<String>,
        /// Control columns for partial correlation
        #[arg(long)]
        controls: Option<String>,
        /// Critical squared distance for mahalanobis
        #[arg(long)]
        critical: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Join posts, status events, users and traits into feature rows
    ExtractFeatures {
        /// Posts table
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        users: PathBuf,
        #[arg(long)]
        traits: PathBuf,
        /// Social profiles; when given, posts are linked through matching
        #[arg(long)]
        profiles: Option<PathBuf>,
        /// Emotion lexicon (default: bundled)
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Comma-separated feature names
        #[arg(long)]
        schema: Option<String>,
        /// Feature table
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a random forest on a feature table
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        schema: Option<String>,
        #[command(flatten)]
        forest: ForestArgs,
        /// Model file
        #[arg(long)]
        output: PathBuf,
    },
    /// Predict statuses for feature rows
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// CSV of predictions
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a model on labeled feature rows
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// JSON report
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// k-fold cross-validation of the forest
    CrossValidate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        schema: Option<String>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[command(flatten)]
        forest: ForestArgs,
        /// JSON report
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the verification experiment service
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Append-only session log
        #[arg(long)]
        store: Option<PathBuf>,
        /// Model used to score exports
        #[arg(long)]
        model: Option<PathBuf>,
        /// Built UI bundle to serve at /
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long)]
        questionnaire: Option<PathBuf>,
        #[arg(long, default_value_t = 10.5)]
        slow_secs: f64,
        #[arg(long, default_value_t = 20.0)]
        down_secs: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum StatTest {
    Kendall,
    Pearson,
    Spearman,
    Partial,
    Ols,
    Vif,
    Mahalanobis,
}

/// Rendered result of a subcommand.
pub struct Outcome {
    pub json: serde_json::Value,
    pub text: String,
}

pub(crate) fn require_file(path: &Path) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(invalid(format!("input file not found: {}", path.display())));
    }
    Ok(())
}

/// Runs one subcommand. Help and version output count as success.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(out) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&out.json).expect("json value"));
            } else if !out.text.is_empty() {
                print!("{}", out.text);
                if !out.text.ends_with('\n') {
                    println!();
                }
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    if cli.threads == Some(0) {
        return Err(invalid("--threads must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    if let Some(n) = cli.threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(failed)?;
        return pool.install(|| commands::dispatch(&cli.command));
    }
    #[cfg(not(feature = "parallel"))]
    if cli.threads.is_some_and(|n| n > 1) {
        log::warn!("built without the parallel feature; --threads is ignored");
    }
    commands::dispatch(&cli.command)
}
