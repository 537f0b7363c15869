use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use icarfish::dataset::Schema;
use icarfish::pipeline::{self, PipelineConfig, ScoreOptions};

/// Leave-many-out feature selection for clickbait scoring.
///
/// Settings come from, in increasing precedence: built-in defaults, the
/// `--config` TOML file, ICARFISH_* environment variables, and flags.
#[derive(Parser)]
#[command(name = "icarfish", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, env = "ICARFISH_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed for every random choice.
    #[arg(long, global = true, env = "ICARFISH_SEED")]
    seed: Option<u64>,
    /// Worker threads for LMO runs and subset evaluation.
    #[arg(long, global = true, env = "ICARFISH_WORKERS")]
    workers: Option<usize>,
    #[arg(long, global = true, env = "ICARFISH_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    /// Training corpus.
    #[arg(long, global = true, env = "ICARFISH_TRAIN")]
    train: Option<PathBuf>,
    /// Resources directory (abbreviations, lexicon, word lists).
    #[arg(long, global = true, env = "ICARFISH_RESOURCES")]
    resources: Option<PathBuf>,
    /// Corpus layout: challenge_jsonl or simple_jsonl.
    #[arg(long, global = true, value_parser = parse_schema)]
    schema: Option<Schema>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary and cache the training feature matrix.
    Extract,
    /// Run leave-many-out scoring.
    Score {
        /// Allow jobs above the configured compute budget.
        #[arg(long)]
        budget_override: bool,
        /// Record failed runs and continue without them.
        #[arg(long)]
        keep_going: bool,
        /// Coverage target r·(n−m)/n.
        #[arg(long)]
        coverage: Option<f64>,
        /// Minimum subset size m.
        #[arg(long)]
        min_subset: Option<usize>,
        /// Number of runs r.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Evaluate top-ranked subsets and store the best one with its model.
    Sweep,
    /// Score an unseen corpus into challenge-format results.jsonl.
    Predict {
        /// Instances to score.
        instances: PathBuf,
        /// Output file (default: <output-dir>/results.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the high-impact feature report.
    Report,
}

fn parse_schema(s: &str) -> std::result::Result<Schema, String> {
    match s {
        "challenge_jsonl" => Ok(Schema::ChallengeJsonl),
        "simple_jsonl" => Ok(Schema::SimpleJsonl),
        other => Err(format!("unknown schema {other:?} (challenge_jsonl | simple_jsonl)")),
    }
}

fn load_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::from_toml_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = Some(s);
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    if let Some(d) = &g.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(t) = &g.train {
        cfg.train = Some(t.clone());
    }
    if let Some(r) = &g.resources {
        cfg.resources = r.clone();
    }
    if let Some(s) = g.schema {
        cfg.schema = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.global)?;
    let seed = cfg.seed().ok();
    match cli.command {
        Command::Extract => {
            let s = pipeline::cmd_extract(&cfg).context("extract failed")?;
            if s.up_to_date {
                println!("cache is up to date (no changes)");
            }
            println!("instances\t{}", s.rows);
            for (cat, n) in &s.category_counts {
                println!("{cat}\t{n}");
            }
            println!("total\t{}", s.total);
            println!("vocabulary_hash\t{}", s.vocabulary_hash);
            println!("matrix_hash\t{}", s.matrix_hash);
        }
        Command::Score {
            budget_override,
            keep_going,
            coverage,
            min_subset,
            runs,
        } => {
            if let Some(c) = coverage {
                cfg.lmo.coverage = c;
            }
            if min_subset.is_some() {
                cfg.lmo.m = min_subset;
            }
            if runs.is_some() {
                cfg.lmo.r = runs;
            }
            let s = pipeline::cmd_score(
                &cfg,
                ScoreOptions {
                    budget_override,
                    keep_going,
                },
            )
            .context("score failed")?;
            let c = s.config;
            println!("master_seed\t{}", c.master_seed);
            println!("n\t{}\nm\t{}\nr\t{}", c.n, c.m, c.r);
            println!("removals_per_run\t{}", c.removals_per_run());
            println!("fits\t{}", c.fit_count());
            println!("expected_coverage\t{:.3}", c.coverage());
            println!("mean_removals_per_feature\t{:.3}\t(reference: about 26 at 10^6 fits)", s.mean_removals);
            println!("never_removed\t{}", s.never_removed);
            if s.resumed_runs > 0 {
                println!("resumed_runs\t{}", s.resumed_runs);
            }
            for (run, msg) in &s.failed_runs {
                println!("failed_run\t{run}\t{msg}");
            }
        }
        Command::Sweep => {
            let s = pipeline::cmd_sweep(&cfg).context("sweep failed")?;
            println!("fraction\tsubset_size\tvalidation_mse");
            for e in &s.evaluations {
                println!("{}\t{}\t{:.6}", e.retained_fraction, e.subset_size, e.validation_mse);
            }
            println!(
                "best\t{}\t{}\t{:.6}\t(full set {:.6}, {:+.2}%)",
                s.best.retained_fraction,
                s.best.subset_size,
                s.best.validation_mse,
                s.full.validation_mse,
                100.0 * (s.best.validation_mse - s.full.validation_mse) / s.full.validation_mse
            );
        }
        Command::Predict { instances, out } => {
            let out = out.unwrap_or_else(|| cfg.out("results.jsonl"));
            let scores = pipeline::cmd_predict(&cfg, &instances, cfg.schema, &out).context("predict failed")?;
            println!("wrote {} predictions to {}", scores.len(), out.display());
        }
        Command::Report => {
            let s = pipeline::cmd_report(&cfg).context("report failed")?;
            println!("category\tpositive\tnegative");
            for (cat, (p, n)) in &s.per_category {
                println!("{cat}\t{p}\t{n}");
            }
            println!("reported\t{}", s.reported);
            println!("negative_score_fraction\t{:.3}", s.negative_fraction);
        }
    }
    if let Some(seed) = seed {
        log::debug!("master seed {seed}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
