//! `searchlab` — batch frontend for the search-session toolkit.
//!
//! Stages mirror the library pipeline: `gen`, `aggregate`, `featurize`,
//! `train`, `predict`, `rerank`, `evaluate`, `report`, and `pipeline` (all of
//! them in order). Diagnostics go to stderr; data goes to files or stdout.
//! Exit status: 0 success, 1 validation/configuration error, 2 numeric error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use searchlab::aggregate::run_aggregation;
use searchlab::config::RunConfig;
use searchlab::corpus::generate_with_eval;
use searchlab::error::Error;
use searchlab::evalcv::{rerank, RerankCandidate};
use searchlab::features::{
    featurize, read_dataset_file, settings_count_from_names, write_dataset_file,
};
use searchlab::models::{train_ensemble, FittedEnsemble};
use searchlab::pipeline as stages;
use searchlab::session::EngineId;

#[derive(Parser)]
#[command(
    name = "searchlab",
    about = "Search-session outcome prediction and re-ranking toolkit",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config source plus overrides; precedence is flag > file > default.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Config file (key = value lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override any config key (repeatable), e.g. --set quota_baidu_once=24
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        for pair in &self.sets {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set expects KEY=VALUE, got '{pair}'"))
            })?;
            cfg.apply_pair(key.trim(), value.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.gen.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus calibrated to the configured quotas
    Gen {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (sessions.jsonl, catalog.jsonl, users.jsonl, corpus.meta)
        #[arg(long)]
        out: PathBuf,
        /// Also generate a disjoint evaluation session set into this file
        #[arg(long)]
        eval_out: Option<PathBuf>,
    },
    /// Map/reduce a session log into link and user statistics
    Aggregate {
        #[arg(long)]
        sessions: PathBuf,
        /// Shard count (the result is shard-invariant)
        #[arg(long, default_value_t = 4)]
        shards: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the labeled feature table
    Featurize {
        #[arg(long)]
        sessions: PathBuf,
        /// Directory holding link_stats.jsonl and user_stats.jsonl
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        users: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the preprocessing stack and the four-model ensemble
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Training dataset (featurize output)
        #[arg(long)]
        data: PathBuf,
        /// Model file to write
        #[arg(long)]
        out: PathBuf,
        /// Also run repeated cross-validation and write the report here
        #[arg(long)]
        cv_report: Option<PathBuf>,
    },
    /// Predict labels and posteriors for a dataset
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Order candidate links for one user by predicted Once-Search probability
    Rerank {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        users: PathBuf,
        /// User id the candidates are ranked for
        #[arg(long)]
        user: String,
        #[arg(long)]
        engine: String,
        /// Comma-separated candidate link ids
        #[arg(long)]
        links: String,
    },
    /// Replay sessions under model re-ranking and build the ratio reports
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Held-out sessions to replay (must be disjoint from training)
        #[arg(long)]
        sessions: PathBuf,
        /// Corpus directory (catalog, users, corpus.meta)
        #[arg(long)]
        corpus: PathBuf,
        /// Stats directory; defaults to the corpus directory
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the per-engine sample size from corpus.meta
        #[arg(long)]
        per_engine_total: Option<usize>,
    },
    /// Rebuild the comparison report from two ratio tables
    Report {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage in order into one output directory
    Pipeline {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version on stdout and errors on stderr
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_status() as u8)
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Gen { config, out, eval_out } => {
            let cfg = config.load()?;
            let (corpus, eval_sessions) = if eval_out.is_some() {
                generate_with_eval(&cfg.gen)?
            } else {
                (searchlab::corpus::generate_corpus(&cfg.gen)?, Vec::new())
            };
            stages::write_corpus_dir(&out, &corpus, &cfg)?;
            if let Some(path) = eval_out {
                searchlab::session::write_sessions_file(&path, &eval_sessions)?;
                log::info!("wrote {} evaluation sessions to {}", eval_sessions.len(), path.display());
            }
            log::info!(
                "wrote {} sessions, {} links, {} users to {}",
                corpus.sessions.len(),
                corpus.catalog.len(),
                corpus.users.len(),
                out.display()
            );
            let share = searchlab::corpus::relevant_share(&corpus, cfg.gen.relevance_threshold);
            log::info!(
                "{:.1}% of shown links clear the relevance threshold {}",
                share * 100.0,
                cfg.gen.relevance_threshold
            );
            Ok(())
        }
        Command::Aggregate { sessions, shards, out } => {
            let sessions = searchlab::session::read_sessions_file(&sessions)?;
            let stats = run_aggregation(&sessions, shards)?;
            if stats.skipped > 0 {
                log::warn!("skipped {} invalid session(s)", stats.skipped);
            }
            stages::write_stats_dir(&out, &stats)?;
            log::info!(
                "aggregated {} sessions into {} link and {} user records",
                sessions.len(),
                stats.links.len(),
                stats.users.len()
            );
            Ok(())
        }
        Command::Featurize { sessions, stats, catalog, users, out } => {
            let sessions = searchlab::session::read_sessions_file(&sessions)?;
            let stats = stages::read_stats_dir(&stats)?;
            let catalog = searchlab::corpus::read_catalog_file(&catalog)?;
            let users = searchlab::corpus::read_users_file(&users)?;
            let settings_count = users
                .first()
                .map(|u| u.settings_flags.len())
                .unwrap_or(0);
            let ds = featurize(&sessions, &stats, &catalog, &users, settings_count)?;
            write_dataset_file(&out, &ds)?;
            log::info!("wrote {} examples x {} features to {}", ds.n(), ds.p(), out.display());
            Ok(())
        }
        Command::Train { config, data, out, cv_report } => {
            let cfg = config.load()?;
            let ds = read_dataset_file(&data)?;
            let ensemble = train_ensemble(&ds, &cfg.prep, &cfg.model)?;
            ensemble.write_file(&out)?;
            log::info!("wrote model to {}", out.display());
            if let Some(path) = cv_report {
                let plan = searchlab::evalcv::make_folds(
                    &ds.y,
                    &ds.engine,
                    cfg.cv_k,
                    cfg.cv_repeats,
                    searchlab::rng::derive_seed(cfg.seed(), 0xC0DE_CF01),
                )?;
                let cv = searchlab::evalcv::cross_validate(&ds, &cfg.prep, &cfg.model, &plan)?;
                std::fs::write(&path, cv.to_text())?;
                log::info!(
                    "cross-validation accuracy {:.4} +/- {:.4} ({})",
                    cv.mean_accuracy,
                    cv.std_accuracy,
                    path.display()
                );
            }
            Ok(())
        }
        Command::Predict { model, data, out } => {
            let ensemble = FittedEnsemble::read_file(&model)?;
            let ds = read_dataset_file(&data)?;
            stages::write_predictions(&out, &ds, &ensemble)?;
            log::info!("wrote {} predictions to {}", ds.n(), out.display());
            Ok(())
        }
        Command::Rerank { model, stats, catalog, users, user, engine, links } => {
            let ensemble = FittedEnsemble::read_file(&model)?;
            let stats = stages::read_stats_dir(&stats)?;
            let catalog = searchlab::corpus::read_catalog_file(&catalog)?;
            let users = searchlab::corpus::read_users_file(&users)?;
            let profile = users
                .iter()
                .find(|u| u.user_id == user)
                .ok_or_else(|| Error::Validation(format!("unknown user '{user}'")))?;
            let engine = EngineId::from(engine.as_str());
            let settings_count = settings_count_from_names(&ensemble.pipeline.feature_names)?;

            let mut candidates = Vec::new();
            for link_id in links.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let link = catalog
                    .iter()
                    .find(|l| l.link_id == link_id)
                    .ok_or_else(|| Error::Validation(format!("unknown link '{link_id}'")))?;
                candidates.push(RerankCandidate {
                    link_id: link_id.to_string(),
                    features: searchlab::features::feature_row(
                        link,
                        profile,
                        &engine,
                        &stats,
                        settings_count,
                    ),
                });
            }
            for link_id in rerank(&candidates, &ensemble)? {
                println!("{link_id}");
            }
            Ok(())
        }
        Command::Evaluate { model, sessions, corpus, stats, out, per_engine_total } => {
            let ensemble = FittedEnsemble::read_file(&model)?;
            let eval_sessions = searchlab::session::read_sessions_file(&sessions)?;
            let (corpus_data, meta) = stages::read_corpus_dir(&corpus)?;
            let stats = stages::read_stats_dir(stats.as_deref().unwrap_or(&corpus))?;
            let total = per_engine_total.unwrap_or(meta.per_engine_total);
            let outcome = stages::evaluate_stage(
                &eval_sessions,
                &ensemble,
                &stats,
                &corpus_data,
                meta.gen.behavior(),
                total,
                meta.seed(),
                &out,
            )?;
            searchlab::session::write_sessions_file(
                &out.join(stages::REPLAYED_FILE),
                &outcome.replayed,
            )?;
            log_ratio_summary(&outcome.before, &outcome.after);
            log::info!("report written to {}", out.display());
            Ok(())
        }
        Command::Report { before, after, out } => {
            let before = stages::read_ratio_csv(&before)?;
            let after = stages::read_ratio_csv(&after)?;
            searchlab::evalcv::report(&before, &after, &out)?;
            log::info!("report written to {}", out.display());
            Ok(())
        }
        Command::Pipeline { config, out } => {
            let cfg = config.load()?;
            let outcome = stages::run_pipeline(&cfg, &out)?;
            log_ratio_summary(&outcome.before, &outcome.after);
            log::info!(
                "cross-validation accuracy {:.4} +/- {:.4}",
                outcome.cv.mean_accuracy,
                outcome.cv.std_accuracy
            );
            log::info!("artifacts under {}", out.display());
            Ok(())
        }
    }
}

fn log_ratio_summary(
    before: &searchlab::evalcv::RatioReport,
    after: &searchlab::evalcv::RatioReport,
) {
    use searchlab::evalcv::fmt_pct;
    use searchlab::session::SessionLabel::*;
    for (engine, b) in &before.engines {
        if let Some(a) = after.engines.get(engine) {
            log::info!(
                "{}: Ratio-I {}% -> {}%, Ratio-II {}% -> {}%, Ratio-III {}% -> {}%",
                engine.display_name(),
                fmt_pct(b.pct(OnceSearch)),
                fmt_pct(a.pct(OnceSearch)),
                fmt_pct(b.pct(TwiceSearch)),
                fmt_pct(a.pct(TwiceSearch)),
                fmt_pct(b.pct(MultiformSearch)),
                fmt_pct(a.pct(MultiformSearch)),
            );
        }
    }
}
