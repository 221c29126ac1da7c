//! End-to-end batch pipeline: generate → aggregate → featurize → train →
//! evaluate → report, all driven by one [`RunConfig`].
//!
//! Every stage reads only the serialized outputs of the previous stage, so
//! each CLI subcommand can resume the flow from disk. All randomness derives
//! from the config seed; two runs with the same config produce byte-identical
//! output trees.
//!
//! The generator produces two disjoint session sets with identical quotas:
//! the training corpus (aggregates, features, model fitting, cross-
//! validation) and an evaluation set. The Before table is measured on the
//! evaluation set as logged; the After table is measured on the same
//! evaluation sessions replayed with the fitted ensemble re-ranking every
//! result list.

use std::path::{Path, PathBuf};

use crate::aggregate::{run_aggregation, Aggregates};
use crate::config::RunConfig;
use crate::corpus::{generate_with_eval, BehaviorParams, Corpus};
use crate::error::Error;
use crate::evalcv::{
    cross_validate, evaluate_ratios, make_folds, parse_report_csv, report, simulate_post_rerank,
    CvReport, Phase, RatioReport, RatioRow, ReplayContext,
};
use crate::features::{featurize, LabeledDataset};
use crate::models::{train_ensemble, FittedEnsemble};
use crate::rng::derive_seed;
use crate::session::{EngineId, SessionRecord};
use crate::{Result, Scalar};

pub const SESSIONS_FILE: &str = "sessions.jsonl";
pub const EVAL_SESSIONS_FILE: &str = "eval_sessions.jsonl";
pub const CATALOG_FILE: &str = "catalog.jsonl";
pub const USERS_FILE: &str = "users.jsonl";
pub const META_FILE: &str = "corpus.meta";
pub const LINK_STATS_FILE: &str = "link_stats.jsonl";
pub const USER_STATS_FILE: &str = "user_stats.jsonl";
pub const DATASET_FILE: &str = "dataset.csv";
pub const MODEL_FILE: &str = "model.bin";
pub const REPORT_DIR: &str = "report";
pub const REPLAYED_FILE: &str = "replayed_sessions.jsonl";

const CV_SEED_SALT: u64 = 0xC0DE_CF01;

/// Writes the corpus files (`sessions.jsonl`, `catalog.jsonl`, `users.jsonl`)
/// plus the resolved config as `corpus.meta`, which makes the directory
/// self-contained for later replay.
pub fn write_corpus_dir(dir: &Path, corpus: &Corpus, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::session::write_sessions_file(&dir.join(SESSIONS_FILE), &corpus.sessions)?;
    crate::corpus::write_catalog_file(&dir.join(CATALOG_FILE), &corpus.catalog)?;
    crate::corpus::write_users_file(&dir.join(USERS_FILE), &corpus.users)?;
    cfg.write_file(&dir.join(META_FILE))?;
    Ok(())
}

/// Loads a corpus directory written by [`write_corpus_dir`].
pub fn read_corpus_dir(dir: &Path) -> Result<(Corpus, RunConfig)> {
    let cfg = RunConfig::from_file(&dir.join(META_FILE))?;
    let corpus = Corpus {
        sessions: crate::session::read_sessions_file(&dir.join(SESSIONS_FILE))?,
        catalog: crate::corpus::read_catalog_file(&dir.join(CATALOG_FILE))?,
        users: crate::corpus::read_users_file(&dir.join(USERS_FILE))?,
    };
    Ok((corpus, cfg))
}

pub fn write_stats_dir(dir: &Path, stats: &Aggregates) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::aggregate::write_link_stats_file(&dir.join(LINK_STATS_FILE), &stats.links)?;
    crate::aggregate::write_user_stats_file(&dir.join(USER_STATS_FILE), &stats.users)?;
    Ok(())
}

pub fn read_stats_dir(dir: &Path) -> Result<Aggregates> {
    Ok(Aggregates {
        links: crate::aggregate::read_link_stats_file(&dir.join(LINK_STATS_FILE))?,
        users: crate::aggregate::read_user_stats_file(&dir.join(USER_STATS_FILE))?,
        skipped: 0,
    })
}

/// Writes per-example ensemble predictions: the voted label and the four
/// mean-posterior probabilities.
pub fn write_predictions(
    path: &Path,
    ds: &LabeledDataset,
    ensemble: &FittedEnsemble<Scalar>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "session_id",
        "predicted",
        "p_once",
        "p_twice",
        "p_multiform",
        "p_futile",
    ])
    .map_err(Error::from)?;
    for i in 0..ds.n() {
        let (pred, posterior) = ensemble.predict_raw(ds.x.row(i))?;
        let label = crate::session::SessionLabel::from_index(pred)
            .expect("prediction is a valid class index");
        let mut record = vec![ds.session_ids[i].clone(), label.to_string()];
        record.extend(posterior.iter().map(|p| p.to_string()));
        w.write_record(&record).map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}

/// Machine-readable ratio table (`phase`, then one `engine,once,twice,
/// multiform` row per engine).
pub fn write_ratio_csv(path: &Path, report: &RatioReport) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(path)?;
    w.write_record(["phase", &report.phase.to_string()])
        .map_err(Error::from)?;
    w.write_record(["engine", "once", "twice", "multiform"])
        .map_err(Error::from)?;
    for (engine, row) in &report.engines {
        w.write_record([
            engine.as_str(),
            &row.once.to_string(),
            &row.twice.to_string(),
            &row.multiform.to_string(),
        ])
        .map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ratio_csv(path: &Path) -> Result<RatioReport> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(false)
        .from_path(path)?;
    let records: Vec<csv::StringRecord> = reader
        .records()
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::from)?;
    if records.len() < 2 || records[0].get(0) != Some("phase") {
        return Err(Error::Format(format!(
            "{} is not a ratio table",
            path.display()
        )));
    }
    let phase: Phase = records[0]
        .get(1)
        .ok_or_else(|| Error::Format("phase row without a value".into()))?
        .parse()?;
    let mut engines = std::collections::BTreeMap::new();
    for record in &records[2..] {
        if record.len() != 4 {
            return Err(Error::Format(format!(
                "ratio row has {} fields, expected 4",
                record.len()
            )));
        }
        let parse = |i: usize| -> Result<usize> {
            record[i]
                .parse()
                .map_err(|e| Error::Format(format!("bad count '{}': {e}", &record[i])))
        };
        engines.insert(
            EngineId::from(&record[0]),
            RatioRow { once: parse(1)?, twice: parse(2)?, multiform: parse(3)? },
        );
    }
    Ok(RatioReport { phase, engines })
}

/// Everything the `evaluate` stage produces.
pub struct EvaluationOutcome {
    pub before: RatioReport,
    pub after: RatioReport,
    pub replayed: Vec<SessionRecord>,
}

/// Replays `eval_sessions` with the ensemble re-ranking every list, then
/// builds the Before (as logged) and After (as replayed) ratio reports and
/// writes `report.csv`, `plotdata.tsv`, `deltas.txt`, and the two machine
/// tables into `out_dir`.
pub fn evaluate_stage(
    eval_sessions: &[SessionRecord],
    ensemble: &FittedEnsemble<Scalar>,
    stats: &Aggregates,
    corpus: &Corpus,
    behavior: BehaviorParams,
    per_engine_total: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<EvaluationOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let before = evaluate_ratios(eval_sessions, Phase::Before, per_engine_total, seed)?;
    let ctx = ReplayContext {
        users: &corpus.users,
        catalog: &corpus.catalog,
        behavior,
    };
    let replayed = simulate_post_rerank(eval_sessions, ensemble, stats, &ctx)?;
    let after = evaluate_ratios(&replayed, Phase::After, per_engine_total, seed)?;

    write_ratio_csv(&out_dir.join("ratios_before.csv"), &before)?;
    write_ratio_csv(&out_dir.join("ratios_after.csv"), &after)?;
    report(&before, &after, out_dir)?;
    Ok(EvaluationOutcome { before, after, replayed })
}

/// Artifact paths of a pipeline run.
pub struct PipelinePaths {
    pub root: PathBuf,
    pub corpus_dir: PathBuf,
    pub stats_dir: PathBuf,
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub report_dir: PathBuf,
}

impl PipelinePaths {
    pub fn new(root: &Path) -> Self {
        PipelinePaths {
            root: root.to_path_buf(),
            corpus_dir: root.join("corpus"),
            stats_dir: root.join("stats"),
            dataset: root.join(DATASET_FILE),
            model: root.join(MODEL_FILE),
            report_dir: root.join(REPORT_DIR),
        }
    }
}

/// Result of a full pipeline run.
pub struct PipelineOutcome {
    pub paths: PipelinePaths,
    pub before: RatioReport,
    pub after: RatioReport,
    pub cv: CvReport,
}

/// Runs the whole flow into `out_dir`.
pub fn run_pipeline(cfg: &RunConfig, out_dir: &Path) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let paths = PipelinePaths::new(out_dir);
    std::fs::create_dir_all(&paths.root)?;

    log::info!("generating corpus (seed {})", cfg.seed());
    let (corpus, eval_sessions) = generate_with_eval(&cfg.gen)?;
    write_corpus_dir(&paths.corpus_dir, &corpus, cfg)?;
    crate::session::write_sessions_file(
        &paths.corpus_dir.join(EVAL_SESSIONS_FILE),
        &eval_sessions,
    )?;

    log::info!(
        "aggregating {} training sessions over {} shards",
        corpus.sessions.len(),
        cfg.shards
    );
    let stats = run_aggregation(&corpus.sessions, cfg.shards)?;
    write_stats_dir(&paths.stats_dir, &stats)?;

    log::info!("building the labeled dataset");
    let ds = featurize(
        &corpus.sessions,
        &stats,
        &corpus.catalog,
        &corpus.users,
        cfg.gen.settings_count,
    )?;
    crate::features::write_dataset_file(&paths.dataset, &ds)?;

    log::info!("training the four-model ensemble");
    let ensemble = train_ensemble(&ds, &cfg.prep, &cfg.model)?;
    ensemble.write_file(&paths.model)?;

    log::info!(
        "running {}x{}-fold cross-validation",
        cfg.cv_repeats,
        cfg.cv_k
    );
    let plan = make_folds(
        &ds.y,
        &ds.engine,
        cfg.cv_k,
        cfg.cv_repeats,
        derive_seed(cfg.seed(), CV_SEED_SALT),
    )?;
    let cv = cross_validate(&ds, &cfg.prep, &cfg.model, &plan)?;
    std::fs::create_dir_all(&paths.report_dir)?;
    std::fs::write(paths.report_dir.join("cv_report.txt"), cv.to_text())?;
    log::info!(
        "cross-validation accuracy {:.4} +/- {:.4}",
        cv.mean_accuracy,
        cv.std_accuracy
    );

    log::info!("evaluating {} held-out sessions", eval_sessions.len());
    let outcome = evaluate_stage(
        &eval_sessions,
        &ensemble,
        &stats,
        &corpus,
        cfg.gen.behavior(),
        cfg.per_engine_total,
        cfg.seed(),
        &paths.report_dir,
    )?;
    crate::session::write_sessions_file(&paths.root.join(REPLAYED_FILE), &outcome.replayed)?;

    Ok(PipelineOutcome {
        paths,
        before: outcome.before,
        after: outcome.after,
        cv,
    })
}

/// Re-parses the comparison table a pipeline run emitted.
pub fn load_report(report_dir: &Path) -> Result<(RatioReport, RatioReport)> {
    parse_report_csv(&report_dir.join("report.csv"))
}
