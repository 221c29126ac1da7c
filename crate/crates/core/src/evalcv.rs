//! Repeated stratified cross-validation, re-ranking by predicted Once-Search
//! probability, behavioral replay, and the Once/Twice/Multiform ratio
//! reports.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::aggregate::Aggregates;
use crate::corpus::{
    session_stream_seed, simulate_session, BehaviorParams, LinkEntry, ResultRanker,
    UserProfile,
};
use crate::error::Error;
use crate::features::{feature_row, settings_count_from_names, LabeledDataset};
use crate::models::{train_ensemble, FittedEnsemble, ModelConfig, NUM_CLASSES};
use crate::preprocess::PreprocessConfig;
use crate::rng::{derive_seed, DetRng};
use crate::session::{label_session, EngineId, SessionLabel, SessionRecord};
use crate::{Result, Scalar};

/// Fold assignments for repeated stratified cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub k: usize,
    pub repeats: usize,
    /// `assignments[repeat][example] = fold`.
    pub assignments: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn test_indices(&self, repeat: usize, fold: usize) -> Vec<usize> {
        self.assignments[repeat]
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| (f == fold).then_some(i))
            .collect()
    }

    pub fn train_indices(&self, repeat: usize, fold: usize) -> Vec<usize> {
        self.assignments[repeat]
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| (f != fold).then_some(i))
            .collect()
    }
}

/// Builds a repeated fold plan stratified by `(engine, label)`.
///
/// Strata smaller than `k` are pooled into a label-only stratum with a
/// warning. Each repeat shuffles with a seed derived from `(seed, repeat)`.
pub fn make_folds(
    y: &[SessionLabel],
    engine: &[EngineId],
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    if y.len() != engine.len() {
        return Err(Error::Validation(format!(
            "{} labels for {} engines",
            y.len(),
            engine.len()
        )));
    }
    if y.len() < k {
        return Err(Error::Config(format!(
            "cannot split {} examples into {k} folds",
            y.len()
        )));
    }

    let mut fine: BTreeMap<(EngineId, SessionLabel), Vec<usize>> = BTreeMap::new();
    for i in 0..y.len() {
        fine.entry((engine[i].clone(), y[i])).or_default().push(i);
    }
    // relax under-filled strata to label-only pools
    let mut strata: BTreeMap<(Option<EngineId>, SessionLabel), Vec<usize>> = BTreeMap::new();
    for ((eng, label), members) in fine {
        if members.len() < k {
            log::warn!(
                "stratum ({eng}, {label}) has {} example(s) for {k} folds; stratifying by label only",
                members.len()
            );
            strata.entry((None, label)).or_default().extend(members);
        } else {
            strata.insert((Some(eng), label), members);
        }
    }

    let mut assignments = Vec::with_capacity(repeats);
    for repeat in 0..repeats {
        let mut rng = DetRng::new(derive_seed(seed, 0xF01D_0000 + repeat as u64));
        let mut fold_of = vec![0usize; y.len()];
        for (stratum_idx, members) in strata.values().enumerate() {
            let mut members = members.clone();
            rng.shuffle(&mut members);
            for (pos, &i) in members.iter().enumerate() {
                fold_of[i] = (pos + stratum_idx) % k;
            }
        }
        assignments.push(fold_of);
    }
    Ok(FoldPlan { k, repeats, assignments })
}

/// One evaluated fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub repeat: usize,
    pub fold: usize,
    pub size: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

/// Cross-validation report over all `(repeat, fold)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub k: usize,
    pub repeats: usize,
    pub folds: Vec<FoldOutcome>,
    pub mean_accuracy: f64,
    /// Sample standard deviation of the fold accuracies.
    pub std_accuracy: f64,
}

impl CvReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "repeated stratified cross-validation: k={} repeats={}\n",
            self.k, self.repeats
        );
        out.push_str("repeat\tfold\tsize\taccuracy\n");
        for f in &self.folds {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\n",
                f.repeat + 1,
                f.fold + 1,
                f.size,
                f.accuracy
            ));
        }
        let mut total = [[0usize; NUM_CLASSES]; NUM_CLASSES];
        for f in &self.folds {
            for t in 0..NUM_CLASSES {
                for p in 0..NUM_CLASSES {
                    total[t][p] += f.confusion[t][p];
                }
            }
        }
        out.push_str("confusion (rows = actual, columns = predicted; summed over folds)\n");
        out.push_str("\tonce\ttwice\tmultiform\tfutile\n");
        for (t, label) in SessionLabel::ALL.iter().enumerate() {
            out.push_str(label.as_str());
            for p in 0..NUM_CLASSES {
                out.push_str(&format!("\t{}", total[t][p]));
            }
            out.push('\n');
        }
        out.push_str(&format!("mean_accuracy\t{:.6}\n", self.mean_accuracy));
        out.push_str(&format!("std_accuracy\t{:.6}\n", self.std_accuracy));
        out
    }
}

/// Runs the full leak-free protocol: for every `(repeat, fold)`, the
/// preprocessing stack and all four models are fitted on the training folds
/// only, then the ensemble is scored on the held-out fold.
pub fn cross_validate(
    ds: &LabeledDataset,
    prep_cfg: &PreprocessConfig,
    model_cfg: &ModelConfig,
    plan: &FoldPlan,
) -> Result<CvReport> {
    ds.validate()?;
    for assignment in &plan.assignments {
        if assignment.len() != ds.n() {
            return Err(Error::Validation(format!(
                "fold plan covers {} examples, dataset has {}",
                assignment.len(),
                ds.n()
            )));
        }
    }

    let mut folds = Vec::with_capacity(plan.repeats * plan.k);
    for repeat in 0..plan.repeats {
        for fold in 0..plan.k {
            let test_idx = plan.test_indices(repeat, fold);
            if test_idx.is_empty() {
                continue;
            }
            let train_idx = plan.train_indices(repeat, fold);
            let train = ds.subset(&train_idx);
            let ensemble = train_ensemble(&train, prep_cfg, model_cfg).map_err(|e| {
                Error::Validation(format!("repeat {repeat}, fold {fold}: {e}"))
            })?;

            let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
            let mut correct = 0usize;
            for &i in &test_idx {
                let (pred, _) = ensemble.predict_raw(ds.x.row(i)).map_err(|e| {
                    Error::Validation(format!("repeat {repeat}, fold {fold}: {e}"))
                })?;
                let actual = ds.y[i].index();
                confusion[actual][pred] += 1;
                if pred == actual {
                    correct += 1;
                }
            }
            folds.push(FoldOutcome {
                repeat,
                fold,
                size: test_idx.len(),
                accuracy: correct as f64 / test_idx.len() as f64,
                confusion,
            });
        }
    }

    let n = folds.len().max(1) as f64;
    let mean = folds.iter().map(|f| f.accuracy).sum::<f64>() / n;
    let var = if folds.len() > 1 {
        folds
            .iter()
            .map(|f| (f.accuracy - mean) * (f.accuracy - mean))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    Ok(CvReport {
        k: plan.k,
        repeats: plan.repeats,
        folds,
        mean_accuracy: mean,
        std_accuracy: var.sqrt(),
    })
}

/// A candidate link with its raw feature row (original dataset columns).
#[derive(Debug, Clone, PartialEq)]
pub struct RerankCandidate {
    pub link_id: String,
    pub features: Vec<Scalar>,
}

/// Orders candidates by descending mean-posterior Once-Search probability,
/// ties by ascending link id. The output is a permutation of the input ids.
pub fn rerank(
    candidates: &[RerankCandidate],
    ensemble: &FittedEnsemble<Scalar>,
) -> Result<Vec<String>> {
    let mut scored: Vec<(f64, &str)> = Vec::with_capacity(candidates.len());
    for c in candidates {
        let (_, posterior) = ensemble.predict_raw(&c.features)?;
        scored.push((posterior[SessionLabel::OnceSearch.index()], &c.link_id));
    }
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("posteriors are finite")
            .then_with(|| a.1.cmp(b.1))
    });
    Ok(scored.into_iter().map(|(_, id)| id.to_string()).collect())
}

/// Result ranker backed by a fitted ensemble: candidate lists are reordered
/// by predicted Once-Search probability.
pub struct EnsembleRanker<'a> {
    ensemble: &'a FittedEnsemble<Scalar>,
    stats: &'a Aggregates,
    settings_count: usize,
}

impl<'a> EnsembleRanker<'a> {
    pub fn new(ensemble: &'a FittedEnsemble<Scalar>, stats: &'a Aggregates) -> Result<Self> {
        let settings_count = settings_count_from_names(&ensemble.pipeline.feature_names)?;
        Ok(EnsembleRanker { ensemble, stats, settings_count })
    }
}

impl ResultRanker for EnsembleRanker<'_> {
    fn rank<'a>(
        &self,
        user: &UserProfile,
        engine: &EngineId,
        candidates: Vec<&'a LinkEntry>,
    ) -> Vec<&'a LinkEntry> {
        let mut scored: Vec<(f64, &LinkEntry)> = candidates
            .into_iter()
            .map(|link| {
                let row = feature_row(link, user, engine, self.stats, self.settings_count);
                let (_, posterior) = self
                    .ensemble
                    .predict_raw(&row)
                    .expect("canonical rows match the fitted pipeline");
                (posterior[SessionLabel::OnceSearch.index()], link)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("posteriors are finite")
                .then_with(|| a.1.link_id.cmp(&b.1.link_id))
        });
        scored.into_iter().map(|(_, link)| link).collect()
    }
}

/// Everything the behavioral replay needs besides the sessions themselves.
pub struct ReplayContext<'a> {
    pub users: &'a [UserProfile],
    pub catalog: &'a [LinkEntry],
    pub behavior: BehaviorParams,
}

/// Replays sessions through the behavioral model with an arbitrary result
/// ranker. Each session re-derives its original randomness stream from its
/// session id, so replaying with the baseline ranking reproduces the input
/// byte for byte.
pub fn replay_sessions(
    sessions: &[SessionRecord],
    ranker: &dyn ResultRanker,
    ctx: &ReplayContext<'_>,
) -> Result<Vec<SessionRecord>> {
    let users: BTreeMap<&str, &UserProfile> = ctx
        .users
        .iter()
        .map(|u| (u.user_id.as_str(), u))
        .collect();
    sessions
        .iter()
        .map(|s| {
            let seed = session_stream_seed(&s.session_id)?;
            let user = users
                .get(s.user_id.as_str())
                .ok_or_else(|| Error::missing("user", &s.user_id))?;
            let mut rng = DetRng::new(seed);
            Ok(simulate_session(
                user,
                &s.engine,
                ctx.catalog,
                &ctx.behavior,
                s.session_id.clone(),
                &mut rng,
                ranker,
            ))
        })
        .collect()
}

/// Replays held-out sessions with the fitted ensemble re-ranking every result
/// list. The caller must keep the replayed sessions disjoint from the
/// ensemble's training sessions.
pub fn simulate_post_rerank(
    sessions_test: &[SessionRecord],
    ensemble: &FittedEnsemble<Scalar>,
    stats: &Aggregates,
    ctx: &ReplayContext<'_>,
) -> Result<Vec<SessionRecord>> {
    let ranker = EnsembleRanker::new(ensemble, stats)?;
    replay_sessions(sessions_test, &ranker, ctx)
}

/// Evaluation phase of a ratio report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Before,
    After,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Before => write!(f, "Before"),
            Phase::After => write!(f, "After"),
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Before" => Ok(Phase::Before),
            "After" => Ok(Phase::After),
            other => Err(Error::Format(format!("unknown phase '{other}'"))),
        }
    }
}

/// Per-engine Once/Twice/Multiform counts at a fixed total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatioRow {
    pub once: usize,
    pub twice: usize,
    pub multiform: usize,
}

impl RatioRow {
    pub fn total(&self) -> usize {
        self.once + self.twice + self.multiform
    }

    pub fn ratio_i(&self) -> f64 {
        self.once as f64 / self.total() as f64
    }

    pub fn ratio_ii(&self) -> f64 {
        self.twice as f64 / self.total() as f64
    }

    pub fn ratio_iii(&self) -> f64 {
        self.multiform as f64 / self.total() as f64
    }

    fn count(&self, label: SessionLabel) -> usize {
        match label {
            SessionLabel::OnceSearch => self.once,
            SessionLabel::TwiceSearch => self.twice,
            SessionLabel::MultiformSearch => self.multiform,
            SessionLabel::FutileSearch => 0,
        }
    }

    /// Percentage of one category, exact for dyadic totals.
    pub fn pct(&self, label: SessionLabel) -> f64 {
        (self.count(label) * 100) as f64 / self.total() as f64
    }
}

/// Search-time ratio report for one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioReport {
    pub phase: Phase,
    pub engines: BTreeMap<EngineId, RatioRow>,
}

/// Drops Futile sessions, draws a seeded uniform subsample of exactly
/// `per_engine_total` sessions per engine, and reports the three-category
/// counts and ratios.
pub fn evaluate_ratios(
    sessions: &[SessionRecord],
    phase: Phase,
    per_engine_total: usize,
    seed: u64,
) -> Result<RatioReport> {
    if per_engine_total == 0 {
        return Err(Error::Config("per_engine_total must be at least 1".into()));
    }
    let mut by_engine: BTreeMap<EngineId, Vec<SessionLabel>> = BTreeMap::new();
    for s in sessions {
        let label = label_session(s)?;
        if label == SessionLabel::FutileSearch {
            continue;
        }
        by_engine.entry(s.engine.clone()).or_default().push(label);
    }

    let mut engines = BTreeMap::new();
    for (engine_idx, (engine, labels)) in by_engine.into_iter().enumerate() {
        if labels.len() < per_engine_total {
            return Err(Error::Validation(format!(
                "engine {engine} has {} non-futile sessions, {per_engine_total} required \
                 (shortfall {})",
                labels.len(),
                per_engine_total - labels.len()
            )));
        }
        let mut order: Vec<usize> = (0..labels.len()).collect();
        let mut rng = DetRng::new(derive_seed(seed, 0x0A71_0000 + engine_idx as u64));
        rng.shuffle(&mut order);
        let mut row = RatioRow { once: 0, twice: 0, multiform: 0 };
        for &i in order.iter().take(per_engine_total) {
            match labels[i] {
                SessionLabel::OnceSearch => row.once += 1,
                SessionLabel::TwiceSearch => row.twice += 1,
                SessionLabel::MultiformSearch => row.multiform += 1,
                SessionLabel::FutileSearch => unreachable!("futile sessions were dropped"),
            }
        }
        engines.insert(engine, row);
    }
    Ok(RatioReport { phase, engines })
}

/// Formats a percentage point value with at most four decimals, trimming
/// trailing zeros (`12` / `16.5` / `33.3333`).
pub fn fmt_pct(v: f64) -> String {
    let s = format!("{v:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn pct_string(row: &RatioRow, label: SessionLabel) -> String {
    format!("{}%", fmt_pct(row.pct(label)))
}

const RATIO_CATEGORIES: [(SessionLabel, &str); 3] = [
    (SessionLabel::OnceSearch, "Ratio-I"),
    (SessionLabel::TwiceSearch, "Ratio-II"),
    (SessionLabel::MultiformSearch, "Ratio-III"),
];

impl RatioReport {
    /// Appends this report's table block (`Phase` marker line, `Platform`
    /// header, then count and ratio rows per category).
    fn write_block(&self, w: &mut csv::Writer<std::fs::File>) -> Result<()> {
        w.write_record(["Phase", &self.phase.to_string()])
            .map_err(Error::from)?;
        let mut header = vec!["Platform".to_string()];
        header.extend(self.engines.keys().map(EngineId::display_name));
        w.write_record(&header).map_err(Error::from)?;
        for (label, ratio_name) in RATIO_CATEGORIES {
            let mut counts = vec![label.table_name().to_string()];
            let mut ratios = vec![ratio_name.to_string()];
            for row in self.engines.values() {
                counts.push(row.count(label).to_string());
                ratios.push(pct_string(row, label));
            }
            w.write_record(&counts).map_err(Error::from)?;
            w.write_record(&ratios).map_err(Error::from)?;
        }
        Ok(())
    }
}

/// Emits the comparison report: `report.csv` (the two table blocks),
/// `plotdata.tsv` (engine, category, phase, ratio), and `deltas.txt`
/// (Ratio-I change per engine).
pub fn report(before: &RatioReport, after: &RatioReport, out_dir: &Path) -> Result<()> {
    if before.engines.keys().ne(after.engines.keys()) {
        return Err(Error::Validation(format!(
            "phase engine sets differ: before {:?}, after {:?}",
            before.engines.keys().collect::<Vec<_>>(),
            after.engines.keys().collect::<Vec<_>>()
        )));
    }
    std::fs::create_dir_all(out_dir)?;

    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(out_dir.join("report.csv"))?;
    before.write_block(&mut w)?;
    after.write_block(&mut w)?;
    w.flush()?;

    let mut plot = String::from("engine\tcategory\tphase\tratio\n");
    for report in [before, after] {
        for (engine, row) in &report.engines {
            for (label, _) in RATIO_CATEGORIES {
                plot.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    engine.display_name(),
                    label.as_str(),
                    report.phase,
                    row.count(label) as f64 / row.total() as f64,
                ));
            }
        }
    }
    std::fs::write(out_dir.join("plotdata.tsv"), plot)?;

    let mut deltas = String::new();
    for (engine, b) in &before.engines {
        let a = &after.engines[engine];
        let delta = a.pct(SessionLabel::OnceSearch) - b.pct(SessionLabel::OnceSearch);
        let sign = if delta < 0.0 { "-" } else { "+" };
        deltas.push_str(&format!(
            "{} Ratio-I {sign}{} points ({}% -> {}%)\n",
            engine.display_name(),
            fmt_pct(delta.abs()),
            fmt_pct(b.pct(SessionLabel::OnceSearch)),
            fmt_pct(a.pct(SessionLabel::OnceSearch)),
        ));
    }
    std::fs::write(out_dir.join("deltas.txt"), deltas)?;
    Ok(())
}

/// Parses `report.csv` back into its two phase reports. Counts are read
/// exactly; ratios are recomputed from them and cross-checked against the
/// printed percentages.
pub fn parse_report_csv(path: &Path) -> Result<(RatioReport, RatioReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(false)
        .from_path(path)?;
    let records: Vec<csv::StringRecord> = reader
        .records()
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::from)?;

    let mut reports = Vec::new();
    let mut i = 0;
    while i < records.len() {
        if records[i].get(0) != Some("Phase") {
            return Err(Error::Format(format!(
                "report.csv record {i}: expected a Phase marker"
            )));
        }
        let phase: Phase = records[i]
            .get(1)
            .ok_or_else(|| Error::Format("Phase marker without a value".into()))?
            .parse()?;
        let platform = &records[i + 1];
        if platform.get(0) != Some("Platform") {
            return Err(Error::Format("expected a Platform header".into()));
        }
        let engine_names: Vec<EngineId> = platform
            .iter()
            .skip(1)
            .map(|name| EngineId::from(name.to_lowercase().as_str()))
            .collect();

        let mut counts: BTreeMap<EngineId, [usize; 3]> =
            engine_names.iter().map(|e| (e.clone(), [0; 3])).collect();
        let mut pct_rows: Vec<csv::StringRecord> = Vec::new();
        for (ci, (label, _)) in RATIO_CATEGORIES.iter().enumerate() {
            let count_row = &records[i + 2 + 2 * ci];
            if count_row.get(0) != Some(label.table_name()) {
                return Err(Error::Format(format!(
                    "expected a '{}' row",
                    label.table_name()
                )));
            }
            for (e, field) in engine_names.iter().zip(count_row.iter().skip(1)) {
                counts.get_mut(e).expect("engine parsed above")[ci] = field
                    .parse::<usize>()
                    .map_err(|err| Error::Format(format!("bad count '{field}': {err}")))?;
            }
            pct_rows.push(records[i + 3 + 2 * ci].clone());
        }

        let engines: BTreeMap<EngineId, RatioRow> = counts
            .into_iter()
            .map(|(e, c)| (e, RatioRow { once: c[0], twice: c[1], multiform: c[2] }))
            .collect();
        // cross-check the printed percentages against the parsed counts
        for (ci, (label, _)) in RATIO_CATEGORIES.iter().enumerate() {
            for (e, field) in engine_names.iter().zip(pct_rows[ci].iter().skip(1)) {
                let expect = pct_string(&engines[e], *label);
                if field != expect {
                    return Err(Error::Format(format!(
                        "ratio cell '{field}' does not match counts ({expect})"
                    )));
                }
            }
        }
        reports.push(RatioReport { phase, engines });
        i += 8;
    }
    if reports.len() != 2 {
        return Err(Error::Format(format!(
            "report.csv holds {} phase blocks, expected 2",
            reports.len()
        )));
    }
    let after = reports.pop().expect("two blocks");
    let before = reports.pop().expect("two blocks");
    Ok((before, after))
}
