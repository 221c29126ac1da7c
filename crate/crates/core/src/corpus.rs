//! Synthetic query-log corpus generation.
//!
//! Real back-end logs are not available, so the corpus is simulated: latent
//! user preference vectors and link topic vectors drive a position-biased
//! click model, and a quota sampler keeps simulating sessions until every
//! `(engine, label)` bucket holds exactly its configured count. Overflow is
//! discarded, which calibrates the per-engine label marginals exactly without
//! distorting the behavioral model.
//!
//! Randomness is split into three documented streams derived from the config
//! seed (see [`crate::rng`]): one for the catalog and users, one for the
//! attempt loop (which user runs which engine), and one per session attempt.
//! Each session id embeds its stream seed (`s<16 hex digits>`), so a recorded
//! session can later be replayed through the same behavioral model with a
//! different result ranking.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng::{derive_seed, DetRng};
use crate::session::{label_session, ActionEvent, EngineId, SessionLabel, SessionRecord};
use crate::Result;

const SALT_CATALOG_USERS: u64 = 1;
const SALT_FILLER: u64 = 2;
const SALT_SESSION_BASE: u64 = 0x0100_0000_0000;

/// A synthetic user: latent taste vector plus the observable profile the
/// feature extractor sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    /// Relative usage frequency per engine; sums to 1.
    pub engine_freq: BTreeMap<EngineId, f64>,
    /// Latent preference vector of dimension `d`.
    pub pref: Vec<f64>,
    /// Personalization settings, fixed order.
    pub settings_flags: Vec<bool>,
}

/// A synthetic catalog entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkEntry {
    pub link_id: String,
    pub publisher_id: String,
    /// Relative publisher popularity in `[0, 1]`; drives the baseline ranking.
    pub publisher_popularity: f64,
    pub has_image: bool,
    pub has_audio: bool,
    pub has_external_links: bool,
    /// Latent topic vector of dimension `d`.
    pub topic: Vec<f64>,
    /// Prior click propensity in `[0, 1]`, derived from the topic quality axis.
    pub base_ctr: f64,
}

/// Per-engine label quotas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelQuota {
    pub once: usize,
    pub twice: usize,
    pub multiform: usize,
    pub futile: usize,
}

impl LabelQuota {
    pub fn get(&self, label: SessionLabel) -> usize {
        match label {
            SessionLabel::OnceSearch => self.once,
            SessionLabel::TwiceSearch => self.twice,
            SessionLabel::MultiformSearch => self.multiform,
            SessionLabel::FutileSearch => self.futile,
        }
    }

    pub fn total(&self) -> usize {
        self.once + self.twice + self.multiform + self.futile
    }
}

/// Behavioral constants of the click model, shared by generation and replay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorParams {
    /// Position-bias decay: the link at rank `r` (0-based) is examined with
    /// weight `gamma^r`.
    pub gamma: f64,
    /// Result-list length per pass.
    pub shown_len: usize,
    /// Passes before the user gives up.
    pub max_passes: usize,
    /// Probability that a failed pass leads to a query edit instead of a new
    /// search.
    pub edit_prob: f64,
}

/// Generator configuration. Defaults are desk-scale and documented in the
/// config reference shipped with the CLI.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    /// Latent vector dimension.
    pub dimension: usize,
    pub quotas: BTreeMap<EngineId, LabelQuota>,
    pub catalog_size: usize,
    pub user_count: usize,
    pub publisher_count: usize,
    /// Number of personalization settings flags per user.
    pub settings_count: usize,
    pub shown_len: usize,
    pub max_passes: usize,
    /// Position-bias decay in `(0, 1)`.
    pub gamma: f64,
    pub edit_prob: f64,
    /// Relevance cut used by corpus diagnostics.
    pub relevance_threshold: f64,
    /// Mean/sd of the user preference component along the quality axis.
    pub pref_align_mean: f64,
    pub pref_align_sd: f64,
    /// Added to the quality-axis preference when the first settings flag is
    /// on, so personalization settings carry real signal.
    pub pref_align_bonus: f64,
    /// Spread of the remaining (taste) preference components.
    pub pref_taste_sd: f64,
    /// Mean/sd of the link quality axis (`topic[0]`).
    pub topic_quality_mean: f64,
    pub topic_quality_sd: f64,
    /// Spread of the remaining topic components.
    pub topic_taste_sd: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        let mut quotas = BTreeMap::new();
        quotas.insert(
            EngineId::Baidu,
            LabelQuota { once: 24, twice: 68, multiform: 108, futile: 100 },
        );
        quotas.insert(
            EngineId::Sougou,
            LabelQuota { once: 54, twice: 82, multiform: 64, futile: 100 },
        );
        quotas.insert(
            EngineId::Bing,
            LabelQuota { once: 33, twice: 88, multiform: 79, futile: 100 },
        );
        GenConfig {
            seed: 42,
            dimension: 8,
            quotas,
            catalog_size: 500,
            user_count: 100,
            publisher_count: 40,
            settings_count: 3,
            shown_len: 10,
            max_passes: 4,
            gamma: 0.7,
            edit_prob: 0.35,
            relevance_threshold: 0.5,
            pref_align_mean: 1.0,
            pref_align_sd: 0.35,
            pref_align_bonus: 0.5,
            pref_taste_sd: 0.8,
            topic_quality_mean: -0.6,
            topic_quality_sd: 1.0,
            topic_taste_sd: 0.4,
        }
    }
}

impl GenConfig {
    pub fn behavior(&self) -> BehaviorParams {
        BehaviorParams {
            gamma: self.gamma,
            shown_len: self.shown_len,
            max_passes: self.max_passes,
            edit_prob: self.edit_prob,
        }
    }

    pub fn total_quota(&self) -> usize {
        self.quotas.values().map(LabelQuota::total).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let any_quota = self.total_quota() > 0;
        if any_quota && self.catalog_size == 0 {
            return Err(Error::Config(
                "quotas are non-zero but catalog_size is 0".into(),
            ));
        }
        if any_quota && self.user_count == 0 {
            return Err(Error::Config("quotas are non-zero but user_count is 0".into()));
        }
        if self.catalog_size < self.shown_len {
            return Err(Error::Config(format!(
                "catalog_size ({}) must be at least shown_len ({})",
                self.catalog_size, self.shown_len
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.edit_prob) {
            return Err(Error::Config(format!(
                "edit_prob must lie in [0, 1], got {}",
                self.edit_prob
            )));
        }
        if !(0.0..=1.0).contains(&self.relevance_threshold) {
            return Err(Error::Config(format!(
                "relevance_threshold must lie in [0, 1], got {}",
                self.relevance_threshold
            )));
        }
        if any_quota && self.dimension == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        if any_quota && self.max_passes == 0 {
            return Err(Error::Config("max_passes must be at least 1".into()));
        }
        if any_quota && self.shown_len == 0 {
            return Err(Error::Config("shown_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// A generated corpus: profiles, catalog, and calibrated sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub users: Vec<UserProfile>,
    pub catalog: Vec<LinkEntry>,
    pub sessions: Vec<SessionRecord>,
}

impl Corpus {
    pub fn user_index(&self) -> BTreeMap<&str, &UserProfile> {
        self.users.iter().map(|u| (u.user_id.as_str(), u)).collect()
    }

    pub fn link_index(&self) -> BTreeMap<&str, &LinkEntry> {
        self.catalog.iter().map(|l| (l.link_id.as_str(), l)).collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Click relevance of a link to a user: the logistic of the preference/topic
/// dot product.
pub fn relevance(user: &UserProfile, link: &LinkEntry) -> f64 {
    let dot: f64 = user
        .pref
        .iter()
        .zip(&link.topic)
        .map(|(&p, &t)| p * t)
        .sum();
    sigmoid(dot)
}

/// Orders a candidate result list before the simulated user examines it.
pub trait ResultRanker {
    fn rank<'a>(
        &self,
        user: &UserProfile,
        engine: &EngineId,
        candidates: Vec<&'a LinkEntry>,
    ) -> Vec<&'a LinkEntry>;
}

/// Baseline engine ranking: publisher popularity descending, link id
/// ascending on ties. Deliberately blind to the latent quality axis, which is
/// what a learned re-ranker can improve on.
#[derive(Debug, Clone, Copy, Default)]
pub struct EngineRanking;

impl ResultRanker for EngineRanking {
    fn rank<'a>(
        &self,
        _user: &UserProfile,
        _engine: &EngineId,
        mut candidates: Vec<&'a LinkEntry>,
    ) -> Vec<&'a LinkEntry> {
        candidates.sort_by(|a, b| {
            b.publisher_popularity
                .partial_cmp(&a.publisher_popularity)
                .expect("popularity is finite")
                .then_with(|| a.link_id.cmp(&b.link_id))
        });
        candidates
    }
}

const SESSION_EPOCH_MS: i64 = 1_700_000_000_000;

/// Simulates one session: the user examines each ranked list top-down,
/// clicking the link at rank `r` with probability `gamma^r * relevance`;
/// after a pass without a click they edit the query or search again, up to
/// `max_passes` passes, then give up.
///
/// The draw sequence on `rng` is fixed (candidate sampling, one uniform per
/// examined rank, one uniform per retry decision), so replaying with the same
/// stream and the same ranker reproduces the session byte for byte.
pub fn simulate_session(
    user: &UserProfile,
    engine: &EngineId,
    catalog: &[LinkEntry],
    behavior: &BehaviorParams,
    session_id: String,
    rng: &mut DetRng,
    ranker: &dyn ResultRanker,
) -> SessionRecord {
    assert!(!catalog.is_empty(), "catalog must not be empty");
    let shown_len = behavior.shown_len.min(catalog.len());

    let mut t = SESSION_EPOCH_MS;
    let mut events = vec![ActionEvent::search(t, "q1")];
    let mut searches = 1usize;
    let mut edits = 0usize;
    let mut shown: Vec<String> = Vec::new();
    let mut clicked: Option<String> = None;

    for pass in 0..behavior.max_passes.max(1) {
        if pass > 0 {
            t += 1000;
            if rng.bernoulli(behavior.edit_prob) {
                edits += 1;
                events.push(ActionEvent::edit_query(t, format!("q{searches}~{edits}")));
            } else {
                searches += 1;
                events.push(ActionEvent::search(t, format!("q{searches}")));
            }
        }
        let candidate_idx = rng.sample_distinct(catalog.len(), shown_len);
        let candidates: Vec<&LinkEntry> = candidate_idx.iter().map(|&i| &catalog[i]).collect();
        let ranked = ranker.rank(user, engine, candidates);
        shown = ranked.iter().map(|l| l.link_id.clone()).collect();

        for (rank, link) in ranked.iter().enumerate() {
            let p = behavior.gamma.powi(rank as i32) * relevance(user, link);
            if rng.uniform() < p {
                clicked = Some(link.link_id.clone());
                break;
            }
        }
        if clicked.is_some() {
            break;
        }
    }
    if let Some(link) = clicked {
        t += 500;
        events.push(ActionEvent::click_link(t, link));
    }

    SessionRecord {
        session_id,
        user_id: user.user_id.clone(),
        engine: engine.clone(),
        events,
        shown_links: shown,
    }
}

/// Stream seed embedded in a generated session id (`s<16 hex digits>`).
pub fn session_stream_seed(session_id: &str) -> Result<u64> {
    session_id
        .strip_prefix('s')
        .and_then(|hex| u64::from_str_radix(hex, 16).ok())
        .ok_or_else(|| {
            Error::Validation(format!(
                "session id '{session_id}' does not embed a stream seed"
            ))
        })
}

fn generate_catalog(cfg: &GenConfig, rng: &mut DetRng) -> Vec<LinkEntry> {
    (0..cfg.catalog_size)
        .map(|i| {
            let publisher = rng.index(cfg.publisher_count.max(1));
            let publisher_popularity = rng.uniform();
            let has_image = rng.bernoulli(0.55);
            let has_audio = rng.bernoulli(0.25);
            let has_external_links = rng.bernoulli(0.4);
            let mut topic = vec![0.0; cfg.dimension];
            topic[0] = rng.normal_with(cfg.topic_quality_mean, cfg.topic_quality_sd);
            for entry in topic.iter_mut().skip(1) {
                *entry = rng.normal_with(0.0, cfg.topic_taste_sd);
            }
            LinkEntry {
                link_id: format!("L{i:05}"),
                publisher_id: format!("P{publisher:03}"),
                publisher_popularity,
                has_image,
                has_audio,
                has_external_links,
                base_ctr: sigmoid(topic[0]),
                topic,
            }
        })
        .collect()
}

fn generate_users(cfg: &GenConfig, rng: &mut DetRng) -> Vec<UserProfile> {
    const FLAG_PROBS: [f64; 3] = [0.5, 0.35, 0.65];
    (0..cfg.user_count)
        .map(|i| {
            let raw: Vec<f64> = EngineId::NAMED
                .iter()
                .map(|_| rng.uniform_in(0.05, 1.0))
                .collect();
            let total: f64 = raw.iter().sum();
            let engine_freq: BTreeMap<EngineId, f64> = EngineId::NAMED
                .iter()
                .cloned()
                .zip(raw.iter().map(|w| w / total))
                .collect();
            let settings_flags: Vec<bool> = (0..cfg.settings_count)
                .map(|k| rng.bernoulli(FLAG_PROBS[k % FLAG_PROBS.len()]))
                .collect();
            let mut pref = vec![0.0; cfg.dimension];
            pref[0] = rng.normal_with(cfg.pref_align_mean, cfg.pref_align_sd);
            if settings_flags.first().copied().unwrap_or(false) {
                pref[0] += cfg.pref_align_bonus;
            }
            for entry in pref.iter_mut().skip(1) {
                *entry = rng.normal_with(0.0, cfg.pref_taste_sd);
            }
            UserProfile {
                user_id: format!("u{i:04}"),
                engine_freq,
                pref,
                settings_flags,
            }
        })
        .collect()
}

fn sample_engine(user: &UserProfile, rng: &mut DetRng) -> EngineId {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (engine, freq) in &user.engine_freq {
        acc += freq;
        if u < acc {
            return engine.clone();
        }
    }
    user.engine_freq
        .keys()
        .next_back()
        .cloned()
        .unwrap_or(EngineId::Baidu)
}

type BucketMap = BTreeMap<(EngineId, SessionLabel), Vec<SessionRecord>>;

/// Quota-driven generation. `extra` widens every bucket beyond its configured
/// quota; the surplus sessions become the evaluation set in
/// [`generate_with_eval`].
fn fill_buckets(cfg: &GenConfig, extra: &BTreeMap<EngineId, LabelQuota>) -> Result<BucketMap> {
    let mut capacity: BTreeMap<(EngineId, SessionLabel), usize> = BTreeMap::new();
    for (engine, quota) in &cfg.quotas {
        for label in SessionLabel::ALL {
            let cap = quota.get(label) + extra.get(engine).map_or(0, |q| q.get(label));
            capacity.insert((engine.clone(), label), cap);
        }
    }
    let mut buckets: BucketMap = capacity
        .keys()
        .map(|k| (k.clone(), Vec::new()))
        .collect();
    let total: usize = capacity.values().sum();
    if total == 0 {
        return Ok(buckets);
    }

    let catalog = {
        let mut rng = DetRng::new(derive_seed(cfg.seed, SALT_CATALOG_USERS));
        // users depend on the same stream, drawn after the catalog
        let catalog = generate_catalog(cfg, &mut rng);
        let users = generate_users(cfg, &mut rng);
        (catalog, users)
    };
    let (catalog, users) = catalog;
    let behavior = cfg.behavior();

    let mut filler = DetRng::new(derive_seed(cfg.seed, SALT_FILLER));
    let mut filled = 0usize;
    let mut attempt = 0u64;
    let mut since_acceptance = 0u64;
    const STALL_CAP: u64 = 400_000;

    while filled < total {
        attempt += 1;
        since_acceptance += 1;
        if since_acceptance > STALL_CAP {
            let (needy, have, want) = capacity
                .iter()
                .filter_map(|(key, &cap)| {
                    let have = buckets[key].len();
                    (have < cap).then_some((key.clone(), have, cap))
                })
                .next()
                .expect("an unfilled bucket exists");
            return Err(Error::Config(format!(
                "unsatisfiable quota: bucket ({}, {}) stuck at {have}/{want} after {attempt} \
                 attempts; adjust quotas or the behavioral parameters",
                needy.0, needy.1
            )));
        }

        let user = &users[filler.index(users.len())];
        let engine = sample_engine(user, &mut filler);
        if !cfg.quotas.contains_key(&engine) {
            continue;
        }
        let stream_seed = derive_seed(cfg.seed, SALT_SESSION_BASE + attempt);
        let mut session_rng = DetRng::new(stream_seed);
        let record = simulate_session(
            user,
            &engine,
            &catalog,
            &behavior,
            format!("s{stream_seed:016x}"),
            &mut session_rng,
            &EngineRanking,
        );
        let label = label_session(&record).expect("simulated sessions are valid");
        let key = (engine, label);
        let bucket = buckets.get_mut(&key).expect("bucket exists for quota engine");
        if bucket.len() < capacity[&key] {
            bucket.push(record);
            filled += 1;
            since_acceptance = 0;
        }
    }
    Ok(buckets)
}

fn corpus_inputs(cfg: &GenConfig) -> (Vec<LinkEntry>, Vec<UserProfile>) {
    let mut rng = DetRng::new(derive_seed(cfg.seed, SALT_CATALOG_USERS));
    let catalog = generate_catalog(cfg, &mut rng);
    let users = generate_users(cfg, &mut rng);
    (catalog, users)
}

/// Generates a corpus whose per-engine label counts match `cfg.quotas`
/// exactly. Identical configs produce byte-identical corpora.
pub fn generate_corpus(cfg: &GenConfig) -> Result<Corpus> {
    cfg.validate()?;
    let (catalog, users) = corpus_inputs(cfg);
    let buckets = fill_buckets(cfg, &BTreeMap::new())?;
    let sessions = interleave(buckets, |_key, all| all);
    Ok(Corpus { users, catalog, sessions })
}

/// Like [`generate_corpus`], but also produces a disjoint evaluation session
/// set with the same quotas, same users, and same catalog. The evaluation
/// sessions never overlap the training sessions, so they can serve as held-out
/// replay input.
pub fn generate_with_eval(cfg: &GenConfig) -> Result<(Corpus, Vec<SessionRecord>)> {
    cfg.validate()?;
    let (catalog, users) = corpus_inputs(cfg);
    let buckets = fill_buckets(cfg, &cfg.quotas.clone())?;

    let mut train_buckets: BucketMap = BTreeMap::new();
    let mut eval_buckets: BucketMap = BTreeMap::new();
    for ((engine, label), sessions) in buckets {
        let train_quota = cfg.quotas[&engine].get(label);
        let mut sessions = sessions;
        let eval_part = sessions.split_off(train_quota.min(sessions.len()));
        train_buckets.insert((engine.clone(), label), sessions);
        eval_buckets.insert((engine, label), eval_part);
    }
    let train = interleave(train_buckets, |_k, v| v);
    let eval = interleave(eval_buckets, |_k, v| v);
    Ok((
        Corpus { users, catalog, sessions: train },
        eval,
    ))
}

/// Flattens buckets back into a deterministic, roughly interleaved session
/// order (sorted by session id, which embeds the attempt-derived stream seed).
fn interleave<F>(buckets: BucketMap, select: F) -> Vec<SessionRecord>
where
    F: Fn(&(EngineId, SessionLabel), Vec<SessionRecord>) -> Vec<SessionRecord>,
{
    let mut all: Vec<SessionRecord> = buckets
        .into_iter()
        .flat_map(|(key, sessions)| select(&key, sessions))
        .collect();
    all.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    all
}

/// Mean relevance of clicked links vs. shown-but-unclicked links over a
/// corpus; the first should exceed the second for the features to carry
/// signal.
pub fn relevance_split(corpus: &Corpus) -> (f64, f64) {
    let users = corpus.user_index();
    let links = corpus.link_index();
    let (mut clicked_sum, mut clicked_n) = (0.0, 0usize);
    let (mut shown_sum, mut shown_n) = (0.0, 0usize);
    for s in &corpus.sessions {
        let Some(user) = users.get(s.user_id.as_str()) else { continue };
        let clicked: std::collections::BTreeSet<&str> = s
            .events
            .iter()
            .filter_map(|e| e.link_id.as_deref())
            .collect();
        for link_id in &s.shown_links {
            let Some(link) = links.get(link_id.as_str()) else { continue };
            let rel = relevance(user, link);
            if clicked.contains(link_id.as_str()) {
                clicked_sum += rel;
                clicked_n += 1;
            } else {
                shown_sum += rel;
                shown_n += 1;
            }
        }
    }
    (
        clicked_sum / clicked_n.max(1) as f64,
        shown_sum / shown_n.max(1) as f64,
    )
}

/// Fraction of (session, shown link) pairs whose relevance to the session's
/// user clears `cfg.relevance_threshold`. A calibration diagnostic.
pub fn relevant_share(corpus: &Corpus, threshold: f64) -> f64 {
    let users = corpus.user_index();
    let links = corpus.link_index();
    let mut over = 0usize;
    let mut total = 0usize;
    for s in &corpus.sessions {
        let Some(user) = users.get(s.user_id.as_str()) else { continue };
        for link_id in &s.shown_links {
            if let Some(link) = links.get(link_id.as_str()) {
                total += 1;
                if relevance(user, link) >= threshold {
                    over += 1;
                }
            }
        }
    }
    over as f64 / total.max(1) as f64
}

pub fn write_catalog_file(path: &Path, catalog: &[LinkEntry]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for link in catalog {
        serde_json::to_writer(&mut w, link)
            .map_err(|e| Error::Format(format!("catalog encode: {e}")))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_catalog_file(path: &Path) -> Result<Vec<LinkEntry>> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("catalog line {}: {e}", lineno + 1))
        })?);
    }
    Ok(out)
}

pub fn write_users_file(path: &Path, users: &[UserProfile]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for user in users {
        serde_json::to_writer(&mut w, user)
            .map_err(|e| Error::Format(format!("users encode: {e}")))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_users_file(path: &Path) -> Result<Vec<UserProfile>> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("users line {}: {e}", lineno + 1))
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> GenConfig {
        let mut cfg = GenConfig {
            quotas: BTreeMap::new(),
            catalog_size: 60,
            user_count: 20,
            shown_len: 6,
            ..GenConfig::default()
        };
        cfg.quotas.insert(
            EngineId::Baidu,
            LabelQuota { once: 3, twice: 2, multiform: 2, futile: 2 },
        );
        cfg.quotas.insert(
            EngineId::Bing,
            LabelQuota { once: 2, twice: 1, multiform: 1, futile: 1 },
        );
        cfg
    }

    fn label_counts(sessions: &[SessionRecord]) -> BTreeMap<(EngineId, SessionLabel), usize> {
        let mut counts = BTreeMap::new();
        for s in sessions {
            let label = label_session(s).unwrap();
            *counts.entry((s.engine.clone(), label)).or_insert(0) += 1;
        }
        counts
    }

    #[test]
    fn quotas_are_matched_exactly() {
        let cfg = tiny_cfg();
        let corpus = generate_corpus(&cfg).unwrap();
        let counts = label_counts(&corpus.sessions);
        for (engine, quota) in &cfg.quotas {
            for label in SessionLabel::ALL {
                let have = counts.get(&(engine.clone(), label)).copied().unwrap_or(0);
                assert_eq!(have, quota.get(label), "bucket ({engine}, {label})");
            }
        }
    }

    #[test]
    fn quota_one_of_each_yields_four_sessions() {
        let mut cfg = tiny_cfg();
        cfg.quotas.clear();
        cfg.quotas.insert(
            EngineId::Sougou,
            LabelQuota { once: 1, twice: 1, multiform: 1, futile: 1 },
        );
        let corpus = generate_corpus(&cfg).unwrap();
        assert_eq!(corpus.sessions.len(), 4);
        let labels: std::collections::BTreeSet<SessionLabel> = corpus
            .sessions
            .iter()
            .map(|s| label_session(s).unwrap())
            .collect();
        assert_eq!(labels.len(), 4);
    }

    #[test]
    fn zero_quotas_yield_empty_session_list() {
        let mut cfg = tiny_cfg();
        cfg.quotas.clear();
        let corpus = generate_corpus(&cfg).unwrap();
        assert!(corpus.sessions.is_empty());
        assert_eq!(corpus.catalog.len(), cfg.catalog_size);
        assert_eq!(corpus.users.len(), cfg.user_count);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = tiny_cfg();
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a, b);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        crate::session::write_sessions(&mut buf_a, &a.sessions).unwrap();
        crate::session::write_sessions(&mut buf_b, &b.sessions).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn every_generated_session_is_valid() {
        let corpus = generate_corpus(&tiny_cfg()).unwrap();
        for s in &corpus.sessions {
            assert!(
                crate::session::validate_session(s).is_empty(),
                "session {}",
                s.session_id
            );
        }
    }

    #[test]
    fn unsatisfiable_config_is_rejected() {
        let mut cfg = tiny_cfg();
        cfg.catalog_size = 0;
        cfg.shown_len = 0;
        assert!(matches!(generate_corpus(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn eval_sessions_are_disjoint_and_quota_exact() {
        let cfg = tiny_cfg();
        let (corpus, eval) = generate_with_eval(&cfg).unwrap();
        let train_ids: std::collections::BTreeSet<&str> = corpus
            .sessions
            .iter()
            .map(|s| s.session_id.as_str())
            .collect();
        assert!(eval.iter().all(|s| !train_ids.contains(s.session_id.as_str())));
        for sessions in [&corpus.sessions, &eval] {
            let counts = label_counts(sessions);
            for (engine, quota) in &cfg.quotas {
                for label in SessionLabel::ALL {
                    let have = counts.get(&(engine.clone(), label)).copied().unwrap_or(0);
                    assert_eq!(have, quota.get(label));
                }
            }
        }
    }

    fn single_link_user(pref0: f64) -> (UserProfile, Vec<LinkEntry>) {
        let user = UserProfile {
            user_id: "u0".into(),
            engine_freq: [(EngineId::Baidu, 1.0)].into_iter().collect(),
            pref: vec![pref0],
            settings_flags: vec![],
        };
        let catalog = vec![LinkEntry {
            link_id: "L0".into(),
            publisher_id: "P0".into(),
            publisher_popularity: 0.5,
            has_image: false,
            has_audio: false,
            has_external_links: false,
            topic: vec![1.0],
            base_ctr: 0.5,
        }];
        (user, catalog)
    }

    #[test]
    fn certain_relevance_clicks_on_first_pass() {
        // sigmoid(1000) == 1.0 in f64, so the click draw always succeeds.
        let (user, catalog) = single_link_user(1000.0);
        let behavior = BehaviorParams { gamma: 1.0, shown_len: 1, max_passes: 4, edit_prob: 0.3 };
        let mut rng = DetRng::new(9);
        let s = simulate_session(
            &user, &EngineId::Baidu, &catalog, &behavior, "sx".into(), &mut rng, &EngineRanking,
        );
        assert_eq!(label_session(&s).unwrap(), SessionLabel::OnceSearch);
        assert_eq!(s.events.len(), 2);
    }

    #[test]
    fn zero_relevance_is_futile() {
        let (user, catalog) = single_link_user(-1000.0);
        let behavior = BehaviorParams { gamma: 0.9, shown_len: 1, max_passes: 4, edit_prob: 0.3 };
        let mut rng = DetRng::new(9);
        let s = simulate_session(
            &user, &EngineId::Baidu, &catalog, &behavior, "sx".into(), &mut rng, &EngineRanking,
        );
        assert_eq!(label_session(&s).unwrap(), SessionLabel::FutileSearch);
    }

    #[test]
    fn same_stream_reproduces_the_session() {
        let cfg = tiny_cfg();
        let corpus = generate_corpus(&cfg).unwrap();
        let users = corpus.user_index();
        let s = &corpus.sessions[0];
        let seed = session_stream_seed(&s.session_id).unwrap();
        let mut rng = DetRng::new(seed);
        let replayed = simulate_session(
            users[s.user_id.as_str()],
            &s.engine,
            &corpus.catalog,
            &cfg.behavior(),
            s.session_id.clone(),
            &mut rng,
            &EngineRanking,
        );
        assert_eq!(&replayed, s);
    }

    #[test]
    fn clicked_links_are_more_relevant_than_unclicked() {
        let corpus = generate_corpus(&GenConfig::default()).unwrap();
        let (clicked, unclicked) = relevance_split(&corpus);
        assert!(
            clicked > unclicked,
            "clicked mean {clicked} vs unclicked mean {unclicked}"
        );
    }

    #[test]
    fn catalog_and_users_round_trip_through_files() {
        let cfg = tiny_cfg();
        let corpus = generate_corpus(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cat_path = dir.path().join("catalog.jsonl");
        let users_path = dir.path().join("users.jsonl");
        write_catalog_file(&cat_path, &corpus.catalog).unwrap();
        write_users_file(&users_path, &corpus.users).unwrap();
        assert_eq!(read_catalog_file(&cat_path).unwrap(), corpus.catalog);
        assert_eq!(read_users_file(&users_path).unwrap(), corpus.users);
    }
}
