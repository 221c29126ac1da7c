//! Shard-invariant map/reduce aggregation over session logs.
//!
//! The pass partitions sessions into contiguous shards, maps each shard to
//! `(key, count)` pairs, groups by key, and reduces by summation. Because the
//! reducer is associative and commutative and grouping is order-free, the
//! output is identical for any shard count and any input permutation.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::session::{validate_session, ActionKind, EngineId, SessionRecord};
use crate::Result;

/// Aggregation key kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum KeyKind {
    LinkImpression,
    LinkClick,
    UserEngineUse,
}

/// Composite aggregation key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AggKey {
    pub kind: KeyKind,
    pub id: String,
}

impl AggKey {
    fn user_engine(user_id: &str, engine: &EngineId) -> Self {
        AggKey {
            kind: KeyKind::UserEngineUse,
            id: format!("{user_id}|{engine}"),
        }
    }
}

/// One emitted `(key, count)` pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyValue {
    pub key: AggKey,
    pub value: u64,
}

/// Per-link aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub link_id: String,
    pub impressions: u64,
    pub clicks: u64,
}

impl LinkStats {
    /// Click-through rate with a guarded denominator; clamped to `[0, 1]` so
    /// degenerate inputs (repeated clicks on one impression) stay in range.
    pub fn ctr(&self) -> f64 {
        (self.clicks as f64 / self.impressions.max(1) as f64).min(1.0)
    }
}

/// Per-user aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserStats {
    pub user_id: String,
    /// Session counts per engine.
    pub counts: BTreeMap<EngineId, u64>,
}

impl UserStats {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Usage frequency of one engine; frequencies over all engines sum to 1
    /// whenever the user has any session at all.
    pub fn frequency(&self, engine: &EngineId) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.counts.get(engine).copied().unwrap_or(0) as f64 / total as f64
    }
}

/// Output of an aggregation pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregates {
    pub links: BTreeMap<String, LinkStats>,
    pub users: BTreeMap<String, UserStats>,
    /// Sessions dropped for failing validation.
    pub skipped: usize,
}

impl Aggregates {
    pub fn link_ctr(&self, link_id: &str) -> f64 {
        self.links.get(link_id).map_or(0.0, LinkStats::ctr)
    }

    pub fn user_frequency(&self, user_id: &str, engine: &EngineId) -> f64 {
        self.users
            .get(user_id)
            .map_or(0.0, |u| u.frequency(engine))
    }
}

/// Maps one shard of sessions to `(key, 1)` pairs: one `LinkImpression` per
/// shown link, one `LinkClick` per click event, one `UserEngineUse` per
/// session. Invalid sessions are skipped and tallied, never fatal.
pub fn map_shard(sessions: &[SessionRecord]) -> (Vec<KeyValue>, usize) {
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for s in sessions {
        if !validate_session(s).is_empty() {
            skipped += 1;
            continue;
        }
        for link in &s.shown_links {
            pairs.push(KeyValue {
                key: AggKey { kind: KeyKind::LinkImpression, id: link.clone() },
                value: 1,
            });
        }
        for event in &s.events {
            if event.kind == ActionKind::ClickLink {
                if let Some(link) = &event.link_id {
                    pairs.push(KeyValue {
                        key: AggKey { kind: KeyKind::LinkClick, id: link.clone() },
                        value: 1,
                    });
                }
            }
        }
        pairs.push(KeyValue {
            key: AggKey::user_engine(&s.user_id, &s.engine),
            value: 1,
        });
    }
    (pairs, skipped)
}

/// The reducer: a plain sum, associative and commutative.
pub fn reduce(values: &[u64]) -> u64 {
    values.iter().sum()
}

/// Runs the full pass over `shard_count` contiguous shards.
pub fn run_aggregation(sessions: &[SessionRecord], shard_count: usize) -> Result<Aggregates> {
    if shard_count == 0 {
        return Err(Error::Config("shard_count must be at least 1".into()));
    }
    let n = sessions.len();
    let mut grouped: BTreeMap<AggKey, Vec<u64>> = BTreeMap::new();
    let mut skipped = 0;
    for shard_idx in 0..shard_count {
        let lo = shard_idx * n / shard_count;
        let hi = (shard_idx + 1) * n / shard_count;
        let (pairs, shard_skipped) = map_shard(&sessions[lo..hi]);
        skipped += shard_skipped;
        for kv in pairs {
            grouped.entry(kv.key).or_default().push(kv.value);
        }
    }

    let mut out = Aggregates { skipped, ..Aggregates::default() };
    for (key, values) in grouped {
        let total = reduce(&values);
        match key.kind {
            KeyKind::LinkImpression => {
                out.links
                    .entry(key.id.clone())
                    .or_insert_with(|| LinkStats { link_id: key.id, impressions: 0, clicks: 0 })
                    .impressions = total;
            }
            KeyKind::LinkClick => {
                out.links
                    .entry(key.id.clone())
                    .or_insert_with(|| LinkStats { link_id: key.id, impressions: 0, clicks: 0 })
                    .clicks = total;
            }
            KeyKind::UserEngineUse => {
                let (user_id, engine) = key
                    .id
                    .split_once('|')
                    .expect("user-engine keys are 'user|engine'");
                out.users
                    .entry(user_id.to_string())
                    .or_insert_with(|| UserStats {
                        user_id: user_id.to_string(),
                        counts: BTreeMap::new(),
                    })
                    .counts
                    .entry(EngineId::from(engine))
                    .and_modify(|c| *c += total)
                    .or_insert(total);
            }
        }
    }
    Ok(out)
}

pub fn write_link_stats_file(path: &Path, links: &BTreeMap<String, LinkStats>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for stats in links.values() {
        serde_json::to_writer(&mut w, stats)
            .map_err(|e| Error::Format(format!("link stats encode: {e}")))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_user_stats_file(path: &Path, users: &BTreeMap<String, UserStats>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for stats in users.values() {
        serde_json::to_writer(&mut w, stats)
            .map_err(|e| Error::Format(format!("user stats encode: {e}")))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_link_stats_file(path: &Path) -> Result<BTreeMap<String, LinkStats>> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = BTreeMap::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let stats: LinkStats = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("link stats line {}: {e}", lineno + 1)))?;
        out.insert(stats.link_id.clone(), stats);
    }
    Ok(out)
}

pub fn read_user_stats_file(path: &Path) -> Result<BTreeMap<String, UserStats>> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = BTreeMap::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let stats: UserStats = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("user stats line {}: {e}", lineno + 1)))?;
        out.insert(stats.user_id.clone(), stats);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{ActionEvent, SessionLabel};
    use proptest::prelude::*;

    fn ten_link_session() -> SessionRecord {
        let shown: Vec<String> = (0..10).map(|i| format!("L{i}")).collect();
        SessionRecord {
            session_id: "s1".into(),
            user_id: "u1".into(),
            engine: EngineId::Baidu,
            events: vec![
                ActionEvent::search(0, "q"),
                ActionEvent::click_link(1, "L3"),
            ],
            shown_links: shown,
        }
    }

    #[test]
    fn empty_shard_maps_to_nothing() {
        let (pairs, skipped) = map_shard(&[]);
        assert!(pairs.is_empty());
        assert_eq!(skipped, 0);
    }

    #[test]
    fn one_session_emits_expected_pairs() {
        let (pairs, skipped) = map_shard(&[ten_link_session()]);
        assert_eq!(skipped, 0);
        let impressions = pairs.iter().filter(|p| p.key.kind == KeyKind::LinkImpression).count();
        let clicks = pairs.iter().filter(|p| p.key.kind == KeyKind::LinkClick).count();
        let uses = pairs.iter().filter(|p| p.key.kind == KeyKind::UserEngineUse).count();
        assert_eq!((impressions, clicks, uses), (10, 1, 1));
        assert_eq!(pairs.len(), 12);
    }

    #[test]
    fn duplicated_session_doubles_counts() {
        let s = ten_link_session();
        let single = run_aggregation(&[s.clone()], 1).unwrap();
        let double = run_aggregation(&[s.clone(), s], 1).unwrap();
        assert_eq!(double.links["L3"].clicks, 2 * single.links["L3"].clicks);
        assert_eq!(double.links["L0"].impressions, 2 * single.links["L0"].impressions);
        assert_eq!(double.users["u1"].total(), 2 * single.users["u1"].total());
    }

    #[test]
    fn invalid_sessions_are_skipped_not_fatal() {
        let mut bad = ten_link_session();
        bad.events[1].link_id = Some("unknown".into());
        let agg = run_aggregation(&[ten_link_session(), bad], 1).unwrap();
        assert_eq!(agg.skipped, 1);
        assert_eq!(agg.links["L3"].clicks, 1);
    }

    #[test]
    fn reduce_sums() {
        assert_eq!(reduce(&[]), 0);
        assert_eq!(reduce(&[1, 1, 1]), 3);
    }

    #[test]
    fn shard_counts_do_not_change_the_result() {
        let corpus = crate::corpus::generate_corpus(&small_corpus_cfg()).unwrap();
        let reference = run_aggregation(&corpus.sessions, 1).unwrap();
        for shards in [2, 3, 8] {
            assert_eq!(run_aggregation(&corpus.sessions, shards).unwrap(), reference);
        }
    }

    #[test]
    fn permuting_sessions_does_not_change_the_result() {
        let corpus = crate::corpus::generate_corpus(&small_corpus_cfg()).unwrap();
        let reference = run_aggregation(&corpus.sessions, 3).unwrap();
        let mut reversed = corpus.sessions.clone();
        reversed.reverse();
        assert_eq!(run_aggregation(&reversed, 3).unwrap(), reference);
    }

    #[test]
    fn conservation_of_impressions_and_clicks() {
        let corpus = crate::corpus::generate_corpus(&small_corpus_cfg()).unwrap();
        let agg = run_aggregation(&corpus.sessions, 4).unwrap();
        let shown_total: usize = corpus.sessions.iter().map(|s| s.shown_links.len()).sum();
        let click_total: usize = corpus
            .sessions
            .iter()
            .flat_map(|s| &s.events)
            .filter(|e| e.kind == ActionKind::ClickLink)
            .count();
        let agg_impressions: u64 = agg.links.values().map(|l| l.impressions).sum();
        let agg_clicks: u64 = agg.links.values().map(|l| l.clicks).sum();
        assert_eq!(agg_impressions as usize, shown_total);
        assert_eq!(agg_clicks as usize, click_total);
    }

    #[test]
    fn user_engine_totals_match_quotas() {
        let cfg = small_corpus_cfg();
        let corpus = crate::corpus::generate_corpus(&cfg).unwrap();
        let agg = run_aggregation(&corpus.sessions, 2).unwrap();
        let baidu_total: u64 = agg
            .users
            .values()
            .filter_map(|u| u.counts.get(&EngineId::Baidu))
            .sum();
        let quota = &cfg.quotas[&EngineId::Baidu];
        assert_eq!(baidu_total as usize, quota.total());
    }

    #[test]
    fn zero_click_corpus_has_zero_ctr() {
        let mut s = ten_link_session();
        s.events.truncate(1);
        let agg = run_aggregation(&[s], 1).unwrap();
        assert!(agg.links.values().all(|l| l.ctr() == 0.0));
    }

    #[test]
    fn frequencies_sum_to_one() {
        let corpus = crate::corpus::generate_corpus(&small_corpus_cfg()).unwrap();
        let agg = run_aggregation(&corpus.sessions, 1).unwrap();
        for user in agg.users.values() {
            let sum: f64 = user
                .counts
                .keys()
                .map(|e| user.frequency(e))
                .sum();
            assert!((sum - 1.0).abs() < 1e-9, "user {} sums to {sum}", user.user_id);
        }
    }

    #[test]
    fn stats_files_round_trip() {
        let corpus = crate::corpus::generate_corpus(&small_corpus_cfg()).unwrap();
        let agg = run_aggregation(&corpus.sessions, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let links_path = dir.path().join("link_stats.jsonl");
        let users_path = dir.path().join("user_stats.jsonl");
        write_link_stats_file(&links_path, &agg.links).unwrap();
        write_user_stats_file(&users_path, &agg.users).unwrap();
        assert_eq!(read_link_stats_file(&links_path).unwrap(), agg.links);
        assert_eq!(read_user_stats_file(&users_path).unwrap(), agg.users);
    }

    fn small_corpus_cfg() -> crate::corpus::GenConfig {
        let mut cfg = crate::corpus::GenConfig {
            quotas: BTreeMap::new(),
            catalog_size: 80,
            user_count: 25,
            shown_len: 8,
            ..crate::corpus::GenConfig::default()
        };
        cfg.quotas.insert(
            EngineId::Baidu,
            crate::corpus::LabelQuota { once: 5, twice: 4, multiform: 4, futile: 3 },
        );
        cfg.quotas.insert(
            EngineId::Sougou,
            crate::corpus::LabelQuota { once: 3, twice: 3, multiform: 3, futile: 2 },
        );
        cfg
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn reduce_is_split_invariant(values in proptest::collection::vec(0u64..1000, 0..40), split in 0usize..40) {
            let split = split.min(values.len());
            let merged = reduce(&[reduce(&values[..split]), reduce(&values[split..])]);
            prop_assert_eq!(merged, reduce(&values));
        }
    }

    #[test]
    fn label_oracle_cross_check() {
        // Guard for the fixture session used above.
        assert_eq!(
            crate::session::label_session(&ten_link_session()).unwrap(),
            SessionLabel::OnceSearch
        );
    }
}
