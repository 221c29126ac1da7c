//! Labeled example table: one example per session.
//!
//! A row combines link-side predictors of the session's target link (observed
//! click-through rate, publisher popularity, media flags) with user-side
//! predictors (empirical engine-usage frequency, personalization settings).
//! Search and edit counts are deliberately excluded: they encode the label.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::aggregate::Aggregates;
use crate::corpus::{LinkEntry, UserProfile};
use crate::error::Error;
use crate::rng::{derive_seed, DetRng};
use crate::session::{label_session, ActionKind, EngineId, SessionLabel, SessionRecord};
use crate::{Mat, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Numeric,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    Link,
    User,
    Session,
}

/// One feature column: its name is the column identity.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDescriptor {
    pub name: String,
    pub kind: FeatureKind,
    pub source: FeatureSource,
}

/// Ordered feature columns; the order is part of the dataset contract and is
/// persisted with every dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub columns: Vec<FeatureDescriptor>,
}

impl FeatureSpec {
    /// The fixed feature inventory, parameterized only by the number of
    /// personalization settings flags.
    pub fn canonical(settings_count: usize) -> Self {
        let mut columns = vec![
            FeatureDescriptor {
                name: "ctr".into(),
                kind: FeatureKind::Numeric,
                source: FeatureSource::Link,
            },
            FeatureDescriptor {
                name: "publisher_popularity".into(),
                kind: FeatureKind::Numeric,
                source: FeatureSource::Link,
            },
            FeatureDescriptor {
                name: "has_image".into(),
                kind: FeatureKind::Binary,
                source: FeatureSource::Link,
            },
            FeatureDescriptor {
                name: "has_audio".into(),
                kind: FeatureKind::Binary,
                source: FeatureSource::Link,
            },
            FeatureDescriptor {
                name: "has_external_links".into(),
                kind: FeatureKind::Binary,
                source: FeatureSource::Link,
            },
            FeatureDescriptor {
                name: "engine_freq".into(),
                kind: FeatureKind::Numeric,
                source: FeatureSource::User,
            },
        ];
        for k in 0..settings_count {
            columns.push(FeatureDescriptor {
                name: format!("settings_{k}"),
                kind: FeatureKind::Binary,
                source: FeatureSource::User,
            });
        }
        FeatureSpec { columns }
    }

    /// Rebuilds a descriptor from a persisted column name.
    pub fn descriptor_from_name(name: &str) -> FeatureDescriptor {
        let kind = if name.starts_with("has_") || name.starts_with("settings_") {
            FeatureKind::Binary
        } else {
            FeatureKind::Numeric
        };
        let source = match name {
            "ctr" | "publisher_popularity" => FeatureSource::Link,
            _ if name.starts_with("has_") => FeatureSource::Link,
            "engine_freq" => FeatureSource::User,
            _ if name.starts_with("settings_") => FeatureSource::User,
            _ => FeatureSource::Session,
        };
        FeatureDescriptor { name: name.to_string(), kind, source }
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

/// Feature matrix plus per-example label, engine, and session id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Mat,
    pub columns: FeatureSpec,
    pub y: Vec<SessionLabel>,
    pub engine: Vec<EngineId>,
    pub session_ids: Vec<String>,
}

impl LabeledDataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    /// Class indices of the labels.
    pub fn y_indices(&self) -> Vec<usize> {
        self.y.iter().map(|l| l.index()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if self.x.rows() != n || self.engine.len() != n || self.session_ids.len() != n {
            return Err(Error::Validation(format!(
                "dataset length mismatch: x has {} rows, y {}, engine {}, session_ids {}",
                self.x.rows(),
                n,
                self.engine.len(),
                self.session_ids.len()
            )));
        }
        if self.x.cols() != self.columns.len() {
            return Err(Error::Validation(format!(
                "dataset has {} matrix columns but {} descriptors",
                self.x.cols(),
                self.columns.len()
            )));
        }
        if let Some(bad) = self.x.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "dataset contains a non-finite value ({bad})"
            )));
        }
        Ok(())
    }

    /// Copies the given rows into a new dataset.
    pub fn subset(&self, rows: &[usize]) -> LabeledDataset {
        let mut x = Mat::zeros(rows.len(), self.p());
        for (ro, &ri) in rows.iter().enumerate() {
            x.row_mut(ro).copy_from_slice(self.x.row(ri));
        }
        LabeledDataset {
            x,
            columns: self.columns.clone(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            engine: rows.iter().map(|&i| self.engine[i].clone()).collect(),
            session_ids: rows.iter().map(|&i| self.session_ids[i].clone()).collect(),
        }
    }
}

/// The link a session's feature row describes: the first clicked link, or the
/// top-ranked shown link when nothing was clicked.
pub fn target_link(s: &SessionRecord) -> Result<&str> {
    for event in &s.events {
        if event.kind == ActionKind::ClickLink {
            if let Some(link) = &event.link_id {
                return Ok(link);
            }
        }
    }
    s.shown_links
        .first()
        .map(String::as_str)
        .ok_or_else(|| {
            Error::Validation(format!(
                "session '{}' has no shown links to pick a target from",
                s.session_id
            ))
        })
}

fn flag(b: bool) -> Scalar {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Assembles the feature row for one (link, user, engine) triple.
pub fn feature_row(
    link: &LinkEntry,
    user: &UserProfile,
    engine: &EngineId,
    stats: &Aggregates,
    settings_count: usize,
) -> Vec<Scalar> {
    let mut row = vec![
        stats.link_ctr(&link.link_id),
        link.publisher_popularity,
        flag(link.has_image),
        flag(link.has_audio),
        flag(link.has_external_links),
        stats.user_frequency(&user.user_id, engine),
    ];
    for k in 0..settings_count {
        row.push(flag(user.settings_flags.get(k).copied().unwrap_or(false)));
    }
    row
}

/// Number of settings flags implied by a canonical column-name list; fails
/// if the names do not match the canonical inventory.
pub fn settings_count_from_names(names: &[String]) -> Result<usize> {
    if names.len() < 6 {
        return Err(Error::Validation(format!(
            "feature list has {} columns, the canonical inventory needs at least 6",
            names.len()
        )));
    }
    let settings_count = names.len() - 6;
    let canonical = FeatureSpec::canonical(settings_count);
    let canonical_names: Vec<&str> = canonical.names();
    if names.iter().map(String::as_str).ne(canonical_names.iter().copied()) {
        return Err(Error::Validation(format!(
            "feature columns {names:?} do not match the canonical inventory"
        )));
    }
    Ok(settings_count)
}

/// Builds the labeled dataset, one row per session in input order.
pub fn featurize(
    sessions: &[SessionRecord],
    stats: &Aggregates,
    catalog: &[LinkEntry],
    users: &[UserProfile],
    settings_count: usize,
) -> Result<LabeledDataset> {
    let link_index: BTreeMap<&str, &LinkEntry> =
        catalog.iter().map(|l| (l.link_id.as_str(), l)).collect();
    let user_index: BTreeMap<&str, &UserProfile> =
        users.iter().map(|u| (u.user_id.as_str(), u)).collect();
    let spec = FeatureSpec::canonical(settings_count);

    let mut x = Mat::zeros(sessions.len(), spec.len());
    let mut y = Vec::with_capacity(sessions.len());
    let mut engine = Vec::with_capacity(sessions.len());
    let mut session_ids = Vec::with_capacity(sessions.len());
    for (i, session) in sessions.iter().enumerate() {
        let label = label_session(session)?;
        let target = target_link(session)?;
        let link = link_index
            .get(target)
            .ok_or_else(|| Error::missing("link", target))?;
        let user = user_index
            .get(session.user_id.as_str())
            .ok_or_else(|| Error::missing("user", &session.user_id))?;
        let row = feature_row(link, user, &session.engine, stats, settings_count);
        x.row_mut(i).copy_from_slice(&row);
        y.push(label);
        engine.push(session.engine.clone());
        session_ids.push(session.session_id.clone());
    }

    let ds = LabeledDataset { x, columns: spec, y, engine, session_ids };
    ds.validate()?;
    Ok(ds)
}

/// Stratified train/test split by `(engine, label)`.
///
/// Deterministic given the seed. Strata with fewer than two examples go to
/// the training side with a warning; every other stratum contributes
/// `round(len · test_fraction)` test examples (capped so at least one example
/// stays in train).
pub fn split_train_test(
    ds: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    ds.validate()?;

    let mut strata: BTreeMap<(EngineId, SessionLabel), Vec<usize>> = BTreeMap::new();
    for i in 0..ds.n() {
        strata
            .entry((ds.engine[i].clone(), ds.y[i]))
            .or_default()
            .push(i);
    }

    let mut rng = DetRng::new(derive_seed(seed, 0x51_17));
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for ((engine, label), mut rows) in strata {
        if rows.len() < 2 {
            log::warn!(
                "stratum ({engine}, {label}) has {} example(s); keeping it in train",
                rows.len()
            );
            train_rows.extend(rows);
            continue;
        }
        rng.shuffle(&mut rows);
        let want = (rows.len() as f64 * test_fraction).round() as usize;
        let test_count = want.min(rows.len() - 1);
        test_rows.extend_from_slice(&rows[..test_count]);
        train_rows.extend_from_slice(&rows[test_count..]);
    }
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    Ok((ds.subset(&train_rows), ds.subset(&test_rows)))
}

/// Writes the dataset as CSV: `session_id`, the feature columns in spec
/// order, then `label` and `engine` as trailing columns.
pub fn write_dataset_file(path: &Path, ds: &LabeledDataset) -> Result<()> {
    ds.validate()?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["session_id".to_string()];
    header.extend(ds.columns.names().iter().map(|s| s.to_string()));
    header.push("label".into());
    header.push("engine".into());
    w.write_record(&header)
        .map_err(|e| Error::Format(format!("dataset header: {e}")))?;
    for i in 0..ds.n() {
        let mut record = vec![ds.session_ids[i].clone()];
        record.extend(ds.x.row(i).iter().map(|v| v.to_string()));
        record.push(ds.y[i].to_string());
        record.push(ds.engine[i].to_string());
        w.write_record(&record)
            .map_err(|e| Error::Format(format!("dataset row {i}: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_file(path: &Path) -> Result<LabeledDataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r
        .headers()
        .map_err(|e| Error::Format(format!("dataset header: {e}")))?
        .clone();
    let fields: Vec<&str> = header.iter().collect();
    if fields.first() != Some(&"session_id")
        || fields.len() < 3
        || fields[fields.len() - 2] != "label"
        || fields[fields.len() - 1] != "engine"
    {
        return Err(Error::Format(
            "dataset header must be session_id, <features...>, label, engine".into(),
        ));
    }
    let feature_names = &fields[1..fields.len() - 2];
    let columns = FeatureSpec {
        columns: feature_names
            .iter()
            .map(|n| FeatureSpec::descriptor_from_name(n))
            .collect(),
    };

    let p = columns.len();
    let mut rows: Vec<Vec<Scalar>> = Vec::new();
    let mut y = Vec::new();
    let mut engine = Vec::new();
    let mut session_ids = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("dataset row {}: {e}", i + 1)))?;
        if record.len() != p + 3 {
            return Err(Error::Format(format!(
                "dataset row {} has {} fields, expected {}",
                i + 1,
                record.len(),
                p + 3
            )));
        }
        session_ids.push(record[0].to_string());
        let mut row = Vec::with_capacity(p);
        for j in 0..p {
            row.push(
                record[j + 1]
                    .parse::<Scalar>()
                    .map_err(|e| Error::Format(format!("dataset row {}: {e}", i + 1)))?,
            );
        }
        rows.push(row);
        y.push(SessionLabel::from_str(&record[p + 1])?);
        engine.push(EngineId::from(&record[p + 2]));
    }

    let ds = LabeledDataset {
        x: if rows.is_empty() {
            Mat::zeros(0, p)
        } else {
            Mat::from_rows(&rows)
        },
        columns,
        y,
        engine,
        session_ids,
    };
    ds.validate()?;
    Ok(ds)
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureKind::Numeric => write!(f, "numeric"),
            FeatureKind::Binary => write!(f, "binary"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::LinkStats;
    use crate::session::ActionEvent;

    fn fixture() -> (Vec<SessionRecord>, Aggregates, Vec<LinkEntry>, Vec<UserProfile>) {
        let session = SessionRecord {
            session_id: "s1".into(),
            user_id: "u1".into(),
            engine: EngineId::Baidu,
            events: vec![
                ActionEvent::search(0, "q"),
                ActionEvent::click_link(1, "L1"),
            ],
            shown_links: vec!["L1".into(), "L2".into()],
        };
        let mut stats = Aggregates::default();
        stats.links.insert(
            "L1".into(),
            LinkStats { link_id: "L1".into(), impressions: 10, clicks: 5 },
        );
        stats.users.insert(
            "u1".into(),
            crate::aggregate::UserStats {
                user_id: "u1".into(),
                counts: [(EngineId::Baidu, 2), (EngineId::Bing, 2)].into_iter().collect(),
            },
        );
        let link = |id: &str| LinkEntry {
            link_id: id.into(),
            publisher_id: "P1".into(),
            publisher_popularity: 0.8,
            has_image: true,
            has_audio: false,
            has_external_links: true,
            topic: vec![0.0],
            base_ctr: 0.5,
        };
        let user = UserProfile {
            user_id: "u1".into(),
            engine_freq: [(EngineId::Baidu, 1.0)].into_iter().collect(),
            pref: vec![0.0],
            settings_flags: vec![true, false],
        };
        (vec![session], stats, vec![link("L1"), link("L2")], vec![user])
    }

    #[test]
    fn row_is_assembled_in_fixed_order() {
        let (sessions, stats, catalog, users) = fixture();
        let ds = featurize(&sessions, &stats, &catalog, &users, 2).unwrap();
        // ctr = 5/10, popularity, image, audio, external, engine_freq = 2/4, settings
        assert_eq!(ds.x.row(0), &[0.5, 0.8, 1.0, 0.0, 1.0, 0.5, 1.0, 0.0]);
        assert_eq!(ds.y, vec![SessionLabel::OnceSearch]);
        assert_eq!(
            ds.columns.names(),
            vec![
                "ctr",
                "publisher_popularity",
                "has_image",
                "has_audio",
                "has_external_links",
                "engine_freq",
                "settings_0",
                "settings_1"
            ]
        );
    }

    #[test]
    fn empty_input_gives_empty_dataset() {
        let (_, stats, catalog, users) = fixture();
        let ds = featurize(&[], &stats, &catalog, &users, 2).unwrap();
        assert_eq!(ds.n(), 0);
        assert_eq!(ds.p(), 8);
    }

    #[test]
    fn target_link_rules() {
        let (mut sessions, ..) = fixture();
        assert_eq!(target_link(&sessions[0]).unwrap(), "L1");

        // futile: top-ranked shown link
        sessions[0].events.truncate(1);
        assert_eq!(target_link(&sessions[0]).unwrap(), "L1");
        sessions[0].shown_links = vec!["L7".into(), "L9".into()];
        assert_eq!(target_link(&sessions[0]).unwrap(), "L7");

        // two clicks: the first one wins
        sessions[0].shown_links = vec!["L2".into(), "L5".into()];
        sessions[0].events.push(ActionEvent::click_link(2, "L2"));
        sessions[0].events.push(ActionEvent::click_link(3, "L5"));
        assert_eq!(target_link(&sessions[0]).unwrap(), "L2");

        sessions[0].shown_links.clear();
        sessions[0].events.truncate(1);
        assert!(target_link(&sessions[0]).is_err());
    }

    #[test]
    fn missing_link_or_user_is_named_in_the_error() {
        let (sessions, stats, catalog, users) = fixture();
        let err = featurize(&sessions, &stats, &[], &users, 2).unwrap_err();
        assert!(err.to_string().contains("link 'L1'"), "{err}");
        let err = featurize(&sessions, &stats, &catalog, &[], 2).unwrap_err();
        assert!(err.to_string().contains("user 'u1'"), "{err}");
    }

    #[test]
    fn featurize_is_permutation_equivariant() {
        let cfg = crate::corpus::GenConfig {
            catalog_size: 50,
            user_count: 10,
            shown_len: 5,
            quotas: [(
                EngineId::Baidu,
                crate::corpus::LabelQuota { once: 4, twice: 3, multiform: 3, futile: 2 },
            )]
            .into_iter()
            .collect(),
            ..crate::corpus::GenConfig::default()
        };
        let corpus = crate::corpus::generate_corpus(&cfg).unwrap();
        let stats = crate::aggregate::run_aggregation(&corpus.sessions, 1).unwrap();
        let ds = featurize(&corpus.sessions, &stats, &corpus.catalog, &corpus.users, 3).unwrap();

        let mut reversed = corpus.sessions.clone();
        reversed.reverse();
        let ds_rev = featurize(&reversed, &stats, &corpus.catalog, &corpus.users, 3).unwrap();
        for i in 0..ds.n() {
            let j = ds.n() - 1 - i;
            assert_eq!(ds.x.row(i), ds_rev.x.row(j));
            assert_eq!(ds.session_ids[i], ds_rev.session_ids[j]);
        }
    }

    #[test]
    fn dataset_csv_round_trips() {
        let (sessions, stats, catalog, users) = fixture();
        let ds = featurize(&sessions, &stats, &catalog, &users, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        write_dataset_file(&path, &ds).unwrap();
        let back = read_dataset_file(&path).unwrap();
        assert_eq!(back, ds);

        // a second write of the read-back dataset is byte-identical
        let path2 = dir.path().join("ds2.csv");
        write_dataset_file(&path2, &back).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    fn balanced_dataset(n_per: usize) -> LabeledDataset {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut engine = Vec::new();
        let mut ids = Vec::new();
        for label in SessionLabel::ALL {
            for i in 0..n_per {
                rows.push(vec![label.index() as f64, i as f64]);
                y.push(label);
                engine.push(EngineId::Baidu);
                ids.push(format!("s{}-{i}", label.index()));
            }
        }
        LabeledDataset {
            x: Mat::from_rows(&rows),
            columns: FeatureSpec {
                columns: vec![
                    FeatureSpec::descriptor_from_name("f0"),
                    FeatureSpec::descriptor_from_name("f1"),
                ],
            },
            y,
            engine,
            session_ids: ids,
        }
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let ds = balanced_dataset(4);
        let (train, test) = split_train_test(&ds, 0.5, 7).unwrap();
        assert_eq!(train.n(), 8);
        assert_eq!(test.n(), 8);
        for label in SessionLabel::ALL {
            assert_eq!(train.y.iter().filter(|&&l| l == label).count(), 2);
            assert_eq!(test.y.iter().filter(|&&l| l == label).count(), 2);
        }
        let (train2, test2) = split_train_test(&ds, 0.5, 7).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);

        // disjoint union
        let mut all: Vec<&str> = train
            .session_ids
            .iter()
            .chain(test.session_ids.iter())
            .map(String::as_str)
            .collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), ds.n());
    }

    #[test]
    fn singleton_stratum_stays_in_train() {
        let mut ds = balanced_dataset(2);
        // turn one Once example into a third Futile, leaving Once a singleton
        ds.y[0] = SessionLabel::FutileSearch;
        let (train, test) = split_train_test(&ds, 0.5, 7).unwrap();
        let once_in_train = train
            .y
            .iter()
            .filter(|&&l| l == SessionLabel::OnceSearch)
            .count();
        let once_in_test = test
            .y
            .iter()
            .filter(|&&l| l == SessionLabel::OnceSearch)
            .count();
        assert_eq!((once_in_train, once_in_test), (1, 0));
    }

    #[test]
    fn bad_test_fraction_is_rejected() {
        let ds = balanced_dataset(2);
        assert!(split_train_test(&ds, 0.0, 1).is_err());
        assert!(split_train_test(&ds, 1.0, 1).is_err());
    }
}
