//! Session records and the four-way outcome labeling rule.
//!
//! A session is one user's time-ordered search/edit/click events on one
//! engine, together with the ranked result list shown after the final search.
//! Sessions arrive pre-segmented; no idle-timeout splitting happens here.
//!
//! The wire format is newline-delimited JSON, one session per line, with
//! fields `session_id`, `user_id`, `engine`, `events` (array of
//! `{kind, timestamp, query_text?, link_id?}`), and `shown_links`.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;
use crate::Result;

/// Search engine identifier. The three named engines are the reporting set;
/// anything else is carried verbatim.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EngineId {
    Baidu,
    Sougou,
    Bing,
    Other(String),
}

impl EngineId {
    /// The named engines, in fixed reporting order.
    pub const NAMED: [EngineId; 3] = [EngineId::Baidu, EngineId::Sougou, EngineId::Bing];

    pub fn as_str(&self) -> &str {
        match self {
            EngineId::Baidu => "baidu",
            EngineId::Sougou => "sougou",
            EngineId::Bing => "bing",
            EngineId::Other(name) => name,
        }
    }

    /// Display name used in report tables.
    pub fn display_name(&self) -> String {
        match self {
            EngineId::Other(name) => name.clone(),
            _ => {
                let s = self.as_str();
                let mut c = s.chars();
                match c.next() {
                    Some(first) => first.to_uppercase().chain(c).collect(),
                    None => String::new(),
                }
            }
        }
    }
}

impl From<&str> for EngineId {
    fn from(s: &str) -> Self {
        match s {
            "baidu" => EngineId::Baidu,
            "sougou" => EngineId::Sougou,
            "bing" => EngineId::Bing,
            other => EngineId::Other(other.to_string()),
        }
    }
}

impl fmt::Display for EngineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for EngineId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for EngineId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        if s.is_empty() {
            return Err(D::Error::custom("empty engine id"));
        }
        Ok(EngineId::from(s.as_str()))
    }
}

/// Kind of a logged user action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    /// A new free-text query.
    Search,
    /// A modification of the immediately preceding query, flagged by the
    /// log producer.
    EditQuery,
    ClickLink,
}

/// One logged event. `query_text` must be present exactly for `Search` and
/// `EditQuery`, `link_id` exactly for `ClickLink`; [`validate_session`]
/// enforces this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionEvent {
    pub kind: ActionKind,
    /// Milliseconds since epoch; never negative in a valid session.
    pub timestamp: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_id: Option<String>,
}

impl ActionEvent {
    pub fn search(timestamp: i64, query: impl Into<String>) -> Self {
        ActionEvent {
            kind: ActionKind::Search,
            timestamp,
            query_text: Some(query.into()),
            link_id: None,
        }
    }

    pub fn edit_query(timestamp: i64, query: impl Into<String>) -> Self {
        ActionEvent {
            kind: ActionKind::EditQuery,
            timestamp,
            query_text: Some(query.into()),
            link_id: None,
        }
    }

    pub fn click_link(timestamp: i64, link: impl Into<String>) -> Self {
        ActionEvent {
            kind: ActionKind::ClickLink,
            timestamp,
            query_text: None,
            link_id: Some(link.into()),
        }
    }
}

/// One user's search session on one engine; the labeling unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub user_id: String,
    pub engine: EngineId,
    pub events: Vec<ActionEvent>,
    /// Ranked result list presented after the final search.
    pub shown_links: Vec<String>,
}

/// Session outcome label. The derived order (`Once < Twice < Multiform <
/// Futile`) is the reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionLabel {
    OnceSearch,
    TwiceSearch,
    MultiformSearch,
    FutileSearch,
}

impl SessionLabel {
    pub const ALL: [SessionLabel; 4] = [
        SessionLabel::OnceSearch,
        SessionLabel::TwiceSearch,
        SessionLabel::MultiformSearch,
        SessionLabel::FutileSearch,
    ];

    /// Class index used by the models: Once=0, Twice=1, Multiform=2, Futile=3.
    pub fn index(self) -> usize {
        match self {
            SessionLabel::OnceSearch => 0,
            SessionLabel::TwiceSearch => 1,
            SessionLabel::MultiformSearch => 2,
            SessionLabel::FutileSearch => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        SessionLabel::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SessionLabel::OnceSearch => "once",
            SessionLabel::TwiceSearch => "twice",
            SessionLabel::MultiformSearch => "multiform",
            SessionLabel::FutileSearch => "futile",
        }
    }

    /// Row name used in report tables.
    pub fn table_name(self) -> &'static str {
        match self {
            SessionLabel::OnceSearch => "One Search",
            SessionLabel::TwiceSearch => "Twice Search",
            SessionLabel::MultiformSearch => "Multiform Search",
            SessionLabel::FutileSearch => "Futile Search",
        }
    }
}

impl fmt::Display for SessionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SessionLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "once" => Ok(SessionLabel::OnceSearch),
            "twice" => Ok(SessionLabel::TwiceSearch),
            "multiform" => Ok(SessionLabel::MultiformSearch),
            "futile" => Ok(SessionLabel::FutileSearch),
            other => Err(Error::Validation(format!("unknown session label '{other}'"))),
        }
    }
}

/// A violated session invariant, naming the field and the rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EventsNotTimeOrdered,
    NoSearchEvent,
    FirstEventNotSearch,
    NegativeTimestamp { event: usize },
    ClickOnUnshownLink { event: usize, link_id: String },
    MissingQueryText { event: usize },
    UnexpectedQueryText { event: usize },
    MissingLinkId { event: usize },
    UnexpectedLinkId { event: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EventsNotTimeOrdered => write!(f, "events not time-ordered"),
            Violation::NoSearchEvent => write!(f, "events contain no search event"),
            Violation::FirstEventNotSearch => write!(f, "first event is not a search"),
            Violation::NegativeTimestamp { event } => {
                write!(f, "events[{event}] has a negative timestamp")
            }
            Violation::ClickOnUnshownLink { event, link_id } => {
                write!(f, "events[{event}] click references unshown link '{link_id}'")
            }
            Violation::MissingQueryText { event } => {
                write!(f, "events[{event}] requires query_text for its kind")
            }
            Violation::UnexpectedQueryText { event } => {
                write!(f, "events[{event}] carries query_text not allowed for its kind")
            }
            Violation::MissingLinkId { event } => {
                write!(f, "events[{event}] requires link_id for its kind")
            }
            Violation::UnexpectedLinkId { event } => {
                write!(f, "events[{event}] carries link_id not allowed for its kind")
            }
        }
    }
}

/// Checks every session invariant; returns all violations, never aborts.
pub fn validate_session(s: &SessionRecord) -> Vec<Violation> {
    let mut violations = Vec::new();
    let shown: BTreeSet<&str> = s.shown_links.iter().map(String::as_str).collect();

    let mut prev_ts = i64::MIN;
    let mut any_search = false;
    for (i, event) in s.events.iter().enumerate() {
        if event.timestamp < prev_ts {
            if !violations.contains(&Violation::EventsNotTimeOrdered) {
                violations.push(Violation::EventsNotTimeOrdered);
            }
        }
        prev_ts = event.timestamp;
        if event.timestamp < 0 {
            violations.push(Violation::NegativeTimestamp { event: i });
        }
        match event.kind {
            ActionKind::Search | ActionKind::EditQuery => {
                any_search |= event.kind == ActionKind::Search;
                if event.query_text.is_none() {
                    violations.push(Violation::MissingQueryText { event: i });
                }
                if event.link_id.is_some() {
                    violations.push(Violation::UnexpectedLinkId { event: i });
                }
            }
            ActionKind::ClickLink => {
                match &event.link_id {
                    None => violations.push(Violation::MissingLinkId { event: i }),
                    Some(link) if !shown.contains(link.as_str()) => {
                        violations.push(Violation::ClickOnUnshownLink {
                            event: i,
                            link_id: link.clone(),
                        });
                    }
                    Some(_) => {}
                }
                if event.query_text.is_some() {
                    violations.push(Violation::UnexpectedQueryText { event: i });
                }
            }
        }
    }
    if !any_search {
        violations.push(Violation::NoSearchEvent);
    }
    match s.events.first() {
        Some(first) if first.kind != ActionKind::Search => {
            violations.push(Violation::FirstEventNotSearch)
        }
        None => {} // already covered by NoSearchEvent
        _ => {}
    }
    violations
}

/// Labels a valid session.
///
/// With `n` searches, `e` query edits, and `c = any click`: Futile without a
/// click; Multiform when clicked and (`n > 2` or `e ≥ 1`); Twice when clicked
/// and `n = 2, e = 0`; Once when clicked and `n = 1, e = 0`. Edits dominate
/// the search count, so two searches plus an edit is Multiform.
pub fn label_session(s: &SessionRecord) -> Result<SessionLabel> {
    if let Some(first) = validate_session(s).into_iter().next() {
        return Err(Error::Validation(format!(
            "session '{}' is malformed: {first}",
            s.session_id
        )));
    }
    let searches = s
        .events
        .iter()
        .filter(|e| e.kind == ActionKind::Search)
        .count();
    let edits = s
        .events
        .iter()
        .filter(|e| e.kind == ActionKind::EditQuery)
        .count();
    let clicked = s.events.iter().any(|e| e.kind == ActionKind::ClickLink);

    Ok(if !clicked {
        SessionLabel::FutileSearch
    } else if searches > 2 || edits >= 1 {
        SessionLabel::MultiformSearch
    } else if searches == 2 {
        SessionLabel::TwiceSearch
    } else {
        SessionLabel::OnceSearch
    })
}

/// Writes sessions as newline-delimited JSON.
pub fn write_sessions<W: Write>(mut w: W, sessions: &[SessionRecord]) -> Result<()> {
    for s in sessions {
        serde_json::to_writer(&mut w, s)
            .map_err(|e| Error::Format(format!("session encode: {e}")))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_sessions_file(path: &Path, sessions: &[SessionRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_sessions(std::io::BufWriter::new(file), sessions)
}

/// Reads newline-delimited sessions; blank lines are skipped.
pub fn read_sessions<R: BufRead>(r: R) -> Result<Vec<SessionRecord>> {
    let mut sessions = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: SessionRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("session log line {}: {e}", lineno + 1))
        })?;
        sessions.push(s);
    }
    Ok(sessions)
}

pub fn read_sessions_file(path: &Path) -> Result<Vec<SessionRecord>> {
    let file = std::fs::File::open(path)?;
    read_sessions(std::io::BufReader::new(file))
}
