//! System status from response-time telemetry corroborated by user posts.
//!
//! Posts are searched for status keywords, response samples are bucketed
//! against the 0.1 s / 10 s perceptual limits, and each time window is
//! resolved to Idle, Slow, Down or Error with a fixed precedence:
//! zero response, slow median, error keyword, idle median, keyword evidence.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Post;
use crate::lexicon::tokenize;
use crate::par;

/// Below this many seconds the system feels instantaneous.
pub const IDLE_LIMIT_S: f64 = 0.1;
/// Beyond this many seconds users lose focus on the task.
pub const SLOW_LIMIT_S: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum StatusError {
    #[error("response time {0} is negative or not a number")]
    InvalidResponse(f64),
    #[error("window has neither posts nor response samples")]
    EmptyWindow,
    #[error("window start {0} is not before end {1}")]
    InvalidWindow(DateTime<Utc>, DateTime<Utc>),
    #[error("window has no keyword evidence and no response samples")]
    Unresolved,
    #[error("unknown status {0:?}")]
    UnknownStatus(String),
    #[error("rules line {line}: {message}")]
    Rules { line: usize, message: String },
    #[error("window length must be positive")]
    WindowLength,
}

/// Ordered by name, which is also the tie-break order used for votes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SystemStatus {
    Down,
    Error,
    Idle,
    Slow,
}

impl SystemStatus {
    pub const ALL: [SystemStatus; 4] = [
        SystemStatus::Down,
        SystemStatus::Error,
        SystemStatus::Idle,
        SystemStatus::Slow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemStatus::Down => "Down",
            SystemStatus::Error => "Error",
            SystemStatus::Idle => "Idle",
            SystemStatus::Slow => "Slow",
        }
    }

    // Down > Slow > Error > Idle
    fn precedence(self) -> u8 {
        match self {
            SystemStatus::Down => 3,
            SystemStatus::Slow => 2,
            SystemStatus::Error => 1,
            SystemStatus::Idle => 0,
        }
    }
}

impl fmt::Display for SystemStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemStatus {
    type Err = StatusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "down" => Ok(SystemStatus::Down),
            "error" => Ok(SystemStatus::Error),
            "idle" => Ok(SystemStatus::Idle),
            "slow" => Ok(SystemStatus::Slow),
            _ => Err(StatusError::UnknownStatus(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseSample {
    pub timestamp: DateTime<Utc>,
    pub avg_response_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ResponseVerdict {
    Down,
    Idle,
    /// Needs keyword corroboration.
    Indeterminate,
    Slow,
}

pub fn status_from_response(seconds: f64) -> Result<ResponseVerdict, StatusError> {
    if seconds.is_nan() || seconds < 0.0 {
        return Err(StatusError::InvalidResponse(seconds));
    }
    Ok(if seconds == 0.0 {
        ResponseVerdict::Down
    } else if seconds <= IDLE_LIMIT_S {
        ResponseVerdict::Idle
    } else if seconds <= SLOW_LIMIT_S {
        ResponseVerdict::Indeterminate
    } else {
        ResponseVerdict::Slow
    })
}

/// Lowercase keyword phrases per status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordRuleSet {
    rules: BTreeMap<SystemStatus, Vec<String>>,
}

fn clean(text: &str) -> String {
    tokenize(text).tokens.join(" ")
}

impl Default for KeywordRuleSet {
    fn default() -> Self {
        let table: [(SystemStatus, &[&str]); 4] = [
            (SystemStatus::Idle, &["working fine", "thanks"]),
            (SystemStatus::Error, &["error", "ftp", "sql", "code"]),
            (SystemStatus::Down, &["down", "not working", "cannot access"]),
            (SystemStatus::Slow, &["cannot upload", "slow", "upload"]),
        ];
        KeywordRuleSet {
            rules: table
                .into_iter()
                .map(|(s, ps)| (s, ps.iter().map(|p| p.to_string()).collect()))
                .collect(),
        }
    }
}

impl KeywordRuleSet {
    pub fn new(rules: BTreeMap<SystemStatus, Vec<String>>) -> Result<Self, StatusError> {
        let mut cleaned = BTreeMap::new();
        for s in SystemStatus::ALL {
            let phrases: Vec<String> = rules
                .get(&s)
                .map(|ps| ps.iter().map(|p| clean(p)).filter(|p| !p.is_empty()).collect())
                .unwrap_or_default();
            if phrases.is_empty() {
                return Err(StatusError::Rules {
                    line: 0,
                    message: format!("no keywords for {s}"),
                });
            }
            cleaned.insert(s, phrases);
        }
        Ok(KeywordRuleSet { rules: cleaned })
    }

    pub fn phrases(&self, status: SystemStatus) -> &[String] {
        self.rules.get(&status).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Occurrence count of each status's phrases in the cleaned text.
    pub fn hits(&self, text: &str) -> BTreeMap<SystemStatus, usize> {
        let cleaned = clean(text);
        self.rules
            .iter()
            .map(|(s, phrases)| (*s, phrases.iter().map(|p| cleaned.matches(p.as_str()).count()).sum()))
            .collect()
    }
}

impl fmt::Display for KeywordRuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (s, phrases) in &self.rules {
            writeln!(f, "{s}: {}", phrases.join(", "))?;
        }
        Ok(())
    }
}

/// Parses `Status: phrase, phrase` lines; `#` starts a comment.
pub fn parse_rules(text: &str) -> Result<KeywordRuleSet, StatusError> {
    let mut rules: BTreeMap<SystemStatus, Vec<String>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (status, phrases) = line.split_once(':').ok_or_else(|| StatusError::Rules {
            line: i + 1,
            message: format!("expected `Status: phrases`, got {line:?}"),
        })?;
        let status: SystemStatus = status.parse().map_err(|e: StatusError| StatusError::Rules {
            line: i + 1,
            message: e.to_string(),
        })?;
        rules
            .entry(status)
            .or_default()
            .extend(phrases.split(',').map(|p| p.trim().to_string()));
    }
    KeywordRuleSet::new(rules)
}

pub fn load_rules(path: impl AsRef<Path>) -> Result<KeywordRuleSet, StatusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| StatusError::Rules {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    parse_rules(&text)
}

/// Statuses whose phrases occur in `text`.
pub fn match_keywords(text: &str, rules: &KeywordRuleSet) -> Vec<SystemStatus> {
    rules
        .hits(text)
        .into_iter()
        .filter(|(_, n)| *n > 0)
        .map(|(s, _)| s)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    ZeroResponse,
    SlowMedian,
    ErrorKeyword,
    IdleMedian,
    SingleKeyword,
    KeywordPlurality,
    ResponseAboveIdle,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evidence {
    pub keyword_hits: BTreeMap<SystemStatus, usize>,
    pub post_count: usize,
    pub sample_count: usize,
    pub median_response_s: Option<f64>,
    pub min_response_s: Option<f64>,
    pub max_response_s: Option<f64>,
    pub resolution: Resolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl Window {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self, StatusError> {
        if start >= end {
            return Err(StatusError::InvalidWindow(start, end));
        }
        Ok(Window { start, end })
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatusEvent {
    pub window: Window,
    pub status: SystemStatus,
    pub evidence: Evidence,
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

pub fn classify_event<S: AsRef<str>>(
    window: Window,
    posts: &[S],
    samples: &[f64],
    rules: &KeywordRuleSet,
) -> Result<StatusEvent, StatusError> {
    if posts.is_empty() && samples.is_empty() {
        return Err(StatusError::EmptyWindow);
    }
    for &s in samples {
        status_from_response(s)?;
    }

    let mut keyword_hits: BTreeMap<SystemStatus, usize> =
        SystemStatus::ALL.iter().map(|&s| (s, 0)).collect();
    for p in posts {
        for (s, n) in rules.hits(p.as_ref()) {
            *keyword_hits.entry(s).or_default() += n;
        }
    }
    let med = median(samples);
    let hit = |s: SystemStatus| keyword_hits.get(&s).copied().unwrap_or(0) > 0;

    let (status, resolution) = if samples.contains(&0.0) {
        (SystemStatus::Down, Resolution::ZeroResponse)
    } else if med.is_some_and(|m| m > SLOW_LIMIT_S) {
        (SystemStatus::Slow, Resolution::SlowMedian)
    } else if hit(SystemStatus::Error) && med.is_some_and(|m| m > IDLE_LIMIT_S) {
        (SystemStatus::Error, Resolution::ErrorKeyword)
    } else if med.is_some_and(|m| m <= IDLE_LIMIT_S) {
        (SystemStatus::Idle, Resolution::IdleMedian)
    } else {
        let candidates: Vec<(SystemStatus, usize)> = keyword_hits
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(&s, &n)| (s, n))
            .collect();
        match candidates.as_slice() {
            [] if med.is_some() => (SystemStatus::Error, Resolution::ResponseAboveIdle),
            [] => return Err(StatusError::Unresolved),
            [(s, _)] => (*s, Resolution::SingleKeyword),
            many => {
                let best = many
                    .iter()
                    .max_by_key(|(s, n)| (*n, s.precedence()))
                    .expect("nonempty");
                (best.0, Resolution::KeywordPlurality)
            }
        }
    };

    let min = samples.iter().copied().reduce(f64::min);
    let max = samples.iter().copied().reduce(f64::max);
    Ok(StatusEvent {
        window,
        status,
        evidence: Evidence {
            keyword_hits,
            post_count: posts.len(),
            sample_count: samples.len(),
            median_response_s: med,
            min_response_s: min,
            max_response_s: max,
            resolution,
        },
    })
}

/// A resolved window together with the indices of the posts inside it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledWindow {
    pub event: StatusEvent,
    pub post_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelingOutcome {
    pub events: Vec<LabeledWindow>,
    /// Windows with posts but nothing to decide on.
    pub unresolved: Vec<Window>,
}

/// Buckets posts into fixed windows aligned to the Unix epoch and classifies
/// every window that contains at least one post.
pub fn label_windows(
    posts: &[Post],
    samples: &[ResponseSample],
    window: Duration,
    rules: &KeywordRuleSet,
) -> Result<LabelingOutcome, StatusError> {
    let width = window.num_seconds();
    if width <= 0 {
        return Err(StatusError::WindowLength);
    }
    let bucket = |t: DateTime<Utc>| t.timestamp().div_euclid(width);

    let mut post_buckets: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, p) in posts.iter().enumerate() {
        post_buckets.entry(bucket(p.timestamp)).or_default().push(i);
    }
    let mut sample_buckets: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for s in samples {
        sample_buckets
            .entry(bucket(s.timestamp))
            .or_default()
            .push(s.avg_response_s);
    }

    let keys: Vec<(i64, Vec<usize>)> = post_buckets.into_iter().collect();
    let results = par::map_slice(&keys, |(b, idx)| {
        let start = DateTime::from_timestamp(b * width, 0).expect("in range");
        let w = Window {
            start,
            end: start + Duration::seconds(width),
        };
        let texts: Vec<&str> = idx.iter().map(|&i| posts[i].text.as_str()).collect();
        let samples = sample_buckets.get(b).map(Vec::as_slice).unwrap_or(&[]);
        (w, idx.clone(), classify_event(w, &texts, samples, rules))
    });

    let mut outcome = LabelingOutcome {
        events: Vec::new(),
        unresolved: Vec::new(),
    };
    for (w, post_indices, r) in results {
        match r {
            Ok(event) => outcome.events.push(LabeledWindow { event, post_indices }),
            Err(StatusError::Unresolved) => outcome.unresolved.push(w),
            Err(e) => return Err(e),
        }
    }
    Ok(outcome)
}
