//! Loading, validating and writing the pipeline's tables.
//!
//! Every table kind is a header-first CSV (JSONL objects with the same keys
//! are accepted too). Unparseable headers are fatal; bad rows are skipped and
//! reported with their line numbers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::Serialize;
use thiserror::Error;

use crate::emotions::{batch_emotions, EmotionLexicon};
use crate::matching::{SocialProfile, UserRecord};
use crate::model::{FeatureRow, FeatureSchema};
use crate::status::{ResponseSample, SystemStatus};
use crate::timeline::TimelineRecord;
use crate::traits::TraitVector;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: header is missing column(s) {}", missing.join(", "))]
    Header { path: PathBuf, missing: Vec<String> },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("feature join produced no rows")]
    EmptyJoin,
    #[error("schema feature {0:?} cannot be derived from the dataset")]
    UnknownFeature(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    Posts,
    Responses,
    Users,
    Profiles,
    Timelines,
    Questionnaire,
    Traits,
    Events,
    Features,
}

/// Named field access over one CSV record or JSON object.
pub struct Fields<'a> {
    values: HashMap<&'a str, String>,
}

impl Fields<'_> {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(|s| s.as_str())
    }

    pub fn required(&self, name: &str) -> Result<&str, String> {
        match self.get(name).map(str::trim) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(format!("missing {name}")),
        }
    }

    pub fn optional(&self, name: &str) -> Option<&str> {
        self.get(name).map(str::trim).filter(|v| !v.is_empty())
    }

    pub fn number(&self, name: &str) -> Result<f64, String> {
        let raw = self.required(name)?;
        let v: f64 = raw.parse().map_err(|_| format!("{name}: not a number: {raw:?}"))?;
        if !v.is_finite() {
            return Err(format!("{name}: not finite"));
        }
        Ok(v)
    }

    pub fn timestamp(&self, name: &str) -> Result<DateTime<Utc>, String> {
        parse_timestamp(self.required(name)?).map_err(|e| format!("{name}: {e}"))
    }

    pub fn optional_timestamp(&self, name: &str) -> Result<Option<DateTime<Utc>>, String> {
        self.optional(name)
            .map(|v| parse_timestamp(v).map_err(|e| format!("{name}: {e}")))
            .transpose()
    }
}

/// ISO-8601 with offset, or a naive `YYYY-MM-DD hh:mm:ss` taken as UTC.
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(format!("unrecognised timestamp {s:?}"))
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true)
}

fn fmt_opt_ts(t: &Option<DateTime<Utc>>) -> String {
    t.as_ref().map(format_timestamp).unwrap_or_default()
}

/// A row type with a fixed header.
pub trait TableRow: Sized {
    const KIND: TableKind;
    const COLUMNS: &'static [&'static str];

    fn parse(fields: &Fields<'_>) -> Result<Self, String>;
    fn record(&self) -> Vec<String>;

    /// Rows sharing a key after the first are rejected.
    fn key(&self) -> Option<String> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub kind: TableKind,
    pub source: PathBuf,
    pub rows: usize,
    pub skipped: usize,
    pub loaded_at: DateTime<Utc>,
}

#[derive(Debug, Clone)]
pub struct Table<T> {
    pub rows: Vec<T>,
    pub errors: Vec<RowError>,
    pub provenance: Provenance,
}

impl<T> Table<T> {
    pub fn summary(&self) -> String {
        format!(
            "{}: {} rows loaded, {} skipped",
            self.provenance.source.display(),
            self.rows.len(),
            self.errors.len()
        )
    }
}

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson")
    )
}

fn json_scalar(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Null => String::new(),
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Reads raw `(line, fields)` pairs, checking the header against `required`.
/// A parsed record keyed by column, or why it could not be parsed.
type RawRecord = Result<HashMap<String, String>, String>;

fn read_raw(
    path: &Path,
    required: &[&str],
) -> Result<Vec<(u64, RawRecord)>, IngestError> {
    let io = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    if is_jsonl(path) {
        let reader = BufReader::new(File::open(path).map_err(io)?);
        let mut out = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&line)
                .map(|obj| obj.iter().map(|(k, v)| (k.clone(), json_scalar(v))).collect())
                .map_err(|e| format!("invalid JSON: {e}"));
            out.push((i as u64 + 1, parsed));
        }
        return Ok(out);
    }

    let csv_err = |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io)?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let missing: Vec<String> = required
        .iter()
        .filter(|c| !header.iter().any(|h| h == *c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(IngestError::Header {
            path: path.to_path_buf(),
            missing,
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        match record {
            Ok(r) => {
                let line = r.position().map(|p| p.line()).unwrap_or(0);
                let parsed = if r.len() != header.len() {
                    Err(format!("expected {} fields, found {}", header.len(), r.len()))
                } else {
                    Ok(header.iter().cloned().zip(r.iter().map(str::to_string)).collect())
                };
                out.push((line, parsed));
            }
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                out.push((line, Err(e.to_string())));
            }
        }
    }
    Ok(out)
}

fn load_with<T, F>(
    kind: TableKind,
    path: &Path,
    required: &[&str],
    mut parse: F,
    key: impl Fn(&T) -> Option<String>,
) -> Result<Table<T>, IngestError>
where
    F: FnMut(&Fields<'_>) -> Result<T, String>,
{
    let raw = read_raw(path, required)?;
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (line, fields) in raw {
        let result = fields.and_then(|map| {
            let fields = Fields {
                values: map.iter().map(|(k, v)| (k.as_str(), v.clone())).collect(),
            };
            parse(&fields)
        });
        match result {
            Ok(row) => {
                if let Some(k) = key(&row) {
                    if !seen.insert(k.clone()) {
                        errors.push(RowError {
                            line,
                            message: format!("duplicate key {k}"),
                        });
                        continue;
                    }
                }
                rows.push(row);
            }
            Err(message) => errors.push(RowError { line, message }),
        }
    }
    for e in &errors {
        log::warn!("{}:{}: {}", path.display(), e.line, e.message);
    }
    Ok(Table {
        provenance: Provenance {
            kind,
            source: path.to_path_buf(),
            rows: rows.len(),
            skipped: errors.len(),
            loaded_at: Utc::now(),
        },
        rows,
        errors,
    })
}

pub fn load_table<T: TableRow>(path: impl AsRef<Path>) -> Result<Table<T>, IngestError> {
    load_with(T::KIND, path.as_ref(), T::COLUMNS, T::parse, T::key)
}

pub fn write_table<T: TableRow, W: Write>(rows: &[T], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(T::COLUMNS)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_table<T: TableRow>(rows: &[T], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_table(rows, file).map_err(|source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Post {
    pub timestamp: DateTime<Utc>,
    pub user_ref: Option<String>,
    pub platform: String,
    pub text: String,
}

impl TableRow for Post {
    const KIND: TableKind = TableKind::Posts;
    const COLUMNS: &'static [&'static str] = &["timestamp", "user_ref", "platform", "text"];

    fn parse(f: &Fields<'_>) -> Result<Self, String> {
        Ok(Post {
            timestamp: f.timestamp("timestamp")?,
            user_ref: f.optional("user_ref").map(str::to_string),
            platform: f.optional("platform").unwrap_or("unknown").to_string(),
            text: f.required("text")?.to_string(),
        })
    }

    fn record(&self) -> Vec<String> {
        vec![
            format_timestamp(&self.timestamp),
            self.user_ref.clone().unwrap_or_default(),
            self.platform.clone(),
            self.text.clone(),
        ]
    }
}

impl TableRow for ResponseSample {
    const KIND: TableKind = TableKind::Responses;
    const COLUMNS: &'static [&'static str] = &["timestamp", "avg_response_s"];

    fn parse(f: &Fields<'_>) -> Result<Self, String> {
        let avg = f.number("avg_response_s")?;
        if avg < 0.0 {
            return Err(format!("avg_response_s is negative: {avg}"));
        }
        Ok(ResponseSample {
            timestamp: f.timestamp("timestamp")?,
            avg_response_s: avg,
        })
    }

    fn record(&self) -> Vec<String> {
        vec![format_timestamp(&self.timestamp), self.avg_response_s.to_string()]
    }
}

fn opt_string(v: &Option<String>) -> String {
    v.clone().unwrap_or_default()
}

impl TableRow for UserRecord {
    const KIND: TableKind = TableKind::Users;
    const COLUMNS: &'static [&'static str] =
        &["user_id", "username", "name", "gender", "city", "university", "age"];

    fn parse(f: &Fields<'_>) -> Result<Self, String> {
        let user_id = f
            .required("user_id")?
            .parse::<u64>()
            .map_err(|_| "user_id: not an unsigned integer".to_string())?;
        let username = f.required("username")?.to_string();
        if username.chars().count() < 3 {
            return Err(format!("username {username:?} is shorter than 3 characters"));
        }
        let age = match f.optional("age") {
            None => None,
            Some(_) => {
                let a = f.number("age")?;
                if a <= 0.0 {
                    return Err(format!("age must be positive, got {a}"));
                }
                Some(a)
            }
        };
        Ok(UserRecord {
            user_id,
            username,
            name: f.optional("name").unwrap_or("").to_string(),
            gender: f.optional("gender").map(str::to_string),
            city: f.optional("city").map(str::to_string),
            university: f.optional("university").map(str::to_string),
            age,
        })
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.user_id.to_string(),
            self.username.clone(),
            self.name.clone(),
            opt_string(&self.gender),
            opt_string(&self.city),
            opt_string(&self.university),
            self.age.map(|a| a.to_string()).unwrap_or_default(),
        ]
    }

    fn key(&self) -> Option<String> {
        Some(self.user_id.to_string())
    }
}

impl TableRow for SocialProfile {
    const KIND: TableKind = TableKind::Profiles;
    const COLUMNS: &'static [&'static str] = &["social_id", "display_name", "gender", "city", "university"];

    fn parse(f: &Fields<'_>) -> Result<Self, String> {
        Ok(SocialProfile {
            social_id: f.required("social_id")?.to_string(),
            display_name: f.optional("display_name").unwrap_or("").to_string(),
            gender: f.optional("gender").map(str::to_string),
            city: f.optional("city").map(str::to_string),
            university: f.optional("university").map(str::to_string),
        })
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.social_id.clone(),
            self.display_name.clone(),
            opt_string(&self.gender),
            opt_string(&self.city),
            opt_string(&self.university),
        ]
    }

    fn key(&self) -> Option<String> {
        Some(self.social_id.clone())
    }
}

impl TableRow for TimelineRecord {
    const KIND: TableKind = TableKind::Timelines;
    const COLUMNS: &'static [&'static str] = &["user_id", "t0", "t1", "t2", "t3"];

    fn parse(f: &Fields<'_>) -> Result<Self, String> {
        let rec = TimelineRecord {
            user_id: f
                .required("user_id")?
                .parse()
                .map_err(|_| "user_id: not an unsigned integer".to_string())?,
            t0: f.optional_timestamp("t0")?,
            t1: f.optional_timestamp("t1")?,
            t2: f.optional_timestamp("t2")?,
            t3: f.optional_timestamp("t3")?,
        };
        rec.check_order()?;
        Ok(rec)
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.user_id.to_string(),
            fmt_opt_ts(&self.t0),
            fmt_opt_ts(&self.t1),
            fmt_opt_ts(&self.t2),
            fmt_opt_ts(&self.t3),
        ]
    }

    fn key(&self) -> Option<String> {
        Some(self.user_id.to_string())
    }
}

/// Likert answers for one user, in questionnaire item order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionnaireResponse {
    pub user_id: u64,
    pub responses: Vec<i64>,
}

impl TableRow for QuestionnaireResponse {
    const KIND: TableKind = TableKind::Questionnaire;
    const COLUMNS: &'static [&'static str] = &["user_id", "responses"];

    fn parse(f: &Fields<'_>) -> Result<Self, String> {
        let responses = f
            .required("responses")?
            .split_whitespace()
            .map(|r| r.parse::<i64>().map_err(|_| format!("responses: bad integer {r:?}")))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(QuestionnaireResponse {
            user_id: f
                .required("user_id")?
                .parse()
                .map_err(|_| "user_id: not an unsigned integer".to_string())?,
            responses,
        })
    }

    fn record(&self) -> Vec<String> {
        let r: Vec<String> = self.responses.iter().map(i64::to_string).collect();
        vec![self.user_id.to_string(), r.join(" ")]
    }

    fn key(&self) -> Option<String> {
        Some(self.user_id.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraitRecord {
    pub user_id: u64,
    pub traits: TraitVector,
}

impl TableRow for TraitRecord {
    const KIND: TableKind = TableKind::Traits;
    const COLUMNS: &'static [&'static str] = &[
        "user_id",
        "openness",
        "conscientiousness",
        "extraversion",
        "agreeableness",
        "neuroticism",
    ];

    fn parse(f: &Fields<'_>) -> Result<Self, String> {
        let mut v = [0.0; 5];
        for (slot, name) in v.iter_mut().zip(&Self::COLUMNS[1..]) {
            let x = f.number(name)?;
            if !(0.0..=1.0).contains(&x) {
                return Err(format!("{name} {x} outside [0,1]"));
            }
            *slot = x;
        }
        Ok(TraitRecord {
            user_id: f
                .required("user_id")?
                .parse()
                .map_err(|_| "user_id: not an unsigned integer".to_string())?,
            traits: TraitVector::from_array(v),
        })
    }

    fn record(&self) -> Vec<String> {
        std::iter::once(self.user_id.to_string())
            .chain(self.traits.as_array().iter().map(|x| x.to_string()))
            .collect()
    }

    fn key(&self) -> Option<String> {
        Some(self.user_id.to_string())
    }
}

/// One labelled status window as written by the labeller.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub status: SystemStatus,
    pub post_count: usize,
    pub sample_count: usize,
    pub median_response_s: Option<f64>,
    pub resolution: String,
}

impl TableRow for EventRecord {
    const KIND: TableKind = TableKind::Events;
    const COLUMNS: &'static [&'static str] = &[
        "window_start",
        "window_end",
        "status",
        "post_count",
        "sample_count",
        "median_response_s",
        "resolution",
    ];

    fn parse(f: &Fields<'_>) -> Result<Self, String> {
        let window_start = f.timestamp("window_start")?;
        let window_end = f.timestamp("window_end")?;
        if window_start >= window_end {
            return Err("window_start is not before window_end".into());
        }
        let count = |name: &str| -> Result<usize, String> {
            f.optional(name)
                .map(|v| v.parse::<usize>().map_err(|_| format!("{name}: bad count")))
                .transpose()
                .map(Option::unwrap_or_default)
        };
        Ok(EventRecord {
            window_start,
            window_end,
            status: f.required("status")?.parse().map_err(|e: crate::status::StatusError| e.to_string())?,
            post_count: count("post_count")?,
            sample_count: count("sample_count")?,
            median_response_s: f.optional("median_response_s").map(|_| f.number("median_response_s")).transpose()?,
            resolution: f.optional("resolution").unwrap_or("").to_string(),
        })
    }

    fn record(&self) -> Vec<String> {
        vec![
            format_timestamp(&self.window_start),
            format_timestamp(&self.window_end),
            self.status.to_string(),
            self.post_count.to_string(),
            self.sample_count.to_string(),
            self.median_response_s.map(|m| m.to_string()).unwrap_or_default(),
            self.resolution.clone(),
        ]
    }
}

impl From<&crate::status::StatusEvent> for EventRecord {
    fn from(e: &crate::status::StatusEvent) -> Self {
        EventRecord {
            window_start: e.window.start,
            window_end: e.window.end,
            status: e.status,
            post_count: e.evidence.post_count,
            sample_count: e.evidence.sample_count,
            median_response_s: e.evidence.median_response_s,
            resolution: serde_json::to_value(e.evidence.resolution)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
        }
    }
}

/// Feature rows use a schema-dependent header: the feature names then `label`.
pub fn load_features(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
) -> Result<Table<FeatureRow>, IngestError> {
    let mut required: Vec<&str> = schema.names().iter().map(String::as_str).collect();
    required.push("label");
    load_with(
        TableKind::Features,
        path.as_ref(),
        &required,
        |f| {
            let values = schema
                .names()
                .iter()
                .map(|n| f.number(n))
                .collect::<Result<Vec<f64>, _>>()?;
            let label = f
                .optional("label")
                .map(|l| l.parse::<SystemStatus>().map_err(|e| e.to_string()))
                .transpose()?;
            let row = FeatureRow { values, label };
            schema.validate(&row)?;
            Ok(row)
        },
        |_| None,
    )
}

pub fn write_features<W: Write>(
    rows: &[FeatureRow],
    schema: &FeatureSchema,
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = schema.names().iter().map(String::as_str).collect();
    header.push("label");
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = r.values.iter().map(|v| v.to_string()).collect();
        rec.push(r.label.map(|l| l.to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// All loaded tables plus referential checks between them.
#[derive(Debug, Default)]
pub struct Dataset {
    pub posts: Option<Table<Post>>,
    pub responses: Option<Table<ResponseSample>>,
    pub users: Option<Table<UserRecord>>,
    pub profiles: Option<Table<SocialProfile>>,
    pub timelines: Option<Table<TimelineRecord>>,
}

impl Dataset {
    /// Posts whose `user_ref` names neither a social profile nor a user id.
    /// Empty refs are allowed.
    pub fn dangling_post_refs(&self) -> Vec<usize> {
        let Some(posts) = &self.posts else {
            return Vec::new();
        };
        let mut known: HashSet<String> = HashSet::new();
        if let Some(p) = &self.profiles {
            known.extend(p.rows.iter().map(|r| r.social_id.clone()));
        }
        if let Some(u) = &self.users {
            known.extend(u.rows.iter().map(|r| r.user_id.to_string()));
        }
        posts
            .rows
            .iter()
            .enumerate()
            .filter(|(_, p)| p.user_ref.as_ref().is_some_and(|r| !known.contains(r)))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exclusion {
    pub user_id: Option<u64>,
    pub window_start: DateTime<Utc>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureExport {
    pub rows: Vec<FeatureRow>,
    /// `(user_id, window_start)` per row.
    pub keys: Vec<(u64, DateTime<Utc>)>,
    pub excluded: Vec<Exclusion>,
}

/// Inputs to the `(user, status event)` feature join.
pub struct JoinInputs<'a> {
    pub events: &'a [EventRecord],
    pub posts: &'a [Post],
    /// social id -> system user id, from the matching stage.
    pub identity: &'a HashMap<String, u64>,
    pub users: &'a [UserRecord],
    pub traits: &'a HashMap<u64, TraitVector>,
    pub emotions: &'a EmotionLexicon,
}

/// One row per (user, event) with the user's emotions over their posts in the
/// window, their traits and age. Users missing any schema feature are
/// excluded and reported.
pub fn export_features(inputs: &JoinInputs<'_>, schema: &FeatureSchema) -> Result<FeatureExport, IngestError> {
    const DERIVABLE: &[&str] = &[
        "anger",
        "disgust",
        "fear",
        "joy",
        "sadness",
        "openness",
        "conscientiousness",
        "extraversion",
        "agreeableness",
        "neuroticism",
        "age",
    ];
    if let Some(bad) = schema.names().iter().find(|n| !DERIVABLE.contains(&n.as_str())) {
        return Err(IngestError::UnknownFeature(bad.clone()));
    }

    let user_ids: HashSet<u64> = inputs.users.iter().map(|u| u.user_id).collect();
    let ages: HashMap<u64, Option<f64>> = inputs.users.iter().map(|u| (u.user_id, u.age)).collect();
    let resolve = |r: &str| -> Option<u64> {
        inputs
            .identity
            .get(r)
            .copied()
            .or_else(|| r.parse::<u64>().ok().filter(|id| user_ids.contains(id)))
    };

    let mut events: Vec<&EventRecord> = inputs.events.iter().collect();
    events.sort_by_key(|e| (e.window_start, e.window_end));

    let mut out = FeatureExport {
        rows: Vec::new(),
        keys: Vec::new(),
        excluded: Vec::new(),
    };
    for event in events {
        let mut by_user: BTreeMap<u64, Vec<&str>> = BTreeMap::new();
        for p in inputs
            .posts
            .iter()
            .filter(|p| event.window_start <= p.timestamp && p.timestamp < event.window_end)
        {
            match p.user_ref.as_deref().and_then(resolve) {
                Some(uid) => by_user.entry(uid).or_default().push(&p.text),
                None => out.excluded.push(Exclusion {
                    user_id: None,
                    window_start: event.window_start,
                    reason: format!("post user_ref {:?} not linked to a user", p.user_ref),
                }),
            }
        }
        for (uid, texts) in by_user {
            let emotions = batch_emotions(&texts, inputs.emotions).expect("group is nonempty");
            let traits = inputs.traits.get(&uid);
            let age = ages.get(&uid).copied().flatten();
            let mut missing = Vec::new();
            let values: Vec<f64> = schema
                .names()
                .iter()
                .map(|name| {
                    let v = match name.as_str() {
                        "anger" => Some(emotions.anger),
                        "disgust" => Some(emotions.disgust),
                        "fear" => Some(emotions.fear),
                        "joy" => Some(emotions.joy),
                        "sadness" => Some(emotions.sadness),
                        "age" => age,
                        t => traits.map(|tv| tv.get(t.parse().expect("derivable trait"))),
                    };
                    v.unwrap_or_else(|| {
                        missing.push(name.clone());
                        0.0
                    })
                })
                .collect();
            if missing.is_empty() {
                out.rows.push(FeatureRow {
                    values,
                    label: Some(event.status),
                });
                out.keys.push((uid, event.window_start));
            } else {
                out.excluded.push(Exclusion {
                    user_id: Some(uid),
                    window_start: event.window_start,
                    reason: format!("missing {}", missing.join(", ")),
                });
            }
        }
    }
    if out.rows.is_empty() {
        return Err(IngestError::EmptyJoin);
    }
    Ok(out)
}
