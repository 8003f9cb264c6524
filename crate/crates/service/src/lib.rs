//! HTTP backend for the status-simulation experiment.
//!
//! Each session answers the personality questionnaire, then walks through
//! four save events, one per [`SystemStatus`], in a seeded random order. The
//! save endpoint acts out the event's status and the participant reports
//! their emotions on five sliders afterwards. Completed sessions export as
//! labeled feature rows.

pub mod session;
pub mod store;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pmsys_core::model::ModelError;
use pmsys_core::traits::{QuestionnaireDef, QuestionnaireScore};
use pmsys_core::{EvalReport, FeatureRow, FeatureSchema, Forest, SystemStatus};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use session::{Phase, Session, SessionError, Sliders, PROMPTS, STEPS};
use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;
use store::{Record, Store, StoreError};
use thiserror::Error;
use tokio::sync::{Mutex, RwLock};
use tokio::time::Instant;

pub use session::EmotionReport;

/// Feature names a session can supply.
pub const SESSION_FEATURES: &[&str] = &[
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

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("replaying session log: {0}")]
    Replay(String),
    #[error("feature {0:?} cannot be collected by a session")]
    Feature(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub seed: u64,
    /// JSONL session log; `None` keeps sessions in memory only.
    pub store_path: Option<PathBuf>,
    pub slow_delay: Duration,
    /// How long a Down save keeps refusing before it recovers.
    pub down_window: Duration,
    pub static_dir: Option<PathBuf>,
    pub model: Option<Forest>,
    pub questionnaire: QuestionnaireDef,
    /// Export schema when no model is loaded.
    pub schema: FeatureSchema,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            seed: 1,
            store_path: None,
            slow_delay: Duration::from_millis(10_500),
            down_window: Duration::from_secs(20),
            static_dir: None,
            model: None,
            questionnaire: QuestionnaireDef::bundled(),
            schema: FeatureSchema::default(),
        }
    }
}

impl ServiceConfig {
    pub fn export_schema(&self) -> &FeatureSchema {
        self.model.as_ref().map(|m| &m.schema).unwrap_or(&self.schema)
    }
}

#[derive(Debug)]
struct Slot {
    session: Session,
    down_since: HashMap<usize, Instant>,
    /// Last save response per step, replayed once the step is reported.
    acks: HashMap<usize, (StatusCode, Value)>,
}

struct AppState {
    config: ServiceConfig,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Slot>>>>,
    next_seq: Mutex<u64>,
    store: std::sync::Mutex<Store>,
}

impl AppState {
    fn append(&self, record: &Record) -> Result<(), ApiError> {
        self.store
            .lock()
            .expect("store lock")
            .append(record)
            .map_err(|e| {
                log::error!("{e}");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "failed to persist session record")
            })
    }

    async fn slot(&self, id: &str) -> Result<Arc<Mutex<Slot>>, ApiError> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id:?}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Conflict(m) => ApiError::new(StatusCode::CONFLICT, m),
            SessionError::Invalid(m) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, m),
        }
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn replay(config: &ServiceConfig, records: Vec<Record>) -> Result<(BTreeMap<String, Slot>, u64), ServiceError> {
    let mut slots: BTreeMap<String, Slot> = BTreeMap::new();
    let mut next_seq = 0;
    let def = &config.questionnaire;
    for (i, r) in records.into_iter().enumerate() {
        let fail = |m: String| ServiceError::Replay(format!("record {}: {m}", i + 1));
        if let Record::Created { id, seq, age } = &r {
            let session = Session::new(config.seed, *seq, *age).map_err(|e| fail(e.to_string()))?;
            if &session.id != id {
                return Err(fail(format!("session {id} was created under a different seed")));
            }
            next_seq = next_seq.max(seq + 1);
            slots.insert(
                id.clone(),
                Slot {
                    session,
                    down_since: HashMap::new(),
                    acks: HashMap::new(),
                },
            );
            continue;
        }
        let slot = slots
            .get_mut(r.session_id())
            .ok_or_else(|| fail(format!("unknown session {}", r.session_id())))?;
        let s = &mut slot.session;
        let res = match r {
            Record::Questionnaire { responses, .. } => s.submit_questionnaire(&responses, def).map(drop),
            Record::Save { step, .. } => s.attempt_save(step).map(drop),
            Record::Emotion {
                step,
                sliders,
                latency_ms,
                ..
            } => s.submit_emotion(step, sliders, latency_ms).map(drop),
            Record::Created { .. } => unreachable!(),
        };
        res.map_err(|e| fail(e.to_string()))?;
    }
    Ok((slots, next_seq))
}

/// Builds the router, replaying the session log if one is configured.
pub fn router(config: ServiceConfig) -> Result<Router, ServiceError> {
    if let Some(bad) = config
        .export_schema()
        .names()
        .iter()
        .find(|n| !SESSION_FEATURES.contains(&n.as_str()))
    {
        return Err(ServiceError::Feature(bad.clone()));
    }
    let (store, records) = match &config.store_path {
        Some(p) => Store::open(p)?,
        None => (Store::memory(), Vec::new()),
    };
    let (slots, next_seq) = replay(&config, records)?;
    if !slots.is_empty() {
        log::info!("restored {} sessions from the log", slots.len());
    }
    let static_dir = config.static_dir.clone();
    let state = Arc::new(AppState {
        config,
        sessions: RwLock::new(slots.into_iter().map(|(k, v)| (k, Arc::new(Mutex::new(v)))).collect()),
        next_seq: Mutex::new(next_seq),
        store: std::sync::Mutex::new(store),
    });
    let api = Router::new()
        .route("/api/session", post(create_session))
        .route("/api/questionnaire", get(questionnaire))
        .route("/api/session/{id}", get(session_view))
        .route("/api/session/{id}/questionnaire", post(submit_questionnaire))
        .route("/api/session/{id}/event", get(next_event))
        .route("/api/session/{id}/save", post(save))
        .route("/api/session/{id}/emotion", post(submit_emotion))
        .route("/api/export", get(export))
        .with_state(state);
    Ok(match static_dir {
        Some(dir) => {
            let index = dir.join("index.html");
            api.fallback_service(
                tower_http::services::ServeDir::new(dir).fallback(tower_http::services::ServeFile::new(index)),
            )
        }
        None => api,
    })
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(config: ServiceConfig, addr: std::net::SocketAddr) -> Result<(), ServiceError> {
    let app = router(config)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}

#[derive(Deserialize)]
struct CreateBody {
    age: f64,
}

async fn create_session(State(st): State<Arc<AppState>>, Json(body): Json<CreateBody>) -> ApiResult<Response> {
    session::validate_age(body.age)?;
    let mut seq = st.next_seq.lock().await;
    let s = Session::new(st.config.seed, *seq, body.age)?;
    st.append(&Record::Created {
        id: s.id.clone(),
        seq: s.seq,
        age: s.age,
    })?;
    *seq += 1;
    let id = s.id.clone();
    st.sessions.write().await.insert(
        id.clone(),
        Arc::new(Mutex::new(Slot {
            session: s,
            down_since: HashMap::new(),
            acks: HashMap::new(),
        })),
    );
    Ok((
        StatusCode::CREATED,
        Json(json!({ "session_id": id, "phase": Phase::Questionnaire })),
    )
        .into_response())
}

async fn questionnaire(State(st): State<Arc<AppState>>) -> Json<Value> {
    let def = &st.config.questionnaire;
    let (lo, hi) = def.scale();
    let items: Vec<Value> = def
        .items()
        .iter()
        .enumerate()
        .map(|(i, it)| json!({ "index": i, "prompt": it.prompt, "trait": it.trait_name.name() }))
        .collect();
    Json(json!({ "scale": { "min": lo, "max": hi }, "items": items }))
}

#[derive(Serialize)]
struct SessionView {
    session_id: String,
    phase: Phase,
    step: Option<usize>,
    total_steps: usize,
    age: f64,
    score: Option<QuestionnaireScore>,
    saved_steps: Vec<usize>,
    reported_steps: Vec<usize>,
}

async fn session_view(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let slot = st.slot(&id).await?;
    let g = slot.lock().await;
    let s = &g.session;
    Ok(Json(SessionView {
        session_id: s.id.clone(),
        phase: s.phase(),
        step: s.current_step(),
        total_steps: STEPS,
        age: s.age,
        score: s.score,
        saved_steps: s.saved.clone(),
        reported_steps: s.reports.iter().map(|r| r.step).collect(),
    }))
}

#[derive(Deserialize)]
struct QuestionnaireBody {
    responses: Vec<i64>,
}

async fn submit_questionnaire(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<QuestionnaireBody>,
) -> ApiResult<Json<Value>> {
    let slot = st.slot(&id).await?;
    let mut g = slot.lock().await;
    let fresh = g.session.score.is_none();
    let score = g.session.submit_questionnaire(&body.responses, &st.config.questionnaire)?;
    if fresh {
        st.append(&Record::Questionnaire {
            id: id.clone(),
            responses: body.responses,
        })?;
    }
    Ok(Json(json!({ "traits": score.traits, "raw": score.raw, "phase": g.session.phase() })))
}

async fn next_event(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let slot = st.slot(&id).await?;
    let g = slot.lock().await;
    let (step, status) = g.session.next_event()?;
    Ok(Json(json!({
        "step": step,
        "total": STEPS,
        "status": status,
        "prompt": PROMPTS[step - 1],
    })))
}

#[derive(Deserialize)]
struct SaveBody {
    step: usize,
    #[serde(default)]
    #[allow(dead_code)]
    answer: Option<String>,
}

fn ack_response(code: StatusCode, body: Value, retry_after: Option<Duration>) -> Response {
    let mut resp = (code, Json(body)).into_response();
    if let Some(d) = retry_after {
        let secs = d.as_secs_f64().ceil().max(1.0) as u64;
        resp.headers_mut()
            .insert(header::RETRY_AFTER, HeaderValue::from(secs));
    }
    resp
}

async fn save(State(st): State<Arc<AppState>>, Path(id): Path<String>, Json(body): Json<SaveBody>) -> ApiResult<Response> {
    let slot = st.slot(&id).await?;
    let step = body.step;
    let mut g = slot.lock().await;
    if g.session.reports.iter().any(|r| r.step == step) {
        if let Some((code, ack)) = g.acks.get(&step) {
            return Ok(ack_response(*code, ack.clone(), None));
        }
    }
    let first = !g.session.saved.contains(&step);
    let status = g.session.attempt_save(step)?;
    if first {
        st.append(&Record::Save { id: id.clone(), step })?;
    }
    let started = Instant::now();
    let (code, ack, retry) = match status {
        SystemStatus::Idle => (StatusCode::OK, json!({ "step": step, "outcome": "saved" }), None),
        SystemStatus::Slow => {
            // Other requests for this session must not queue behind the delay.
            drop(g);
            tokio::time::sleep(st.config.slow_delay).await;
            g = slot.lock().await;
            let ms = started.elapsed().as_secs_f64() * 1e3;
            (StatusCode::OK, json!({ "step": step, "outcome": "saved", "server_ms": ms }), None)
        }
        SystemStatus::Error => (
            StatusCode::INTERNAL_SERVER_ERROR,
            json!({ "step": step, "outcome": "error", "error": "internal server error: the record could not be written" }),
            None,
        ),
        SystemStatus::Down => {
            let since = *g.down_since.entry(step).or_insert(started);
            let elapsed = started.duration_since(since);
            if elapsed < st.config.down_window {
                let left = st.config.down_window - elapsed;
                (
                    StatusCode::SERVICE_UNAVAILABLE,
                    json!({
                        "step": step,
                        "outcome": "unavailable",
                        "error": "service unavailable",
                        "retry_after_ms": left.as_millis() as u64,
                    }),
                    Some(left),
                )
            } else {
                (StatusCode::OK, json!({ "step": step, "outcome": "recovered" }), None)
            }
        }
    };
    g.acks.insert(step, (code, ack.clone()));
    Ok(ack_response(code, ack, retry))
}

#[derive(Deserialize)]
struct EmotionBody {
    step: usize,
    sliders: Sliders,
    latency_ms: Option<f64>,
}

async fn submit_emotion(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<EmotionBody>,
) -> ApiResult<Json<Value>> {
    let slot = st.slot(&id).await?;
    let mut g = slot.lock().await;
    let before = g.session.reports.len();
    let r = g.session.submit_emotion(body.step, body.sliders, body.latency_ms)?;
    if g.session.reports.len() > before {
        st.append(&Record::Emotion {
            id: id.clone(),
            step: body.step,
            sliders: body.sliders,
            latency_ms: body.latency_ms,
        })?;
    }
    Ok(Json(json!({
        "step": r.step,
        "status": r.status,
        "emotions": r.emotions,
        "latency_ms": r.latency_ms,
        "last": r.step == STEPS,
    })))
}

/// Values for `schema` from one slider report of a completed session.
pub fn feature_row(session: &Session, report: &EmotionReport, schema: &FeatureSchema) -> Option<FeatureRow> {
    let score = session.score?;
    let values = schema
        .names()
        .iter()
        .map(|n| match n.as_str() {
            "age" => Some(session.age),
            name => name
                .parse::<pmsys_core::Emotion>()
                .ok()
                .map(|e| report.emotions.get(e))
                .or_else(|| name.parse::<pmsys_core::Trait>().ok().map(|t| score.traits.get(t))),
        })
        .collect::<Option<Vec<f64>>>()?;
    Some(FeatureRow {
        values,
        label: Some(report.status),
    })
}

#[derive(Deserialize)]
struct ExportQuery {
    format: Option<String>,
    session: Option<String>,
}

#[derive(Serialize)]
struct ExportRow {
    session_id: String,
    step: usize,
    label: SystemStatus,
    values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    predicted: Option<SystemStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    distribution: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct Export {
    schema: Vec<String>,
    sessions: usize,
    rows: Vec<ExportRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
}

async fn export(State(st): State<Arc<AppState>>, Query(q): Query<ExportQuery>) -> ApiResult<Response> {
    let format = q.format.as_deref().unwrap_or("json");
    if format != "json" && format != "csv" {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("format must be json or csv, got {format:?}"),
        ));
    }
    let schema = st.config.export_schema();
    let slots: Vec<Arc<Mutex<Slot>>> = match &q.session {
        Some(id) => vec![st.slot(id).await?],
        None => st.sessions.read().await.values().cloned().collect(),
    };
    let mut done: Vec<Session> = Vec::new();
    for slot in slots {
        let g = slot.lock().await;
        if g.session.phase() == Phase::Complete {
            done.push(g.session.clone());
        }
    }
    done.sort_by_key(|s| s.seq);

    let mut rows = Vec::new();
    let mut feature_rows = Vec::new();
    for s in &done {
        let mut reports = s.reports.clone();
        reports.sort_by_key(|r| r.step);
        for r in &reports {
            let fr = feature_row(s, r, schema).expect("export schema checked at startup");
            rows.push(ExportRow {
                session_id: s.id.clone(),
                step: r.step,
                label: r.status,
                values: fr.values.clone(),
                predicted: None,
                distribution: None,
            });
            feature_rows.push(fr);
        }
    }
    let warning = done
        .is_empty()
        .then(|| "no completed sessions; the export is empty".to_string());
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let mut report = None;
    if let (Some(model), false) = (&st.config.model, feature_rows.is_empty()) {
        for (row, fr) in rows.iter_mut().zip(&feature_rows) {
            let p = model.predict(&fr.values)?;
            row.predicted = Some(p.label);
            row.distribution = Some(model.distribution(&p));
        }
        report = Some(pmsys_core::model::evaluate_forest(model, &feature_rows)?);
    }

    if format == "csv" {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["session_id".to_string(), "step".to_string()];
        header.extend(schema.names().iter().cloned());
        header.push("label".into());
        if st.config.model.is_some() {
            header.push("predicted".into());
        }
        let csv_err = |e: csv::Error| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
        w.write_record(&header).map_err(csv_err)?;
        for r in &rows {
            let mut rec = vec![r.session_id.clone(), r.step.to_string()];
            rec.extend(r.values.iter().map(|v| v.to_string()));
            rec.push(r.label.to_string());
            if let Some(p) = r.predicted {
                rec.push(p.to_string());
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        let mut resp = ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response();
        if let Some(w) = warning {
            resp.headers_mut()
                .insert("x-pmsys-warning", HeaderValue::from_str(&w).expect("ascii warning"));
        }
        return Ok(resp);
    }
    Ok(Json(Export {
        schema: schema.names().to_vec(),
        sessions: done.len(),
        rows,
        report,
        warning,
    })
    .into_response())
}
