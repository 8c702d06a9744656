//! HTTP facade over the engine.
//!
//! Routes:
//!
//! ```text
//! POST /scenarios                      upload a scenario document
//! POST /scenarios/{id}/sessions        open a consultation session
//! POST /sessions/{id}/votes            record votes, returns the tally
//! POST /sessions/{id}/classify         close the session and classify
//! POST /scenarios/{id}/cycles          run and persist a cycle, returns the machine report
//! POST /cycles/{id}/whatif             re-run a stored cycle with overrides, nothing persisted
//! GET  /cycles/{id}/report?format=...  human, machine or plotdata report
//! GET  /scenarios/{id}/history         stored records of the lineage
//! ```
//!
//! Handlers only translate between JSON and engine calls. Errors come back as
//! `{"error": code, "diagnostics": [...]}` with 400 for bad input, 404 for unknown
//! ids and 409 for votes on closed sessions.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use pcl_core::classification::{classify, AggregationRule, ConsultationSession, SessionStatus, VoteTally};
use pcl_core::config::{AppraisalMode, CycleConfig};
use pcl_core::cycle::{evaluate_cycle_with, run_cycle, Clock, CycleRecord, Flag, GapReport};
use pcl_core::error::{Diagnostic, PclError};
use pcl_core::risk_model::{GroupId, LossId};
use pcl_core::scenario_io::{emit_record, emit_report, parse_scenario, ReportFormat, ScenarioDocument, VoteEntry};
use pcl_core::step1_cover::CoverSolution;
use pcl_core::step2_portfolio::{ForcedChoices, Portfolio};
use pcl_core::store::RecordStore;
use pcl_core::TolerabilityPartition;

pub const DEFAULT_PORT: u16 = 8080;

/// Port from `PCL_PORT`, falling back to [`DEFAULT_PORT`].
pub fn port_from_env() -> Result<u16, String> {
    match std::env::var("PCL_PORT") {
        Ok(v) => v.parse().map_err(|_| format!("PCL_PORT={v:?} is not a port number")),
        Err(_) => Ok(DEFAULT_PORT),
    }
}

struct SessionEntry {
    scenario_id: String,
    session: ConsultationSession,
}

pub struct AppState {
    store: RecordStore,
    clock: Clock,
    scenarios: RwLock<BTreeMap<String, ScenarioDocument>>,
    sessions: Mutex<BTreeMap<String, SessionEntry>>,
    /// Serializes record-store appends.
    writes: Mutex<()>,
    next_session: AtomicU64,
}

impl AppState {
    pub fn new(store: RecordStore, clock: Clock) -> Self {
        AppState {
            store,
            clock,
            scenarios: RwLock::new(BTreeMap::new()),
            sessions: Mutex::new(BTreeMap::new()),
            writes: Mutex::new(()),
            next_session: AtomicU64::new(1),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    diagnostics: Vec<Diagnostic>,
}

impl ApiError {
    fn not_found(what: &str, id: &str) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            code: "not_found".into(),
            diagnostics: vec![Diagnostic::new("not_found", what, format!("no {what} {id}"))],
        }
    }

    fn bad_request(code: &str, location: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: code.into(),
            diagnostics: vec![Diagnostic::new(code, location, message)],
        }
    }
}

impl From<PclError> for ApiError {
    fn from(e: PclError) -> Self {
        let status = match e {
            PclError::State(_) => StatusCode::CONFLICT,
            PclError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError {
            status,
            code: e.code().into(),
            diagnostics: e.diagnostics(),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    diagnostics: &'a [Diagnostic],
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::to_string_pretty(&ErrorBody {
            error: &self.code,
            diagnostics: &self.diagnostics,
        })
        .expect("error body serializes");
        (self.status, [(header::CONTENT_TYPE, "application/json")], body + "\n").into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    let body = serde_json::to_string_pretty(value).expect("response serializes") + "\n";
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn decode_body<T: DeserializeOwned>(body: &str, allow_empty: bool) -> Result<T, ApiError> {
    let text = if allow_empty && body.trim().is_empty() { "{}" } else { body };
    serde_json::from_str(text).map_err(|e| {
        ApiError::bad_request("request.schema", &format!("{}:{}", e.line(), e.column()), e.to_string())
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingVote {
    pub group: GroupId,
    pub loss_id: LossId,
}

/// A session's state as seen by clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub scenario_id: String,
    pub status: SessionStatus,
    pub groups: Vec<GroupId>,
    pub considered_losses: BTreeSet<LossId>,
    pub votes: Vec<VoteEntry>,
    pub tally: Vec<VoteTally>,
    pub missing: Vec<MissingVote>,
    pub complete: bool,
}

impl SessionView {
    fn of(entry: &SessionEntry) -> Self {
        let s = &entry.session;
        SessionView {
            session_id: s.session_id.clone(),
            scenario_id: entry.scenario_id.clone(),
            status: s.status,
            groups: s.groups.clone(),
            considered_losses: s.considered_losses.clone(),
            votes: pcl_core::VoteLedger::from_session(s).votes,
            tally: s.tally(),
            missing: s
                .missing_votes()
                .into_iter()
                .map(|(group, loss_id)| MissingVote { group, loss_id })
                .collect(),
            complete: s.is_complete(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioCreated {
    pub scenario_id: String,
    pub scenario_digest: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenSessionRequest {
    pub groups: Vec<GroupId>,
    /// Defaults to the scenario's configured threshold.
    #[serde(default)]
    pub likelihood_threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VotesRequest {
    pub votes: Vec<VoteEntry>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyRequest {
    #[serde(default)]
    pub aggregation_threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleRequest {
    pub session_id: String,
    /// Defaults to the scenario's own defaults.
    #[serde(default)]
    pub config: Option<CycleConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hardship_multiplier: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equity_weights: Option<BTreeMap<GroupId, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<AppraisalMode>,
}

impl ConfigOverrides {
    fn apply(&self, config: &mut CycleConfig) {
        if let Some(e) = self.epsilon {
            config.epsilon = e;
        }
        if let Some(h) = self.hardship_multiplier {
            config.appraisal.hardship_multiplier = h;
        }
        if let Some(w) = &self.equity_weights {
            config.appraisal.equity_weights = w.clone();
        }
        if let Some(m) = self.mode {
            config.appraisal.mode = m;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    /// Must match the path id when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_cycle_id: Option<String>,
    #[serde(default)]
    pub vote_overrides: Vec<VoteEntry>,
    #[serde(default)]
    pub force_include: BTreeSet<String>,
    #[serde(default)]
    pub force_exclude: BTreeSet<String>,
    #[serde(default)]
    pub config_overrides: ConfigOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub base_cycle_id: String,
    pub partition: TolerabilityPartition,
    pub step1: CoverSolution,
    pub portfolio: Portfolio,
    pub gap: GapReport,
    pub flags: Vec<Flag>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/scenarios", post(create_scenario))
        .route("/scenarios/{id}/sessions", post(open_session))
        .route("/sessions/{id}/votes", post(record_votes))
        .route("/sessions/{id}/classify", post(classify_session))
        .route("/scenarios/{id}/cycles", post(create_cycle))
        .route("/cycles/{id}/whatif", post(what_if))
        .route("/cycles/{id}/report", get(report))
        .route("/scenarios/{id}/history", get(scenario_history))
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

async fn create_scenario(State(state): State<Arc<AppState>>, body: String) -> ApiResult {
    let doc = parse_scenario(&body)?;
    let created = ScenarioCreated {
        scenario_id: doc.scenario_id.clone(),
        scenario_digest: pcl_core::scenario_io::scenario_digest(&doc),
    };
    state.scenarios.write().expect("scenario lock").insert(doc.scenario_id.clone(), doc);
    Ok(json_response(StatusCode::CREATED, &created))
}

fn scenario(state: &AppState, id: &str) -> Result<ScenarioDocument, ApiError> {
    state
        .scenarios
        .read()
        .expect("scenario lock")
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found("scenario", id))
}

async fn open_session(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: String) -> ApiResult {
    let doc = scenario(&state, &id)?;
    let request: OpenSessionRequest = decode_body(&body, false)?;
    let threshold = request.likelihood_threshold.unwrap_or(doc.defaults.likelihood_threshold);
    let n = state.next_session.fetch_add(1, Ordering::SeqCst);
    let session = ConsultationSession::open(format!("{id}-s{n}"), &doc, request.groups, threshold)?;
    let entry = SessionEntry {
        scenario_id: id,
        session,
    };
    let view = SessionView::of(&entry);
    state.sessions.lock().expect("session lock").insert(view.session_id.clone(), entry);
    Ok(json_response(StatusCode::CREATED, &view))
}

async fn record_votes(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: String) -> ApiResult {
    let request: VotesRequest = decode_body(&body, false)?;
    let mut sessions = state.sessions.lock().expect("session lock");
    let entry = sessions.get_mut(&id).ok_or_else(|| ApiError::not_found("session", &id))?;
    // All or nothing.
    let mut next = entry.session.clone();
    for vote in &request.votes {
        next.record_vote(&vote.group, &vote.loss_id, vote.verdict)?;
    }
    entry.session = next;
    Ok(json_response(StatusCode::OK, &SessionView::of(entry)))
}

async fn classify_session(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: String) -> ApiResult {
    let request: ClassifyRequest = decode_body(&body, true)?;
    let mut sessions = state.sessions.lock().expect("session lock");
    let entry = sessions.get_mut(&id).ok_or_else(|| ApiError::not_found("session", &id))?;
    let threshold = match request.aggregation_threshold {
        Some(t) => t,
        None => scenario(&state, &entry.scenario_id)?.defaults.aggregation_threshold,
    };
    let partition = classify(&entry.session, AggregationRule { threshold })?;
    entry.session.close();
    Ok(json_response(StatusCode::OK, &partition))
}

async fn create_cycle(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: String) -> ApiResult {
    let doc = scenario(&state, &id)?;
    let request: CycleRequest = decode_body(&body, false)?;
    let session = {
        let sessions = state.sessions.lock().expect("session lock");
        let entry = sessions
            .get(&request.session_id)
            .ok_or_else(|| ApiError::not_found("session", &request.session_id))?;
        if entry.scenario_id != id {
            return Err(ApiError::bad_request(
                "session.scenario_mismatch",
                "session_id",
                format!("session {} belongs to scenario {}", request.session_id, entry.scenario_id),
            ));
        }
        entry.session.clone()
    };
    let config = request.config.unwrap_or_else(|| doc.defaults.clone());
    let record = {
        let _guard = state.writes.lock().expect("write lock");
        run_cycle(&state.store, &doc, &session, &config, state.clock)?
    };
    Ok((StatusCode::CREATED, [(header::CONTENT_TYPE, "application/json")], emit_record(&record)).into_response())
}

fn split_cycle_id(id: &str) -> Result<(&str, u32), ApiError> {
    id.rsplit_once("-r")
        .and_then(|(lineage, rev)| rev.parse().ok().map(|r| (lineage, r)))
        .ok_or_else(|| ApiError::not_found("cycle", id))
}

fn load_record(state: &AppState, id: &str) -> Result<CycleRecord, ApiError> {
    let (lineage, revision) = split_cycle_id(id)?;
    state.store.load(lineage, revision).map_err(|e| match e {
        PclError::Reference(_) => ApiError::not_found("cycle", id),
        other => other.into(),
    })
}

async fn what_if(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: String) -> ApiResult {
    let request: WhatIfRequest = decode_body(&body, true)?;
    if let Some(base) = &request.base_cycle_id {
        if base != &id {
            return Err(ApiError::bad_request(
                "whatif.base_mismatch",
                "base_cycle_id",
                format!("body names cycle {base} but the path names {id}"),
            ));
        }
    }
    let (lineage, revision) = split_cycle_id(&id)?;
    let inputs = state.store.load_inputs(lineage, revision).map_err(|e| match e {
        PclError::Reference(_) => ApiError::not_found("cycle", &id),
        other => other.into(),
    })?;

    let mut config = inputs.config.clone();
    request.config_overrides.apply(&mut config);
    let mut session = inputs.votes.into_session(&inputs.scenario, inputs.config.likelihood_threshold)?;
    session.reopen();
    for vote in &request.vote_overrides {
        session.record_vote(&vote.group, &vote.loss_id, vote.verdict)?;
    }
    let forced = ForcedChoices {
        include: request.force_include,
        exclude: request.force_exclude,
    };
    let outcome = evaluate_cycle_with(&inputs.scenario, &session, &config, &forced)?;
    Ok(json_response(
        StatusCode::OK,
        &WhatIfResponse {
            base_cycle_id: id,
            partition: outcome.partition,
            step1: outcome.step1,
            portfolio: outcome.step2,
            gap: outcome.gap,
            flags: outcome.flags,
        },
    ))
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    format: Option<String>,
}

async fn report(State(state): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<ReportQuery>) -> ApiResult {
    let format = q.format.unwrap_or_else(|| "machine".into());
    let content_type = match format.parse::<ReportFormat>()? {
        ReportFormat::Human => "text/plain; charset=utf-8",
        ReportFormat::Machine | ReportFormat::Plotdata => "application/json",
    };
    let record = load_record(&state, &id)?;
    let text = emit_report(&record, &format)?;
    Ok((StatusCode::OK, [(header::CONTENT_TYPE, content_type)], text).into_response())
}

async fn scenario_history(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let records = match state.store.history(&id) {
        Ok(records) => records,
        // Names that cannot be lineages have no history.
        Err(PclError::Reference(_)) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    Ok(json_response(StatusCode::OK, &records))
}
