//! HTTP service over the meeting engine.
//!
//! Routes:
//!
//! ```text
//! GET  /health
//! POST /projects                      {title, description?, objectives?}
//! GET  /projects
//! GET  /projects/{id}
//! POST /projects/{id}/experts         {name, persona}
//! POST /projects/{id}/documents       {expert, source_name, media?, content}
//! GET  /projects/{id}/meetings
//! POST /projects/{id}/meetings        {agenda, rounds, participants, retrieval_k?, context_budget?}
//! POST /experts/{id}/warmup
//! GET  /meetings/{id}
//! GET  /meetings/{id}/events?from_seq=n    server-sent events
//! GET  /meetings/{id}/minutes?format=markdown
//! ```
//!
//! Meetings run on blocking worker threads; the start request returns `202`
//! with the meeting id as soon as the meeting is validated and registered.

mod error;
pub mod hub;
pub mod stream;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::StreamExt;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thinktank_core::model::{
    ExpertId, Media, MeetingConfig, MeetingId, MeetingKind, ProjectId, DEFAULT_CONTEXT_BUDGET, DEFAULT_RETRIEVAL_K,
};
use thinktank_core::{Engine, Error, PreparedMeeting};
use tracing::{error, info};

pub use error::ApiError;
pub use hub::Hub;

pub const DEFAULT_PORT: u16 = 8700;

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
pub struct AppState {
    engine: Engine,
    hub: Arc<Hub>,
}

impl AppState {
    /// Wires the engine's event sink to a fresh hub.
    pub fn new(engine: Engine) -> Self {
        Self::with_hub(engine, Arc::new(Hub::default()))
    }

    pub fn with_hub(engine: Engine, hub: Arc<Hub>) -> Self {
        let engine = engine.with_sink(hub.clone());
        Self { engine, hub }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/{id}", get(show_project))
        .route("/projects/{id}/experts", post(add_expert))
        .route("/projects/{id}/documents", post(ingest_document))
        .route("/projects/{id}/meetings", post(start_meeting).get(list_meetings))
        .route("/experts/{id}/warmup", post(start_warmup))
        .route("/meetings/{id}", get(show_meeting))
        .route("/meetings/{id}/events", get(meeting_events))
        .route("/meetings/{id}/minutes", get(meeting_minutes))
        .with_state(state)
}

/// Settles meetings a previous process left running, then serves until
/// ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, engine: Engine) -> std::io::Result<()> {
    let store = engine.store().clone();
    let now = engine.ids().now();
    let settled = tokio::task::spawn_blocking(move || store.fail_interrupted_meetings(now))
        .await
        .expect("recovery task panicked")
        .map_err(std::io::Error::other)?;
    if !settled.is_empty() {
        info!(count = settled.len(), "settled meetings interrupted by a previous shutdown");
    }
    info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(AppState::new(engine)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> thinktank_core::Result<T> + Send + 'static,
{
    let engine = state.engine.clone();
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .expect("engine task panicked")
        .map_err(ApiError)
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError(Error::invalid("body", e.to_string())))
}

// -- handlers --------------------------------------------------------------

#[derive(Serialize)]
struct Health {
    status: &'static str,
    backend: thinktank_core::llm::BackendStatus,
}

async fn health(State(state): State<AppState>) -> ApiResult<Json<Health>> {
    let backend = blocking(&state, |e| Ok(e.gateway().health_check())).await?;
    Ok(Json(Health { status: "ok", backend }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateProject {
    title: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    objectives: Vec<String>,
}

async fn create_project(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: CreateProject = parse_body(&body)?;
    let project = blocking(&state, move |e| e.create_project(&req.title, &req.description, req.objectives)).await?;
    Ok((StatusCode::CREATED, Json(project)).into_response())
}

async fn list_projects(State(state): State<AppState>) -> ApiResult<Response> {
    Ok(Json(blocking(&state, |e| e.projects()).await?).into_response())
}

async fn show_project(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let id = ProjectId(id);
    Ok(Json(blocking(&state, move |e| e.project(&id)).await?).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AddExpert {
    name: String,
    persona: String,
}

async fn add_expert(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: AddExpert = parse_body(&body)?;
    let id = ProjectId(id);
    let expert = blocking(&state, move |e| e.add_expert(&id, &req.name, &req.persona)).await?;
    Ok((StatusCode::CREATED, Json(expert)).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestDocument {
    expert: String,
    source_name: String,
    #[serde(default)]
    media: Option<String>,
    content: String,
}

#[derive(Serialize)]
struct Ingested {
    document: thinktank_core::model::DocumentRef,
    chunk_count: usize,
}

async fn ingest_document(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: IngestDocument = parse_body(&body)?;
    let media: Media = req.media.as_deref().unwrap_or("plain_text").parse()?;
    let id = ProjectId(id);
    let out = blocking(&state, move |e| e.ingest_document(&id, &req.expert, &req.source_name, &req.content, media)).await?;
    let body = Ingested {
        document: out.document,
        chunk_count: out.chunk_count,
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StartMeeting {
    agenda: String,
    rounds: u32,
    #[serde(alias = "experts")]
    participants: Vec<String>,
    #[serde(default)]
    retrieval_k: Option<usize>,
    #[serde(default)]
    context_budget: Option<usize>,
}

#[derive(Serialize)]
struct Started {
    meeting_id: MeetingId,
}

/// Registers the meeting, then runs it detached from the request.
async fn launch(state: &AppState, prepare: impl FnOnce(&Engine) -> thinktank_core::Result<PreparedMeeting> + Send + 'static) -> ApiResult<Response> {
    let prepared = blocking(state, prepare).await?;
    let meeting_id = prepared.record().id.clone();
    let engine = state.engine.clone();
    let hub = state.hub.clone();
    let id = meeting_id.clone();
    tokio::spawn(async move {
        match tokio::task::spawn_blocking(move || prepared.run()).await {
            Ok(Ok(_)) => {}
            Ok(Err(e)) => info!(meeting = %id, error = %e, "meeting ended with an error"),
            Err(panic) => {
                error!(meeting = %id, %panic, "meeting task panicked");
                settle_after_panic(engine, hub, id).await;
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(Started { meeting_id })).into_response())
}

/// The slot lock was released by unwinding, so recovery can record the
/// failure; subscribers get the terminal event from the hub.
async fn settle_after_panic(engine: Engine, hub: Arc<Hub>, id: MeetingId) {
    let result = tokio::task::spawn_blocking(move || {
        engine.store().fail_interrupted_meetings(engine.ids().now())?;
        engine.events(&id, 1)
    })
    .await;
    if let Ok(Ok(events)) = result {
        if let Some(last) = events.last() {
            thinktank_core::EventSink::publish(&*hub, last);
        }
    }
}

async fn start_meeting(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: StartMeeting = parse_body(&body)?;
    let config = MeetingConfig {
        project_id: ProjectId(id),
        agenda: req.agenda,
        rounds: req.rounds,
        participants: req.participants,
        kind: MeetingKind::Team,
        retrieval_k: req.retrieval_k.unwrap_or(DEFAULT_RETRIEVAL_K),
        context_budget: req.context_budget.unwrap_or(DEFAULT_CONTEXT_BUDGET),
    };
    launch(&state, move |e| e.prepare_meeting(config)).await
}

async fn start_warmup(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let expert = ExpertId(id);
    launch(&state, move |e| {
        let project = e
            .projects()?
            .into_iter()
            .find(|p| p.expert_by_id(&expert).is_some())
            .ok_or_else(|| Error::not_found("expert", expert.as_str()))?;
        let name = project.expert_by_id(&expert).expect("found above").name.clone();
        e.prepare_warmup(&project.id, &name)
    })
    .await
}

async fn list_meetings(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let id = ProjectId(id);
    Ok(Json(blocking(&state, move |e| e.store().list_meetings(&id)).await?).into_response())
}

async fn show_meeting(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let id = MeetingId(id);
    Ok(Json(blocking(&state, move |e| e.meeting(&id)).await?).into_response())
}

#[derive(Deserialize)]
struct EventsQuery {
    from_seq: Option<u64>,
}

async fn meeting_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<EventsQuery>,
) -> ApiResult<Response> {
    let id = MeetingId(id);
    let from_seq = query.from_seq.unwrap_or(1).max(1);
    let lookup = id.clone();
    blocking(&state, move |e| e.meeting(&lookup)).await?;
    // Subscribe before reading the log so nothing falls between the two.
    let rx = state.hub.subscribe(&id);
    let read = id.clone();
    let replay = match blocking(&state, move |e| e.events(&read, from_seq)).await {
        Ok(r) => r,
        Err(e) => {
            drop(rx);
            state.hub.release(&id);
            return Err(e);
        }
    };
    let events = stream::event_stream(state.hub.clone(), id, rx, replay, from_seq)
        .map(|frame| Ok::<_, std::convert::Infallible>(frame.into_sse()));
    Ok(Sse::new(events)
        .keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
        .into_response())
}

#[derive(Deserialize)]
struct MinutesQuery {
    format: Option<String>,
}

async fn meeting_minutes(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<MinutesQuery>,
) -> ApiResult<Response> {
    let id = MeetingId(id);
    match query.format.as_deref() {
        None | Some("json") => Ok(Json(blocking(&state, move |e| e.minutes(&id)).await?).into_response()),
        Some("markdown" | "md" | "text") => {
            let text = blocking(&state, move |e| e.export_minutes(&id)).await?;
            Ok(([(header::CONTENT_TYPE, "text/markdown; charset=utf-8")], text).into_response())
        }
        Some(other) => Err(ApiError(Error::invalid(
            "format",
            format!("unknown format `{other}` (expected json or markdown)"),
        ))),
    }
}
