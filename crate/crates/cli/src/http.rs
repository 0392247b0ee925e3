//! HTTP binding of the session protocol, with a server-sent event stream of agent moves.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ccheckers::agents::AgentKind;
use ccheckers::nn::Network;
use ccheckers::serve::{CreateRequest, ErrorBody, MoveRequest, ServeError, SessionStore};
use futures::{Stream, StreamExt};
use serde::Deserialize;
use tokio::sync::broadcast;
use tokio_stream::wrappers::BroadcastStream;

pub struct AppState {
    pub store: SessionStore,
    events: broadcast::Sender<(String, String)>,
}

impl AppState {
    pub fn new(nets: BTreeMap<AgentKind, Arc<Network>>) -> Arc<Self> {
        let (events, _) = broadcast::channel(64);
        Arc::new(AppState { store: SessionStore::new(nets), events })
    }
}

pub struct ApiError(ServeError);

impl From<ServeError> for ApiError {
    fn from(e: ServeError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(ErrorBody::from(&self.0))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Deserialize)]
struct LegalQuery {
    from: String,
}

async fn create(State(app): State<Arc<AppState>>, body: Option<Json<CreateRequest>>) -> Result<impl IntoResponse, ApiError> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let created = app.store.create(&req)?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn legal(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<LegalQuery>,
) -> ApiResult<ccheckers::serve::LegalResponse> {
    Ok(Json(app.store.legal(&id, &q.from)?))
}

async fn apply_move(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<MoveRequest>,
) -> ApiResult<ccheckers::serve::MoveResponse> {
    Ok(Json(app.store.apply_move(&id, &req)?))
}

async fn agent_move(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<ccheckers::serve::AgentMoveResponse> {
    let worker = app.clone();
    let sid = id.clone();
    let reply = tokio::task::spawn_blocking(move || worker.store.agent_move(&sid))
        .await
        .map_err(|e| ApiError(ServeError::BadRequest(format!("agent task failed: {e}"))))??;
    if let Ok(text) = serde_json::to_string(&reply) {
        let _ = app.events.send((id, text));
    }
    Ok(Json(reply))
}

async fn state(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<ccheckers::game::StateJson> {
    Ok(Json(app.store.state(&id)?))
}

async fn agents(State(app): State<Arc<AppState>>) -> Json<Vec<AgentKind>> {
    Json(app.store.available_agents())
}

async fn events(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    app.store.get(&id)?;
    let stream = BroadcastStream::new(app.events.subscribe()).filter_map(move |msg| {
        let id = id.clone();
        async move {
            match msg {
                Ok((sid, text)) if sid == id => Some(Ok(Event::default().event("agent-move").data(text))),
                _ => None,
            }
        }
    });
    Ok(Sse::new(stream))
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/agents", get(agents))
        .route("/session", post(create))
        .route("/session/{id}/legal", get(legal))
        .route("/session/{id}/move", post(apply_move))
        .route("/session/{id}/agent-move", post(agent_move))
        .route("/session/{id}/state", get(state))
        .route("/session/{id}/events", get(events))
        .with_state(app)
}

pub async fn serve(addr: std::net::SocketAddr, app: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app)).await
}
