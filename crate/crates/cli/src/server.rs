//! HTTP front end over [`ChatModels`].
//!
//! - `POST /chat` with `{"history": [string]}` returns the turn's
//!   [`ChatTurnResult`](groundchat::pipeline::ChatTurnResult).
//! - `GET /health` returns `{"status", "model_hash"}`.
//! - `GET /facts/{entity}` returns the facts filed under an entity.
//!
//! Until the artifacts are loaded every route answers 503.

use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};

use groundchat::facts::entity_key;
use groundchat::pipeline::ChatModels;

/// Loaded artifacts and the hash of the checkpoint they came from.
pub struct Service {
    pub models: ChatModels,
    pub model_hash: String,
}

/// Shared handle; empty until loading completes.
#[derive(Clone, Default)]
pub struct AppState {
    slot: Arc<OnceLock<Arc<Service>>>,
}

impl AppState {
    pub fn loaded(service: Service) -> Self {
        let s = Self::default();
        s.install(service);
        s
    }

    /// Make `service` available; later calls are ignored.
    pub fn install(&self, service: Service) {
        let _ = self.slot.set(Arc::new(service));
    }

    fn get(&self) -> Result<Arc<Service>, Response> {
        self.slot
            .get()
            .cloned()
            .ok_or_else(|| error(StatusCode::SERVICE_UNAVAILABLE, "model is still loading"))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatRequest {
    pub history: Vec<String>,
}

#[derive(Serialize)]
struct Health<'a> {
    status: &'a str,
    model_hash: &'a str,
}

#[derive(Serialize)]
struct EntityFacts<'a> {
    entity: String,
    facts: Vec<&'a str>,
}

fn json_bytes(status: StatusCode, body: Vec<u8>) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn error(status: StatusCode, message: &str) -> Response {
    let body = serde_json::to_vec(&serde_json::json!({ "error": message })).expect("serializable");
    json_bytes(status, body)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/chat", post(chat))
        .route("/health", get(health))
        .route("/facts/{entity}", get(facts))
        .with_state(state)
}

async fn health(State(state): State<AppState>) -> Response {
    match state.get() {
        Ok(s) => json_bytes(
            StatusCode::OK,
            serde_json::to_vec(&Health {
                status: "ok",
                model_hash: &s.model_hash,
            })
            .expect("serializable"),
        ),
        Err(_) => {
            let body = serde_json::to_vec(&Health {
                status: "loading",
                model_hash: "",
            })
            .expect("serializable");
            json_bytes(StatusCode::SERVICE_UNAVAILABLE, body)
        }
    }
}

async fn facts(State(state): State<AppState>, Path(entity): Path<String>) -> Response {
    let s = match state.get() {
        Ok(s) => s,
        Err(r) => return r,
    };
    let key = entity_key(&entity);
    let collection = &s.models.facts;
    if !collection.contains_entity(&key) {
        return error(StatusCode::NOT_FOUND, &format!("unknown entity {key}"));
    }
    let found = collection.retrieve(&[key.as_str()]);
    let body = EntityFacts {
        entity: key.clone(),
        facts: found.iter().map(|f| f.text.as_str()).collect(),
    };
    json_bytes(StatusCode::OK, serde_json::to_vec(&body).expect("serializable"))
}

async fn chat(State(state): State<AppState>, body: Bytes) -> Response {
    let s = match state.get() {
        Ok(s) => s,
        Err(r) => return r,
    };
    let req: ChatRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, &format!("malformed body: {e}")),
    };
    if req.history.iter().all(|t| t.trim().is_empty()) {
        return error(StatusCode::BAD_REQUEST, "history is empty");
    }
    let result = tokio::task::spawn_blocking(move || s.models.chat_turn(&req.history)).await;
    match result {
        Ok(Ok(turn)) => json_bytes(StatusCode::OK, serde_json::to_vec(&turn).expect("serializable")),
        Ok(Err(e @ groundchat::Error::Empty(_))) => error(StatusCode::BAD_REQUEST, &e.to_string()),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, &e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, &e.to_string()),
    }
}
