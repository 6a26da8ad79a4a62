//! HTTP side: `/session` upgrades to a WebSocket that runs one [`Session`],
//! `/health` reports the tick rate and the number of open sessions.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use acc_sim::Scenario;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::time::Instant;

use crate::protocol::{ServerMessage, PROTOCOL_VERSION};
use crate::session::Session;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: u32,
    pub scenario: String,
    pub tick_rate_hz: f64,
    pub sessions: usize,
}

struct App {
    scenario: Scenario,
    sessions: AtomicUsize,
    next_id: AtomicU64,
}

struct SessionCount(Arc<App>);

impl SessionCount {
    fn open(app: Arc<App>) -> Self {
        app.sessions.fetch_add(1, Ordering::SeqCst);
        Self(app)
    }
}

impl Drop for SessionCount {
    fn drop(&mut self) {
        self.0.sessions.fetch_sub(1, Ordering::SeqCst);
    }
}

pub fn router(scenario: Scenario) -> Router {
    let app = Arc::new(App {
        scenario,
        sessions: AtomicUsize::new(0),
        next_id: AtomicU64::new(1),
    });
    Router::new()
        .route("/health", get(health))
        .route("/session", get(session))
        .with_state(app)
}

/// Serves the scenario on an already bound listener until the task is dropped.
pub async fn serve(listener: TcpListener, scenario: Scenario) -> std::io::Result<()> {
    axum::serve(listener, router(scenario)).await
}

/// Binds `addr` and returns the listener with its resolved address.
pub async fn bind(addr: SocketAddr) -> std::io::Result<(TcpListener, SocketAddr)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}

async fn health(State(app): State<Arc<App>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: PROTOCOL_VERSION,
        scenario: app.scenario.name.clone(),
        tick_rate_hz: 1.0 / app.scenario.cfg.sample_time,
        sessions: app.sessions.load(Ordering::SeqCst),
    })
}

async fn session(ws: WebSocketUpgrade, State(app): State<Arc<App>>) -> Response {
    ws.on_upgrade(move |socket| run_session(socket, app))
}

async fn run_session(socket: WebSocket, app: Arc<App>) {
    let id = app.next_id.fetch_add(1, Ordering::SeqCst);
    let mut session = match Session::new(id, app.scenario.clone()) {
        Ok(s) => s,
        Err(e) => {
            tracing::error!(session = id, error = %e, "cannot start session");
            return;
        }
    };
    let _count = SessionCount::open(app.clone());
    tracing::info!(session = id, "session opened");

    let (mut tx, mut rx) = socket.split();
    let info = ServerMessage::SessionInfo(session.info()).encode();
    if tx.send(Message::Text(info.into())).await.is_err() {
        return;
    }

    let mailbox = session.mailbox();
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = rx.next().await {
            match msg {
                Message::Text(text) => {
                    if let Err(e) = mailbox.ingest(text.as_str()) {
                        tracing::debug!(session = id, error = %e, "dropped message");
                    }
                }
                Message::Binary(_) => mailbox.reject(),
                Message::Close(_) => break,
                Message::Ping(_) | Message::Pong(_) => {}
            }
        }
    });

    let period = Duration::from_secs_f64(app.scenario.cfg.sample_time);
    let mut deadline = Instant::now();
    while !reader.is_finished() {
        let msg = ServerMessage::State(session.tick()).encode();
        if tx.send(Message::Text(msg.into())).await.is_err() {
            break;
        }
        deadline += period;
        tokio::time::sleep_until(deadline).await;
        let late = Instant::now().saturating_duration_since(deadline);
        let missed = (late.as_nanos() / period.as_nanos()) as u64;
        if missed > 0 {
            tracing::warn!(session = id, missed, "tick loop behind schedule");
            session.record_skips(missed);
            deadline += period * missed as u32;
        }
    }
    reader.abort();
    tracing::info!(
        session = id,
        ticks = session.log().rows.len(),
        skipped = session.skipped_ticks(),
        "session closed"
    );
}
