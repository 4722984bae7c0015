//! axum transport for [`Session`]: one WebSocket connection, one session.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use blendlab::arbitration::ArbitratorRegistry;
use blendlab::simulator::{EpisodeConfig, Scenario};
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tokio::time::MissedTickBehavior;

use crate::protocol::ServerMessage;
use crate::session::Session;

/// What every new session starts from.
#[derive(Clone)]
pub struct ServiceConfig {
    pub scenario: Scenario,
    pub episode: EpisodeConfig,
    pub tick_ms: u64,
    pub registry: Arc<ArbitratorRegistry>,
}

pub fn router(config: ServiceConfig) -> Router {
    Router::new()
        .route("/session", get(upgrade))
        .with_state(Arc::new(config))
}

/// Serves `/session` on an already bound listener until the process ends.
pub async fn serve(listener: TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    axum::serve(listener, router(config)).await
}

async fn upgrade(ws: WebSocketUpgrade, State(config): State<Arc<ServiceConfig>>) -> Response {
    ws.on_upgrade(move |socket| run(socket, config))
}

async fn send_all(sink: &mut futures_util::stream::SplitSink<WebSocket, Message>, msgs: Vec<ServerMessage>) -> bool {
    for m in msgs {
        let text = serde_json::to_string(&m).expect("server messages serialize");
        if sink.send(Message::Text(text)).await.is_err() {
            return false;
        }
    }
    true
}

/// The session loop. A reader task forwards client frames; the loop applies
/// them as they come (inputs overwrite the session's mailbox) and steps the
/// simulation on its own clock.
async fn run(socket: WebSocket, config: Arc<ServiceConfig>) {
    let (mut sink, mut stream) = socket.split();
    let mut session = match Session::new(
        &config.scenario,
        config.episode.clone(),
        config.tick_ms,
        config.registry.clone(),
    ) {
        Ok(s) => s,
        Err(e) => {
            tracing::error!(error = %e, "cannot start session");
            return;
        }
    };
    if !send_all(&mut sink, vec![session.hello()]).await {
        return;
    }

    let (tx, mut rx) = mpsc::unbounded_channel::<String>();
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = stream.next().await {
            match msg {
                Message::Text(t) => {
                    if tx.send(t).is_err() {
                        break;
                    }
                }
                Message::Binary(_) => {
                    if tx.send(String::new()).is_err() {
                        break;
                    }
                }
                Message::Close(_) => break,
                _ => {}
            }
        }
    });

    let mut clock = tokio::time::interval(Duration::from_millis(config.tick_ms));
    clock.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            frame = rx.recv() => {
                let Some(text) = frame else { break };
                let replies = session.receive(&text);
                if !send_all(&mut sink, replies).await {
                    break;
                }
            }
            _ = clock.tick() => {
                while let Ok(text) = rx.try_recv() {
                    let replies = session.receive(&text);
                    if !send_all(&mut sink, replies).await {
                        reader.abort();
                        return;
                    }
                }
                let (back, out) = match tokio::task::spawn_blocking(move || {
                    let out = session.tick();
                    (session, out)
                })
                .await
                {
                    Ok(pair) => pair,
                    Err(e) => {
                        tracing::error!(error = %e, "session tick panicked");
                        break;
                    }
                };
                session = back;
                match out {
                    Ok(msgs) => {
                        if !send_all(&mut sink, msgs).await {
                            break;
                        }
                    }
                    Err(e) => {
                        tracing::error!(error = %e, "session step failed");
                        break;
                    }
                }
            }
        }
    }
    reader.abort();
}
