//! WebSocket bridge: command and stop frames in; acks, events and per-tick
//! state snapshots out. See docs/protocol.md.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::{broadcast, mpsc};
use tower_http::services::ServeDir;
use verbot_core::dispatcher::{Ack, Event, Runner, RunnerHandle, Snapshot};

use crate::cli::Setup;
use crate::EXIT_OK;

pub const PROTOCOL_VERSION: u64 = 1;
/// Messages a client may fall behind before it is disconnected.
pub const BACKLOG: usize = 1000;

const CONSOLE: &str = include_str!("../assets/console.html");

#[derive(Debug, Clone)]
enum Outbound {
    State(Snapshot),
    Event(Event),
}

#[derive(Clone)]
struct AppState {
    handle: RunnerHandle,
    feed: broadcast::Sender<Arc<Outbound>>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Inbound {
    Command { text: String, id: Option<Value> },
    Stop { id: Option<Value> },
}

pub fn run(setup: Setup, host: &str, port: u16, ui: Option<PathBuf>) -> Result<u8> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(serve(setup, host, port, ui))
}

async fn serve(setup: Setup, host: &str, port: u16, ui: Option<PathBuf>) -> Result<u8> {
    let listener = tokio::net::TcpListener::bind((host, port))
        .await
        .with_context(|| format!("binding {host}:{port}"))?;
    let (feed, _) = broadcast::channel::<Arc<Outbound>>(BACKLOG);
    let tx = feed.clone();
    let runner = Runner::spawn(
        setup.dispatcher,
        setup.tick,
        Box::new(move |snap: &Snapshot, events: &[Event]| {
            // No subscribers is not an error.
            for e in events {
                let _ = tx.send(Arc::new(Outbound::Event(e.clone())));
            }
            let _ = tx.send(Arc::new(Outbound::State(snap.clone())));
        }),
    );
    let state = AppState { handle: runner.handle(), feed };
    let mut app = Router::new().route("/ws", get(upgrade));
    app = match ui {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(|| async { Html(CONSOLE) })),
    };
    let app = app.with_state(state);

    let addr = listener.local_addr()?;
    println!("listening on http://{addr}");
    use std::io::Write;
    std::io::stdout().flush().ok();
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    runner.join();
    Ok(EXIT_OK)
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

fn envelope(kind: &str, seq: u64, mut body: serde_json::Map<String, Value>) -> String {
    body.insert("v".into(), PROTOCOL_VERSION.into());
    body.insert("type".into(), kind.into());
    body.insert("seq".into(), seq.into());
    Value::Object(body).to_string()
}

fn state_body(s: &Snapshot) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("state".into(), serde_json::to_value(s).expect("snapshot serializes"));
    m
}

fn ack_body(id: Option<Value>, ack: Result<Ack, String>) -> serde_json::Map<String, Value> {
    let v = match ack {
        Ok(a) => json!({
            "id": id, "ok": a.ok(), "command": a.command, "enqueued": a.enqueued, "error": a.error,
        }),
        Err(message) => json!({
            "id": id, "ok": false, "error": { "kind": "MalformedFrame", "message": message },
        }),
    };
    match v {
        Value::Object(m) => m,
        _ => unreachable!(),
    }
}

async fn connection(socket: WebSocket, state: AppState) {
    // Subscribe before reading the snapshot so nothing falls in between.
    let mut feed = state.feed.subscribe();
    let (mut sink, mut stream) = socket.split();
    let (acks_tx, mut acks) = mpsc::unbounded_channel::<serde_json::Map<String, Value>>();

    let mut seq = 0u64;
    let first = state.handle.snapshot();
    let mut last_tick = first.tick;
    if sink.send(Message::text(envelope("state", seq, state_body(&first)))).await.is_err() {
        return;
    }

    loop {
        tokio::select! {
            inbound = stream.next() => {
                let text = match inbound {
                    Some(Ok(Message::Text(t))) => t.to_string(),
                    Some(Ok(Message::Binary(b))) => String::from_utf8_lossy(&b).into_owned(),
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                handle_inbound(&state.handle, &text, &acks_tx);
            }
            Some(ack) = acks.recv() => {
                seq += 1;
                if sink.send(Message::text(envelope("ack", seq, ack))).await.is_err() {
                    break;
                }
            }
            out = feed.recv() => {
                let out = match out {
                    Ok(o) => o,
                    Err(broadcast::error::RecvError::Lagged(_)) => {
                        let _ = sink.send(Message::Close(None)).await;
                        break;
                    }
                    Err(broadcast::error::RecvError::Closed) => break,
                };
                let body = match out.as_ref() {
                    Outbound::State(s) => {
                        if s.tick < last_tick {
                            continue;
                        }
                        last_tick = s.tick;
                        ("state", state_body(s))
                    }
                    Outbound::Event(e) => {
                        let mut m = serde_json::Map::new();
                        m.insert("event".into(), serde_json::to_value(e).expect("event serializes"));
                        ("event", m)
                    }
                };
                seq += 1;
                if sink.send(Message::text(envelope(body.0, seq, body.1))).await.is_err() {
                    break;
                }
            }
        }
    }
}

fn handle_inbound(
    handle: &RunnerHandle,
    text: &str,
    acks: &mpsc::UnboundedSender<serde_json::Map<String, Value>>,
) {
    let frame: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => {
            let _ = acks.send(ack_body(None, Err(format!("not JSON: {e}"))));
            return;
        }
    };
    let id = frame.get("id").cloned();
    if let Some(v) = frame.get("v") {
        if v.as_u64() != Some(PROTOCOL_VERSION) {
            let _ = acks.send(ack_body(id, Err(format!("unsupported protocol version {v}"))));
            return;
        }
    }
    match serde_json::from_value::<Inbound>(frame) {
        Ok(Inbound::Command { text, id }) => {
            let acks = acks.clone();
            handle.submit(text, move |ack| {
                let _ = acks.send(ack_body(id, Ok(ack)));
            });
        }
        Ok(Inbound::Stop { id }) => {
            handle.stop();
            let mut m = serde_json::Map::new();
            m.insert("id".into(), id.unwrap_or(Value::Null));
            m.insert("ok".into(), true.into());
            let _ = acks.send(m);
        }
        Err(e) => {
            let _ = acks.send(ack_body(id, Err(e.to_string())));
        }
    }
}
