//! Axum routes and the tick loop.
//!
//! Socket tasks never touch the session directly: they push events into a
//! mailbox that the tick loop drains once per tick, so the session has a
//! single writer.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, watch};
use tokio::task::JoinHandle;

use crate::session::{ClientId, Session, SessionSummary};
use crate::wire::{parse_client, ClientMsg, ServerMsg};
use crate::Error;

enum Event {
    Connect(ClientId),
    Message(ClientId, ClientMsg),
    Disconnect(ClientId),
}

struct Shared {
    session: Mutex<Session>,
    mailbox: mpsc::UnboundedSender<Event>,
    frames: broadcast::Sender<Arc<str>>,
    direct: Mutex<HashMap<ClientId, mpsc::UnboundedSender<String>>>,
    next_id: AtomicU64,
    shutdown: watch::Receiver<bool>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Shared {
    fn send_direct(&self, client: ClientId, msgs: Vec<ServerMsg>) {
        if msgs.is_empty() {
            return;
        }
        if let Some(tx) = lock(&self.direct).get(&client) {
            for m in msgs {
                let _ = tx.send(m.to_json());
            }
        }
    }
}

fn routes(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/session", get(session_summary))
        .route("/ws", get(ws_upgrade))
        .with_state(shared)
}

async fn session_summary(State(shared): State<Arc<Shared>>) -> Json<SessionSummary> {
    Json(lock(&shared.session).summary())
}

async fn ws_upgrade(State(shared): State<Arc<Shared>>, ws: WebSocketUpgrade) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client_loop(shared, socket))
}

async fn client_loop(shared: Arc<Shared>, socket: WebSocket) {
    let id = shared.next_id.fetch_add(1, Ordering::Relaxed);
    let (direct_tx, mut direct_rx) = mpsc::unbounded_channel();
    lock(&shared.direct).insert(id, direct_tx.clone());
    let mut frames = shared.frames.subscribe();
    let mut shutdown = shared.shutdown.clone();
    let _ = shared.mailbox.send(Event::Connect(id));
    let (mut sink, mut stream) = socket.split();
    loop {
        tokio::select! {
            incoming = stream.next() => match incoming {
                Some(Ok(Message::Text(text))) => match parse_client(&text) {
                    Ok(msg) => {
                        let _ = shared.mailbox.send(Event::Message(id, msg));
                    }
                    Err(e) => {
                        let _ = direct_tx.send(ServerMsg::error(e).to_json());
                    }
                },
                Some(Ok(Message::Binary(_))) => {
                    let _ = direct_tx.send(ServerMsg::error("binary frames are not supported").to_json());
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            frame = frames.recv() => match frame {
                Ok(text) => {
                    if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => {}
                Err(broadcast::error::RecvError::Closed) => break,
            },
            Some(text) = direct_rx.recv() => {
                if sink.send(Message::Text(text.into())).await.is_err() {
                    break;
                }
            }
            _ = shutdown.changed() => {
                let _ = sink.send(Message::Close(None)).await;
                break;
            }
        }
    }
    lock(&shared.direct).remove(&id);
    let _ = shared.mailbox.send(Event::Disconnect(id));
}

async fn tick_loop(
    shared: Arc<Shared>,
    mut events: mpsc::UnboundedReceiver<Event>,
    mut shutdown: watch::Receiver<bool>,
) {
    let hz = lock(&shared.session).spec().tick_hz;
    let mut interval = tokio::time::interval(Duration::from_secs_f64(1.0 / hz));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            _ = interval.tick() => {}
            _ = shutdown.changed() => break,
        }
        let mut replies = Vec::new();
        let frames = {
            let mut session = lock(&shared.session);
            while let Ok(ev) = events.try_recv() {
                match ev {
                    Event::Connect(id) => {
                        session.connect(id);
                        replies.push((id, vec![session.state_frame()]));
                    }
                    Event::Message(id, msg) => {
                        replies.push((id, session.handle_client_message(id, msg)))
                    }
                    Event::Disconnect(id) => session.disconnect(id),
                }
            }
            match session.tick() {
                Ok(f) => f,
                Err(e) => vec![ServerMsg::error(format!("simulation error: {e}"))],
            }
        };
        for (id, msgs) in replies {
            shared.send_direct(id, msgs);
        }
        for f in frames {
            let _ = shared.frames.send(Arc::from(f.to_json()));
        }
    }
}

/// A running server. Dropping it without calling [`ServerHandle::shutdown`]
/// leaves the tasks running until the runtime stops.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: watch::Sender<bool>,
    shared: Arc<Shared>,
    serve: JoinHandle<std::io::Result<()>>,
    ticker: JoinHandle<()>,
}

impl ServerHandle {
    pub fn summary(&self) -> SessionSummary {
        lock(&self.shared.session).summary()
    }

    /// Close every client, stop ticking and return the final summary.
    pub async fn shutdown(self) -> Result<SessionSummary, Error> {
        let ServerHandle {
            stop,
            shared,
            serve,
            ticker,
            ..
        } = self;
        let _ = stop.send(true);
        let _ = ticker.await;
        match serve.await {
            Ok(r) => r?,
            Err(e) => return Err(Error::Io(std::io::Error::other(e))),
        }
        let summary = lock(&shared.session).summary();
        Ok(summary)
    }
}

/// Serve `session` on an already bound listener.
pub async fn start(listener: TcpListener, session: Session) -> Result<ServerHandle, Error> {
    let addr = listener.local_addr()?;
    let (mailbox, events) = mpsc::unbounded_channel();
    let (frames, _) = broadcast::channel(256);
    let (stop, shutdown) = watch::channel(false);
    let shared = Arc::new(Shared {
        session: Mutex::new(session),
        mailbox,
        frames,
        direct: Mutex::new(HashMap::new()),
        next_id: AtomicU64::new(1),
        shutdown: shutdown.clone(),
    });
    let ticker = tokio::spawn(tick_loop(shared.clone(), events, shutdown.clone()));
    let app = routes(shared.clone());
    let mut graceful = shutdown;
    let serve = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = graceful.wait_for(|v| *v).await;
            })
            .await
    });
    Ok(ServerHandle {
        addr,
        stop,
        shared,
        serve,
        ticker,
    })
}
