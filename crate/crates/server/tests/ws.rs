use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use pursuit_core::arena::WorldConfig;
use pursuit_core::baselines::{ApfController, PidController};
use pursuit_core::controller::Controller;
use pursuit_server::{start, ServerHandle, Session, SessionSpec};
use serde_json::Value;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn serve(
    runner: Option<Arc<dyn Controller>>,
    tweak: impl FnOnce(&mut SessionSpec),
) -> ServerHandle {
    let mut spec = SessionSpec::new(
        WorldConfig::default(),
        runner,
        Arc::new(PidController::default()),
    );
    tweak(&mut spec);
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    start(listener, Session::new("test", spec).unwrap())
        .await
        .unwrap()
}

async fn connect(h: &ServerHandle) -> Ws {
    connect_async(format!("ws://{}/ws", h.addr))
        .await
        .unwrap()
        .0
}

async fn next_json(ws: &mut Ws) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("no frame within 10 s")
            .expect("stream closed")
            .unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

/// Next frame whose `type` is not `state`.
async fn next_non_state(ws: &mut Ws) -> Value {
    loop {
        let v = next_json(ws).await;
        if v["type"] != "state" {
            return v;
        }
    }
}

async fn send(ws: &mut Ws, text: &str) {
    ws.send(Message::Text(text.into())).await.unwrap();
}

async fn http_get(h: &ServerHandle, path: &str) -> (u16, String) {
    let mut s = TcpStream::connect(h.addr).await.unwrap();
    let req = format!("GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n");
    s.write_all(req.as_bytes()).await.unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    let status = buf.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = buf
        .split_once("\r\n\r\n")
        .map(|(_, b)| b.to_string())
        .unwrap_or_default();
    (status, body)
}

#[tokio::test]
async fn health_and_session_routes() {
    let h = serve(None, |_| {}).await;
    let (status, body) = http_get(&h, "/healthz").await;
    assert_eq!(status, 200);
    assert_eq!(body, "ok");
    let (status, body) = http_get(&h, "/session").await;
    assert_eq!(status, 200);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["runner"], "manual");
    assert_eq!(v["chaser"], "pid");
    assert_eq!(v["episodes"], 0);
    assert_eq!(http_get(&h, "/nope").await.0, 404);
    h.shutdown().await.unwrap();
}

#[tokio::test]
async fn pilot_flies_and_malformed_messages_keep_the_connection() {
    let h = serve(None, |_| {}).await;
    let mut ws = connect(&h).await;
    let first = next_json(&mut ws).await;
    assert_eq!(first["type"], "state");
    assert_eq!(first["bounds"], serde_json::json!([5.0, 5.0, 3.0]));
    assert_eq!(first["chasers"].as_array().unwrap().len(), 2);

    send(&mut ws, r#"{"type":"hello","role":"pilot","name":"ada"}"#).await;
    send(&mut ws, "{not json").await;
    let err = next_non_state(&mut ws).await;
    assert_eq!(err["type"], "error");
    assert!(err["message"].as_str().unwrap().contains("malformed"));

    send(
        &mut ws,
        r#"{"type":"control","vx":5,"vy":0,"vz":0,"wz":0,"seq":1}"#,
    )
    .await;
    // still connected: state frames keep arriving with increasing ticks
    let mut last = 0;
    for _ in 0..5 {
        let v = next_json(&mut ws).await;
        if v["type"] == "state" {
            let t = v["tick"].as_u64().unwrap();
            assert!(t > last);
            last = t;
        }
    }
    let sum = h.summary();
    assert_eq!(sum.pilot.as_deref(), Some("ada"));
    let summary = h.shutdown().await.unwrap();
    assert_eq!(summary.id, "test");
}

#[tokio::test]
async fn second_pilot_is_offered_spectator() {
    let h = serve(None, |_| {}).await;
    let mut a = connect(&h).await;
    let mut b = connect(&h).await;
    next_json(&mut a).await;
    next_json(&mut b).await;
    send(&mut a, r#"{"type":"hello","role":"pilot","name":"a"}"#).await;
    // let the first hello land before the second
    for _ in 0..3 {
        next_json(&mut a).await;
    }
    send(&mut b, r#"{"type":"hello","role":"pilot","name":"b"}"#).await;
    let e = next_non_state(&mut b).await;
    assert_eq!(e["type"], "error");
    assert!(e["message"].as_str().unwrap().contains("spectator"));
    send(
        &mut b,
        r#"{"type":"control","vx":1,"vy":0,"vz":0,"wz":0,"seq":1}"#,
    )
    .await;
    assert_eq!(next_non_state(&mut b).await["type"], "error");
    let s = h.summary();
    assert_eq!(s.pilot.as_deref(), Some("a"));
    assert_eq!(s.spectators, 1);
    h.shutdown().await.unwrap();
}

#[tokio::test]
async fn scripted_match_reports_one_outcome() {
    let runner: Arc<dyn Controller> = Arc::new(ApfController::default());
    let h = serve(Some(runner), |s| {
        s.tick_hz = 2000.0;
        s.pause_secs = 3600.0;
        s.seed = 11;
    })
    .await;
    let mut ws = connect(&h).await;
    send(
        &mut ws,
        r#"{"type":"hello","role":"spectator","name":"watcher"}"#,
    )
    .await;
    let out = next_non_state(&mut ws).await;
    assert_eq!(out["type"], "outcome");
    assert_eq!(out["episode"], 0);
    assert!(["reached", "captured", "wall", "timeout"].contains(&out["result"].as_str().unwrap()));
    assert_eq!(out["ledger"]["episodes"], 1);

    let (_, body) = http_get(&h, "/session").await;
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["episodes"], 1);
    assert_eq!(v["paused"], true);
    assert_eq!(v["runner"], "apf");

    let summary = h.shutdown().await.unwrap();
    assert_eq!(summary.ledger.episodes(), 1);
    // the socket is closed on shutdown
    let closed = tokio::time::timeout(Duration::from_secs(10), async {
        while let Some(Ok(m)) = ws.next().await {
            if m.is_close() {
                break;
            }
        }
    })
    .await;
    assert!(closed.is_ok());
}
