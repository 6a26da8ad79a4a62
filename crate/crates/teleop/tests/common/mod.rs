#![allow(dead_code)]

use std::net::SocketAddr;
use std::time::Duration;

use acc_sim::Scenario;
use acc_teleop::{Health, ServerMessage, SessionInfo, StateMessage};
use futures::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

pub type Client = WebSocketStream<MaybeTlsStream<TcpStream>>;

pub async fn start(scenario: &str) -> SocketAddr {
    let scn = Scenario::bundled(scenario).unwrap();
    let (listener, addr) = acc_teleop::bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    tokio::spawn(acc_teleop::serve(listener, scn));
    addr
}

pub async fn connect(addr: SocketAddr) -> (Client, SessionInfo) {
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/session")).await.unwrap();
    match next_message(&mut ws).await {
        ServerMessage::SessionInfo(info) => (ws, info),
        other => panic!("expected session info first, got {other:?}"),
    }
}

pub async fn next_message(ws: &mut Client) -> ServerMessage {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next())
            .await
            .expect("server went quiet")
            .expect("stream ended")
            .expect("socket error");
        if let Message::Text(text) = msg {
            return ServerMessage::decode(text.as_str()).unwrap();
        }
    }
}

pub async fn next_state(ws: &mut Client) -> StateMessage {
    match next_message(ws).await {
        ServerMessage::State(s) => s,
        other => panic!("expected state, got {other:?}"),
    }
}

pub async fn send_command(ws: &mut Client, steering: f64, velocity: f64) {
    let text = format!(r#"{{"type":"command","version":1,"steering":{steering},"velocity":{velocity}}}"#);
    ws.send(Message::text(text)).await.unwrap();
}

pub async fn health(addr: SocketAddr) -> Health {
    let mut s = TcpStream::connect(addr).await.unwrap();
    let req = format!("GET /health HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n");
    s.write_all(req.as_bytes()).await.unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    assert!(buf.starts_with("HTTP/1.1 200"), "{buf}");
    let body = buf.split("\r\n\r\n").nth(1).unwrap();
    serde_json::from_str(body).unwrap()
}
