use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

struct Server {
    child: Child,
    addr: String,
}

impl Server {
    fn start() -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_verbot"))
            .args(["serve", "--port", "0"])
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .expect("spawn verbot");
        let stdout = child.stdout.take().unwrap();
        let mut line = String::new();
        BufReader::new(stdout).read_line(&mut line).unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening on http://")
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
            .to_string();
        Self { child, addr }
    }

    async fn client(&self) -> Client {
        let (ws, _) = connect_async(format!("ws://{}/ws", self.addr)).await.expect("connect");
        Client { ws, seq: None, seen: Vec::new() }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    seq: Option<u64>,
    seen: Vec<Value>,
}

impl Client {
    async fn send(&mut self, v: Value) {
        self.ws.send(Message::text(v.to_string())).await.unwrap();
    }

    async fn send_raw(&mut self, s: &str) {
        self.ws.send(Message::text(s.to_string())).await.unwrap();
    }

    /// Next message; also checks the envelope and per-connection ordering.
    async fn recv(&mut self) -> Value {
        loop {
            let msg = tokio::time::timeout(Duration::from_secs(5), self.ws.next())
                .await
                .expect("message within 5 s")
                .expect("stream open")
                .expect("valid frame");
            let Message::Text(t) = msg else { continue };
            let v: Value = serde_json::from_str(&t).unwrap();
            assert_eq!(v["v"], 1, "{v}");
            let seq = v["seq"].as_u64().expect("seq");
            if let Some(prev) = self.seq {
                assert!(seq > prev, "seq {seq} after {prev}");
            }
            self.seq = Some(seq);
            self.seen.push(v.clone());
            return v;
        }
    }

    async fn recv_until(&mut self, mut f: impl FnMut(&Value) -> bool) -> Value {
        let deadline = Instant::now() + Duration::from_secs(10);
        loop {
            assert!(Instant::now() < deadline, "condition not met in time");
            let v = self.recv().await;
            if f(&v) {
                return v;
            }
        }
    }

    async fn command(&mut self, text: &str, id: &str) -> Value {
        self.send(json!({"v": 1, "type": "command", "text": text, "id": id})).await;
        self.recv_until(|v| v["type"] == "ack" && v["id"] == id).await
    }

    async fn wait_idle(&mut self) {
        self.recv_until(|v| {
            v["type"] == "state"
                && v["state"]["queueLength"] == 0
                && v["state"]["executing"].is_null()
        })
        .await;
    }
}

#[tokio::test]
async fn first_message_is_a_snapshot() {
    let server = Server::start();
    let mut c = server.client().await;
    let first = c.recv().await;
    assert_eq!(first["type"], "state");
    assert_eq!(first["seq"], 0);
    let s = &first["state"];
    assert_eq!(s["running"], false);
    for key in ["tick", "timeS", "robot", "objects", "positions", "queueLength", "stepSizeMm"] {
        assert!(s.get(key).is_some(), "missing {key}");
    }
}

#[tokio::test]
async fn malformed_frames_get_a_diagnostic_and_keep_the_connection() {
    let server = Server::start();
    let mut c = server.client().await;
    c.recv().await;

    c.send_raw("{not json").await;
    let ack = c.recv_until(|v| v["type"] == "ack").await;
    assert_eq!(ack["ok"], false);
    assert_eq!(ack["error"]["kind"], "MalformedFrame");

    c.send(json!({"v": 9, "type": "command", "text": "home", "id": "old"})).await;
    let ack = c.recv_until(|v| v["type"] == "ack").await;
    assert_eq!(ack["id"], "old");
    assert_eq!(ack["error"]["kind"], "MalformedFrame");

    c.send(json!({"v": 1, "type": "dance", "id": 3})).await;
    let ack = c.recv_until(|v| v["type"] == "ack").await;
    assert_eq!(ack["id"], 3);
    assert_eq!(ack["ok"], false);

    let ack = c.command("home", "early").await;
    assert_eq!(ack["ok"], false);
    assert_eq!(ack["error"]["kind"], "NotRunning");

    let ack = c.command("start robot", "ok").await;
    assert_eq!(ack["ok"], true, "{ack}");
    let ack = c.command("fly to the moon", "bad").await;
    assert_eq!(ack["ok"], false);
    assert_eq!(ack["error"]["kind"], "UnknownCommand", "{ack}");
}

#[tokio::test]
async fn commands_from_two_clients_execute_in_arrival_order() {
    let server = Server::start();
    let mut a = server.client().await;
    let mut b = server.client().await;
    assert_eq!(a.command("start robot", "s").await["ok"], true);

    let lines = ["up 10", "left 20", "down 10", "right 20", "front 5", "back 5"];
    for (i, line) in lines.iter().enumerate() {
        let c = if i % 2 == 0 { &mut a } else { &mut b };
        let ack = c.command(line, &format!("c{i}")).await;
        assert_eq!(ack["ok"], true, "{ack}");
        assert_eq!(ack["enqueued"], 1);
    }

    let finished = |c: &Client| -> Vec<String> {
        c.seen
            .iter()
            .filter(|v| v["type"] == "event" && v["event"]["kind"] == "motionFinished")
            .filter_map(|v| v["event"]["command"].as_str())
            .filter(|c| *c != "home")
            .map(String::from)
            .collect()
    };
    for c in [&mut a, &mut b] {
        while finished(c).len() < lines.len() {
            c.recv().await;
        }
        assert_eq!(finished(c), lines);
    }
}

#[tokio::test]
async fn stop_preempts_a_long_move_and_flushes_the_queue() {
    let server = Server::start();
    let mut c = server.client().await;
    assert_eq!(c.command("start robot", "s").await["ok"], true);
    c.wait_idle().await;
    // A step jog jumps there and back in a tick each; returning is interpolated.
    assert_eq!(c.command("save position near and left 400 and save position far", "f").await["ok"], true);
    assert_eq!(c.command("right 400", "r").await["ok"], true);
    c.wait_idle().await;
    assert_eq!(c.command("position far", "go").await["ok"], true);
    for i in 0..100 {
        c.send(json!({"v": 1, "type": "command", "text": "up 1", "id": i})).await;
    }
    c.send(json!({"v": 1, "type": "stop", "id": "halt"})).await;

    let stopped = c
        .recv_until(|v| v["type"] == "event" && v["event"]["kind"] == "stopped")
        .await;
    let at = stopped["event"]["tick"].as_u64().unwrap();
    let mut states = 0;
    while states < 10 {
        let v = c.recv().await;
        match v["type"].as_str().unwrap() {
            "event" => {
                let kind = &v["event"]["kind"];
                assert_ne!(kind, "motionStarted", "command ran after stop: {v}");
                assert_ne!(kind, "motionFinished", "command ran after stop: {v}");
            }
            "state" if v["state"]["tick"].as_u64().unwrap() > at => {
                assert_eq!(v["state"]["queueLength"], 0);
                assert!(v["state"]["executing"].is_null());
                states += 1;
            }
            _ => {}
        }
    }
}

#[tokio::test]
async fn snapshots_arrive_at_least_ten_times_a_second() {
    let server = Server::start();
    let mut c = server.client().await;
    c.recv().await;
    let started = Instant::now();
    let mut ticks = Vec::new();
    while started.elapsed() < Duration::from_secs(1) {
        let v = c.recv().await;
        if v["type"] == "state" {
            ticks.push(v["state"]["tick"].as_u64().unwrap());
        }
    }
    assert!(ticks.len() >= 10, "{} snapshots in 1 s", ticks.len());
    assert!(ticks.windows(2).all(|w| w[0] <= w[1]), "ticks went backwards");
}

#[tokio::test]
async fn console_is_served_at_root() {
    let server = Server::start();
    let mut tcp = TcpStream::connect(&server.addr).await.unwrap();
    tcp.write_all(b"GET / HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").await.unwrap();
    let mut body = String::new();
    tcp.read_to_string(&mut body).await.unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.contains("/ws"));
}
