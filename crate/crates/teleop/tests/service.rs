use ballchain::magnetics::alignment_angle;
use ballchain::session::{bundled_scenario, parse_command_log, replay, to_json_lines, Scenario};
use ballchain::Vec3;
use ballchain_teleop::*;
use futures_util::{SinkExt, StreamExt};
use serde_json::Value;
use std::net::SocketAddr;
use std::time::{Duration, Instant};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;

type Client = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<TcpStream>>;

fn local() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

fn scenario() -> Scenario {
    bundled_scenario("pv-rings").unwrap()
}

async fn connect(addr: SocketAddr) -> Client {
    tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap().0
}

async fn send(c: &mut Client, v: Value) {
    c.send(Message::Text(v.to_string().into())).await.unwrap();
}

/// Next frame of the given type.
async fn next_of(c: &mut Client, kind: &str) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), c.next()).await.expect("no frame").unwrap().unwrap();
        if let Message::Text(t) = msg {
            let v: Value = serde_json::from_str(&t).unwrap();
            if v["type"] == kind {
                return v;
            }
        }
    }
}

fn dipole(frame: &Value, unit: &str) -> Vec3 {
    let d = &frame["dipoles"][unit];
    Vec3::new(d[0].as_f64().unwrap(), d[1].as_f64().unwrap(), d[2].as_f64().unwrap())
}

async fn http_get(addr: SocketAddr, path: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).await.unwrap();
    s.write_all(format!("GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").as_bytes()).await.unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    let status = buf.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = buf.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    (status, body)
}

#[tokio::test(flavor = "multi_thread")]
async fn broadcasts_state_at_tick_rate() {
    let svc = start(scenario(), ServiceConfig::new(local())).await.unwrap();
    let mut c = connect(svc.addr).await;
    let first = next_of(&mut c, "state").await;
    let t0 = Instant::now();
    let mut last = first["tick"].as_u64().unwrap();
    let mut frames = 0;
    while t0.elapsed() < Duration::from_millis(1000) {
        let f = next_of(&mut c, "state").await;
        let tick = f["tick"].as_u64().unwrap();
        assert!(tick > last, "ticks must increase");
        last = tick;
        frames += 1;
        assert_eq!(f["positions_mm"].as_array().unwrap().len(), f["n"].as_u64().unwrap() as usize);
        for p in f["positions_mm"].as_array().unwrap() {
            for c in p.as_array().unwrap() {
                let v = c.as_f64().unwrap();
                assert!(((v * 100.0).round() - v * 100.0).abs() < 1e-6, "{v} not rounded to 0.01 mm");
            }
        }
    }
    // 20 Hz nominal
    assert!((15..=23).contains(&frames), "{frames} frames in 1 s");
    svc.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn velocity_expires_after_dead_man() {
    let svc = start(scenario(), ServiceConfig::new(local())).await.unwrap();
    let mut c = connect(svc.addr).await;
    let start_frame = next_of(&mut c, "state").await;
    let d0 = dipole(&start_frame, "left");
    send(&mut c, serde_json::json!({"type": "velocity", "unit_id": "left", "omega": [0, 0, 1.0]})).await;
    let sent = Instant::now();
    let mut moving_until = None;
    let mut prev = d0;
    while sent.elapsed() < Duration::from_millis(800) {
        let f = next_of(&mut c, "state").await;
        let d = dipole(&f, "left");
        if alignment_angle(&d, &prev) > 1e-9 {
            moving_until = Some(sent.elapsed());
        }
        prev = d;
    }
    let moving = moving_until.expect("magnet never moved");
    // dead-man 250 ms plus one tick of slack for scheduling
    assert!(moving <= Duration::from_millis(250 + 60), "moved for {moving:?}");
    let turned = alignment_angle(&prev, &d0);
    // about 5 ticks of 0.05 rad
    assert!(turned > 0.1 && turned < 0.35, "turned {turned}");
    svc.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn velocity_is_clamped_server_side() {
    let svc = start(scenario(), ServiceConfig::new(local())).await.unwrap();
    let mut c = connect(svc.addr).await;
    let mut prev = dipole(&next_of(&mut c, "state").await, "right");
    send(&mut c, serde_json::json!({"type": "velocity", "unit_id": "right", "omega": [0, 0, 1e6]})).await;
    for _ in 0..4 {
        let d = dipole(&next_of(&mut c, "state").await, "right");
        // 1 rad/s × 50 ms per tick, plus rounding of the wire value
        assert!(alignment_angle(&d, &prev) <= 0.05 + 1e-9);
        prev = d;
    }
    svc.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_messages_only_reach_the_sender() {
    let svc = start(scenario(), ServiceConfig::new(local())).await.unwrap();
    let mut a = connect(svc.addr).await;
    let mut b = connect(svc.addr).await;
    a.send(Message::Text("{\"type\": \"warp\"}".into())).await.unwrap();
    let err = next_of(&mut a, "error").await;
    assert!(err["message"].as_str().unwrap().contains("malformed"));
    send(&mut a, serde_json::json!({"type": "velocity", "unit_id": "nobody", "omega": [0, 0, 1]})).await;
    let err = next_of(&mut a, "error").await;
    assert!(err["message"].as_str().unwrap().contains("nobody"));
    a.send(Message::Binary(vec![1, 2, 3].into())).await.unwrap();
    next_of(&mut a, "error").await;
    // b keeps getting states, never an error
    let t0 = Instant::now();
    let mut last = 0;
    while t0.elapsed() < Duration::from_millis(300) {
        let msg = tokio::time::timeout(Duration::from_secs(2), b.next()).await.unwrap().unwrap().unwrap();
        let v: Value = serde_json::from_str(msg.to_text().unwrap()).unwrap();
        assert_ne!(v["type"], "error");
        if v["type"] == "state" {
            assert!(v["tick"].as_u64().unwrap() > last);
            last = v["tick"].as_u64().unwrap();
        }
    }
    svc.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn session_survives_client_disconnect() {
    let svc = start(scenario(), ServiceConfig::new(local())).await.unwrap();
    let mut a = connect(svc.addr).await;
    let before = next_of(&mut a, "state").await["tick"].as_u64().unwrap();
    drop(a);
    tokio::time::sleep(Duration::from_millis(300)).await;
    let mut b = connect(svc.addr).await;
    let after = next_of(&mut b, "state").await["tick"].as_u64().unwrap();
    assert!(after >= before + 4);
    let (status, body) = http_get(svc.addr, "/health").await;
    assert_eq!(status, 200);
    let h: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(h["clients"], 1);
    svc.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn reconfigure_emits_event_and_blocks_input() {
    let svc = start(scenario(), ServiceConfig::new(local())).await.unwrap();
    let s = scenario();
    let mut c = connect(svc.addr).await;
    next_of(&mut c, "state").await;
    // push both magnets away from neutral
    for unit in ["left", "right"] {
        send(&mut c, serde_json::json!({"type": "velocity", "unit_id": unit, "omega": [1.0, 0, 0]})).await;
    }
    tokio::time::sleep(Duration::from_millis(200)).await;
    send(&mut c, serde_json::json!({"type": "reconfigure"})).await;
    let mut saw_ignored = false;
    let t0 = Instant::now();
    loop {
        assert!(t0.elapsed() < Duration::from_secs(20), "no reconfigured event");
        let msg = tokio::time::timeout(Duration::from_secs(5), c.next()).await.unwrap().unwrap().unwrap();
        let v: Value = serde_json::from_str(msg.to_text().unwrap()).unwrap();
        if v["type"] == "event" {
            match v["event"]["event"].as_str().unwrap() {
                "reconfigured" => break,
                "command_ignored" => saw_ignored = true,
                "reconfigure_failed" => panic!("{v}"),
                _ => {}
            }
        }
        if v["type"] == "state" && v["reconfiguring"] == true {
            send(&mut c, serde_json::json!({"type": "velocity", "unit_id": "left", "omega": [0, 1.0, 0]})).await;
        }
    }
    assert!(saw_ignored);
    let f = next_of(&mut c, "state").await;
    for (k, unit) in ["left", "right"].iter().enumerate() {
        let off = alignment_angle(&dipole(&f, unit), &s.units[k].unit.neutral_dipole);
        assert!(off < 0.6f64.to_radians(), "{unit}: {off}");
    }
    svc.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn health_and_static_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>cockpit</html>").unwrap();
    let mut cfg = ServiceConfig::new(local());
    cfg.static_dir = Some(dir.path().to_path_buf());
    let svc = start(scenario(), cfg).await.unwrap();
    tokio::time::sleep(Duration::from_millis(400)).await;
    let (status, body) = http_get(svc.addr, "/health").await;
    assert_eq!(status, 200);
    let h: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(h["status"], "ok");
    assert_eq!(h["scenario"], "pv-rings");
    assert_eq!(h["target_tick_rate_hz"], 20.0);
    assert!(h["tick"].as_u64().unwrap() >= 4);
    let rate = h["measured_tick_rate_hz"].as_f64().unwrap();
    assert!(rate > 10.0 && rate < 30.0, "{rate}");
    assert_eq!(h["solver"]["converged"], true);
    let (status, body) = http_get(svc.addr, "/").await;
    assert_eq!(status, 200);
    assert!(body.contains("cockpit"));
    assert_eq!(http_get(svc.addr, "/missing.js").await.0, 404);
    svc.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn shutdown_flushes_replayable_logs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ServiceConfig::new(local());
    cfg.session_log = Some(dir.path().join("session.jsonl"));
    cfg.command_log = Some(dir.path().join("commands.jsonl"));
    let svc = start(scenario(), cfg).await.unwrap();
    let mut c = connect(svc.addr).await;
    next_of(&mut c, "state").await;
    send(&mut c, serde_json::json!({"type": "velocity", "unit_id": "left", "omega": [0, 0.4, 0.6]})).await;
    send(&mut c, serde_json::json!({"type": "feed", "direction": "insert"})).await;
    send(&mut c, serde_json::json!({"type": "feed", "direction": "insert"})).await;
    tokio::time::sleep(Duration::from_millis(400)).await;
    send(&mut c, serde_json::json!({"type": "velocity", "unit_id": "right", "omega": [0.3, 0, 0]})).await;
    tokio::time::sleep(Duration::from_millis(300)).await;
    let summary = svc.shutdown().await.unwrap();

    let session = std::fs::read_to_string(dir.path().join("session.jsonl")).unwrap();
    let commands = std::fs::read_to_string(dir.path().join("commands.jsonl")).unwrap();
    assert_eq!(session.lines().count() as u64, summary.ticks);
    let commands = parse_command_log(&commands).unwrap();
    assert!(!commands.is_empty());
    let replayed = to_json_lines(&replay(&scenario(), &commands, summary.ticks).unwrap()).unwrap();
    assert_eq!(session, replayed);
}

#[tokio::test(flavor = "multi_thread")]
async fn reset_restarts_the_session() {
    let svc = start(scenario(), ServiceConfig::new(local())).await.unwrap();
    let mut c = connect(svc.addr).await;
    tokio::time::sleep(Duration::from_millis(200)).await;
    send(&mut c, serde_json::json!({"type": "feed", "direction": "insert"})).await;
    tokio::time::sleep(Duration::from_millis(200)).await;
    send(&mut c, serde_json::json!({"type": "reset"})).await;
    loop {
        let f = next_of(&mut c, "state").await;
        if f["tick"].as_u64().unwrap() <= 2 {
            assert_eq!(f["n"], 8);
            break;
        }
    }
    svc.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn busy_port_is_reported() {
    let holder = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let err = start(scenario(), ServiceConfig::new(holder.local_addr().unwrap())).await.err().unwrap();
    assert!(matches!(err, ServiceError::Bind { .. }), "{err}");
}
