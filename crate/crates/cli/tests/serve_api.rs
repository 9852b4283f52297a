use std::io::{BufRead, BufReader};
use std::net::TcpListener as StdListener;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use swarmlab_cli::serve::{router, Engine};
use swarmlab_core::config::{ClockMode, FleetConfig};
use tokio::sync::watch;
use tokio_tungstenite::tungstenite::Message;

struct Server {
    base: String,
    ws: String,
    engine: Engine,
    _close: watch::Sender<bool>,
}

async fn start(clock: ClockMode) -> Server {
    let engine = Engine::start(&FleetConfig::default(), clock).unwrap();
    let (close, closing) = watch::channel(false);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(engine.clone(), closing);
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Server { base: format!("http://{addr}"), ws: format!("ws://{addr}/events"), engine, _close: close }
}

async fn post(s: &Server, body: Value) -> (u16, Value) {
    let r = reqwest::Client::new().post(format!("{}/command", s.base)).json(&body).send().await.unwrap();
    let status = r.status().as_u16();
    (status, r.json().await.unwrap_or(Value::Null))
}

async fn snapshot(s: &Server) -> Value {
    reqwest::get(format!("{}/snapshot", s.base)).await.unwrap().json().await.unwrap()
}

async fn wait_for(s: &Server, limit: Duration, pred: impl Fn(&Value) -> bool) -> Value {
    let start = Instant::now();
    loop {
        let snap = snapshot(s).await;
        if pred(&snap) {
            return snap;
        }
        assert!(start.elapsed() < limit, "condition not reached: {snap}");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

fn all_fsm(snap: &Value, fsm: &str) -> bool {
    snap["drones"].as_array().unwrap().iter().all(|d| d["fsm"] == fsm)
}

#[tokio::test(flavor = "multi_thread")]
async fn snapshot_document_shape() {
    let s = start(ClockMode::Virtual).await;
    let snap = wait_for(&s, Duration::from_secs(10), |v| all_fsm(v, "READY")).await;
    let drones = snap["drones"].as_array().unwrap();
    assert_eq!(drones.len(), 3);
    for (i, d) in drones.iter().enumerate() {
        assert_eq!(d["drone_id"], i);
        for field in ["fsm", "pose", "battery", "target"] {
            assert!(d.get(field).is_some(), "{field} missing");
        }
    }
    assert!(snap.get("mission").is_some());
    assert!(snap["alerts"].is_array());
}

#[tokio::test(flavor = "multi_thread")]
async fn commands_are_acknowledged() {
    let s = start(ClockMode::Virtual).await;
    wait_for(&s, Duration::from_secs(10), |v| all_fsm(v, "READY")).await;

    let (status, ack) = post(&s, json!({"cmd": "start_mission", "name": "ntu"})).await;
    assert_eq!(status, 409);
    assert_eq!(ack["accepted"], false);
    assert_eq!(ack["reason"], "not all airborne");

    let (status, _) = post(&s, json!({"cmd": "do_a_flip"})).await;
    assert!((400..500).contains(&status), "{status}");
    let r = reqwest::Client::new()
        .post(format!("{}/command", s.base))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert!(r.status().is_client_error());

    let (status, ack) = post(&s, json!({"cmd": "takeoff_all"})).await;
    assert_eq!((status, ack["accepted"].clone()), (200, json!(true)));
    wait_for(&s, Duration::from_secs(20), |v| all_fsm(v, "FLYING")).await;
    let (status, _) = post(&s, json!({"cmd": "start_mission", "name": "ntu"})).await;
    assert_eq!(status, 200);
    let snap = wait_for(&s, Duration::from_secs(10), |v| v["mission"].is_object()).await;
    assert_eq!(snap["mission"]["name"], "ntu");
}

#[tokio::test(flavor = "multi_thread")]
async fn estop_reaches_every_session_in_the_next_snapshot() {
    let s = start(ClockMode::Virtual).await;
    wait_for(&s, Duration::from_secs(10), |v| all_fsm(v, "READY")).await;
    post(&s, json!({"cmd": "takeoff_all"})).await;
    wait_for(&s, Duration::from_secs(20), |v| all_fsm(v, "FLYING")).await;
    let (status, _) = post(&s, json!({"cmd": "estop"})).await;
    assert_eq!(status, 200);
    assert!(all_fsm(&snapshot(&s).await, "EMERGENCY"));
    let snap = s.engine.snapshot();
    assert!(snap.drones.iter().all(|d| d.fsm.as_str() == "EMERGENCY"));
}

#[tokio::test(flavor = "multi_thread")]
async fn event_stream_ticks_at_ten_hertz_and_takes_commands() {
    let s = start(ClockMode::Wall).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(s.ws.as_str()).await.unwrap();

    let started = Instant::now();
    let mut ticks = Vec::new();
    while ticks.len() < 12 {
        let Some(Ok(Message::Text(text))) = ws.next().await else { panic!("stream ended") };
        let ev: Value = serde_json::from_str(&text).unwrap();
        if ev["type"] == "tick" {
            assert_eq!(ev["drones"].as_array().unwrap().len(), 3);
            assert_eq!(ev["metrics"].as_array().unwrap().len(), 3);
            ticks.push(ev["t"].as_f64().unwrap());
        }
    }
    let wall = started.elapsed().as_secs_f64();
    let rate = (ticks.len() - 1) as f64 / (ticks[ticks.len() - 1] - ticks[0]);
    assert!(rate >= 9.99, "tick rate {rate}");
    assert!(ticks.len() as f64 / wall >= 8.0, "{} ticks in {wall} s", ticks.len());

    ws.send(Message::Text(r#"{"cmd":"pause"}"#.into())).await.unwrap();
    ws.send(Message::Text(r#"{"cmd":"takeoff_all"}"#.into())).await.unwrap();
    let mut acks = Vec::new();
    let mut transition = false;
    let deadline = Instant::now() + Duration::from_secs(10);
    while (acks.len() < 2 || !transition) && Instant::now() < deadline {
        let Some(Ok(Message::Text(text))) = ws.next().await else { panic!("stream ended") };
        let ev: Value = serde_json::from_str(&text).unwrap();
        match ev["type"].as_str() {
            Some("ack") => acks.push(ev["accepted"].as_bool().unwrap()),
            Some("transition") if ev["to"] == "TAKING_OFF" => transition = true,
            _ => {}
        }
    }
    assert_eq!(acks, vec![false, true]);
    assert!(transition, "no TAKING_OFF transition on the stream");
}

fn free_port() -> u16 {
    StdListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn config_path() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/ntu-mission.cfg").display().to_string()
}

fn wait_listening(child: &mut std::process::Child) {
    let stderr = child.stderr.take().unwrap();
    let mut line = String::new();
    BufReader::new(stderr).read_line(&mut line).unwrap();
    assert!(line.starts_with("listening on"), "{line}");
}

#[test]
fn interrupt_lands_the_fleet_and_second_bind_fails() {
    let port = free_port();
    let listen = format!("127.0.0.1:{port}");
    let mut child = Command::new(env!("CARGO_BIN_EXE_swarmlab"))
        .args(["serve", "--config", &config_path(), "--listen", &listen, "--clock", "virtual"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    wait_listening(&mut child);

    let second = Command::new(env!("CARGO_BIN_EXE_swarmlab"))
        .args(["serve", "--config", &config_path(), "--listen", &listen])
        .output()
        .unwrap();
    assert_eq!(second.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&second.stderr).contains("bind"));

    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        let base = format!("http://{listen}");
        let client = reqwest::Client::new();
        let start = Instant::now();
        loop {
            let r = client.post(format!("{base}/command")).json(&json!({"cmd": "takeoff_all"})).send().await.unwrap();
            if r.status() == 200 {
                break;
            }
            assert!(start.elapsed() < Duration::from_secs(10));
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        loop {
            let snap: Value = client.get(format!("{base}/snapshot")).send().await.unwrap().json().await.unwrap();
            if all_fsm(&snap, "FLYING") {
                break;
            }
            assert!(start.elapsed() < Duration::from_secs(20));
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
    });

    let kill = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(kill.success());
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("land_all issued"), "{stdout}");
    assert!(stdout.contains("0 still airborne"), "{stdout}");
}
