use std::io::Read;
use std::net::{TcpStream, UdpSocket};
use std::thread;
use std::time::{Duration, Instant};

use multiarm::pose::Pose;
use multiarm::runner::{run_scenario, RunSettings, Scenario, ScenarioConfig};
use multiarm::scene;
use multiarm::teleop::{self, wire, PoseUpdateMessage, Record, ServiceHandle, TeleopConfig};
use nalgebra::Vector3;
use tungstenite::Message;

fn config(max_ticks: u64) -> TeleopConfig {
    TeleopConfig {
        pose_port: 0,
        state_port: 0,
        ws_port: Some(0),
        max_ticks: Some(max_ticks),
        ..TeleopConfig::default()
    }
}

fn start(cfg: TeleopConfig) -> ServiceHandle {
    let scene = scene::preset("ur5_triple").unwrap();
    let settings = RunSettings::new(Scenario::C, &scene);
    teleop::start(scene, settings, cfg).unwrap()
}

fn update(session: &str, seq: u64, offset: f64, grab: bool) -> PoseUpdateMessage {
    let start = scene::preset("ur5_triple").unwrap().payload_start;
    PoseUpdateMessage {
        session_id: session.into(),
        seq,
        t_client: seq as f64 * 0.01,
        pose: Pose::new(
            start.position + Vector3::new(offset, 0.5 * offset, 0.0),
            start.orientation,
        ),
        grab,
    }
}

fn read_frame(stream: &mut TcpStream) -> String {
    let mut len = [0u8; 4];
    stream.read_exact(&mut len).unwrap();
    let mut body = vec![0u8; u32::from_be_bytes(len) as usize];
    stream.read_exact(&mut body).unwrap();
    String::from_utf8(body).unwrap()
}

#[test]
fn live_session_replays_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("session.traj");
    let csv = dir.path().join("live.csv");
    let handle = start(TeleopConfig {
        record: Some(traj.clone()),
        metrics_csv: Some(csv.clone()),
        ..config(150)
    });

    let mut sub = TcpStream::connect(handle.state_addr()).unwrap();
    let first = wire::decode_state(read_frame(&mut sub).as_bytes()).unwrap();
    assert_eq!(first.arms().len(), 3);

    let client = UdpSocket::bind("127.0.0.1:0").unwrap();
    let pose_addr = handle.pose_addr();
    let sender = thread::spawn(move || {
        for seq in 1..=80u64 {
            let grab = seq < 60;
            let m = update("op", seq, 0.001 * seq as f64, grab);
            client.send_to(m.encode().as_bytes(), pose_addr).unwrap();
            thread::sleep(Duration::from_millis(10));
        }
    });
    let mut last_tick = first.tick();
    while last_tick < 140 {
        let s = wire::decode_state(read_frame(&mut sub).as_bytes()).unwrap();
        assert!(s.tick() > last_tick, "state ticks are increasing");
        last_tick = s.tick();
    }
    sender.join().unwrap();
    let report = handle.wait().unwrap();
    assert_eq!(report.ticks, 150);
    assert!(report.ingest.accepted > 0);
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), report.csv);

    let recording = report.recording.as_ref().unwrap();
    let poses: Vec<_> = recording.samples().iter().map(|s| s.payload_pose).collect();
    assert!(poses.windows(2).any(|w| w[0] != w[1]), "the operator moved the payload");
    // grab=false holds: the last 20 ticks all sit at one pose.
    assert!(poses[130..].windows(2).all(|w| w[0] == w[1]));

    let cfg = ScenarioConfig {
        trajectory: traj.to_string_lossy().into_owned(),
        ..Default::default()
    };
    let replay = run_scenario(&cfg, None).unwrap();
    assert_eq!(replay.poses, poses);
    assert_eq!(replay.csv, report.csv);
}

#[test]
fn idle_service_holds_pose_and_keeps_publishing() {
    let handle = start(config(30));
    let report = handle.wait().unwrap();
    assert_eq!(report.ticks, 30);
    let samples = report.recording.unwrap();
    let start = scene::preset("ur5_triple").unwrap().payload_start;
    assert!(samples.samples().iter().all(|s| s.payload_pose == start));
    assert_eq!(report.csv.lines().count(), 1 + 30 * 3);
}

#[test]
fn second_operator_gets_busy_notice_and_garbage_is_counted() {
    let handle = start(config(10_000));
    let a = UdpSocket::bind("127.0.0.1:0").unwrap();
    let b = UdpSocket::bind("127.0.0.1:0").unwrap();
    b.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
    a.send_to(update("alice", 1, 0.0, true).encode().as_bytes(), handle.pose_addr())
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(2);
    while handle.ingest_counters().accepted == 0 && Instant::now() < deadline {
        thread::sleep(Duration::from_millis(5));
    }
    b.send_to(update("bob", 1, 0.0, true).encode().as_bytes(), handle.pose_addr())
        .unwrap();
    let mut buf = [0u8; 512];
    let n = b.recv(&mut buf).unwrap();
    match wire::decode(&buf[..n]).unwrap() {
        Record::Busy(notice) => {
            assert_eq!(notice.session_id, "bob");
            assert_eq!(notice.active, "alice");
        }
        other => panic!("expected busy, got {other:?}"),
    }
    a.send_to(b"not a record", handle.pose_addr()).unwrap();
    a.send_to(update("alice", 1, 0.0, true).encode().as_bytes(), handle.pose_addr())
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(2);
    while (handle.ingest_counters().malformed == 0 || handle.ingest_counters().stale == 0) && Instant::now() < deadline
    {
        thread::sleep(Duration::from_millis(5));
    }
    let c = handle.ingest_counters();
    assert_eq!((c.accepted, c.busy, c.malformed, c.stale), (1, 1, 1, 1));
    assert!(!handle.is_finished(), "bad input never stops the loop");
    handle.stop();
    handle.wait().unwrap();
}

#[test]
fn websocket_gateway_carries_both_directions() {
    let handle = start(config(10_000));
    let addr = handle.ws_addr().unwrap();
    let (mut ws, _) = tungstenite::connect(format!("ws://{addr}/ws")).unwrap();
    let state = loop {
        if let Message::Text(t) = ws.read().unwrap() {
            break wire::decode_state(t.as_bytes()).unwrap();
        }
    };
    assert_eq!(state.arms().len(), 3);
    ws.send(Message::text(update("ui", 1, 0.01, true).encode())).unwrap();
    let deadline = Instant::now() + Duration::from_secs(2);
    while handle.ingest_counters().accepted == 0 && Instant::now() < deadline {
        // Keep draining so the server is never blocked on us.
        let _ = ws.read();
    }
    assert_eq!(handle.ingest_counters().accepted, 1);

    assert!(tungstenite::connect(format!("ws://{addr}/elsewhere")).is_err());
    handle.stop();
    handle.wait().unwrap();
}

#[test]
fn stalled_subscriber_does_not_slow_the_loop() {
    let handle = start(TeleopConfig {
        queue_depth: 2,
        ..config(100)
    });
    // Connects and never reads.
    let _idle = TcpStream::connect(handle.state_addr()).unwrap();
    let started = Instant::now();
    let report = handle.wait().unwrap();
    assert_eq!(report.ticks, 100);
    assert!(started.elapsed() < Duration::from_secs(3), "{:?}", started.elapsed());
}

#[test]
fn bind_failure_is_a_startup_error() {
    let taken = UdpSocket::bind("127.0.0.1:0").unwrap();
    let scene = scene::preset("ur5_triple").unwrap();
    let settings = RunSettings::new(Scenario::C, &scene);
    let cfg = TeleopConfig {
        pose_port: taken.local_addr().unwrap().port(),
        ..config(1)
    };
    assert!(teleop::start(scene, settings, cfg).is_err());
}
