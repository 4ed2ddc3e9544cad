//! Starts the live service on free ports, drags the payload from a scripted
//! UDP client while a TCP subscriber reads state, then replays the recorded
//! session in batch.
//!
//! cargo run --example teleop_server

use std::io::Read;
use std::net::{TcpStream, UdpSocket};
use std::thread;
use std::time::Duration;

use multiarm::pose::Pose;
use multiarm::runner::{run_scenario, RunSettings, Scenario, ScenarioConfig};
use multiarm::scene;
use multiarm::teleop::{self, wire, PoseUpdateMessage, TeleopConfig};
use nalgebra::Vector3;

fn main() {
    let scene = scene::preset("ur5_triple").expect("preset");
    let start = scene.payload_start;
    let settings = RunSettings::new(Scenario::C, &scene);
    let traj = std::env::temp_dir().join("multiarm-teleop.traj");
    let handle = teleop::start(
        scene,
        settings,
        TeleopConfig {
            pose_port: 0,
            state_port: 0,
            ws_port: Some(0),
            max_ticks: Some(300),
            record: Some(traj.clone()),
            ..TeleopConfig::default()
        },
    )
    .expect("service");
    println!(
        "udp {} / tcp {} / ws://{}/ws",
        handle.pose_addr(),
        handle.state_addr(),
        handle.ws_addr().unwrap()
    );

    let state_addr = handle.state_addr();
    let subscriber = thread::spawn(move || {
        let mut stream = TcpStream::connect(state_addr).expect("subscribe");
        let mut len = [0u8; 4];
        let mut seen = 0;
        while stream.read_exact(&mut len).is_ok() {
            let mut body = vec![0u8; u32::from_be_bytes(len) as usize];
            if stream.read_exact(&mut body).is_err() {
                break;
            }
            let state = wire::decode_state(&body).expect("state record");
            if state.tick().is_multiple_of(50) {
                let m: Vec<String> = state
                    .arms()
                    .iter()
                    .map(|a| format!("{:.4}", a.manipulability))
                    .collect();
                println!(
                    "tick {:>3} t {:.2} payload x {:+.3} m [{}]",
                    state.tick(),
                    state.t_server(),
                    state.payload().position.x,
                    m.join(", ")
                );
            }
            seen += 1;
        }
        seen
    });

    let socket = UdpSocket::bind("127.0.0.1:0").expect("client socket");
    for seq in 1..=200u64 {
        // Drag 10 cm along x, then let go.
        let x = 0.1 * (seq.min(150) as f64 / 150.0);
        let msg = PoseUpdateMessage {
            session_id: "script".into(),
            seq,
            t_client: seq as f64 / 100.0,
            pose: Pose::new(start.position + Vector3::new(x, 0.0, 0.0), start.orientation),
            grab: seq < 150,
        };
        socket
            .send_to(msg.encode().as_bytes(), handle.pose_addr())
            .expect("send");
        thread::sleep(Duration::from_millis(10));
    }

    let report = handle.wait().expect("session");
    println!(
        "{} ticks, {} updates accepted, {} states received by the subscriber",
        report.ticks,
        report.ingest.accepted,
        subscriber.join().unwrap_or(0)
    );

    let replay = run_scenario(
        &ScenarioConfig {
            trajectory: traj.to_string_lossy().into_owned(),
            ..Default::default()
        },
        None,
    )
    .expect("replay");
    println!("batch replay reproduces the live metrics: {}", replay.csv == report.csv);
}
