//! Samples a square task into a `.traj` recording, reloads it and replays it
//! in batch. The replay sees the same payload pose at every tick, so the
//! metrics match the direct run exactly.
//!
//! cargo run --example record_and_replay

use multiarm::runner::{run_scenario, Scenario, ScenarioConfig};
use multiarm::trajectories::{load_recording_file, Recording, RecordingSource, TrajectorySample};

fn main() {
    let direct = ScenarioConfig {
        scenario: Scenario::C,
        trajectory: "square".into(),
        ticks: Some(800),
        ..Default::default()
    };
    let report = run_scenario(&direct, None).expect("direct run");

    let samples = report
        .poses
        .iter()
        .enumerate()
        .map(|(k, p)| TrajectorySample {
            t: k as f64 / direct.tick_rate,
            payload_pose: *p,
        })
        .collect();
    let recording = Recording::new(samples, RecordingSource::Live).expect("recording");
    let dir = std::env::temp_dir().join("multiarm-record-and-replay");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("square.traj");
    recording.save(&path).expect("save");
    println!("wrote {} samples to {}", recording.samples().len(), path.display());
    println!(
        "first line: {}",
        recording.to_traj_string().lines().next().unwrap_or_default()
    );

    let reloaded = load_recording_file(&path).expect("load");
    assert_eq!(reloaded.samples(), recording.samples());

    let replay = ScenarioConfig {
        trajectory: path.to_string_lossy().into_owned(),
        ..direct.clone()
    };
    let replayed = run_scenario(&ScenarioConfig { ticks: None, ..replay }, None).expect("replay");
    println!("direct and replayed metrics identical: {}", replayed.csv == report.csv);
}
