//! Runs the three scenarios on the circle and square tasks and prints the
//! summary tables.
//!
//! cargo run --release --example scenario_table [-- ur5_triple|yumi_dual]

use multiarm::metrics::SummaryTable;
use multiarm::runner::{run_scenario, Scenario, ScenarioConfig};

fn main() {
    let scene = std::env::args().nth(1).unwrap_or_else(|| "ur5_triple".into());
    for task in ["circle", "square"] {
        let mut table = SummaryTable::new(format!("{scene}, {task} trajectory, 3 loops"));
        for scenario in Scenario::ALL {
            let cfg = ScenarioConfig {
                scenario,
                scene: scene.clone(),
                trajectory: task.into(),
                ..Default::default()
            };
            let report = run_scenario(&cfg, None).expect("run");
            println!(
                "{task} {scenario}: {} ticks, {:.3} ms/tick, min m {:.2e}",
                report.frames.len(),
                report.timing.tick_ms.mean,
                report.summary.min_manipulability
            );
            table.rows.push(report.summary);
        }
        println!("\n{}", table.to_markdown());
    }
}
