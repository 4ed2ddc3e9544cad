//! The free-axis nudge: candidate rotations about the handle bar and their
//! effect over one loop of the circle task.
//!
//! Each tick solves with the bar rotation released, tries the two candidate
//! rotations about the bar and keeps whichever improves manipulability by at
//! least the threshold.
//!
//! cargo run --example manipulability_nudge

use multiarm::manipulability::{manipulability_at, nudge_candidates, ManipSettings};
use multiarm::runner::{RunSettings, Runner, Scenario};
use multiarm::scene;
use multiarm::trajectories::{circle_sample, CircleParams};

fn main() {
    let scene = scene::preset("ur5_triple").expect("preset");
    let arm = &scene.arms[0];
    let target = scene.handle_targets(&scene.payload_start)[0];
    let q = &arm.initial_seed;
    let m = manipulability_at(&arm.chain, q);
    let s = ManipSettings::six_axis();
    let (qp, qm) = nudge_candidates(&arm.chain, q, &target.x_axis(), s.delta_t, s.damping_lambda);
    println!(
        "m(q) {m:.6}, m(q+) {:.6}, m(q-) {:.6}, threshold {}",
        manipulability_at(&arm.chain, &qp),
        manipulability_at(&arm.chain, &qm),
        s.theta_m
    );

    // Held still, neither candidate clears the threshold, so the seed stays
    // put. Along the circle the landscape shifts under the arms and the
    // nudge keeps them on higher ground than scenario B.
    let params = CircleParams::default();
    let ticks = ((params.approach_time() + params.period()) * 100.0) as usize;
    let poses: Vec<_> = (0..ticks)
        .map(|k| circle_sample(&params, &scene.payload_start, k as f64 / 100.0))
        .collect();
    let mut runners: Vec<Runner> = [Scenario::B, Scenario::C]
        .into_iter()
        .map(|sc| Runner::new(scene.clone(), RunSettings::new(sc, &scene), &poses[0]).expect("runner"))
        .collect();
    let mut accepted = 0;
    for (k, pose) in poses.iter().enumerate() {
        let b = runners[0].step(pose);
        let c = runners[1].step(pose);
        accepted += c.arms.iter().filter(|a| a.nudge != 0).count();
        if k % 200 == 0 {
            let m = |t: &multiarm::runner::TickResult| t.frame.arms.iter().map(|a| a.manipulability).sum::<f64>() / 3.0;
            let angles: Vec<String> = runners[1]
                .free_axis()
                .iter()
                .map(|f| format!("{:+.2}", f.accumulated_angle))
                .collect();
            println!(
                "t {:>5.1}: mean m B {:.4} C {:.4}, C bar angles [{}]",
                k as f64 / 100.0,
                m(&b),
                m(&c),
                angles.join(", ")
            );
        }
    }
    println!("{accepted} nudges accepted over {ticks} ticks");
}
