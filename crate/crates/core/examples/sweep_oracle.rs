//! Brute-force manipulability over the bar rotation for one arm, printed as
//! a coarse text plot.
//!
//! cargo run --release --example sweep_oracle [-- steps]

use multiarm::ik::{IkWeights, NewtonSettings};
use multiarm::scene;
use multiarm::sweep::sweep_free_axis;

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let scene = scene::preset("ur5_triple").expect("preset");
    let arm = &scene.arms[0];
    let target = scene.handle_targets(&scene.payload_start)[0];
    let sweep = sweep_free_axis(
        &arm.chain,
        &target,
        &arm.initial_seed,
        steps,
        scene.manip.max_deviation,
        IkWeights::default(),
        &NewtonSettings::default(),
    );
    let best = sweep.argmax();
    let top = best.manipulability;
    for s in sweep.samples.iter().step_by((steps / 40).max(1)) {
        let bar = "#".repeat((60.0 * s.manipulability / top) as usize);
        println!("{:+.3} {:.5} {bar}", s.angle, s.manipulability);
    }
    println!("argmax at {:+.4} rad, m {:.5}", best.angle, best.manipulability);
    match sweep.unique_interior_maximum() {
        Some(a) => println!("single interior peak at {a:+.4} rad"),
        None => println!("no single interior peak"),
    }
    println!(
        "worst position error over the sweep {:.2e} m",
        sweep.worst_position_error()
    );
}
