//! One IK solve with the full orientation constrained and one with the
//! rotation about the handle x axis released.
//!
//! cargo run --example solve_ik

use multiarm::ik::{self, IkWeights, NewtonSettings, OrientationMask};
use multiarm::runner::free_axis_angle;
use multiarm::scene;
use multiarm::sweep::rotated_target;

fn main() {
    let scene = scene::preset("ur5_triple").expect("preset");
    let arm = &scene.arms[0];
    let target = scene.handle_targets(&scene.payload_start)[0];
    let seed = &arm.initial_seed;
    let newton = NewtonSettings::default();
    let weights = IkWeights::default();

    // Twist the grasp 0.4 rad about the bar and solve both ways from the
    // same seed.
    let twisted = rotated_target(&target, 0.4);
    for (label, mask) in [
        ("full orientation", OrientationMask::NONE),
        ("x released", OrientationMask::X),
    ] {
        let sol = ik::solve(&arm.chain, &twisted, seed, weights, mask, &newton);
        println!(
            "{label:>16}: pos err {:.2e} m, orient err {:.2e} rad, {} steps, converged {}, angle about bar {:+.4} rad",
            sol.position_error,
            sol.orientation_error,
            sol.steps_taken,
            sol.converged,
            free_axis_angle(&arm.chain, &sol.q, &twisted),
        );
    }

    let mut trace = Vec::new();
    ik::solve_traced(
        &arm.chain,
        &twisted,
        seed,
        weights,
        OrientationMask::NONE,
        &newton,
        &mut trace,
    );
    let energies: Vec<String> = trace.iter().map(|e| format!("{e:.3e}")).collect();
    println!("energy per accepted step: {}", energies.join(" > "));
}
