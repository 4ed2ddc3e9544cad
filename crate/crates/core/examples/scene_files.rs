//! Loading scenes from presets and from files, and checking the initial
//! grasp of every arm.
//!
//! cargo run --example scene_files [-- path/to/file.scene]

use multiarm::scene::{self, Scene};

fn describe(scene: &Scene) {
    println!(
        "{}: {} arms, payload radius {} m",
        scene.name,
        scene.arms.len(),
        scene.payload.radius
    );
    let targets = scene.handle_targets(&scene.payload_start);
    for (arm, target) in scene.arms.iter().zip(&targets) {
        let ee = arm.chain.forward_kinematics(arm.initial_seed.as_slice());
        println!(
            "  {:<12} {} joints, base at {:.3?}, grasp error {:.2e} m",
            arm.id,
            arm.chain.dof(),
            arm.chain.base_pose().position_array(),
            (ee.position - target.position).norm()
        );
    }
}

fn main() {
    match std::env::args().nth(1) {
        Some(path) => describe(&scene::load_scene_file(&path).expect("scene file")),
        None => {
            for name in ["ur5_triple", "yumi_dual"] {
                describe(&scene::preset(name).expect("preset"));
            }
        }
    }
}
