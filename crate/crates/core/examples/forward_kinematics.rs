//! Forward kinematics and the geometric Jacobian of the bundled six-axis arm.
//!
//! cargo run --example forward_kinematics

use multiarm::kinematics::bundled_chain;
use multiarm::manipulability::manipulability_at;

fn main() {
    let chain = bundled_chain("ur5_like").expect("bundled chain");
    let q = chain.rest_pose();
    println!(
        "{} with {} joints, rest pose {:.3?}",
        chain.name(),
        chain.dof(),
        q.as_slice()
    );

    let ee = chain.forward_kinematics(q.as_slice());
    println!("tool position {:.4?}", ee.position_array());
    println!("tool quaternion (w,x,y,z) {:.4?}", ee.quaternion_wxyz());

    for (i, frame) in chain.link_frames(q.as_slice()).iter().enumerate() {
        println!("  frame {i}: {:.3?}", frame.position_array());
    }

    let j = chain.geometric_jacobian(q.as_slice());
    println!("Jacobian (rows: vx vy vz wx wy wz){j:.3}");
    println!("manipulability {:.5}", manipulability_at(&chain, &q));
}
