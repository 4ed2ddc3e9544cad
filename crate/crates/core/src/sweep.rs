//! Brute-force manipulability landscape over the free-axis angle.
//!
//! For each angle α the handle target is rotated about its own x axis by α
//! and solved with a fully constrained orientation, so every sample is a
//! pose the released-axis solver could have reached.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::ik::{self, IkWeights, NewtonSettings, OrientationMask};
use crate::kinematics::{JointVector, KinematicChain};
use crate::manipulability::manipulability_at;
use crate::pose::Pose;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub angle: f64,
    pub manipulability: f64,
    pub position_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub samples: Vec<SweepSample>,
}

/// Rotates `target` about its own x axis by `angle`.
pub fn rotated_target(target: &Pose, angle: f64) -> Pose {
    Pose::new(
        target.position,
        target.orientation * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), angle),
    )
}

/// Solves repeatedly from the last result so the regularizer does not bias
/// the sample toward the previous angle.
fn settle(
    chain: &KinematicChain,
    target: &Pose,
    seed: &JointVector,
    weights: IkWeights,
    newton: &NewtonSettings,
) -> JointVector {
    let mut q = seed.clone();
    for _ in 0..20 {
        let sol = ik::solve(chain, target, &q, weights, OrientationMask::NONE, newton);
        let moved = (&sol.q - &q).amax();
        q = sol.q;
        if moved < 1e-10 {
            break;
        }
    }
    q
}

/// Samples `steps` evenly spaced angles in `[-max_deviation, max_deviation]`,
/// continuing outward from the angle nearest zero in both directions so
/// each solve starts from its neighbor.
pub fn sweep_free_axis(
    chain: &KinematicChain,
    target: &Pose,
    q0: &JointVector,
    steps: usize,
    max_deviation: f64,
    weights: IkWeights,
    newton: &NewtonSettings,
) -> Sweep {
    assert!(steps >= 2, "a sweep needs at least two angles");
    let angles: Vec<f64> = (0..steps)
        .map(|i| -max_deviation + 2.0 * max_deviation * i as f64 / (steps - 1) as f64)
        .collect();
    let center = angles
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap();
    let mut samples = vec![
        SweepSample {
            angle: 0.0,
            manipulability: 0.0,
            position_error: 0.0
        };
        steps
    ];
    let mut solve_at = |i: usize, seed: &JointVector| -> JointVector {
        let t = rotated_target(target, angles[i]);
        let q = settle(chain, &t, seed, weights, newton);
        let ee = chain.forward_kinematics(q.as_slice());
        samples[i] = SweepSample {
            angle: angles[i],
            manipulability: manipulability_at(chain, &q),
            position_error: (ee.position - t.position).norm(),
        };
        q
    };
    let q_center = solve_at(center, q0);
    let mut q = q_center.clone();
    for i in (center + 1)..steps {
        q = solve_at(i, &q);
    }
    let mut q = q_center;
    for i in (0..center).rev() {
        q = solve_at(i, &q);
    }
    Sweep { samples }
}

impl Sweep {
    pub fn argmax(&self) -> &SweepSample {
        self.samples
            .iter()
            .max_by(|a, b| a.manipulability.total_cmp(&b.manipulability))
            .expect("sweep is never empty")
    }

    /// The angle of the only local maximum when there is exactly one and it
    /// is not at either end of the range. Local maxima are counted on the
    /// sequence after merging runs of equal values.
    pub fn unique_interior_maximum(&self) -> Option<f64> {
        let m: Vec<f64> = self.samples.iter().map(|s| s.manipulability).collect();
        let n = m.len();
        let mut maxima = Vec::new();
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && m[j + 1] == m[i] {
                j += 1;
            }
            let left_lower = i == 0 || m[i - 1] < m[i];
            let right_lower = j + 1 == n || m[j + 1] < m[i];
            if left_lower && right_lower {
                maxima.push((i, j));
            }
            i = j + 1;
        }
        match maxima.as_slice() {
            [(i, j)] if *i > 0 && *j + 1 < n => Some(0.5 * (self.samples[*i].angle + self.samples[*j].angle)),
            _ => None,
        }
    }

    /// Largest position error over the sweep.
    pub fn worst_position_error(&self) -> f64 {
        self.samples.iter().map(|s| s.position_error).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("angle,manip,pos_err_m\n");
        for p in &self.samples {
            s.push_str(&format!("{},{},{}\n", p.angle, p.manipulability, p.position_error));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene;

    fn landscape(m: &[f64]) -> Sweep {
        Sweep {
            samples: m
                .iter()
                .enumerate()
                .map(|(i, &v)| SweepSample {
                    angle: i as f64,
                    manipulability: v,
                    position_error: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn interior_maximum_detection() {
        assert_eq!(landscape(&[0.1, 0.3, 0.2]).unique_interior_maximum(), Some(1.0));
        assert_eq!(landscape(&[0.1, 0.3, 0.3, 0.2]).unique_interior_maximum(), Some(1.5));
        assert_eq!(landscape(&[0.1, 0.2, 0.3]).unique_interior_maximum(), None);
        assert_eq!(landscape(&[0.1, 0.3, 0.2, 0.4, 0.1]).unique_interior_maximum(), None);
        assert_eq!(landscape(&[0.3, 0.1, 0.2, 0.1]).unique_interior_maximum(), None);
    }

    #[test]
    fn rotation_about_own_x() {
        let t = Pose::new(
            Vector3::new(1.0, 2.0, 3.0),
            UnitQuaternion::from_euler_angles(0.3, -0.2, 1.0),
        );
        let r = rotated_target(&t, 0.4);
        assert_eq!(r.position, t.position);
        assert!((r.x_axis() - t.x_axis()).norm() < 1e-12);
        assert!((r.orientation.angle_to(&t.orientation) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn sweep_samples_are_reachable_and_centered() {
        let scene = scene::preset("ur5_triple").unwrap();
        let arm = &scene.arms[0];
        let target = scene.handle_targets(&scene.payload_start)[0];
        let sweep = sweep_free_axis(
            &arm.chain,
            &target,
            &arm.initial_seed,
            101,
            0.5,
            IkWeights::default(),
            &NewtonSettings::default(),
        );
        assert_eq!(sweep.samples.len(), 101);
        assert_eq!(sweep.samples[50].angle, 0.0);
        assert!(sweep.worst_position_error() < 1e-6);
        let at_zero = manipulability_at(&arm.chain, &arm.initial_seed);
        assert!((sweep.samples[50].manipulability - at_zero).abs() < 1e-6);
    }
}
