//! Manipulability index and the free-axis nudge that re-seeds the next IK
//! solve.
//!
//! After each solve, two candidate configurations `q ± J⁺·ξ·Δt` are formed,
//! where `ξ` is a unit angular twist about the handle's x-axis. To first
//! order these rotate the end effector about the handle bar and leave its
//! position unchanged. The better candidate becomes the next seed if it
//! raises the manipulability by at least `theta_m` and stays within
//! `max_deviation` of the original grasp.

use nalgebra::{DMatrix, Dim, Matrix, Storage, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::kinematics::{JointVector, KinematicChain};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManipSettings {
    /// Nudge magnitude per tick (rad).
    pub delta_t: f64,
    /// Minimum manipulability gain required to accept a nudge.
    pub theta_m: f64,
    pub damping_lambda: f64,
    /// Bound on the accumulated free-axis rotation (rad).
    pub max_deviation: f64,
}

impl ManipSettings {
    /// Defaults tuned for the six-axis arms.
    pub fn six_axis() -> Self {
        Self {
            delta_t: 0.007,
            theta_m: 1e-4,
            damping_lambda: 1e-6,
            max_deviation: std::f64::consts::FRAC_PI_2,
        }
    }

    /// Defaults tuned for the seven-axis dual-arm robots.
    pub fn dual_arm() -> Self {
        Self {
            delta_t: 0.005,
            theta_m: 1e-3,
            ..Self::six_axis()
        }
    }
}

impl Default for ManipSettings {
    fn default() -> Self {
        Self::six_axis()
    }
}

/// Per-arm record of the rotation applied about the handle x-axis.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FreeAxisState {
    pub accumulated_angle: f64,
}

/// `sqrt(det(J·Jᵀ))`, zero at singular configurations.
pub fn manipulability_index<R: Dim, C: Dim, S: Storage<f64, R, C>>(j: &Matrix<f64, R, C, S>) -> f64 {
    let (rows, cols) = j.shape();
    if cols < rows {
        return 0.0;
    }
    let j = DMatrix::from_iterator(rows, cols, j.iter().copied());
    let det = (&j * j.transpose()).determinant();
    // Round-off can leave a tiny (even negative) determinant at a singularity.
    if det < 1e-14 {
        0.0
    } else {
        det.sqrt()
    }
}

/// Damped right pseudoinverse `Jᵀ·(J·Jᵀ + λI)⁻¹`.
pub fn generalized_inverse<R: Dim, C: Dim, S: Storage<f64, R, C>>(
    j: &Matrix<f64, R, C, S>,
    lambda: f64,
) -> DMatrix<f64> {
    let (rows, cols) = j.shape();
    let j = DMatrix::from_iterator(rows, cols, j.iter().copied());
    let mut gram = &j * j.transpose();
    for i in 0..rows {
        gram[(i, i)] += lambda;
    }
    match gram.clone().lu().try_inverse() {
        Some(inv) => j.transpose() * inv,
        None => j.pseudo_inverse(1e-12).expect("SVD pseudo-inverse of a finite matrix"),
    }
}

/// Candidate configurations rotated by `±delta_t` about `handle_x_world`.
pub fn nudge_candidates(
    chain: &KinematicChain,
    q: &JointVector,
    handle_x_world: &Vector3<f64>,
    delta_t: f64,
    lambda: f64,
) -> (JointVector, JointVector) {
    let jac = chain.geometric_jacobian(q.as_slice());
    let pinv = generalized_inverse(&jac, lambda);
    let twist = Vector6::new(0.0, 0.0, 0.0, handle_x_world.x, handle_x_world.y, handle_x_world.z);
    let step = pinv * twist * delta_t;
    (q + &step, q - &step)
}

pub fn manipulability_at(chain: &KinematicChain, q: &JointVector) -> f64 {
    manipulability_index(&chain.geometric_jacobian(q.as_slice()))
}

/// Outcome of one seed selection.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedChoice {
    pub seed: JointVector,
    pub state: FreeAxisState,
    /// Manipulability of the returned seed.
    pub manipulability: f64,
    /// `+1` or `-1` when a candidate was accepted, `0` otherwise.
    pub direction: i8,
}

/// Picks the next IK seed among `q`, `q_plus` and `q_minus`.
pub fn select_seed(
    chain: &KinematicChain,
    q: &JointVector,
    q_plus: &JointVector,
    q_minus: &JointVector,
    settings: &ManipSettings,
    state: FreeAxisState,
) -> SeedChoice {
    let m_current = manipulability_at(chain, q);
    let m_plus = manipulability_at(chain, q_plus);
    let m_minus = manipulability_at(chain, q_minus);
    choose(q, q_plus, q_minus, [m_current, m_plus, m_minus], settings, state)
}

/// Selection rule on precomputed manipulabilities `[m(q), m(q+), m(q−)]`.
pub(crate) fn choose(
    q: &JointVector,
    q_plus: &JointVector,
    q_minus: &JointVector,
    m: [f64; 3],
    settings: &ManipSettings,
    state: FreeAxisState,
) -> SeedChoice {
    let [m_current, m_plus, m_minus] = m;
    let (candidate, m_best, sign) = if m_plus >= m_minus {
        (q_plus, m_plus, 1.0)
    } else {
        (q_minus, m_minus, -1.0)
    };
    let angle = state.accumulated_angle + sign * settings.delta_t;
    if m_best - m_current >= settings.theta_m && angle.abs() <= settings.max_deviation {
        SeedChoice {
            seed: candidate.clone(),
            state: FreeAxisState {
                accumulated_angle: angle,
            },
            manipulability: m_best,
            direction: sign as i8,
        }
    } else {
        SeedChoice {
            seed: q.clone(),
            state,
            manipulability: m_current,
            direction: 0,
        }
    }
}
