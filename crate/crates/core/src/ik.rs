//! Optimization-based inverse kinematics for a single arm.
//!
//! Minimizes
//!
//! ```text
//! E(q) = w_err·‖r(q)‖² + w_reg·‖q − q_ref‖² + w_lim·Σ barrier(q_i)
//! ```
//!
//! where `r` is the 6-vector pose residual against the target, with Newton
//! steps on a Gauss-Newton Hessian and an energy-decrease line search.

use nalgebra::{DMatrix, Matrix3, Matrix6xX, RowVector3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::kinematics::{Jacobian, JointVector, KinematicChain};
use crate::pose::{rotation_log, skew, so3_left_jacobian_inverse, Pose};

/// Soft joint-limit margin in radians. The barrier is active within this
/// distance of either limit.
pub const LIMIT_MARGIN: f64 = 0.02;

/// Rotation axes (in the target's local frame) left unconstrained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrientationMask {
    #[serde(default)]
    pub x: bool,
    #[serde(default)]
    pub y: bool,
    #[serde(default)]
    pub z: bool,
}

impl OrientationMask {
    /// Fully constrained orientation.
    pub const NONE: Self = Self {
        x: false,
        y: false,
        z: false,
    };
    /// Free rotation about the local x-axis.
    pub const X: Self = Self {
        x: true,
        y: false,
        z: false,
    };

    pub fn released_count(&self) -> usize {
        [self.x, self.y, self.z].iter().filter(|&&b| b).count()
    }

    fn as_array(&self) -> [bool; 3] {
        [self.x, self.y, self.z]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IkWeights {
    pub w_err: f64,
    pub w_reg: f64,
    pub w_lim: f64,
}

impl Default for IkWeights {
    fn default() -> Self {
        Self {
            w_err: 1000.0,
            w_reg: 0.01,
            w_lim: 10_000.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonSettings {
    pub max_steps: usize,
    /// Exit once the gradient's infinity norm drops below this.
    pub residual_tol: f64,
    pub hessian_regularization: f64,
    pub backtracking_factor: f64,
    pub max_backtracks: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            max_steps: 10,
            residual_tol: 1e-5,
            hessian_regularization: 1e-8,
            backtracking_factor: 0.5,
            max_backtracks: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IkSolution {
    pub q: JointVector,
    /// Distance between end-effector and target positions (m).
    pub position_error: f64,
    /// Norm of the masked angular residual (rad).
    pub orientation_error: f64,
    pub steps_taken: usize,
    pub converged: bool,
    pub energy: f64,
}

/// 6-vector residual between `current` and `target`.
///
/// Rows 0–2 are the position difference. Rows 3–5 are the rotation vector
/// of `target⁻¹·current` in the target frame. With one released axis `d`
/// the angular part is the swing rotation that aligns `d` with its image,
/// so any rotation about `d` contributes nothing; to first order this
/// equals zeroing the `d` component. With two or more released axes the
/// corresponding components are zeroed directly.
pub fn pose_error(current: &Pose, target: &Pose, mask: OrientationMask) -> Vector6<f64> {
    let mut r = Vector6::zeros();
    r.fixed_rows_mut::<3>(0)
        .copy_from(&(current.position - target.position));
    r.fixed_rows_mut::<3>(3)
        .copy_from(&angular_residual(current, target, mask).0);
    r
}

/// Returns the angular residual and its derivative with respect to a
/// world-frame angular velocity of `current`.
fn angular_residual(current: &Pose, target: &Pose, mask: OrientationMask) -> (Vector3<f64>, Matrix3<f64>) {
    match mask.released_count() {
        1 => {
            let k = mask.as_array().iter().position(|&b| b).unwrap();
            let mut d = Vector3::zeros();
            d[k] = 1.0;
            swing_residual(current, target, &d)
        }
        released => {
            let phi = rotation_log(&(target.orientation.inverse() * current.orientation));
            let rt_t = target.rotation_matrix().transpose();
            let mut jac = so3_left_jacobian_inverse(&phi) * rt_t;
            let mut phi = phi;
            if released > 1 {
                for (k, free) in mask.as_array().iter().enumerate() {
                    if *free {
                        phi[k] = 0.0;
                        jac.row_mut(k).fill(0.0);
                    }
                }
            }
            (phi, jac)
        }
    }
}

/// Residual for a single released local axis `d`.
///
/// `u` is the target's `d`-axis seen from the current frame. The residual is
/// `angle(u, d)·normalize(u × d)`, which depends on the target only through
/// its `d`-axis in world coordinates.
fn swing_residual(current: &Pose, target: &Pose, d: &Vector3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let rc_t = current.rotation_matrix().transpose();
    let a = target.orientation * d;
    let u = rc_t * a;
    let c = u.cross(d);
    let s = c.norm();
    let k = u.dot(d);
    let sk2 = s * s + k * k;
    let theta = s.atan2(k);

    // g = θ/s, h = (∂g/∂s)/s, gk = ∂g/∂k
    let (g, h) = if s < 1e-3 && k > 0.0 {
        let x2 = (s / k).powi(2);
        let g = (1.0 - x2 / 3.0 + x2 * x2 / 5.0) / k;
        let h = (-2.0 / 3.0 + 4.0 * x2 / 5.0) / (k * k * k);
        (g, h)
    } else {
        let s = s.max(1e-300);
        let g = theta / s;
        let h = (k / sk2 - g) / (s * s);
        (g, h)
    };
    let gk = -1.0 / sk2;

    let residual = c * g;
    let neg_skew_d = -skew(d);
    let dc_du = neg_skew_d;
    let c_row: RowVector3<f64> = c.transpose();
    let d_row: RowVector3<f64> = d.transpose();
    let drho_du = g * dc_du + c * (h * (c_row * dc_du) + gk * d_row);
    let du_domega = rc_t * skew(&a);
    (residual, drho_du * du_domega)
}

/// One-sided quadratic barrier with margin [`LIMIT_MARGIN`]: value, first
/// and second derivative.
fn barrier(q: f64, lo: f64, hi: f64) -> (f64, f64, f64) {
    let upper = hi - LIMIT_MARGIN;
    let lower = lo + LIMIT_MARGIN;
    if q > upper {
        let e = q - upper;
        (e * e, 2.0 * e, 2.0)
    } else if q < lower {
        let e = q - lower;
        (e * e, 2.0 * e, 2.0)
    } else {
        (0.0, 0.0, 0.0)
    }
}

struct Evaluation {
    energy: f64,
    residual: Vector6<f64>,
    /// d residual / d q
    residual_jac: Matrix6xX<f64>,
}

/// Energy of one IK instance, with everything needed to take a Newton step.
pub struct IkObjective<'a> {
    pub chain: &'a KinematicChain,
    pub target: &'a Pose,
    pub seed_reference: &'a JointVector,
    pub weights: IkWeights,
    pub mask: OrientationMask,
}

impl<'a> IkObjective<'a> {
    pub fn new(
        chain: &'a KinematicChain,
        target: &'a Pose,
        seed_reference: &'a JointVector,
        weights: IkWeights,
        mask: OrientationMask,
    ) -> Self {
        assert_eq!(
            seed_reference.len(),
            chain.dof(),
            "seed reference length must match chain dof"
        );
        Self {
            chain,
            target,
            seed_reference,
            weights,
            mask,
        }
    }

    pub fn energy(&self, q: &JointVector) -> f64 {
        let ee = self.chain.forward_kinematics(q.as_slice());
        let r = pose_error(&ee, self.target, self.mask);
        self.weights.w_err * r.norm_squared() + self.regularization_and_barrier(q).0
    }

    pub fn gradient(&self, q: &JointVector) -> JointVector {
        let eval = self.evaluate(q);
        self.gradient_from(q, &eval)
    }

    fn regularization_and_barrier(&self, q: &JointVector) -> (f64, JointVector, JointVector) {
        let n = q.len();
        let mut value = 0.0;
        let mut grad = JointVector::zeros(n);
        let mut hess_diag = JointVector::zeros(n);
        let w = self.weights;
        for (i, (lo, hi)) in self.chain.limits().enumerate() {
            let dq = q[i] - self.seed_reference[i];
            let (b, db, ddb) = barrier(q[i], lo, hi);
            value += w.w_reg * dq * dq + w.w_lim * b;
            grad[i] = 2.0 * w.w_reg * dq + w.w_lim * db;
            hess_diag[i] = 2.0 * w.w_reg + w.w_lim * ddb;
        }
        (value, grad, hess_diag)
    }

    fn evaluate(&self, q: &JointVector) -> Evaluation {
        let (ee, jac): (Pose, Jacobian) = self.chain.fk_with_jacobian(q.as_slice());
        let (angular, dang_domega) = angular_residual(&ee, self.target, self.mask);
        let mut residual = Vector6::zeros();
        residual
            .fixed_rows_mut::<3>(0)
            .copy_from(&(ee.position - self.target.position));
        residual.fixed_rows_mut::<3>(3).copy_from(&angular);

        let n = q.len();
        let mut residual_jac = Matrix6xX::zeros(n);
        residual_jac.fixed_rows_mut::<3>(0).copy_from(&jac.fixed_rows::<3>(0));
        residual_jac
            .fixed_rows_mut::<3>(3)
            .copy_from(&(dang_domega * jac.fixed_rows::<3>(3)));

        let energy = self.weights.w_err * residual.norm_squared() + self.regularization_and_barrier(q).0;
        Evaluation {
            energy,
            residual,
            residual_jac,
        }
    }

    fn gradient_from(&self, q: &JointVector, eval: &Evaluation) -> JointVector {
        let (_, reg_grad, _) = self.regularization_and_barrier(q);
        eval.residual_jac.tr_mul(&eval.residual) * (2.0 * self.weights.w_err) + reg_grad
    }

    fn hessian_from(&self, q: &JointVector, eval: &Evaluation) -> DMatrix<f64> {
        let (_, _, diag) = self.regularization_and_barrier(q);
        let mut h = eval.residual_jac.tr_mul(&eval.residual_jac) * (2.0 * self.weights.w_err);
        for i in 0..q.len() {
            h[(i, i)] += diag[i];
        }
        h
    }
}

pub fn objective(
    chain: &KinematicChain,
    q: &JointVector,
    target: &Pose,
    seed_reference: &JointVector,
    weights: IkWeights,
    mask: OrientationMask,
) -> f64 {
    IkObjective::new(chain, target, seed_reference, weights, mask).energy(q)
}

/// Solves IK with `seed` as both the starting point and the regularization
/// reference.
pub fn solve(
    chain: &KinematicChain,
    target: &Pose,
    seed: &JointVector,
    weights: IkWeights,
    mask: OrientationMask,
    settings: &NewtonSettings,
) -> IkSolution {
    solve_inner(chain, target, seed, weights, mask, settings, None)
}

/// Like [`solve`], additionally recording the energy of every accepted
/// iterate (starting point included).
pub fn solve_traced(
    chain: &KinematicChain,
    target: &Pose,
    seed: &JointVector,
    weights: IkWeights,
    mask: OrientationMask,
    settings: &NewtonSettings,
    trace: &mut Vec<f64>,
) -> IkSolution {
    solve_inner(chain, target, seed, weights, mask, settings, Some(trace))
}

fn solve_inner(
    chain: &KinematicChain,
    target: &Pose,
    seed: &JointVector,
    weights: IkWeights,
    mask: OrientationMask,
    settings: &NewtonSettings,
    mut trace: Option<&mut Vec<f64>>,
) -> IkSolution {
    assert!(
        seed.iter().all(|v| v.is_finite()),
        "seed must contain finite joint values"
    );
    let problem = IkObjective::new(chain, target, seed, weights, mask);
    let mut q = seed.clone();
    let mut eval = problem.evaluate(&q);
    if let Some(t) = trace.as_deref_mut() {
        t.push(eval.energy);
    }
    let mut steps = 0;
    let mut converged = false;

    loop {
        let grad = problem.gradient_from(&q, &eval);
        if grad.amax() < settings.residual_tol {
            converged = true;
            break;
        }
        if steps >= settings.max_steps {
            break;
        }
        let hessian = problem.hessian_from(&q, &eval);
        let direction = newton_direction(hessian, &grad, settings.hessian_regularization);
        steps += 1;

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_backtracks {
            let candidate = &q + &direction * alpha;
            let cand_eval = problem.evaluate(&candidate);
            if cand_eval.energy < eval.energy {
                accepted = Some((candidate, cand_eval));
                break;
            }
            alpha *= settings.backtracking_factor;
        }
        match accepted {
            Some((next_q, next_eval)) => {
                q = next_q;
                eval = next_eval;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(eval.energy);
                }
            }
            None => break,
        }
    }

    IkSolution {
        position_error: eval.residual.fixed_rows::<3>(0).norm(),
        orientation_error: eval.residual.fixed_rows::<3>(3).norm(),
        q,
        steps_taken: steps,
        converged,
        energy: eval.energy,
    }
}

/// Solves `(H + μI)·x = −g`, doubling `μ` until the Cholesky factorization
/// succeeds.
fn newton_direction(hessian: DMatrix<f64>, grad: &JointVector, regularization: f64) -> JointVector {
    let n = grad.len();
    let mut mu = regularization.max(f64::MIN_POSITIVE);
    for _ in 0..200 {
        let mut h = hessian.clone();
        for i in 0..n {
            h[(i, i)] += mu;
        }
        if let Some(chol) = h.cholesky() {
            return -chol.solve(grad);
        }
        mu *= 2.0;
    }
    // Unreachable for finite input; fall back to steepest descent.
    -grad.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{bundled_chain, JointDescriptor};
    use crate::pose::axis_angle;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn planar_2r() -> KinematicChain {
        KinematicChain::new(
            Pose::identity(),
            vec![
                JointDescriptor::revolute(Pose::identity(), Vector3::z()),
                JointDescriptor::revolute(Pose::from_translation(0.5, 0.0, 0.0), Vector3::z()),
            ],
            Pose::from_translation(0.5, 0.0, 0.0),
        )
        .unwrap()
    }

    #[test]
    fn identical_poses_have_zero_error() {
        let p = Pose::new(
            Vector3::new(0.1, 0.2, 0.3),
            axis_angle(&Vector3::new(1.0, 1.0, 0.0), 0.4),
        );
        assert!(pose_error(&p, &p, OrientationMask::NONE).norm() < 1e-15);
        assert!(pose_error(&p, &p, OrientationMask::X).norm() < 1e-15);
    }

    #[test]
    fn released_axis_rotation_is_free() {
        let current = Pose::new(
            Vector3::new(0.1, 0.2, 0.3),
            axis_angle(&Vector3::new(0.2, 1.0, 0.0), 0.8),
        );
        let target = current.compose(&Pose::from_rotation(axis_angle(&Vector3::x(), 0.3)));
        let masked = pose_error(&current, &target, OrientationMask::X);
        assert!(masked.fixed_rows::<3>(3).norm() < 1e-15);
        let full = pose_error(&current, &target, OrientationMask::NONE);
        assert!((full.fixed_rows::<3>(3).norm() - 0.3).abs() < 1e-9);
    }

    #[test]
    fn two_released_axes_zero_components() {
        let current = Pose::identity();
        let target = Pose::from_rotation(rotation_exp_vec(0.1, 0.2, 0.3));
        let mask = OrientationMask {
            x: true,
            y: true,
            z: false,
        };
        let r = pose_error(&current, &target, mask);
        assert_eq!(r[3], 0.0);
        assert_eq!(r[4], 0.0);
        assert!(r[5].abs() > 0.1);
        let all = OrientationMask {
            x: true,
            y: true,
            z: true,
        };
        assert_eq!(pose_error(&current, &target, all).fixed_rows::<3>(3).norm(), 0.0);
    }

    fn rotation_exp_vec(x: f64, y: f64, z: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_scaled_axis(Vector3::new(x, y, z))
    }

    #[test]
    fn objective_terms() {
        let chain = planar_2r();
        let q = JointVector::from_vec(vec![0.3, 0.4]);
        let target = chain.forward_kinematics(q.as_slice());
        let w = IkWeights::default();
        assert_eq!(objective(&chain, &q, &target, &q, w, OrientationMask::NONE), 0.0);

        // At the upper limit the barrier contributes w_lim·ε².
        let at_limit = JointVector::from_vec(vec![std::f64::consts::PI, 0.0]);
        let target = chain.forward_kinematics(at_limit.as_slice());
        let e = objective(&chain, &at_limit, &target, &at_limit, w, OrientationMask::NONE);
        assert!((e - w.w_lim * LIMIT_MARGIN * LIMIT_MARGIN).abs() < 1e-9);

        // Pure position offset.
        let only_err = IkWeights {
            w_err: 1000.0,
            w_reg: 0.0,
            w_lim: 0.0,
        };
        let ee = chain.forward_kinematics(q.as_slice());
        let shifted = Pose::new(ee.position + Vector3::new(0.0, 0.0, 0.01), ee.orientation);
        let e = objective(&chain, &q, &shifted, &q, only_err, OrientationMask::NONE);
        assert!((e - 1000.0 * 0.01 * 0.01).abs() < 1e-12);
    }

    #[test]
    fn already_optimal_seed_is_returned() {
        let chain = bundled_chain("ur5_like").unwrap();
        let seed = chain.rest_pose();
        let target = chain.forward_kinematics(seed.as_slice());
        let sol = solve(
            &chain,
            &target,
            &seed,
            IkWeights::default(),
            OrientationMask::NONE,
            &NewtonSettings::default(),
        );
        assert!(sol.converged);
        assert_eq!(sol.steps_taken, 0);
        assert_eq!(sol.q, seed);
        assert!(sol.position_error < 1e-9);
    }

    fn random_interior(chain: &KinematicChain, rng: &mut ChaCha8Rng) -> JointVector {
        JointVector::from_iterator(
            chain.dof(),
            chain.limits().map(|(lo, hi)| {
                let lo = lo.max(-3.0) + 0.1;
                let hi = hi.min(3.0) - 0.1;
                rng.random_range(lo..hi)
            }),
        )
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in ["ur5_like", "redundant7"] {
            let chain = bundled_chain(name).unwrap();
            for mask in [OrientationMask::NONE, OrientationMask::X] {
                for _ in 0..20 {
                    let q = random_interior(&chain, &mut rng);
                    let q_t = random_interior(&chain, &mut rng);
                    let target = chain.forward_kinematics(q_t.as_slice());
                    let reference = random_interior(&chain, &mut rng);
                    let obj = IkObjective::new(&chain, &target, &reference, IkWeights::default(), mask);
                    let g = obj.gradient(&q);
                    let h = 1e-6;
                    for i in 0..chain.dof() {
                        let mut qp = q.clone();
                        let mut qm = q.clone();
                        qp[i] += h;
                        qm[i] -= h;
                        let fd = (obj.energy(&qp) - obj.energy(&qm)) / (2.0 * h);
                        let scale = g[i].abs().max(1.0);
                        assert!(
                            (fd - g[i]).abs() / scale < 1e-5,
                            "{name} {mask:?} joint {i}: analytic {} vs fd {fd}",
                            g[i]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_check_near_limits_and_small_residual() {
        let chain = bundled_chain("redundant7").unwrap();
        let mut q = chain.rest_pose();
        q[1] = 1.995; // inside the barrier band
        let target = chain
            .forward_kinematics(q.as_slice())
            .compose(&Pose::from_rotation(axis_angle(&Vector3::new(0.0, 1.0, 1.0), 1e-5)));
        let obj = IkObjective::new(&chain, &target, &q, IkWeights::default(), OrientationMask::X);
        let g = obj.gradient(&q);
        for i in 0..chain.dof() {
            let h = 1e-7;
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += h;
            qm[i] -= h;
            let fd = (obj.energy(&qp) - obj.energy(&qm)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() < 1e-5 * g[i].abs().max(1.0),
                "joint {i}: {} vs {fd}",
                g[i]
            );
        }
    }

    #[test]
    fn recovers_known_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chain = bundled_chain("ur5_like").unwrap();
        let mut checked = 0;
        while checked < 50 {
            let q_star = random_interior(&chain, &mut rng);
            // Away from singular configurations the regularizer's pull toward
            // the seed is far below the tolerance.
            if crate::manipulability::manipulability_at(&chain, &q_star) < 0.01 {
                continue;
            }
            checked += 1;
            let target = chain.forward_kinematics(q_star.as_slice());
            let seed = q_star.map(|v| v + rng.random_range(-0.2..0.2));
            let sol = solve(
                &chain,
                &target,
                &seed,
                IkWeights::default(),
                OrientationMask::NONE,
                &NewtonSettings::default(),
            );
            assert!(sol.position_error < 1e-4, "error {}", sol.position_error);
        }
    }

    #[test]
    fn unreachable_target_is_best_effort() {
        let chain = planar_2r();
        let seed = JointVector::from_vec(vec![0.3, 0.3]);
        let target = Pose::from_translation(10.0, 0.0, 0.0);
        let sol = solve(
            &chain,
            &target,
            &seed,
            IkWeights::default(),
            OrientationMask::NONE,
            &NewtonSettings {
                max_steps: 50,
                ..Default::default()
            },
        );
        assert!(sol.q.iter().all(|v| v.is_finite()));
        assert!((sol.position_error - 9.0).abs() < 0.05, "error {}", sol.position_error);
        for (v, (lo, hi)) in sol.q.iter().zip(chain.limits()) {
            assert!(*v <= hi + LIMIT_MARGIN && *v >= lo - LIMIT_MARGIN);
        }
    }

    #[test]
    fn energy_trace_is_monotone() {
        let chain = bundled_chain("redundant7").unwrap();
        let seed = chain.rest_pose();
        let target = Pose::from_translation(0.3, 0.2, 0.4);
        let mut trace = Vec::new();
        solve_traced(
            &chain,
            &target,
            &seed,
            IkWeights::default(),
            OrientationMask::X,
            &NewtonSettings::default(),
            &mut trace,
        );
        assert!(trace.len() > 1);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn solve_is_deterministic() {
        let chain = bundled_chain("ur5_like").unwrap();
        let seed = chain.rest_pose();
        let target = Pose::new(Vector3::new(0.3, 0.3, 0.3), axis_angle(&Vector3::y(), 1.0));
        let a = solve(
            &chain,
            &target,
            &seed,
            IkWeights::default(),
            OrientationMask::X,
            &NewtonSettings::default(),
        );
        let b = solve(
            &chain,
            &target,
            &seed,
            IkWeights::default(),
            OrientationMask::X,
            &NewtonSettings::default(),
        );
        assert_eq!(a, b);
    }
}
