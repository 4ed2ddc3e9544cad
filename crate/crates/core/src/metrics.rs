//! Per-tick tracking metrics and pooled summaries.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{JointVector, KinematicChain};
use crate::manipulability::manipulability_at;
use crate::pose::Pose;

pub const CSV_HEADER: &str = "t,arm,pos_err_m,manip,vel,acc,jerk";

/// Backward differences over `[q0, q1, q2, q3]`, newest first.
/// Returns Euclidean norms of velocity, acceleration and jerk.
pub fn finite_diff_derivatives(window: [&JointVector; 4], dt: f64) -> (f64, f64, f64) {
    let [q0, q1, q2, q3] = window;
    let d1 = q0 - q1;
    let d2 = q1 - q2;
    let d3 = q2 - q3;
    let vel = &d1 / dt;
    let acc = (&d1 - &d2) / (dt * dt);
    let jerk = ((&d1 - &d2) - (&d2 - &d3)) / (dt * dt * dt);
    (vel.norm(), acc.norm(), jerk.norm())
}

/// The last four joint vectors of one arm.
#[derive(Clone, Debug, Default)]
pub struct JointHistory {
    window: VecDeque<JointVector>,
}

impl JointHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, q: JointVector) {
        if self.window.len() == 4 {
            self.window.pop_back();
        }
        self.window.push_front(q);
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    /// Per-joint velocity plus the three norms; zeros until four samples
    /// have been pushed.
    pub fn derivatives(&self, dt: f64) -> (Vec<f64>, f64, f64, f64) {
        if self.window.len() < 4 {
            let n = self.window.front().map_or(0, |q| q.len());
            return (vec![0.0; n], 0.0, 0.0, 0.0);
        }
        let w = [&self.window[0], &self.window[1], &self.window[2], &self.window[3]];
        let per_joint = ((w[0] - w[1]) / dt).iter().copied().collect();
        let (v, a, j) = finite_diff_derivatives(w, dt);
        (per_joint, v, a, j)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmMetrics {
    pub position_error: f64,
    pub manipulability: f64,
    pub joint_velocity: f64,
    pub joint_velocities: Vec<f64>,
    pub joint_acceleration: f64,
    pub joint_jerk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFrame {
    pub t: f64,
    pub arms: Vec<ArmMetrics>,
}

impl MetricsFrame {
    /// Appends one CSV row per arm.
    pub fn write_csv_rows(&self, arm_ids: &[String], out: &mut String) {
        for (id, a) in arm_ids.iter().zip(&self.arms) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.t, id, a.position_error, a.manipulability, a.joint_velocity, a.joint_acceleration, a.joint_jerk
            );
        }
    }
}

/// Builds one frame. `histories` must already contain this tick's solved q.
pub fn frame_metrics(
    t: f64,
    chains: &[&KinematicChain],
    targets: &[Pose],
    solutions: &[&JointVector],
    histories: &[JointHistory],
    dt: f64,
) -> MetricsFrame {
    assert_eq!(chains.len(), solutions.len(), "one solution per arm");
    let arms = chains
        .iter()
        .zip(targets)
        .zip(solutions)
        .zip(histories)
        .map(|(((chain, target), q), hist)| {
            let ee = chain.forward_kinematics(q.as_slice());
            let (joint_velocities, v, a, j) = hist.derivatives(dt);
            ArmMetrics {
                position_error: (ee.position - target.position).norm(),
                manipulability: manipulability_at(chain, q),
                joint_velocity: v,
                joint_velocities,
                joint_acceleration: a,
                joint_jerk: j,
            }
        })
        .collect();
    MetricsFrame { t, arms }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and population standard deviation.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Stat> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Stat { mean, std: var.sqrt() })
    }
}

/// One row of a summary table. Position in mm, jerk in 1e-3 rad/s³.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub frames: usize,
    pub position_error_mm: Stat,
    pub joint_velocity: Stat,
    pub joint_acceleration: Stat,
    pub joint_jerk_milli: Stat,
    pub manipulability: Stat,
    pub min_manipulability: f64,
}

pub fn summarize(label: impl Into<String>, frames: &[MetricsFrame]) -> Result<SummaryRow> {
    let all = || frames.iter().flat_map(|f| f.arms.iter());
    let pos = Stat::of(all().map(|a| a.position_error * 1e3)).ok_or(Error::Empty)?;
    Ok(SummaryRow {
        label: label.into(),
        frames: frames.len(),
        position_error_mm: pos,
        joint_velocity: Stat::of(all().map(|a| a.joint_velocity)).unwrap(),
        joint_acceleration: Stat::of(all().map(|a| a.joint_acceleration)).unwrap(),
        joint_jerk_milli: Stat::of(all().map(|a| a.joint_jerk * 1e-3)).unwrap(),
        manipulability: Stat::of(all().map(|a| a.manipulability)).unwrap(),
        min_manipulability: all().map(|a| a.manipulability).fold(f64::INFINITY, f64::min),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub title: String,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            rows: Vec::new(),
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        if !self.title.is_empty() {
            let _ = writeln!(s, "{}\n", self.title);
        }
        s.push_str("| setup | pos. error (mm) | vel. (rad/s) | acc. (rad/s²) | jerk (10⁻³ rad/s³) | m(q) |\n");
        s.push_str("|---|---|---|---|---|---|\n");
        let f = |st: &Stat, p: usize| format!("{:.p$} ± {:.p$}", st.mean, st.std, p = p);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                r.label,
                f(&r.position_error_mm, 4),
                f(&r.joint_velocity, 4),
                f(&r.joint_acceleration, 3),
                f(&r.joint_jerk_milli, 3),
                f(&r.manipulability, 4),
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::JointDescriptor;
    use nalgebra::{DVector, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dv(x: &[f64]) -> JointVector {
        DVector::from_column_slice(x)
    }

    #[test]
    fn constant_window_is_still() {
        let q = dv(&[0.3, -1.0]);
        assert_eq!(finite_diff_derivatives([&q, &q, &q, &q], 0.01), (0.0, 0.0, 0.0));
    }

    #[test]
    fn linear_ramp() {
        let a = [0.5, -1.25];
        let dt = 0.25;
        let q = |k: f64| dv(&[a[0] * k * dt, a[1] * k * dt]);
        let (v, acc, j) = finite_diff_derivatives([&q(3.0), &q(2.0), &q(1.0), &q(0.0)], dt);
        assert!((v - (a[0].hypot(a[1]))).abs() < 1e-12);
        assert_eq!(acc, 0.0);
        assert_eq!(j, 0.0);
    }

    #[test]
    fn cubic_jerk() {
        let dt = 0.01;
        let q = |k: f64| dv(&[(k * dt).powi(3)]);
        let (_, _, j) = finite_diff_derivatives([&q(10.0), &q(9.0), &q(8.0), &q(7.0)], dt);
        assert!((j - 6.0).abs() < 1e-6, "{j}");
    }

    #[test]
    fn history_emits_zeros_until_full() {
        let mut h = JointHistory::new();
        for k in 0..3 {
            h.push(dv(&[k as f64]));
            assert_eq!(h.derivatives(0.1).1, 0.0);
        }
        h.push(dv(&[3.0]));
        let (per, v, _, _) = h.derivatives(0.1);
        assert!((v - 10.0).abs() < 1e-12);
        assert!((per[0] - 10.0).abs() < 1e-12);
        h.push(dv(&[4.0]));
        assert_eq!(h.len(), 4);
    }

    fn planar() -> KinematicChain {
        let j = |x: f64| JointDescriptor::revolute(Pose::from_translation(x, 0.0, 0.0), Vector3::z());
        KinematicChain::new(
            Pose::identity(),
            vec![j(0.0), j(1.0)],
            Pose::from_translation(1.0, 0.0, 0.0),
        )
        .unwrap()
    }

    #[test]
    fn frame_position_error_and_singularity() {
        let chain = planar();
        let q = dv(&[0.0, 0.0]);
        let ee = chain.forward_kinematics(q.as_slice());
        let displaced = Pose::new(ee.position + Vector3::new(0.0, 0.001, 0.0), ee.orientation);
        let mut h = JointHistory::new();
        h.push(q.clone());
        let f = frame_metrics(0.0, &[&chain], &[displaced], &[&q], &[h.clone()], 0.01);
        assert!((f.arms[0].position_error - 0.001).abs() < 1e-15);
        assert!(f.arms[0].manipulability.abs() < 1e-9);
        let f = frame_metrics(0.0, &[&chain], &[ee], &[&q], &[h], 0.01);
        assert_eq!(f.arms[0].position_error, 0.0);
    }

    fn arm(pos: f64, m: f64) -> ArmMetrics {
        ArmMetrics {
            position_error: pos,
            manipulability: m,
            joint_velocity: 0.0,
            joint_velocities: vec![],
            joint_acceleration: 0.0,
            joint_jerk: 0.0,
        }
    }

    #[test]
    fn two_point_stats() {
        let frames = vec![
            MetricsFrame {
                t: 0.0,
                arms: vec![arm(0.001, 0.1)],
            },
            MetricsFrame {
                t: 0.01,
                arms: vec![arm(0.003, 0.1)],
            },
        ];
        let row = summarize("x", &frames).unwrap();
        assert!((row.position_error_mm.mean - 2.0).abs() < 1e-12);
        assert!((row.position_error_mm.std - 1.0).abs() < 1e-12);
        let single = summarize("x", &frames[..1]).unwrap();
        assert_eq!(single.position_error_mm.std, 0.0);
        assert!(matches!(summarize("x", &[]), Err(Error::Empty)));
    }

    #[test]
    fn pooled_stats_match_flat_list_and_ignore_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut frames: Vec<MetricsFrame> = (0..200)
            .map(|k| MetricsFrame {
                t: k as f64,
                arms: (0..3).map(|_| arm(rng.random::<f64>() * 1e-3, rng.random())).collect(),
            })
            .collect();
        let flat: Vec<f64> = frames
            .iter()
            .flat_map(|f| f.arms.iter().map(|a| a.manipulability))
            .collect();
        let mean = flat.iter().sum::<f64>() / flat.len() as f64;
        let std = (flat.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / flat.len() as f64).sqrt();
        let row = summarize("r", &frames).unwrap();
        assert!((row.manipulability.mean - mean).abs() < 1e-12);
        assert!((row.manipulability.std - std).abs() < 1e-12);
        frames.reverse();
        let rev = summarize("r", &frames).unwrap();
        assert!((rev.manipulability.mean - mean).abs() < 1e-12);
        assert!((rev.position_error_mm.std - row.position_error_mm.std).abs() < 1e-12);
    }

    #[test]
    fn csv_rows() {
        let f = MetricsFrame {
            t: 0.5,
            arms: vec![arm(0.25, 0.5)],
        };
        let mut s = String::new();
        f.write_csv_rows(&["a".into()], &mut s);
        assert_eq!(s, "0.5,a,0.25,0.5,0,0,0\n");
    }
}
