//! Serial revolute chains: description loading, forward kinematics and the
//! world-frame geometric Jacobian.
//!
//! A chain is stored as a list of joints, each with a fixed offset from the
//! previous frame and a rotation axis in its own frame:
//!
//! ```text
//! K(q) = base ∘ offset_1 ∘ rot(axis_1, q_1) ∘ … ∘ offset_n ∘ rot(axis_n, q_n) ∘ tool
//! ```
//!
//! Jacobian rows 0–2 are linear velocity of the end-effector origin, rows 3–5
//! angular velocity, both in world coordinates.

use std::path::Path;

use nalgebra::{DVector, Dyn, OMatrix, Unit, UnitQuaternion, Vector3, U6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Pose;

/// Joint angles in radians, one per chain joint.
pub type JointVector = DVector<f64>;

/// 6×dof world-frame geometric Jacobian.
pub type Jacobian = OMatrix<f64, U6, Dyn>;

const AXIS_UNIT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct JointDescriptor {
    pub parent_offset: Pose,
    pub axis: Unit<Vector3<f64>>,
    pub limit_min: f64,
    pub limit_max: f64,
}

impl JointDescriptor {
    pub fn new(parent_offset: Pose, axis: Vector3<f64>, limit_min: f64, limit_max: f64) -> Result<Self> {
        let norm = axis.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > AXIS_UNIT_TOL {
            return Err(Error::validation(
                "joint",
                format!("axis {:?} is not a unit vector (norm {norm})", axis.as_slice()),
            ));
        }
        if !(limit_min.is_finite() && limit_max.is_finite()) || limit_min >= limit_max {
            return Err(Error::validation(
                "joint",
                format!("limit_min ({limit_min}) must be below limit_max ({limit_max})"),
            ));
        }
        Ok(Self {
            parent_offset,
            axis: Unit::new_unchecked(axis),
            limit_min,
            limit_max,
        })
    }

    /// Revolute joint with no offset and symmetric ±π limits.
    pub fn revolute(parent_offset: Pose, axis: Vector3<f64>) -> Self {
        Self::new(parent_offset, axis, -std::f64::consts::PI, std::f64::consts::PI)
            .expect("revolute() requires a unit axis")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KinematicChain {
    name: String,
    base_pose: Pose,
    joints: Vec<JointDescriptor>,
    tool_offset: Pose,
    rest_pose: Option<JointVector>,
}

impl KinematicChain {
    pub fn new(base_pose: Pose, joints: Vec<JointDescriptor>, tool_offset: Pose) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::validation("chain", "a chain needs at least one joint"));
        }
        Ok(Self {
            name: String::from("chain"),
            base_pose,
            joints,
            tool_offset,
            rest_pose: None,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_rest_pose(mut self, rest: JointVector) -> Result<Self> {
        if rest.len() != self.dof() {
            return Err(Error::validation(
                "chain",
                format!("rest_pose has {} entries, chain has {} joints", rest.len(), self.dof()),
            ));
        }
        self.rest_pose = Some(rest);
        Ok(self)
    }

    /// Returns the same chain mounted at `placement` in the world.
    pub fn placed_at(&self, placement: &Pose) -> Self {
        let mut out = self.clone();
        out.base_pose = placement.compose(&self.base_pose);
        out
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn base_pose(&self) -> &Pose {
        &self.base_pose
    }

    pub fn joints(&self) -> &[JointDescriptor] {
        &self.joints
    }

    pub fn tool_offset(&self) -> &Pose {
        &self.tool_offset
    }

    /// Rest pose from the description, or all zeros.
    pub fn rest_pose(&self) -> JointVector {
        self.rest_pose.clone().unwrap_or_else(|| JointVector::zeros(self.dof()))
    }

    pub fn limits(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.joints.iter().map(|j| (j.limit_min, j.limit_max))
    }

    fn check_len(&self, q: &[f64]) {
        assert_eq!(
            q.len(),
            self.dof(),
            "joint vector has {} entries, chain `{}` has {} joints",
            q.len(),
            self.name,
            self.dof()
        );
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> Pose {
        self.check_len(q);
        let mut frame = self.base_pose;
        for (joint, &angle) in self.joints.iter().zip(q) {
            frame = frame
                .compose(&joint.parent_offset)
                .compose(&Pose::from_rotation(UnitQuaternion::from_axis_angle(
                    &joint.axis,
                    angle,
                )));
        }
        frame.compose(&self.tool_offset)
    }

    /// World frames of each joint after its rotation, followed by the
    /// end-effector frame. Length is `dof + 1`.
    pub fn link_frames(&self, q: &[f64]) -> Vec<Pose> {
        self.check_len(q);
        let mut frames = Vec::with_capacity(self.dof() + 1);
        let mut frame = self.base_pose;
        for (joint, &angle) in self.joints.iter().zip(q) {
            frame = frame
                .compose(&joint.parent_offset)
                .compose(&Pose::from_rotation(UnitQuaternion::from_axis_angle(
                    &joint.axis,
                    angle,
                )));
            frames.push(frame);
        }
        frames.push(frame.compose(&self.tool_offset));
        frames
    }

    pub fn geometric_jacobian(&self, q: &[f64]) -> Jacobian {
        self.fk_with_jacobian(q).1
    }

    /// Forward kinematics and Jacobian from a single pass over the chain.
    pub fn fk_with_jacobian(&self, q: &[f64]) -> (Pose, Jacobian) {
        self.check_len(q);
        let n = self.dof();
        let mut origins = Vec::with_capacity(n);
        let mut axes = Vec::with_capacity(n);
        let mut frame = self.base_pose;
        for (joint, &angle) in self.joints.iter().zip(q) {
            frame = frame.compose(&joint.parent_offset);
            origins.push(frame.position);
            axes.push(frame.orientation * joint.axis.into_inner());
            frame = frame.compose(&Pose::from_rotation(UnitQuaternion::from_axis_angle(
                &joint.axis,
                angle,
            )));
        }
        let ee = frame.compose(&self.tool_offset);

        let mut jac = Jacobian::zeros(n);
        for (i, (origin, z)) in origins.iter().zip(&axes).enumerate() {
            let linear = z.cross(&(ee.position - origin));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&linear);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(z);
        }
        (ee, jac)
    }

    /// Splits into a prefix of `at` joints (identity tool) and the remaining
    /// suffix rooted at the identity (original tool). Requires `0 < at < dof`.
    pub fn split_at(&self, at: usize) -> (KinematicChain, KinematicChain) {
        assert!(
            at > 0 && at < self.dof(),
            "split point must leave both halves non-empty"
        );
        let prefix = KinematicChain {
            name: format!("{}[..{at}]", self.name),
            base_pose: self.base_pose,
            joints: self.joints[..at].to_vec(),
            tool_offset: Pose::identity(),
            rest_pose: None,
        };
        let suffix = KinematicChain {
            name: format!("{}[{at}..]", self.name),
            base_pose: Pose::identity(),
            joints: self.joints[at..].to_vec(),
            tool_offset: self.tool_offset,
            rest_pose: None,
        };
        (prefix, suffix)
    }

    /// Clamps each entry of `q` into the joint limits.
    pub fn clamp_to_limits(&self, q: &mut JointVector) {
        for (v, j) in q.iter_mut().zip(&self.joints) {
            *v = v.clamp(j.limit_min, j.limit_max);
        }
    }

    pub fn to_document(&self) -> ChainDocument {
        ChainDocument {
            name: Some(self.name.clone()),
            base_pose: PoseDocument::from(&self.base_pose),
            joints: self
                .joints
                .iter()
                .map(|j| JointDocument {
                    offset_position: j.parent_offset.position_array(),
                    offset_quaternion: j.parent_offset.quaternion_wxyz(),
                    axis: [j.axis.x, j.axis.y, j.axis.z],
                    limit_min: j.limit_min,
                    limit_max: j.limit_max,
                })
                .collect(),
            tool_offset: PoseDocument::from(&self.tool_offset),
            rest_pose: self.rest_pose.as_ref().map(|r| r.iter().copied().collect()),
        }
    }
}

/// On-disk pose: position in meters, quaternion as `[w, x, y, z]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDocument {
    pub position: [f64; 3],
    pub quaternion: [f64; 4],
}

impl Default for PoseDocument {
    fn default() -> Self {
        Self {
            position: [0.0; 3],
            quaternion: [1.0, 0.0, 0.0, 0.0],
        }
    }
}

impl From<&Pose> for PoseDocument {
    fn from(p: &Pose) -> Self {
        Self {
            position: p.position_array(),
            quaternion: p.quaternion_wxyz(),
        }
    }
}

impl PoseDocument {
    pub fn to_pose(&self, what: &str) -> Result<Pose> {
        Pose::from_arrays(self.position, self.quaternion)
            .ok_or_else(|| Error::validation(what, "pose must be finite with a non-zero quaternion"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDocument {
    #[serde(default)]
    pub offset_position: [f64; 3],
    #[serde(default = "identity_wxyz")]
    pub offset_quaternion: [f64; 4],
    pub axis: [f64; 3],
    pub limit_min: f64,
    pub limit_max: f64,
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

/// Serialized form of a [`KinematicChain`] (TOML, `.chain` files).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainDocument {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub base_pose: PoseDocument,
    pub joints: Vec<JointDocument>,
    #[serde(default)]
    pub tool_offset: PoseDocument,
    #[serde(default)]
    pub rest_pose: Option<Vec<f64>>,
}

impl ChainDocument {
    pub fn build(&self) -> Result<KinematicChain> {
        let base = self.base_pose.to_pose("chain base_pose")?;
        let tool = self.tool_offset.to_pose("chain tool_offset")?;
        let joints = self
            .joints
            .iter()
            .enumerate()
            .map(|(i, j)| {
                let offset = Pose::from_arrays(j.offset_position, j.offset_quaternion).ok_or_else(|| {
                    Error::validation(format!("joint {i}"), "offset must be finite with a non-zero quaternion")
                })?;
                JointDescriptor::new(offset, Vector3::from(j.axis), j.limit_min, j.limit_max).map_err(|e| match e {
                    Error::Validation { message, .. } => Error::validation(format!("joint {i}"), message),
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut chain = KinematicChain::new(base, joints, tool)?;
        if let Some(name) = &self.name {
            chain = chain.with_name(name.clone());
        }
        if let Some(rest) = &self.rest_pose {
            chain = chain.with_rest_pose(JointVector::from_column_slice(rest))?;
        }
        Ok(chain)
    }
}

/// Parses a chain description document.
pub fn load_chain(text: &str) -> Result<KinematicChain> {
    let doc: ChainDocument = toml::from_str(text).map_err(|e| Error::parse("chain description", e))?;
    doc.build()
}

pub fn load_chain_file(path: impl AsRef<Path>) -> Result<KinematicChain> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let chain = load_chain(&text)?;
    if chain.name == "chain" {
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            return Ok(chain.with_name(stem));
        }
    }
    Ok(chain)
}

pub const UR5_LIKE: &str = include_str!("../data/ur5_like.chain");
pub const REDUNDANT7: &str = include_str!("../data/redundant7.chain");

/// Looks up a bundled chain by name (`ur5_like` or `redundant7`, with or
/// without the `.chain` extension).
pub fn bundled_chain(name: &str) -> Option<KinematicChain> {
    let text = match name.trim_end_matches(".chain") {
        "ur5_like" => UR5_LIKE,
        "redundant7" => REDUNDANT7,
        _ => return None,
    };
    Some(load_chain(text).expect("bundled chain descriptions are valid"))
}
