//! Payload, handles and arm placements.
//!
//! Handle frames sit on the payload equator at `radius + standoff` from the
//! center. The x-axis runs along the handle bar (tangent to the equator and
//! parallel to the floor), the z-axis points away from the payload center
//! toward the arm that grasps it. The x-axis is the released rotation axis.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ik::{self, IkWeights, NewtonSettings, OrientationMask};
use crate::kinematics::{bundled_chain, load_chain_file, JointVector, KinematicChain, PoseDocument};
use crate::manipulability::ManipSettings;
use crate::pose::Pose;

/// Distance between the payload surface and the handle bar (m).
pub const HANDLE_STANDOFF: f64 = 0.05;

/// Largest initial grasp position error accepted by [`build_scene`] (m).
pub const MAX_INITIAL_GRASP_ERROR: f64 = 0.005;

#[derive(Clone, Debug, PartialEq)]
pub struct HandleSpec {
    pub arm_id: String,
    /// Payload frame → handle grasp frame.
    pub local_pose: Pose,
}

impl HandleSpec {
    /// Handle on the equator at `azimuth` (rad, payload frame), facing out.
    pub fn on_equator(arm_id: impl Into<String>, radius: f64, azimuth: f64) -> Self {
        let (s, c) = azimuth.sin_cos();
        let x = Vector3::new(-s, c, 0.0);
        let z = Vector3::new(c, s, 0.0);
        let y = z.cross(&x);
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
        Self {
            arm_id: arm_id.into(),
            local_pose: Pose::new(
                z * (radius + HANDLE_STANDOFF),
                UnitQuaternion::from_rotation_matrix(&rot),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PayloadModel {
    pub radius: f64,
    pub handles: Vec<HandleSpec>,
}

/// Grasp targets for every handle, in handle order.
pub fn handle_targets(payload_pose: &Pose, payload: &PayloadModel) -> Vec<(String, Pose)> {
    payload
        .handles
        .iter()
        .map(|h| (h.arm_id.clone(), payload_pose.compose(&h.local_pose)))
        .collect()
}

#[derive(Clone, Debug)]
pub struct Arm {
    pub id: String,
    pub mount: Pose,
    /// Chain already mounted at its world placement.
    pub chain: KinematicChain,
    pub rest_pose: JointVector,
    /// Rest pose solved against the payload start pose.
    pub initial_seed: JointVector,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub name: String,
    pub arms: Vec<Arm>,
    pub payload: PayloadModel,
    pub payload_start: Pose,
    /// Nudge settings suited to this robot set.
    pub manip: ManipSettings,
}

impl Scene {
    pub fn handle_targets(&self, payload_pose: &Pose) -> Vec<Pose> {
        handle_targets(payload_pose, &self.payload)
            .into_iter()
            .map(|(_, p)| p)
            .collect()
    }

    /// Solves every arm's rest pose against the handle targets at
    /// `payload_pose` with a fully constrained orientation.
    pub fn solve_initial_seeds(
        &self,
        payload_pose: &Pose,
        weights: IkWeights,
        newton: &NewtonSettings,
    ) -> Result<Vec<JointVector>> {
        self.arms
            .iter()
            .zip(self.handle_targets(payload_pose))
            .map(|(arm, target)| {
                let (q, err) = settle(&arm.chain, &target, &arm.rest_pose, weights, newton);
                if err > MAX_INITIAL_GRASP_ERROR {
                    return Err(Error::Setup(format!(
                        "arm `{}` cannot reach its handle: initial position error {:.1} mm",
                        arm.id,
                        err * 1e3
                    )));
                }
                Ok(q)
            })
            .collect()
    }
}

impl Scene {
    /// Settles every arm from its scene grasp onto the handle targets at
    /// `payload_pose` with a fully constrained orientation. Unlike
    /// [`Scene::solve_initial_seeds`] this never fails; unreachable
    /// targets simply leave a residual.
    pub fn settle_seeds(&self, payload_pose: &Pose, weights: IkWeights, newton: &NewtonSettings) -> Vec<JointVector> {
        self.arms
            .iter()
            .zip(self.handle_targets(payload_pose))
            .map(|(arm, target)| settle(&arm.chain, &target, &arm.initial_seed, weights, newton).0)
            .collect()
    }
}

/// Repeated solves, each re-seeded from the last, so the regularizer does
/// not hold the result back toward the rest pose.
fn settle(
    chain: &KinematicChain,
    target: &Pose,
    rest: &JointVector,
    weights: IkWeights,
    newton: &NewtonSettings,
) -> (JointVector, f64) {
    let mut q = rest.clone();
    let mut err = f64::INFINITY;
    for _ in 0..50 {
        let sol = ik::solve(chain, target, &q, weights, OrientationMask::NONE, newton);
        let moved = (&sol.q - &q).amax();
        q = sol.q;
        err = sol.position_error;
        if sol.converged && moved < 1e-9 {
            break;
        }
    }
    (q, err)
}

/// One arm entry of a scene description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub id: String,
    /// Bundled chain name or a path relative to the scene file.
    pub chain: String,
    /// Pose of the chain's base, in the mount frame.
    pub base: PoseDocument,
    /// World pose of whatever carries the arm (a torso, a table). Identity
    /// when unset.
    #[serde(default)]
    pub mount: Option<PoseDocument>,
    #[serde(default)]
    pub rest_pose: Option<Vec<f64>>,
    /// Handle azimuth in the payload frame (rad). Defaults to the direction
    /// from the payload start toward the arm base.
    #[serde(default)]
    pub handle_azimuth: Option<f64>,
}

/// Scene description (TOML, `.scene` files).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "default_scene_name")]
    pub name: String,
    #[serde(default = "default_radius")]
    pub payload_radius: f64,
    pub payload_start: PoseDocument,
    #[serde(default)]
    pub manip: ManipSettings,
    pub arms: Vec<ArmConfig>,
}

fn default_scene_name() -> String {
    "scene".into()
}

fn default_radius() -> f64 {
    0.15
}

fn resolve_chain(spec: &str, base_dir: Option<&Path>) -> Result<KinematicChain> {
    if let Some(chain) = bundled_chain(spec) {
        return Ok(chain);
    }
    let path = match base_dir {
        Some(dir) => dir.join(spec),
        None => PathBuf::from(spec),
    };
    if !path.exists() {
        return Err(Error::Setup(format!("chain file `{}` not found", path.display())));
    }
    load_chain_file(&path)
}

pub fn build_scene(config: &SceneConfig, base_dir: Option<&Path>) -> Result<Scene> {
    if config.arms.is_empty() {
        return Err(Error::validation("scene", "at least one arm is required"));
    }
    if config.payload_radius.is_nan() || config.payload_radius <= 0.0 {
        return Err(Error::validation("scene", "payload_radius must be positive"));
    }
    let payload_start = config.payload_start.to_pose("scene payload_start")?;

    let mut arms = Vec::with_capacity(config.arms.len());
    let mut handles = Vec::with_capacity(config.arms.len());
    for arm in &config.arms {
        let mount = match &arm.mount {
            Some(m) => m.to_pose(&format!("arm `{}` mount", arm.id))?,
            None => Pose::identity(),
        };
        let placement = mount * arm.base.to_pose(&format!("arm `{}` base", arm.id))?;
        let chain = resolve_chain(&arm.chain, base_dir)?.placed_at(&placement);
        let rest_pose = match &arm.rest_pose {
            Some(r) if r.len() == chain.dof() => JointVector::from_column_slice(r),
            Some(r) => {
                return Err(Error::validation(
                    format!("arm `{}`", arm.id),
                    format!("rest_pose has {} entries, chain has {} joints", r.len(), chain.dof()),
                ))
            }
            None => chain.rest_pose(),
        };
        let azimuth = arm.handle_azimuth.unwrap_or_else(|| {
            let d = payload_start.inverse().transform_point(&placement.position);
            d.y.atan2(d.x)
        });
        handles.push(HandleSpec::on_equator(arm.id.clone(), config.payload_radius, azimuth));
        arms.push(Arm {
            id: arm.id.clone(),
            mount,
            initial_seed: rest_pose.clone(),
            rest_pose,
            chain,
        });
    }

    let mut scene = Scene {
        name: config.name.clone(),
        arms,
        payload: PayloadModel {
            radius: config.payload_radius,
            handles,
        },
        payload_start,
        manip: config.manip,
    };
    let seeds = scene.solve_initial_seeds(&payload_start, IkWeights::default(), &NewtonSettings::default())?;
    for (arm, seed) in scene.arms.iter_mut().zip(seeds) {
        arm.initial_seed = seed;
    }
    Ok(scene)
}

pub fn parse_scene(text: &str) -> Result<SceneConfig> {
    toml::from_str(text).map_err(|e| Error::parse("scene description", e))
}

pub fn load_scene_file(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    build_scene(&parse_scene(&text)?, path.parent())
}

pub const UR5_TRIPLE: &str = include_str!("../data/ur5_triple.scene");
pub const YUMI_DUAL: &str = include_str!("../data/yumi_dual.scene");

/// Bundled scene descriptions by preset name.
pub fn preset_config(name: &str) -> Option<SceneConfig> {
    let text = match name.trim_end_matches(".scene") {
        "ur5_triple" => UR5_TRIPLE,
        "yumi_dual" => YUMI_DUAL,
        _ => return None,
    };
    Some(parse_scene(text).expect("bundled scene descriptions parse"))
}

pub fn preset(name: &str) -> Result<Scene> {
    let config = preset_config(name).ok_or_else(|| Error::Config(format!("unknown scene preset `{name}`")))?;
    build_scene(&config, None)
}

/// Loads a preset by name, or a scene file by path.
pub fn resolve_scene(spec: &str, base_dir: Option<&Path>) -> Result<Scene> {
    if preset_config(spec).is_some() {
        return preset(spec);
    }
    let path = match base_dir {
        Some(dir) => dir.join(spec),
        None => PathBuf::from(spec),
    };
    load_scene_file(path)
}
