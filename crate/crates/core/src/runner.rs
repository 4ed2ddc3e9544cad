//! Scenario orchestration: trajectory → per-arm IK → optional nudge → metrics.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ik::{self, IkSolution, IkWeights, NewtonSettings, OrientationMask};
use crate::kinematics::{JointVector, KinematicChain};
use crate::manipulability::{nudge_candidates, select_seed, FreeAxisState, ManipSettings};
use crate::metrics::{self, frame_metrics, JointHistory, MetricsFrame, Stat, SummaryRow, CSV_HEADER};
use crate::pose::{twist_angle, Pose};
use crate::scene::{self, Scene};
use crate::trajectories::{load_recording_file, CircleParams, SquareParams, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Fully constrained orientation.
    A,
    /// Rotation about the handle x axis released.
    B,
    /// As B, plus manipulability nudging of the next seed.
    C,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::A, Scenario::B, Scenario::C];

    pub fn mask(self) -> OrientationMask {
        match self {
            Scenario::A => OrientationMask::NONE,
            Scenario::B | Scenario::C => OrientationMask::X,
        }
    }

    pub fn nudges(self) -> bool {
        self == Scenario::C
    }

    pub fn label(self) -> &'static str {
        match self {
            Scenario::A => "A",
            Scenario::B => "B",
            Scenario::C => "C",
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Scenario::A),
            "B" => Ok(Scenario::B),
            "C" => Ok(Scenario::C),
            other => Err(Error::Config(format!(
                "unknown scenario `{other}` (expected A, B or C)"
            ))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Solver and nudge settings for one run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSettings {
    pub scenario: Scenario,
    pub tick_rate: f64,
    pub weights: IkWeights,
    pub newton: NewtonSettings,
    pub manip: ManipSettings,
}

impl RunSettings {
    pub fn new(scenario: Scenario, scene: &Scene) -> Self {
        Self {
            scenario,
            tick_rate: 100.0,
            weights: IkWeights::default(),
            newton: NewtonSettings::default(),
            manip: scene.manip,
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.tick_rate
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmTick {
    pub target: Pose,
    pub solution: IkSolution,
    /// Seed for the next tick.
    pub next_seed: JointVector,
    pub free_axis: FreeAxisState,
    /// `+1`/`-1` for an accepted nudge, `0` otherwise.
    pub nudge: i8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickResult {
    pub tick: u64,
    pub t: f64,
    pub arms: Vec<ArmTick>,
    pub frame: MetricsFrame,
}

/// Wall-clock cost of one tick.
#[derive(Clone, Copy, Debug, Default)]
pub struct TickTiming {
    pub total: Duration,
    pub nudge: Duration,
}

/// Per-arm tick state for one scene.
pub struct Runner {
    scene: Scene,
    settings: RunSettings,
    seeds: Vec<JointVector>,
    free_axis: Vec<FreeAxisState>,
    histories: Vec<JointHistory>,
    tick: u64,
    last_timing: TickTiming,
}

impl Runner {
    /// Seeds every arm by settling its scene grasp onto `initial_payload`.
    pub fn new(scene: Scene, settings: RunSettings, initial_payload: &Pose) -> Result<Self> {
        if !(settings.tick_rate > 0.0 && settings.tick_rate.is_finite()) {
            return Err(Error::Config(format!(
                "tick_rate must be positive, got {}",
                settings.tick_rate
            )));
        }
        let seeds = scene.settle_seeds(initial_payload, settings.weights, &settings.newton);
        let n = scene.arms.len();
        Ok(Self {
            scene,
            settings,
            seeds,
            free_axis: vec![FreeAxisState::default(); n],
            histories: vec![JointHistory::new(); n],
            tick: 0,
            last_timing: TickTiming::default(),
        })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn settings(&self) -> &RunSettings {
        &self.settings
    }

    pub fn seeds(&self) -> &[JointVector] {
        &self.seeds
    }

    pub fn free_axis(&self) -> &[FreeAxisState] {
        &self.free_axis
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    /// Time of the next tick.
    pub fn time(&self) -> f64 {
        self.tick as f64 / self.settings.tick_rate
    }

    pub fn last_timing(&self) -> TickTiming {
        self.last_timing
    }

    pub fn arm_ids(&self) -> Vec<String> {
        self.scene.arms.iter().map(|a| a.id.clone()).collect()
    }

    /// Advances one tick with the payload at `payload_pose`.
    pub fn step(&mut self, payload_pose: &Pose) -> TickResult {
        let started = Instant::now();
        let mut nudge_time = Duration::ZERO;
        let s = self.settings;
        let mask = s.scenario.mask();
        let t = self.time();
        let targets = self.scene.handle_targets(payload_pose);
        let mut arms = Vec::with_capacity(targets.len());
        for (i, (arm, target)) in self.scene.arms.iter().zip(&targets).enumerate() {
            let solution = ik::solve(&arm.chain, target, &self.seeds[i], s.weights, mask, &s.newton);
            let (next_seed, nudge) = if s.scenario.nudges() {
                let nudge_start = Instant::now();
                let axis = target.x_axis();
                let (qp, qm) =
                    nudge_candidates(&arm.chain, &solution.q, &axis, s.manip.delta_t, s.manip.damping_lambda);
                let choice = select_seed(&arm.chain, &solution.q, &qp, &qm, &s.manip, self.free_axis[i]);
                self.free_axis[i] = choice.state;
                nudge_time += nudge_start.elapsed();
                (choice.seed, choice.direction)
            } else {
                (solution.q.clone(), 0)
            };
            self.histories[i].push(solution.q.clone());
            self.seeds[i] = next_seed.clone();
            arms.push(ArmTick {
                target: *target,
                solution,
                next_seed,
                free_axis: self.free_axis[i],
                nudge,
            });
        }
        let chains: Vec<&KinematicChain> = self.scene.arms.iter().map(|a| &a.chain).collect();
        let qs: Vec<&JointVector> = arms.iter().map(|a| &a.solution.q).collect();
        let frame = frame_metrics(t, &chains, &targets, &qs, &self.histories, s.dt());
        let tick = self.tick;
        self.tick += 1;
        self.last_timing = TickTiming {
            total: started.elapsed(),
            nudge: nudge_time,
        };
        TickResult { tick, t, arms, frame }
    }
}

/// Rotation of the end effector about the handle x axis relative to
/// `target`, wrapped to `(-π, π]`.
pub fn free_axis_angle(chain: &KinematicChain, q: &JointVector, target: &Pose) -> f64 {
    let ee = chain.forward_kinematics(q.as_slice());
    let rel = target.orientation.inverse() * ee.orientation;
    twist_angle(&rel, &nalgebra::Vector3::x())
}

/// Overrides applied on top of the scene's nudge settings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManipOverrides {
    pub delta_t: Option<f64>,
    pub theta_m: Option<f64>,
    pub damping_lambda: Option<f64>,
    pub max_deviation: Option<f64>,
}

impl ManipOverrides {
    pub fn apply(&self, mut base: ManipSettings) -> ManipSettings {
        if let Some(v) = self.delta_t {
            base.delta_t = v;
        }
        if let Some(v) = self.theta_m {
            base.theta_m = v;
        }
        if let Some(v) = self.damping_lambda {
            base.damping_lambda = v;
        }
        if let Some(v) = self.max_deviation {
            base.max_deviation = v;
        }
        base
    }
}

/// Network settings for live mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveConfig {
    pub bind: String,
    pub pose_port: u16,
    pub state_port: u16,
    pub ws_port: Option<u16>,
    /// Where to record the session, if anywhere.
    pub record: Option<PathBuf>,
    /// Queue depth per state subscriber.
    pub queue_depth: usize,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            pose_port: 7401,
            state_port: 7402,
            ws_port: Some(7403),
            record: None,
            queue_depth: 64,
        }
    }
}

/// A run description, usually loaded from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Preset name or path to a `.scene` file.
    pub scene: String,
    /// `circle`, `square`, `live`, or a path to a `.traj` file.
    pub trajectory: String,
    pub tick_rate: f64,
    pub loops: u32,
    /// Run length in seconds; overrides `loops`.
    pub duration: Option<f64>,
    /// Exact tick count; overrides `duration` and `loops`.
    pub ticks: Option<u64>,
    pub weights: IkWeights,
    pub newton: NewtonSettings,
    pub manip: ManipOverrides,
    pub circle: CircleParams,
    pub square: SquareParams,
    pub out_dir: Option<PathBuf>,
    pub live: LiveConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::C,
            scene: "ur5_triple".into(),
            trajectory: "circle".into(),
            tick_rate: 100.0,
            loops: 3,
            duration: None,
            ticks: None,
            weights: IkWeights::default(),
            newton: NewtonSettings::default(),
            manip: ManipOverrides::default(),
            circle: CircleParams::default(),
            square: SquareParams::default(),
            out_dir: None,
            live: LiveConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tick_rate > 0.0 && self.tick_rate.is_finite()) {
            return Err(Error::Config(format!(
                "tick_rate must be positive, got {}",
                self.tick_rate
            )));
        }
        if let Some(d) = self.duration {
            if d.is_nan() || d < 0.0 {
                return Err(Error::Config(format!("duration must be non-negative, got {d}")));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn build_scene(&self, base_dir: Option<&Path>) -> Result<Scene> {
        scene::resolve_scene(&self.scene, base_dir)
    }

    pub fn run_settings(&self, scene: &Scene) -> RunSettings {
        RunSettings {
            scenario: self.scenario,
            tick_rate: self.tick_rate,
            weights: self.weights,
            newton: self.newton,
            manip: self.manip.apply(scene.manip),
        }
    }

    /// The batch pose source, anchored at the scene's payload start.
    pub fn build_trajectory(&self, scene: &Scene, base_dir: Option<&Path>) -> Result<Trajectory> {
        let start = scene.payload_start;
        match self.trajectory.as_str() {
            "circle" => Ok(Trajectory::Circle {
                params: self.circle,
                start,
            }),
            "square" => Ok(Trajectory::Square {
                params: self.square,
                start,
            }),
            "live" => Err(Error::Config(
                "trajectory `live` needs the teleop service, not a batch run".into(),
            )),
            path => {
                let p = Path::new(path);
                let p = match base_dir {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.to_path_buf(),
                };
                Ok(Trajectory::Playback(load_recording_file(p)?))
            }
        }
    }

    /// Number of ticks for the run.
    pub fn tick_count(&self, trajectory: &Trajectory) -> u64 {
        if let Some(n) = self.ticks {
            return n;
        }
        let duration = self.duration.unwrap_or_else(|| trajectory.duration(self.loops));
        match trajectory {
            // A recording covers [start, end] inclusive of its last sample.
            Trajectory::Playback(_) if self.duration.is_none() => (duration * self.tick_rate).round() as u64 + 1,
            _ => (duration * self.tick_rate).round() as u64,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    /// Per-tick wall clock, milliseconds.
    pub tick_ms: Stat,
    /// Nudge share of each tick, milliseconds.
    pub nudge_ms: Stat,
    pub max_tick_ms: f64,
}

impl TimingStats {
    pub fn from_samples(samples: &[TickTiming]) -> Self {
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        Self {
            tick_ms: Stat::of(samples.iter().map(|s| ms(s.total))).unwrap_or_default(),
            nudge_ms: Stat::of(samples.iter().map(|s| ms(s.nudge))).unwrap_or_default(),
            max_tick_ms: samples.iter().map(|s| ms(s.total)).fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub scenario: Scenario,
    pub summary: SummaryRow,
    pub csv: String,
    pub frames: Vec<MetricsFrame>,
    pub timing: TimingStats,
    /// Free-axis state per arm at the end of the run.
    pub free_axis: Vec<FreeAxisState>,
    /// Payload pose fed to each tick.
    pub poses: Vec<Pose>,
}

impl Report {
    /// Writes `metrics.csv` and `summary.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("metrics.csv");
        std::fs::write(&csv, &self.csv).map_err(|e| Error::io(&csv, e))?;
        let summary = dir.join("summary.json");
        let doc = serde_json::json!({
            "scenario": self.scenario,
            "summary": self.summary,
            "timing": self.timing,
        });
        let text = serde_json::to_string_pretty(&doc).expect("summary serializes");
        std::fs::write(&summary, text).map_err(|e| Error::io(&summary, e))
    }
}

/// Ticks `runner` through `poses`, returning the report.
pub fn run_poses(runner: &mut Runner, poses: &[Pose]) -> Result<Report> {
    if poses.is_empty() {
        return Err(Error::Empty);
    }
    let ids = runner.arm_ids();
    let mut csv = String::new();
    csv.push_str(CSV_HEADER);
    csv.push('\n');
    let mut frames = Vec::with_capacity(poses.len());
    let mut timings = Vec::with_capacity(poses.len());
    for pose in poses {
        let tick = runner.step(pose);
        timings.push(runner.last_timing());
        tick.frame.write_csv_rows(&ids, &mut csv);
        frames.push(tick.frame);
    }
    let scenario = runner.settings().scenario;
    let summary = metrics::summarize(format!("{} scenario {}", runner.scene().name, scenario), &frames)?;
    Ok(Report {
        scenario,
        summary,
        csv,
        frames,
        timing: TimingStats::from_samples(&timings),
        free_axis: runner.free_axis().to_vec(),
        poses: poses.to_vec(),
    })
}

/// Runs a batch scenario described by `config`. Relative paths resolve
/// against `base_dir`. Outputs are written when `out_dir` is set.
pub fn run_scenario(config: &ScenarioConfig, base_dir: Option<&Path>) -> Result<Report> {
    config.validate()?;
    let scene = config.build_scene(base_dir)?;
    let trajectory = config.build_trajectory(&scene, base_dir)?;
    let n = config.tick_count(&trajectory);
    if n == 0 {
        return Err(Error::Config("run has no ticks".into()));
    }
    let poses: Vec<Pose> = (0..n)
        .map(|k| trajectory.pose_at(k as f64 / config.tick_rate))
        .collect();
    let settings = config.run_settings(&scene);
    let mut runner = Runner::new(scene, settings, &poses[0])?;
    let report = run_poses(&mut runner, &poses)?;
    if let Some(dir) = &config.out_dir {
        let dir = match base_dir {
            Some(b) if dir.is_relative() => b.join(dir),
            _ => dir.clone(),
        };
        report.write_to(&dir)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(scenario: Scenario, ticks: u64) -> ScenarioConfig {
        ScenarioConfig {
            scenario,
            ticks: Some(ticks),
            ..Default::default()
        }
    }

    #[test]
    fn scenario_masks() {
        assert_eq!(Scenario::A.mask(), OrientationMask::NONE);
        assert_eq!(Scenario::B.mask(), OrientationMask::X);
        assert!(Scenario::C.nudges() && !Scenario::B.nudges());
        assert_eq!("b".parse::<Scenario>().unwrap(), Scenario::B);
        assert!("D".parse::<Scenario>().is_err());
    }

    #[test]
    fn stationary_payload_holds_fixed_point() {
        let scene = scene::preset("ur5_triple").unwrap();
        let start = scene.payload_start;
        let settings = RunSettings::new(Scenario::A, &scene);
        let mut runner = Runner::new(scene, settings, &start).unwrap();
        for _ in 0..100 {
            let tick = runner.step(&start);
            for a in &tick.frame.arms {
                assert!(a.position_error < 1e-6, "{}", a.position_error);
            }
        }
    }

    #[test]
    fn stationary_scenario_c_never_loses_manipulability() {
        let scene = scene::preset("ur5_triple").unwrap();
        let start = scene.payload_start;
        let theta = scene.manip.theta_m;
        let settings = RunSettings::new(Scenario::C, &scene);
        let mut runner = Runner::new(scene, settings, &start).unwrap();
        let mut prev: Option<Vec<f64>> = None;
        for _ in 0..150 {
            let tick = runner.step(&start);
            let m: Vec<f64> = tick.frame.arms.iter().map(|a| a.manipulability).collect();
            if let Some(p) = &prev {
                for (a, b) in p.iter().zip(&m) {
                    assert!(*b >= a - theta, "{a} -> {b}");
                }
            }
            prev = Some(m);
        }
    }

    #[test]
    fn infinite_threshold_reduces_c_to_b() {
        let mut c = short(Scenario::C, 150);
        c.manip.theta_m = Some(f64::INFINITY);
        let b = short(Scenario::B, 150);
        assert_eq!(run_scenario(&c, None).unwrap().csv, run_scenario(&b, None).unwrap().csv);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let cfg = short(Scenario::C, 120);
        assert_eq!(
            run_scenario(&cfg, None).unwrap().csv,
            run_scenario(&cfg, None).unwrap().csv
        );
    }

    #[test]
    fn zero_length_run_is_an_error() {
        let mut cfg = short(Scenario::A, 0);
        assert!(run_scenario(&cfg, None).is_err());
        cfg.ticks = None;
        cfg.duration = Some(0.0);
        assert!(run_scenario(&cfg, None).is_err());
    }

    #[test]
    fn config_parsing() {
        let cfg = ScenarioConfig::parse("scenario = \"B\"\ntrajectory = \"square\"\n[manip]\ntheta_m = 0.5\n").unwrap();
        assert_eq!(cfg.scenario, Scenario::B);
        assert_eq!(cfg.tick_rate, 100.0);
        assert_eq!(cfg.loops, 3);
        assert_eq!(cfg.manip.theta_m, Some(0.5));
        assert!(ScenarioConfig::parse("tick_rate = 0.0").is_err());
        assert!(ScenarioConfig::parse("bogus = 1").is_err());
        let round = ScenarioConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn unwritable_output_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let mut cfg = short(Scenario::A, 3);
        cfg.out_dir = Some(blocker.join("sub"));
        assert!(matches!(run_scenario(&cfg, None), Err(Error::Io { .. })));
    }

    #[test]
    fn outputs_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = short(Scenario::B, 5);
        cfg.out_dir = Some(dir.path().to_path_buf());
        let report = run_scenario(&cfg, None).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(csv, report.csv);
        assert_eq!(csv.lines().count(), 1 + 5 * 3);
        assert!(dir.path().join("summary.json").exists());
    }
}
