//! Payload pose sources: circle and square tasks, and recorded playback.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Pose;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircleParams {
    pub radius: f64,
    /// Height of the motion plane; the start height when unset.
    pub height: Option<f64>,
    pub angular_speed: f64,
    pub approach_speed: f64,
}

impl Default for CircleParams {
    fn default() -> Self {
        Self {
            radius: 0.2,
            height: None,
            angular_speed: 0.5,
            approach_speed: 0.1,
        }
    }
}

impl CircleParams {
    pub fn approach_time(&self) -> f64 {
        self.radius / self.approach_speed
    }

    pub fn period(&self) -> f64 {
        std::f64::consts::TAU / self.angular_speed
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SquareParams {
    pub side: f64,
    pub height: Option<f64>,
    pub speed: f64,
}

impl Default for SquareParams {
    fn default() -> Self {
        Self {
            side: 0.4,
            height: None,
            speed: 0.1,
        }
    }
}

impl SquareParams {
    pub fn period(&self) -> f64 {
        4.0 * self.side / self.speed
    }
}

fn plane_origin(start: &Pose, height: Option<f64>) -> Vector3<f64> {
    let mut c = start.position;
    if let Some(h) = height {
        c.z = h;
    }
    c
}

/// Approach along +x by `radius`, then circle the start point.
pub fn circle_sample(params: &CircleParams, start: &Pose, t: f64) -> Pose {
    let center = plane_origin(start, params.height);
    let approach = params.approach_time();
    let offset = if t <= approach {
        Vector3::new(params.approach_speed * t.max(0.0), 0.0, 0.0)
    } else {
        let angle = params.angular_speed * (t - approach);
        let (s, c) = angle.sin_cos();
        Vector3::new(params.radius * c, params.radius * s, 0.0)
    };
    Pose::new(center + offset, start.orientation)
}

/// Axis-aligned square centered on the start point, starting at the
/// `(-side/2, -side/2)` corner and running counter-clockwise.
pub fn square_sample(params: &SquareParams, start: &Pose, t: f64) -> Pose {
    let center = plane_origin(start, params.height);
    let h = params.side / 2.0;
    let corners = [(-h, -h), (h, -h), (h, h), (-h, h)];
    let s = (params.speed * t.max(0.0)).rem_euclid(4.0 * params.side);
    let seg = ((s / params.side) as usize).min(3);
    let frac = s - seg as f64 * params.side;
    let (x0, y0) = corners[seg];
    let (x1, y1) = corners[(seg + 1) % 4];
    let u = frac / params.side;
    let offset = Vector3::new(x0 + (x1 - x0) * u, y0 + (y1 - y0) * u, 0.0);
    Pose::new(center + offset, start.orientation)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub payload_pose: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordingSource {
    Live,
    File,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    samples: Vec<TrajectorySample>,
    pub source: RecordingSource,
}

/// One line of a `.traj` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajRecord {
    pub t: f64,
    pub p: [f64; 3],
    pub q: [f64; 4],
}

impl TrajRecord {
    pub fn from_sample(sample: &TrajectorySample) -> Self {
        Self {
            t: sample.t,
            p: sample.payload_pose.position_array(),
            q: sample.payload_pose.quaternion_wxyz(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("plain numeric record serializes")
    }
}

impl Recording {
    pub fn new(samples: Vec<TrajectorySample>, source: RecordingSource) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::parse("recording", "at least two samples are required"));
        }
        for (i, w) in samples.windows(2).enumerate() {
            if w[1].t.partial_cmp(&w[0].t) != Some(std::cmp::Ordering::Greater) {
                return Err(Error::parse(
                    "recording",
                    format!(
                        "timestamps must strictly increase (sample {} at t={}, sample {} at t={})",
                        i,
                        w[0].t,
                        i + 1,
                        w[1].t
                    ),
                ));
            }
        }
        Ok(Self { samples, source })
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn start_time(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    /// Pose at `t`: linear in position, spherical in orientation, held
    /// constant outside the recorded span. Exact sample times return the
    /// stored pose unchanged.
    pub fn pose_at(&self, t: f64) -> Pose {
        let idx = self.samples.partition_point(|s| s.t <= t);
        if idx == 0 {
            return self.samples[0].payload_pose;
        }
        let a = &self.samples[idx - 1];
        if idx == self.samples.len() || a.t == t {
            return a.payload_pose;
        }
        let b = &self.samples[idx];
        let u = (t - a.t) / (b.t - a.t);
        let pa = &a.payload_pose;
        let pb = &b.payload_pose;
        let position = pa.position.lerp(&pb.position, u);
        let orientation = pa
            .orientation
            .try_slerp(&pb.orientation, u, 1e-12)
            .unwrap_or(pa.orientation);
        Pose::new(position, orientation)
    }

    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        for s in &self.samples {
            writeln!(out, "{}", TrajRecord::from_sample(s).to_line())?;
        }
        Ok(())
    }

    pub fn to_traj_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("records are ASCII")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_traj_string()).map_err(|e| Error::io(path, e))
    }
}

/// Parses a `.traj` document. Blank lines are ignored.
pub fn load_recording(text: &str) -> Result<Recording> {
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let rec: TrajRecord =
            serde_json::from_str(line).map_err(|e| Error::parse("recording", format!("line {}: {e}", lineno + 1)))?;
        let pose = Pose::from_arrays(rec.p, rec.q)
            .ok_or_else(|| Error::parse("recording", format!("line {}: invalid pose", lineno + 1)))?;
        if !rec.t.is_finite() {
            return Err(Error::parse(
                "recording",
                format!("line {}: non-finite time", lineno + 1),
            ));
        }
        samples.push(TrajectorySample {
            t: rec.t,
            payload_pose: pose,
        });
    }
    Recording::new(samples, RecordingSource::File)
}

pub fn load_recording_file(path: impl AsRef<Path>) -> Result<Recording> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_recording(&text)
}

/// Streams samples to a `.traj` sink one line at a time.
pub struct TrajWriter<W: Write> {
    out: W,
}

impl<W: Write> TrajWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn append(&mut self, t: f64, pose: &Pose) -> std::io::Result<()> {
        let rec = TrajRecord {
            t,
            p: pose.position_array(),
            q: pose.quaternion_wxyz(),
        };
        writeln!(self.out, "{}", rec.to_line())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// A payload pose source for batch runs.
#[derive(Clone, Debug)]
pub enum Trajectory {
    Circle { params: CircleParams, start: Pose },
    Square { params: SquareParams, start: Pose },
    Playback(Recording),
}

impl Trajectory {
    pub fn pose_at(&self, t: f64) -> Pose {
        match self {
            Trajectory::Circle { params, start } => circle_sample(params, start, t),
            Trajectory::Square { params, start } => square_sample(params, start, t),
            Trajectory::Playback(rec) => rec.pose_at(t),
        }
    }

    /// Time needed for `loops` repetitions. Recordings play once.
    pub fn duration(&self, loops: u32) -> f64 {
        match self {
            Trajectory::Circle { params, .. } => params.approach_time() + loops as f64 * params.period(),
            Trajectory::Square { params, .. } => loops as f64 * params.period(),
            Trajectory::Playback(rec) => rec.end_time(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Trajectory::Circle { .. } => "circle",
            Trajectory::Square { .. } => "square",
            Trajectory::Playback(_) => "recording",
        }
    }
}
