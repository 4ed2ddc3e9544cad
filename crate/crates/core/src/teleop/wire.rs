//! Flat `key=value` text records exchanged with teleoperation clients.
//!
//! ```text
//! type=pose session_id=quest-1 seq=12 t_client=... p=x,y,z q=w,x,y,z grab=true
//! type=state tick=40 t_server=... arms=a;b joints=..;.. manipulability=..,.. position_error=..,.. payload_p=.. payload_q=..
//! type=busy session_id=quest-2 active=quest-1
//! ```

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::pose::Pose;

/// Numbers go out with 17 significant digits so they parse back exactly.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn nums(xs: &[f64]) -> String {
    xs.iter().map(|x| num(*x)).collect::<Vec<_>>().join(",")
}

fn bad(message: impl ToString) -> Error {
    Error::parse("wire record", message)
}

fn parse_num(key: &str, s: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| bad(format!("`{key}`: `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(bad(format!("`{key}` must be finite")));
    }
    Ok(v)
}

fn parse_list(key: &str, s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| parse_num(key, p)).collect()
}

fn parse_fixed<const N: usize>(key: &str, s: &str) -> Result<[f64; N]> {
    let v = parse_list(key, s)?;
    v.try_into()
        .map_err(|v: Vec<f64>| bad(format!("`{key}` needs {N} values, got {}", v.len())))
}

fn parse_pose(pkey: &str, p: &str, qkey: &str, q: &str) -> Result<Pose> {
    let p = parse_fixed::<3>(pkey, p)?;
    let q = parse_fixed::<4>(qkey, q)?;
    Pose::from_arrays(p, q).ok_or_else(|| bad(format!("`{qkey}` is not a usable quaternion")))
}

/// Identifiers travel unquoted, so they may not contain separators.
fn check_token(what: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || matches!(c, '=' | ',' | ';')) {
        return Err(Error::validation(
            what,
            format!("`{s}` must be non-empty without spaces, `=`, `,` or `;`"),
        ));
    }
    Ok(())
}

/// Splits a record into its `type` and the remaining fields, rejecting
/// duplicates.
fn fields(line: &str) -> Result<(String, Vec<(&str, &str)>)> {
    let mut kind = None;
    let mut out: Vec<(&str, &str)> = Vec::new();
    for token in line.split_ascii_whitespace() {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| bad(format!("token `{token}` is not key=value")))?;
        if k == "type" {
            if kind.replace(v.to_string()).is_some() {
                return Err(bad("duplicate `type`"));
            }
        } else {
            if out.iter().any(|(seen, _)| *seen == k) {
                return Err(bad(format!("duplicate field `{k}`")));
            }
            out.push((k, v));
        }
    }
    let kind = kind.ok_or_else(|| bad("missing `type`"))?;
    Ok((kind, out))
}

struct Fields<'a> {
    kind: &'static str,
    items: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn take(&mut self, key: &str) -> Result<&'a str> {
        let i = self
            .items
            .iter()
            .position(|(k, _)| *k == key)
            .ok_or_else(|| bad(format!("{} record is missing `{key}`", self.kind)))?;
        Ok(self.items.swap_remove(i).1)
    }

    fn finish(self) -> Result<()> {
        match self.items.first() {
            Some((k, _)) => Err(bad(format!("unknown {} field `{k}`", self.kind))),
            None => Ok(()),
        }
    }
}

/// A payload pose update from the operator.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseUpdateMessage {
    pub session_id: String,
    pub seq: u64,
    pub t_client: f64,
    pub pose: Pose,
    /// Whether the operator is currently holding the payload.
    pub grab: bool,
}

impl PoseUpdateMessage {
    pub fn encode(&self) -> String {
        format!(
            "type=pose session_id={} seq={} t_client={} p={} q={} grab={}",
            self.session_id,
            self.seq,
            num(self.t_client),
            nums(&self.pose.position_array()),
            nums(&self.pose.quaternion_wxyz()),
            self.grab
        )
    }

    fn from_fields(mut f: Fields<'_>) -> Result<Self> {
        let session_id = f.take("session_id")?.to_string();
        check_token("session_id", &session_id).map_err(|e| bad(e.to_string()))?;
        let seq_s = f.take("seq")?;
        let seq = seq_s
            .parse()
            .map_err(|_| bad(format!("`seq`: `{seq_s}` is not an unsigned integer")))?;
        let t_client = parse_num("t_client", f.take("t_client")?)?;
        let p = f.take("p")?;
        let q = f.take("q")?;
        let pose = parse_pose("p", p, "q", q)?;
        let grab = match f.take("grab")? {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(bad(format!("`grab`: `{other}` is not a flag"))),
        };
        f.finish()?;
        Ok(Self {
            session_id,
            seq,
            t_client,
            pose,
            grab,
        })
    }
}

/// One arm's entry in a state record.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmState {
    pub id: String,
    pub joints: Vec<f64>,
    pub manipulability: f64,
    pub position_error: f64,
}

/// Solver state published every tick.
#[derive(Clone, Debug, PartialEq)]
pub struct StateMessage {
    tick: u64,
    t_server: f64,
    arms: Vec<ArmState>,
    payload: Pose,
}

impl StateMessage {
    pub fn new(tick: u64, t_server: f64, arms: Vec<ArmState>, payload: Pose) -> Result<Self> {
        if arms.is_empty() {
            return Err(Error::validation("state message", "at least one arm is required"));
        }
        for a in &arms {
            check_token("arm id", &a.id)?;
            if a.joints.is_empty() {
                return Err(Error::validation(
                    "state message",
                    format!("arm `{}` has no joints", a.id),
                ));
            }
        }
        Ok(Self {
            tick,
            t_server,
            arms,
            payload,
        })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn t_server(&self) -> f64 {
        self.t_server
    }

    pub fn arms(&self) -> &[ArmState] {
        &self.arms
    }

    pub fn payload(&self) -> &Pose {
        &self.payload
    }

    pub fn encode(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "type=state tick={} t_server={} arms=", self.tick, num(self.t_server));
        s.push_str(&self.arms.iter().map(|a| a.id.as_str()).collect::<Vec<_>>().join(";"));
        s.push_str(" joints=");
        s.push_str(&self.arms.iter().map(|a| nums(&a.joints)).collect::<Vec<_>>().join(";"));
        let m: Vec<f64> = self.arms.iter().map(|a| a.manipulability).collect();
        let e: Vec<f64> = self.arms.iter().map(|a| a.position_error).collect();
        let _ = write!(
            s,
            " manipulability={} position_error={} payload_p={} payload_q={}",
            nums(&m),
            nums(&e),
            nums(&self.payload.position_array()),
            nums(&self.payload.quaternion_wxyz())
        );
        s
    }

    fn from_fields(mut f: Fields<'_>) -> Result<Self> {
        let tick_s = f.take("tick")?;
        let tick = tick_s
            .parse()
            .map_err(|_| bad(format!("`tick`: `{tick_s}` is not an unsigned integer")))?;
        let t_server = parse_num("t_server", f.take("t_server")?)?;
        let ids: Vec<&str> = f.take("arms")?.split(';').collect();
        let joints: Vec<&str> = f.take("joints")?.split(';').collect();
        let m = parse_list("manipulability", f.take("manipulability")?)?;
        let e = parse_list("position_error", f.take("position_error")?)?;
        let pp = f.take("payload_p")?;
        let pq = f.take("payload_q")?;
        let payload = parse_pose("payload_p", pp, "payload_q", pq)?;
        f.finish()?;
        let n = ids.len();
        if joints.len() != n || m.len() != n || e.len() != n {
            return Err(bad(format!(
                "arm count mismatch: {n} ids, {} joint lists, {} manipulabilities, {} errors",
                joints.len(),
                m.len(),
                e.len()
            )));
        }
        let arms = (0..n)
            .map(|i| {
                Ok(ArmState {
                    id: ids[i].to_string(),
                    joints: parse_list("joints", joints[i])?,
                    manipulability: m[i],
                    position_error: e[i],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        StateMessage::new(tick, t_server, arms, payload).map_err(|e| bad(e.to_string()))
    }
}

/// Sent to a client whose session was refused because another operator is
/// active.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BusyNotice {
    pub session_id: String,
    pub active: String,
}

impl BusyNotice {
    pub fn encode(&self) -> String {
        format!("type=busy session_id={} active={}", self.session_id, self.active)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    Pose(PoseUpdateMessage),
    State(StateMessage),
    Busy(BusyNotice),
}

impl Record {
    pub fn encode(&self) -> String {
        match self {
            Record::Pose(m) => m.encode(),
            Record::State(m) => m.encode(),
            Record::Busy(m) => m.encode(),
        }
    }
}

/// Decodes one record. Surrounding whitespace and a trailing newline are
/// ignored.
pub fn decode(bytes: &[u8]) -> Result<Record> {
    let text = std::str::from_utf8(bytes).map_err(|_| bad("record is not UTF-8"))?;
    let (kind, items) = fields(text.trim())?;
    match kind.as_str() {
        "pose" => PoseUpdateMessage::from_fields(Fields { kind: "pose", items }).map(Record::Pose),
        "state" => StateMessage::from_fields(Fields { kind: "state", items }).map(Record::State),
        "busy" => {
            let mut f = Fields { kind: "busy", items };
            let session_id = f.take("session_id")?.to_string();
            let active = f.take("active")?.to_string();
            f.finish()?;
            Ok(Record::Busy(BusyNotice { session_id, active }))
        }
        other => Err(bad(format!("unknown record type `{other}`"))),
    }
}

pub fn decode_pose(bytes: &[u8]) -> Result<PoseUpdateMessage> {
    match decode(bytes)? {
        Record::Pose(m) => Ok(m),
        _ => Err(bad("expected a pose record")),
    }
}

pub fn decode_state(bytes: &[u8]) -> Result<StateMessage> {
    match decode(bytes)? {
        Record::State(m) => Ok(m),
        _ => Err(bad("expected a state record")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};

    fn pose() -> Pose {
        Pose::new(
            Vector3::new(0.1, -0.25, 0.5),
            UnitQuaternion::from_euler_angles(0.2, -0.1, 2.9),
        )
    }

    #[test]
    fn pose_round_trip() {
        let m = PoseUpdateMessage {
            session_id: "quest-1".into(),
            seq: 42,
            t_client: 3.125,
            pose: pose(),
            grab: true,
        };
        let line = m.encode();
        assert!(line.starts_with("type=pose session_id=quest-1 seq=42 "));
        assert_eq!(decode_pose(line.as_bytes()).unwrap(), m);
        assert_eq!(decode_pose(format!("{line}\n").as_bytes()).unwrap(), m);
    }

    #[test]
    fn unnormalized_quaternion_is_accepted() {
        let line = "type=pose session_id=s seq=1 t_client=0 p=0,0,0 q=1.1,0,0,0 grab=false";
        let m = decode_pose(line.as_bytes()).unwrap();
        assert!((m.pose.orientation.quaternion().norm() - 1.0).abs() < 1e-15);
        assert_eq!(m.pose.orientation, UnitQuaternion::identity());
    }

    #[test]
    fn malformed_records() {
        for line in [
            "",
            "type=pose",
            "type=pose session_id=s seq=-1 t_client=0 p=0,0,0 q=1,0,0,0 grab=true",
            "type=pose session_id=s seq=1 t_client=0 p=0,0 q=1,0,0,0 grab=true",
            "type=pose session_id=s seq=1 t_client=0 p=0,0,0 q=0,0,0,0 grab=true",
            "type=pose session_id=s seq=1 t_client=nan p=0,0,0 q=1,0,0,0 grab=true",
            "type=pose session_id=s seq=1 t_client=0 p=0,0,0 q=1,0,0,0 grab=maybe",
            "type=pose session_id=s seq=1 seq=2 t_client=0 p=0,0,0 q=1,0,0,0 grab=true",
            "type=pose session_id=s seq=1 t_client=0 p=0,0,0 q=1,0,0,0 grab=true extra=1",
            "type=warp session_id=s",
            "garbage",
        ] {
            assert!(decode(line.as_bytes()).is_err(), "{line}");
        }
        assert!(decode(&[0xff, 0xfe]).is_err());
    }

    fn arm(id: &str, n: usize) -> ArmState {
        ArmState {
            id: id.into(),
            joints: (0..n).map(|i| i as f64 * 0.1 - 0.3).collect(),
            manipulability: 0.0625,
            position_error: 1.5e-7,
        }
    }

    #[test]
    fn state_round_trip_and_arm_count() {
        let s = StateMessage::new(7, 0.07, vec![arm("a", 6), arm("b", 6), arm("c", 6)], pose()).unwrap();
        let back = decode_state(s.encode().as_bytes()).unwrap();
        assert_eq!(back.arms().len(), 3);
        assert_eq!(back, s);
    }

    #[test]
    fn zero_arm_state_is_rejected() {
        assert!(StateMessage::new(0, 0.0, vec![], Pose::identity()).is_err());
        assert!(StateMessage::new(0, 0.0, vec![arm("has space", 2)], Pose::identity()).is_err());
    }

    #[test]
    fn busy_round_trip() {
        let b = BusyNotice {
            session_id: "two".into(),
            active: "one".into(),
        };
        assert_eq!(decode(b.encode().as_bytes()).unwrap(), Record::Busy(b));
    }
}
