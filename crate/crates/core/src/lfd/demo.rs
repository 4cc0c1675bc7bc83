use std::io::{BufRead, Write};

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::geometry::{unwrap_deg, FrameId, FramedPose, Pose, PoseRecord};

use super::LfdError;

/// Six-d.o.f pose vector `[x, y, z, alpha, beta, theta]`: metres and degrees.
pub type PoseVec = SVector<f64, 6>;

/// Millimetres per metre: `Pose` is in mm, pose vectors in m.
const MM_PER_M: f64 = 1000.0;

pub fn pose_to_vec(p: &Pose) -> PoseVec {
    let t = p.translation() / MM_PER_M;
    let [a, b, c] = p.euler_deg();
    PoseVec::new(t.x, t.y, t.z, a, b, c)
}

pub fn vec_to_pose(h: &PoseVec) -> Pose {
    Pose::from_euler_deg(
        [h[0] * MM_PER_M, h[1] * MM_PER_M, h[2] * MM_PER_M],
        [h[3], h[4], h[5]],
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub h: PoseVec,
}

/// A timestamped pose stream expressed in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub frame: FrameId,
    pub samples: Vec<TrajectorySample>,
}

impl Stream {
    pub fn new(frame: FrameId, samples: Vec<TrajectorySample>) -> Self {
        Stream { frame, samples }
    }

    pub fn from_poses(frame: FrameId, times: &[f64], poses: &[Pose]) -> Self {
        let samples = times
            .iter()
            .zip(poses)
            .map(|(&t, p)| TrajectorySample { t, h: pose_to_vec(p) })
            .collect();
        Stream { frame, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.samples.iter().map(|s| vec_to_pose(&s.h)).collect()
    }

    pub fn is_time_increasing(&self) -> bool {
        self.samples.windows(2).all(|w| w[1].t > w[0].t)
    }

    /// Removes +-360 jumps from the rotation components so each angle is a
    /// continuous function of time.
    pub fn unwrap_rotations(&mut self) {
        for i in 1..self.samples.len() {
            let prev = self.samples[i - 1].h;
            let cur = &mut self.samples[i].h;
            for k in 3..6 {
                cur[k] = unwrap_deg(cur[k], prev[k]);
            }
        }
    }

    /// Shifts whole-turn offsets so the first sample's angles lie within
    /// 180 deg of `reference`.
    pub fn align_turns_to(&mut self, reference: &PoseVec) {
        let Some(first) = self.samples.first() else {
            return;
        };
        let mut shift = [0.0; 3];
        for k in 0..3 {
            let a = first.h[k + 3];
            shift[k] = unwrap_deg(a, reference[k + 3]) - a;
        }
        for s in &mut self.samples {
            for k in 0..3 {
                s.h[k + 3] += shift[k];
            }
        }
    }

    /// Same samples with time measured from the first sample.
    pub fn rebased(&self) -> Stream {
        let t0 = self.samples.first().map(|s| s.t).unwrap_or(0.0);
        Stream {
            frame: self.frame,
            samples: self
                .samples
                .iter()
                .map(|s| TrajectorySample { t: s.t - t0, h: s.h })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Jaw {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Holder {
    #[serde(rename = "A")]
    WithA,
    #[serde(rename = "B")]
    WithB,
}

/// One stitch cycle recorded on a common clock.
///
/// All pose streams are expressed in the mandrel frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub tool_a: Stream,
    pub tool_b: Stream,
    pub needle: Stream,
    pub gripper_a: Vec<Jaw>,
    pub gripper_b: Vec<Jaw>,
    pub needle_holder: Vec<Holder>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.needle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.needle.is_empty()
    }

    pub fn state(&self, i: usize) -> (Jaw, Jaw, Holder) {
        (self.gripper_a[i], self.gripper_b[i], self.needle_holder[i])
    }

    pub fn validate(&self) -> Result<(), LfdError> {
        let n = self.needle.len();
        let bad = |msg: String| Err(LfdError::MalformedDemonstration(msg));
        if n == 0 {
            return bad("empty demonstration".into());
        }
        for (name, len) in [
            ("tool_a", self.tool_a.len()),
            ("tool_b", self.tool_b.len()),
            ("gripper_a", self.gripper_a.len()),
            ("gripper_b", self.gripper_b.len()),
            ("holder", self.needle_holder.len()),
        ] {
            if len != n {
                return bad(format!("{name} has {len} samples, needle has {n}"));
            }
        }
        if !self.needle.is_time_increasing() {
            return bad("timestamps are not strictly increasing".into());
        }
        for i in 0..n {
            let t = self.needle.samples[i].t;
            if self.tool_a.samples[i].t != t || self.tool_b.samples[i].t != t {
                return bad(format!("streams disagree on the clock at sample {i}"));
            }
        }
        for i in 1..n {
            if self.needle_holder[i] != self.needle_holder[i - 1]
                && !(self.gripper_a[i - 1] == Jaw::Closed && self.gripper_b[i - 1] == Jaw::Closed)
            {
                return bad(format!(
                    "needle changes hands at sample {i} without both jaws closed"
                ));
            }
        }
        Ok(())
    }

    /// Samples `range` as a new demonstration.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Demonstration {
        let cut = |s: &Stream| Stream::new(s.frame, s.samples[range.clone()].to_vec());
        Demonstration {
            tool_a: cut(&self.tool_a),
            tool_b: cut(&self.tool_b),
            needle: cut(&self.needle),
            gripper_a: self.gripper_a[range.clone()].to_vec(),
            gripper_b: self.gripper_b[range.clone()].to_vec(),
            needle_holder: self.needle_holder[range].to_vec(),
        }
    }

    fn append(&mut self, other: &Demonstration) {
        self.tool_a.samples.extend_from_slice(&other.tool_a.samples);
        self.tool_b.samples.extend_from_slice(&other.tool_b.samples);
        self.needle.samples.extend_from_slice(&other.needle.samples);
        self.gripper_a.extend_from_slice(&other.gripper_a);
        self.gripper_b.extend_from_slice(&other.gripper_b);
        self.needle_holder.extend_from_slice(&other.needle_holder);
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = DemoHeader::default();
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for i in 0..self.len() {
            let t = self.needle.samples[i].t;
            let rec = |s: &Stream, child: FrameId| {
                PoseRecord::from(&FramedPose::varying(
                    s.frame,
                    child,
                    vec_to_pose(&s.samples[i].h),
                    t,
                ))
            };
            let record = DemoRecord {
                t,
                tool_a: rec(&self.tool_a, FrameId::driver(0)),
                tool_b: rec(&self.tool_b, FrameId::driver(1)),
                needle: rec(&self.needle, FrameId::NEEDLE),
                gripper_a: self.gripper_a[i],
                gripper_b: self.gripper_b[i],
                holder: self.needle_holder[i],
            };
            writeln!(w, "{}", serde_json::to_string(&record)?)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Demonstration, LfdError> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| LfdError::Io("missing demonstration header".into()))?
            .map_err(|e| LfdError::Io(e.to_string()))?;
        let header: DemoHeader =
            serde_json::from_str(&header_line).map_err(|e| LfdError::Io(e.to_string()))?;
        if header.format != DEMO_FORMAT {
            return Err(LfdError::Io(format!("unsupported format `{}`", header.format)));
        }
        let mut demo = Demonstration {
            tool_a: Stream::new(header.frame, vec![]),
            tool_b: Stream::new(header.frame, vec![]),
            needle: Stream::new(header.frame, vec![]),
            gripper_a: vec![],
            gripper_b: vec![],
            needle_holder: vec![],
        };
        for line in lines {
            let line = line.map_err(|e| LfdError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DemoRecord =
                serde_json::from_str(&line).map_err(|e| LfdError::Io(e.to_string()))?;
            for (stream, pr) in [
                (&mut demo.tool_a, &rec.tool_a),
                (&mut demo.tool_b, &rec.tool_b),
                (&mut demo.needle, &rec.needle),
            ] {
                if pr.parent != header.frame {
                    return Err(LfdError::Io(format!(
                        "pose in frame {} but header declares {}",
                        pr.parent, header.frame
                    )));
                }
                let pose = FramedPose::from(pr).pose;
                stream.samples.push(TrajectorySample {
                    t: rec.t,
                    h: pose_to_vec(&pose),
                });
            }
            demo.gripper_a.push(rec.gripper_a);
            demo.gripper_b.push(rec.gripper_b);
            demo.needle_holder.push(rec.holder);
        }
        for s in [&mut demo.tool_a, &mut demo.tool_b, &mut demo.needle] {
            s.unwrap_rotations();
        }
        Ok(demo)
    }
}

const DEMO_FORMAT: &str = "stitchcell-demo/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DemoHeader {
    format: String,
    frame: FrameId,
    units: DemoUnits,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DemoUnits {
    t: String,
    xyz: String,
    euler: String,
}

impl Default for DemoHeader {
    fn default() -> Self {
        DemoHeader {
            format: DEMO_FORMAT.into(),
            frame: FrameId::MANDREL,
            units: DemoUnits {
                t: "s".into(),
                xyz: "mm".into(),
                euler: "deg, R = Rz(a) Ry(b) Rx(c)".into(),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DemoRecord {
    t: f64,
    tool_a: PoseRecord,
    tool_b: PoseRecord,
    needle: PoseRecord,
    gripper_a: Jaw,
    gripper_b: Jaw,
    holder: Holder,
}

/// `(gripper A, gripper B, needle holder)` for motion primitives 1..=5.
pub const PRIMITIVE_STATES: [(Jaw, Jaw, Holder); 5] = [
    (Jaw::Closed, Jaw::Open, Holder::WithA),
    (Jaw::Closed, Jaw::Closed, Holder::WithA),
    (Jaw::Open, Jaw::Closed, Holder::WithB),
    (Jaw::Closed, Jaw::Closed, Holder::WithB),
    (Jaw::Closed, Jaw::Open, Holder::WithA),
];

/// Frame each primitive's learned trajectory is expressed in.
pub fn primitive_frame(index: usize) -> FrameId {
    match index {
        1..=3 => FrameId::MANDREL,
        4 => FrameId::NEEDLE,
        _ => FrameId::NEEDLE_INITIAL,
    }
}

/// One motion primitive cut out of a demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveSegment {
    /// 1..=5
    pub index: usize,
    /// Sample range within the source demonstration.
    pub range: std::ops::Range<usize>,
    pub steps: Demonstration,
    pub frame: FrameId,
}

/// Splits a demonstration into the five primitives by jaw and holder state.
pub fn segment(demo: &Demonstration) -> Result<Vec<PrimitiveSegment>, LfdError> {
    demo.validate()?;
    let mut runs: Vec<(std::ops::Range<usize>, (Jaw, Jaw, Holder))> = Vec::new();
    let mut start = 0;
    for i in 1..=demo.len() {
        if i == demo.len() || demo.state(i) != demo.state(start) {
            runs.push((start..i, demo.state(start)));
            start = i;
        }
    }
    if runs.len() != PRIMITIVE_STATES.len() {
        return Err(LfdError::MalformedDemonstration(format!(
            "expected 5 state runs, found {}",
            runs.len()
        )));
    }
    runs.into_iter()
        .zip(PRIMITIVE_STATES)
        .enumerate()
        .map(|(k, ((range, state), expected))| {
            if state != expected {
                return Err(LfdError::MalformedDemonstration(format!(
                    "primitive {} has state {:?}, expected {:?}",
                    k + 1,
                    state,
                    expected
                )));
            }
            Ok(PrimitiveSegment {
                index: k + 1,
                steps: demo.slice(range.clone()),
                range,
                frame: primitive_frame(k + 1),
            })
        })
        .collect()
}

/// Inverse of [`segment`].
pub fn concatenate(segments: &[PrimitiveSegment]) -> Option<Demonstration> {
    let mut it = segments.iter();
    let mut out = it.next()?.steps.clone();
    for s in it {
        out.append(&s.steps);
    }
    Some(out)
}

/// The trajectory each primitive learns, in the primitive's frame, with
/// time measured from the primitive start.
///
/// Primitives 1 and 3 learn the needle (the active driver holds it),
/// 2 learns driver B approaching the needle, 4 learns driver A relative to
/// the needle and 5 learns the needle relative to its pose at the start of
/// the cycle.
pub fn learning_stream(
    segment: &PrimitiveSegment,
    needle_initial: &Pose,
) -> Stream {
    let steps = &segment.steps;
    let times = steps.needle.times();
    let needle = steps.needle.poses();
    let poses: Vec<Pose> = match segment.index {
        1 | 3 => needle,
        2 => steps.tool_b.poses(),
        4 => needle
            .iter()
            .zip(steps.tool_a.poses())
            .map(|(n, a)| n.inverse().compose(&a))
            .collect(),
        _ => {
            let inv = needle_initial.inverse();
            needle.iter().map(|n| inv.compose(n)).collect()
        }
    };
    let mut s = Stream::from_poses(segment.frame, &times, &poses).rebased();
    s.unwrap_rotations();
    s
}

/// Segments a demonstration and extracts all five learning streams.
pub fn primitive_streams(demo: &Demonstration) -> Result<Vec<Stream>, LfdError> {
    let segments = segment(demo)?;
    let initial = vec_to_pose(&demo.needle.samples[0].h);
    Ok(segments
        .iter()
        .map(|s| learning_stream(s, &initial))
        .collect())
}
