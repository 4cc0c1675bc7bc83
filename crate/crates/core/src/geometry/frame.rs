use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::GeometryError;

/// What a coordinate frame is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameKind {
    World,
    Camera,
    Mandrel,
    Slot,
    Needle,
    /// Needle pose captured at the start of a stitch cycle.
    NeedleInitial,
    Driver,
    RobotBase,
    EndEffector,
    Marker,
}

impl FrameKind {
    fn tag(self) -> &'static str {
        match self {
            FrameKind::World => "w",
            FrameKind::Camera => "c",
            FrameKind::Mandrel => "m",
            FrameKind::Slot => "s",
            FrameKind::Needle => "n",
            FrameKind::NeedleInitial => "ni",
            FrameKind::Driver => "d",
            FrameKind::RobotBase => "r",
            FrameKind::EndEffector => "ee",
            FrameKind::Marker => "k",
        }
    }

    fn indexed(self) -> bool {
        matches!(
            self,
            FrameKind::Slot
                | FrameKind::Driver
                | FrameKind::RobotBase
                | FrameKind::EndEffector
                | FrameKind::Marker
        )
    }
}

/// A frame tag such as `c`, `s3`, `d0` or `d0*`.
///
/// The trailing `*` marks a desired (target) copy of a frame, e.g. the
/// desired driver pose `d*` that servoing drives `d` towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameId {
    pub kind: FrameKind,
    pub index: u16,
    pub desired: bool,
}

impl FrameId {
    pub const WORLD: FrameId = FrameId::plain(FrameKind::World);
    pub const CAMERA: FrameId = FrameId::plain(FrameKind::Camera);
    pub const MANDREL: FrameId = FrameId::plain(FrameKind::Mandrel);
    pub const NEEDLE: FrameId = FrameId::plain(FrameKind::Needle);
    pub const NEEDLE_INITIAL: FrameId = FrameId::plain(FrameKind::NeedleInitial);

    const fn plain(kind: FrameKind) -> Self {
        FrameId {
            kind,
            index: 0,
            desired: false,
        }
    }

    pub const fn slot(i: u16) -> Self {
        FrameId {
            kind: FrameKind::Slot,
            index: i,
            desired: false,
        }
    }

    pub const fn driver(i: u16) -> Self {
        FrameId {
            kind: FrameKind::Driver,
            index: i,
            desired: false,
        }
    }

    pub const fn robot_base(i: u16) -> Self {
        FrameId {
            kind: FrameKind::RobotBase,
            index: i,
            desired: false,
        }
    }

    pub const fn end_effector(i: u16) -> Self {
        FrameId {
            kind: FrameKind::EndEffector,
            index: i,
            desired: false,
        }
    }

    pub const fn marker(i: u16) -> Self {
        FrameId {
            kind: FrameKind::Marker,
            index: i,
            desired: false,
        }
    }

    /// The desired (`*`) counterpart of this frame.
    pub const fn desired(self) -> Self {
        FrameId {
            desired: true,
            ..self
        }
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.tag())?;
        if self.kind.indexed() {
            write!(f, "{}", self.index)?;
        }
        if self.desired {
            f.write_str("*")?;
        }
        Ok(())
    }
}

impl FromStr for FrameId {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GeometryError::BadFrameTag(s.to_string());
        let (body, desired) = match s.strip_suffix('*') {
            Some(b) => (b, true),
            None => (s, false),
        };
        let split = body
            .find(|c: char| c.is_ascii_digit())
            .unwrap_or(body.len());
        let (tag, digits) = body.split_at(split);
        let kind = match tag {
            "w" => FrameKind::World,
            "c" => FrameKind::Camera,
            "m" => FrameKind::Mandrel,
            "s" => FrameKind::Slot,
            "n" => FrameKind::Needle,
            "ni" => FrameKind::NeedleInitial,
            "d" => FrameKind::Driver,
            "r" => FrameKind::RobotBase,
            "ee" => FrameKind::EndEffector,
            "k" => FrameKind::Marker,
            _ => return Err(bad()),
        };
        let index = if kind.indexed() {
            digits.parse::<u16>().map_err(|_| bad())?
        } else if digits.is_empty() {
            0
        } else {
            return Err(bad());
        };
        Ok(FrameId {
            kind,
            index,
            desired,
        })
    }
}

impl Serialize for FrameId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FrameId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
