//! Stitch outcomes and failure classification.

use serde::{Deserialize, Serialize};

/// Why a stitch failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureCause {
    NeedleHandling,
    StitchStentMissing,
    NeedleStentTouching,
    NeedleThreadEntangling,
    /// A failed cycle on which no predicate fired.
    Unclassified,
}

impl FailureCause {
    pub const ALL: [FailureCause; 5] = [
        FailureCause::NeedleHandling,
        FailureCause::StitchStentMissing,
        FailureCause::NeedleStentTouching,
        FailureCause::NeedleThreadEntangling,
        FailureCause::Unclassified,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureCause::NeedleHandling => "NeedleHandling",
            FailureCause::StitchStentMissing => "StitchStentMissing",
            FailureCause::NeedleStentTouching => "NeedleStentTouching",
            FailureCause::NeedleThreadEntangling => "NeedleThreadEntangling",
            FailureCause::Unclassified => "Unclassified",
        }
    }
}

/// Everything observed during one stitch cycle that decides its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleTrace {
    pub slot: usize,
    /// Needle detection returned no usable candidate.
    pub detection_failed: bool,
    /// Primitive during which the needle was dropped, if any.
    pub grip_lost_in: Option<usize>,
    /// Receiving jaw closed too far from the needle during a hand-over.
    pub handover_missed: bool,
    /// Grip ended up outside the detectable search space.
    pub grip_out_of_bounds: bool,
    /// Pierce-in and pierce-out points in the slot frame (mm).
    pub pierce_in: Option<[f64; 3]>,
    pub pierce_out: Option<[f64; 3]>,
    /// Distance from the stitch centre to the stent wire across the wire.
    pub capture_offset_mm: Option<f64>,
    pub capture_window_mm: f64,
    /// Closest approach of the needle body to the stent wire axis.
    pub min_wire_clearance_mm: f64,
    /// Clearance below which needle and wire touch.
    pub touch_distance_mm: f64,
    /// Thread entanglement event during thread pulling.
    pub entangled: bool,
    pub stitch_size_mm: Option<f64>,
    pub pull_mm: Option<f64>,
    /// Camera frames in which the active driver was not observable.
    pub unobservable_frames: usize,
    /// Needle pose in the slot frame at the end of each reference sample,
    /// per primitive (empty for primitives that do not move the needle).
    pub needle_samples: Vec<Vec<crate::geometry::Pose>>,
}

impl CycleTrace {
    pub fn new(slot: usize, capture_window_mm: f64, touch_distance_mm: f64) -> Self {
        CycleTrace {
            slot,
            detection_failed: false,
            grip_lost_in: None,
            handover_missed: false,
            grip_out_of_bounds: false,
            pierce_in: None,
            pierce_out: None,
            capture_offset_mm: None,
            capture_window_mm,
            min_wire_clearance_mm: f64::INFINITY,
            touch_distance_mm,
            entangled: false,
            stitch_size_mm: None,
            pull_mm: None,
            unobservable_frames: 0,
            needle_samples: vec![Vec::new(); 5],
        }
    }

    pub fn handling_failed(&self) -> bool {
        self.detection_failed || self.grip_lost_in.is_some() || self.handover_missed || self.grip_out_of_bounds
    }

    pub fn stent_missed(&self) -> bool {
        match (self.pierce_in, self.pierce_out, self.capture_offset_mm) {
            (Some(_), Some(_), Some(off)) => off > self.capture_window_mm,
            _ => true,
        }
    }

    pub fn stent_touched(&self) -> bool {
        self.min_wire_clearance_mm < self.touch_distance_mm
    }

    /// Whether any failure predicate fires.
    pub fn failed(&self) -> bool {
        self.handling_failed() || self.stent_missed() || self.stent_touched() || self.entangled
    }
}

/// Maps a failed cycle to its cause. Predicates are checked in the order
/// handling, stent missing, stent touching, entangling; the first that
/// fires wins. Returns [`FailureCause::Unclassified`] if none fires.
pub fn classify_failure(trace: &CycleTrace) -> FailureCause {
    if trace.handling_failed() {
        FailureCause::NeedleHandling
    } else if trace.stent_missed() {
        FailureCause::StitchStentMissing
    } else if trace.stent_touched() {
        FailureCause::NeedleStentTouching
    } else if trace.entangled {
        FailureCause::NeedleThreadEntangling
    } else {
        FailureCause::Unclassified
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Fail,
}

/// One attempted stitch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchRecord {
    /// 1-based trial number within the run.
    pub trial: usize,
    pub design: String,
    pub slot: usize,
    pub outcome: Outcome,
    /// Present iff the outcome is `Fail`.
    pub cause: Option<FailureCause>,
    /// Present iff the outcome is `Success`.
    pub stitch_size_mm: Option<f64>,
    pub duration_s: f64,
}

impl StitchRecord {
    /// Record for a finished cycle.
    pub fn from_trace(trial: usize, design: &str, trace: &CycleTrace, duration_s: f64) -> Self {
        let failed = trace.failed() || trace.stitch_size_mm.is_none();
        StitchRecord {
            trial,
            design: design.to_string(),
            slot: trace.slot,
            outcome: if failed { Outcome::Fail } else { Outcome::Success },
            cause: failed.then(|| classify_failure(trace)),
            stitch_size_mm: if failed { None } else { trace.stitch_size_mm },
            duration_s,
        }
    }

    pub fn is_success(&self) -> bool {
        self.outcome == Outcome::Success
    }
}
