//! Rigid-pose algebra, frame bookkeeping and point-set registration.
//!
//! Every pose in the cell is a [`FramedPose`]: a [`Pose`] annotated with the
//! frame it is expressed in (`parent`) and the frame it locates (`child`).
//! Composition checks the inner frames so that a chain such as
//! `c -> m -> s0` cannot be assembled in the wrong order.

mod frame;
mod pose;
mod registration;

pub use frame::{FrameId, FrameKind};
pub use pose::{compose, invert, pose_error, FramedPose, Pose, PoseKind, PoseRecord};
pub use registration::{register_absolute_orientation, Registration};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("frame mismatch: expected {expected}, found {found}")]
    FrameMismatch { expected: FrameId, found: FrameId },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("unknown frame tag `{0}`")]
    BadFrameTag(String),
}

/// Wraps an angle in degrees into `(-180, 180]`.
pub fn wrap_deg(a: f64) -> f64 {
    let mut x = (a + 180.0).rem_euclid(360.0) - 180.0;
    if x <= -180.0 {
        x += 360.0;
    }
    x
}

/// Shifts `a` by a multiple of 360 so it lies within 180 of `reference`.
pub fn unwrap_deg(a: f64, reference: f64) -> f64 {
    reference + wrap_deg(a - reference)
}
