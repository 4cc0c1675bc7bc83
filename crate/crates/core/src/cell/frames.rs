//! Frame equations of the cell: slot registration, mandrel
//! delivery, needle-to-driver transfer and the
//! look-and-move servo step.

use serde::{Deserialize, Serialize};

use crate::geometry::{FrameId, FrameKind, FramedPose, GeometryError, Pose};

use super::{CellError, MandrelDesign};

fn expect_frames(p: &FramedPose, parent: FrameId, child_kind: FrameKind) -> Result<(), CellError> {
    if p.parent != parent {
        return Err(GeometryError::FrameMismatch {
            expected: parent,
            found: p.parent,
        }
        .into());
    }
    if p.child.kind != child_kind {
        return Err(GeometryError::FrameMismatch {
            expected: FrameId { kind: child_kind, ..p.child },
            found: p.child,
        }
        .into());
    }
    Ok(())
}

/// Slot registration: `cx_s0 = cx_m * mH_s0`.
pub fn register_slot0(cam_mandrel: &FramedPose, mandrel_slot0: &FramedPose) -> Result<FramedPose, CellError> {
    expect_frames(cam_mandrel, FrameId::CAMERA, FrameKind::Mandrel)?;
    expect_frames(mandrel_slot0, FrameId::MANDREL, FrameKind::Slot)?;
    Ok(cam_mandrel.compose(mandrel_slot0)?)
}

/// Mandrel delivery: the motion `mx_m_i = (cx_m)^-1 * cx_s0 * (mH_s_i)^-1`
/// that brings slot `i` to the registered slot-0 camera pose.
pub fn mandrel_delivery_error(
    cam_mandrel: &Pose,
    cam_slot0: &Pose,
    design: &MandrelDesign,
    slot: usize,
) -> Result<Pose, CellError> {
    let h = design.slots.get(slot).ok_or(CellError::UnknownSlot(slot))?;
    Ok(cam_mandrel.inverse().compose(cam_slot0).compose(&h.inverse()))
}

/// Mandrel poses that present each slot at `cam_slot0`, computed once per
/// design.
pub fn delivery_plan(design: &MandrelDesign, cam_slot0: &Pose) -> Vec<Pose> {
    design
        .slots
        .iter()
        .map(|h| cam_slot0.compose(&h.inverse()))
        .collect()
}

/// Needle-to-driver transfer: the driver pose `sx_d = sx_n * (dH_n)^-1` that puts the needle at
/// `sx_n` given the grip `dH_n`.
pub fn needle_to_driver_target(slot_needle: &Pose, driver_needle: &Pose) -> Pose {
    slot_needle.compose(&driver_needle.inverse())
}

/// Gains, per-step caps and convergence tolerance of look-and-move
/// servoing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoConfig {
    pub gain: f64,
    /// Largest translation commanded per step (mm).
    pub max_step_mm: f64,
    /// Largest rotation commanded per step (deg).
    pub max_step_deg: f64,
    pub tolerance_mm: f64,
    pub tolerance_deg: f64,
}

impl Default for ServoConfig {
    fn default() -> Self {
        ServoConfig {
            gain: 0.8,
            max_step_mm: 1.0,
            max_step_deg: 2.0,
            tolerance_mm: 0.1,
            tolerance_deg: 0.1,
        }
    }
}

/// One servo command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoCommand {
    /// Motion to apply on the right of the current driver pose.
    pub increment: Pose,
    /// Servo error `dx_d* = (cx_d)^-1 * cx_d*`.
    pub error: Pose,
    pub error_mm: f64,
    pub error_deg: f64,
    pub converged: bool,
}

/// Servo step: the error between the observed driver pose and the
/// desired one, scaled by `gain` and capped per step.
///
/// `current` is `None` when tracking was lost this tick.
pub fn servo_step(current: Option<&Pose>, desired: &Pose, cfg: &ServoConfig) -> Result<ServoCommand, CellError> {
    let current = current.ok_or(CellError::TargetUnobservable)?;
    let error = current.inverse().compose(desired);
    let error_mm = error.distance();
    let error_deg = error.angle_deg();
    let mut t = error.translation() * cfg.gain;
    let mut w = error.rotation_vector() * cfg.gain;
    if t.norm() > cfg.max_step_mm {
        t *= cfg.max_step_mm / t.norm();
    }
    let max_rad = cfg.max_step_deg.to_radians();
    if w.norm() > max_rad {
        w *= max_rad / w.norm();
    }
    Ok(ServoCommand {
        increment: Pose::from_rotation_vector(t, w),
        error,
        error_mm,
        error_deg,
        converged: error_mm < cfg.tolerance_mm && error_deg < cfg.tolerance_deg,
    })
}
