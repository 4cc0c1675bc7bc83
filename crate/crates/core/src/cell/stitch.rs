//! Geometry of one stitch: where the needle tip crosses the fabric, the
//! resulting stitch size and how close the needle passes the stent wire.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose;

use super::MandrelDesign;

/// Fabric and stent wire at one slot for one stitch attempt.
///
/// The fabric lies `fabric_offset_mm` above the designed mandrel surface;
/// the stent wire runs along the slot x axis at axial offset
/// `wire_offset_mm` and rests on the fabric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StitchSite<'a> {
    pub design: &'a MandrelDesign,
    /// `mH_s` of the slot.
    pub slot_pose: Pose,
    pub fabric_offset_mm: f64,
    pub wire_offset_mm: f64,
    pub wire_radius_mm: f64,
}

/// Pierce points and derived quantities of a completed stitch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StitchGeometry {
    /// Slot-frame pierce points (mm).
    pub pierce_in: [f64; 3],
    pub pierce_out: [f64; 3],
    /// Surface distance between the pierce points.
    pub size_mm: f64,
    /// Axial distance from the stitch centre to the wire.
    pub capture_offset_mm: f64,
}

impl<'a> StitchSite<'a> {
    /// A site with the fabric on the design surface and the wire centred.
    pub fn nominal(design: &'a MandrelDesign, slot_pose: Pose, wire_radius_mm: f64) -> Self {
        StitchSite {
            design,
            slot_pose,
            fabric_offset_mm: 0.0,
            wire_offset_mm: 0.0,
            wire_radius_mm,
        }
    }

    /// Height of a slot-frame point above the fabric (negative inside).
    pub fn height(&self, p_slot: &Vector3<f64>) -> f64 {
        self.design.surface_height(&self.slot_pose.transform_point(p_slot)) - self.fabric_offset_mm
    }

    /// First downward and the following upward fabric crossing of a tip
    /// path (slot frame), linearly interpolated between samples.
    pub fn pierce_points(&self, tip_path: &[Vector3<f64>]) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let heights: Vec<f64> = tip_path.iter().map(|p| self.height(p)).collect();
        let crossing = |i: usize| {
            let (h0, h1) = (heights[i], heights[i + 1]);
            let s = h0 / (h0 - h1);
            tip_path[i] + s * (tip_path[i + 1] - tip_path[i])
        };
        let down = (0..tip_path.len().saturating_sub(1)).find(|&i| heights[i] > 0.0 && heights[i + 1] <= 0.0)?;
        let up = (down + 1..tip_path.len() - 1).find(|&i| heights[i] <= 0.0 && heights[i + 1] > 0.0)?;
        Some((crossing(down), crossing(up)))
    }

    /// Surface distance between two slot-frame pierce points.
    pub fn stitch_size(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        let am = self.slot_pose.transform_point(a);
        let bm = self.slot_pose.transform_point(b);
        self.design.geodesic_mm(&am, &bm, self.fabric_offset_mm)
    }

    /// Axial distance between the stitch centre and the wire.
    pub fn capture_offset(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        (0.5 * (a.y + b.y) - self.wire_offset_mm).abs()
    }

    /// Pierce points, size and capture offset of a tip path.
    pub fn evaluate(&self, tip_path: &[Vector3<f64>]) -> Option<StitchGeometry> {
        let (a, b) = self.pierce_points(tip_path)?;
        Some(StitchGeometry {
            pierce_in: a.into(),
            pierce_out: b.into(),
            size_mm: self.stitch_size(&a, &b),
            capture_offset_mm: self.capture_offset(&a, &b),
        })
    }

    /// Distance from a slot-frame point to the wire axis. The wire is
    /// straight over the few millimetres the needle spans.
    pub fn wire_clearance(&self, p_slot: &Vector3<f64>) -> f64 {
        let dy = p_slot.y - self.wire_offset_mm;
        let dz = p_slot.z - (self.fabric_offset_mm + self.wire_radius_mm);
        (dy * dy + dz * dz).sqrt()
    }
}
