use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{FrameId, FramedPose, Pose};

use super::CellError;

/// Shape of the mandrel surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Cylinder,
    Tapered,
}

/// Surface of revolution about the mandrel z axis, from `z = 0` to
/// `z = length_mm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceProfile {
    #[serde(rename = "type")]
    pub kind: ProfileKind,
    /// One diameter for a cylinder; diameters at `z = 0` and at
    /// `z = length_mm` for a tapered cylinder.
    pub diameters_mm: Vec<f64>,
    pub length_mm: f64,
}

impl SurfaceProfile {
    fn end_radii(&self) -> (f64, f64) {
        match (self.kind, self.diameters_mm.as_slice()) {
            (ProfileKind::Cylinder, [d]) => (d / 2.0, d / 2.0),
            (ProfileKind::Tapered, [d0, d1]) => (d0 / 2.0, d1 / 2.0),
            _ => (f64::NAN, f64::NAN),
        }
    }

    /// Surface radius at axial position `z`.
    pub fn radius_at(&self, z: f64) -> f64 {
        let (r0, r1) = self.end_radii();
        r0 + (r1 - r0) * z / self.length_mm
    }

    /// `dr/dz`.
    pub fn slope(&self) -> f64 {
        let (r0, r1) = self.end_radii();
        (r1 - r0) / self.length_mm
    }
}

/// A personalised mandrel: surface, stitching slots and stent peaks.
///
/// Slot frames (`mH_s_i`) have z along the outward surface normal, y along
/// the surface generator (axial) and x tangential, i.e. along the stent
/// wire crossing the slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MandrelDesign {
    pub id: String,
    pub profile: SurfaceProfile,
    pub slots: Vec<Pose>,
    pub slot_width_mm: f64,
    /// Pose of the stent wire at each slot (wire along the local x axis).
    pub stent_peaks: Vec<Pose>,
}

/// Slot frame on the surface at angle `phi_deg` and axial position `z`.
pub fn surface_frame(profile: &SurfaceProfile, phi_deg: f64, z: f64) -> Pose {
    let phi = phi_deg.to_radians();
    let (c, s) = (phi.cos(), phi.sin());
    let r = profile.radius_at(z);
    let k = profile.slope();
    let normal = Vector3::new(c, s, -k).normalize();
    let axial = Vector3::new(k * c, k * s, 1.0).normalize();
    let tangent = axial.cross(&normal);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[tangent, axial, normal]));
    Pose::new(
        Vector3::new(r * c, r * s, z),
        UnitQuaternion::from_rotation_matrix(&rot),
    )
}

impl MandrelDesign {
    /// Ten slots every 36 degrees, alternating between the stent ring's
    /// peaks and valleys (`+-4 mm` about the mid-length).
    fn with_ten_slots(id: &str, profile: SurfaceProfile) -> Self {
        let mid = profile.length_mm / 2.0;
        let slots: Vec<Pose> = (0..10)
            .map(|i| {
                let z = if i % 2 == 0 { mid + 4.0 } else { mid - 4.0 };
                surface_frame(&profile, 36.0 * i as f64, z)
            })
            .collect();
        MandrelDesign {
            id: id.to_string(),
            stent_peaks: slots.clone(),
            slots,
            slot_width_mm: 2.0,
            profile,
        }
    }

    /// The four shipped example designs `A`..`D` (outer diameters 44, 40,
    /// 30 mm and a 30-34 mm taper).
    pub fn shipped(id: &str) -> Option<Self> {
        let cyl = |d: f64| SurfaceProfile {
            kind: ProfileKind::Cylinder,
            diameters_mm: vec![d],
            length_mm: 60.0,
        };
        let profile = match id {
            "A" => cyl(44.0),
            "B" => cyl(40.0),
            "C" => cyl(30.0),
            "D" => SurfaceProfile {
                kind: ProfileKind::Tapered,
                diameters_mm: vec![30.0, 34.0],
                length_mm: 60.0,
            },
            _ => return None,
        };
        Some(MandrelDesign::with_ten_slots(id, profile))
    }

    pub fn shipped_all() -> Vec<MandrelDesign> {
        ["A", "B", "C", "D"]
            .iter()
            .map(|id| MandrelDesign::shipped(id).expect("shipped id"))
            .collect()
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    /// `mH_s_i` as a framed pose.
    pub fn slot(&self, i: usize) -> Result<FramedPose, CellError> {
        let pose = self.slots.get(i).ok_or(CellError::UnknownSlot(i))?;
        Ok(FramedPose::constant(FrameId::MANDREL, FrameId::slot(i as u16), *pose))
    }

    pub fn radius_at(&self, z: f64) -> f64 {
        self.profile.radius_at(z)
    }

    /// Signed distance of a mandrel-frame point from the surface (positive
    /// outside), exact for cylinders and to first order for tapers.
    pub fn surface_height(&self, p: &Vector3<f64>) -> f64 {
        let rho = (p.x * p.x + p.y * p.y).sqrt();
        let k = self.profile.slope();
        (rho - self.radius_at(p.z)) / (1.0 + k * k).sqrt()
    }

    /// Surface distance between two points on (or `offset` above) the
    /// surface, measured on the unrolled surface at their mean radius.
    pub fn geodesic_mm(&self, a: &Vector3<f64>, b: &Vector3<f64>, offset: f64) -> f64 {
        let r = 0.5 * (self.radius_at(a.z) + self.radius_at(b.z)) + offset;
        let mut dphi = b.y.atan2(b.x) - a.y.atan2(a.x);
        dphi = (dphi + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
        let k = self.profile.slope();
        let dz = (b.z - a.z) * (1.0 + k * k).sqrt();
        ((r * dphi).powi(2) + dz * dz).sqrt()
    }

    pub fn validate(&self) -> Result<(), CellError> {
        let bad = |m: String| Err(CellError::InvalidDesign(m));
        if self.id.is_empty() {
            return bad("empty id".into());
        }
        let expected = match self.profile.kind {
            ProfileKind::Cylinder => 1,
            ProfileKind::Tapered => 2,
        };
        if self.profile.diameters_mm.len() != expected {
            return bad(format!(
                "{:?} profile needs {} diameter(s), got {}",
                self.profile.kind,
                expected,
                self.profile.diameters_mm.len()
            ));
        }
        if self
            .profile
            .diameters_mm
            .iter()
            .any(|d| !(d.is_finite() && *d > 0.0))
            || !(self.profile.length_mm.is_finite() && self.profile.length_mm > 0.0)
        {
            return bad("diameters and length must be positive".into());
        }
        if self.slots.is_empty() {
            return bad("no slots".into());
        }
        if !(self.slot_width_mm.is_finite() && self.slot_width_mm > 0.0) {
            return bad("slot width must be positive".into());
        }
        if self.stent_peaks.len() != self.slots.len() {
            return bad("one stent peak per slot required".into());
        }
        for (i, s) in self.slots.iter().enumerate() {
            let p = s.translation();
            if !s.is_finite() || self.surface_height(&p).abs() > 1e-6 {
                return bad(format!("slot {i} is not on the surface"));
            }
            if p.z < 0.0 || p.z > self.profile.length_mm {
                return bad(format!("slot {i} lies beyond the mandrel length"));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CellError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CellError::Io(format!("{}: {e}", path.display())))?;
        let d: MandrelDesign = serde_json::from_str(&text)
            .map_err(|e| CellError::InvalidDesign(format!("{}: {e}", path.display())))?;
        d.validate()?;
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<(), CellError> {
        let text = serde_json::to_string_pretty(self).expect("design serializes");
        std::fs::write(path, text).map_err(|e| CellError::Io(format!("{}: {e}", path.display())))
    }
}
