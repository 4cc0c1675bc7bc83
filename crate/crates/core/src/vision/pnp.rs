use nalgebra::{
    DMatrix, Matrix3, Matrix6, Rotation3, UnitQuaternion, Vector2, Vector3, Vector6,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{FrameId, FramedPose, Pose};

use super::{CameraModel, Projection, TrackingNoise, VisionError};

/// Planar square marker whose `grid x grid` interior points are tracked.
///
/// Points lie in the marker's z = 0 plane, centred on the origin; the
/// marker faces along its -z axis (the camera sees it when the marker's
/// z axis points away from the camera).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerGeometry {
    pub id: u32,
    pub side_mm: f64,
    pub grid: usize,
}

impl MarkerGeometry {
    pub fn new(id: u32) -> Self {
        MarkerGeometry {
            id,
            side_mm: 20.0,
            grid: 7,
        }
    }

    pub fn points(&self) -> Vec<Vector3<f64>> {
        let n = self.grid;
        let step = self.side_mm / (n - 1) as f64;
        let h = self.side_mm / 2.0;
        (0..n)
            .flat_map(|r| (0..n).map(move |c| (r, c)))
            .map(|(r, c)| Vector3::new(-h + c as f64 * step, -h + r as f64 * step, 0.0))
            .collect()
    }
}

/// Result of a perspective-n-point solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PnpSolution {
    /// Marker pose in the camera frame (`c -> marker`).
    pub pose: FramedPose,
    /// RMS reprojection residual (px).
    pub rms_px: f64,
}

fn degenerate(msg: &str) -> VisionError {
    VisionError::DegenerateConfiguration(msg.into())
}

fn scatter_eigen(points: &[Vector3<f64>]) -> (Vector3<f64>, Matrix3<f64>, Vector3<f64>) {
    let c = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let s = points
        .iter()
        .map(|p| (p - c) * (p - c).transpose())
        .sum::<Matrix3<f64>>();
    let eig = s.symmetric_eigen();
    (c, eig.eigenvectors, eig.eigenvalues)
}

/// Homography `H` with `x_img ~ H [X, Y, 1]` from normalized DLT.
fn homography(plane: &[Vector2<f64>], img: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let norm = |pts: &[Vector2<f64>]| {
        let n = pts.len() as f64;
        let c = pts.iter().sum::<Vector2<f64>>() / n;
        let d = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
        let s = if d > 0.0 { std::f64::consts::SQRT_2 / d } else { 1.0 };
        Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
    };
    let ta = norm(plane);
    let tb = norm(img);
    let mut a = DMatrix::<f64>::zeros(2 * plane.len().max(5), 9);
    for (i, (p, q)) in plane.iter().zip(img).enumerate() {
        let p = ta * Vector3::new(p.x, p.y, 1.0);
        let q = tb * Vector3::new(q.x, q.y, 1.0);
        let (x, y, u, v) = (p.x, p.y, q.x, q.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |b, (i, s)| if *s < b.1 { (i, *s) } else { b });
    let h = v_t.row(idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let out = tb.try_inverse()? * hn * ta;
    Some(out)
}

/// Closest rotation to `m` in the Frobenius sense.
fn nearest_rotation(m: &Matrix3<f64>) -> UnitQuaternion<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r))
}

/// Initial pose from the homography of a planar target whose points are
/// given in plane coordinates (z = 0).
fn planar_init(plane: &[Vector2<f64>], norm_img: &[Vector2<f64>]) -> Option<Pose> {
    let h = homography(plane, norm_img)?;
    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let mut lambda = 2.0 / (h1.norm() + h2.norm());
    if (lambda * h3).z < 0.0 {
        lambda = -lambda;
    }
    let r1 = lambda * h1;
    let r2 = lambda * h2;
    let r3 = r1.cross(&r2);
    let rot = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r3]));
    Some(Pose::new(lambda * h3, rot))
}

fn reprojection(
    camera: &CameraModel,
    pose: &Pose,
    model: &[Vector3<f64>],
    img: &[Vector2<f64>],
) -> (Vec<f64>, f64) {
    let mut r = Vec::with_capacity(2 * model.len());
    let mut sq = 0.0;
    for (m, q) in model.iter().zip(img) {
        let p = pose.transform_point(m);
        let u = camera.fx * p.x / p.z + camera.cx - q.x;
        let v = camera.fy * p.y / p.z + camera.cy - q.y;
        r.push(u);
        r.push(v);
        sq += u * u + v * v;
    }
    (r, sq)
}

/// Levenberg-Marquardt refinement of the reprojection error.
fn refine(
    camera: &CameraModel,
    mut pose: Pose,
    model: &[Vector3<f64>],
    img: &[Vector2<f64>],
) -> Pose {
    let (_, mut cost) = reprojection(camera, &pose, model, img);
    let mut mu = 1e-3;
    for _ in 0..100 {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (m, q) in model.iter().zip(img) {
            let rp = pose.transform_vector(m);
            let p = rp + pose.translation();
            let iz = 1.0 / p.z;
            let du = Vector3::new(camera.fx * iz, 0.0, -camera.fx * p.x * iz * iz);
            let dv = Vector3::new(0.0, camera.fy * iz, -camera.fy * p.y * iz * iz);
            // left perturbation: p' = exp(w) R m + t + dt
            let dp_dw = -rp.cross_matrix();
            let ju_w = dp_dw.transpose() * du;
            let jv_w = dp_dw.transpose() * dv;
            let ju = Vector6::new(du.x, du.y, du.z, ju_w.x, ju_w.y, ju_w.z);
            let jv = Vector6::new(dv.x, dv.y, dv.z, jv_w.x, jv_w.y, jv_w.z);
            let ru = camera.fx * p.x * iz + camera.cx - q.x;
            let rv = camera.fy * p.y * iz + camera.cy - q.y;
            jtj += ju * ju.transpose() + jv * jv.transpose();
            jtr += ju * ru + jv * rv;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += mu * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-jtr))) else {
                mu *= 10.0;
                continue;
            };
            let dt = Vector3::new(step[0], step[1], step[2]);
            let dw = Vector3::new(step[3], step[4], step[5]);
            let cand = Pose::new(
                pose.translation() + dt,
                UnitQuaternion::from_scaled_axis(dw) * pose.rotation(),
            );
            let (_, c) = reprojection(camera, &cand, model, img);
            if c.is_finite() && c <= cost {
                let small = step.norm() < 1e-13 || cost - c <= 1e-15 * cost.max(1e-30);
                pose = cand;
                cost = c;
                mu = (mu * 0.3).max(1e-12);
                improved = !small;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    pose
}

/// Perspective-n-point: marker pose in the camera frame from 2D-3D
/// correspondences, minimizing the reprojection error.
///
/// Planar targets are initialized from a homography, others from a linear
/// DLT; both are refined with Levenberg-Marquardt.
pub fn estimate_marker_pose(
    camera: &CameraModel,
    image_points: &[Vector2<f64>],
    model_points: &[Vector3<f64>],
    marker: FrameId,
) -> Result<PnpSolution, VisionError> {
    if image_points.len() != model_points.len() {
        return Err(VisionError::InvalidArgument(
            "image and model point counts differ".into(),
        ));
    }
    if model_points.len() < 4 {
        return Err(degenerate("need at least 4 correspondences"));
    }
    let (c, axes, ev) = scatter_eigen(model_points);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| ev[b].total_cmp(&ev[a]));
    if ev[order[1]] <= 1e-10 * ev[order[0]].max(f64::MIN_POSITIVE) {
        return Err(degenerate("model points are collinear"));
    }
    let norm_img: Vec<_> = image_points.iter().map(|p| camera.normalize(p)).collect();
    {
        let pts: Vec<_> = norm_img.iter().map(|p| Vector3::new(p.x, p.y, 0.0)).collect();
        let (_, _, iev) = scatter_eigen(&pts);
        let mut s: Vec<f64> = iev.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        if s[1] <= 1e-10 * s[0].max(f64::MIN_POSITIVE) {
            return Err(degenerate("image points are collinear"));
        }
    }

    let planar = ev[order[2]] <= 1e-10 * ev[order[0]];
    let init = if planar {
        // plane frame: origin at the centroid, axes from the scatter
        let mut e1: Vector3<f64> = axes.column(order[0]).into_owned();
        let mut e2: Vector3<f64> = axes.column(order[1]).into_owned();
        e1.normalize_mut();
        e2 -= e1 * e1.dot(&e2);
        e2.normalize_mut();
        let e3 = e1.cross(&e2);
        let plane_to_model = Pose::new(
            c,
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
                Matrix3::from_columns(&[e1, e2, e3]),
            )),
        );
        let inv = plane_to_model.inverse();
        let plane: Vec<_> = model_points
            .iter()
            .map(|m| {
                let p = inv.transform_point(m);
                Vector2::new(p.x, p.y)
            })
            .collect();
        planar_init(&plane, &norm_img)
            .map(|cam_plane| cam_plane.compose(&inv))
            .ok_or_else(|| degenerate("homography estimation failed"))?
    } else {
        if model_points.len() < 6 {
            return Err(degenerate("non-planar PnP needs at least 6 points"));
        }
        dlt_init(model_points, &norm_img).ok_or_else(|| degenerate("DLT failed"))?
    };
    let pose = refine(camera, init, model_points, image_points);
    let (_, sq) = reprojection(camera, &pose, model_points, image_points);
    let rms = (sq / model_points.len() as f64).sqrt();
    if !pose.is_finite() || !rms.is_finite() {
        return Err(degenerate("pose refinement diverged"));
    }
    Ok(PnpSolution {
        pose: FramedPose::constant(FrameId::CAMERA, marker, pose),
        rms_px: rms,
    })
}

fn dlt_init(model: &[Vector3<f64>], norm_img: &[Vector2<f64>]) -> Option<Pose> {
    let mut a = DMatrix::<f64>::zeros(2 * model.len(), 12);
    for (i, (m, q)) in model.iter().zip(norm_img).enumerate() {
        let x = [m.x, m.y, m.z, 1.0];
        for j in 0..4 {
            a[(2 * i, j)] = x[j];
            a[(2 * i, 8 + j)] = -q.x * x[j];
            a[(2 * i + 1, 4 + j)] = x[j];
            a[(2 * i + 1, 8 + j)] = -q.y * x[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |b, (i, s)| if *s < b.1 { (i, *s) } else { b });
    let p = v_t.row(idx);
    let m = Matrix3::new(p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10]);
    let mut t = Vector3::new(p[3], p[7], p[11]);
    let scale = m.determinant().abs().cbrt();
    let sign = if m.determinant() < 0.0 { -1.0 } else { 1.0 };
    let rot = nearest_rotation(&(m * (sign / scale)));
    t *= sign / scale;
    Some(Pose::new(t, rot))
}

/// Rigid set of markers with known poses on one object (the octagonal
/// mandrel collar or a pentagonal driver adapter).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerAssembly {
    pub object: FrameId,
    pub markers: Vec<(MarkerGeometry, Pose)>,
}

impl MarkerAssembly {
    /// `faces` markers evenly spaced around a ring of radius `radius_mm`
    /// about the object's `axis`, each facing outward, centred at
    /// `offset` along the axis.
    pub fn ring(object: FrameId, first_id: u32, faces: usize, radius_mm: f64, axis: Vector3<f64>, offset: f64) -> Self {
        let axis = axis.normalize();
        // any vector perpendicular to the axis
        let seed = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let u = (seed - axis * axis.dot(&seed)).normalize();
        let markers = (0..faces)
            .map(|i| {
                let ang = std::f64::consts::TAU * i as f64 / faces as f64;
                let rot_about = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), ang);
                let outward = rot_about * u;
                // marker z points inward so the printed face looks outward
                let z = -outward;
                let y = axis;
                let x = y.cross(&z);
                let r = Matrix3::from_columns(&[x, y, z]);
                let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
                (
                    MarkerGeometry::new(first_id + i as u32),
                    Pose::new(axis * offset + outward * radius_mm, q),
                )
            })
            .collect();
        MarkerAssembly { object, markers }
    }

    /// Adds a marker centred at `position` whose printed face looks along
    /// `outward`, e.g. an end cap that stays visible when the ring's axis
    /// points at the camera.
    pub fn with_cap(mut self, id: u32, position: Vector3<f64>, outward: Vector3<f64>) -> Self {
        let z = -outward.normalize();
        let seed = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let y = (seed - z * z.dot(&seed)).normalize();
        let x = y.cross(&z);
        let r = Matrix3::from_columns(&[x, y, z]);
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
        self.markers.push((MarkerGeometry::new(id), Pose::new(position, q)));
        self
    }
}

/// Noise settings for marker observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerNoise {
    pub pixel_sigma: f64,
    pub tau_px: f64,
    pub tracking: TrackingNoise,
}

impl MarkerNoise {
    pub fn none() -> Self {
        MarkerNoise {
            pixel_sigma: 0.0,
            tau_px: super::DEFAULT_TAU_PX,
            tracking: TrackingNoise::none(),
        }
    }
}

/// Fewest visible grid points for a marker to be used.
pub const MIN_VISIBLE_POINTS: usize = 12;

/// Outcome of observing a marker assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyObservation {
    /// Object pose in the camera frame.
    pub pose: FramedPose,
    pub marker_id: u32,
    pub inliers: usize,
    pub rms_px: f64,
}

/// Simulates one camera frame of a marker assembly at the true pose
/// `cam_object`: projects every marker facing the camera, runs the
/// forward-backward gate, estimates each marker's pose from its inliers
/// and keeps the marker with the most inliers.
pub fn observe_assembly<R: Rng + ?Sized>(
    camera: &CameraModel,
    cam_object: &Pose,
    assembly: &MarkerAssembly,
    noise: &MarkerNoise,
    rng: &mut R,
) -> Result<AssemblyObservation, VisionError> {
    let mut best: Option<AssemblyObservation> = None;
    for (geom, obj_marker) in &assembly.markers {
        let cam_marker = cam_object.compose(obj_marker);
        // facing: marker z axis points away from the camera
        let z = cam_marker.transform_vector(&Vector3::z());
        let centre = cam_marker.translation();
        if z.dot(&centre) <= 0.2 * centre.norm() {
            continue;
        }
        // markers partly outside the image still contribute their visible points
        let mut model = Vec::with_capacity(geom.grid * geom.grid);
        let mut truth = Vec::with_capacity(geom.grid * geom.grid);
        for m in geom.points() {
            if let Projection::Visible(p) =
                camera.project(&cam_marker.transform_point(&m), noise.pixel_sigma, rng)
            {
                model.push(m);
                truth.push(p);
            }
        }
        if truth.len() < MIN_VISIBLE_POINTS {
            continue;
        }
        let errors: Vec<_> = (0..model.len()).map(|_| noise.tracking.sample(rng)).collect();
        let track = super::track_forward_backward(geom.id, &truth, &truth, &errors, noise.tau_px)?;
        let (idx, pts) = track.inlier_points();
        if idx.len() < 4 {
            continue;
        }
        let sub: Vec<_> = idx.iter().map(|&i| model[i]).collect();
        let Ok(sol) = estimate_marker_pose(camera, &pts, &sub, FrameId::marker(geom.id as u16)) else {
            continue;
        };
        let obs = AssemblyObservation {
            pose: FramedPose::constant(
                FrameId::CAMERA,
                assembly.object,
                sol.pose.pose.compose(&obj_marker.inverse()),
            ),
            marker_id: geom.id,
            inliers: idx.len(),
            rms_px: sol.rms_px,
        };
        if best.as_ref().map_or(true, |b| obs.inliers > b.inliers) {
            best = Some(obs);
        }
    }
    best.ok_or(VisionError::NoMarkerVisible(assembly.object))
}
