use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{FrameId, FramedPose, Pose};
use crate::par::{self, Execution};

use super::{CameraModel, Projection, VisionError};

/// Half-circle suture needle.
///
/// Needle frame: the arc lies in the y-z plane around the origin,
/// `p(s) = (0, r cos s, -r sin s)` for `s` in `[0, pi]`, tail at `s = 0`
/// and tip at `s = pi`; x is the arc axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleModel {
    pub radius_mm: f64,
    /// Arc parameter of the nominal grip point, measured from the tail.
    pub grip_arc_deg: f64,
    /// Model points used for scoring, evenly spaced along the arc.
    pub points: Vec<Vector3<f64>>,
}

impl Default for NeedleModel {
    fn default() -> Self {
        NeedleModel::new(8.0, 10)
    }
}

impl NeedleModel {
    pub fn new(diameter_mm: f64, n_points: usize) -> Self {
        let r = diameter_mm / 2.0;
        let points = (0..n_points)
            .map(|i| {
                let s = std::f64::consts::PI * i as f64 / (n_points - 1) as f64;
                arc_point(r, s)
            })
            .collect();
        NeedleModel {
            radius_mm: r,
            grip_arc_deg: 30.0,
            points,
        }
    }

    pub fn point_at(&self, s: f64) -> Vector3<f64> {
        arc_point(self.radius_mm, s)
    }

    pub fn tip(&self) -> Vector3<f64> {
        self.point_at(std::f64::consts::PI)
    }

    pub fn tail(&self) -> Vector3<f64> {
        self.point_at(0.0)
    }

    /// Nominal grip point `g` in the needle frame.
    pub fn grip_point(&self) -> Vector3<f64> {
        self.point_at(self.grip_arc_deg.to_radians())
    }

    /// Driver-to-needle transform `dH_n` for a grip.
    pub fn driver_to_needle(&self, grip: &NeedleGrip) -> Pose {
        grip.rigid().compose(&Pose::new(-self.grip_point(), Default::default()))
    }

    pub fn driver_to_needle_framed(&self, grip: &NeedleGrip, driver: FrameId) -> FramedPose {
        FramedPose::constant(driver, FrameId::NEEDLE, self.driver_to_needle(grip))
    }
}

fn arc_point(r: f64, s: f64) -> Vector3<f64> {
    Vector3::new(0.0, r * s.cos(), -r * s.sin())
}

/// Grip of the needle in a driver's jaws: offset `x_mm` along the jaw axis
/// and rotations about x, y, z (degrees, applied as `Rz Ry Rx`) about the
/// grip point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NeedleGrip {
    pub x_mm: f64,
    pub rx_deg: f64,
    pub ry_deg: f64,
    pub rz_deg: f64,
}

impl NeedleGrip {
    pub fn new(x_mm: f64, rx_deg: f64, ry_deg: f64, rz_deg: f64) -> Self {
        NeedleGrip {
            x_mm,
            rx_deg,
            ry_deg,
            rz_deg,
        }
    }

    /// `Trans(x, 0, 0) * Rz Ry Rx`.
    pub fn rigid(&self) -> Pose {
        Pose::from_euler_deg([self.x_mm, 0.0, 0.0], [self.rz_deg, self.ry_deg, self.rx_deg])
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_mm, self.rx_deg, self.ry_deg, self.rz_deg]
    }
}

/// One axis of the search grid: `min, min + step, ..., max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridAxis {
    pub fn symmetric(bound: f64, step: f64) -> Self {
        GridAxis {
            min: -bound,
            max: bound,
            step,
        }
    }

    pub fn count(&self) -> usize {
        ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn value(&self, i: usize) -> f64 {
        self.min + self.step * i as f64
    }

    /// Index of the grid value nearest `v` (clamped).
    pub fn nearest(&self, v: f64) -> usize {
        (((v - self.min) / self.step).round().max(0.0) as usize).min(self.count() - 1)
    }
}

/// Bounds of the constrained grip search.
pub const SEARCH_BOUNDS: [f64; 4] = [5.0, 10.0, 60.0, 30.0];

/// Default grid resolution (mm, deg, deg, deg).
pub const DEFAULT_RESOLUTION: [f64; 4] = [0.5, 1.0, 2.0, 1.0];

/// 4D grid over `(x, rx, ry, rz)` within the fixed bounds
/// `x +-5 mm, rx +-10 deg, ry +-60 deg, rz +-30 deg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeedleSearchSpace {
    pub x: GridAxis,
    pub rx: GridAxis,
    pub ry: GridAxis,
    pub rz: GridAxis,
}

impl Default for NeedleSearchSpace {
    fn default() -> Self {
        NeedleSearchSpace::with_resolution(DEFAULT_RESOLUTION).expect("valid default")
    }
}

impl NeedleSearchSpace {
    pub fn with_resolution(res: [f64; 4]) -> Result<Self, VisionError> {
        if res.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(VisionError::InvalidArgument(format!(
                "grid resolution must be positive, got {res:?}"
            )));
        }
        for (b, r) in SEARCH_BOUNDS.iter().zip(&res) {
            if *r > 2.0 * b {
                return Err(VisionError::InvalidArgument(format!(
                    "resolution {r} exceeds the search range {}",
                    2.0 * b
                )));
            }
        }
        Ok(NeedleSearchSpace {
            x: GridAxis::symmetric(SEARCH_BOUNDS[0], res[0]),
            rx: GridAxis::symmetric(SEARCH_BOUNDS[1], res[1]),
            ry: GridAxis::symmetric(SEARCH_BOUNDS[2], res[2]),
            rz: GridAxis::symmetric(SEARCH_BOUNDS[3], res[3]),
        })
    }

    pub fn resolution(&self) -> [f64; 4] {
        [self.x.step, self.rx.step, self.ry.step, self.rz.step]
    }

    pub fn axes(&self) -> [GridAxis; 4] {
        [self.x, self.rx, self.ry, self.rz]
    }

    pub fn len(&self) -> usize {
        self.axes().iter().map(|a| a.count()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Candidate index with x varying fastest, then rz, ry, rx.
    pub fn index(&self, ix: usize, irx: usize, iry: usize, irz: usize) -> usize {
        ((irx * self.ry.count() + iry) * self.rz.count() + irz) * self.x.count() + ix
    }

    pub fn candidate(&self, index: usize) -> NeedleGrip {
        let nx = self.x.count();
        let nz = self.rz.count();
        let ny = self.ry.count();
        let ix = index % nx;
        let r = index / nx;
        let irz = r % nz;
        let r = r / nz;
        let iry = r % ny;
        let irx = r / ny;
        NeedleGrip::new(
            self.x.value(ix),
            self.rx.value(irx),
            self.ry.value(iry),
            self.rz.value(irz),
        )
    }

    pub fn contains(&self, g: &NeedleGrip) -> bool {
        let tol = 1e-9;
        g.x_mm.abs() <= SEARCH_BOUNDS[0] + tol
            && g.rx_deg.abs() <= SEARCH_BOUNDS[1] + tol
            && g.ry_deg.abs() <= SEARCH_BOUNDS[2] + tol
            && g.rz_deg.abs() <= SEARCH_BOUNDS[3] + tol
    }

    /// Grid candidate nearest a grip.
    pub fn snap(&self, g: &NeedleGrip) -> NeedleGrip {
        NeedleGrip::new(
            self.x.value(self.x.nearest(g.x_mm)),
            self.rx.value(self.rx.nearest(g.rx_deg)),
            self.ry.value(self.ry.nearest(g.ry_deg)),
            self.rz.value(self.rz.nearest(g.rz_deg)),
        )
    }
}

/// Per-pixel curvilinear feature response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub width: u32,
    pub height: u32,
    /// Row-major responses.
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(width: u32, height: u32) -> Self {
        FeatureMap {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width as usize + col]
    }

    fn at_mut(&mut self, col: usize, row: usize) -> &mut f64 {
        &mut self.data[row * self.width as usize + col]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Bilinear sample with pixel centres at integer coordinates; points
    /// outside `[0, w-1] x [0, h-1]` return 0.
    #[inline]
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        let w = self.width as usize;
        let h = self.height as usize;
        if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
            return 0.0;
        }
        let c0 = (u.floor() as usize).min(w.saturating_sub(2));
        let r0 = (v.floor() as usize).min(h.saturating_sub(2));
        let fu = u - c0 as f64;
        let fv = v - r0 as f64;
        let i = r0 * w + c0;
        let d = &self.data;
        let top = d[i] * (1.0 - fu) + d[i + 1] * fu;
        let bot = d[i + w] * (1.0 - fu) + d[i + w + 1] * fu;
        top * (1.0 - fv) + bot * fv
    }
}

/// Background clutter and ridge shape of the synthetic feature renderer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClutterModel {
    /// Amplitude of background structure relative to the needle (1.0).
    pub level: f64,
    /// Gaussian ridge half-width (px).
    pub ridge_px: f64,
    /// Number of spurious line segments.
    pub lines: usize,
    pub seed: u64,
}

impl ClutterModel {
    pub fn none() -> Self {
        ClutterModel {
            level: 0.0,
            ridge_px: 1.5,
            lines: 0,
            seed: 0,
        }
    }

    pub fn with_level(level: f64, seed: u64) -> Self {
        ClutterModel {
            level,
            ridge_px: 1.5,
            lines: 12,
            seed,
        }
    }
}

fn segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + s * ab)).norm()
}

/// Draws a Gaussian ridge of peak `amplitude` along a polyline.
fn draw_polyline(map: &mut FeatureMap, poly: &[Vector2<f64>], width: f64, amplitude: f64) {
    if poly.len() < 2 {
        return;
    }
    let reach = 4.0 * width;
    let (mut lo, mut hi) = (poly[0], poly[0]);
    for p in poly {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let c0 = (lo.x - reach).floor().max(0.0) as usize;
    let r0 = (lo.y - reach).floor().max(0.0) as usize;
    let c1 = ((hi.x + reach).ceil().max(0.0) as usize).min(map.width as usize - 1);
    let r1 = ((hi.y + reach).ceil().max(0.0) as usize).min(map.height as usize - 1);
    if c0 > c1 || r0 > r1 {
        return;
    }
    for row in r0..=r1 {
        for col in c0..=c1 {
            let p = Vector2::new(col as f64, row as f64);
            let d = poly
                .windows(2)
                .map(|w| segment_distance(&p, &w[0], &w[1]))
                .fold(f64::INFINITY, f64::min);
            if d <= reach {
                let v = amplitude * (-d * d / (2.0 * width * width)).exp();
                let cell = map.at_mut(col, row);
                if v > *cell {
                    *cell = v;
                }
            }
        }
    }
}

/// Synthetic curvilinear-filter output for a needle at `cam_needle`.
///
/// The response is 1 on the projected arc and decays as a Gaussian of the
/// pixel distance to it; clutter adds speckle up to `level / 2` and
/// `lines` straight ridges of amplitude `level`.
pub fn render_needle_features(
    camera: &CameraModel,
    cam_needle: &Pose,
    model: &NeedleModel,
    clutter: &ClutterModel,
) -> FeatureMap {
    let mut map = FeatureMap::zeros(camera.width, camera.height);
    if clutter.level > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(clutter.seed);
        let speckle = clutter.level / 2.0;
        for v in map.data.iter_mut() {
            *v = rng.gen_range(0.0..=speckle);
        }
        for _ in 0..clutter.lines {
            let a = Vector2::new(
                rng.gen_range(0.0..camera.width as f64),
                rng.gen_range(0.0..camera.height as f64),
            );
            let ang = rng.gen_range(0.0..std::f64::consts::PI);
            let len = rng.gen_range(20.0..120.0);
            let b = a + len * Vector2::new(ang.cos(), ang.sin());
            draw_polyline(&mut map, &[a, b], clutter.ridge_px, clutter.level);
        }
    }
    // dense polyline of the visible part of the arc
    let n = 361;
    let mut runs: Vec<Vec<Vector2<f64>>> = vec![Vec::new()];
    for i in 0..n {
        let s = std::f64::consts::PI * i as f64 / (n - 1) as f64;
        let p = cam_needle.transform_point(&model.point_at(s));
        let visible = p.z > 0.0 && {
            let u = camera.fx * p.x / p.z + camera.cx;
            let v = camera.fy * p.y / p.z + camera.cy;
            let margin = 8.0 * clutter.ridge_px;
            u > -margin
                && v > -margin
                && u < camera.width as f64 + margin
                && v < camera.height as f64 + margin
        };
        if visible {
            runs.last_mut().expect("non-empty").push(Vector2::new(
                camera.fx * p.x / p.z + camera.cx,
                camera.fy * p.y / p.z + camera.cy,
            ));
        } else if !runs.last().expect("non-empty").is_empty() {
            runs.push(Vec::new());
        }
    }
    for run in &runs {
        draw_polyline(&mut map, run, clutter.ridge_px, 1.0);
    }
    map
}

/// Best grid candidate found by [`detect_needle`].
#[derive(Debug, Clone, PartialEq)]
pub struct NeedleDetection {
    pub grip: NeedleGrip,
    /// `dH_n` of the winning candidate.
    pub pose: FramedPose,
    pub score: f64,
    /// Candidate index in the search space.
    pub index: usize,
}

/// Score of one grip: sum of bilinear map samples at the projected model
/// points (points behind the camera or outside the image contribute 0).
pub fn score_candidate(
    map: &FeatureMap,
    camera: &CameraModel,
    cam_driver: &Pose,
    model: &NeedleModel,
    grip: &NeedleGrip,
) -> f64 {
    let cam_needle = cam_driver.compose(&model.driver_to_needle(grip));
    model
        .points
        .iter()
        .map(|m| match camera.project_exact(&cam_needle.transform_point(m)) {
            Projection::Visible(px) => map.sample(px.x, px.y),
            Projection::Occluded => 0.0,
        })
        .sum()
}

/// Index lists per axis to scan (x, rx, ry, rz).
struct Window {
    x: Vec<usize>,
    rx: Vec<usize>,
    ry: Vec<usize>,
    rz: Vec<usize>,
}

fn scan(
    map: &FeatureMap,
    camera: &CameraModel,
    cam_driver: &Pose,
    model: &NeedleModel,
    space: &NeedleSearchSpace,
    window: &Window,
    exec: Execution,
) -> Option<(usize, f64)> {
    let a: Matrix3<f64> = cam_driver.rotation().to_rotation_matrix().into_inner();
    let t_d = cam_driver.translation();
    let b = a * Vector3::x();
    let g = model.grip_point();
    let rel: Vec<Vector3<f64>> = model.points.iter().map(|p| p - g).collect();
    let xs: Vec<f64> = window.x.iter().map(|&i| space.x.value(i)).collect();
    let (nry, nrz) = (window.ry.len(), window.rz.len());
    let n_rot = window.rx.len() * nry * nrz;
    let (fx, fy, cx, cy) = (camera.fx, camera.fy, camera.cx, camera.cy);

    let decode = |r: usize| (r / (nry * nrz), (r / nrz) % nry, r % nrz);
    let points_for = |r: usize| -> Vec<Vector3<f64>> {
        let (i, j, k) = decode(r);
        let rot = Rotation3::from_euler_angles(
            space.rx.value(window.rx[i]).to_radians(),
            space.ry.value(window.ry[j]).to_radians(),
            space.rz.value(window.rz[k]).to_radians(),
        );
        let ar = a * rot.matrix();
        rel.iter().map(|p| ar * p + t_d).collect()
    };
    let score_x = |q: &[Vector3<f64>], x: f64| -> f64 {
        let mut s = 0.0;
        for p0 in q {
            let p = p0 + x * b;
            if p.z > 0.0 {
                s += map.sample(fx * p.x / p.z + cx, fy * p.y / p.z + cy);
            }
        }
        s
    };
    let best_in_rotation = |r: usize| -> (usize, f64) {
        let q = points_for(r);
        let mut best = (0usize, f64::NEG_INFINITY);
        for (k, &x) in xs.iter().enumerate() {
            let s = score_x(&q, x);
            if s > best.1 {
                best = (k, s);
            }
        }
        best
    };
    let (r, score) = par::argmax_indexed(exec, n_rot, |r| best_in_rotation(r).1)?;
    let (k, _) = best_in_rotation(r);
    let (i, j, l) = decode(r);
    Some((
        space.index(window.x[k], window.rx[i], window.ry[j], window.rz[l]),
        score,
    ))
}

fn finish(
    space: &NeedleSearchSpace,
    model: &NeedleModel,
    found: Option<(usize, f64)>,
) -> Result<NeedleDetection, VisionError> {
    match found {
        Some((index, score)) if score > 0.0 => {
            let grip = space.candidate(index);
            Ok(NeedleDetection {
                grip,
                pose: model.driver_to_needle_framed(&grip, FrameId::driver(0)),
                score,
                index,
            })
        }
        _ => Err(VisionError::NoCandidateVisible),
    }
}

/// Local continuous refinement of a grid detection: a compass search on
/// [`score_candidate`] starting from `start`, with per-axis steps starting
/// at half the grid resolution and halved `halvings` times. Only strict
/// improvements are accepted, so the result scores at least as well as
/// `start`.
pub fn refine_needle_grip(
    map: &FeatureMap,
    camera: &CameraModel,
    cam_driver: &Pose,
    model: &NeedleModel,
    start: &NeedleGrip,
    resolution: [f64; 4],
    halvings: usize,
) -> (NeedleGrip, f64) {
    let score = |g: &[f64; 4]| score_candidate(map, camera, cam_driver, model, &NeedleGrip::new(g[0], g[1], g[2], g[3]));
    let mut best = start.as_array();
    let mut best_score = score(&best);
    let mut step = resolution.map(|r| r / 2.0);
    for _ in 0..=halvings {
        let mut improved = true;
        while improved {
            improved = false;
            for axis in 0..4 {
                for sign in [1.0, -1.0] {
                    let mut g = best;
                    g[axis] += sign * step[axis];
                    let s = score(&g);
                    if s > best_score {
                        best = g;
                        best_score = s;
                        improved = true;
                    }
                }
            }
        }
        step = step.map(|x| x / 2.0);
    }
    (NeedleGrip::new(best[0], best[1], best[2], best[3]), best_score)
}

/// Exhaustive search of the grip grid for the candidate whose projected
/// model points collect the most feature response.
///
/// Ties go to the lowest candidate index. The returned pose is labelled
/// with driver 0; relabel with [`FramedPose`] frames as needed.
pub fn detect_needle(
    map: &FeatureMap,
    camera: &CameraModel,
    cam_driver: &Pose,
    model: &NeedleModel,
    space: &NeedleSearchSpace,
    exec: Execution,
) -> Result<NeedleDetection, VisionError> {
    let window = Window {
        x: (0..space.x.count()).collect(),
        rx: (0..space.rx.count()).collect(),
        ry: (0..space.ry.count()).collect(),
        rz: (0..space.rz.count()).collect(),
    };
    finish(space, model, scan(map, camera, cam_driver, model, space, &window, exec))
}

/// Exhaustive search restricted to the grid cells within `half_width`
/// steps (per axis) of the candidate nearest `prior`, clipped to the
/// bounds. Used when the grip is approximately known, e.g. after a
/// commanded hand-over.
pub fn detect_needle_windowed(
    map: &FeatureMap,
    camera: &CameraModel,
    cam_driver: &Pose,
    model: &NeedleModel,
    space: &NeedleSearchSpace,
    prior: &NeedleGrip,
    half_width: [usize; 4],
    exec: Execution,
) -> Result<NeedleDetection, VisionError> {
    let axes = space.axes();
    let centre = [
        space.x.nearest(prior.x_mm),
        space.rx.nearest(prior.rx_deg),
        space.ry.nearest(prior.ry_deg),
        space.rz.nearest(prior.rz_deg),
    ];
    let range = |k: usize| -> Vec<usize> {
        let lo = centre[k].saturating_sub(half_width[k]);
        let hi = (centre[k] + half_width[k]).min(axes[k].count() - 1);
        (lo..=hi).collect()
    };
    let w = Window {
        x: range(0),
        rx: range(1),
        ry: range(2),
        rz: range(3),
    };
    finish(space, model, scan(map, camera, cam_driver, model, space, &w, exec))
}
