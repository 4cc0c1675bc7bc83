//! Deterministic tick-loop simulation of the sewing cell: camera, mandrel
//! robot and two needle drivers servoed along learned references.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{FrameId, FramedPose, Pose};
use crate::lfd::{primitive_frame, vec_to_pose, Jaw, ReferenceTrajectory};
use crate::par::Execution;
use crate::vision::{
    detect_needle, detect_needle_windowed, observe_assembly, refine_needle_grip, render_needle_features, CameraModel,
    ClutterModel, DoubleRateKalman, KalmanConfig, MarkerAssembly, MarkerNoise, NeedleDetection,
    NeedleGrip, NeedleModel, NeedleSearchSpace, TrackingNoise, DEFAULT_RESOLUTION, DEFAULT_TAU_PX,
};

use super::{
    mandrel_delivery_error, pull_until_tension, register_slot0, servo_step, CellError, CycleTrace,
    MandrelDesign, ServoConfig, StitchRecord, StitchSite, TensionModel, TensionOutcome,
};

pub const DRIVER_A: usize = 0;
pub const DRIVER_B: usize = 1;

/// Model points scored by the continuous detection refinement; denser
/// than the grid model so sub-pixel sampling biases average out.
const REFINE_MODEL_POINTS: usize = 91;

/// Interpolated points per reference interval of the reference tip path.
const REFERENCE_PATH_SUBDIVISION: usize = 10;

/// Sources of randomness in the cell. All zero is the noiseless cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Pixel noise of marker corner projections (px).
    pub pixel_sigma_px: f64,
    /// Round-trip error of well-tracked corners (px).
    pub round_trip_sigma_px: f64,
    /// Fraction of corners lost by the tracker.
    pub outlier_rate: f64,
    /// Forward-backward gate threshold (px).
    pub tau_px: f64,
    /// Grip perturbation per hand-over and per completed cycle (deg per
    /// axis, and mm along the jaws).
    pub grip_drift_deg: f64,
    pub grip_drift_mm: f64,
    /// Background clutter in the needle feature map.
    pub clutter_level: f64,
    /// Fabric height above the designed surface, per attempt (mm).
    pub fabric_height_sigma_mm: f64,
    /// Axial stent-wire offset from the slot centre, per attempt (mm).
    pub wire_offset_sigma_mm: f64,
    /// Probability of dropping the needle at each hand-over.
    pub grip_loss_prob: f64,
    /// Probability of a thread-entangling event per stitch.
    pub entangle_prob: f64,
    /// Robot motion error per servo sub-tick while moving.
    pub actuation_sigma_mm: f64,
    pub actuation_sigma_deg: f64,
    /// Tension sensor noise.
    pub tension_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig::none()
    }
}

impl NoiseConfig {
    pub const PRESETS: [&'static str; 3] = ["none", "desk", "paper"];

    pub fn none() -> Self {
        NoiseConfig {
            pixel_sigma_px: 0.0,
            round_trip_sigma_px: 0.0,
            outlier_rate: 0.0,
            tau_px: DEFAULT_TAU_PX,
            grip_drift_deg: 0.0,
            grip_drift_mm: 0.0,
            clutter_level: 0.0,
            fabric_height_sigma_mm: 0.0,
            wire_offset_sigma_mm: 0.0,
            grip_loss_prob: 0.0,
            entangle_prob: 0.0,
            actuation_sigma_mm: 0.0,
            actuation_sigma_deg: 0.0,
            tension_sigma: 0.0,
        }
    }

    /// Bench-top sensing noise: 0.5 px pixel noise, 0.5 deg grip drift per
    /// hand-over, 1% tracking outliers.
    pub fn desk() -> Self {
        NoiseConfig {
            pixel_sigma_px: 0.5,
            round_trip_sigma_px: 0.2,
            outlier_rate: 0.01,
            grip_drift_deg: 0.5,
            grip_drift_mm: 0.1,
            ..NoiseConfig::none()
        }
    }

    /// Desk noise plus fabric, stent and thread disturbances, tuned so all
    /// four failure causes occur.
    pub fn paper() -> Self {
        NoiseConfig {
            clutter_level: 0.1,
            fabric_height_sigma_mm: 0.03,
            wire_offset_sigma_mm: 0.2,
            grip_loss_prob: 0.005,
            entangle_prob: 0.015,
            tension_sigma: 0.05,
            ..NoiseConfig::desk()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "none" => Some(NoiseConfig::none()),
            "desk" => Some(NoiseConfig::desk()),
            "paper" => Some(NoiseConfig::paper()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), CellError> {
        let sigmas = [
            ("pixel_sigma_px", self.pixel_sigma_px),
            ("round_trip_sigma_px", self.round_trip_sigma_px),
            ("grip_drift_deg", self.grip_drift_deg),
            ("grip_drift_mm", self.grip_drift_mm),
            ("clutter_level", self.clutter_level),
            ("fabric_height_sigma_mm", self.fabric_height_sigma_mm),
            ("wire_offset_sigma_mm", self.wire_offset_sigma_mm),
            ("actuation_sigma_mm", self.actuation_sigma_mm),
            ("actuation_sigma_deg", self.actuation_sigma_deg),
            ("tension_sigma", self.tension_sigma),
        ];
        for (name, v) in sigmas {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CellError::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        for (name, p) in [
            ("outlier_rate", self.outlier_rate),
            ("grip_loss_prob", self.grip_loss_prob),
            ("entangle_prob", self.entangle_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CellError::InvalidConfig(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.tau_px > 0.0) {
            return Err(CellError::InvalidConfig("tau_px must be positive".into()));
        }
        Ok(())
    }

    fn marker_noise(&self) -> MarkerNoise {
        MarkerNoise {
            pixel_sigma: self.pixel_sigma_px,
            tau_px: self.tau_px,
            tracking: TrackingNoise {
                round_trip_sigma_px: self.round_trip_sigma_px,
                outlier_rate: self.outlier_rate,
                ..TrackingNoise::none()
            },
        }
    }
}

/// Cell geometry, timing and controller settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellConfig {
    pub image_width: u32,
    pub image_height: u32,
    pub fps: f64,
    /// Distance from the camera to the presented slot (mm).
    pub camera_distance_mm: f64,
    /// Tilt of the presented slot about its y axis, so that the stitch
    /// plane (slot y-z) is viewed obliquely rather than edge-on (deg).
    pub camera_tilt_deg: f64,
    pub servo: ServoConfig,
    pub kalman: KalmanConfig,
    /// Servo sub-ticks per camera frame.
    pub servo_substeps: usize,
    /// Sub-tick caps per reference sample: first sample of a primitive
    /// (transit), intermediate samples and the final sample.
    pub transit_max_substeps: usize,
    pub sample_max_substeps: usize,
    pub final_max_substeps: usize,
    pub needle_diameter_mm: f64,
    pub needle_model_points: usize,
    /// Arc parameter of the nominal grip of drivers A and B.
    pub grip_arc_a_deg: f64,
    pub grip_arc_b_deg: f64,
    pub search_resolution: [f64; 4],
    /// Step halvings of the continuous refinement after the grid search
    /// (0 keeps the grid candidate).
    pub refine_halvings: usize,
    /// Half-width (grid steps) of the windowed needle search.
    pub window_half_width: [usize; 4],
    /// Least detection score, as a fraction of the model points.
    pub min_detection_score: f64,
    /// Largest needle offset from the closing jaws that still grasps (mm).
    pub jaw_tolerance_mm: f64,
    pub wire_radius_mm: f64,
    pub needle_wire_radius_mm: f64,
    pub tension: TensionModel,
    /// `mH_s` of the slot the demonstrations were recorded on.
    pub demo_slot_pose: Pose,
    /// Camera frames averaged per mandrel observation.
    pub mandrel_frames: usize,
    /// Look-and-move iterations of slot delivery.
    pub delivery_iterations: usize,
    /// Seconds per mandrel delivery move.
    pub delivery_move_s: f64,
    /// Optional joint limit of the primitive-1 driver: largest rotation
    /// in the positive sense about the driver y axis, relative to the
    /// zero-grip orientation (deg); grips rotated the negative way about
    /// their y axis push the driver towards it. Commanded poses beyond it are clipped.
    pub reach_limit_deg: Option<f64>,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig {
            image_width: 640,
            image_height: 480,
            fps: 20.0,
            camera_distance_mm: 500.0,
            camera_tilt_deg: 40.0,
            servo: ServoConfig::default(),
            // servo increments enter the filter as known control, so the
            // residual process noise is only the small actuation error
            kalman: KalmanConfig {
                accel_psd: 1e-3,
                angular_accel_psd: 1e-7,
                position_sigma: 0.5,
                rotation_sigma: 0.005,
                fast_rate_hz: 100.0,
            },
            servo_substeps: 5,
            transit_max_substeps: 1000,
            sample_max_substeps: 20,
            final_max_substeps: 200,
            needle_diameter_mm: 8.0,
            needle_model_points: 10,
            grip_arc_a_deg: 30.0,
            grip_arc_b_deg: 150.0,
            search_resolution: DEFAULT_RESOLUTION,
            refine_halvings: 6,
            window_half_width: [4, 4, 4, 4],
            min_detection_score: 0.5,
            jaw_tolerance_mm: 1.0,
            wire_radius_mm: 0.15,
            needle_wire_radius_mm: 0.15,
            tension: TensionModel::default(),
            demo_slot_pose: MandrelDesign::shipped("A").expect("design A").slots[0],
            mandrel_frames: 20,
            delivery_iterations: 2,
            delivery_move_s: 1.0,
            reach_limit_deg: None,
        }
    }
}

impl CellConfig {
    pub fn camera(&self) -> CameraModel {
        CameraModel::new(self.image_width, self.image_height, self.fps)
    }

    pub fn substep_dt(&self) -> f64 {
        1.0 / (self.fps * self.servo_substeps as f64)
    }

    pub fn touch_distance_mm(&self) -> f64 {
        self.wire_radius_mm + self.needle_wire_radius_mm
    }

    pub fn needle_model(&self, driver: usize) -> NeedleModel {
        let mut m = NeedleModel::new(self.needle_diameter_mm, self.needle_model_points);
        m.grip_arc_deg = if driver == DRIVER_A {
            self.grip_arc_a_deg
        } else {
            self.grip_arc_b_deg
        };
        m
    }

    pub fn validate(&self) -> Result<(), CellError> {
        self.camera().validate()?;
        NeedleSearchSpace::with_resolution(self.search_resolution)?;
        self.tension.validate()?;
        let ok = self.camera_distance_mm > 0.0
            && self.camera_tilt_deg.abs() < 80.0
            && self.servo_substeps > 0
            && self.transit_max_substeps > 0
            && self.sample_max_substeps > 0
            && self.final_max_substeps > 0
            && self.needle_diameter_mm > 0.0
            && self.needle_model_points >= 2
            && self.servo.gain > 0.0
            && self.servo.gain <= 1.0
            && self.jaw_tolerance_mm > 0.0
            && self.mandrel_frames > 0
            && (0.0..=1.0).contains(&self.min_detection_score);
        if !ok {
            return Err(CellError::InvalidConfig("cell configuration out of range".into()));
        }
        Ok(())
    }
}

/// One needle driver: true pose, tracking filter, jaw and grip estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Driver {
    /// True `cH_d`.
    pub pose: Pose,
    pub filter: DoubleRateKalman,
    pub jaw: Jaw,
    /// Most recent detected grip.
    pub grip_estimate: Option<NeedleGrip>,
}

impl Driver {
    /// Filtered pose estimate `cx_d`.
    pub fn estimate(&self) -> Pose {
        self.filter.pose()
    }
}

/// Complete simulator state; cloned as the rollback snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub clock_s: f64,
    /// True `cH_m`.
    pub mandrel_pose: Pose,
    /// Observed `cx_m` after the latest delivery.
    pub mandrel_estimate: Pose,
    /// Registered `cx_s0`.
    pub cam_slot0: Pose,
    pub drivers: [Driver; 2],
    /// Driver holding the needle.
    pub holder: usize,
    /// True `dH_n` of the holder.
    pub grip: Pose,
    /// Slot of the next stitch.
    pub slot: usize,
    pub primitive: usize,
    pub subtick: u64,
}

impl CellState {
    /// True `cH_n`.
    pub fn needle_pose(&self) -> Pose {
        self.drivers[self.holder].pose.compose(&self.grip)
    }
}

/// One reference sample as a servo target.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Target {
    /// Pose in the primitive frame (slot frame for primitives 1-3).
    pose: Pose,
    /// Time allotted to reach the sample (s).
    dwell_s: f64,
}

/// Result of one puncture-bench trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PunctureOutcome {
    pub grip: NeedleGrip,
    pub detected: Option<NeedleGrip>,
    /// Executed and reference pierce-in points in the slot frame.
    pub pierce_in: Option<[f64; 3]>,
    pub reference_pierce_in: [f64; 3],
    /// Distance between the two (absent if the needle never pierced).
    pub error_mm: Option<f64>,
    /// The reachability limit clipped at least one commanded pose.
    pub reach_limited: bool,
}

/// The simulated cell executing learned references on a mandrel design.
#[derive(Debug, Clone)]
pub struct CellSimulator {
    pub design: MandrelDesign,
    pub config: CellConfig,
    pub noise: NoiseConfig,
    pub state: CellState,
    /// Execution mode of the needle grid search (sequential by default:
    /// one simulation per thread).
    pub exec: Execution,
    camera: CameraModel,
    targets: Vec<Vec<Target>>,
    needle_models: [NeedleModel; 2],
    assemblies: [MarkerAssembly; 2],
    collar: MarkerAssembly,
    space: NeedleSearchSpace,
    marker_noise: MarkerNoise,
    rng: ChaCha8Rng,
    /// No grip estimate is trusted yet: search the whole grid.
    needs_full_scan: bool,
    reach_limited: bool,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        0.0
    }
}

/// Canonical camera pose of the presented slot: `distance` along the
/// optical axis, slot normal facing the camera, tilted by `tilt_deg`
/// about the slot y axis.
fn presented_slot_pose(distance: f64, tilt_deg: f64) -> Pose {
    Pose::from_translation(0.0, 0.0, distance)
        .compose(&Pose::rot_x_deg(180.0))
        .compose(&Pose::rot_y_deg(tilt_deg))
}


impl CellSimulator {
    /// Builds the cell with design slot 0 presented to the camera, the
    /// needle held by driver A at the nominal grip at the start of
    /// primitive 1 and driver B parked at its primitive-2 start.
    pub fn new(
        design: MandrelDesign,
        references: &[ReferenceTrajectory],
        config: CellConfig,
        noise: NoiseConfig,
        seed: u64,
    ) -> Result<Self, CellError> {
        design.validate()?;
        config.validate()?;
        noise.validate()?;
        let targets = Self::targets_from_references(references, &config.demo_slot_pose)?;
        let camera = config.camera();
        let needle_models = [config.needle_model(DRIVER_A), config.needle_model(DRIVER_B)];
        let assemblies = [
            // ring about the tool axis plus a cap on the jaw side, so the
            // driver stays observable when its axis points at the camera
            MarkerAssembly::ring(FrameId::driver(0), 100, 5, 14.0, Vector3::x(), 22.0)
                .with_cap(105, Vector3::new(8.0, 0.0, 0.0), -Vector3::x()),
            MarkerAssembly::ring(FrameId::driver(1), 200, 5, 14.0, Vector3::x(), -22.0)
                .with_cap(205, Vector3::new(-8.0, 0.0, 0.0), Vector3::x()),
        ];
        let max_r = design
            .profile
            .diameters_mm
            .iter()
            .cloned()
            .fold(0.0, f64::max)
            / 2.0;
        let collar = MarkerAssembly::ring(
            FrameId::MANDREL,
            0,
            8,
            max_r + 4.0,
            Vector3::z(),
            design.profile.length_mm / 2.0 - 16.0,
        );
        let space = NeedleSearchSpace::with_resolution(config.search_resolution)?;
        let s0 = presented_slot_pose(config.camera_distance_mm, config.camera_tilt_deg);
        let mandrel_pose = s0.compose(&design.slots[0].inverse());
        let grip = needle_models[DRIVER_A].driver_to_needle(&NeedleGrip::default());
        let needle = s0.compose(&targets[0][0].pose);
        let b_pose = s0.compose(&targets[1][0].pose);
        let driver = |pose: Pose, jaw: Jaw| Driver {
            pose,
            filter: DoubleRateKalman::new(config.kalman),
            jaw,
            grip_estimate: None,
        };
        let state = CellState {
            clock_s: 0.0,
            mandrel_pose,
            mandrel_estimate: mandrel_pose,
            cam_slot0: s0,
            drivers: [
                driver(needle.compose(&grip.inverse()), Jaw::Closed),
                driver(b_pose, Jaw::Open),
            ],
            holder: DRIVER_A,
            grip,
            slot: 0,
            primitive: 1,
            subtick: 0,
        };
        let mut sim = CellSimulator {
            design,
            marker_noise: noise.marker_noise(),
            config,
            noise,
            state,
            exec: Execution::Sequential,
            camera,
            targets,
            needle_models,
            assemblies,
            collar,
            space,
            rng: ChaCha8Rng::seed_from_u64(seed),
            needs_full_scan: true,
            reach_limited: false,
        };
        sim.register()?;
        Ok(sim)
    }

    /// Replaces driver A's grip, keeping the needle where it is.
    pub fn with_initial_grip(mut self, grip: NeedleGrip) -> Self {
        let needle = self.state.needle_pose();
        self.state.grip = self.needle_models[DRIVER_A].driver_to_needle(&grip);
        self.state.drivers[DRIVER_A].pose = needle.compose(&self.state.grip.inverse());
        self
    }

    fn targets_from_references(
        references: &[ReferenceTrajectory],
        demo_slot: &Pose,
    ) -> Result<Vec<Vec<Target>>, CellError> {
        if references.len() != 5 {
            return Err(CellError::InvalidReferences(format!(
                "need 5 references, got {}",
                references.len()
            )));
        }
        let slot_inv = demo_slot.inverse();
        references
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let index = k + 1;
                if r.primitive_index != index || r.frame != primitive_frame(index) {
                    return Err(CellError::InvalidReferences(format!(
                        "reference {k} is primitive {} in frame {}, expected {index} in {}",
                        r.primitive_index,
                        r.frame,
                        primitive_frame(index)
                    )));
                }
                if r.samples.is_empty() {
                    return Err(CellError::InvalidReferences(format!("primitive {index} has no samples")));
                }
                Ok(r.samples
                    .iter()
                    .enumerate()
                    .map(|(j, s)| {
                        let p = vec_to_pose(&s.h());
                        Target {
                            pose: if index <= 3 { slot_inv.compose(&p) } else { p },
                            dwell_s: if j == 0 { 0.0 } else { s.t - r.samples[j - 1].t },
                        }
                    })
                    .collect())
            })
            .collect()
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn needle_model(&self, driver: usize) -> &NeedleModel {
        &self.needle_models[driver]
    }

    /// The primitive-1 needle path of the reference in the slot frame.
    pub fn reference_needle_path(&self) -> Vec<Pose> {
        self.targets[0].iter().map(|t| t.pose).collect()
    }

    fn frame_dt(&self) -> f64 {
        1.0 / self.config.fps
    }

    fn observe_driver(&mut self, d: usize) -> Option<Pose> {
        observe_assembly(
            &self.camera,
            &self.state.drivers[d].pose,
            &self.assemblies[d],
            &self.marker_noise,
            &mut self.rng,
        )
        .ok()
        .map(|o| o.pose.pose)
    }

    /// One camera frame of driver `d` with a filter correction.
    fn refresh_driver(&mut self, d: usize) {
        let z = self.observe_driver(d);
        let dt = self.frame_dt();
        self.state.drivers[d].filter.kalman_step(dt, z.as_ref());
        self.state.clock_s += dt;
    }

    /// Averages `mandrel_frames` observations of the static mandrel.
    fn observe_mandrel(&mut self) -> Result<Pose, CellError> {
        let mut filter = DoubleRateKalman::new(self.config.kalman);
        let dt = self.frame_dt();
        for _ in 0..self.config.mandrel_frames {
            let z = observe_assembly(
                &self.camera,
                &self.state.mandrel_pose,
                &self.collar,
                &self.marker_noise,
                &mut self.rng,
            )
            .ok()
            .map(|o| o.pose.pose);
            filter.kalman_step(dt, z.as_ref());
            self.state.clock_s += dt;
        }
        if !filter.is_initialized() {
            return Err(CellError::TargetUnobservable);
        }
        Ok(filter.pose())
    }

    /// Registration of slot 0 from an observation of the mandrel at
    /// its home pose.
    fn register(&mut self) -> Result<(), CellError> {
        let est = self.observe_mandrel()?;
        let cam_m = FramedPose::constant(FrameId::CAMERA, FrameId::MANDREL, est);
        self.state.cam_slot0 = register_slot0(&cam_m, &self.design.slot(0)?)?.pose;
        self.state.mandrel_estimate = est;
        Ok(())
    }

    /// Look-and-move delivery of slot `i` to the registered pose.
    pub fn deliver_slot(&mut self, i: usize) -> Result<(), CellError> {
        for _ in 0..self.config.delivery_iterations {
            let est = self.observe_mandrel()?;
            let err = mandrel_delivery_error(&est, &self.state.cam_slot0, &self.design, i)?;
            self.state.mandrel_pose = self.state.mandrel_pose.compose(&err);
            self.state.clock_s += self.config.delivery_move_s;
        }
        self.state.mandrel_estimate = self.observe_mandrel()?;
        Ok(())
    }

    /// Estimated `cx_s_i` of the delivered slot.
    fn slot_estimate(&self, i: usize) -> Pose {
        self.state.mandrel_estimate.compose(&self.design.slots[i])
    }

    /// True `cH_s_i`.
    fn slot_truth(&self, i: usize) -> Pose {
        self.state.mandrel_pose.compose(&self.design.slots[i])
    }

    /// Detects the needle in driver `d`'s jaws. `prior` restricts the
    /// search to a window around it; `None` scans the whole grid.
    fn detect(&mut self, d: usize, prior: Option<NeedleGrip>) -> Option<NeedleDetection> {
        self.refresh_driver(d);
        let clutter = if self.noise.clutter_level > 0.0 {
            ClutterModel::with_level(self.noise.clutter_level, self.rng.gen())
        } else {
            ClutterModel::none()
        };
        let needle = self.state.needle_pose();
        let model = &self.needle_models[d];
        let map = render_needle_features(&self.camera, &needle, model, &clutter);
        let cam_driver = self.state.drivers[d].estimate();
        let result = match prior {
            None => detect_needle(&map, &self.camera, &cam_driver, model, &self.space, self.exec),
            Some(p) => detect_needle_windowed(
                &map,
                &self.camera,
                &cam_driver,
                model,
                &self.space,
                &p,
                self.config.window_half_width,
                self.exec,
            ),
        };
        let min = self.config.min_detection_score * model.points.len() as f64;
        match result {
            Ok(mut det) if det.score >= min => {
                if self.config.refine_halvings > 0 {
                    let mut dense = model.clone();
                    dense.points = NeedleModel::new(self.config.needle_diameter_mm, REFINE_MODEL_POINTS).points;
                    let (grip, score) = refine_needle_grip(
                        &map,
                        &self.camera,
                        &cam_driver,
                        &dense,
                        &det.grip,
                        self.space.resolution(),
                        self.config.refine_halvings,
                    );
                    det.grip = grip;
                    det.score = score * model.points.len() as f64 / REFINE_MODEL_POINTS as f64;
                    det.pose = model.driver_to_needle_framed(&grip, FrameId::driver(d as u16));
                }
                self.state.drivers[d].grip_estimate = Some(det.grip);
                Some(det)
            }
            _ => None,
        }
    }

    fn grip_estimate_pose(&self, d: usize) -> Pose {
        let g = self.state.drivers[d].grip_estimate.unwrap_or_default();
        self.needle_models[d].driver_to_needle(&g)
    }

    fn drift<R: Rng + ?Sized>(noise: &NoiseConfig, grip: NeedleGrip, rng: &mut R) -> NeedleGrip {
        NeedleGrip::new(
            grip.x_mm + gaussian(rng, noise.grip_drift_mm),
            grip.rx_deg + gaussian(rng, noise.grip_drift_deg),
            grip.ry_deg + gaussian(rng, noise.grip_drift_deg),
            grip.rz_deg + gaussian(rng, noise.grip_drift_deg),
        )
    }

    /// Grip parameters of a driver-to-needle transform whose grip point
    /// lies on the jaw axis.
    fn grip_params(&self, d: usize, driver_needle: &Pose) -> NeedleGrip {
        let q = driver_needle.transform_point(&self.needle_models[d].grip_point());
        let [rz, ry, rx] = driver_needle.euler_deg();
        NeedleGrip::new(q.x, rx, ry, rz)
    }

    /// Applies the reachability limit to a desired driver pose.
    fn reach_clamp(&mut self, desired: Pose, needle_target: &Pose, d: usize) -> Pose {
        let Some(cap) = self.config.reach_limit_deg else {
            return desired;
        };
        let home = needle_target.compose(&self.needle_models[d].driver_to_needle(&NeedleGrip::default()).inverse());
        let rel = home.inverse().compose(&desired);
        let [a, b, c] = rel.euler_deg();
        if b <= cap {
            return desired;
        }
        self.reach_limited = true;
        let t = rel.translation();
        home.compose(&Pose::from_euler_deg([t.x, t.y, t.z], [a, cap, c]))
    }

    /// Moves driver `d` by `increment` (driver frame) with actuation noise.
    fn actuate(&mut self, d: usize, increment: &Pose) {
        let mut motion = *increment;
        if self.noise.actuation_sigma_mm > 0.0 || self.noise.actuation_sigma_deg > 0.0 {
            let sm = self.noise.actuation_sigma_mm;
            let sr = self.noise.actuation_sigma_deg.to_radians();
            let rng = &mut self.rng;
            let t = Vector3::new(gaussian(rng, sm), gaussian(rng, sm), gaussian(rng, sm));
            let w = Vector3::new(gaussian(rng, sr), gaussian(rng, sr), gaussian(rng, sr));
            motion = motion.compose(&Pose::from_rotation_vector(t, w));
        }
        let drv = &mut self.state.drivers[d];
        drv.pose = drv.pose.compose(&motion);
    }

    /// Servos driver `d` through a primitive's reference. `anchor` is the
    /// camera pose of the primitive frame and `post` the transform from
    /// the learned object to the driver. `site` enables stitch bookkeeping.
    fn execute(
        &mut self,
        k: usize,
        d: usize,
        anchor: &Pose,
        post: &Pose,
        site: Option<&StitchSite>,
        tip_path: &mut Vec<Vector3<f64>>,
        trace: &mut CycleTrace,
    ) {
        self.state.primitive = k;
        assert_eq!(self.state.drivers[self.state.holder].jaw, Jaw::Closed, "the holder's jaw is closed");
        let dt = self.config.substep_dt();
        let n = self.targets[k - 1].len();
        let moves_needle = d == self.state.holder;
        let arc: Vec<Vector3<f64>> = (0..=36)
            .map(|i| self.needle_models[DRIVER_A].point_at(std::f64::consts::PI * i as f64 / 36.0))
            .collect();
        let slot_truth_inv = self.slot_truth(trace.slot).inverse();
        for j in 0..n {
            let tg = self.targets[k - 1][j];
            let needle_target = anchor.compose(&tg.pose);
            let previous = (j > 0).then(|| anchor.compose(&self.targets[k - 1][j - 1].pose));
            let min_sub = (tg.dwell_s / dt).round() as usize;
            let max_sub = if j == 0 {
                self.config.transit_max_substeps
            } else if j + 1 == n {
                self.config.final_max_substeps
            } else {
                self.config.sample_max_substeps
            }
            .max(min_sub);
            let mut steps = 0;
            loop {
                // the set-point moves along the reference between samples
                let setpoint = match previous {
                    Some(p) if steps < min_sub => p.interpolate(&needle_target, (steps + 1) as f64 / min_sub as f64),
                    _ => needle_target,
                };
                let mut desired = setpoint.compose(post);
                if moves_needle && k == 1 {
                    desired = self.reach_clamp(desired, &setpoint, d);
                }
                let est = self.state.drivers[d].estimate();
                let cmd = servo_step(Some(&est), &desired, &self.config.servo).expect("estimate available");
                if (cmd.converged && steps >= min_sub) || steps >= max_sub {
                    break;
                }
                self.actuate(d, &cmd.increment);
                steps += 1;
                self.state.clock_s += dt;
                self.state.subtick += 1;
                let z = if self.state.subtick % self.config.servo_substeps as u64 == 0 {
                    let z = self.observe_driver(d);
                    if z.is_none() {
                        trace.unobservable_frames += 1;
                    }
                    z
                } else {
                    None
                };
                let control = est.compose(&cmd.increment).compose(&est.inverse());
                self.state.drivers[d]
                    .filter
                    .kalman_step_with_control(dt, Some(&control), z.as_ref());
                if moves_needle {
                    if let Some(site) = site {
                        let needle_s = slot_truth_inv.compose(&self.state.needle_pose());
                        if k == 1 {
                            tip_path.push(needle_s.transform_point(&self.needle_models[DRIVER_A].tip()));
                        }
                        let c = arc
                            .iter()
                            .map(|p| site.wire_clearance(&needle_s.transform_point(p)))
                            .fold(f64::INFINITY, f64::min);
                        trace.min_wire_clearance_mm = trace.min_wire_clearance_mm.min(c);
                    }
                }
            }
            if moves_needle {
                trace.needle_samples[k - 1].push(slot_truth_inv.compose(&self.state.needle_pose()));
            }
        }
    }

    /// Closes `receiver`'s jaw on the needle and, if it grasps, transfers
    /// the needle to it. The jaws centre the needle on the jaw axis.
    fn handover(&mut self, receiver: usize, primitive: usize, trace: &mut CycleTrace) -> bool {
        let giver = 1 - receiver;
        self.state.drivers[receiver].jaw = Jaw::Closed;
        assert!(
            self.state.holder == giver
                && self.state.drivers[giver].jaw == Jaw::Closed
                && self.state.drivers[receiver].jaw == Jaw::Closed,
            "the needle changes hands only with both jaws closed"
        );
        if self.noise.grip_loss_prob > 0.0 && self.rng.gen_bool(self.noise.grip_loss_prob) {
            trace.grip_lost_in = Some(primitive);
            return false;
        }
        let needle = self.state.needle_pose();
        let rel = self.state.drivers[receiver].pose.inverse().compose(&needle);
        let q = rel.transform_point(&self.needle_models[receiver].grip_point());
        if q.y.hypot(q.z) > self.config.jaw_tolerance_mm {
            trace.handover_missed = true;
            return false;
        }
        let snapped = Pose::from_translation(0.0, -q.y, -q.z).compose(&rel);
        let grip = Self::drift(&self.noise, self.grip_params(receiver, &snapped), &mut self.rng);
        if !self.space.contains(&grip) {
            trace.grip_out_of_bounds = true;
            return false;
        }
        self.state.grip = self.needle_models[receiver].driver_to_needle(&grip);
        self.state.holder = receiver;
        self.state.drivers[giver].jaw = Jaw::Open;
        true
    }

    /// Pulls the thread until the tension threshold (stitch tightening).
    pub fn tighten_stitch(&mut self) -> Result<TensionOutcome, CellError> {
        let model = TensionModel {
            sigma: self.noise.tension_sigma,
            ..self.config.tension
        };
        let out = pull_until_tension(&model, &mut self.rng)?;
        self.state.clock_s += out.pull_mm / model.speed_mm_s;
        Ok(out)
    }

    fn sample_site<'a>(&mut self, design: &'a MandrelDesign, slot: usize) -> StitchSite<'a> {
        StitchSite {
            design,
            slot_pose: design.slots[slot],
            fabric_offset_mm: gaussian(&mut self.rng, self.noise.fabric_height_sigma_mm),
            wire_offset_mm: gaussian(&mut self.rng, self.noise.wire_offset_sigma_mm),
            wire_radius_mm: self.config.wire_radius_mm,
        }
    }

    /// Primitives 1-5 and tightening on the current slot. Returns early
    /// when the needle is lost.
    fn cycle(&mut self, trace: &mut CycleTrace) -> Result<(), CellError> {
        let slot = trace.slot;
        self.deliver_slot(slot)?;
        let design = self.design.clone();
        let site = self.sample_site(&design, slot);
        let mut tip = Vec::new();
        let identity = Pose::identity();

        let prior = if self.needs_full_scan {
            None
        } else {
            Some(self.state.drivers[DRIVER_A].grip_estimate.unwrap_or_default())
        };
        if self.detect(DRIVER_A, prior).is_none() {
            trace.detection_failed = true;
            return Ok(());
        }
        self.needs_full_scan = false;
        let g_a = self.grip_estimate_pose(DRIVER_A);
        let needle_initial = self.state.drivers[DRIVER_A].estimate().compose(&g_a);
        let slot_est = self.slot_estimate(slot);

        self.execute(1, DRIVER_A, &slot_est, &g_a.inverse(), Some(&site), &mut tip, trace);
        if let Some(g) = site.evaluate(&tip) {
            trace.pierce_in = Some(g.pierce_in);
            trace.pierce_out = Some(g.pierce_out);
            trace.stitch_size_mm = Some(g.size_mm);
            trace.capture_offset_mm = Some(g.capture_offset_mm);
        }

        self.execute(2, DRIVER_B, &slot_est, &identity, None, &mut tip, trace);
        if !self.handover(DRIVER_B, 2, trace) {
            return Ok(());
        }
        if self.detect(DRIVER_B, Some(NeedleGrip::default())).is_none() {
            trace.detection_failed = true;
            return Ok(());
        }
        let g_b = self.grip_estimate_pose(DRIVER_B);

        if self.noise.entangle_prob > 0.0 && self.rng.gen_bool(self.noise.entangle_prob) {
            trace.entangled = true;
        }
        self.execute(3, DRIVER_B, &slot_est, &g_b.inverse(), Some(&site), &mut tip, trace);

        let needle_est = self.state.drivers[DRIVER_B].estimate().compose(&g_b);
        self.execute(4, DRIVER_A, &needle_est, &identity, None, &mut tip, trace);
        if !self.handover(DRIVER_A, 4, trace) {
            return Ok(());
        }
        if self.detect(DRIVER_A, Some(NeedleGrip::default())).is_none() {
            trace.detection_failed = true;
            return Ok(());
        }
        let g_a = self.grip_estimate_pose(DRIVER_A);

        self.execute(5, DRIVER_A, &needle_initial, &g_a.inverse(), None, &mut tip, trace);
        trace.pull_mm = Some(self.tighten_stitch()?.pull_mm);
        Ok(())
    }

    /// Runs one stitch cycle on the current slot.
    ///
    /// On success the mandrel advances to the next slot and the grip is
    /// perturbed; on failure the state is restored to the cycle start
    /// (the clock keeps running) and the same slot is retried next. After
    /// a handling failure the needle is re-seated at the nominal grip.
    pub fn run_stitch_cycle(&mut self, trial: usize) -> Result<(StitchRecord, CycleTrace), CellError> {
        let snapshot = self.state.clone();
        let start = self.state.clock_s;
        let slot = self.state.slot;
        let mut trace = CycleTrace::new(slot, self.design.slot_width_mm, self.config.touch_distance_mm());
        self.cycle(&mut trace)?;
        let record = StitchRecord::from_trace(trial, &self.design.id, &trace, self.state.clock_s - start);
        if record.is_success() {
            self.state.slot = (slot + 1) % self.design.n_slots();
            let grip = self.grip_params(DRIVER_A, &self.state.grip);
            let grip = Self::drift(&self.noise, grip, &mut self.rng);
            self.state.grip = self.needle_models[DRIVER_A].driver_to_needle(&grip);
        } else {
            let (clock, subtick) = (self.state.clock_s, self.state.subtick);
            self.state = snapshot;
            self.state.clock_s = clock;
            self.state.subtick = subtick;
            if trace.handling_failed() {
                let nominal = NeedleGrip::default();
                self.state.grip = self.needle_models[DRIVER_A].driver_to_needle(&nominal);
                self.state.drivers[DRIVER_A].grip_estimate = Some(nominal);
            }
        }
        self.state.primitive = 1;
        Ok((record, trace))
    }

    /// `n` consecutive stitch cycles (trials numbered from 1).
    pub fn run(&mut self, n: usize) -> Result<(Vec<StitchRecord>, Vec<CycleTrace>), CellError> {
        let mut records = Vec::with_capacity(n);
        let mut traces = Vec::with_capacity(n);
        for trial in 1..=n {
            let (r, t) = self.run_stitch_cycle(trial)?;
            records.push(r);
            traces.push(t);
        }
        Ok((records, traces))
    }

    /// Needle tip path of the primitive-1 reference in the slot frame,
    /// interpolated between samples as the servo set-point is.
    pub fn reference_tip_path(&self) -> Vec<Vector3<f64>> {
        let tip = self.needle_models[DRIVER_A].tip();
        let targets = &self.targets[0];
        let mut path = vec![targets[0].pose.transform_point(&tip)];
        for w in targets.windows(2) {
            for i in 1..=REFERENCE_PATH_SUBDIVISION {
                let s = i as f64 / REFERENCE_PATH_SUBDIVISION as f64;
                path.push(w[0].pose.interpolate(&w[1].pose, s).transform_point(&tip));
            }
        }
        path
    }

    /// Stitch size the reference produces on `slot` with the fabric on the
    /// design surface.
    pub fn reference_stitch_size(&self, slot: usize) -> Option<f64> {
        let site = StitchSite::nominal(&self.design, *self.design.slots.get(slot)?, self.config.wire_radius_mm);
        site.evaluate(&self.reference_tip_path()).map(|g| g.size_mm)
    }

    /// Puncture-bench trial: detects the needle with a full grid scan and
    /// servos primitive 1 on slot 0, comparing the pierce-in point with
    /// the reference one.
    pub fn puncture_trial(&mut self) -> Result<PunctureOutcome, CellError> {
        let grip = self.grip_params(DRIVER_A, &self.state.grip);
        self.deliver_slot(0)?;
        let design = self.design.clone();
        let site = StitchSite::nominal(&design, design.slots[0], self.config.wire_radius_mm);
        let reference = site
            .pierce_points(&self.reference_tip_path())
            .ok_or_else(|| CellError::InvalidReferences("primitive 1 never pierces the fabric".into()))?
            .0;
        let mut outcome = PunctureOutcome {
            grip,
            detected: None,
            pierce_in: None,
            reference_pierce_in: reference.into(),
            error_mm: None,
            reach_limited: false,
        };
        let Some(det) = self.detect(DRIVER_A, None) else {
            return Ok(outcome);
        };
        outcome.detected = Some(det.grip);
        let g = self.grip_estimate_pose(DRIVER_A);
        let slot_est = self.slot_estimate(0);
        let mut trace = CycleTrace::new(0, design.slot_width_mm, self.config.touch_distance_mm());
        let mut tip = Vec::new();
        self.reach_limited = false;
        self.execute(1, DRIVER_A, &slot_est, &g.inverse(), Some(&site), &mut tip, &mut trace);
        outcome.reach_limited = self.reach_limited;
        if let Some((a, _)) = site.pierce_points(&tip) {
            outcome.pierce_in = Some(a.into());
            outcome.error_mm = Some((a - reference).norm());
        }
        Ok(outcome)
    }
}
