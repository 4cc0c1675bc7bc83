//! Simulated camera, marker tracking with forward-backward validation,
//! perspective-n-point, constrained needle detection and double-rate
//! Kalman smoothing.

mod camera;
mod kalman;
mod needle;
mod pnp;
mod tracking;

pub use camera::{homogeneous_project, CameraModel, Projection, DEFAULT_FOCAL_PX};
pub use kalman::{DoubleRateKalman, KalmanConfig};
pub use needle::{
    refine_needle_grip,
    detect_needle, detect_needle_windowed, render_needle_features, score_candidate,
    ClutterModel, FeatureMap, GridAxis, NeedleDetection, NeedleGrip, NeedleModel,
    NeedleSearchSpace, DEFAULT_RESOLUTION, SEARCH_BOUNDS,
};
pub use pnp::{
    estimate_marker_pose, observe_assembly, AssemblyObservation, MarkerAssembly, MarkerGeometry,
    MarkerNoise, PnpSolution, MIN_VISIBLE_POINTS,
};
pub use tracking::{
    track_forward_backward, CornerError, MarkerTrack, TrackingNoise, DEFAULT_TAU_PX,
};

use thiserror::Error;

use crate::geometry::FrameId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisionError {
    #[error("need at least 4 corners, got {0}")]
    TooFewCorners(usize),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("no needle candidate projects into the image")]
    NoCandidateVisible,
    #[error("no marker of {0} is visible")]
    NoMarkerVisible(FrameId),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
