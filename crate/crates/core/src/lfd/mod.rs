//! Learning from demonstration: segmentation into motion primitives, DTW
//! alignment, GMM encoding over `(t, h)`, GMR retrieval and context-aware
//! playback speed.
//!
//! Pose vectors `h` are `[x, y, z, alpha, beta, theta]` with translation in
//! metres and angles in degrees (the units of the variance thresholds in
//! [`context_profile`]).

mod context;
mod demo;
mod dtw;
mod gmm;
mod gmr;
mod reference;

pub use context::{context_profile, speed_ratio, ContextProfile};
pub use demo::{
    concatenate, learning_stream, pose_to_vec, primitive_frame, primitive_streams, segment,
    vec_to_pose, Demonstration, Holder, Jaw, PoseVec, PrimitiveSegment, Stream, TrajectorySample,
    PRIMITIVE_STATES,
};
pub use dtw::{dtw, dtw_align, local_distance, DtwResult, ROTATION_WEIGHT_M_PER_DEG};
pub use gmm::{
    fit_gmm, fit_gmm_traced, select_k, select_k_scored, GmmModel, GmmOptions, Point7,
    EPSILON_FACTOR,
};
pub use gmr::{gmr, gmr_weights, GmrOutput};
pub use reference::{build_reference, ModelFile, ReferenceSample, ReferenceTrajectory};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LfdError {
    #[error("malformed demonstration: {0}")]
    MalformedDemonstration(String),
    #[error("empty stream: {0}")]
    EmptyStream(String),
    #[error("too few points: need {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("singular component {0}")]
    SingularComponent(usize),
    #[error("too few demonstrations: need at least 2, got {0}")]
    TooFewDemos(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o: {0}")]
    Io(String),
}
