//! Mandrel designs, frame bookkeeping, servoing and the simulated
//! three-robot sewing cell.

mod design;
mod failure;
mod frames;
mod metrics;
mod sim;
mod stitch;
mod tension;

pub use design::{surface_frame, MandrelDesign, ProfileKind, SurfaceProfile};
pub use failure::{classify_failure, CycleTrace, FailureCause, Outcome, StitchRecord};
pub use frames::{
    delivery_plan, mandrel_delivery_error, needle_to_driver_target, register_slot0, servo_step,
    ServoCommand, ServoConfig,
};
pub use metrics::{compute_metrics, Metrics, SummaryStats};
pub use sim::{
    CellConfig, CellSimulator, CellState, Driver, NoiseConfig, PunctureOutcome,
    DRIVER_A, DRIVER_B,
};
pub use stitch::{StitchGeometry, StitchSite};
pub use tension::{pull_until_tension, TensionModel, TensionOutcome};

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::lfd::LfdError;
use crate::vision::VisionError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CellError {
    #[error(transparent)]
    Frame(#[from] GeometryError),
    #[error("unknown slot {0}")]
    UnknownSlot(usize),
    #[error("target unobservable")]
    TargetUnobservable,
    #[error("thread break: tension {tension:.3} reached the break limit {limit}")]
    ThreadBreak { tension: f64, limit: f64 },
    #[error("no stitch records")]
    EmptyInput,
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid references: {0}")]
    InvalidReferences(String),
    #[error(transparent)]
    Lfd(#[from] LfdError),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error("i/o: {0}")]
    Io(String),
}
