//! Learning-from-demonstration, look-and-move visual servoing and a
//! deterministic simulated sewing cell.
//!
//! * [`geometry`]: framed rigid poses and point-set registration.
//! * [`lfd`]: demonstration segmentation, DTW, GMM/GMR and speed scheduling.
//! * [`vision`]: simulated camera, marker tracking, needle detection, Kalman smoothing.
//! * [`cell`]: mandrel designs, servoing and the stitch-cycle simulator.
//! * [`pipeline`]: the end-to-end commands behind the CLI.

pub mod cell;
pub mod geometry;
pub mod lfd;
pub mod par;
pub mod pipeline;
pub mod vision;
