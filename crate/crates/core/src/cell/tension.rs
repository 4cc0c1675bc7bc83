//! Tension-controlled stitch tightening.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::CellError;

/// Simulated thread-tension sensor while pulling the thread.
///
/// The reading at pull distance `x` is `ramp_per_mm * x + e` with
/// `e ~ N(0, sigma^2)`, sampled every `step_mm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensionModel {
    /// Stop pulling at the first reading at or above this value.
    pub threshold: f64,
    pub ramp_per_mm: f64,
    pub sigma: f64,
    pub step_mm: f64,
    /// Readings at or above this value break the thread.
    pub break_limit: f64,
    /// Give up if the threshold is not reached within this distance.
    pub max_pull_mm: f64,
    /// Pulling speed, for the cycle clock (mm/s).
    pub speed_mm_s: f64,
}

impl Default for TensionModel {
    fn default() -> Self {
        TensionModel {
            threshold: 1.0,
            ramp_per_mm: 0.1,
            sigma: 0.0,
            step_mm: 0.1,
            break_limit: 3.0,
            max_pull_mm: 100.0,
            speed_mm_s: 20.0,
        }
    }
}

impl TensionModel {
    pub fn validate(&self) -> Result<(), CellError> {
        let ok = self.threshold.is_finite()
            && self.ramp_per_mm.is_finite()
            && self.ramp_per_mm > 0.0
            && self.sigma >= 0.0
            && self.step_mm > 0.0
            && self.max_pull_mm > 0.0
            && self.speed_mm_s > 0.0;
        if !ok {
            return Err(CellError::InvalidConfig("tension model parameters out of range".into()));
        }
        if self.break_limit <= self.threshold {
            return Err(CellError::InvalidConfig(format!(
                "break limit {} must exceed the threshold {}",
                self.break_limit, self.threshold
            )));
        }
        Ok(())
    }
}

/// Where tightening stopped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensionOutcome {
    pub pull_mm: f64,
    /// Reading that stopped the motion.
    pub tension: f64,
    /// Number of readings taken.
    pub readings: usize,
}

/// Pulls until the first reading `>= threshold`.
///
/// Fails with [`CellError::ThreadBreak`] if that reading is at or above the
/// break limit.
pub fn pull_until_tension<R: Rng + ?Sized>(model: &TensionModel, rng: &mut R) -> Result<TensionOutcome, CellError> {
    if !(model.step_mm > 0.0 && model.sigma >= 0.0) {
        return Err(CellError::InvalidConfig("tension step and sigma must be positive".into()));
    }
    let noise = Normal::new(0.0, model.sigma).map_err(|e| CellError::InvalidConfig(e.to_string()))?;
    let mut k = 0usize;
    loop {
        let x = k as f64 * model.step_mm;
        if x > model.max_pull_mm {
            return Err(CellError::InvalidConfig(format!(
                "tension threshold {} not reached within {} mm",
                model.threshold, model.max_pull_mm
            )));
        }
        let e = if model.sigma > 0.0 { noise.sample(rng) } else { 0.0 };
        let tension = model.ramp_per_mm * x + e;
        if tension >= model.threshold {
            if tension >= model.break_limit {
                return Err(CellError::ThreadBreak {
                    tension,
                    limit: model.break_limit,
                });
            }
            return Ok(TensionOutcome {
                pull_mm: x,
                tension,
                readings: k + 1,
            });
        }
        k += 1;
    }
}
