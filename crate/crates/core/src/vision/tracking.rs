use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::VisionError;

/// Default forward-backward inlier threshold (px).
pub const DEFAULT_TAU_PX: f64 = 1.0;

/// Simulated tracking error of one corner.
///
/// The forward estimate is `truth + forward`; tracking that estimate back
/// to the previous frame lands at `previous + round_trip`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CornerError {
    pub forward: Vector2<f64>,
    pub round_trip: Vector2<f64>,
}

impl CornerError {
    /// A tracking failure: the forward estimate is displaced by `drift`
    /// and the backward pass does not undo it.
    pub fn outlier(drift: Vector2<f64>) -> Self {
        CornerError {
            forward: drift,
            round_trip: drift,
        }
    }
}

/// Generator of per-corner tracking errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingNoise {
    /// Std. dev. of the round-trip error of well-tracked corners (px).
    pub round_trip_sigma_px: f64,
    /// Probability that a corner is lost by the tracker.
    pub outlier_rate: f64,
    /// Displacement range of lost corners (px).
    pub outlier_min_px: f64,
    pub outlier_max_px: f64,
}

impl TrackingNoise {
    pub fn none() -> Self {
        TrackingNoise {
            round_trip_sigma_px: 0.0,
            outlier_rate: 0.0,
            outlier_min_px: 2.0,
            outlier_max_px: 10.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CornerError {
        if self.outlier_rate > 0.0 && rng.gen_bool(self.outlier_rate.min(1.0)) {
            let mag = rng.gen_range(self.outlier_min_px..=self.outlier_max_px);
            let ang = rng.gen_range(0.0..std::f64::consts::TAU);
            return CornerError::outlier(Vector2::new(mag * ang.cos(), mag * ang.sin()));
        }
        if self.round_trip_sigma_px > 0.0 {
            let n = Normal::new(0.0, self.round_trip_sigma_px).expect("finite sigma");
            CornerError {
                forward: Vector2::zeros(),
                round_trip: Vector2::new(n.sample(rng), n.sample(rng)),
            }
        } else {
            CornerError::default()
        }
    }
}

/// Corners of one marker tracked from the previous frame to the current one.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerTrack {
    pub marker_id: u32,
    /// `q_i` in the previous frame.
    pub corners: Vec<Vector2<f64>>,
    /// `q_i+` in the current frame.
    pub forward: Vec<Vector2<f64>>,
    /// `q_i-`: the forward estimates tracked back to the previous frame.
    pub backward: Vec<Vector2<f64>>,
    /// `inliers[i]` iff `|q_i - q_i-| <= tau`.
    pub inliers: Vec<bool>,
    pub tau: f64,
}

impl MarkerTrack {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|b| **b).count()
    }

    pub fn round_trip_error(&self, i: usize) -> f64 {
        (self.corners[i] - self.backward[i]).norm()
    }

    /// Inlier forward estimates and their indices.
    pub fn inlier_points(&self) -> (Vec<usize>, Vec<Vector2<f64>>) {
        self.inliers
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| (i, self.forward[i]))
            .unzip()
    }
}

/// Forward-backward tracking of marker corners.
///
/// `motion[i]` is the true position of corner `i` in the current frame and
/// `errors[i]` the tracking error injected for it.
pub fn track_forward_backward(
    marker_id: u32,
    prev_corners: &[Vector2<f64>],
    motion: &[Vector2<f64>],
    errors: &[CornerError],
    tau: f64,
) -> Result<MarkerTrack, VisionError> {
    if prev_corners.len() < 4 {
        return Err(VisionError::TooFewCorners(prev_corners.len()));
    }
    if motion.len() != prev_corners.len() || errors.len() != prev_corners.len() {
        return Err(VisionError::InvalidArgument(
            "corner, motion and error lists differ in length".into(),
        ));
    }
    let forward: Vec<_> = motion.iter().zip(errors).map(|(m, e)| m + e.forward).collect();
    let backward: Vec<_> = prev_corners
        .iter()
        .zip(errors)
        .map(|(q, e)| q + e.round_trip)
        .collect();
    let inliers = prev_corners
        .iter()
        .zip(&backward)
        .map(|(q, b)| (q - b).norm() <= tau)
        .collect();
    Ok(MarkerTrack {
        marker_id,
        corners: prev_corners.to_vec(),
        forward,
        backward,
        inliers,
        tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Vec<Vector2<f64>> {
        vec![
            Vector2::new(100.0, 100.0),
            Vector2::new(200.0, 100.0),
            Vector2::new(200.0, 200.0),
            Vector2::new(100.0, 200.0),
        ]
    }

    #[test]
    fn zero_noise_all_inliers() {
        let prev = square();
        let next: Vec<_> = prev.iter().map(|p| p + Vector2::new(3.0, -1.0)).collect();
        let t = track_forward_backward(1, &prev, &next, &[CornerError::default(); 4], 1.0).unwrap();
        assert_eq!(t.inliers, vec![true; 4]);
        assert_eq!(t.forward, next);
    }

    #[test]
    fn two_px_drift_is_rejected() {
        let prev = square();
        let mut errs = [CornerError::default(); 4];
        errs[2] = CornerError::outlier(Vector2::new(2.0, 0.0));
        let t = track_forward_backward(1, &prev, &prev, &errs, 1.0).unwrap();
        assert_eq!(t.inliers, vec![true, true, false, true]);
    }

    #[test]
    fn threshold_is_inclusive() {
        let prev = square();
        let mut errs = [CornerError::default(); 4];
        errs[0].round_trip = Vector2::new(0.6, 0.8); // exactly 1 px
        let t = track_forward_backward(1, &prev, &prev, &errs, 1.0).unwrap();
        assert!(t.inliers[0]);
    }

    #[test]
    fn too_few_corners() {
        let prev = square();
        assert_eq!(
            track_forward_backward(1, &prev[..3], &prev[..3], &[CornerError::default(); 3], 1.0)
                .unwrap_err(),
            VisionError::TooFewCorners(3)
        );
    }
}
