use nalgebra::{SMatrix, SVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::Pose;

type Vec12 = SVector<f64, 12>;
type Mat12 = SMatrix<f64, 12, 12>;
type Mat6 = SMatrix<f64, 6, 6>;
type Mat6x12 = SMatrix<f64, 6, 12>;

/// Noise parameters of the constant-velocity pose filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanConfig {
    /// White-acceleration spectral density (mm^2 / s^3).
    pub accel_psd: f64,
    /// White angular-acceleration spectral density (rad^2 / s^3).
    pub angular_accel_psd: f64,
    /// Measurement std. dev. of position (mm).
    pub position_sigma: f64,
    /// Measurement std. dev. of orientation (rad).
    pub rotation_sigma: f64,
    /// Prediction (servo) rate, Hz.
    pub fast_rate_hz: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            accel_psd: 100.0,
            angular_accel_psd: 0.01,
            position_sigma: 0.3,
            rotation_sigma: 0.2f64.to_radians(),
            fast_rate_hz: 100.0,
        }
    }
}

/// Constant-velocity pose filter that predicts at the servo rate and
/// corrects at the camera rate.
///
/// State: position, linear velocity, orientation and world-frame angular
/// velocity. Orientation uncertainty is tracked as a 3-vector error
/// `q_true = exp(dtheta) * q`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleRateKalman {
    pub config: KalmanConfig,
    position: Vector3<f64>,
    velocity: Vector3<f64>,
    orientation: UnitQuaternion<f64>,
    angular_velocity: Vector3<f64>,
    covariance: Mat12,
    initialized: bool,
}

impl DoubleRateKalman {
    pub fn new(config: KalmanConfig) -> Self {
        DoubleRateKalman {
            config,
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
            angular_velocity: Vector3::zeros(),
            covariance: Mat12::identity() * 1e6,
            initialized: false,
        }
    }

    /// Filter started at a known pose with the given uncertainty.
    pub fn with_initial(config: KalmanConfig, pose: &Pose, position_sigma: f64, rotation_sigma: f64) -> Self {
        let mut f = DoubleRateKalman::new(config);
        f.position = pose.translation();
        f.orientation = pose.rotation();
        let mut p = Mat12::zeros();
        for i in 0..3 {
            p[(i, i)] = position_sigma.powi(2);
            p[(i + 3, i + 3)] = position_sigma.powi(2);
            p[(i + 6, i + 6)] = rotation_sigma.powi(2);
            p[(i + 9, i + 9)] = rotation_sigma.powi(2);
        }
        f.covariance = p;
        f.initialized = true;
        f
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.position, self.orientation)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.velocity
    }

    pub fn angular_velocity(&self) -> Vector3<f64> {
        self.angular_velocity
    }

    pub fn covariance(&self) -> &SMatrix<f64, 12, 12> {
        &self.covariance
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    fn predict(&mut self, dt: f64, control: Option<&Pose>) {
        self.position += self.velocity * dt;
        self.orientation =
            UnitQuaternion::from_scaled_axis(self.angular_velocity * dt) * self.orientation;
        if let Some(u) = control {
            // known commanded motion, applied in the world frame
            self.position = u.rotation() * self.position + u.translation();
            self.orientation = u.rotation() * self.orientation;
        }
        let mut f = Mat12::identity();
        for i in 0..3 {
            f[(i, i + 3)] = dt;
            f[(i + 6, i + 9)] = dt;
        }
        let mut q = Mat12::zeros();
        let (q3, q2, q1) = (dt.powi(3) / 3.0, dt.powi(2) / 2.0, dt);
        for (base, psd) in [(0, self.config.accel_psd), (6, self.config.angular_accel_psd)] {
            for i in 0..3 {
                let (a, b) = (base + i, base + 3 + i);
                q[(a, a)] = q3 * psd;
                q[(a, b)] = q2 * psd;
                q[(b, a)] = q2 * psd;
                q[(b, b)] = q1 * psd;
            }
        }
        let p = f * self.covariance * f.transpose() + q;
        self.covariance = 0.5 * (p + p.transpose());
    }

    fn correct(&mut self, z: &Pose) {
        if !self.initialized {
            self.position = z.translation();
            self.orientation = z.rotation();
            let mut p = Mat12::zeros();
            for i in 0..3 {
                p[(i, i)] = self.config.position_sigma.powi(2).max(1e-12);
                p[(i + 3, i + 3)] = 1e4;
                p[(i + 6, i + 6)] = self.config.rotation_sigma.powi(2).max(1e-12);
                p[(i + 9, i + 9)] = 1.0;
            }
            self.covariance = p;
            self.initialized = true;
            return;
        }
        let mut h = Mat6x12::zeros();
        for i in 0..3 {
            h[(i, i)] = 1.0;
            h[(i + 3, i + 6)] = 1.0;
        }
        let mut r = Mat6::zeros();
        for i in 0..3 {
            r[(i, i)] = self.config.position_sigma.powi(2);
            r[(i + 3, i + 3)] = self.config.rotation_sigma.powi(2);
        }
        let dp = z.translation() - self.position;
        let dq = (z.rotation() * self.orientation.inverse()).scaled_axis();
        let innov = SVector::<f64, 6>::new(dp.x, dp.y, dp.z, dq.x, dq.y, dq.z);
        let s = h * self.covariance * h.transpose() + r;
        let Some(s_inv) = s.try_inverse() else {
            return;
        };
        let k = self.covariance * h.transpose() * s_inv;
        let dx: Vec12 = k * innov;
        self.position += dx.fixed_rows::<3>(0);
        self.velocity += dx.fixed_rows::<3>(3);
        self.orientation =
            UnitQuaternion::from_scaled_axis(dx.fixed_rows::<3>(6).into_owned()) * self.orientation;
        self.angular_velocity += dx.fixed_rows::<3>(9);
        // Joseph form keeps the covariance symmetric PSD
        let ikh = Mat12::identity() - k * h;
        let p = ikh * self.covariance * ikh.transpose() + k * r * k.transpose();
        self.covariance = 0.5 * (p + p.transpose());
    }

    /// Predicts `dt` seconds ahead and, if a measurement is given, corrects
    /// with it. Returns the filtered pose.
    pub fn kalman_step(&mut self, dt: f64, measurement: Option<&Pose>) -> Pose {
        self.kalman_step_with_control(dt, None, measurement)
    }

    /// [`kalman_step`](Self::kalman_step) with a known commanded motion
    /// `control` (world-frame pose increment) applied during prediction.
    pub fn kalman_step_with_control(
        &mut self,
        dt: f64,
        control: Option<&Pose>,
        measurement: Option<&Pose>,
    ) -> Pose {
        assert!(dt > 0.0, "kalman_step requires dt > 0");
        if self.initialized {
            self.predict(dt, control);
        }
        if let Some(z) = measurement {
            self.correct(z);
        }
        self.pose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationary_converges() {
        let truth = Pose::from_euler_deg([10.0, -5.0, 300.0], [30.0, -10.0, 5.0]);
        let mut f = DoubleRateKalman::new(KalmanConfig::default());
        let start = Pose::from_euler_deg([12.0, -4.0, 305.0], [32.0, -9.0, 4.0]);
        f.kalman_step(0.01, Some(&start));
        for step in 1..=2000 {
            let z = (step % 5 == 0).then_some(&truth);
            f.kalman_step(0.01, z);
        }
        let (dt, dr) = f.pose().difference(&truth);
        assert!(dt < 1e-6 && dr < 1e-6, "{dt} {dr}");
    }

    #[test]
    fn covariance_grows_without_measurements() {
        let mut f = DoubleRateKalman::with_initial(KalmanConfig::default(), &Pose::identity(), 0.1, 0.01);
        let mut prev = f.covariance().trace();
        for _ in 0..100 {
            f.kalman_step(0.01, None);
            let tr = f.covariance().trace();
            assert!(tr >= prev);
            prev = tr;
            assert!(f.covariance().symmetric_eigenvalues().min() >= -1e-9);
        }
    }

    #[test]
    fn noiseless_measurement_is_adopted() {
        let cfg = KalmanConfig {
            position_sigma: 1e-9,
            rotation_sigma: 1e-9,
            ..KalmanConfig::default()
        };
        let mut f = DoubleRateKalman::with_initial(cfg, &Pose::identity(), 1.0, 0.1);
        let z = Pose::from_euler_deg([1.0, 2.0, 3.0], [4.0, 5.0, 6.0]);
        let out = f.kalman_step(0.05, Some(&z));
        let (dt, dr) = out.difference(&z);
        assert!(dt < 1e-6 && dr < 1e-6);
    }

    #[test]
    fn constant_velocity_beats_zero_order_hold() {
        let v = Vector3::new(20.0, -10.0, 5.0); // mm/s
        let w = Vector3::new(0.0, 0.0, 0.3); // rad/s
        let truth = |t: f64| {
            Pose::new(
                Vector3::new(0.0, 0.0, 400.0) + v * t,
                UnitQuaternion::from_scaled_axis(w * t),
            )
        };
        let cfg = KalmanConfig {
            position_sigma: 0.01,
            rotation_sigma: 1e-4,
            ..KalmanConfig::default()
        };
        let mut f = DoubleRateKalman::new(cfg);
        let dt = 0.01;
        let mut last_meas = truth(0.0);
        f.kalman_step(dt, Some(&last_meas));
        let (mut err_kf, mut err_zoh) = (0.0, 0.0);
        for step in 1..=1000 {
            let t = step as f64 * dt;
            let meas = (step % 5 == 0).then(|| truth(t));
            if let Some(m) = meas {
                last_meas = m;
            }
            let est = f.kalman_step(dt, meas.as_ref());
            if step > 200 {
                err_kf += est.difference(&truth(t)).0;
                err_zoh += last_meas.difference(&truth(t)).0;
            }
        }
        assert!(err_kf < 0.5 * err_zoh, "kf {err_kf} zoh {err_zoh}");
    }

    #[test]
    fn control_input_moves_prediction() {
        let mut f = DoubleRateKalman::with_initial(KalmanConfig::default(), &Pose::identity(), 0.1, 0.01);
        let u = Pose::from_translation(1.0, 0.0, 0.0);
        let p = f.kalman_step_with_control(0.01, Some(&u), None);
        assert!((p.translation() - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }
}
