use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use super::{GeometryError, Pose};

/// Result of a least-squares rigid registration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Registration {
    /// Maps points of the first set onto the second.
    pub pose: Pose,
    /// Root-mean-square residual `sqrt(mean |T a_i - b_i|^2)`.
    pub rms: f64,
}

/// Relative spread below which a point set counts as collinear.
const COLLINEAR_RATIO: f64 = 1e-10;

/// Closed-form absolute orientation (SVD of the cross-covariance).
///
/// Finds the rigid `T` minimizing `sum |T a_i - b_i|^2`.
pub fn register_absolute_orientation(
    points_a: &[Vector3<f64>],
    points_b: &[Vector3<f64>],
) -> Result<Registration, GeometryError> {
    if points_a.len() != points_b.len() {
        return Err(GeometryError::DegenerateInput(format!(
            "correspondence count mismatch: {} vs {}",
            points_a.len(),
            points_b.len()
        )));
    }
    if points_a.len() < 3 {
        return Err(GeometryError::DegenerateInput(format!(
            "need at least 3 correspondences, got {}",
            points_a.len()
        )));
    }
    let n = points_a.len() as f64;
    let ca = points_a.iter().sum::<Vector3<f64>>() / n;
    let cb = points_b.iter().sum::<Vector3<f64>>() / n;

    for (set, c, name) in [(points_a, ca, "first"), (points_b, cb, "second")] {
        let scatter = set
            .iter()
            .map(|p| (p - c) * (p - c).transpose())
            .sum::<Matrix3<f64>>();
        let mut ev: Vec<f64> = scatter.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        if ev[0] <= 0.0 || ev[1] <= COLLINEAR_RATIO * ev[0] {
            return Err(GeometryError::DegenerateInput(format!(
                "{name} point set is collinear"
            )));
        }
    }

    let cross = points_a
        .iter()
        .zip(points_b)
        .map(|(a, b)| (b - cb) * (a - ca).transpose())
        .sum::<Matrix3<f64>>();
    let svd = cross.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => {
            return Err(GeometryError::DegenerateInput(
                "cross-covariance SVD failed".into(),
            ))
        }
    };
    let d = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    let rotation =
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let translation = cb - rotation * ca;
    let pose = Pose::new(translation, rotation);

    let sq: f64 = points_a
        .iter()
        .zip(points_b)
        .map(|(a, b)| (pose.transform_point(a) - b).norm_squared())
        .sum();
    Ok(Registration {
        pose,
        rms: (sq / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)))
            .collect()
    }

    #[test]
    fn identity_correspondences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = cloud(&mut rng, 6);
        let r = register_absolute_orientation(&a, &a).unwrap();
        assert!(r.rms < 1e-12);
        assert!(r.pose.distance() < 1e-12 && r.pose.angle_deg() < 1e-9);
    }

    #[test]
    fn recovers_exact_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let truth = Pose::from_euler_deg(
                [rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0)],
                [rng.gen_range(-180.0..180.0), rng.gen_range(-80.0..80.0), rng.gen_range(-180.0..180.0)],
            );
            let a = cloud(&mut rng, 5);
            let b: Vec<_> = a.iter().map(|p| truth.transform_point(p)).collect();
            let r = register_absolute_orientation(&a, &b).unwrap();
            let (dt, dr) = r.pose.difference(&truth);
            assert!(dt < 1e-9, "dt {dt}");
            assert!(dr < 1e-9, "dr {dr}");
        }
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(
            register_absolute_orientation(&line, &line),
            Err(GeometryError::DegenerateInput(_))
        ));
        let a = vec![Vector3::zeros(), Vector3::x(), Vector3::y()];
        assert!(register_absolute_orientation(&a, &a[..2]).is_err());
        assert!(register_absolute_orientation(&a[..2], &a[..2]).is_err());
    }

    /// Gauss-Newton over a small-angle rotation + translation, started
    /// from identity. Independent of the SVD route.
    fn small_angle_oracle(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Pose {
        let mut pose = Pose::identity();
        for _ in 0..50 {
            let mut jtj = nalgebra::Matrix6::<f64>::zeros();
            let mut jtr = nalgebra::Vector6::<f64>::zeros();
            for (pa, pb) in a.iter().zip(b) {
                let q = pose.transform_point(pa);
                let r = q - pb;
                // d(q)/d(omega) for left-multiplied rotation = -[q]x
                let mut j = nalgebra::Matrix3x6::<f64>::zeros();
                j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
                j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-q.cross_matrix()));
                jtj += j.transpose() * j;
                jtr += j.transpose() * r;
            }
            let step = jtj.lu().solve(&(-jtr)).unwrap();
            let dt = Vector3::new(step[0], step[1], step[2]);
            let dw = Vector3::new(step[3], step[4], step[5]);
            let inc = Pose::new(dt, UnitQuaternion::from_scaled_axis(dw));
            pose = inc.compose(&pose);
            if step.norm() < 1e-14 {
                break;
            }
        }
        pose
    }

    #[test]
    fn noisy_matches_least_squares_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let truth = Pose::from_euler_deg([2.0, -1.0, 0.5], [3.0, -2.0, 1.5]);
        let a = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(20.0, 0.0, 0.0),
            Vector3::new(0.0, 20.0, 0.0),
            Vector3::new(0.0, 0.0, 20.0),
        ];
        let b: Vec<_> = a
            .iter()
            .map(|p| {
                truth.transform_point(p)
                    + Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            })
            .collect();
        let r = register_absolute_orientation(&a, &b).unwrap();
        let oracle = small_angle_oracle(&a, &b);
        let (dt, dr) = r.pose.difference(&oracle);
        assert!(dt < 1e-7 && dr < 1e-6, "dt {dt} dr {dr}");
        // residual is in the noise regime (3 of 12 dof absorbed by the fit)
        assert!(r.rms > 0.01 && r.rms < 0.3, "rms {}", r.rms);
    }
}
