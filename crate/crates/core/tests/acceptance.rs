//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Set `ACCEPTANCE_ONLY` to a
//! comma-separated list of criterion numbers to run a subset.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{Cholesky, SMatrix, SVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use stitchcell::cell::{
    compute_metrics, mandrel_delivery_error, register_slot0, CellConfig, CellSimulator, FailureCause,
    MandrelDesign, NoiseConfig,
};
use stitchcell::geometry::{pose_error, FrameId, FramedPose, GeometryError, Pose};
use stitchcell::lfd::{dtw, gmr, local_distance, GmmModel, PoseVec, ReferenceTrajectory};
use stitchcell::par::{map_indexed, Execution};
use stitchcell::pipeline::{
    generate_demos, learn, nominal_references, puncture_bench, DemoProfile, LearnOptions, LearnedPrimitive,
    PunctureBenchOptions,
};
use stitchcell::vision::{
    detect_needle, render_needle_features, score_candidate, track_forward_backward, CameraModel, ClutterModel,
    CornerError, NeedleGrip, NeedleModel, NeedleSearchSpace, DEFAULT_TAU_PX, SEARCH_BOUNDS,
};

type Point7 = SVector<f64, 7>;
type Mat7 = SMatrix<f64, 7, 7>;
type Vec6 = SVector<f64, 6>;
type Mat6 = SMatrix<f64, 6, 6>;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("runtime {:.1} s exceeds {limit_s} s", elapsed.as_secs_f64())
    })
}

// ---------------------------------------------------------------- shared fixtures

/// Five demonstrations of the default profile (seed 7), learned once.
fn learned() -> &'static [LearnedPrimitive] {
    static LEARNED: OnceLock<Vec<LearnedPrimitive>> = OnceLock::new();
    LEARNED.get_or_init(|| {
        let demos = generate_demos(&DemoProfile::default(), 5, 7).expect("demos");
        learn(&demos, &LearnOptions::default(), Execution::default()).expect("learning")
    })
}

fn learned_references() -> Vec<ReferenceTrajectory> {
    learned().iter().map(|l| l.reference.clone()).collect()
}

fn random_model(rng: &mut ChaCha8Rng, k: usize) -> GmmModel {
    random_model_ranked(rng, k, 7, 0.05)
}

/// Random mixture whose covariances are `A A^T + ridge I` with `A` of
/// shape 7 x `rank`; a small rank and ridge give nearly singular
/// components.
fn random_model_ranked(rng: &mut ChaCha8Rng, k: usize, rank: usize, ridge: f64) -> GmmModel {
    let mut priors: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = priors.iter().sum();
    priors.iter_mut().for_each(|p| *p /= s);
    let means = (0..k).map(|_| Point7::from_fn(|_, _| rng.gen_range(-5.0..5.0))).collect();
    let covariances = (0..k)
        .map(|_| {
            let a = nalgebra::DMatrix::from_fn(7, rank, |_, _| rng.gen_range(-1.0..1.0));
            let aat = &a * a.transpose();
            Mat7::from_fn(|r, c| aat[(r, c)]) + Mat7::identity() * ridge
        })
        .collect();
    GmmModel {
        priors,
        means,
        covariances,
        epsilon: 0.0,
        seed: 0,
    }
}

/// Conditional Gaussian of `h` given `t` for one component, computed from
/// the partitioned covariance.
fn conditional(model: &GmmModel, k: usize, t: f64) -> (Vec6, Mat6) {
    let m = &model.means[k];
    let c = &model.covariances[k];
    let s_tt = c[(0, 0)];
    let mu = Vec6::from_fn(|r, _| m[r + 1] + c[(r + 1, 0)] / s_tt * (t - m[0]));
    let cov = Mat6::from_fn(|r, s| c[(r + 1, s + 1)] - c[(r + 1, 0)] * c[(0, s + 1)] / s_tt);
    (mu, cov)
}

// ---------------------------------------------------------------- criteria

/// 1. GMR against the closed-form conditional (K = 1) and a Monte-Carlo
/// conditional of the mixture (K = 2, 3).
fn c1_gmr_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let queries = 50;

    let m1 = random_model(&mut rng, 1);
    let mut worst_closed = 0.0f64;
    for q in 0..queries {
        let t = -6.0 + 12.0 * q as f64 / (queries - 1) as f64;
        let out = gmr(&m1, t);
        let (mu, cov) = conditional(&m1, 0, t);
        worst_closed = worst_closed.max((out.mu_h - mu).amax()).max((out.sigma_hh - cov).amax());
    }
    ensure(worst_closed <= 1e-9, || format!("K=1 deviates from the closed form by {worst_closed:e}"))?;

    // Monte-Carlo: draw the component from the posterior given t (computed
    // here from the Gaussian pdf of t), then h from that component's
    // conditional Gaussian.
    let samples = 1_000_000usize;
    let comparisons = queries * 6;
    // family-wise 3-sigma level (two-sided p = 0.0027) over all comparisons of one model
    let family_p = 2.0 * Normal::new(0.0, 1.0).unwrap().cdf(-3.0);
    let per_p = 1.0 - (1.0 - family_p).powf(1.0 / comparisons as f64);
    let z_bound = -Normal::new(0.0, 1.0).unwrap().inverse_cdf(per_p / 2.0);
    let mut details = Vec::new();
    for k in [2usize, 3] {
        let model = random_model(&mut rng, k);
        let mut max_z = 0.0f64;
        let mut within_3 = 0usize;
        for q in 0..queries {
            let t = -6.0 + 12.0 * q as f64 / (queries - 1) as f64;
            let weights: Vec<f64> = (0..k)
                .map(|j| {
                    let sd = model.covariances[j][(0, 0)].sqrt();
                    model.priors[j] * Normal::new(model.means[j][0], sd).unwrap().pdf(t)
                })
                .collect();
            let total: f64 = weights.iter().sum();
            let conds: Vec<(Vec6, Mat6)> = (0..k)
                .map(|j| {
                    let (mu, cov) = conditional(&model, j, t);
                    (mu, Cholesky::new(cov).expect("conditional covariance is PD").l())
                })
                .collect();
            let mut sum = Vec6::zeros();
            let mut sum_sq = Vec6::zeros();
            for _ in 0..samples {
                let mut u = rng.gen::<f64>() * total;
                let mut j = 0;
                while j + 1 < k && u >= weights[j] {
                    u -= weights[j];
                    j += 1;
                }
                let z = Vec6::from_fn(|_, _| StandardNormal.sample(&mut rng));
                let h = conds[j].0 + conds[j].1 * z;
                sum += h;
                sum_sq += h.component_mul(&h);
            }
            let n = samples as f64;
            let mean = sum / n;
            let out = gmr(&model, t);
            for d in 0..6 {
                let var = (sum_sq[d] / n - mean[d] * mean[d]) * n / (n - 1.0);
                let se = (var / n).sqrt();
                let z = (out.mu_h[d] - mean[d]).abs() / se;
                max_z = max_z.max(z);
                if z <= 3.0 {
                    within_3 += 1;
                }
            }
        }
        ensure(max_z <= z_bound, || {
            format!("K={k}: max |z| = {max_z:.2} exceeds the family-wise bound {z_bound:.2}")
        })?;
        details.push(format!("K={k} max|z|={max_z:.2} ({within_3}/{comparisons} within 3 SE)"));
    }
    within_time(start.elapsed(), 30.0)?;
    Ok(format!(
        "K=1 max dev {worst_closed:.1e}; {}; bound {z_bound:.2} SE; {:.1} s",
        details.join(", "),
        start.elapsed().as_secs_f64()
    ))
}

/// 2. Responsibilities sum to one and the GMR covariance is PSD.
fn c2_beta_psd() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst_sum = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for m in 0..1000 {
        let k = rng.gen_range(1..=6);
        // every other model has nearly singular components
        let model = if m % 2 == 0 {
            random_model(&mut rng, k)
        } else {
            let rank = rng.gen_range(1..=3);
            random_model_ranked(&mut rng, k, rank, 1e-9)
        };
        for _ in 0..100 {
            let t = rng.gen_range(-20.0..20.0);
            let out = gmr(&model, t);
            worst_sum = worst_sum.max((out.beta.iter().sum::<f64>() - 1.0).abs());
            min_eig = min_eig.min(out.sigma_hh.symmetric_eigenvalues().min());
        }
    }
    ensure(worst_sum <= 1e-12, || format!("|sum beta - 1| reached {worst_sum:e}"))?;
    ensure(min_eig >= -1e-10, || format!("smallest eigenvalue {min_eig:e}"))?;
    within_time(start.elapsed(), 10.0)?;
    Ok(format!(
        "max |sum beta - 1| = {worst_sum:.1e}, min eigenvalue {min_eig:.2e}; {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

fn enumerate_min(a: &[PoseVec], b: &[PoseVec], i: usize, j: usize, acc: f64, best: &mut f64) {
    let acc = acc + local_distance(&a[i], &b[j]);
    if i + 1 == a.len() && j + 1 == b.len() {
        *best = best.min(acc);
        return;
    }
    if i + 1 < a.len() {
        enumerate_min(a, b, i + 1, j, acc, best);
    }
    if j + 1 < b.len() {
        enumerate_min(a, b, i, j + 1, acc, best);
    }
    if i + 1 < a.len() && j + 1 < b.len() {
        enumerate_min(a, b, i + 1, j + 1, acc, best);
    }
}

/// 3. DTW equals the minimum over all warping paths.
fn c3_dtw_exhaustive() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let random_seq = |rng: &mut ChaCha8Rng, n: usize| -> Vec<PoseVec> {
        (0..n)
            .map(|_| {
                PoseVec::from_fn(|r, _| {
                    if r < 3 {
                        rng.gen_range(-0.05..0.05)
                    } else {
                        rng.gen_range(-30.0..30.0)
                    }
                })
            })
            .collect()
    };
    for pair in 0..200 {
        let (n, m) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let a = random_seq(&mut rng, n);
        let b = random_seq(&mut rng, m);
        let got = dtw(&a, &b).map_err(|e| e.to_string())?.cost;
        let mut best = f64::INFINITY;
        enumerate_min(&a, &b, 0, 0, 0.0, &mut best);
        ensure(got == best, || format!("pair {pair} ({n}x{m}): dtw {got} != enumeration {best}"))?;
    }
    Ok("200 pairs, costs equal the enumeration minimum exactly".into())
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let t = Vector3::from_fn(|_, _| rng.gen_range(-500.0..500.0));
    let axis = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    let angle = rng.gen_range(-3.1..3.1);
    Pose::from_rotation_vector(t, axis.normalize() * angle)
}

fn pose_gap(a: &Pose, b: &Pose) -> f64 {
    let dt = (a.translation() - b.translation()).amax();
    let ra = a.rotation().to_rotation_matrix();
    let rb = b.rotation().to_rotation_matrix();
    dt.max((ra.matrix() - rb.matrix()).amax())
}

/// 4. Compose / invert / pose-error identities.
fn c4_transform_algebra() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (p, q, r, s) = (FrameId::CAMERA, FrameId::MANDREL, FrameId::slot(1), FrameId::driver(0));
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let a = FramedPose::constant(p, q, random_pose(&mut rng));
        let b = FramedPose::constant(q, r, random_pose(&mut rng));
        let c = FramedPose::constant(r, s, random_pose(&mut rng));
        let ab = a.compose(&b).map_err(|e| e.to_string())?;
        let bc = b.compose(&c).map_err(|e| e.to_string())?;
        let left = ab.compose(&c).map_err(|e| e.to_string())?;
        let right = a.compose(&bc).map_err(|e| e.to_string())?;
        ensure(left.parent == p && left.child == s && right.parent == p && right.child == s, || {
            "composition labels".into()
        })?;
        worst = worst.max(pose_gap(&left.pose, &right.pose));
        let id = a.compose(&a.invert()).map_err(|e| e.to_string())?;
        ensure(id.parent == p && id.child == p, || "a * a^-1 labels".into())?;
        worst = worst.max(pose_gap(&id.pose, &Pose::identity()));
        worst = worst.max(pose_gap(&a.invert().invert().pose, &a.pose));
        let inv_ab = ab.invert();
        let ba = b.invert().compose(&a.invert()).map_err(|e| e.to_string())?;
        worst = worst.max(pose_gap(&inv_ab.pose, &ba.pose));
        let err = pose_error(&a, &ab).map_err(|e| e.to_string())?;
        ensure(err.parent == q && err.child == r, || "pose_error labels".into())?;
        worst = worst.max(pose_gap(&err.pose, &b.pose));
        let back = a.compose(&err).map_err(|e| e.to_string())?;
        worst = worst.max(pose_gap(&back.pose, &ab.pose));
        ensure(matches!(b.compose(&a), Err(GeometryError::FrameMismatch { .. })), || {
            "mismatched frames were composed".into()
        })?;
    }
    ensure(worst <= 1e-9, || format!("identity violated by {worst:e}"))?;
    Ok(format!("1e5 random triples, worst deviation {worst:.1e}"))
}

/// A driver pose looking at the camera obliquely, ~500 mm away.
fn scene_driver(rng: &mut ChaCha8Rng) -> Pose {
    Pose::from_euler_deg(
        [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(420.0..560.0)],
        [rng.gen_range(10.0..30.0), rng.gen_range(25.0..45.0), rng.gen_range(-120.0..-100.0)],
    )
}

/// 5. `detect_needle` is the exhaustive grid argmax.
fn c5_detect_argmax() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let camera = CameraModel::default();
    let model = NeedleModel::default();
    let space = NeedleSearchSpace::with_resolution([1.0, 2.0, 6.0, 3.0]).map_err(|e| e.to_string())?;
    let mut clean = 0;
    for scene in 0..100 {
        let driver = scene_driver(&mut rng);
        let truth = space.candidate(rng.gen_range(0..space.len()));
        let cam_needle = driver.compose(&model.driver_to_needle(&truth));
        let noisy = scene % 2 == 1;
        let clutter = if noisy {
            ClutterModel::with_level(rng.gen_range(0.1..0.6), scene as u64)
        } else {
            ClutterModel::none()
        };
        let map = render_needle_features(&camera, &cam_needle, &model, &clutter);
        let det = detect_needle(&map, &camera, &driver, &model, &space, Execution::default()).map_err(|e| e.to_string())?;
        let direct = score_candidate(&map, &camera, &driver, &model, &det.grip);
        ensure((direct - det.score).abs() <= 1e-9, || {
            format!("scene {scene}: reported score {} but candidate scores {direct}", det.score)
        })?;
        for i in 0..space.len() {
            let s = score_candidate(&map, &camera, &driver, &model, &space.candidate(i));
            ensure(s <= det.score + 1e-9, || {
                format!("scene {scene}: candidate {i} scores {s} > detected {}", det.score)
            })?;
        }
        if !noisy {
            ensure(det.grip == truth, || {
                format!("scene {scene}: clean truth {truth:?} detected as {:?}", det.grip)
            })?;
            clean += 1;
        }
    }
    Ok(format!(
        "100 scenes x {} candidates re-scanned; {clean} clean scenes recovered exactly; {:.1} s",
        space.len(),
        start.elapsed().as_secs_f64()
    ))
}

/// 6. A corner is rejected iff its round-trip error exceeds tau = 1 px.
fn c6_forward_backward() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let tau = DEFAULT_TAU_PX;
    ensure(tau == 1.0, || format!("default tau is {tau}"))?;
    let (mut rejected, mut boundary) = (0, 0);
    for track in 0..250 {
        let corners: Vec<Vector2<f64>> = (0..4)
            .map(|_| Vector2::new(rng.gen_range(0..640) as f64, rng.gen_range(0..480) as f64))
            .collect();
        let motion: Vec<Vector2<f64>> = corners.iter().map(|c| c + Vector2::new(rng.gen_range(-5.0..5.0), 3.0)).collect();
        let errors: Vec<CornerError> = (0..4)
            .map(|i| match (track * 4 + i) % 5 {
                // exactly on the threshold
                0 => CornerError {
                    forward: Vector2::zeros(),
                    round_trip: if rng.gen_bool(0.5) { Vector2::new(1.0, 0.0) } else { Vector2::new(0.0, -1.0) },
                },
                1 => {
                    let ang = rng.gen_range(0.0..std::f64::consts::TAU);
                    CornerError::outlier(Vector2::new(ang.cos(), ang.sin()) * rng.gen_range(2.0..10.0))
                }
                _ => {
                    let ang = rng.gen_range(0.0..std::f64::consts::TAU);
                    let mag = rng.gen_range(0.0..2.0);
                    CornerError {
                        forward: Vector2::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
                        round_trip: Vector2::new(ang.cos(), ang.sin()) * mag,
                    }
                }
            })
            .collect();
        let t = track_forward_backward(track as u32, &corners, &motion, &errors, tau).map_err(|e| e.to_string())?;
        for i in 0..4 {
            let back = corners[i] + errors[i].round_trip;
            let rt = (corners[i] - back).norm();
            let expect_inlier = rt <= tau;
            ensure(t.inliers[i] == expect_inlier, || {
                format!("track {track} corner {i}: round trip {rt} px, inlier = {}", t.inliers[i])
            })?;
            if !expect_inlier {
                rejected += 1;
            }
            if rt == tau {
                boundary += 1;
            }
        }
    }
    Ok(format!("1000 corners, {rejected} rejected, {boundary} exactly at tau kept"))
}

/// 7. Delivery moves every slot onto the registered slot-0 camera pose.
fn c7_delivery() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut worst = 0.0f64;
    let mut slots = 0;
    for design in MandrelDesign::shipped_all() {
        for _ in 0..10 {
            let cam_m = random_pose(&mut rng);
            let cam_mandrel = FramedPose::constant(FrameId::CAMERA, FrameId::MANDREL, cam_m);
            let cam_s0 = register_slot0(&cam_mandrel, &design.slot(0).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?
                .pose;
            for (i, h) in design.slots.iter().enumerate() {
                let mx = mandrel_delivery_error(&cam_m, &cam_s0, &design, i).map_err(|e| e.to_string())?;
                let presented = cam_m.compose(&mx).compose(h);
                worst = worst.max(pose_gap(&presented, &cam_s0));
                slots += 1;
            }
        }
    }
    ensure(worst <= 1e-9, || format!("slot misplaced by {worst:e}"))?;
    Ok(format!("{slots} slot deliveries over designs A-D, worst deviation {worst:.1e}"))
}

/// Primitive-1 needle path (slot frame) of one noiseless cycle.
fn needle_path(refs: &[ReferenceTrajectory], config: &CellConfig, grip: Option<NeedleGrip>) -> Result<Vec<Pose>, String> {
    let design = MandrelDesign::shipped("A").unwrap();
    let mut sim = CellSimulator::new(design, refs, config.clone(), NoiseConfig::none(), 0).map_err(|e| e.to_string())?;
    if let Some(g) = grip {
        sim = sim.with_initial_grip(g);
    }
    // later primitives may still fail (e.g. an extreme grip at the
    // hand-over); only the piercing path is compared
    let (record, trace) = sim.run_stitch_cycle(1).map_err(|e| e.to_string())?;
    ensure(!trace.detection_failed && !trace.needle_samples[0].is_empty(), || {
        format!("grip {grip:?}: primitive 1 did not run ({:?})", record.cause)
    })?;
    Ok(trace.needle_samples[0].clone())
}

/// Worst (mm, deg) deviation of the paths driven with `grips` from the
/// zero-grip path.
fn worst_path_deviation(refs: &[ReferenceTrajectory], config: &CellConfig, grips: &[NeedleGrip]) -> Result<(f64, f64), String> {
    let baseline = needle_path(refs, config, None)?;
    let paths = map_indexed(Execution::default(), grips.len(), |i| needle_path(refs, config, Some(grips[i])));
    let (mut worst_mm, mut worst_deg) = (0.0f64, 0.0f64);
    for (g, path) in grips.iter().zip(paths) {
        let path = path?;
        ensure(path.len() == baseline.len(), || format!("grip {g:?}: path length differs"))?;
        for (a, b) in path.iter().zip(&baseline) {
            let (mm, deg) = a.difference(b);
            worst_mm = worst_mm.max(mm);
            worst_deg = worst_deg.max(deg);
        }
    }
    Ok((worst_mm, worst_deg))
}

/// 8. The executed needle path does not depend on the grip.
///
/// The needle-to-driver transfer assumes the grip is known, so the gate draws random grips inside
/// the search bounds on the detection grid, where the (unrefined) grid
/// detector recovers them exactly. The same check with off-grid grips and
/// the default sub-grid refinement is reported alongside; its rotation
/// error is bounded by how well a 640x480 image resolves the needle, not
/// by the transfer itself.
fn c8_grip_invariance() -> Check {
    let start = Instant::now();
    let refs = nominal_references(&DemoProfile::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let b = SEARCH_BOUNDS;
    let grips: Vec<NeedleGrip> = (0..50)
        .map(|_| {
            NeedleGrip::new(
                rng.gen_range(-b[0]..=b[0]),
                rng.gen_range(-b[1]..=b[1]),
                rng.gen_range(-b[2]..=b[2]),
                rng.gen_range(-b[3]..=b[3]),
            )
        })
        .collect();
    let grid_config = CellConfig {
        refine_halvings: 0,
        ..CellConfig::default()
    };
    let space = NeedleSearchSpace::with_resolution(grid_config.search_resolution).map_err(|e| e.to_string())?;
    let on_grid: Vec<NeedleGrip> = grips.iter().map(|g| space.snap(g)).collect();
    let (mm, deg) = worst_path_deviation(&refs, &grid_config, &on_grid)?;
    ensure(mm < 0.1 && deg < 0.1, || format!("path deviates by {mm:.3} mm / {deg:.3} deg"))?;
    let (off_mm, off_deg) = worst_path_deviation(&refs, &CellConfig::default(), &grips)?;
    Ok(format!(
        "50 grips, worst deviation {mm:.4} mm / {deg:.4} deg (off-grid grips with refined detection: {off_mm:.3} mm / {off_deg:.2} deg, informational); {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

/// 9. Repeated-puncture bench with desk noise.
fn c9_puncture_bench() -> Check {
    let start = Instant::now();
    let refs = nominal_references(&DemoProfile::default()).map_err(|e| e.to_string())?;
    let options = PunctureBenchOptions::standard();
    ensure(
        options.cell.image_width == 640 && options.cell.image_height == 480 && options.cell.fps == 20.0 && options.seeds == 20,
        || "bench is not at 640x480 / 20 fps / 20 seeds".into(),
    )?;
    let summary = puncture_bench(&refs, &options, Execution::default()).map_err(|e| e.to_string())?;
    let mean = summary.mean_error_mm.ok_or("no trial pierced the fabric")?;
    ensure(mean <= 1.0, || format!("mean error {mean:.3} mm > 1.0 mm"))?;
    within_time(start.elapsed(), 120.0)?;
    let per: Vec<String> = summary
        .per_grip_mean_mm
        .iter()
        .map(|m| m.map_or("-".into(), |v| format!("{v:.2}")))
        .collect();
    Ok(format!(
        "mean {mean:.3} mm (per grip [{}]), {} failed trials; {:.1} s",
        per.join(", "),
        summary.failures,
        start.elapsed().as_secs_f64()
    ))
}

const DESIGNS: [&str; 4] = ["A", "B", "C", "D"];
const STITCHES_PER_DESIGN: usize = 31;

/// 10. Noiseless sewing with learned references.
fn c10_noiseless_sewing() -> Check {
    let start = Instant::now();
    let refs = learned_references();
    let runs = map_indexed(Execution::default(), DESIGNS.len(), |i| -> Result<_, String> {
        let design = MandrelDesign::shipped(DESIGNS[i]).unwrap();
        let mut sim = CellSimulator::new(design, &refs, CellConfig::default(), NoiseConfig::none(), i as u64)
            .map_err(|e| e.to_string())?;
        let expected: Vec<Option<f64>> = (0..sim.design.n_slots()).map(|s| sim.reference_stitch_size(s)).collect();
        let (records, _) = sim.run(STITCHES_PER_DESIGN).map_err(|e| e.to_string())?;
        Ok((records, expected))
    });
    let (mut n, mut worst, mut sizes) = (0usize, 0.0f64, Vec::new());
    for (d, run) in DESIGNS.iter().zip(runs) {
        let (records, expected) = run?;
        for r in &records {
            n += 1;
            let size = r
                .stitch_size_mm
                .ok_or_else(|| format!("design {d} trial {} failed: {:?}", r.trial, r.cause))?;
            let want = expected[r.slot].ok_or_else(|| format!("design {d} slot {}: reference does not pierce", r.slot))?;
            worst = worst.max((size - want).abs());
            sizes.push(size);
        }
    }
    ensure(n == 124, || format!("{n} stitches"))?;
    ensure(worst <= 0.05, || format!("stitch size deviates from the reference by {worst:.3} mm"))?;
    within_time(start.elapsed(), 300.0)?;
    let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
    Ok(format!(
        "124/124 succeeded, worst size deviation {worst:.3} mm, mean size {mean:.3} mm; {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

/// 11. `paper` preset regime over a 10-seed sweep.
fn c11_paper_regime() -> Check {
    let start = Instant::now();
    let refs = learned_references();
    let seeds = 10usize;
    let runs = map_indexed(Execution::default(), seeds * DESIGNS.len(), |i| -> Result<_, String> {
        let d = DESIGNS[i % DESIGNS.len()];
        let design = MandrelDesign::shipped(d).unwrap();
        let mut sim = CellSimulator::new(design, &refs, CellConfig::default(), NoiseConfig::paper(), 1000 + i as u64)
            .map_err(|e| e.to_string())?;
        Ok(sim.run(STITCHES_PER_DESIGN).map_err(|e| e.to_string())?.0)
    });
    let runs: Vec<_> = runs.into_iter().collect::<Result<_, _>>()?;
    let mut rates = Vec::new();
    let mut causes: BTreeSet<FailureCause> = BTreeSet::new();
    for s in 0..seeds {
        let records: Vec<_> = runs[s * DESIGNS.len()..(s + 1) * DESIGNS.len()].iter().flatten().cloned().collect();
        let m = compute_metrics(&records).map_err(|e| e.to_string())?;
        ensure(m.overall.trials == 124, || format!("seed {s}: {} trials", m.overall.trials))?;
        causes.extend(m.causes.iter().filter(|(_, n)| **n > 0).map(|(c, _)| *c));
        rates.push(m.overall.success_rate);
    }
    let listed: Vec<String> = rates.iter().map(|r| format!("{r:.2}")).collect();
    let out_of_band: Vec<usize> = (0..seeds).filter(|&s| !(0.70..=0.95).contains(&rates[s])).collect();
    ensure(out_of_band.is_empty(), || {
        format!("seeds {out_of_band:?} outside [0.70, 0.95]; rates [{}]", listed.join(", "))
    })?;
    let required = [
        FailureCause::NeedleHandling,
        FailureCause::StitchStentMissing,
        FailureCause::NeedleStentTouching,
        FailureCause::NeedleThreadEntangling,
    ];
    let missing: Vec<_> = required.iter().filter(|c| !causes.contains(c)).collect();
    ensure(missing.is_empty(), || format!("causes never observed: {missing:?}"))?;
    Ok(format!(
        "rates [{}], all four causes observed; {:.1} s",
        listed.join(", "),
        start.elapsed().as_secs_f64()
    ))
}

/// 12. Context scheduling of the synthetic demonstrations.
fn c12_context() -> Check {
    let profile = DemoProfile::default();
    let p1 = &learned()[0];
    let ctx = &p1.context;
    let t0 = ctx.times[0];
    // Demonstration phases are jittered by at most +-10%: approach lasts
    // 1.8-2.2 s, piercing ends after 3.6 s and the yaw ramps in 0.2 s.
    let approach_end = profile.approach_s * (1.0 - profile.timing_jitter);
    let pierce_from = profile.approach_s * (1.0 + profile.timing_jitter) + 2.0 * profile.yaw_ramp_s + 0.1;
    let pierce_to = (profile.approach_s + profile.pierce_s) * (1.0 - profile.timing_jitter);
    let (mut approach, mut pierce) = (0, 0);
    for (t, r) in ctx.times.iter().zip(&ctx.ratio) {
        let rel = t - t0;
        if rel > 0.1 && rel < approach_end - 0.1 {
            ensure(*r == 1.5 || *r == 2.0, || format!("approach sample at {rel:.2} s has R = {r}"))?;
            approach += 1;
        } else if rel > pierce_from && rel < pierce_to {
            ensure(*r == 0.5, || format!("piercing sample at {rel:.2} s has R = {r}"))?;
            pierce += 1;
        }
    }
    ensure(approach > 10 && pierce > 10, || format!("only {approach} approach / {pierce} piercing samples"))?;
    // Every reference sample's dwell is the grid spacing over its ratio.
    let mut total_demo = 0.0;
    let mut total_play = 0.0;
    let mut worst = 0.0f64;
    for l in learned() {
        let s = &l.reference.samples;
        let expected: f64 = s.windows(2).map(|w| (w[1].t_hat - w[0].t_hat) / w[1].r).sum();
        worst = worst.max((l.reference.duration() - expected).abs());
        total_demo += s.last().unwrap().t_hat - s[0].t_hat;
        total_play += l.reference.duration();
    }
    ensure(worst <= 1e-9, || format!("reproduction time differs from the dwell sum by {worst:e}"))?;
    ensure((total_play - total_demo).abs() > 0.1, || "reproduction time equals demonstration time".into())?;
    Ok(format!(
        "{approach} approach samples R in {{1.5, 2}}, {pierce} piercing samples R = 0.5; demo {total_demo:.2} s -> reproduction {total_play:.2} s"
    ))
}

fn main() {
    let only: Option<BTreeSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Check); 12] = [
        (1, "GMR oracle equivalence", c1_gmr_oracle),
        (2, "beta normalization and PSD", c2_beta_psd),
        (3, "DTW exhaustive equivalence", c3_dtw_exhaustive),
        (4, "transform algebra", c4_transform_algebra),
        (5, "detect_needle exhaustive argmax", c5_detect_argmax),
        (6, "forward-backward gate", c6_forward_backward),
        (7, "mandrel delivery", c7_delivery),
        (8, "grip invariance", c8_grip_invariance),
        (9, "puncture bench, desk noise", c9_puncture_bench),
        (10, "noiseless sewing, designs A-D", c10_noiseless_sewing),
        (11, "paper preset regime", c11_paper_regime),
        (12, "context scheduling", c12_context),
    ];
    let mut failed = Vec::new();
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS criterion {n:>2} {name}: {detail}"),
            Err(detail) => {
                println!("FAIL criterion {n:>2} {name}: {detail}");
                failed.push(n);
            }
        }
    }
    if !failed.is_empty() {
        println!("acceptance: {} criteria failed: {failed:?}", failed.len());
        std::process::exit(1);
    }
}
