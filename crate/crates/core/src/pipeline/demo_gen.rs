//! Synthetic demonstrations of one stitch cycle on slot 0 of design A.

use nalgebra::Vector3;
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cell::MandrelDesign;
use crate::geometry::{FrameId, Pose};
use crate::lfd::{
    primitive_streams, Demonstration, ReferenceSample, ReferenceTrajectory, Stream, PRIMITIVE_STATES,
};
use crate::vision::NeedleModel;

use super::PipelineError;

/// Nominal stitch geometry plus human-variability noise.
///
/// The needle pose in the slot frame is `Trans(c) * Rz(yaw) * Rx(180 - phi)`:
/// the arc turns about the slot x axis (along the stent wire) with its
/// centre `c` above the slot. `phi` is the tip's angle below the slot +y
/// direction, so as `phi` grows the tip leads the body down through the
/// fabric from the +y side to the -y side, piercing at two points
/// `stitch_size_mm` apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoProfile {
    pub rate_hz: f64,
    /// Scales every noise term; 0 gives identical demonstrations.
    pub variability: f64,
    pub needle_diameter_mm: f64,
    pub grip_arc_a_deg: f64,
    pub grip_arc_b_deg: f64,
    /// Chord between the pierce points on the demonstration slot.
    pub stitch_size_mm: f64,
    pub approach_s: f64,
    pub pierce_s: f64,
    pub handover_s: f64,
    pub pull_s: f64,
    pub lift_s: f64,
    pub regrasp_s: f64,
    pub return_s: f64,
    /// Approach start relative to the pierce pose (slot frame, mm).
    pub approach_back_mm: f64,
    pub approach_height_mm: f64,
    /// Needle angle at the start of piercing, end of piercing and end of
    /// pulling (deg).
    pub pierce_start_deg: f64,
    pub pierce_end_deg: f64,
    pub pull_end_deg: f64,
    pub lift_mm: f64,
    /// Parking offset of driver B from its grasp pose (slot frame, mm).
    pub park_offset_mm: [f64; 3],
    /// Yaw about the slot normal during piercing: demonstrations spread
    /// evenly over `+-yaw_spread_deg`, plus `yaw_jitter_deg` noise.
    pub yaw_spread_deg: f64,
    pub yaw_jitter_deg: f64,
    pub yaw_ramp_s: f64,
    pub start_offset_sigma_mm: f64,
    pub approach_rotation_sigma_deg: f64,
    /// Relative duration jitter of each phase.
    pub timing_jitter: f64,
    pub tremor_mm: f64,
    pub tremor_deg: f64,
}

impl Default for DemoProfile {
    fn default() -> Self {
        DemoProfile {
            rate_hz: 20.0,
            variability: 1.0,
            needle_diameter_mm: 8.0,
            grip_arc_a_deg: 30.0,
            grip_arc_b_deg: 150.0,
            stitch_size_mm: 4.10,
            approach_s: 2.0,
            pierce_s: 2.0,
            handover_s: 2.0,
            pull_s: 3.0,
            lift_s: 1.0,
            regrasp_s: 2.0,
            return_s: 3.0,
            approach_back_mm: 6.0,
            approach_height_mm: 10.0,
            pierce_start_deg: 40.0,
            pierce_end_deg: 170.0,
            pull_end_deg: 330.0,
            lift_mm: 6.0,
            park_offset_mm: [0.0, -8.0, 8.0],
            yaw_spread_deg: 6.0,
            yaw_jitter_deg: 0.5,
            yaw_ramp_s: 0.2,
            start_offset_sigma_mm: 3.0,
            approach_rotation_sigma_deg: 1.5,
            timing_jitter: 0.1,
            tremor_mm: 0.02,
            tremor_deg: 0.05,
        }
    }
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

fn slot_needle(c: Vector3<f64>, yaw_deg: f64, phi_deg: f64) -> Pose {
    Pose::from_translation(c.x, c.y, c.z)
        .compose(&Pose::rot_z_deg(yaw_deg))
        .compose(&Pose::rot_x_deg(180.0 - phi_deg))
}

impl DemoProfile {
    pub fn radius_mm(&self) -> f64 {
        self.needle_diameter_mm / 2.0
    }

    /// Height of the arc centre above the surface that gives the
    /// configured chord.
    pub fn centre_height_mm(&self) -> f64 {
        let r = self.radius_mm();
        (r * r - (self.stitch_size_mm / 2.0).powi(2)).sqrt()
    }

    /// Needle angles at which the tip enters and leaves the fabric (deg).
    pub fn pierce_angles_deg(&self) -> (f64, f64) {
        let a = (self.centre_height_mm() / self.radius_mm()).asin().to_degrees();
        (a, 180.0 - a)
    }

    /// `mH_s` of the demonstration slot (design A, slot 0).
    pub fn demo_slot_pose() -> Pose {
        MandrelDesign::shipped("A").expect("design A").slots[0]
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidProfile(m.into()));
        let positive = [
            self.rate_hz,
            self.needle_diameter_mm,
            self.stitch_size_mm,
            self.approach_s,
            self.pierce_s,
            self.handover_s,
            self.pull_s,
            self.lift_s,
            self.regrasp_s,
            self.return_s,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("rates, durations and sizes must be positive");
        }
        let nonneg = [
            self.variability,
            self.yaw_spread_deg,
            self.yaw_jitter_deg,
            self.yaw_ramp_s,
            self.start_offset_sigma_mm,
            self.approach_rotation_sigma_deg,
            self.timing_jitter,
            self.tremor_mm,
            self.tremor_deg,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("noise terms must be non-negative");
        }
        if self.timing_jitter * self.variability >= 0.5 {
            return bad("timing jitter too large");
        }
        if self.stitch_size_mm >= self.needle_diameter_mm {
            return bad("stitch size must be shorter than the needle diameter");
        }
        let (enter, exit) = self.pierce_angles_deg();
        if !(self.pierce_start_deg < enter && self.pierce_end_deg > exit && self.pierce_end_deg < 180.0) {
            return bad("piercing must start above the fabric and end past the exit point");
        }
        if !(self.pull_end_deg > self.pierce_end_deg && self.pull_end_deg < 360.0 + self.pierce_start_deg) {
            return bad("pull must continue the needle rotation");
        }
        if self.rate_hz * self.approach_s.min(self.pierce_s).min(self.handover_s).min(self.regrasp_s) < 4.0 {
            return bad("sampling rate too low for the phase durations");
        }
        Ok(())
    }
}

/// Per-demonstration random draws.
struct DemoDraw {
    scale: [f64; 7],
    start_offset: Vector3<f64>,
    approach_rot: Vector3<f64>,
    yaw: f64,
}

/// Generates `n` demonstrations recorded in the mandrel frame of design A.
pub fn generate_demos(profile: &DemoProfile, n: usize, seed: u64) -> Result<Vec<Demonstration>, PipelineError> {
    profile.validate()?;
    if n == 0 {
        return Err(PipelineError::InvalidProfile("need at least one demonstration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = profile.variability;
    // stratified yaw: evenly spread, randomly assigned
    let mut yaws: Vec<f64> = if n == 1 {
        vec![0.0]
    } else {
        (0..n)
            .map(|i| v * profile.yaw_spread_deg * (-1.0 + 2.0 * i as f64 / (n - 1) as f64))
            .collect()
    };
    yaws.shuffle(&mut rng);
    let normal = |rng: &mut ChaCha8Rng, sigma: f64| -> f64 {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("sigma").sample(rng)
        } else {
            0.0
        }
    };
    let mut demos = Vec::with_capacity(n);
    for yaw in yaws {
        let mut scale = [1.0; 7];
        for s in scale.iter_mut() {
            *s = 1.0 + v * profile.timing_jitter * rng.gen_range(-1.0..=1.0);
        }
        let so = profile.start_offset_sigma_mm * v;
        let ar = profile.approach_rotation_sigma_deg.to_radians() * v;
        let draw = DemoDraw {
            scale,
            start_offset: Vector3::new(normal(&mut rng, so), normal(&mut rng, so), normal(&mut rng, so)),
            approach_rot: Vector3::new(normal(&mut rng, ar), normal(&mut rng, ar), normal(&mut rng, ar)),
            yaw: yaw + normal(&mut rng, profile.yaw_jitter_deg * v),
        };
        demos.push(generate_one(profile, &draw, &mut rng));
    }
    Ok(demos)
}

fn generate_one(p: &DemoProfile, draw: &DemoDraw, rng: &mut ChaCha8Rng) -> Demonstration {
    let v = p.variability;
    let d = p.centre_height_mm();
    let model = NeedleModel::new(p.needle_diameter_mm, 2);
    let grip_a = Pose::new(model.point_at(p.grip_arc_a_deg.to_radians()), Default::default());
    let grip_b = Pose::new(model.point_at(p.grip_arc_b_deg.to_radians()), Default::default());

    let [s_app, s_pier, s_hand, s_pull, s_lift, s_regr, s_ret] = draw.scale;
    let durations = [
        p.approach_s * s_app,
        p.pierce_s * s_pier,
        p.handover_s * s_hand,
        p.pull_s * s_pull,
        p.lift_s * s_lift,
        p.regrasp_s * s_regr,
        p.return_s * s_ret,
    ];
    let mut bounds = [0.0; 8];
    for i in 0..7 {
        bounds[i + 1] = bounds[i] + durations[i];
    }
    let total = bounds[7];

    let c_pierce = Vector3::new(0.0, 0.0, d);
    let c0 = Vector3::new(0.0, p.approach_back_mm, d + p.approach_height_mm) + draw.start_offset;
    let noise_rot = |w: f64| Pose::from_rotation_vector(Vector3::zeros(), draw.approach_rot * w);
    let n0 = Pose::from_translation(c0.x, c0.y, c0.z)
        .compose(&noise_rot(1.0))
        .compose(&Pose::rot_x_deg(180.0 - p.pierce_start_deg));
    let n_pierced = slot_needle(c_pierce, draw.yaw, p.pierce_end_deg);
    let c_lift = c_pierce + Vector3::new(0.0, 0.0, p.lift_mm);
    let n_pulled = slot_needle(c_lift, draw.yaw, p.pull_end_deg);
    let b_grasp = n_pierced.compose(&grip_b);
    let b_park = Pose::from_translation(p.park_offset_mm[0], p.park_offset_mm[1], p.park_offset_mm[2]).compose(&b_grasp);
    let a_release = n_pierced.compose(&grip_a);
    let a_regrasp = n_pulled.compose(&grip_a);
    let b_release = n_pulled.compose(&grip_b);

    let n_samples = (total * p.rate_hz).floor() as usize + 1;
    let mut times = Vec::with_capacity(n_samples);
    let mut needle = Vec::with_capacity(n_samples);
    let mut tool_a = Vec::with_capacity(n_samples);
    let mut tool_b = Vec::with_capacity(n_samples);
    let mut gripper_a = Vec::with_capacity(n_samples);
    let mut gripper_b = Vec::with_capacity(n_samples);
    let mut holder = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let t = i as f64 / p.rate_hz;
        let phase = (0..7).rfind(|&k| t >= bounds[k]).unwrap_or(0);
        let s = ((t - bounds[phase]) / durations[phase]).clamp(0.0, 1.0);
        let (n, a, b, primitive) = match phase {
            0 => {
                let w = smoothstep(s);
                let c = c0 + (c_pierce - c0) * w;
                let n = Pose::from_translation(c.x, c.y, c.z)
                    .compose(&noise_rot(1.0 - w))
                    .compose(&Pose::rot_x_deg(180.0 - p.pierce_start_deg));
                (n, n.compose(&grip_a), b_park, 1)
            }
            1 => {
                let tau = t - bounds[1];
                let yaw = if p.yaw_ramp_s > 0.0 {
                    draw.yaw * (tau / p.yaw_ramp_s).min(1.0)
                } else {
                    draw.yaw
                };
                let phi = p.pierce_start_deg + (p.pierce_end_deg - p.pierce_start_deg) * s;
                let n = slot_needle(c_pierce, yaw, phi);
                (n, n.compose(&grip_a), b_park, 1)
            }
            2 => (n_pierced, a_release, b_park.interpolate(&b_grasp, smoothstep(s)), 2),
            3 => {
                let phi = p.pierce_end_deg + (p.pull_end_deg - p.pierce_end_deg) * s;
                let n = slot_needle(c_pierce, draw.yaw, phi);
                (n, a_release, n.compose(&grip_b), 3)
            }
            4 => {
                let c = c_pierce + (c_lift - c_pierce) * smoothstep(s);
                let n = slot_needle(c, draw.yaw, p.pull_end_deg);
                (n, a_release, n.compose(&grip_b), 3)
            }
            5 => (n_pulled, a_release.interpolate(&a_regrasp, smoothstep(s)), b_release, 4),
            _ => {
                let n = n_pulled.interpolate(&n0, smoothstep(s));
                (n, n.compose(&grip_a), b_release, 5)
            }
        };
        let (ja, jb, h) = PRIMITIVE_STATES[primitive - 1];
        times.push(t);
        needle.push(n);
        tool_a.push(a);
        tool_b.push(b);
        gripper_a.push(ja);
        gripper_b.push(jb);
        holder.push(h);
    }
    // the final sample closes the cycle exactly
    let last = needle.len() - 1;
    needle[last] = n0;
    tool_a[last] = n0.compose(&grip_a);

    let slot = DemoProfile::demo_slot_pose();
    let tm = p.tremor_mm * v;
    let tr = p.tremor_deg.to_radians() * v;
    let mut tremor = |pose: &Pose| -> Pose {
        if tm == 0.0 && tr == 0.0 {
            return *pose;
        }
        let mut g = |s: f64| if s > 0.0 { Normal::new(0.0, s).expect("sigma").sample(rng) } else { 0.0 };
        let t = Vector3::new(g(tm), g(tm), g(tm));
        let w = Vector3::new(g(tr), g(tr), g(tr));
        pose.compose(&Pose::from_rotation_vector(t, w))
    };
    let to_mandrel = |poses: &[Pose], tremor: &mut dyn FnMut(&Pose) -> Pose| -> Vec<Pose> {
        poses.iter().map(|q| slot.compose(&tremor(q))).collect()
    };
    let stream = |poses: Vec<Pose>| {
        let mut s = Stream::from_poses(FrameId::MANDREL, &times, &poses);
        s.unwrap_rotations();
        s
    };
    let needle_m = to_mandrel(&needle, &mut tremor);
    let a_m = to_mandrel(&tool_a, &mut tremor);
    let b_m = to_mandrel(&tool_b, &mut tremor);
    Demonstration {
        tool_a: stream(a_m),
        tool_b: stream(b_m),
        needle: stream(needle_m),
        gripper_a,
        gripper_b,
        needle_holder: holder,
    }
}

/// References that replay the noiseless demonstration at its own speed
/// (`R = 1`), without learning. Useful as a ground-truth baseline.
pub fn nominal_references(profile: &DemoProfile) -> Result<Vec<ReferenceTrajectory>, PipelineError> {
    let nominal = DemoProfile {
        variability: 0.0,
        ..profile.clone()
    };
    let demo = generate_demos(&nominal, 1, 0)?.remove(0);
    let streams = primitive_streams(&demo)?;
    Ok(streams
        .iter()
        .enumerate()
        .map(|(k, s)| ReferenceTrajectory {
            primitive_index: k + 1,
            frame: s.frame,
            samples: s
                .samples
                .iter()
                .map(|x| ReferenceSample {
                    t: x.t,
                    t_hat: x.t,
                    mu_h: x.h.into(),
                    sigma_hh: [[0.0; 6]; 6],
                    r: 1.0,
                })
                .collect(),
        })
        .collect())
}

/// Writes demonstrations as `demo_<k>.jsonl` files; returns their paths.
pub fn write_demos(
    demos: &[Demonstration],
    dir: &std::path::Path,
) -> Result<Vec<std::path::PathBuf>, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))?;
    demos
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let path = dir.join(format!("demo_{k}.jsonl"));
            let f = std::fs::File::create(&path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
            d.write_jsonl(std::io::BufWriter::new(f))
                .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
            Ok(path)
        })
        .collect()
}

/// Reads demonstration files.
pub fn read_demos(paths: &[std::path::PathBuf]) -> Result<Vec<Demonstration>, PipelineError> {
    paths
        .iter()
        .map(|p| {
            let f = std::fs::File::open(p).map_err(|e| PipelineError::Input(format!("{}: {e}", p.display())))?;
            Ok(Demonstration::read_jsonl(std::io::BufReader::new(f))?)
        })
        .collect()
}
