use serde::{Deserialize, Serialize};

use crate::geometry::FrameId;

use super::gmm::{Mat7, Point7};
use super::{gmr, ContextProfile, GmmModel, LfdError, PoseVec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSample {
    /// Playback time (s).
    pub t: f64,
    /// Query time on the demonstration timeline (s).
    pub t_hat: f64,
    pub mu_h: [f64; 6],
    pub sigma_hh: [[f64; 6]; 6],
    #[serde(rename = "R")]
    pub r: f64,
}

impl ReferenceSample {
    pub fn h(&self) -> PoseVec {
        PoseVec::from_row_slice(&self.mu_h)
    }
}

/// GMR-retrieved trajectory with speed-scheduled playback timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub primitive_index: usize,
    pub frame: FrameId,
    pub samples: Vec<ReferenceSample>,
}

impl ReferenceTrajectory {
    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn speed_profile(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.r).collect()
    }
}

/// Samples the model on a uniform grid over the profile's timeline and
/// assigns playback timestamps.
///
/// Sample `i > 0` is reached `dt / R_i` after sample `i - 1`, where `dt`
/// is the grid spacing and `R_i` the ratio in force at its query time, so
/// `R > 1` plays faster than demonstrated.
pub fn build_reference(
    primitive_index: usize,
    frame: FrameId,
    model: &GmmModel,
    context: &ContextProfile,
    n_samples: usize,
) -> Result<ReferenceTrajectory, LfdError> {
    if n_samples < 2 {
        return Err(LfdError::InvalidArgument("need at least 2 reference samples".into()));
    }
    let (t0, t1) = match (context.times.first(), context.times.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        _ => {
            return Err(LfdError::InvalidArgument(
                "context profile needs a timeline of positive length".into(),
            ))
        }
    };
    let dt = (t1 - t0) / (n_samples - 1) as f64;
    let mut samples = Vec::with_capacity(n_samples);
    let mut t_play = 0.0;
    for i in 0..n_samples {
        let t_hat = if i + 1 == n_samples { t1 } else { t0 + dt * i as f64 };
        let r = context.ratio_at(t_hat);
        if i > 0 {
            t_play += dt / r;
        }
        let out = gmr(model, t_hat);
        let mut sigma = [[0.0; 6]; 6];
        for (a, row) in sigma.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                *v = out.sigma_hh[(a, b)];
            }
        }
        samples.push(ReferenceSample {
            t: t_play,
            t_hat,
            mu_h: out.mu_h.into(),
            sigma_hh: sigma,
            r,
        });
    }
    Ok(ReferenceTrajectory {
        primitive_index,
        frame,
        samples,
    })
}

/// Serialized form of a fitted primitive model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub primitive_index: usize,
    pub frame: FrameId,
    #[serde(rename = "K")]
    pub k: usize,
    pub priors: Vec<f64>,
    pub means: Vec<[f64; 7]>,
    pub covariances: Vec<[[f64; 7]; 7]>,
    pub epsilon: f64,
    pub seed: u64,
}

impl ModelFile {
    pub fn new(primitive_index: usize, frame: FrameId, model: &GmmModel) -> Self {
        ModelFile {
            primitive_index,
            frame,
            k: model.k(),
            priors: model.priors.clone(),
            means: model.means.iter().map(|m| (*m).into()).collect(),
            covariances: model
                .covariances
                .iter()
                .map(|c| {
                    let mut a = [[0.0; 7]; 7];
                    for (i, row) in a.iter_mut().enumerate() {
                        for (j, v) in row.iter_mut().enumerate() {
                            *v = c[(i, j)];
                        }
                    }
                    a
                })
                .collect(),
            epsilon: model.epsilon,
            seed: model.seed,
        }
    }

    pub fn model(&self) -> Result<GmmModel, LfdError> {
        if self.priors.len() != self.k
            || self.means.len() != self.k
            || self.covariances.len() != self.k
        {
            return Err(LfdError::InvalidArgument(format!(
                "model file declares K={} but lists {} priors, {} means, {} covariances",
                self.k,
                self.priors.len(),
                self.means.len(),
                self.covariances.len()
            )));
        }
        let model = GmmModel {
            priors: self.priors.clone(),
            means: self.means.iter().map(|m| Point7::from_row_slice(m)).collect(),
            covariances: self
                .covariances
                .iter()
                .map(|c| Mat7::from_fn(|i, j| c[i][j]))
                .collect(),
            epsilon: self.epsilon,
            seed: self.seed,
        };
        model.validate()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_model() -> GmmModel {
        // h depends linearly on t: x = 0.01 t
        let mut cov = Mat7::identity() * 1e-4;
        cov[(0, 0)] = 1.0;
        cov[(1, 1)] = 2e-4;
        cov[(1, 0)] = 0.01;
        cov[(0, 1)] = 0.01;
        GmmModel {
            priors: vec![1.0],
            means: vec![Point7::zeros()],
            covariances: vec![cov],
            epsilon: 0.0,
            seed: 0,
        }
    }

    fn times(t: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| t * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn uniform_ratios_scale_duration() {
        let m = line_model();
        for (r, expect) in [(1.0, 10.0), (2.0, 5.0), (0.5, 20.0)] {
            let p = ContextProfile::uniform(times(10.0, 11), r);
            let reference = build_reference(1, FrameId::MANDREL, &m, &p, 101).unwrap();
            assert!((reference.duration() - expect).abs() < 1e-9);
            assert!(reference.samples.windows(2).all(|w| w[1].t > w[0].t));
        }
    }

    #[test]
    fn mixed_profile_dwell_sum() {
        let m = line_model();
        let t = 10.0;
        let n = 101;
        let mut p = ContextProfile::uniform(times(t, n), 2.0);
        for i in 0..=50 {
            p.ratio[i] = 0.5;
        }
        let reference = build_reference(1, FrameId::MANDREL, &m, &p, n).unwrap();
        // samples 1..=50 dwell dt/0.5, samples 51..=100 dwell dt/2
        let dt = t / 100.0;
        let expect = 50.0 * dt / 0.5 + 50.0 * dt / 2.0;
        assert!((reference.duration() - expect).abs() < 1e-9);
        assert!((expect - 1.25 * t).abs() < 1e-9);
    }

    #[test]
    fn speed_profile_does_not_change_path() {
        let m = line_model();
        let a = build_reference(1, FrameId::MANDREL, &m, &ContextProfile::uniform(times(4.0, 9), 1.0), 41)
            .unwrap();
        let mut p = ContextProfile::uniform(times(4.0, 9), 2.0);
        p.ratio[3] = 0.5;
        let b = build_reference(1, FrameId::MANDREL, &m, &p, 41).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.mu_h, y.mu_h);
            assert_eq!(x.t_hat, y.t_hat);
        }
    }

    #[test]
    fn model_file_round_trip() {
        let m = line_model();
        let f = ModelFile::new(3, FrameId::MANDREL, &m);
        let json = serde_json::to_string(&f).unwrap();
        assert!(json.contains("\"K\":1"));
        let back: ModelFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.model().unwrap(), m);
    }
}
