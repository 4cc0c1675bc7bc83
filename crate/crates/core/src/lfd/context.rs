use serde::{Deserialize, Serialize};

use super::{LfdError, Stream};

/// Per-sample cross-demonstration variance and the playback speed ratio it
/// implies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextProfile {
    /// Timeline of the aligned demonstrations (s).
    pub times: Vec<f64>,
    /// Largest per-axis translation variance (m^2).
    pub var_t: Vec<f64>,
    /// Largest per-axis rotation variance (deg^2).
    pub var_r: Vec<f64>,
    /// Speed ratio `R` relative to the demonstration.
    pub ratio: Vec<f64>,
}

impl ContextProfile {
    /// Profile with a constant ratio, for playback at a fixed multiple of
    /// the demonstrated speed.
    pub fn uniform(times: Vec<f64>, ratio: f64) -> Self {
        let n = times.len();
        ContextProfile {
            times,
            var_t: vec![0.0; n],
            var_r: vec![0.0; n],
            ratio: vec![ratio; n],
        }
    }

    /// Ratio in force at time `t`: the value of the last profile sample at
    /// or before `t`.
    pub fn ratio_at(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&s| s <= t);
        self.ratio[i.saturating_sub(1).min(self.ratio.len() - 1)]
    }
}

/// Piecewise speed rule, evaluated top-down with the first match winning:
///
/// * `0.5` if `var_t >= 0.01` or `var_r >= 15`
/// * `1.5` if `var_t >= 0.005` or `var_r >= 5`
/// * `2` otherwise
///
/// Boundary values belong to the earlier (slower) branch.
pub fn speed_ratio(var_t: f64, var_r: f64) -> f64 {
    if var_t >= 0.01 || var_r >= 15.0 {
        0.5
    } else if var_t >= 0.005 || var_r >= 5.0 {
        1.5
    } else {
        2.0
    }
}

/// Computes the variance profile of DTW-aligned demonstrations.
///
/// Variances are unbiased (`n - 1`) across demonstrations at each sample.
pub fn context_profile(aligned: &[Stream]) -> Result<ContextProfile, LfdError> {
    if aligned.len() < 2 {
        return Err(LfdError::TooFewDemos(aligned.len()));
    }
    let len = aligned[0].len();
    if len == 0 || aligned.iter().any(|s| s.len() != len) {
        return Err(LfdError::InvalidArgument(
            "aligned streams must share a non-empty timeline".into(),
        ));
    }
    let n = aligned.len() as f64;
    let mut out = ContextProfile {
        times: aligned[0].times(),
        var_t: Vec::with_capacity(len),
        var_r: Vec::with_capacity(len),
        ratio: Vec::with_capacity(len),
    };
    for i in 0..len {
        let mut var = [0.0; 6];
        for (k, v) in var.iter_mut().enumerate() {
            let mean = aligned.iter().map(|s| s.samples[i].h[k]).sum::<f64>() / n;
            *v = aligned
                .iter()
                .map(|s| (s.samples[i].h[k] - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0);
        }
        let vt = var[..3].iter().copied().fold(0.0, f64::max);
        let vr = var[3..].iter().copied().fold(0.0, f64::max);
        out.var_t.push(vt);
        out.var_r.push(vr);
        out.ratio.push(speed_ratio(vt, vr));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FrameId;
    use crate::lfd::{PoseVec, TrajectorySample};

    #[test]
    fn rule_examples() {
        assert_eq!(speed_ratio(0.02, 3.0), 0.5);
        assert_eq!(speed_ratio(0.007, 10.0), 1.5);
        assert_eq!(speed_ratio(0.001, 2.0), 2.0);
        // overlapping branches: slow branch wins
        assert_eq!(speed_ratio(0.001, 20.0), 0.5);
        // boundaries go to the earlier branch
        assert_eq!(speed_ratio(0.01, 0.0), 0.5);
        assert_eq!(speed_ratio(0.005, 0.0), 1.5);
        assert_eq!(speed_ratio(0.0, 15.0), 0.5);
        assert_eq!(speed_ratio(0.0, 5.0), 1.5);
    }

    #[test]
    fn profile_uses_max_axis_sample_variance() {
        let mk = |dx: f64, da: f64| {
            Stream::new(
                FrameId::MANDREL,
                (0..3)
                    .map(|i| TrajectorySample {
                        t: i as f64,
                        h: PoseVec::new(dx, 0.0, 0.0, 0.0, da * i as f64, 0.0),
                    })
                    .collect(),
            )
        };
        let p = context_profile(&[mk(0.0, 0.0), mk(0.2, 4.0)]).unwrap();
        // two samples {0, 0.2}: unbiased variance 0.02
        assert!((p.var_t[0] - 0.02).abs() < 1e-15);
        assert_eq!(p.var_r, vec![0.0, 8.0, 32.0]);
        assert_eq!(p.ratio, vec![0.5, 0.5, 0.5]);
        assert!(matches!(context_profile(&[mk(0.0, 0.0)]), Err(LfdError::TooFewDemos(1))));
    }
}
