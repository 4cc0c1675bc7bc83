use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CellError, FailureCause, StitchRecord};

/// Success rate and stitch-size statistics of a set of stitches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean stitch size over successes (absent without successes).
    pub size_mean_mm: Option<f64>,
    /// Population variance of stitch size over successes (mm^2).
    pub size_variance_mm2: Option<f64>,
}

/// Output of [`compute_metrics`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub overall: SummaryStats,
    pub per_design: BTreeMap<String, SummaryStats>,
    /// Failures per cause; every cause is listed, including zero counts.
    pub causes: BTreeMap<FailureCause, usize>,
}

fn summarize<'a>(records: impl Iterator<Item = &'a StitchRecord>) -> SummaryStats {
    let mut trials = 0;
    let mut sizes = Vec::new();
    for r in records {
        trials += 1;
        if r.is_success() {
            if let Some(s) = r.stitch_size_mm {
                sizes.push(s);
            }
        }
    }
    let successes = sizes.len();
    let (mean, var) = if successes == 0 {
        (None, None)
    } else {
        let n = successes as f64;
        let m = sizes.iter().sum::<f64>() / n;
        let v = sizes.iter().map(|s| (s - m).powi(2)).sum::<f64>() / n;
        (Some(m), Some(v))
    };
    SummaryStats {
        trials,
        successes,
        success_rate: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
        size_mean_mm: mean,
        size_variance_mm2: var,
    }
}

/// Success rate, stitch-size mean and variance over successes, per-design
/// breakdown and failure-cause histogram.
pub fn compute_metrics(records: &[StitchRecord]) -> Result<Metrics, CellError> {
    if records.is_empty() {
        return Err(CellError::EmptyInput);
    }
    let mut designs: BTreeMap<String, Vec<&StitchRecord>> = BTreeMap::new();
    for r in records {
        designs.entry(r.design.clone()).or_default().push(r);
    }
    let per_design = designs
        .into_iter()
        .map(|(id, rs)| (id, summarize(rs.into_iter())))
        .collect();
    let mut causes: BTreeMap<FailureCause, usize> = FailureCause::ALL.iter().map(|c| (*c, 0)).collect();
    for r in records {
        if let Some(c) = r.cause {
            *causes.entry(c).or_default() += 1;
        }
    }
    Ok(Metrics {
        overall: summarize(records.iter()),
        per_design,
        causes,
    })
}
