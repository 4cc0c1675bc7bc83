//! Puncture bench: primitive 1 executed from a set of initial grips, each
//! repeated over several seeds, reporting pierce-in errors against the
//! reference.

use serde::{Deserialize, Serialize};

use crate::cell::{CellConfig, CellSimulator, MandrelDesign, NoiseConfig, PunctureOutcome};
use crate::lfd::ReferenceTrajectory;
use crate::par::{map_indexed, Execution};
use crate::vision::NeedleGrip;

use super::{document_body, PipelineError};

/// The six initial grips of the standard puncture bench.
pub fn standard_grips() -> Vec<NeedleGrip> {
    // (rx, ry, rz, x)
    [
        (-1.00, 0.00, 8.51, -1.0),
        (0.41, -9.39, -0.12, 0.0),
        (0.12, -0.99, 1.50, -2.0),
        (1.17, 6.49, 10.00, 1.0),
        (-2.88, 21.00, 7.43, -2.0),
        (-2.00, 6.00, 13.53, -3.0),
    ]
    .iter()
    .map(|&(rx, ry, rz, x)| NeedleGrip::new(x, rx, ry, rz))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PunctureBenchOptions {
    pub design: MandrelDesign,
    pub grips: Vec<NeedleGrip>,
    pub seeds: usize,
    pub base_seed: u64,
    pub noise: NoiseConfig,
    pub cell: CellConfig,
}

impl PunctureBenchOptions {
    /// Design A, the six reported grips, 20 seeds, desk noise.
    pub fn standard() -> Self {
        PunctureBenchOptions {
            design: MandrelDesign::shipped("A").expect("shipped design"),
            grips: standard_grips(),
            seeds: 20,
            base_seed: 0,
            noise: NoiseConfig::desk(),
            cell: CellConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PunctureRow {
    /// 1-based grip index.
    pub trial: usize,
    pub seed: u64,
    pub outcome: PunctureOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PunctureSummary {
    pub rows: Vec<PunctureRow>,
    /// Mean pierce-in error per grip over the seeds that pierced.
    pub per_grip_mean_mm: Vec<Option<f64>>,
    /// Mean over every row that pierced.
    pub mean_error_mm: Option<f64>,
    /// Rows without a pierce-in point.
    pub failures: usize,
    /// Grips whose execution hit the reachability limit.
    pub reach_limited_trials: Vec<usize>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Runs every (grip, seed) pair; pairs are spread over `exec` and each
/// trial runs sequentially, so results do not depend on the execution mode.
pub fn puncture_bench(
    references: &[ReferenceTrajectory],
    options: &PunctureBenchOptions,
    exec: Execution,
) -> Result<PunctureSummary, PipelineError> {
    if options.grips.is_empty() || options.seeds == 0 {
        return Err(PipelineError::InvalidArgument("need at least one grip and one seed".into()));
    }
    let n = options.grips.len() * options.seeds;
    let rows: Vec<Result<PunctureRow, PipelineError>> = map_indexed(exec, n, |i| {
        let g = i / options.seeds;
        let seed = options
            .base_seed
            .wrapping_add((g as u64) << 32)
            .wrapping_add((i % options.seeds) as u64);
        let mut sim = CellSimulator::new(
            options.design.clone(),
            references,
            options.cell.clone(),
            options.noise,
            seed,
        )?
        .with_initial_grip(options.grips[g]);
        sim.exec = Execution::Sequential;
        Ok(PunctureRow {
            trial: g + 1,
            seed,
            outcome: sim.puncture_trial()?,
        })
    });
    let rows: Vec<PunctureRow> = rows.into_iter().collect::<Result<_, _>>()?;
    let per_grip_mean_mm = (1..=options.grips.len())
        .map(|t| mean(rows.iter().filter(|r| r.trial == t).filter_map(|r| r.outcome.error_mm)))
        .collect();
    let mut reach_limited_trials: Vec<usize> = rows.iter().filter(|r| r.outcome.reach_limited).map(|r| r.trial).collect();
    reach_limited_trials.dedup();
    Ok(PunctureSummary {
        mean_error_mm: mean(rows.iter().filter_map(|r| r.outcome.error_mm)),
        failures: rows.iter().filter(|r| r.outcome.error_mm.is_none()).count(),
        per_grip_mean_mm,
        reach_limited_trials,
        rows,
    })
}

pub const PUNCTURE_CSV_HEADER: &str =
    "trial,seed,x_mm,rx_deg,ry_deg,rz_deg,detected,pierce_in_x,pierce_in_y,pierce_in_z,error_mm,reach_limited";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

fn puncture_row(r: &PunctureRow) -> String {
    let o = &r.outcome;
    let p = o.pierce_in;
    format!(
        "{},{},{:.3},{:.3},{:.3},{:.3},{},{},{},{},{},{}",
        r.trial,
        r.seed,
        o.grip.x_mm,
        o.grip.rx_deg,
        o.grip.ry_deg,
        o.grip.rz_deg,
        o.detected.is_some(),
        opt(p.map(|p| p[0])),
        opt(p.map(|p| p[1])),
        opt(p.map(|p| p[2])),
        opt(o.error_mm),
        o.reach_limited
    )
}

#[derive(Serialize)]
struct BenchSummary<'a> {
    mean_error_mm: Option<f64>,
    per_grip_mean_mm: &'a [Option<f64>],
    failures: usize,
    reach_limited_trials: &'a [usize],
    rows: usize,
}

/// Deterministic puncture-bench report body (JSON summary plus one CSV
/// row per grip and seed).
pub fn puncture_report_body<C: Serialize>(command: &str, config: &C, summary: &PunctureSummary) -> String {
    let head = BenchSummary {
        mean_error_mm: summary.mean_error_mm,
        per_grip_mean_mm: &summary.per_grip_mean_mm,
        failures: summary.failures,
        reach_limited_trials: &summary.reach_limited_trials,
        rows: summary.rows.len(),
    };
    let rows: Vec<String> = summary.rows.iter().map(puncture_row).collect();
    document_body(command, config, &head, PUNCTURE_CSV_HEADER, &rows)
}
