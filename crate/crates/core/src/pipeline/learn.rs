//! Demonstrations to per-primitive GMM models and speed-scheduled
//! references.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::lfd::{
    build_reference, context_profile, dtw_align, fit_gmm, primitive_streams, select_k, ContextProfile,
    Demonstration, LfdError, ModelFile, Point7, ReferenceTrajectory, Stream,
};
use crate::par::Execution;

use super::PipelineError;

/// Points per component and fold required by `select_k`.
const POINTS_PER_COMPONENT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnOptions {
    /// Candidate component counts; those the data cannot support under
    /// cross-validation are dropped.
    pub k_candidates: Vec<usize>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for LearnOptions {
    fn default() -> Self {
        LearnOptions {
            k_candidates: (2..=8).collect(),
            folds: 5,
            seed: 0,
        }
    }
}

/// Learned model and reference of one primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedPrimitive {
    pub model: ModelFile,
    pub reference: ReferenceTrajectory,
    pub context: ContextProfile,
}

fn points_of(streams: &[Stream]) -> Vec<Point7> {
    streams
        .iter()
        .flat_map(|s| {
            s.samples.iter().map(|x| {
                let mut p = Point7::zeros();
                p[0] = x.t;
                p.fixed_rows_mut::<6>(1).copy_from(&x.h);
                p
            })
        })
        .collect()
}

/// DTW-aligns the demonstrations of one primitive onto the first
/// demonstration's timeline.
fn align(streams: &[Stream]) -> Result<Vec<Stream>, LfdError> {
    let reference = &streams[0];
    let mut others: Vec<Stream> = streams[1..].to_vec();
    for s in others.iter_mut() {
        if let Some(first) = reference.samples.first() {
            s.align_turns_to(&first.h);
        }
    }
    let mut aligned = vec![reference.clone()];
    aligned.extend(dtw_align(reference, &others)?);
    Ok(aligned)
}

/// Per primitive: DTW alignment, context profile, cross-validated `K`,
/// GMM fit, GMR retrieval and speed scheduling. The reference has as many
/// samples as the aligned timeline.
pub fn learn(demos: &[Demonstration], options: &LearnOptions, exec: Execution) -> Result<Vec<LearnedPrimitive>, PipelineError> {
    if demos.len() < 2 {
        return Err(LfdError::TooFewDemos(demos.len()).into());
    }
    if options.folds < 2 || options.k_candidates.is_empty() {
        return Err(PipelineError::InvalidArgument("need two folds and at least one K candidate".into()));
    }
    let per_demo: Vec<Vec<Stream>> = demos.iter().map(primitive_streams).collect::<Result<_, _>>()?;
    (0..5)
        .map(|k| {
            let streams: Vec<Stream> = per_demo.iter().map(|s| s[k].clone()).collect();
            let aligned = align(&streams)?;
            let context = context_profile(&aligned)?;
            let points = points_of(&aligned);
            let candidates: Vec<usize> = options
                .k_candidates
                .iter()
                .copied()
                .filter(|&c| c >= 1 && points.len() >= options.folds * c * POINTS_PER_COMPONENT)
                .collect();
            if candidates.is_empty() {
                return Err(LfdError::TooFewPoints {
                    needed: options.folds * POINTS_PER_COMPONENT,
                    got: points.len(),
                }
                .into());
            }
            let seed = options.seed.wrapping_add(k as u64);
            let kk = select_k(&points, &candidates, options.folds, seed, exec)?;
            let model = fit_gmm(&points, kk, seed)?;
            model.validate()?;
            let frame = aligned[0].frame;
            let reference = build_reference(k + 1, frame, &model, &context, aligned[0].len())?;
            Ok(LearnedPrimitive {
                model: ModelFile::new(k + 1, frame, &model),
                reference,
                context,
            })
        })
        .collect()
}

pub fn model_file_name(primitive: usize) -> String {
    format!("model_p{primitive}.json")
}

pub fn reference_file_name(primitive: usize) -> String {
    format!("reference_p{primitive}.json")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))
}

/// Writes `model_p<k>.json` and `reference_p<k>.json` for every primitive.
pub fn write_learned(learned: &[LearnedPrimitive], dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for l in learned {
        let k = l.model.primitive_index;
        let m = dir.join(model_file_name(k));
        write_json(&m, &l.model)?;
        let r = dir.join(reference_file_name(k));
        write_json(&r, &l.reference)?;
        out.push(m);
        out.push(r);
    }
    Ok(out)
}

pub fn read_reference(path: &Path) -> Result<ReferenceTrajectory, PipelineError> {
    read_json(path)
}

pub fn read_model(path: &Path) -> Result<ModelFile, PipelineError> {
    let m: ModelFile = read_json(path)?;
    m.model()?.validate()?;
    Ok(m)
}
