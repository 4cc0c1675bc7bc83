//! Run manifests and cell runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cell::{compute_metrics, CellConfig, CellError, CellSimulator, CycleTrace, MandrelDesign, Metrics, NoiseConfig, StitchRecord};
use crate::lfd::{ModelFile, ReferenceTrajectory};

use super::learn::{read_json, read_model, read_reference, reference_file_name};
use super::PipelineError;

/// Input of the `run` command. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub design_file: PathBuf,
    /// One model per primitive, primitives 1..5 in order.
    pub model_files: Vec<PathBuf>,
    /// References per primitive; defaults to `reference_p<k>.json` next to
    /// each model file.
    #[serde(default)]
    pub reference_files: Option<Vec<PathBuf>>,
    #[serde(default = "default_preset")]
    pub noise_preset: String,
    /// Fields merged over the preset.
    #[serde(default)]
    pub noise_overrides: Option<serde_json::Map<String, Value>>,
    pub n_stitches: usize,
    pub seed: u64,
    /// Cell parameters; defaults apply when absent.
    #[serde(default)]
    pub cell: Option<CellConfig>,
}

fn default_preset() -> String {
    "none".into()
}

/// Everything a run produced, plus the effective inputs.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub design: MandrelDesign,
    pub noise: NoiseConfig,
    pub cell: CellConfig,
    pub models: Vec<ModelFile>,
    pub records: Vec<StitchRecord>,
    pub traces: Vec<CycleTrace>,
    pub metrics: Metrics,
}

/// Reads a manifest and resolves its relative paths.
pub fn load_manifest(path: &Path) -> Result<RunManifest, PipelineError> {
    let mut m: RunManifest = read_json(path).map_err(|e| match e {
        PipelineError::Input(msg) => PipelineError::InvalidManifest(msg),
        other => other,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    resolve(&mut m.design_file);
    m.model_files.iter_mut().for_each(resolve);
    if let Some(r) = m.reference_files.as_mut() {
        r.iter_mut().for_each(resolve);
    }
    Ok(m)
}

/// Noise preset with JSON overrides merged on top.
pub fn resolve_noise(preset: &str, overrides: Option<&serde_json::Map<String, Value>>) -> Result<NoiseConfig, PipelineError> {
    let base = NoiseConfig::preset(preset).ok_or_else(|| {
        PipelineError::InvalidManifest(format!(
            "unknown noise preset {preset:?} (expected one of {:?})",
            NoiseConfig::PRESETS
        ))
    })?;
    let noise = match overrides {
        None => base,
        Some(o) => {
            let mut v = serde_json::to_value(base).expect("serializable");
            let obj = v.as_object_mut().expect("struct serializes to an object");
            for (k, val) in o {
                if !obj.contains_key(k) {
                    return Err(PipelineError::InvalidManifest(format!("unknown noise field {k:?}")));
                }
                obj.insert(k.clone(), val.clone());
            }
            serde_json::from_value(v).map_err(|e| PipelineError::InvalidManifest(format!("noise overrides: {e}")))?
        }
    };
    noise.validate()?;
    Ok(noise)
}

fn load_references(m: &RunManifest) -> Result<(Vec<ModelFile>, Vec<ReferenceTrajectory>), PipelineError> {
    if m.model_files.len() != 5 {
        return Err(PipelineError::InvalidManifest(format!(
            "expected 5 model files, got {}",
            m.model_files.len()
        )));
    }
    let reference_paths: Vec<PathBuf> = match &m.reference_files {
        Some(r) if r.len() != 5 => {
            return Err(PipelineError::InvalidManifest(format!("expected 5 reference files, got {}", r.len())))
        }
        Some(r) => r.clone(),
        None => m
            .model_files
            .iter()
            .enumerate()
            .map(|(i, p)| p.parent().unwrap_or(Path::new(".")).join(reference_file_name(i + 1)))
            .collect(),
    };
    let mut models = Vec::new();
    let mut references = Vec::new();
    for k in 1..=5 {
        let model = read_model(&m.model_files[k - 1])?;
        let reference = read_reference(&reference_paths[k - 1])?;
        if model.primitive_index != k || reference.primitive_index != k {
            return Err(PipelineError::InvalidManifest(format!(
                "entry {k} holds primitive {} (model) / {} (reference)",
                model.primitive_index, reference.primitive_index
            )));
        }
        if model.frame != reference.frame {
            return Err(PipelineError::InvalidManifest(format!(
                "primitive {k}: model and reference frames differ"
            )));
        }
        models.push(model);
        references.push(reference);
    }
    Ok((models, references))
}

/// Runs `n_stitches` consecutive stitch cycles as described by the
/// manifest. `cell_override` replaces the manifest's cell parameters. The
/// simulation itself is single-threaded; run several manifests
/// concurrently to use more cores.
pub fn run_manifest(m: &RunManifest, cell_override: Option<CellConfig>) -> Result<RunOutput, PipelineError> {
    if m.n_stitches == 0 {
        return Err(PipelineError::InvalidManifest("n_stitches must be positive".into()));
    }
    let design = MandrelDesign::load(&m.design_file).map_err(|e| match e {
        CellError::Io(msg) => PipelineError::Input(msg),
        other => other.into(),
    })?;
    let noise = resolve_noise(&m.noise_preset, m.noise_overrides.as_ref())?;
    let cell = cell_override.or_else(|| m.cell.clone()).unwrap_or_default();
    let (models, references) = load_references(m)?;
    let mut sim = CellSimulator::new(design.clone(), &references, cell.clone(), noise, m.seed)?;
    let (records, traces) = sim.run(m.n_stitches)?;
    let metrics = compute_metrics(&records)?;
    Ok(RunOutput {
        design,
        noise,
        cell,
        models,
        records,
        traces,
        metrics,
    })
}
