//! End-to-end commands: synthetic demonstrations, learning, cell runs,
//! the puncture bench and reports.

mod bench;
mod demo_gen;
mod learn;
mod report;
mod run;

pub use bench::{
    puncture_bench, puncture_report_body, standard_grips, PunctureBenchOptions, PunctureRow, PunctureSummary,
    PUNCTURE_CSV_HEADER,
};
pub use demo_gen::{generate_demos, nominal_references, read_demos, write_demos, DemoProfile};
pub use learn::{
    learn, model_file_name, read_model, read_reference, reference_file_name, write_learned, LearnOptions,
    LearnedPrimitive,
};
pub use report::{
    document_body, read_records, render_report, report_body, with_timestamp, write_records, REPORT_CSV_HEADER,
};
pub use run::{load_manifest, resolve_noise, run_manifest, RunManifest, RunOutput};

use thiserror::Error;

use crate::cell::CellError;
use crate::lfd::LfdError;

/// Version identifier embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// An input file is missing or malformed.
    #[error("input: {0}")]
    Input(String),
    /// Writing an output failed.
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Lfd(#[from] LfdError),
    #[error(transparent)]
    Cell(#[from] CellError),
}

impl PipelineError {
    /// Whether the error is caused by the user's input (as opposed to a
    /// failure while running).
    pub fn is_validation(&self) -> bool {
        match self {
            PipelineError::InvalidProfile(_)
            | PipelineError::InvalidManifest(_)
            | PipelineError::InvalidArgument(_)
            | PipelineError::Input(_) => true,
            PipelineError::Io(_) => false,
            PipelineError::Lfd(e) => !matches!(e, LfdError::SingularComponent(_)),
            PipelineError::Cell(e) => matches!(
                e,
                CellError::InvalidDesign(_)
                    | CellError::InvalidConfig(_)
                    | CellError::InvalidReferences(_)
                    | CellError::UnknownSlot(_)
                    | CellError::Frame(_)
            ),
        }
    }

    /// Stable machine-readable error kind.
    pub fn kind(&self) -> String {
        match self {
            PipelineError::InvalidProfile(_) => "InvalidProfile".into(),
            PipelineError::InvalidManifest(_) => "InvalidManifest".into(),
            PipelineError::InvalidArgument(_) => "InvalidArgument".into(),
            PipelineError::Input(_) => "InputError".into(),
            PipelineError::Io(_) => "IoError".into(),
            PipelineError::Lfd(e) => variant_name(&format!("{e:?}")),
            PipelineError::Cell(e) => variant_name(&format!("{e:?}")),
        }
    }
}

fn variant_name(debug: &str) -> String {
    debug
        .split(|c: char| !c.is_alphanumeric() && c != '_')
        .next()
        .unwrap_or("Error")
        .to_string()
}
