//! File ingestion, run orchestration and reporting.

pub mod io;
pub mod run;
pub mod sweep;
pub mod synth;

pub use io::{read_logits, write_logits, LogitFormat, LogitMatrix};
pub use run::{run_decode, write_report, ReportFormat, RunConfig, RunReport, StepRecord, CSV_COLUMNS};
pub use sweep::{run_sweep, write_sweep_csv, SweepGrid, SweepRow};
pub use synth::{generate_matrix, ScoreFamily};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("row {row} has {found} scores, expected {expected}")]
    InconsistentVocabSize { row: usize, expected: usize, found: usize },
    #[error("bad magic, expected SXLG")]
    BadMagic,
    #[error("unsupported binary version {0}")]
    UnsupportedVersion(u32),
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error(transparent)]
    Decode(#[from] crate::error::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Whether the failure lies in the input data rather than the setup.
    pub fn is_data_error(&self) -> bool {
        use crate::error::Error as E;
        !matches!(
            self,
            HarnessError::Decode(
                E::InvalidConfig(_)
                    | E::InvalidSchemeParam(_)
                    | E::NonPositiveLambda(_)
                    | E::KOutOfRange { .. }
                    | E::POutOfRange(_)
            )
        )
    }
}
