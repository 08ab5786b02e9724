//! Volume, mask and report I/O.

mod case;
pub mod nifti;
mod report;

pub use case::{load_case, CaseBundle, CaseError, CARDIAC_REGIONS};
pub use nifti::{read_nifti, read_nifti_axis, write_nifti, NiftiError, NiftiHeader};
pub use report::{fmt6, sanitize, write_run_report, ReportError, RunReport, SliceScore};
pub(crate) use report::{io_err, write_file};
