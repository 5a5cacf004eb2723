//! File formats, pipelines and the command-line front end of the soft-sensing
//! toolkit. The numerical engine lives in `softsense-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod pipeline;
pub mod report;

pub use softsense_core as core;

use std::path::Path;

use error::{CliError, CliResult};

/// Write through a sibling temporary file and rename it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let name = path.file_name().ok_or_else(|| CliError::usage(format!("{}: not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes).map_err(|e| CliError::data(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        CliError::data(format!("{}: {e}", path.display()))
    })
}
