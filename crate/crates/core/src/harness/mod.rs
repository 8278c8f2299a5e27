//! Experiment configuration, orchestration, CSV output and figures.

pub mod config;
pub mod plot;
mod run;
pub mod table;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

pub use config::{parse_config, ExperimentConfig, ProblemKind};
pub use plot::{emit_plots, FigureSpec, PanelSpec};
pub use run::{
    run_experiment, workers_from_env, ExperimentSummary, RunRecord, Solver, HBG_COLUMNS,
    RAP_COLUMNS, SUMMARY_COLUMNS, WORKERS_ENV,
};

use crate::error::{Error, Result};

static TEMP_COUNTER: AtomicUsize = AtomicUsize::new(0);

/// Writes `bytes` to a temporary sibling of `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.{}.{}.tmp",
        name.to_string_lossy(),
        std::process::id(),
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
