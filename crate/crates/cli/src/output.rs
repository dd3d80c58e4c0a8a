//! Per-case output directory: `report.json`, `trace.jsonl`, and key-slice PGMs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use copilot_core::agent::{CaseRun, TerminalStatus};

/// Process exit code for a terminal status.
pub fn exit_code(status: TerminalStatus) -> u8 {
    match status {
        TerminalStatus::Completed => 0,
        TerminalStatus::StepCap | TerminalStatus::TimeBudget => 2,
        TerminalStatus::Aborted => 1,
    }
}

#[derive(Debug, Clone)]
pub struct WrittenCase {
    pub dir: PathBuf,
    pub status: TerminalStatus,
    /// Present only when the run completed with a qualified report.
    pub report: Option<PathBuf>,
    pub key_slices: Vec<PathBuf>,
}

impl WrittenCase {
    /// A completed run without a report file counts as a failure.
    pub fn exit_code(&self) -> u8 {
        match (self.status, &self.report) {
            (TerminalStatus::Completed, None) => 1,
            (s, _) => exit_code(s),
        }
    }
}

/// Writes the trace, and for completed runs the report and its key slices,
/// under `<out>/<case_id>/`.
pub fn write_case(out: &Path, run: &CaseRun) -> Result<WrittenCase> {
    let case_id = &run.trace.query().case_id;
    let dir = out.join(case_id);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let trace_path = dir.join("trace.jsonl");
    std::fs::write(&trace_path, run.trace.to_jsonl()).with_context(|| format!("writing {}", trace_path.display()))?;

    let status = run.status();
    let mut written = WrittenCase { dir: dir.clone(), status, report: None, key_slices: Vec::new() };
    if let (TerminalStatus::Completed, Some(report)) = (status, &run.report) {
        for ks in &report.key_slices {
            if let Some(image) = &ks.image {
                let p = dir.join(&ks.image_path);
                std::fs::write(&p, image.to_pgm()).with_context(|| format!("writing {}", p.display()))?;
                written.key_slices.push(p);
            }
        }
        let p = dir.join("report.json");
        std::fs::write(&p, report.to_json_bytes()).with_context(|| format!("writing {}", p.display()))?;
        written.report = Some(p);
    }
    Ok(written)
}
