//! On-disk layout: `<dir>/runset.json` indexes the run records and each run's
//! events live in `<dir>/runs/<run_id>.jsonl` behind a schema header line.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RunError, RunOutput, RunRecord, RunSet};
use crate::schema::{EventRecord, LogHeader};

pub const RUNSET_INDEX: &str = "runset.json";
pub const RUNS_DIR: &str = "runs";

pub(crate) fn log_ref(run_id: &str) -> String {
    format!("{RUNS_DIR}/{run_id}.jsonl")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunIndex {
    pub release_root: String,
    pub runs: Vec<RunRecord>,
}

pub fn write_event_log(path: &Path, events: &[EventRecord]) -> Result<(), RunError> {
    let mut buf = Vec::new();
    serde_json::to_writer(&mut buf, &LogHeader::default())?;
    buf.push(b'\n');
    for e in events {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Read a log written by [`write_event_log`]. Lines are decoded but not
/// validated; the header must be present.
pub fn read_event_log(path: &Path) -> Result<(LogHeader, Vec<EventRecord>), RunError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let header: LogHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)
            .map_err(|e| RunError::InvalidLog(format!("{}: bad header: {e}", path.display())))?,
        None => return Err(RunError::InvalidLog(format!("{}: empty log", path.display()))),
    };
    let mut events = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line)?);
    }
    Ok((header, events))
}

pub fn write_runset(dir: &Path, runset: &RunSet) -> Result<(), RunError> {
    fs::create_dir_all(dir.join(RUNS_DIR))?;
    for run in &runset.runs {
        if let Some(r) = &run.record.event_log_ref {
            write_event_log(&dir.join(r), &run.events)?;
        }
    }
    let index = RunIndex {
        release_root: runset.release_root.clone(),
        runs: runset.runs.iter().map(|r| r.record.clone()).collect(),
    };
    fs::write(dir.join(RUNSET_INDEX), serde_json::to_vec_pretty(&index)?)?;
    Ok(())
}

/// Load an index file (or a directory containing one) with its event logs.
pub fn load_runset(path: &Path) -> Result<RunSet, RunError> {
    let index_path = if path.is_dir() {
        path.join(RUNSET_INDEX)
    } else {
        path.to_path_buf()
    };
    let base = index_path.parent().unwrap_or(Path::new("."));
    let index: RunIndex = serde_json::from_slice(&fs::read(&index_path)?)?;
    let mut runs = Vec::with_capacity(index.runs.len());
    for record in index.runs {
        let events = match &record.event_log_ref {
            Some(r) => read_event_log(&base.join(r))?.1,
            None => Vec::new(),
        };
        runs.push(RunOutput { record, events });
    }
    Ok(RunSet {
        release_root: index.release_root,
        runs,
    })
}
