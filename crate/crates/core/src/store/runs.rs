use std::fs::File;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::domain::GapReport;
use crate::error::{Error, Result};
use crate::pipeline::RunResult;

pub const RUN_SCHEMA_VERSION: u64 = 1;

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut File) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    write(tmp.as_file_mut())?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn persist_versioned<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut doc = serde_json::to_value(value)?;
    let Value::Object(map) = &mut doc else {
        unreachable!("versioned documents are JSON objects");
    };
    map.insert("schema_version".into(), RUN_SCHEMA_VERSION.into());
    write_atomic(path, |f| {
        serde_json::to_writer_pretty(&mut *f, &doc)?;
        Ok(())
    })
}

fn load_versioned<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut doc: Value = serde_json::from_slice(&bytes)?;
    let version = doc
        .as_object_mut()
        .and_then(|m| m.remove("schema_version"))
        .ok_or_else(|| Error::Invalid(format!("{}: missing schema_version", path.display())))?;
    match version.as_u64() {
        Some(RUN_SCHEMA_VERSION) => Ok(serde_json::from_value(doc)?),
        found => Err(Error::UnsupportedVersion {
            found: found.unwrap_or(0),
            expected: RUN_SCHEMA_VERSION,
        }),
    }
}

/// Saves a run as one self-describing JSON document.
pub fn persist_run(result: &RunResult, path: &Path) -> Result<()> {
    persist_versioned(result, path)
}

pub fn load_run(path: &Path) -> Result<RunResult> {
    load_versioned(path)
}

pub fn persist_gap(report: &GapReport, path: &Path) -> Result<()> {
    persist_versioned(report, path)
}

pub fn load_gap(path: &Path) -> Result<GapReport> {
    load_versioned(path)
}
