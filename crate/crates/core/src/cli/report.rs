use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Crate version and git revision the binary was built from.
pub fn build_info() -> Value {
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "git_revision": env!("DEAR_GIT_REVISION"),
    })
}

/// Wraps a command's results with the configuration and build that produced
/// them.
pub fn envelope<R: Serialize>(command: &str, raw_config: &Value, resolved: &impl Serialize, results: &R) -> Result<Value> {
    let results = serde_json::to_value(results).map_err(|e| Error::Data(format!("serializing report: {e}")))?;
    let resolved = serde_json::to_value(resolved).map_err(|e| Error::Data(format!("serializing config: {e}")))?;
    Ok(json!({
        "command": command,
        "build": build_info(),
        "config": raw_config,
        "resolved": resolved,
        "results": results,
    }))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::json(path, e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
