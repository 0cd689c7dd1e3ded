//! Table and JSON emitters.  Every table starts with two comment lines —
//! the engine version and the SHA-256 of the resolved configuration — so
//! any plot can be traced back to the exact run that produced it.

use std::io::Write;
use std::path::Path;

use crate::CliError;

pub fn version_line() -> String {
    format!("fockflow {}", env!("CARGO_PKG_VERSION"))
}

/// Write a numeric table as CSV with version/config-hash comment lines.
pub fn write_csv(
    path: &Path,
    config_hash: &str,
    header: &[&str],
    rows: &[Vec<f64>],
) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "# {}", version_line())?;
    writeln!(file, "# config-sha256: {config_hash}")?;
    let mut writer = csv::Writer::from_writer(file);
    writer
        .write_record(header)
        .map_err(|e| CliError::Schema(e.to_string()))?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        let fields: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
        writer
            .write_record(&fields)
            .map_err(|e| CliError::Schema(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Write a JSON document with version and config hash attached.
pub fn write_json<T: serde::Serialize>(
    path: &Path,
    config_hash: &str,
    payload: &T,
) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let doc = serde_json::json!({
        "version": version_line(),
        "config_sha256": config_hash,
        "result": payload,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Schema(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}
