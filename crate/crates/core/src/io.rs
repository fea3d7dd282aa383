//! File helpers shared by every artifact writer.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

/// Write `bytes` to `path` via a sibling temp file and rename, so readers
/// never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// Shortest round-trip decimal rendering, never in exponent form.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}
