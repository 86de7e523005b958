//! Atomic file writes. Every artifact lands via a temp file in the target
//! directory plus a rename, so an interrupted run never leaves a
//! half-written CSV or JSON behind and re-running with identical inputs
//! reproduces identical bytes.

use std::io::Write;
use std::path::{Path, PathBuf};

use powerdse::{Error, Result};

/// Write `bytes` to `path` atomically, creating parent directories as
/// needed. An existing file is replaced in one rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
