//! Frame files, key-value text files and safe output writing.

pub mod frame;
pub mod kv;

use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temp file, then renames it over `path`, so a
/// failed write never leaves a partial file behind.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid("write", format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes).map_err(Error::at_path(&tmp))?;
    std::fs::rename(&tmp, path).map_err(Error::at_path(path))
}

/// Creates `dir`; refuses a non-empty existing directory unless `force`.
pub fn prepare_output_dir(dir: impl AsRef<Path>, force: bool) -> Result<()> {
    let dir = dir.as_ref();
    if dir.exists() {
        let occupied = std::fs::read_dir(dir)
            .map_err(Error::at_path(dir))?
            .next()
            .is_some();
        if occupied && !force {
            return Err(Error::invalid(
                "output",
                format!("{} is not empty (pass --force to overwrite)", dir.display()),
            ));
        }
    }
    std::fs::create_dir_all(dir).map_err(Error::at_path(dir))
}

/// Refuses to replace an existing file unless `force`.
pub fn check_overwrite(path: impl AsRef<Path>, force: bool) -> Result<()> {
    let path = path.as_ref();
    if path.exists() && !force {
        return Err(Error::invalid(
            "output",
            format!("{} exists (pass --force to overwrite)", path.display()),
        ));
    }
    Ok(())
}
