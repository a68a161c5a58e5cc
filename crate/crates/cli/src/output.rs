use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dashgauss::Image;

/// Sibling temp path keeping the file extension, so format-sniffing writers still work.
fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    path.with_file_name(format!(".tmp-{}-{name}", std::process::id()))
}

fn commit(tmp: &Path, path: &Path) -> Result<()> {
    fs::rename(tmp, path).with_context(|| format!("cannot move {} into place", path.display()))
}

/// Writes `contents` to `path` via a temp file and rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = temp_path(path);
    fs::write(&tmp, contents).with_context(|| format!("cannot write {}", tmp.display()))?;
    commit(&tmp, path)
}

pub fn write_png_atomic(path: &Path, image: &Image) -> Result<()> {
    let tmp = temp_path(path);
    image.save_png(&tmp)?;
    commit(&tmp, path)
}

pub fn write_json_atomic<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}
