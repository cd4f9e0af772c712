use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use protoseg_core::formats;
use protoseg_core::{LabelMap, PrototypeBank, RawMaskSet, RegionEmbedding};

/// Regular files in `dir` with extension `ext`, sorted by path.
pub fn list_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries =
        fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .with_context(|| format!("{}: file name is not valid UTF-8", path.display()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.as_file().sync_all())
        .with_context(|| format!("writing {}", path.display()))?;
    tmp.persist(path)
        .map_err(|e| e.error)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_masks(path: &Path) -> Result<RawMaskSet> {
    let bytes = read(path)?;
    formats::decode_mask_set(&bytes, stem(path)?)
        .with_context(|| format!("invalid mask file {}", path.display()))
}

pub fn load_label_map(path: &Path) -> Result<LabelMap> {
    let bytes = read(path)?;
    formats::decode_label_map(&bytes)
        .with_context(|| format!("invalid label map {}", path.display()))
}

pub fn load_embeddings(path: &Path) -> Result<(usize, Vec<RegionEmbedding>)> {
    let bytes = read(path)?;
    formats::decode_embeddings(&bytes)
        .with_context(|| format!("invalid embeddings file {}", path.display()))
}

pub fn load_bank(path: &Path) -> Result<PrototypeBank> {
    let bytes = read(path)?;
    formats::decode_bank(&bytes)
        .with_context(|| format!("invalid prototype bank {}", path.display()))
}
