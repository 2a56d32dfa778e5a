use std::fs;
use std::path::{Path, PathBuf};

use patchrev_core::RasterImage;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{config, Failure};

/// PNG files directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries =
        fs::read_dir(dir).map_err(|e| config(format!("cannot read {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Per-image seed: stable under adding or removing other files.
pub fn item_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a
    let h = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    seed ^ h
}

/// Create `out` and refuse to write into the input directory.
pub fn prepare_out(input: &Path, out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| config(format!("cannot create {}: {e}", out.display())))?;
    let same = match (input.canonicalize(), out.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(config(
            "--out must differ from --in; inputs are never overwritten",
        ));
    }
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(config)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| config(format!("cannot write {}: {e}", path.display())))
}

/// Write to `path`, or stdout when absent.
pub fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn sha256_hex(image: &RasterImage) -> String {
    Sha256::digest(image.data())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Fixed-notation float that stays parseable when NaN.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}
