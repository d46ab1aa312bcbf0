use std::fs;
use std::path::{Path, PathBuf};

use mono3d::kitti_io::parse_calib_file;
use mono3d::ProjectionMatrix;

use crate::error::{core_in_file, io_error, CliError, CliResult};

/// Image ids of the `*.<ext>` files in `dir`, sorted.
pub fn list_ids(dir: &Path, ext: &str) -> CliResult<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| io_error(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_error(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn id_path(dir: &Path, id: &str, ext: &str) -> PathBuf {
    dir.join(format!("{id}.{ext}"))
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| io_error(path, e))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    String::from_utf8(read_bytes(path)?)
        .map_err(|e| CliError::Input(format!("{}: not valid UTF-8: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

/// `P2` of image `id`, or an input error naming the missing file.
pub fn read_calib(calib_dir: &Path, id: &str) -> CliResult<ProjectionMatrix> {
    let path = id_path(calib_dir, id, "txt");
    if !path.is_file() {
        return Err(CliError::Input(format!(
            "missing calibration for image {id}: {}",
            path.display()
        )));
    }
    parse_calib_file(&read_text(&path)?).map_err(|e| core_in_file(&path, e))
}

/// Pretty JSON with sorted keys and a trailing newline.
pub fn to_sorted_json<T: serde::Serialize>(value: &T) -> String {
    // serde_json::Value stores objects in a BTreeMap
    let v = serde_json::to_value(value).expect("value is serializable");
    let mut s = serde_json::to_string_pretty(&v).expect("value is serializable");
    s.push('\n');
    s
}
