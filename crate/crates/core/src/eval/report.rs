use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::io::write_atomic;

/// Write `<stem>.json` and, when given, `<stem>.csv` into `dir`, each atomically.
pub fn write_report<T: Serialize>(dir: &Path, stem: &str, value: &T, csv: Option<&str>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let json = dir.join(format!("{stem}.json"));
    write_atomic(&json, serde_json::to_string_pretty(value)?.as_bytes())?;
    let mut out = vec![json];
    if let Some(csv) = csv {
        let path = dir.join(format!("{stem}.csv"));
        write_atomic(&path, csv.as_bytes())?;
        out.push(path);
    }
    Ok(out)
}
