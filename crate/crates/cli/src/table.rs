//! CSV tables exchanged between commands.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use icpcov::{Cov6, Error, Result};

/// Header of a covariance table: an id column and the 21 lower-triangle
/// entries in row-major order.
pub fn cov_header() -> String {
    let mut h = String::from("id");
    for r in 0..6 {
        for c in 0..=r {
            let _ = write!(h, ",c{r}{c}");
        }
    }
    h
}

pub fn write_covs(path: &Path, rows: &[(usize, Cov6)]) -> Result<()> {
    let mut text = cov_header();
    text.push('\n');
    for (id, cov) in rows {
        let _ = write!(text, "{id}");
        for v in cov.to_lower21() {
            let _ = write!(text, ",{v}");
        }
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn read_covs(path: &Path) -> Result<Vec<(usize, Cov6)>> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == cov_header() => {}
        _ => {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: 1,
                reason: "missing covariance table header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            reason,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 22 {
            return Err(bad(format!("expected 22 fields, got {}", fields.len())));
        }
        let id = fields[0].parse::<usize>().map_err(|e| bad(e.to_string()))?;
        let mut v = [0.0; 21];
        for (dst, src) in v.iter_mut().zip(&fields[1..]) {
            *dst = src.parse::<f64>().map_err(|e| bad(e.to_string()))?;
            if !dst.is_finite() {
                return Err(bad("non-finite entry".into()));
            }
        }
        out.push((id, Cov6::from_lower21(&v)));
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source,
    }
}
