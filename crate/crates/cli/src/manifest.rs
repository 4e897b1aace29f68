//! Machine-readable record of a command invocation.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config: Value,
    pub outcome: Outcome,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical invocations.
    pub timestamp: u64,
}

#[derive(Debug, Serialize)]
pub struct Outcome {
    pub status: &'static str,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Command-specific summary (counts, metric means, ...).
    pub summary: Value,
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn write(out: &Path, manifest: &Manifest) -> std::io::Result<()> {
    let path = manifest_path(out);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_appends_suffix() {
        assert_eq!(
            manifest_path(Path::new("a/b.jsonl")),
            PathBuf::from("a/b.jsonl.manifest.json")
        );
        assert_eq!(
            manifest_path(Path::new("dir")),
            PathBuf::from("dir.manifest.json")
        );
    }
}
