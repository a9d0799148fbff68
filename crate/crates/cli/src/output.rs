use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fairfactor::DenseMatrix;
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};

/// Files produced by one command, held in memory until every computation has
/// succeeded and then written together.
#[derive(Debug)]
pub struct Artifacts {
    config_hash: String,
    seed: u64,
    files: Vec<(String, String)>,
}

impl Artifacts {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self { config_hash, seed, files: Vec::new() }
    }

    pub fn header(&self) -> String {
        format!("# config_hash={} seed={}", self.config_hash, self.seed)
    }

    /// CSV with the header comment, then `columns`, then `rows`.
    pub fn csv(&mut self, name: &str, columns: &str, rows: impl IntoIterator<Item = String>) {
        let mut body = format!("{}\n{columns}\n", self.header());
        for row in rows {
            body.push_str(&row);
            body.push('\n');
        }
        self.files.push((name.to_string(), body));
    }

    /// Text file whose first line is the header comment.
    pub fn text(&mut self, name: &str, content: &str) {
        self.files.push((name.to_string(), format!("{}\n{content}", self.header())));
    }

    /// Text file written verbatim (the caller embeds the header itself).
    pub fn raw(&mut self, name: &str, content: String) {
        self.files.push((name.to_string(), content));
    }

    /// Pretty JSON object with `config_hash` and `seed` fields added.
    pub fn json(&mut self, name: &str, mut value: Value) {
        if let Some(map) = value.as_object_mut() {
            map.insert("config_hash".into(), json!(self.config_hash));
            map.insert("seed".into(), json!(self.seed));
        }
        let mut body = serde_json::to_string_pretty(&value).expect("JSON value serializes");
        body.push('\n');
        self.files.push((name.to_string(), body));
    }

    /// JSON lines, the first carrying `config_hash` and `seed`.
    pub fn jsonl(&mut self, name: &str, records: impl IntoIterator<Item = Value>) {
        let mut body = json!({ "config_hash": self.config_hash, "seed": self.seed }).to_string();
        body.push('\n');
        for r in records {
            body.push_str(&r.to_string());
            body.push('\n');
        }
        self.files.push((name.to_string(), body));
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Writes every file under `dir`. On failure, removes what was written
    /// (and `dir` itself if this call created it).
    pub fn commit(self, dir: &Path) -> CliResult<Vec<PathBuf>> {
        let created = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| CliError::io("create", dir, e))?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, body) in &self.files {
            let path = dir.join(name);
            if let Err(e) = fs::write(&path, body) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                if created {
                    let _ = fs::remove_dir_all(dir);
                }
                return Err(CliError::io("write", &path, e));
            }
            written.push(path);
        }
        Ok(written)
    }
}

/// Tidy rows `prefix,year,age,value` for a `T x N` block.
pub fn tidy_rows(prefix: &str, years: &[i32], ages: &[u32], block: &DenseMatrix) -> Vec<String> {
    let mut rows = Vec::with_capacity(block.len());
    for (t, year) in years.iter().enumerate() {
        for (i, age) in ages.iter().enumerate() {
            let mut line = String::new();
            let _ = write!(line, "{prefix},{year},{age},{}", block[[t, i]]);
            rows.push(line);
        }
    }
    rows
}
