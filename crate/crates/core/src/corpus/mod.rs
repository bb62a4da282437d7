//! Raw code ingestion, dataset persistence, deduplication and splitting.

mod jsonl;
pub mod llm;
mod rouge;
mod split;
pub mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::BugType;

pub use jsonl::{read_jsonl, write_jsonl};
pub use rouge::{dedup, lcs_len, rouge_l, DedupReport, Removal};
pub use split::{split, split_by_group, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Crawled,
    Converted,
    Synthetic,
}

/// One correct code sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub code: String,
    pub origin: Origin,
}

/// How files are cut into samples.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum SampleDelimiter {
    #[default]
    WholeFile,
    /// A sample starts at a line containing `begin` and ends at the next
    /// line containing `end`, both inclusive.
    Keywords { begin: String, end: String },
}

pub const SOURCE_EXTENSIONS: &[&str] = &["c", "cc", "cpp", "cxx", "h", "hh", "hpp", "hxx"];

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub samples: Vec<SampleRecord>,
    /// Files skipped by the extension allowlist.
    pub filtered: Vec<PathBuf>,
    /// Files that could not be read.
    pub warnings: Vec<String>,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>, warnings: &mut Vec<String>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        match entry {
            Ok(e) => paths.push(e.path()),
            Err(e) => warnings.push(format!("{}: {e}", dir.display())),
        }
    }
    paths.sort();
    for p in paths {
        if p.is_dir() {
            collect_files(&p, out, warnings)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Drops markdown fence lines (```...) that leak into crawled code.
fn strip_fences(text: &str) -> String {
    text.split_inclusive('\n')
        .filter(|line| !line.trim_start().starts_with("```"))
        .collect()
}

fn split_keywords(text: &str, begin: &str, end: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Option<String> = None;
    for line in text.split_inclusive('\n') {
        match &mut current {
            None if line.contains(begin) => {
                let mut s = line.to_string();
                if line.contains(end) && !end.is_empty() && line.find(end) > line.find(begin) {
                    out.push(std::mem::take(&mut s));
                } else {
                    current = Some(s);
                }
            }
            None => {}
            Some(buf) => {
                buf.push_str(line);
                if line.contains(end) {
                    out.push(current.take().expect("open block"));
                }
            }
        }
    }
    out
}

/// Reads every source file under `dir` into samples.
pub fn ingest(dir: &Path, delimiter: &SampleDelimiter) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    let mut files = Vec::new();
    collect_files(dir, &mut files, &mut report.warnings)?;
    for path in files {
        let allowed = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| SOURCE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if !allowed {
            report.filtered.push(path);
            continue;
        }
        let text = match fs::read_to_string(&path) {
            Ok(t) => strip_fences(&t),
            Err(e) => {
                report.warnings.push(format!("{}: {e}", path.display()));
                continue;
            }
        };
        let rel = path.strip_prefix(dir).unwrap_or(&path).to_string_lossy().replace('\\', "/");
        let pieces = match delimiter {
            SampleDelimiter::WholeFile => vec![text],
            SampleDelimiter::Keywords { begin, end } => split_keywords(&text, begin, end),
        };
        let multi = pieces.len() > 1;
        for (k, code) in pieces.into_iter().enumerate() {
            if code.trim().is_empty() {
                continue;
            }
            let id = if multi { format!("{rel}#{k}") } else { rel.clone() };
            report.samples.push(SampleRecord {
                id,
                code,
                origin: Origin::Crawled,
            });
        }
    }
    if report.samples.is_empty() {
        return Err(Error::Data(format!("no code samples found under {}", dir.display())));
    }
    Ok(report)
}

/// Summary written next to every dataset file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub tool_version: String,
    #[serde(default)]
    pub invocation: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Record counts per output file or split.
    pub counts: BTreeMap<String, usize>,
    #[serde(default)]
    pub histogram: BTreeMap<BugType, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dedup: Option<DedupReport>,
    #[serde(default)]
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl DatasetManifest {
    pub const VERSION: u32 = 1;

    pub fn new(invocation: Vec<String>, seed: Option<u64>) -> Self {
        DatasetManifest {
            version: Self::VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            invocation,
            seed,
            ..Default::default()
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whole_file_and_filter() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.c"), "int a;\n").unwrap();
        fs::write(dir.path().join("b.cpp"), "```cpp\nint b;\n```\n").unwrap();
        fs::write(dir.path().join("notes.md"), "# readme").unwrap();
        let r = ingest(dir.path(), &SampleDelimiter::WholeFile).unwrap();
        assert_eq!(r.samples.len(), 2);
        assert_eq!(r.samples[1].code, "int b;\n");
        assert_eq!(r.filtered.len(), 1);
        assert!(r.filtered[0].ends_with("notes.md"));
    }

    #[test]
    fn keyword_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let text = "junk\nmodule a\nx;\nend module\nmodule b\nend module\nnoise\nmodule c\ny;\nend module\n";
        fs::write(dir.path().join("m.c"), text).unwrap();
        let rule = SampleDelimiter::Keywords {
            begin: "module".into(),
            end: "end module".into(),
        };
        let r = ingest(dir.path(), &rule).unwrap();
        assert_eq!(r.samples.len(), 3);
        assert_eq!(r.samples[0].code, "module a\nx;\nend module\n");
        assert_eq!(r.samples[2].id, "m.c#2");
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x.md"), "text").unwrap();
        assert!(matches!(ingest(dir.path(), &SampleDelimiter::WholeFile), Err(Error::Data(_))));
    }
}
