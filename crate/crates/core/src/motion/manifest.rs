//! Dataset manifest: ordered clip references with split assignments.
//!
//! Line-oriented text format:
//!
//! ```text
//! seed=<u64>
//! <relative clip path>\t<train|validation|test>\t<mirror 0|1>
//! ```

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{MotionError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "validation" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: Split,
    pub mirrored: bool,
}

/// Ordered clip references plus the seed that produced the split. Every clip
/// belongs to exactly one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(seed: u64) -> Self {
        DatasetManifest {
            seed,
            entries: Vec::new(),
        }
    }

    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "seed={}", self.seed)?;
        for e in &self.entries {
            writeln!(
                w,
                "{}\t{}\t{}",
                e.path.display(),
                e.split,
                e.mirrored as u8
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut seed = None;
        let mut entries = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| MotionError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message,
            };
            if let Some(rest) = trimmed.strip_prefix("seed=") {
                seed = Some(
                    rest.parse::<u64>()
                        .map_err(|e| parse_err(format!("seed: {e}")))?,
                );
                continue;
            }
            let mut parts = trimmed.split('\t');
            let p = parts
                .next()
                .ok_or_else(|| parse_err("missing path".to_string()))?;
            let split = parts
                .next()
                .and_then(Split::parse)
                .ok_or_else(|| parse_err("missing or unknown split".to_string()))?;
            let mirrored = match parts.next() {
                Some("0") => false,
                Some("1") => true,
                other => return Err(parse_err(format!("bad mirror flag {other:?}"))),
            };
            entries.push(ManifestEntry {
                path: PathBuf::from(p),
                split,
                mirrored,
            });
        }
        let seed = seed.ok_or_else(|| MotionError::Parse {
            path: path.display().to_string(),
            line: 0,
            message: "missing seed line".to_string(),
        })?;
        Ok(DatasetManifest { seed, entries })
    }
}
