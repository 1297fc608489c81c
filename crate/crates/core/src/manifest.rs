//! JSONL dataset manifests.
//!
//! One segment per line, keys in a fixed order:
//! `id, county, geometry, area_type, functional_class, posted_limit_mph,
//! freeflow_mph, chip_path, split`. `split` is omitted until a split has been
//! assigned. `chip_path` is resolved relative to the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::RoadSegment;
use crate::split::SplitAssignment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::domain(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    #[serde(flatten)]
    pub segment: RoadSegment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    /// Directory that relative chip paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>, base_dir: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            records,
            base_dir: base_dir.into(),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ManifestRecord =
                serde_json::from_str(&line).map_err(|source| Error::Json {
                    context: format!("{}:{}", path.display(), lineno + 1),
                    source,
                })?;
            record.segment.validate()?;
            if !seen.insert(record.segment.id.clone()) {
                return Err(Error::domain(format!(
                    "{}:{}: duplicate segment id {}",
                    path.display(),
                    lineno + 1,
                    record.segment.id
                )));
            }
            records.push(record);
        }
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(DatasetManifest { records, base_dir })
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(|source| Error::Json {
                context: format!("serializing segment {}", r.segment.id),
                source,
            })?;
            out.push_str(&line);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl()?.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn segments(&self) -> impl Iterator<Item = &RoadSegment> {
        self.records.iter().map(|r| &r.segment)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Absolute (or base-relative) location of a segment's chip.
    pub fn chip_path(&self, segment: &RoadSegment) -> Option<PathBuf> {
        segment.chip_path.as_ref().map(|p| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                self.base_dir.join(p)
            }
        })
    }

    /// Copy whose chip paths no longer depend on `base_dir`, for writing the
    /// manifest somewhere else.
    pub fn with_absolute_chip_paths(&self) -> Result<Self> {
        let base = self.base_dir.canonicalize().map_err(|e| Error::io(&self.base_dir, e))?;
        let mut out = self.clone();
        for r in &mut out.records {
            if let Some(p) = &r.segment.chip_path {
                if Path::new(p).is_relative() {
                    r.segment.chip_path = Some(base.join(p).to_string_lossy().into_owned());
                }
            }
        }
        out.base_dir = base;
        Ok(out)
    }

    /// Copy of this manifest with every record tagged by `assignment`.
    pub fn with_splits(&self, assignment: &SplitAssignment) -> Result<Self> {
        let mut out = self.clone();
        for r in &mut out.records {
            let id = &r.segment.id;
            r.split = Some(assignment.split_of(id).ok_or_else(|| {
                Error::mismatch(format!("segment {id} missing from split assignment"))
            })?);
        }
        Ok(out)
    }
}
