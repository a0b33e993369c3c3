//! CSV manifests (`image,mask,domain,split`). Relative paths are resolved
//! against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::Manifest(format!("unknown domain tag `{other}`"))),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub domain: Domain,
    pub split: Split,
}

impl ManifestEntry {
    /// File stem of the image, used as the per-image id in reports.
    pub fn id(&self) -> String {
        self.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub source_train: usize,
    pub source_test: usize,
    pub target_train: usize,
    pub target_test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    image: String,
    #[serde(default)]
    mask: String,
    domain: String,
    split: String,
}

impl DatasetManifest {
    pub fn counts(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for e in &self.entries {
            match (e.domain, e.split) {
                (Domain::Source, Split::Train) => c.source_train += 1,
                (Domain::Source, Split::Test) => c.source_test += 1,
                (Domain::Target, Split::Train) => c.target_train += 1,
                (Domain::Target, Split::Test) => c.target_test += 1,
            }
        }
        c
    }

    pub fn select(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    /// Checks the structural invariants without touching the filesystem.
    pub fn validate_structure(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.image) {
                return Err(Error::Manifest(format!(
                    "duplicate image path {}",
                    e.image.display()
                )));
            }
            if e.domain == Domain::Source && e.split == Split::Train && e.mask.is_none() {
                return Err(Error::Manifest(format!(
                    "source training image {} has no mask",
                    e.image.display()
                )));
            }
        }
        Ok(())
    }

    /// Checks that every referenced file exists and its PNG header is readable.
    pub fn validate_files(&self) -> Result<()> {
        for e in &self.entries {
            for p in std::iter::once(&e.image).chain(e.mask.as_ref()) {
                if !p.exists() {
                    return Err(Error::Manifest(format!("missing file {}", p.display())));
                }
                image::ImageReader::open(p)
                    .and_then(|r| r.with_guessed_format())
                    .map_err(|err| Error::io(p, err))?
                    .into_dimensions()
                    .map_err(|err| Error::Image {
                        path: p.clone(),
                        message: format!("unreadable image header: {err}"),
                    })?;
            }
        }
        Ok(())
    }

    /// Writes the manifest with paths relative to `path`'s directory when possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let rel = |p: &Path| -> String {
            p.strip_prefix(base)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        for e in &self.entries {
            w.serialize(Row {
                image: rel(&e.image),
                mask: e.mask.as_deref().map(rel).unwrap_or_default(),
                domain: e.domain.to_string(),
                split: e.split.to_string(),
            })
            .map_err(|e| Error::Manifest(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Parses manifest text; `base` resolves relative paths.
pub fn parse_manifest(text: &str, base: &Path) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut entries = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Manifest(format!("row {}: {e}", i + 1)))?;
        let resolve = |s: &str| {
            let p = PathBuf::from(s);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        entries.push(ManifestEntry {
            image: resolve(&row.image),
            mask: (!row.mask.is_empty()).then(|| resolve(&row.mask)),
            domain: row.domain.parse()?,
            split: row.split.parse()?,
        });
    }
    let m = DatasetManifest { entries };
    m.validate_structure()?;
    Ok(m)
}

/// Reads, parses and fully validates a manifest file.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let m = parse_manifest(&text, base)?;
    m.validate_files()?;
    Ok(m)
}
