//! Dataset manifests: CSV files with header `path,label,group,split`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::data(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    /// Relative paths are resolved against the manifest's directory.
    pub path: PathBuf,
    pub label: String,
    pub group: String,
    pub split: Split,
}

/// Rows plus the class and group vocabularies, both in order of first
/// appearance. A class's index in `classes` is its label index.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    root: PathBuf,
    rows: Vec<ManifestRow>,
    classes: Vec<String>,
    groups: Vec<String>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, rows: Vec<ManifestRow>) -> Result<Self> {
        let mut classes: Vec<String> = Vec::new();
        let mut groups: Vec<String> = Vec::new();
        let mut seen = BTreeSet::new();
        for row in &rows {
            if row.label.is_empty() || row.group.is_empty() {
                return Err(Error::data(format!("{}: empty label or group", row.path.display())));
            }
            if !seen.insert(&row.path) {
                return Err(Error::data(format!("{} is listed more than once", row.path.display())));
            }
            if !classes.contains(&row.label) {
                classes.push(row.label.clone());
            }
            if !groups.contains(&row.group) {
                groups.push(row.group.clone());
            }
        }
        let m = DatasetManifest { root: root.into(), rows, classes, groups };
        for c in &m.classes {
            let gs: BTreeSet<&str> = m.rows.iter().filter(|r| &r.label == c).map(|r| r.group.as_str()).collect();
            if gs.len() > 1 {
                return Err(Error::data(format!("class `{c}` appears in several groups")));
            }
        }
        Ok(m)
    }

    /// Reads a manifest and checks that every listed file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        if headers.iter().collect::<Vec<_>>() != ["path", "label", "group", "split"] {
            return Err(Error::data(format!("{}: header must be `path,label,group,split`", path.display())));
        }
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRow>, _>>()
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = DatasetManifest::new(root, rows)?;
        for row in &m.rows {
            let p = m.resolve(row);
            if !p.is_file() {
                return Err(Error::data(format!("manifest entry {} does not exist", p.display())));
            }
        }
        Ok(m)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// Group of each class, indexed like [`DatasetManifest::classes`].
    pub fn class_groups(&self) -> Vec<String> {
        self.classes
            .iter()
            .map(|c| self.rows.iter().find(|r| &r.label == c).expect("class has a row").group.clone())
            .collect()
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        self.root.join(&row.path)
    }

    /// Ground-truth flow stored next to the image with extension `.flo`.
    pub fn flow_path(&self, row: &ManifestRow) -> PathBuf {
        self.resolve(row).with_extension("flo")
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// The same manifest with every image path given a new extension. Used
    /// to point at mapped outputs written beside the inputs.
    pub fn with_root_and_extension(&self, root: impl Into<PathBuf>, ext: &str) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|r| ManifestRow { path: r.path.with_extension(ext), ..r.clone() })
            .collect();
        DatasetManifest { root: root.into(), rows, classes: self.classes.clone(), groups: self.groups.clone() }
    }
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        out.push(p);
    }
    out.sort();
    Ok(out)
}

/// Builds a manifest over pre-extracted frames laid out as
/// `root/<split>/<group>/<class>/<frame>.{ppm,pgm,pnm}`.
pub fn ingest_frames(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let mut rows = Vec::new();
    for split in [Split::Train, Split::Test] {
        let split_dir = root.join(split.to_string());
        if !split_dir.is_dir() {
            continue;
        }
        for group_dir in sorted_dirs(&split_dir)?.into_iter().filter(|p| p.is_dir()) {
            for class_dir in sorted_dirs(&group_dir)?.into_iter().filter(|p| p.is_dir()) {
                for frame in sorted_dirs(&class_dir)? {
                    let ext = frame.extension().and_then(|e| e.to_str()).unwrap_or("");
                    if !matches!(ext, "ppm" | "pgm" | "pnm") {
                        continue;
                    }
                    let name = |p: &Path| p.file_name().unwrap_or_default().to_string_lossy().into_owned();
                    rows.push(ManifestRow {
                        path: frame.strip_prefix(root).expect("frame under root").to_path_buf(),
                        label: name(&class_dir),
                        group: name(&group_dir),
                        split,
                    });
                }
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::data(format!("no frames found under {}", root.display())));
    }
    DatasetManifest::new(root, rows)
}
