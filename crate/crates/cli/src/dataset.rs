//! Dataset directory ingestion.
//!
//! Images are `<id>.bmp` or `<id>.png`, annotations `<id>_anno.bmp` or
//! `<id>_anno.png` holding integer label maps. The split is read from the
//! id prefix: `train_`, `testA_`, `testB_` (case-insensitive).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    TestA,
    TestB,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::TestA, Split::TestB];

    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train_",
            Split::TestA => "testa_",
            Split::TestB => "testb_",
        }
    }

    pub fn of_id(id: &str) -> Option<Split> {
        let lower = id.to_ascii_lowercase();
        Split::ALL.into_iter().find(|s| lower.starts_with(s.prefix()))
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::TestA => "testA",
            Split::TestB => "testB",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "testa" => Ok(Split::TestA),
            "testb" => Ok(Split::TestB),
            _ => Err(format!("unknown split `{s}` (expected train, testA or testB)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    pub id: String,
    pub image: PathBuf,
    pub annotation: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub split: Split,
    pub entries: Vec<DatasetEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{0}: dataset directory not found")]
    MissingRoot(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}: training image has no annotation")]
    MissingAnnotation(PathBuf),
    #[error("{0}: annotation has no matching image")]
    OrphanAnnotation(PathBuf),
    #[error("{0}: both .bmp and .png present")]
    Duplicate(PathBuf),
    #[error("{path}: cannot decode: {message}")]
    Undecodable { path: PathBuf, message: String },
    #[error("{annotation}: size {found:?} differs from image size {expected:?}")]
    SizeMismatch { annotation: PathBuf, expected: (u32, u32), found: (u32, u32) },
}

const ANNO_SUFFIX: &str = "_anno";

fn image_stem(path: &Path) -> Option<String> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    if ext != "bmp" && ext != "png" {
        return None;
    }
    path.file_stem()?.to_str().map(str::to_string)
}

fn dimensions(path: &Path) -> Result<(u32, u32), DatasetError> {
    image::image_dimensions(path).map_err(|e| DatasetError::Undecodable { path: path.to_path_buf(), message: e.to_string() })
}

fn insert_unique(map: &mut BTreeMap<String, PathBuf>, key: String, path: PathBuf) -> Result<(), DatasetError> {
    if map.insert(key, path.clone()).is_some() {
        return Err(DatasetError::Duplicate(path));
    }
    Ok(())
}

/// Index one split of `root`, sorted by id. Every image and annotation
/// header must decode, sizes must agree, and training images need
/// annotations.
pub fn ingest_dataset(root: &Path, split: Split) -> Result<DatasetIndex, DatasetError> {
    index_split(root, split, true)
}

/// Like [`ingest_dataset`] but without opening any file, so unreadable
/// images surface later as per-image failures.
pub fn scan_dataset(root: &Path, split: Split) -> Result<DatasetIndex, DatasetError> {
    index_split(root, split, false)
}

fn index_split(root: &Path, split: Split, strict: bool) -> Result<DatasetIndex, DatasetError> {
    if !root.is_dir() {
        return Err(DatasetError::MissingRoot(root.to_path_buf()));
    }
    let io = |source| DatasetError::Io { path: root.to_path_buf(), source };
    let mut images = BTreeMap::new();
    let mut annotations = BTreeMap::new();
    for item in std::fs::read_dir(root).map_err(io)? {
        let path = item.map_err(io)?.path();
        if !path.is_file() {
            continue;
        }
        let Some(stem) = image_stem(&path) else { continue };
        match stem.strip_suffix(ANNO_SUFFIX) {
            Some(id) if Split::of_id(id) == Some(split) => insert_unique(&mut annotations, id.to_string(), path)?,
            None if Split::of_id(&stem) == Some(split) => insert_unique(&mut images, stem, path)?,
            _ => {}
        }
    }
    if let Some((_, orphan)) = annotations.iter().find(|(id, _)| !images.contains_key(*id)) {
        return Err(DatasetError::OrphanAnnotation(orphan.clone()));
    }
    let mut entries = Vec::with_capacity(images.len());
    for (id, image) in images {
        let annotation = annotations.remove(&id);
        if !strict {
            entries.push(DatasetEntry { id, image, annotation });
            continue;
        }
        let size = dimensions(&image)?;
        match &annotation {
            Some(a) => {
                let found = dimensions(a)?;
                if found != size {
                    return Err(DatasetError::SizeMismatch { annotation: a.clone(), expected: size, found });
                }
            }
            None if split == Split::Train => return Err(DatasetError::MissingAnnotation(image)),
            None => {}
        }
        entries.push(DatasetEntry { id, image, annotation });
    }
    Ok(DatasetIndex { split, entries })
}

/// Every split with at least one image, in train, testA, testB order.
pub fn ingest_all(root: &Path) -> Result<Vec<DatasetIndex>, DatasetError> {
    let mut out = Vec::new();
    for split in Split::ALL {
        let idx = ingest_dataset(root, split)?;
        if !idx.entries.is_empty() {
            out.push(idx);
        }
    }
    Ok(out)
}
