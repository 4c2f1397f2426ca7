//! Sources of training and evaluation annotations.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{invalid, Error, Result};
use crate::surface::{load_annotation, SurfaceAnnotation, VertexTable};

pub const VERTEX_TABLE_FILE: &str = "vertex_table.vtx";

pub trait Dataset: Sync {
    fn len(&self) -> usize;

    fn get(&self, index: usize) -> Result<SurfaceAnnotation>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Dataset for Vec<SurfaceAnnotation> {
    fn len(&self) -> usize {
        <[SurfaceAnnotation]>::len(self)
    }

    fn get(&self, index: usize) -> Result<SurfaceAnnotation> {
        Ok(self[index].clone())
    }
}

/// Sample ids of an annotation directory: every `S` with an `S.image.png`, sorted.
pub fn sample_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".image.png")) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Annotations stored on disk, loaded on demand.
#[derive(Clone, Debug)]
pub struct DirectoryDataset {
    dir: PathBuf,
    ids: Vec<String>,
}

impl DirectoryDataset {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Self { dir: dir.to_path_buf(), ids: sample_ids(dir)? })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// The vertex table stored next to the samples, if any.
    pub fn vertex_table(&self) -> Result<Option<VertexTable>> {
        let path = self.dir.join(VERTEX_TABLE_FILE);
        if path.exists() {
            VertexTable::load(&path).map(Some)
        } else {
            Ok(None)
        }
    }
}

impl Dataset for DirectoryDataset {
    fn len(&self) -> usize {
        self.ids.len()
    }

    fn get(&self, index: usize) -> Result<SurfaceAnnotation> {
        load_annotation(&self.dir, &self.ids[index])
    }
}

/// Index range view of another dataset.
pub struct Subset<'a, D: Dataset + ?Sized> {
    inner: &'a D,
    start: usize,
    len: usize,
}

impl<'a, D: Dataset + ?Sized> Subset<'a, D> {
    pub fn new(inner: &'a D, start: usize, len: usize) -> Self {
        assert!(start + len <= inner.len(), "subset out of range");
        Self { inner, start, len }
    }
}

impl<D: Dataset + ?Sized> Dataset for Subset<'_, D> {
    fn len(&self) -> usize {
        self.len
    }

    fn get(&self, index: usize) -> Result<SurfaceAnnotation> {
        if index >= self.len {
            return Err(invalid!("index {index} out of range ({} samples)", self.len));
        }
        self.inner.get(self.start + index)
    }
}
