//! Vertex tables, embedding rasters, tri-state region masks and their on-disk formats.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::image::ImageRgb;

pub const EMBED_DIM: usize = 16;

const VTX_MAGIC: &[u8; 4] = b"VTX1";
const EMB_MAGIC: &[u8; 4] = b"EMB1";

fn row_key(row: &[f32]) -> Vec<u32> {
    // +0.0 and -0.0 compare equal, so they must hash equal
    row.iter().map(|v| if *v == 0.0 { 0 } else { v.to_bits() }).collect()
}

/// K×C table of canonical-surface vertex embeddings.
#[derive(Clone, Debug)]
pub struct VertexTable {
    dim: usize,
    data: Vec<f32>,
    lookup: HashMap<Vec<u32>, usize>,
}

impl PartialEq for VertexTable {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.data == other.data
    }
}

impl VertexTable {
    pub fn new(k: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if k < 2 {
            return Err(invalid!("vertex table needs at least 2 rows, got {k}"));
        }
        if dim == 0 || data.len() != k * dim {
            return Err(invalid!("vertex table data has {} values, expected {k}x{dim}", data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("vertex table contains non-finite values"));
        }
        let mut lookup = HashMap::with_capacity(k);
        for (i, row) in data.chunks(dim).enumerate() {
            if let Some(j) = lookup.insert(row_key(row), i) {
                return Err(invalid!("vertex table rows {j} and {i} are identical"));
            }
        }
        Ok(Self { dim, data, lookup })
    }

    /// Seeded table of unit-norm Gaussian rows.
    pub fn random_unit(k: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(k * dim);
        for _ in 0..k {
            let row: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt().max(f32::MIN_POSITIVE);
            data.extend(row.iter().map(|v| v / norm));
        }
        Self::new(k, dim, data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, k: usize) -> &[f32] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Index of the row exactly equal to `e`, if any.
    pub fn index_of(&self, e: &[f32]) -> Option<usize> {
        if e.len() != self.dim {
            return None;
        }
        self.lookup.get(&row_key(e)).copied()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(12 + self.data.len() * 4);
        buf.extend_from_slice(VTX_MAGIC);
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let plane = "vertex table";
        let mut r = Reader::new(&bytes, plane);
        r.magic(VTX_MAGIC)?;
        let k = r.u32()? as usize;
        let c = r.u32()? as usize;
        let data = r.f32s(k.checked_mul(c).ok_or_else(|| Error::format(plane, "size overflow"))?)?;
        r.finish()?;
        Self::new(k, c, data).map_err(|e| Error::format(plane, e.to_string()))
    }
}

/// H×W×C embedding raster with a validity plane.
#[derive(Clone, Debug)]
pub struct EmbeddingRaster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    valid: Vec<bool>,
}

impl PartialEq for EmbeddingRaster {
    /// Compares shapes, validity, and embeddings on valid pixels only.
    fn eq(&self, other: &Self) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
            && self.valid == other.valid
            && (0..self.valid.len())
                .filter(|&i| self.valid[i])
                .all(|i| self.at(i).iter().zip(other.at(i)).all(|(a, b)| a.to_bits() == b.to_bits()))
    }
}

impl EmbeddingRaster {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        if data.len() != height * width * channels || valid.len() != height * width {
            return Err(invalid!("embedding raster planes do not match {height}x{width}x{channels}"));
        }
        if channels == 0 {
            return Err(invalid!("embedding raster needs at least one channel"));
        }
        for (i, _) in valid.iter().enumerate().filter(|(_, v)| **v) {
            if data[i * channels..(i + 1) * channels].iter().any(|v| !v.is_finite()) {
                return Err(invalid!("valid embedding at pixel {i} is not finite"));
            }
        }
        Ok(Self { height, width, channels, data, valid })
    }

    /// A raster with no valid pixel.
    pub fn empty(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels], valid: vec![false; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, pixel: usize) -> bool {
        self.valid[pixel]
    }

    /// Embedding at flat pixel index `pixel`; only meaningful when valid.
    pub fn at(&self, pixel: usize) -> &[f32] {
        &self.data[pixel * self.channels..(pixel + 1) * self.channels]
    }

    pub fn set(&mut self, pixel: usize, e: Option<&[f32]>) {
        let c = self.channels;
        match e {
            Some(e) => {
                self.data[pixel * c..(pixel + 1) * c].copy_from_slice(e);
                self.valid[pixel] = true;
            }
            None => {
                self.data[pixel * c..(pixel + 1) * c].fill(0.0);
                self.valid[pixel] = false;
            }
        }
    }

    /// Output pixel `i` takes input pixel `perm[i]`.
    pub fn permute_pixels(&self, perm: &[usize]) -> Self {
        let mut out = Self::empty(self.height, self.width, self.channels);
        for (i, &j) in perm.iter().enumerate() {
            out.set(i, self.valid[j].then(|| self.at(j)));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    Known,
    Body,
    Dilated,
}

impl Region {
    pub fn code(self) -> u8 {
        match self {
            Region::Known => 255,
            Region::Dilated => 128,
            Region::Body => 0,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            255 => Some(Region::Known),
            128 => Some(Region::Dilated),
            0 => Some(Region::Body),
            _ => None,
        }
    }

    /// True for pixels the generator fills in (BODY or DILATED).
    pub fn is_generated(self) -> bool {
        self != Region::Known
    }
}

/// H×W plane of region classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMask {
    height: usize,
    width: usize,
    classes: Vec<Region>,
}

impl RegionMask {
    pub fn new(height: usize, width: usize, classes: Vec<Region>) -> Result<Self> {
        if classes.len() != height * width {
            return Err(invalid!("mask has {} pixels, expected {height}x{width}", classes.len()));
        }
        Ok(Self { height, width, classes })
    }

    pub fn filled(height: usize, width: usize, region: Region) -> Self {
        Self { height, width, classes: vec![region; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> &[Region] {
        &self.classes
    }

    pub fn get(&self, y: usize, x: usize) -> Region {
        self.classes[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, region: Region) {
        self.classes[y * self.width + x] = region;
    }

    pub fn count(&self, region: Region) -> usize {
        self.classes.iter().filter(|&&r| r == region).count()
    }

    pub fn permute_pixels(&self, perm: &[usize]) -> Self {
        Self { height: self.height, width: self.width, classes: perm.iter().map(|&j| self.classes[j]).collect() }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.classes.iter().map(|r| r.code()).collect();
        image::save_buffer(path, &bytes, self.width as u32, self.height as u32, image::ColorType::L8)
            .map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
        if img.color() != image::ColorType::L8 {
            return Err(Error::format("mask", format!("expected 8-bit gray, found {:?}", img.color())));
        }
        let img = img.into_luma8();
        let (w, h) = img.dimensions();
        let classes = img
            .as_raw()
            .iter()
            .map(|&c| Region::from_code(c).ok_or_else(|| Error::format("mask", format!("unknown mask code {c}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(h as usize, w as usize, classes)
    }
}

/// Image, embeddings and mask of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceAnnotation {
    image: ImageRgb,
    embeddings: EmbeddingRaster,
    mask: RegionMask,
}

impl SurfaceAnnotation {
    pub fn new(image: ImageRgb, embeddings: EmbeddingRaster, mask: RegionMask) -> Result<Self> {
        let (h, w) = (image.height(), image.width());
        if (embeddings.height, embeddings.width) != (h, w) {
            return Err(Error::format("embeddings", format!("raster is {}x{}, image is {h}x{w}", embeddings.height, embeddings.width)));
        }
        if (mask.height, mask.width) != (h, w) {
            return Err(Error::format("mask", format!("mask is {}x{}, image is {h}x{w}", mask.height, mask.width)));
        }
        if !image.is_finite() {
            return Err(Error::format("image", "image contains non-finite values"));
        }
        for (i, (&region, &valid)) in mask.classes.iter().zip(&embeddings.valid).enumerate() {
            let (y, x) = (i / w, i % w);
            if region == Region::Body && !valid {
                return Err(Error::format("mask", format!("BODY pixel ({y}, {x}) has no embedding")));
            }
            if region != Region::Body && valid {
                return Err(Error::format("embeddings", format!("embedding at non-BODY pixel ({y}, {x})")));
            }
        }
        Ok(Self { image, embeddings, mask })
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn image(&self) -> &ImageRgb {
        &self.image
    }

    pub fn embeddings(&self) -> &EmbeddingRaster {
        &self.embeddings
    }

    pub fn mask(&self) -> &RegionMask {
        &self.mask
    }

    pub fn into_parts(self) -> (ImageRgb, EmbeddingRaster, RegionMask) {
        (self.image, self.embeddings, self.mask)
    }

    pub fn with_image(&self, image: ImageRgb) -> Result<Self> {
        Self::new(image, self.embeddings.clone(), self.mask.clone())
    }

    pub fn with_mask(&self, mask: RegionMask) -> Result<Self> {
        Self::new(self.image.clone(), self.embeddings.clone(), mask)
    }

    pub fn with_embeddings(&self, embeddings: EmbeddingRaster) -> Result<Self> {
        Self::new(self.image.clone(), embeddings, self.mask.clone())
    }

    /// Applies one pixel permutation jointly to all planes.
    pub fn permute_pixels(&self, perm: &[usize]) -> Result<Self> {
        let (h, w) = (self.height(), self.width());
        let mut data = Vec::with_capacity(h * w * 3);
        for &j in perm {
            data.extend_from_slice(&self.image.data()[j * 3..j * 3 + 3]);
        }
        Self::new(ImageRgb::new(h, w, data)?, self.embeddings.permute_pixels(perm), self.mask.permute_pixels(perm))
    }
}

/// Index of the table row nearest to `e` in Euclidean distance; ties go to the smallest index.
pub fn nearest_vertex(e: &[f32], table: &VertexTable) -> Result<usize> {
    if e.len() != table.dim() {
        return Err(invalid!("embedding has {} channels, table has {}", e.len(), table.dim()));
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(invalid!("embedding is not finite"));
    }
    // an exact row match is the unique minimum since rows are distinct
    if let Some(k) = table.index_of(e) {
        return Ok(k);
    }
    let mut best = (f64::INFINITY, 0);
    for (k, row) in table.data.chunks(table.dim).enumerate() {
        let d: f64 = e.iter().zip(row).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
        if d < best.0 {
            best = (d, k);
        }
    }
    Ok(best.1)
}

/// Nearest vertex index for every valid pixel.
pub fn nearest_indices(raster: &EmbeddingRaster, table: &VertexTable) -> Result<Vec<Option<usize>>> {
    if raster.channels != table.dim() {
        return Err(invalid!("raster has {} channels, table has {}", raster.channels, table.dim()));
    }
    (0..raster.valid.len())
        .map(|i| if raster.valid[i] { nearest_vertex(raster.at(i), table).map(Some) } else { Ok(None) })
        .collect()
}

/// Replaces every valid embedding by its nearest table row.
pub fn discretize(raster: &EmbeddingRaster, table: &VertexTable) -> Result<EmbeddingRaster> {
    let indices = nearest_indices(raster, table)?;
    let mut out = EmbeddingRaster::empty(raster.height, raster.width, raster.channels);
    for (i, k) in indices.into_iter().enumerate() {
        out.set(i, k.map(|k| table.row(k)));
    }
    Ok(out)
}

/// Table indices of an already discretized raster; errors if a valid pixel is not a table row.
pub fn vertex_indices(raster: &EmbeddingRaster, table: &VertexTable) -> Result<Vec<Option<usize>>> {
    (0..raster.valid.len())
        .map(|i| {
            if !raster.valid[i] {
                return Ok(None);
            }
            table.index_of(raster.at(i)).map(Some).ok_or_else(|| {
                Error::Precondition(format!("embedding at pixel {i} is not a vertex table row; discretize first"))
            })
        })
        .collect()
}

/// Turns every KNOWN pixel within Chebyshev distance `radius` of a BODY pixel into DILATED.
pub fn dilate_mask(mask: &RegionMask, radius: usize) -> RegionMask {
    let (h, w) = (mask.height, mask.width);
    if radius == 0 || h == 0 || w == 0 {
        return mask.clone();
    }
    // separable max filter over the BODY indicator
    let mut rows = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(radius), (x + radius).min(w - 1));
            rows[y * w + x] = (lo..=hi).any(|xx| mask.classes[y * w + xx] == Region::Body);
        }
    }
    let mut out = mask.clone();
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(radius), (y + radius).min(h - 1));
        for x in 0..w {
            let i = y * w + x;
            if out.classes[i] == Region::Known && (lo..=hi).any(|yy| rows[yy * w + x]) {
                out.classes[i] = Region::Dilated;
            }
        }
    }
    out
}

/// File locations of one sample in an annotation directory.
#[derive(Clone, Debug)]
pub struct AnnotationPaths {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub embeddings: PathBuf,
}

impl AnnotationPaths {
    pub fn new(dir: &Path, id: &str) -> Self {
        Self {
            image: dir.join(format!("{id}.image.png")),
            mask: dir.join(format!("{id}.mask.png")),
            embeddings: dir.join(format!("{id}.emb")),
        }
    }
}

/// Writes `id.image.png`, `id.mask.png` and `id.emb` into `dir`.
pub fn save_annotation(ann: &SurfaceAnnotation, dir: &Path, id: &str) -> Result<()> {
    let paths = AnnotationPaths::new(dir, id);
    ann.image.save_png(&paths.image)?;
    ann.mask.save_png(&paths.mask)?;
    save_embeddings(&ann.embeddings, &paths.embeddings)
}

pub fn load_annotation(dir: &Path, id: &str) -> Result<SurfaceAnnotation> {
    let paths = AnnotationPaths::new(dir, id);
    let image = ImageRgb::load_png(&paths.image)?;
    let mask = RegionMask::load_png(&paths.mask)?;
    let embeddings = load_embeddings(&paths.embeddings)?;
    SurfaceAnnotation::new(image, embeddings, mask)
}

/// Invalid pixels are stored as NaN so validity survives the round trip.
pub fn save_embeddings(raster: &EmbeddingRaster, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + raster.data.len() * 4);
    buf.extend_from_slice(EMB_MAGIC);
    for d in [raster.height, raster.width, raster.channels] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for (i, chunk) in raster.data.chunks(raster.channels).enumerate() {
        for v in chunk {
            let v = if raster.valid[i] { *v } else { f32::NAN };
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingRaster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let plane = "embeddings";
    let mut r = Reader::new(&bytes, plane);
    r.magic(EMB_MAGIC)?;
    let (h, w, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if c == 0 {
        return Err(Error::format(plane, "zero channels"));
    }
    let n = h.checked_mul(w).and_then(|p| p.checked_mul(c)).ok_or_else(|| Error::format(plane, "size overflow"))?;
    let data = r.f32s(n)?;
    r.finish()?;
    let mut valid = Vec::with_capacity(h * w);
    for (i, chunk) in data.chunks(c).enumerate() {
        let finite = chunk.iter().filter(|v| v.is_finite()).count();
        if finite != 0 && finite != c {
            return Err(Error::format(plane, format!("pixel {i} is partially defined")));
        }
        valid.push(finite == c);
    }
    let data = data.into_iter().map(|v| if v.is_finite() { v } else { 0.0 }).collect();
    EmbeddingRaster::new(h, w, c, data, valid)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    plane: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], plane: &'static str) -> Self {
        Self { bytes, pos: 0, plane }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.plane, format!("truncated file: needed {n} bytes at offset {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != magic {
            return Err(Error::format(self.plane, format!("bad magic {:?}", String::from_utf8_lossy(m))));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.plane, "size overflow"))?)?;
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.plane, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}
