//! Procedural dataset whose BODY texture is a known function of the surface embedding.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, VERTEX_TABLE_FILE};
use crate::error::{invalid, Error, Result};
use crate::image::ImageRgb;
use crate::surface::{dilate_mask, save_annotation, EmbeddingRaster, Region, RegionMask, SurfaceAnnotation, VertexTable, EMBED_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub table_seed: u64,
    /// Vertex grid over the body parametrization; K = grid_u · grid_v.
    pub grid_u: usize,
    pub grid_v: usize,
    pub texture_seed: u64,
    pub palette_seed: u64,
    pub sample_seed: u64,
    pub samples: usize,
    /// Inclusive range of ellipses per body (torso and head included).
    pub min_blobs: usize,
    pub max_blobs: usize,
    pub dilation: usize,
    /// Standard deviation of the per-sample shift added to the blue channel before squashing.
    pub hue_shift_std: f64,
    /// Standard deviation of the texture matrix entries.
    pub texture_scale: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 32,
            table_seed: 1,
            grid_u: 32,
            grid_v: 32,
            texture_seed: 2,
            palette_seed: 3,
            sample_seed: 4,
            samples: 2000,
            min_blobs: 3,
            max_blobs: 5,
            dilation: 2,
            hue_shift_std: 0.15,
            texture_scale: 1.5,
        }
    }
}

/// A rendered sample and the hue shift it was drawn with.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub annotation: SurfaceAnnotation,
    pub hue_shift: f64,
}

const PALETTE_SIZE: usize = 8;

/// A synthetic dataset: its settings plus the derived table, texture map and palette.
#[derive(Clone, Debug)]
pub struct Synthetic {
    spec: SyntheticSpec,
    table: VertexTable,
    texture: [[f64; EMBED_DIM]; 3],
    palette: Vec<[f32; 3]>,
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

impl Synthetic {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        if spec.height < 8 || spec.width < 8 {
            return Err(invalid!("synthetic images must be at least 8x8"));
        }
        if spec.grid_u < 2 || spec.grid_v < 2 {
            return Err(invalid!("vertex grid must be at least 2x2"));
        }
        if spec.min_blobs < 2 || spec.max_blobs < spec.min_blobs {
            return Err(invalid!("blob range must satisfy 2 <= min <= max"));
        }
        let table = smooth_table(spec.grid_u, spec.grid_v, spec.table_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
        let mut texture = [[0.0; EMBED_DIM]; 3];
        for row in &mut texture {
            for v in row.iter_mut() {
                *v = spec.texture_scale * { let n: f64 = StandardNormal.sample(&mut rng); n };
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.palette_seed);
        let palette = (0..PALETTE_SIZE).map(|_| std::array::from_fn(|_| rng.random_range(-0.8f32..0.8))).collect();
        Ok(Self { spec, table, texture, palette })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn table(&self) -> &VertexTable {
        &self.table
    }

    /// Body color of embedding `e` under hue shift `shift`.
    pub fn texture(&self, e: &[f32], shift: f64) -> [f32; 3] {
        std::array::from_fn(|c| {
            let mut v: f64 = self.texture[c].iter().zip(e).map(|(t, &x)| t * x as f64).sum();
            if c == 2 {
                v += shift;
            }
            v.tanh() as f32
        })
    }

    /// Deterministic sample `index`.
    pub fn render(&self, index: usize) -> Result<SyntheticSample> {
        let s = &self.spec;
        if index >= s.samples {
            return Err(invalid!("sample {index} out of range ({} samples)", s.samples));
        }
        let (h, w) = (s.height, s.width);
        let (hf, wf) = (h as f64, w as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(s.sample_seed);
        rng.set_stream(index as u64);

        // background: flat color plus a few rectangles and discs
        let bg = rng.random_range(0..PALETTE_SIZE);
        let mut image = ImageRgb::filled(h, w, self.palette[bg]);
        for _ in 0..rng.random_range(2..=4) {
            let color = self.palette[rng.random_range(0..PALETTE_SIZE)];
            let (cy, cx) = (rng.random_range(0.0..hf), rng.random_range(0.0..wf));
            let (ry, rx) = (rng.random_range(0.05..0.25) * hf, rng.random_range(0.1..0.4) * wf);
            let disc = rng.random_bool(0.5);
            for y in 0..h {
                for x in 0..w {
                    let (dy, dx) = ((y as f64 + 0.5 - cy) / ry, (x as f64 + 0.5 - cx) / rx);
                    let inside = if disc { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                    if inside {
                        image.set_pixel(y, x, color);
                    }
                }
            }
        }

        // body: torso, head, limbs
        let cy = rng.random_range(0.42..0.58) * hf;
        let cx = rng.random_range(0.38..0.62) * wf;
        let ty = rng.random_range(0.14..0.2) * hf;
        let tx = rng.random_range(0.16..0.24) * wf;
        let mut parts = vec![Ellipse { cy, cx, ry: ty, rx: tx, angle: rng.random_range(-0.2..0.2) }];
        let hr = rng.random_range(0.09..0.13) * wf;
        parts.push(Ellipse { cy: cy - ty - 0.8 * hr, cx: cx + rng.random_range(-0.3..0.3) * tx, ry: hr, rx: hr, angle: 0.0 });
        let blobs = rng.random_range(s.min_blobs..=s.max_blobs);
        for _ in 2..blobs {
            let dir = rng.random_range(0.0..TAU);
            let len = rng.random_range(0.1..0.17) * hf;
            let (sd, cd) = dir.sin_cos();
            parts.push(Ellipse {
                cy: cy + sd * (ty * 0.8 + len * 0.6),
                cx: cx + cd * (tx * 0.8 + len * 0.6),
                ry: rng.random_range(0.05..0.08) * wf,
                rx: len,
                angle: dir,
            });
        }
        let mut classes = vec![Region::Known; h * w];
        for y in 0..h {
            for x in 0..w {
                if parts.iter().any(|e| e.contains(y as f64 + 0.5, x as f64 + 0.5)) {
                    classes[y * w + x] = Region::Body;
                }
            }
        }
        let hue_shift = s.hue_shift_std * { let n: f64 = StandardNormal.sample(&mut rng); n };

        // smooth parametrization of the body by its bounding box
        let body: Vec<usize> = (0..h * w).filter(|&p| classes[p] == Region::Body).collect();
        if body.is_empty() {
            return Err(Error::Precondition(format!("synthetic sample {index} has no body pixels")));
        }
        let (y0, y1) = (body.iter().map(|p| p / w).min().unwrap(), body.iter().map(|p| p / w).max().unwrap());
        let (x0, x1) = (body.iter().map(|p| p % w).min().unwrap(), body.iter().map(|p| p % w).max().unwrap());
        let mut emb = EmbeddingRaster::empty(h, w, EMBED_DIM);
        for &p in &body {
            let (y, x) = (p / w, p % w);
            let u = (x - x0) as f64 / (x1 - x0).max(1) as f64;
            let v = (y - y0) as f64 / (y1 - y0).max(1) as f64;
            let k = (v * (s.grid_v - 1) as f64).round() as usize * s.grid_u + (u * (s.grid_u - 1) as f64).round() as usize;
            let e = self.table.row(k);
            emb.set(p, Some(e));
            image.set_pixel(y, x, self.texture(e, hue_shift));
        }
        let mask = dilate_mask(&RegionMask::new(h, w, classes)?, s.dilation);
        Ok(SyntheticSample { annotation: SurfaceAnnotation::new(image, emb, mask)?, hue_shift })
    }

    /// Recomputes the BODY texture from the embeddings; other pixels are returned as given.
    pub fn oracle_texture(&self, ann: &SurfaceAnnotation, hue_shift: f64) -> ImageRgb {
        let mut image = ann.image().clone();
        let w = ann.width();
        for (p, &r) in ann.mask().classes().iter().enumerate() {
            if r == Region::Body {
                image.set_pixel(p / w, p % w, self.texture(ann.embeddings().at(p), hue_shift));
            }
        }
        image
    }

    /// Writes every sample, the vertex table and a metadata file into `dir`.
    pub fn write_dataset(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.table.save(&dir.join(VERTEX_TABLE_FILE))?;
        let mut shifts = Vec::with_capacity(self.spec.samples);
        for i in 0..self.spec.samples {
            let sample = self.render(i)?;
            save_annotation(&sample.annotation, dir, &sample_id(i))?;
            shifts.push(sample.hue_shift);
        }
        let meta = serde_json::json!({ "spec": self.spec, "hue_shifts": shifts });
        let path = dir.join("synthetic.json");
        fs::write(&path, serde_json::to_string_pretty(&meta).expect("serializable")).map_err(|e| Error::io(&path, e))
    }
}

pub fn sample_id(index: usize) -> String {
    format!("{index:05}")
}

impl Dataset for Synthetic {
    fn len(&self) -> usize {
        self.spec.samples
    }

    fn get(&self, index: usize) -> Result<SurfaceAnnotation> {
        Ok(self.render(index)?.annotation)
    }
}

/// Unit-norm rows of low-frequency cosines over a (u, v) grid, so nearby grid points get
/// nearby embeddings.
pub fn smooth_table(grid_u: usize, grid_v: usize, seed: u64) -> Result<VertexTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64)> =
        (0..EMBED_DIM).map(|_| (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(0.0..TAU))).collect();
    let mut data = Vec::with_capacity(grid_u * grid_v * EMBED_DIM);
    for iv in 0..grid_v {
        for iu in 0..grid_u {
            let (u, v) = (iu as f64 / (grid_u - 1) as f64, iv as f64 / (grid_v - 1) as f64);
            let row: Vec<f64> = waves.iter().map(|(a, b, phi)| (TAU * (a * u + b * v) + phi).cos()).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            data.extend(row.iter().map(|x| (x / norm) as f32));
        }
    }
    VertexTable::new(grid_u * grid_v, EMBED_DIM, data)
}
