#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgg_core::image::u8_to_unit;
use sgg_core::{EmbeddingRaster, ImageRgb, InpaintModel, Region, RegionMask, SurfaceAnnotation, VertexTable};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Image whose values sit exactly on the 8-bit grid.
pub fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImageRgb {
    let data = (0..h * w * 3).map(|_| u8_to_unit(rng.random())).collect();
    ImageRgb::new(h, w, data).unwrap()
}

pub fn random_regions(h: usize, w: usize, p_body: f64, p_dilated: f64, rng: &mut ChaCha8Rng) -> Vec<Region> {
    (0..h * w)
        .map(|_| {
            let u: f64 = rng.random();
            if u < p_body {
                Region::Body
            } else if u < p_body + p_dilated {
                Region::Dilated
            } else {
                Region::Known
            }
        })
        .collect()
}

/// Annotation whose BODY pixels carry table rows when `on_table`, or arbitrary vectors otherwise.
pub fn random_annotation(h: usize, w: usize, table: &VertexTable, on_table: bool, seed: u64) -> SurfaceAnnotation {
    let mut r = rng(seed);
    let regions = random_regions(h, w, 0.5, 0.2, &mut r);
    let c = table.dim();
    let mut emb = EmbeddingRaster::empty(h, w, c);
    for (p, reg) in regions.iter().enumerate() {
        if *reg == Region::Body {
            if on_table {
                let k = r.random_range(0..table.len());
                emb.set(p, Some(table.row(k)));
            } else {
                let e: Vec<f32> = (0..c).map(|_| r.random_range(-1.0..1.0)).collect();
                emb.set(p, Some(&e));
            }
        }
    }
    let image = random_image(h, w, &mut r);
    SurfaceAnnotation::new(image, emb, RegionMask::new(h, w, regions).unwrap()).unwrap()
}

pub fn random_perm(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Colors each generated pixel from its own embedding and z only.
pub struct PointwiseMock {
    pub resolution: (usize, usize),
    pub z_dim: usize,
}

impl InpaintModel for PointwiseMock {
    fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    fn z_dim(&self) -> usize {
        self.z_dim
    }

    fn vertex_table(&self) -> Option<&VertexTable> {
        None
    }

    fn inpaint(&self, ann: &SurfaceAnnotation, z: &[f32], _truncation: f64) -> sgg_core::Result<ImageRgb> {
        let mut out = ann.image().clone();
        let shift = z.first().copied().unwrap_or(0.0) * 0.1;
        for (p, r) in ann.mask().classes().iter().enumerate() {
            let rgb = match r {
                Region::Body => {
                    let e = ann.embeddings().at(p);
                    [e[0].tanh(), e[1].tanh(), (e[2] + shift).tanh()]
                }
                Region::Dilated => [0.25, shift.tanh(), -0.25],
                Region::Known => continue,
            };
            out.set_pixel(p / ann.width(), p % ann.width(), rgb);
        }
        Ok(out)
    }
}

/// Ignores its input and fills generated pixels from one fixed position-dependent pattern.
pub struct FixedPatternMock {
    pub resolution: (usize, usize),
}

impl InpaintModel for FixedPatternMock {
    fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    fn z_dim(&self) -> usize {
        4
    }

    fn vertex_table(&self) -> Option<&VertexTable> {
        None
    }

    fn inpaint(&self, ann: &SurfaceAnnotation, _z: &[f32], _truncation: f64) -> sgg_core::Result<ImageRgb> {
        let mut out = ann.image().clone();
        for (p, r) in ann.mask().classes().iter().enumerate() {
            if r.is_generated() {
                let (y, x) = (p / ann.width(), p % ann.width());
                let v = ((y * 7 + x * 3) % 11) as f32 / 5.0 - 1.0;
                out.set_pixel(y, x, [v, -v, (x % 2) as f32 - 0.5]);
            }
        }
        Ok(out)
    }
}

/// Pointwise BODY blob of random table rows in the middle of an otherwise KNOWN canvas.
pub fn interior_annotation(h: usize, w: usize, table: &VertexTable, seed: u64) -> SurfaceAnnotation {
    let mut r = rng(seed);
    let mut regions = vec![Region::Known; h * w];
    let mut emb = EmbeddingRaster::empty(h, w, table.dim());
    for y in h / 4..3 * h / 4 {
        for x in w / 4..3 * w / 4 {
            let p = y * w + x;
            if y == h / 4 || x == w / 4 {
                regions[p] = Region::Dilated;
            } else {
                regions[p] = Region::Body;
                emb.set(p, Some(table.row(r.random_range(0..table.len()))));
            }
        }
    }
    let image = random_image(h, w, &mut r);
    SurfaceAnnotation::new(image, emb, RegionMask::new(h, w, regions).unwrap()).unwrap()
}
