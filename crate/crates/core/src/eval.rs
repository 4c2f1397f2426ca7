//! Invariance and diversity measurements on trained models.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sgg_autodiff::{no_grad, Tensor, Var};

use crate::dataset::Dataset;
use crate::discriminator::surface_loss_var;
use crate::error::{invalid, Error, Result};
use crate::image::{tile, ImageRgb};
use crate::nn::ParamSet;
use crate::surface::{SurfaceAnnotation, VertexTable};
use crate::training::discretize_annotation;
use crate::transform::{transform_annotation, transform_image, Border, Spatial};
use crate::{Discriminator, InpaintModel, SurfaceBatch};

/// Returned for identical images.
pub const PSNR_CAP: f64 = 100.0;

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (4.0 / mse).log10()).min(PSNR_CAP)
}

/// PSNR for images in [-1, 1] (dynamic range 2).
pub fn psnr(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    masked_psnr(a, b, &vec![true; a.height() * a.width()])
}

/// PSNR over the pixels where `valid` is set.
pub fn masked_psnr(a: &ImageRgb, b: &ImageRgb, valid: &[bool]) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(invalid!("image shapes differ: {}x{} vs {}x{}", a.height(), a.width(), b.height(), b.width()));
    }
    if valid.len() != a.height() * a.width() {
        return Err(invalid!("validity plane has {} entries for {} pixels", valid.len(), a.height() * a.width()));
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (p, _) in valid.iter().enumerate().filter(|(_, &v)| v) {
        for c in 0..3 {
            let d = a.data()[p * 3 + c] as f64 - b.data()[p * 3 + c] as f64;
            sum += d * d;
        }
        count += 3;
    }
    if count == 0 {
        return Err(invalid!("no valid pixels to compare"));
    }
    Ok(psnr_from_mse(sum / count as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Translation,
    Rotation,
    Hflip,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Translation, Family::Rotation, Family::Hflip];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "translation" => Ok(Self::Translation),
            "rotation" => Ok(Self::Rotation),
            "hflip" => Ok(Self::Hflip),
            _ => Err(invalid!("unknown transform family {s:?} (expected translation, rotation or hflip)")),
        }
    }

    /// Draws a non-identity transform: translations up to 1/8 of each side, rotations within ±90°.
    pub fn draw<R: Rng + ?Sized>(self, height: usize, width: usize, rng: &mut R) -> Spatial {
        match self {
            Family::Translation => {
                let (my, mx) = ((height / 8) as i64, (width / 8) as i64);
                loop {
                    let dy = rng.random_range(-my..=my);
                    let dx = rng.random_range(-mx..=mx);
                    if dy != 0 || dx != 0 {
                        return Spatial::Translate { dy, dx };
                    }
                }
            }
            Family::Rotation => loop {
                let degrees: f64 = rng.random_range(-90.0..=90.0);
                if degrees.abs() >= 1.0 {
                    return Spatial::Rotate { degrees };
                }
            },
            Family::Hflip => Spatial::Hflip,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub translation: Option<f64>,
    pub rotation: Option<f64>,
    pub hflip: Option<f64>,
    pub samples: usize,
    pub seed: u64,
}

impl InvarianceReport {
    pub fn get(&self, family: Family) -> Option<f64> {
        match family {
            Family::Translation => self.translation,
            Family::Rotation => self.rotation,
            Family::Hflip => self.hflip,
        }
    }

    fn set(&mut self, family: Family, v: f64) {
        match family {
            Family::Translation => self.translation = Some(v),
            Family::Rotation => self.rotation = Some(v),
            Family::Hflip => self.hflip = Some(v),
        }
    }
}

pub fn random_z<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f32> {
    Tensor::<f32>::randn(&[dim], rng).into_vec()
}

/// PSNR between t(G(ann)) and G(t(ann)) with the same z, over pixels valid under both.
pub fn invariance_psnr(model: &dyn InpaintModel, ann: &SurfaceAnnotation, t: Spatial, z: &[f32]) -> Result<f64> {
    let moved = transform_annotation(ann, t, Border::Exclude)?;
    let after = model.inpaint(&moved.ann, z, 1.0)?;
    let (before, valid) = transform_image(&model.inpaint(ann, z, 1.0)?, t, Border::Exclude);
    let both: Vec<bool> = valid.iter().zip(&moved.valid).map(|(&a, &b)| a && b).collect();
    masked_psnr(&before, &after, &both)
}

/// Mean invariance PSNR of one transform family over the first `n` samples (cycling if needed).
pub fn invariance_study(model: &dyn InpaintModel, data: &dyn Dataset, family: Family, n: usize, seed: u64) -> Result<InvarianceReport> {
    let mut report = InvarianceReport { samples: n, seed, ..Default::default() };
    report.set(family, invariance_mean(model, data, family, n, seed)?);
    Ok(report)
}

/// Runs every family in `families` with the same seed and sample count.
pub fn invariance_studies(model: &dyn InpaintModel, data: &dyn Dataset, families: &[Family], n: usize, seed: u64) -> Result<InvarianceReport> {
    let mut report = InvarianceReport { samples: n, seed, ..Default::default() };
    for &f in families {
        report.set(f, invariance_mean(model, data, f, n, seed)?);
    }
    Ok(report)
}

fn invariance_mean(model: &dyn InpaintModel, data: &dyn Dataset, family: Family, n: usize, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(invalid!("invariance study needs at least one sample"));
    }
    if data.is_empty() {
        return Err(invalid!("invariance study needs a non-empty dataset"));
    }
    let (h, w) = model.resolution();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for i in 0..n {
        let ann = data.get(i % data.len())?;
        let t = family.draw(h, w, &mut rng);
        let z = random_z(model.z_dim(), &mut rng);
        total += invariance_psnr(model, &ann, t, &z)?;
    }
    Ok(total / n as f64)
}

/// Mean pairwise mean-absolute difference over BODY ∪ DILATED between `n` samples of `ann`.
pub fn diversity_proxy(model: &dyn InpaintModel, ann: &SurfaceAnnotation, n: usize, seed: u64, truncation: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = (0..n)
        .map(|_| model.inpaint(ann, &random_z(model.z_dim(), &mut rng), truncation))
        .collect::<Result<Vec<_>>>()?;
    let region: Vec<usize> =
        ann.mask().classes().iter().enumerate().filter(|(_, r)| r.is_generated()).map(|(p, _)| p).collect();
    if region.is_empty() || n < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0f64;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (images[i].data(), images[j].data());
            let sum: f64 = region
                .iter()
                .flat_map(|&p| (0..3).map(move |c| p * 3 + c))
                .map(|k| (a[k] as f64 - b[k] as f64).abs())
                .sum();
            total += sum / (region.len() * 3) as f64;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Tiles `images` row-major into one PNG.
pub fn emit_grid(images: &[ImageRgb], columns: usize, path: &Path) -> Result<()> {
    tile(images, columns)?.save_png(path)
}

/// Mean surface-regression error of the discriminator on real samples, over samples with BODY pixels.
pub fn discriminator_surface_error(
    d: &Discriminator,
    params: &ParamSet<f32>,
    anns: &[SurfaceAnnotation],
    table: &VertexTable,
    beta: f64,
) -> Result<f64> {
    let p = params.bind(false);
    let mut total = 0.0;
    let mut samples = 0usize;
    for chunk in anns.chunks(16) {
        let chunk = chunk.iter().map(|a| discretize_annotation(a, table)).collect::<Result<Vec<_>>>()?;
        let batch = SurfaceBatch::<f32>::new(&chunk, Some(table))?;
        let (loss, n) = no_grad(|| -> Result<_> {
            let out = d.forward(&p, &Var::constant(batch.image.clone()), &batch.mask_planes)?;
            Ok(surface_loss_var(&out.e_hat, &batch.embeddings, &batch.body, beta))
        })?;
        total += loss.item() as f64 * n as f64;
        samples += n;
    }
    if samples == 0 {
        return Err(Error::Precondition("no sample has BODY pixels".into()));
    }
    Ok(total / samples as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub truncation: f64,
    /// Mean of the per-sample diversity proxies.
    pub mean: f64,
    pub samples: usize,
    pub images_per_sample: usize,
    pub seed: u64,
}

/// Averages [`diversity_proxy`] over the first `n` samples, each with its own seed stream.
pub fn diversity_study(
    model: &dyn InpaintModel,
    data: &dyn Dataset,
    n: usize,
    images_per_sample: usize,
    seed: u64,
    truncation: f64,
) -> Result<DiversityReport> {
    if n == 0 || data.is_empty() {
        return Err(invalid!("diversity study needs at least one sample"));
    }
    let mut total = 0.0;
    for i in 0..n {
        let ann = data.get(i % data.len())?;
        total += diversity_proxy(model, &ann, images_per_sample, seed.wrapping_add(i as u64), truncation)?;
    }
    Ok(DiversityReport { truncation, mean: total / n as f64, samples: n, images_per_sample, seed })
}
