//! Full-body anonymization: crop every detected person, generate a replacement, paste it back.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::sample_ids;
use crate::error::{invalid, Error, Result};
use crate::eval::random_z;
use crate::image::{nearest_source, unit_to_u8, ImageRgb};
use crate::surface::{dilate_mask, load_annotation, EmbeddingRaster, Region, RegionMask, SurfaceAnnotation};
use crate::{InpaintModel, SurfaceGan};

/// Boxes smaller than this on either side are skipped.
pub const MIN_BOX_SIDE: usize = 4;

/// A person box `[x0, x1) × [y0, y1)` in image pixels with its detector confidence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub score: f64,
}

impl Detection {
    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }
}

pub fn detections_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.detections.txt"))
}

/// Parses sidecar lines `x0 y0 x1 y1 score`; blank lines and `#` comments are ignored.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |why: &str| Error::format("detections", format!("line {}: {why}: {line:?}", i + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let mut coords = [0usize; 4];
        for (c, f) in coords.iter_mut().zip(&fields) {
            *c = f.parse().map_err(|_| bad("coordinates must be non-negative integers"))?;
        }
        let score: f64 = fields[4].parse().map_err(|_| bad("score must be a number"))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(bad("score must lie in [0, 1]"));
        }
        out.push(Detection { x0: coords[0], y0: coords[1], x1: coords[2], y1: coords[3], score });
    }
    Ok(out)
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>> {
    parse_detections(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    let text: String =
        detections.iter().map(|d| format!("{} {} {} {} {}\n", d.x0, d.y0, d.x1, d.y1, d.score)).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnonymizeOptions {
    pub truncation: f64,
    pub seed: u64,
    pub dilation: usize,
    /// Detections with a score at or below this are ignored.
    pub score_threshold: f64,
    /// Context added on each side of a box, as a fraction of the box size.
    pub margin: f64,
    /// Use one latent for every person of the job instead of a fresh one each.
    pub fixed_z: bool,
}

impl Default for AnonymizeOptions {
    fn default() -> Self {
        Self { truncation: 1.0, seed: 0, dilation: 2, score_threshold: 0.1, margin: 0.2, fixed_z: false }
    }
}

impl AnonymizeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.truncation) {
            return Err(invalid!("truncation must lie in [0, 1], got {}", self.truncation));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(invalid!("margin must be non-negative, got {}", self.margin));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedDetection {
    /// Position in the detection list.
    pub index: usize,
    pub reason: String,
}

/// Result of anonymizing one image.
#[derive(Clone, Debug)]
pub struct Anonymized {
    pub height: usize,
    pub width: usize,
    /// RGB bytes, row-major.
    pub pixels: Vec<u8>,
    /// Pixels overwritten by a generated person.
    pub written: Vec<bool>,
    /// Detections above the score threshold.
    pub persons: usize,
    pub skipped: Vec<SkippedDetection>,
}

impl Anonymized {
    pub fn to_image(&self) -> ImageRgb {
        ImageRgb::from_u8(self.height, self.width, &self.pixels).expect("buffer matches its dimensions")
    }
}

/// The model-resolution annotation of one person and where it came from.
pub struct PersonCrop {
    /// Crop rectangle in the image: (y0, x0, height, width).
    pub rect: (usize, usize, usize, usize),
    /// BODY / DILATED / KNOWN at crop resolution.
    pub mask: RegionMask,
    pub annotation: SurfaceAnnotation,
}

/// Crops a detection with context margin and resamples it to `(height, width)`.
///
/// Returns `Ok(None)` when the box holds no surface pixels.
pub fn crop_person(
    ann: &SurfaceAnnotation,
    det: &Detection,
    resolution: (usize, usize),
    margin: f64,
    dilation: usize,
) -> Result<Option<PersonCrop>> {
    let (ih, iw) = (ann.height(), ann.width());
    let (bw, bh) = (det.width(), det.height());
    let mx = (margin * bw as f64).round() as usize;
    let my = (margin * bh as f64).round() as usize;
    let (cx0, cy0) = (det.x0.saturating_sub(mx), det.y0.saturating_sub(my));
    let (cx1, cy1) = ((det.x1 + mx).min(iw), (det.y1 + my).min(ih));
    let (ch, cw) = (cy1 - cy0, cx1 - cx0);

    // this person's surface pixels, dilated at image resolution
    let mut classes = vec![Region::Known; ch * cw];
    let mut any = false;
    for y in det.y0..det.y1 {
        for x in det.x0..det.x1 {
            let r = ann.mask().get(y, x);
            if r == Region::Body {
                classes[(y - cy0) * cw + (x - cx0)] = Region::Body;
                any = true;
            } else if r == Region::Dilated {
                classes[(y - cy0) * cw + (x - cx0)] = Region::Dilated;
            }
        }
    }
    if !any {
        return Ok(None);
    }
    let dilated = dilate_mask(&RegionMask::new(ch, cw, classes.clone())?, dilation);
    let merged: Vec<Region> = classes
        .iter()
        .zip(dilated.classes())
        .map(|(&own, &d)| if own == Region::Dilated && d == Region::Known { Region::Dilated } else { d })
        .collect();
    let mask = RegionMask::new(ch, cw, merged)?;

    let (h, w) = resolution;
    let image = ann.image().crop(cy0, cx0, ch, cw).resize_bilinear(h, w);
    let mut small = vec![Region::Known; h * w];
    let mut emb = EmbeddingRaster::empty(h, w, ann.embeddings().channels());
    for y in 0..h {
        let sy = nearest_source(y, ch, h);
        for x in 0..w {
            let sx = nearest_source(x, cw, w);
            let r = mask.get(sy, sx);
            small[y * w + x] = r;
            if r == Region::Body {
                emb.set(y * w + x, Some(ann.embeddings().at((cy0 + sy) * iw + cx0 + sx)));
            }
        }
    }
    let annotation = SurfaceAnnotation::new(image, emb, RegionMask::new(h, w, small)?)?;
    Ok(Some(PersonCrop { rect: (cy0, cx0, ch, cw), mask, annotation }))
}

/// Replaces every detected person of `ann` above the score threshold.
///
/// Detections are processed by descending score, so a later (less confident) person may
/// overwrite an earlier one inside its own generation region. Pixels outside every
/// generation region keep their input bytes.
pub fn anonymize_image(
    ann: &SurfaceAnnotation,
    detections: &[Detection],
    model: &dyn InpaintModel,
    options: &AnonymizeOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Anonymized> {
    options.validate()?;
    let (ih, iw) = (ann.height(), ann.width());
    let mut pixels = ann.image().to_u8();
    let mut written = vec![false; ih * iw];
    let fixed = options.fixed_z.then(|| random_z(model.z_dim(), &mut ChaCha8Rng::seed_from_u64(options.seed)));

    let mut order: Vec<usize> = (0..detections.len()).filter(|&i| detections[i].score > options.score_threshold).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score).then(a.cmp(&b)));
    let persons = order.len();
    let mut skipped = Vec::new();
    for i in order {
        let det = &detections[i];
        let skip = |reason: String| {
            log::warn!("skipping detection {i}: {reason}");
            SkippedDetection { index: i, reason }
        };
        if det.x1 > iw || det.y1 > ih {
            skipped.push(skip(format!("box ({}, {})-({}, {}) exceeds the {iw}x{ih} image", det.x0, det.y0, det.x1, det.y1)));
            continue;
        }
        if det.width() < MIN_BOX_SIDE || det.height() < MIN_BOX_SIDE {
            skipped.push(skip(format!("box {}x{} is smaller than {MIN_BOX_SIDE}x{MIN_BOX_SIDE}", det.width(), det.height())));
            continue;
        }
        let Some(crop) = crop_person(ann, det, model.resolution(), options.margin, options.dilation)? else {
            skipped.push(skip("box holds no surface pixels".into()));
            continue;
        };
        let z = match &fixed {
            Some(z) => z.clone(),
            None => random_z(model.z_dim(), rng),
        };
        let generated = model.inpaint(&crop.annotation, &z, options.truncation)?;
        let (cy0, cx0, ch, cw) = crop.rect;
        let back = generated.resize_bilinear(ch, cw);
        for y in 0..ch {
            for x in 0..cw {
                if crop.mask.get(y, x).is_generated() {
                    let p = (cy0 + y) * iw + cx0 + x;
                    let rgb = back.pixel(y, x);
                    for c in 0..3 {
                        pixels[p * 3 + c] = unit_to_u8(rgb[c]);
                    }
                    written[p] = true;
                }
            }
        }
    }
    Ok(Anonymized { height: ih, width: iw, pixels, written, persons, skipped })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnonymizationJob {
    pub input: PathBuf,
    pub output: PathBuf,
    pub checkpoint: PathBuf,
    pub options: AnonymizeOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedImage {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JobReport {
    /// Images written to the output directory.
    pub images: usize,
    /// Detections above the score threshold.
    pub persons: usize,
    /// Detections above the threshold that could not be processed.
    pub skipped_detections: usize,
    pub skipped_images: Vec<SkippedImage>,
    pub wall_time_s: f64,
}

/// Loads the checkpoint named by the job and anonymizes its input directory.
pub fn run_job(job: &AnonymizationJob) -> Result<JobReport> {
    let model = SurfaceGan::load(&job.checkpoint)?;
    run_job_with_model(job, &model)
}

/// Anonymizes every `S.image.png` of the input directory that has a full annotation and a
/// detection sidecar; the result is written as `S.image.png` in the output directory.
pub fn run_job_with_model(job: &AnonymizationJob, model: &dyn InpaintModel) -> Result<JobReport> {
    job.options.validate()?;
    let start = Instant::now();
    if !job.input.is_dir() {
        return Err(invalid!("input directory {} does not exist", job.input.display()));
    }
    fs::create_dir_all(&job.output).map_err(|e| Error::io(&job.output, e))?;
    let mut report = JobReport::default();
    for (index, id) in sample_ids(&job.input)?.into_iter().enumerate() {
        let loaded = load_annotation(&job.input, &id)
            .and_then(|ann| load_detections(&detections_path(&job.input, &id)).map(|d| (ann, d)));
        let (ann, detections) = match loaded {
            Ok(v) => v,
            Err(e) => {
                log::warn!("skipping image {id}: {e}");
                report.skipped_images.push(SkippedImage { id, reason: e.to_string() });
                continue;
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(job.options.seed);
        rng.set_stream(index as u64);
        let out = anonymize_image(&ann, &detections, model, &job.options, &mut rng)?;
        out.to_image().save_png(&job.output.join(format!("{id}.image.png")))?;
        report.images += 1;
        report.persons += out.persons;
        report.skipped_detections += out.skipped.len();
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}
