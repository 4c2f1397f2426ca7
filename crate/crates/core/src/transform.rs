//! Joint spatial transforms of annotation planes.
//!
//! Images are resampled bilinearly, embeddings and masks by nearest neighbour so that
//! embeddings stay exact table rows. Integer transforms copy pixels exactly.

use crate::error::Result;
use crate::image::ImageRgb;
use crate::surface::{EmbeddingRaster, Region, RegionMask, SurfaceAnnotation};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Spatial {
    /// Moves content down by `dy` and right by `dx` pixels.
    Translate { dy: i64, dx: i64 },
    /// Rotation about the image centre.
    Rotate { degrees: f64 },
    Hflip,
}

/// What to do with output pixels whose source lies outside the canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Border {
    /// Clamp to the nearest edge pixel.
    Replicate,
    /// Fill with KNOWN gray and mark invalid.
    Exclude,
}

/// A transformed annotation and the plane of output pixels with an in-canvas source.
pub struct Transformed {
    pub ann: SurfaceAnnotation,
    pub valid: Vec<bool>,
}

enum Source {
    Exact(usize),
    Sampled { nearest: usize, taps: [(usize, f64); 4] },
    Outside,
}

fn sources(h: usize, w: usize, t: Spatial, border: Border) -> Vec<Source> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(match t {
                Spatial::Hflip => Source::Exact(y * w + (w - 1 - x)),
                Spatial::Translate { dy, dx } => {
                    let (sy, sx) = (y as i64 - dy, x as i64 - dx);
                    let inside = (0..h as i64).contains(&sy) && (0..w as i64).contains(&sx);
                    match (inside, border) {
                        (true, _) => Source::Exact(sy as usize * w + sx as usize),
                        (false, Border::Replicate) => {
                            Source::Exact(sy.clamp(0, h as i64 - 1) as usize * w + sx.clamp(0, w as i64 - 1) as usize)
                        }
                        (false, Border::Exclude) => Source::Outside,
                    }
                }
                Spatial::Rotate { degrees } => {
                    let (s, c) = degrees.to_radians().sin_cos();
                    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
                    let (py, px) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                    // inverse rotation, with y pointing down
                    let sx = c * px - s * py + cx - 0.5;
                    let sy = s * px + c * py + cy - 0.5;
                    let max_y = (h - 1) as f64;
                    let max_x = (w - 1) as f64;
                    let inside = (-1e-9..=max_y + 1e-9).contains(&sy) && (-1e-9..=max_x + 1e-9).contains(&sx);
                    if !inside && border == Border::Exclude {
                        Source::Outside
                    } else {
                        let (sy, sx) = (sy.clamp(0.0, max_y), sx.clamp(0.0, max_x));
                        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                        let nearest = (sy.round() as usize).min(h - 1) * w + (sx.round() as usize).min(w - 1);
                        Source::Sampled {
                            nearest,
                            taps: [
                                (y0 * w + x0, (1.0 - fy) * (1.0 - fx)),
                                (y0 * w + x1, (1.0 - fy) * fx),
                                (y1 * w + x0, fy * (1.0 - fx)),
                                (y1 * w + x1, fy * fx),
                            ],
                        }
                    }
                }
            });
        }
    }
    out
}

/// Transforms an image; returns it with the validity plane.
pub fn transform_image(img: &ImageRgb, t: Spatial, border: Border) -> (ImageRgb, Vec<bool>) {
    let (h, w) = (img.height(), img.width());
    let src = sources(h, w, t, border);
    let d = img.data();
    let mut data = vec![0.0f32; h * w * 3];
    let mut valid = vec![true; h * w];
    for (i, s) in src.iter().enumerate() {
        match s {
            Source::Exact(j) => data[i * 3..i * 3 + 3].copy_from_slice(&d[j * 3..j * 3 + 3]),
            Source::Sampled { taps, .. } => {
                for c in 0..3 {
                    data[i * 3 + c] = taps.iter().map(|&(j, wt)| wt * d[j * 3 + c] as f64).sum::<f64>() as f32;
                }
            }
            Source::Outside => valid[i] = false,
        }
    }
    (ImageRgb::new(h, w, data).expect("same shape"), valid)
}

/// Transforms image, embeddings and mask with one spatial map.
pub fn transform_annotation(ann: &SurfaceAnnotation, t: Spatial, border: Border) -> Result<Transformed> {
    let (h, w) = (ann.height(), ann.width());
    let src = sources(h, w, t, border);
    let (image, valid) = transform_image(ann.image(), t, border);
    let e = ann.embeddings();
    let mut emb = EmbeddingRaster::empty(h, w, e.channels());
    let mut classes = Vec::with_capacity(h * w);
    for (i, s) in src.iter().enumerate() {
        let j = match s {
            Source::Exact(j) | Source::Sampled { nearest: j, .. } => *j,
            Source::Outside => {
                classes.push(Region::Known);
                continue;
            }
        };
        classes.push(ann.mask().classes()[j]);
        emb.set(i, e.is_valid(j).then(|| e.at(j)));
    }
    let ann = SurfaceAnnotation::new(image, emb, RegionMask::new(h, w, classes)?)?;
    Ok(Transformed { ann, valid })
}
