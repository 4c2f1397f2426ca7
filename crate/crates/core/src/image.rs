//! RGB rasters in [-1, 1] with PNG IO and resampling helpers.

use std::path::Path;

use crate::error::{invalid, Error, Result};

/// H×W×3 image, channel-innermost, values nominally in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRgb {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

pub fn u8_to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

pub fn unit_to_u8(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

impl ImageRgb {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(invalid!("image data has {} values, expected {}x{}x3", data.len(), height, width));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self { height, width, data }
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| u8_to_unit(b)).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| unit_to_u8(v)).collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(path, &self.to_u8(), self.width as u32, self.height as u32, image::ColorType::Rgb8)
            .map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?.into_rgb8();
        let (w, h) = img.dimensions();
        Self::from_u8(h as usize, w as usize, img.as_raw())
    }

    /// Sub-image `[y0, y0+h) × [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        let mut data = Vec::with_capacity(h * w * 3);
        for y in y0..y0 + h {
            let row = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[row..row + w * 3]);
        }
        Self { height: h, width: w, data }
    }

    /// Bilinear resize with half-pixel centers and edge clamping.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        let mut data = vec![0.0; height * width * 3];
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        for y in 0..height {
            let (y0, y1, fy) = taps((y as f64 + 0.5) * sy - 0.5, self.height);
            for x in 0..width {
                let (x0, x1, fx) = taps((x as f64 + 0.5) * sx - 0.5, self.width);
                for c in 0..3 {
                    let v = |yy: usize, xx: usize| self.data[(yy * self.width + xx) * 3 + c] as f64;
                    let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
                    let bot = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
                    data[(y * width + x) * 3 + c] = (top * (1.0 - fy) + bot * fy) as f32;
                }
            }
        }
        Self { height, width, data }
    }
}

fn taps(pos: f64, len: usize) -> (usize, usize, f64) {
    let pos = pos.clamp(0.0, (len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, pos - i0 as f64)
}

/// Source index of nearest-neighbour resampling from `src` to `dst` samples (half-pixel centers).
pub fn nearest_source(i: usize, src: usize, dst: usize) -> usize {
    let pos = (i as f64 + 0.5) * src as f64 / dst as f64;
    (pos.floor() as usize).min(src - 1)
}

/// Tiles images row-major into one image with `columns` columns.
pub fn tile(images: &[ImageRgb], columns: usize) -> Result<ImageRgb> {
    let first = images.first().ok_or_else(|| invalid!("cannot tile an empty image list"))?;
    if columns == 0 {
        return Err(invalid!("grid needs at least one column"));
    }
    let (h, w) = (first.height, first.width);
    if images.iter().any(|im| im.height != h || im.width != w) {
        return Err(invalid!("grid images must share one size"));
    }
    let cols = columns.min(images.len());
    let rows = images.len().div_ceil(cols);
    let mut out = ImageRgb::filled(rows * h, cols * w, [-1.0; 3]);
    for (k, im) in images.iter().enumerate() {
        let (r, c) = (k / cols, k % cols);
        for y in 0..h {
            for x in 0..w {
                out.set_pixel(r * h + y, c * w + x, im.pixel(y, x));
            }
        }
    }
    Ok(out)
}
