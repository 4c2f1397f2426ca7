//! Dense tensor view of a batch of annotations.

use sgg_autodiff::{Float, Tensor};

use crate::error::{invalid, Result};
use crate::surface::{vertex_indices, Region, SurfaceAnnotation, VertexTable};

/// NCHW tensors of a batch of annotations, plus the BODY embedding rows.
#[derive(Clone, Debug)]
pub struct SurfaceBatch<T: Float> {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// [N, 3, H, W]
    pub image: Tensor<T>,
    /// Image with BODY and DILATED pixels zeroed.
    pub masked_image: Tensor<T>,
    /// One-hot of (KNOWN, BODY, DILATED), [N, 3, H, W].
    pub mask_planes: Tensor<T>,
    /// KNOWN indicator M, [N, 1, H, W].
    pub known: Tensor<T>,
    /// BODY indicator, [N, 1, H, W].
    pub body: Tensor<T>,
    /// Target embeddings, zero off BODY, [N, C, H, W].
    pub embeddings: Tensor<T>,
    /// Region of every pixel, flat over (n, y, x).
    pub regions: Vec<Region>,
    /// Embeddings of BODY pixels in raster order, [M, C].
    pub body_rows: Tensor<T>,
    /// Flat pixel index of each BODY row.
    pub body_pixels: Vec<usize>,
    /// Table index of each BODY row when the embeddings are table rows.
    pub body_vertices: Option<Vec<usize>>,
}

impl<T: Float> SurfaceBatch<T> {
    /// With `table`, the embeddings must already be discretized against it.
    pub fn new(anns: &[SurfaceAnnotation], table: Option<&VertexTable>) -> Result<Self> {
        let first = anns.first().ok_or_else(|| invalid!("empty batch"))?;
        let (h, w, c) = (first.height(), first.width(), first.embeddings().channels());
        let n = anns.len();
        let hw = h * w;
        let mut image = vec![T::zero(); n * 3 * hw];
        let mut masked = vec![T::zero(); n * 3 * hw];
        let mut planes = vec![T::zero(); n * 3 * hw];
        let mut known = vec![T::zero(); n * hw];
        let mut body = vec![T::zero(); n * hw];
        let mut emb = vec![T::zero(); n * c * hw];
        let mut regions = Vec::with_capacity(n * hw);
        let mut rows = Vec::new();
        let mut body_pixels = Vec::new();
        let mut body_vertices = table.map(|_| Vec::new());
        for (s, ann) in anns.iter().enumerate() {
            if (ann.height(), ann.width(), ann.embeddings().channels()) != (h, w, c) {
                return Err(invalid!("batch annotations differ in shape"));
            }
            let img = ann.image().data();
            let raster = ann.embeddings();
            let vertices = table.map(|t| vertex_indices(raster, t)).transpose()?;
            for (p, &region) in ann.mask().classes().iter().enumerate() {
                let plane = match region {
                    Region::Known => 0,
                    Region::Body => 1,
                    Region::Dilated => 2,
                };
                planes[(s * 3 + plane) * hw + p] = T::one();
                for ch in 0..3 {
                    let v = T::of(img[p * 3 + ch] as f64);
                    image[(s * 3 + ch) * hw + p] = v;
                    if region == Region::Known {
                        masked[(s * 3 + ch) * hw + p] = v;
                    }
                }
                match region {
                    Region::Known => known[s * hw + p] = T::one(),
                    Region::Body => {
                        body[s * hw + p] = T::one();
                        let e = raster.at(p);
                        for (ch, &v) in e.iter().enumerate() {
                            emb[(s * c + ch) * hw + p] = T::of(v as f64);
                        }
                        rows.extend(e.iter().map(|&v| T::of(v as f64)));
                        body_pixels.push(s * hw + p);
                        if let (Some(bv), Some(v)) = (body_vertices.as_mut(), vertices.as_ref()) {
                            bv.push(v[p].expect("BODY pixel has a vertex"));
                        }
                    }
                    Region::Dilated => {}
                }
                regions.push(region);
            }
        }
        let m = body_pixels.len();
        Ok(Self {
            n,
            height: h,
            width: w,
            channels: c,
            image: Tensor::from_vec(&[n, 3, h, w], image),
            masked_image: Tensor::from_vec(&[n, 3, h, w], masked),
            mask_planes: Tensor::from_vec(&[n, 3, h, w], planes),
            known: Tensor::from_vec(&[n, 1, h, w], known),
            body: Tensor::from_vec(&[n, 1, h, w], body),
            embeddings: Tensor::from_vec(&[n, c, h, w], emb),
            regions,
            body_rows: Tensor::from_vec(&[m, c], rows),
            body_pixels,
            body_vertices,
        })
    }

    pub fn pixels_per_sample(&self) -> usize {
        self.height * self.width
    }

    /// Sample index of each BODY row.
    pub fn body_samples(&self) -> Vec<usize> {
        let hw = self.pixels_per_sample();
        self.body_pixels.iter().map(|p| p / hw).collect()
    }

    /// Number of BODY pixels per sample.
    pub fn body_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n];
        for s in self.body_samples() {
            counts[s] += 1;
        }
        counts
    }
}

/// Converts an NCHW image tensor of one sample back into an image.
pub fn tensor_to_image<T: Float>(t: &Tensor<T>, sample: usize) -> crate::image::ImageRgb {
    let [_, c, h, w] = t.shape().try_into().expect("NCHW tensor");
    assert_eq!(c, 3);
    let hw = h * w;
    let base = sample * 3 * hw;
    let d = t.data();
    let data = (0..hw).flat_map(|p| (0..3).map(move |ch| d[base + ch * hw + p].to_f32().unwrap())).collect();
    crate::image::ImageRgb::new(h, w, data).expect("consistent shape")
}
