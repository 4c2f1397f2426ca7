//! Trained generators packaged for inference.

use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::error::{invalid, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::image::ImageRgb;
use crate::mapping::OmegaMean;
use crate::nn::ParamSet;
use crate::surface::{SurfaceAnnotation, VertexTable};
use crate::training::{discretize_annotation, load_omega_mean, load_table_record, restore_set};

/// Anything that completes an annotation's BODY and DILATED regions from a latent.
pub trait InpaintModel {
    /// (height, width) the model works at.
    fn resolution(&self) -> (usize, usize);

    fn z_dim(&self) -> usize;

    /// Table used to discretize embeddings before generation, if any.
    fn vertex_table(&self) -> Option<&VertexTable>;

    /// Composite image for `ann` and latent `z`; `truncation` 1 disables truncation.
    fn inpaint(&self, ann: &SurfaceAnnotation, z: &[f32], truncation: f64) -> Result<ImageRgb>;
}

/// A generator with its parameters, vertex table and ω running mean.
#[derive(Clone, Debug)]
pub struct SurfaceGan {
    pub generator: Generator,
    pub params: ParamSet<f32>,
    pub table: VertexTable,
    pub omega_mean: OmegaMean,
}

impl SurfaceGan {
    /// Loads the EMA generator of a checkpoint, or the raw generator when no EMA was kept.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: GeneratorConfig = ckpt.config_as("generator")?;
        let omega_dim = config.mapping.out_dim;
        let (generator, mut params) = Generator::new::<f32>(config, 0)?;
        let prefix = if ckpt.record(&format!("ema.{}", params.iter().next().map(|(n, _)| n).unwrap_or(""))).is_some() {
            "ema."
        } else {
            "g."
        };
        restore_set(ckpt, prefix, &mut params)?;
        let table = load_table_record(ckpt)?;
        let updates = ckpt
            .config
            .get("counters")
            .and_then(|c| c.get("omega_mean_updates"))
            .and_then(|v| v.as_u64())
            .unwrap_or(0);
        let mut omega_mean = OmegaMean::new(omega_dim, 0.995);
        omega_mean.mean = load_omega_mean(ckpt, omega_dim)?;
        omega_mean.updates = updates;
        Ok(Self { generator, params, table, omega_mean })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl InpaintModel for SurfaceGan {
    fn resolution(&self) -> (usize, usize) {
        let c = self.generator.config();
        (c.height, c.width)
    }

    fn z_dim(&self) -> usize {
        self.generator.config().z_dim()
    }

    fn vertex_table(&self) -> Option<&VertexTable> {
        Some(&self.table)
    }

    fn inpaint(&self, ann: &SurfaceAnnotation, z: &[f32], truncation: f64) -> Result<ImageRgb> {
        if z.len() != self.z_dim() {
            return Err(invalid!("z has {} entries, model expects {}", z.len(), self.z_dim()));
        }
        let ann = discretize_annotation(ann, &self.table)?;
        let trunc = (truncation != 1.0).then_some((truncation, &self.omega_mean));
        self.generator.inpaint(&self.params, &ann, z, Some(&self.table), trunc)
    }
}
