//! Surface-guided GAN inpainting: surface-conditioned generator and discriminator,
//! adversarial training, full-body anonymization, and evaluation tools.

pub mod anonymizer;
pub mod batch;
pub mod checkpoint;
pub mod dataset;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod generator;
pub mod image;
pub mod mapping;
pub mod model;
pub mod modulation;
pub mod nn;
pub mod optim;
pub mod surface;
pub mod synthetic;
pub mod training;
pub mod transform;

pub use batch::SurfaceBatch;
pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use error::{Error, Result};
pub use generator::{Generator, GeneratorConfig, GeneratorMode, Modulation};
pub use image::ImageRgb;
pub use mapping::{MappingConfig, MappingNetwork, OmegaMean};
pub use model::{InpaintModel, SurfaceGan};
pub use surface::{
    dilate_mask, discretize, load_annotation, nearest_vertex, save_annotation, EmbeddingRaster, Region, RegionMask,
    SurfaceAnnotation, VertexTable, EMBED_DIM,
};
pub use training::{TrainConfig, Trainer};
