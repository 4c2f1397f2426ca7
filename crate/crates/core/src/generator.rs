//! U-Net generator with surface-adaptive modulation at every convolution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sgg_autodiff::{no_grad, Float, Tensor, Var};

use crate::batch::{tensor_to_image, SurfaceBatch};
use crate::error::{invalid, Result};
use crate::image::ImageRgb;
use crate::mapping::{truncate, MappingConfig, MappingNetwork, OmegaMean};
use crate::modulation::SamConv;
use crate::nn::{Bound, EqLinear, ParamId, ParamSet};
use crate::surface::{SurfaceAnnotation, VertexTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    Inpaint,
    DecoderOnly,
}

/// How the generator is conditioned on surface embeddings and z.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modulation {
    /// Plain U-Net, z as a spatial bottleneck input.
    None,
    /// ω = f(e); z as a spatial bottleneck input.
    Sam,
    /// ω = f(e, z).
    VSam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    pub base_channels: usize,
    /// Channel multiplier per resolution level; its length is the number of levels.
    pub channel_mults: Vec<usize>,
    pub mode: GeneratorMode,
    pub modulation: Modulation,
    pub mapping: MappingConfig,
    /// Channels of the spatial z map (SAM and unmodulated modes).
    pub spatial_z_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::desk(Modulation::VSam)
    }
}

impl GeneratorConfig {
    /// The 64×32 configuration used for training on one machine.
    pub fn desk(modulation: Modulation) -> Self {
        Self {
            height: 64,
            width: 32,
            base_channels: 16,
            channel_mults: vec![1, 2, 4, 8, 8],
            mode: GeneratorMode::Inpaint,
            modulation,
            mapping: MappingConfig {
                depth: 2,
                width: 128,
                out_dim: 64,
                variational: modulation == Modulation::VSam,
                z_dim: 64,
                embed_dim: crate::surface::EMBED_DIM,
            },
            spatial_z_channels: 16,
        }
    }

    /// Full-size unmodulated baseline at 288×160.
    pub fn full_size_baseline() -> Self {
        Self {
            height: 288,
            width: 160,
            base_channels: 64,
            channel_mults: vec![1, 2, 4, 4, 4, 4],
            mode: GeneratorMode::Inpaint,
            modulation: Modulation::None,
            mapping: MappingConfig { variational: false, ..MappingConfig::default() },
            spatial_z_channels: 32,
        }
    }

    /// Full-size V-SAM generator with the enlarged channel schedule.
    pub fn full_size_large() -> Self {
        Self {
            height: 288,
            width: 160,
            base_channels: 96,
            channel_mults: vec![1, 2, 2, 4, 8, 8],
            mode: GeneratorMode::Inpaint,
            modulation: Modulation::VSam,
            mapping: MappingConfig::default(),
            spatial_z_channels: 32,
        }
    }

    pub fn levels(&self) -> usize {
        self.channel_mults.len()
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels * self.channel_mults[level]
    }

    pub fn bottleneck_size(&self) -> (usize, usize) {
        let f = 1 << (self.levels() - 1);
        (self.height / f, self.width / f)
    }

    pub fn omega_dim(&self) -> usize {
        match self.modulation {
            Modulation::None => 0,
            _ => self.mapping.out_dim,
        }
    }

    pub fn z_dim(&self) -> usize {
        self.mapping.z_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_mults.is_empty() || self.base_channels == 0 || self.channel_mults.contains(&0) {
            return Err(invalid!("generator needs at least one level and positive channels"));
        }
        let f = 1 << (self.levels() - 1);
        if self.height == 0 || self.width == 0 || self.height % f != 0 || self.width % f != 0 {
            return Err(invalid!("{}x{} is not divisible by 2^{}", self.height, self.width, self.levels() - 1));
        }
        if self.mapping.variational != (self.modulation == Modulation::VSam) {
            return Err(invalid!("mapping.variational must be set exactly for V-SAM"));
        }
        if self.modulation != Modulation::VSam && self.spatial_z_channels == 0 {
            return Err(invalid!("spatial z needs at least one channel"));
        }
        self.mapping.validate()
    }
}

/// Network wiring; parameters live in a separate [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    mapping: Option<MappingNetwork>,
    /// Inpaint mode: input layer from image + mask planes at level 0.
    stem: Option<SamConv>,
    /// Inpaint mode: one layer per level (level 0 after the stem, later levels after pooling).
    encoder: Vec<SamConv>,
    bottleneck: SamConv,
    /// `decoder[l]` produces level `l` from level `l + 1`.
    decoder: Vec<SamConv>,
    to_rgb: SamConv,
    constant: Option<ParamId>,
    z_proj: Option<EqLinear>,
}

/// Raw output, composite and the style field of one generator pass.
pub struct GeneratorOutput<T: Float> {
    /// Saturated output G, [N, 3, H, W].
    pub raw: Var<T>,
    /// M·I + (1 − M)·G; equal to `raw` in decoder-only mode.
    pub composite: Var<T>,
    pub field: Option<Var<T>>,
}

impl Generator {
    pub fn new<T: Float>(config: GeneratorConfig, seed: u64) -> Result<(Self, ParamSet<T>)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let d = config.omega_dim();
        let levels = config.levels();
        let c = |l: usize| config.channels(l);
        let spatial_z = config.modulation != Modulation::VSam;
        let zc = if spatial_z { config.spatial_z_channels } else { 0 };

        let mapping = match config.modulation {
            Modulation::None => None,
            _ => Some(MappingNetwork::new(&mut p, "mapping", config.mapping.clone(), &mut rng)?),
        };
        let (stem, encoder, constant, bottleneck_in) = match config.mode {
            GeneratorMode::Inpaint => {
                let stem = SamConv::new(&mut p, "stem", d, 6, c(0), 3, true, &mut rng);
                let encoder = (0..levels)
                    .map(|l| {
                        let cin = if l == 0 { c(0) } else { c(l - 1) };
                        SamConv::new(&mut p, &format!("enc{l}"), d, cin, c(l), 3, true, &mut rng)
                    })
                    .collect();
                (Some(stem), encoder, None, c(levels - 1) + zc)
            }
            GeneratorMode::DecoderOnly => {
                let (hb, wb) = config.bottleneck_size();
                let constant = p.add("constant", Tensor::randn(&[1, c(levels - 1), hb, wb], &mut rng));
                (None, Vec::new(), Some(constant), c(levels - 1) + 3 + zc)
            }
        };
        let bottleneck = SamConv::new(&mut p, "bottleneck", d, bottleneck_in, c(levels - 1), 3, true, &mut rng);
        let decoder = (0..levels - 1)
            .map(|l| {
                let skip = if config.mode == GeneratorMode::Inpaint { c(l) } else { 0 };
                SamConv::new(&mut p, &format!("dec{l}"), d, c(l + 1) + skip, c(l), 3, true, &mut rng)
            })
            .collect();
        let to_rgb = SamConv::new(&mut p, "to_rgb", d, c(0), 3, 1, false, &mut rng);
        let z_proj = spatial_z.then(|| {
            let (hb, wb) = config.bottleneck_size();
            EqLinear::new(&mut p, "z_proj", config.z_dim(), zc * hb * wb, Some(0.0), &mut rng)
        });
        Ok((Self { config, mapping, stem, encoder, bottleneck, decoder, to_rgb, constant, z_proj }, p))
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn mapping(&self) -> Option<&MappingNetwork> {
        self.mapping.as_ref()
    }

    /// Style field [N, D, H, W] of a batch; `None` for the unmodulated generator.
    ///
    /// With a table and a discretized batch the per-vertex path is used.
    pub fn style_field<T: Float>(
        &self,
        p: &Bound<T>,
        batch: &SurfaceBatch<T>,
        z: &Var<T>,
        table: Option<&VertexTable>,
    ) -> Result<Option<Var<T>>> {
        let Some(mapping) = &self.mapping else { return Ok(None) };
        let z = mapping.config().variational.then_some(z);
        let field = match (table, &batch.body_vertices) {
            (Some(table), Some(_)) => mapping.map_field_by_vertex(p, batch, table, z)?,
            _ => mapping.map_field(p, batch, z)?,
        };
        Ok(Some(field))
    }

    /// Full pass: style field, optional truncation towards `omega_mean`, synthesis.
    pub fn forward<T: Float>(
        &self,
        p: &Bound<T>,
        batch: &SurfaceBatch<T>,
        z: &Var<T>,
        table: Option<&VertexTable>,
        truncation: Option<(f64, &OmegaMean)>,
    ) -> Result<GeneratorOutput<T>> {
        let mut field = self.style_field(p, batch, z, table)?;
        if let (Some(f), Some((t, mean))) = (&field, truncation) {
            if t < 1.0 && !mean.is_populated() {
                return Err(crate::error::Error::Precondition("ω mean has never been updated".into()));
            }
            field = Some(truncate(f, &batch.body, &mean.as_vec::<T>(), t)?);
        }
        self.synthesize(p, batch, field.as_ref(), z)
    }

    /// Runs the convolutional network for a given style field.
    pub fn synthesize<T: Float>(
        &self,
        p: &Bound<T>,
        batch: &SurfaceBatch<T>,
        field: Option<&Var<T>>,
        z: &Var<T>,
    ) -> Result<GeneratorOutput<T>> {
        let cfg = &self.config;
        let (n, h, w) = (batch.n, batch.height, batch.width);
        if (h, w) != (cfg.height, cfg.width) {
            return Err(invalid!("batch is {h}x{w}, generator expects {}x{}", cfg.height, cfg.width));
        }
        if z.shape() != [n, cfg.z_dim()] {
            return Err(invalid!("z has shape {:?}, expected [{n}, {}]", z.shape(), cfg.z_dim()));
        }
        let levels = cfg.levels();
        let mut omegas: Vec<Option<Var<T>>> = vec![field.cloned()];
        for l in 1..levels {
            omegas.push(omegas[l - 1].as_ref().map(|f| f.avg_pool2()));
        }
        let om = |l: usize| omegas[l].as_ref();
        let zmap = self.z_proj.as_ref().map(|proj| {
            let (hb, wb) = cfg.bottleneck_size();
            proj.forward(p, z).reshape(&[n, cfg.spatial_z_channels, hb, wb])
        });
        let planes = Var::constant(batch.mask_planes.clone());

        let mut x;
        let mut skips = Vec::new();
        match cfg.mode {
            GeneratorMode::Inpaint => {
                let input = Var::concat(&[Var::constant(batch.masked_image.clone()), planes], 1);
                x = self.stem.as_ref().expect("inpaint stem").forward(p, &input, om(0))?;
                for (l, layer) in self.encoder.iter().enumerate() {
                    if l > 0 {
                        skips.push(x.clone());
                        x = x.avg_pool2();
                    }
                    x = layer.forward(p, &x, om(l))?;
                }
                if let Some(zm) = &zmap {
                    x = Var::concat(&[x, zm.clone()], 1);
                }
            }
            GeneratorMode::DecoderOnly => {
                let constant = p.get(self.constant.expect("decoder-only constant"));
                let (hb, wb) = cfg.bottleneck_size();
                let c = constant.shape()[1];
                let mut pooled = planes;
                for _ in 1..levels {
                    pooled = pooled.avg_pool2();
                }
                let mut parts = vec![constant.broadcast_to(&[n, c, hb, wb]), pooled];
                parts.extend(zmap.clone());
                x = Var::concat(&parts, 1);
            }
        }
        x = self.bottleneck.forward(p, &x, om(levels - 1))?;
        for l in (0..levels - 1).rev() {
            x = x.bilinear_up2();
            if cfg.mode == GeneratorMode::Inpaint {
                x = Var::concat(&[x, skips[l].clone()], 1);
            }
            x = self.decoder[l].forward(p, &x, om(l))?;
        }
        let raw = self.to_rgb.forward(p, &x, om(0))?.tanh();
        let composite = match cfg.mode {
            GeneratorMode::Inpaint => {
                // the masked image is exactly M·I
                let unknown = Var::constant(batch.known.map(|m| T::one() - m));
                Var::constant(batch.masked_image.clone()).add(&raw.mul(&unknown))
            }
            GeneratorMode::DecoderOnly => raw.clone(),
        };
        Ok(GeneratorOutput { raw, composite, field: field.cloned() })
    }

    /// Inference on one annotation with latent `z`; returns the composite.
    pub fn inpaint<T: Float>(
        &self,
        params: &ParamSet<T>,
        ann: &SurfaceAnnotation,
        z: &[f32],
        table: Option<&VertexTable>,
        truncation: Option<(f64, &OmegaMean)>,
    ) -> Result<ImageRgb> {
        no_grad(|| {
            let batch = SurfaceBatch::<T>::new(std::slice::from_ref(ann), table)?;
            let z = Var::constant(Tensor::from_vec(&[1, z.len()], z.iter().map(|&v| T::of(v as f64)).collect()));
            let out = self.forward(&params.bind(false), &batch, &z, table, truncation)?;
            Ok(tensor_to_image(out.composite.value(), 0))
        })
    }
}
