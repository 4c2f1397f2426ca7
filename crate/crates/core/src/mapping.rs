//! The mapping network from surface embeddings (and latent z) to the per-pixel latent ω.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sgg_autodiff::{Float, Tensor, Var};

use crate::batch::SurfaceBatch;
use crate::error::{invalid, Error, Result};
use crate::nn::{lrelu, Bound, EqLinear, ParamId, ParamSet};
use crate::surface::{Region, VertexTable, EMBED_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingConfig {
    /// Number of residual blocks; 0 means a single affine map.
    pub depth: usize,
    pub width: usize,
    /// Dimensionality D of ω.
    pub out_dim: usize,
    /// Condition on z (V-SAM) or on the embedding only (SAM).
    pub variational: bool,
    pub z_dim: usize,
    pub embed_dim: usize,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self { depth: 6, width: 512, out_dim: 512, variational: true, z_dim: 512, embed_dim: EMBED_DIM }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.out_dim == 0 || self.z_dim == 0 || self.embed_dim == 0 {
            return Err(invalid!("mapping width, out_dim, z_dim and embed_dim must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.embed_dim + if self.variational { self.z_dim } else { 0 }
    }
}

/// f_ω plus the learned KNOWN and DILATED latents.
#[derive(Clone, Debug)]
pub struct MappingNetwork {
    config: MappingConfig,
    input: EqLinear,
    blocks: Vec<EqLinear>,
    output: Option<EqLinear>,
    pub omega_known: ParamId,
    pub omega_dilated: ParamId,
}

impl MappingNetwork {
    pub fn new<T: Float, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        config: MappingConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.out_dim;
        let (input, blocks, output) = if config.depth == 0 {
            (EqLinear::new(params, &format!("{name}.input"), config.input_dim(), d, Some(0.0), rng), Vec::new(), None)
        } else {
            let input = EqLinear::new(params, &format!("{name}.input"), config.input_dim(), config.width, Some(0.0), rng);
            let blocks = (0..config.depth)
                .map(|i| EqLinear::new(params, &format!("{name}.block{i}"), config.width, config.width, Some(0.0), rng))
                .collect();
            let output = EqLinear::new(params, &format!("{name}.output"), config.width, d, Some(0.0), rng);
            (input, blocks, Some(output))
        };
        let omega_known = params.add(format!("{name}.omega_known"), Tensor::randn(&[d], rng));
        let omega_dilated = params.add(format!("{name}.omega_dilated"), Tensor::randn(&[d], rng));
        Ok(Self { config, input, blocks, output, omega_known, omega_dilated })
    }

    pub fn config(&self) -> &MappingConfig {
        &self.config
    }

    pub fn input_layer(&self) -> &EqLinear {
        &self.input
    }

    pub fn blocks(&self) -> &[EqLinear] {
        &self.blocks
    }

    pub fn output_layer(&self) -> Option<&EqLinear> {
        self.output.as_ref()
    }

    /// Maps embedding rows `e` [M, C] (and latent rows `z` [M, z_dim]) to ω rows [M, D].
    pub fn map_core<T: Float>(&self, p: &Bound<T>, e: &Var<T>, z: Option<&Var<T>>) -> Result<Var<T>> {
        let cfg = &self.config;
        if e.shape().len() != 2 || e.shape()[1] != cfg.embed_dim {
            return Err(invalid!("embedding rows have shape {:?}, expected [M, {}]", e.shape(), cfg.embed_dim));
        }
        let x = match (cfg.variational, z) {
            (true, Some(z)) => {
                if z.shape() != [e.shape()[0], cfg.z_dim] {
                    return Err(invalid!("z rows have shape {:?}, expected [{}, {}]", z.shape(), e.shape()[0], cfg.z_dim));
                }
                Var::concat(&[e.clone(), z.clone()], 1)
            }
            (false, None) => e.clone(),
            (true, None) => return Err(invalid!("variational mapping needs z")),
            (false, Some(_)) => return Err(invalid!("non-variational mapping takes no z")),
        };
        let mut h = self.input.forward(p, &x);
        for block in &self.blocks {
            h = h.add(&block.forward(p, &lrelu(&h))).scale(std::f64::consts::FRAC_1_SQRT_2);
        }
        Ok(match &self.output {
            Some(out) => out.forward(p, &h),
            None => h,
        })
    }

    /// Direct per-pixel field: BODY pixels get f_ω(e_i, z), others ω_M / ω_D. Returns [N, D, H, W].
    pub fn map_field<T: Float>(&self, p: &Bound<T>, batch: &SurfaceBatch<T>, z: Option<&Var<T>>) -> Result<Var<T>> {
        let zrows = self.latent_rows(z, batch.n, &batch.body_samples())?;
        let rows = self.map_core(p, &Var::constant(batch.body_rows.clone()), zrows.as_ref())?;
        let row_of: Vec<usize> = (0..batch.body_pixels.len()).collect();
        self.assemble(p, &rows, &row_of, batch)
    }

    /// Field through the per-vertex path: each distinct (sample, vertex) pair is mapped once.
    pub fn map_field_by_vertex<T: Float>(
        &self,
        p: &Bound<T>,
        batch: &SurfaceBatch<T>,
        table: &VertexTable,
        z: Option<&Var<T>>,
    ) -> Result<Var<T>> {
        let vertices = batch
            .body_vertices
            .as_ref()
            .ok_or_else(|| Error::Precondition("batch embeddings are not discretized against a table".into()))?;
        let samples = batch.body_samples();
        let mut slot = std::collections::HashMap::new();
        let mut keys = Vec::new();
        let row_of: Vec<usize> = samples
            .iter()
            .zip(vertices)
            .map(|(&s, &k)| {
                *slot.entry((s, k)).or_insert_with(|| {
                    keys.push((s, k));
                    keys.len() - 1
                })
            })
            .collect();
        let c = table.dim();
        let mut e = Vec::with_capacity(keys.len() * c);
        for &(_, k) in &keys {
            e.extend(table.row(k).iter().map(|&v| T::of(v as f64)));
        }
        let e = Var::constant(Tensor::from_vec(&[keys.len(), c], e));
        let key_samples: Vec<usize> = keys.iter().map(|&(s, _)| s).collect();
        let zrows = self.latent_rows(z, batch.n, &key_samples)?;
        let rows = self.map_core(p, &e, zrows.as_ref())?;
        self.assemble(p, &rows, &row_of, batch)
    }

    /// ω for every table row under one latent `z` [1, z_dim]. Returns [K, D].
    pub fn map_vertices<T: Float>(&self, p: &Bound<T>, table: &VertexTable, z: Option<&Var<T>>) -> Result<Var<T>> {
        let k = table.len();
        let e = Tensor::from_vec(&[k, table.dim()], table.as_slice().iter().map(|&v| T::of(v as f64)).collect());
        let zrows = self.latent_rows(z, 1, &vec![0; k])?;
        self.map_core(p, &Var::constant(e), zrows.as_ref())
    }

    /// Field from precomputed per-vertex latents [K, D] and per-pixel vertex indices.
    pub fn gather<T: Float>(&self, p: &Bound<T>, vertex_omega: &Var<T>, batch: &SurfaceBatch<T>) -> Result<Var<T>> {
        let vertices = batch
            .body_vertices
            .as_ref()
            .ok_or_else(|| Error::Precondition("batch embeddings are not discretized against a table".into()))?;
        if vertex_omega.shape().len() != 2 || vertex_omega.shape()[1] != self.config.out_dim {
            return Err(invalid!("vertex latents have shape {:?}", vertex_omega.shape()));
        }
        if let Some(&k) = vertices.iter().max() {
            if k >= vertex_omega.shape()[0] {
                return Err(invalid!("vertex index {k} out of range"));
            }
        }
        self.assemble(p, vertex_omega, vertices, batch)
    }

    fn latent_rows<T: Float>(&self, z: Option<&Var<T>>, n: usize, samples: &[usize]) -> Result<Option<Var<T>>> {
        match z {
            Some(z) => {
                if z.shape() != [n, self.config.z_dim] {
                    return Err(invalid!("z has shape {:?}, expected [{n}, {}]", z.shape(), self.config.z_dim));
                }
                Ok(Some(z.index_rows(samples)))
            }
            None => Ok(None),
        }
    }

    /// Builds the [N, D, H, W] field: BODY pixel j takes `rows[row_of[j]]`.
    fn assemble<T: Float>(&self, p: &Bound<T>, rows: &Var<T>, row_of: &[usize], batch: &SurfaceBatch<T>) -> Result<Var<T>> {
        let d = self.config.out_dim;
        let m = rows.shape()[0];
        let table = Var::concat(
            &[rows.clone(), p.get(self.omega_known).reshape(&[1, d]), p.get(self.omega_dilated).reshape(&[1, d])],
            0,
        );
        let mut body = row_of.iter();
        let idx: Vec<usize> = batch
            .regions
            .iter()
            .map(|r| match r {
                Region::Body => *body.next().expect("one row per BODY pixel"),
                Region::Known => m,
                Region::Dilated => m + 1,
            })
            .collect();
        let (n, h, w) = (batch.n, batch.height, batch.width);
        Ok(table.index_rows(&idx).reshape(&[n, h, w, d]).permute(&[0, 3, 1, 2]))
    }
}

/// Moves BODY pixels of `field` [N, D, H, W] towards `mean`: ω_mean + t·(ω − ω_mean).
pub fn truncate<T: Float>(field: &Var<T>, body: &Tensor<T>, mean: &[T], t: f64) -> Result<Var<T>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid!("truncation {t} outside [0, 1]"));
    }
    let d = field.shape()[1];
    if mean.len() != d {
        return Err(invalid!("ω mean has {} entries, field has {d} channels", mean.len()));
    }
    if t == 1.0 {
        return Ok(field.clone());
    }
    let s = T::of(1.0 - t);
    // keep = 1 off BODY and t on BODY; pull = (1 - t) on BODY
    let pull = body.map(|b| b * s);
    let keep = pull.map(|v| T::one() - v);
    let mean = Tensor::from_vec(&[1, d, 1, 1], mean.to_vec());
    let offset = Var::constant(pull).mul(&Var::constant(mean));
    Ok(field.mul_const(&keep).add(&offset))
}

/// Linear interpolation from `z0` to `z1` with exact endpoints.
pub fn interpolate_z(z0: &[f32], z1: &[f32], steps: usize) -> Result<Vec<Vec<f32>>> {
    if z0.len() != z1.len() {
        return Err(invalid!("latents differ in length: {} vs {}", z0.len(), z1.len()));
    }
    if steps < 2 {
        return Err(invalid!("interpolation needs at least 2 steps, got {steps}"));
    }
    Ok((0..steps)
        .map(|i| {
            if i == steps - 1 {
                return z1.to_vec();
            }
            let a = i as f32 / (steps - 1) as f32;
            z0.iter().zip(z1).map(|(x, y)| x + a * (y - x)).collect()
        })
        .collect())
}

/// Running mean of BODY-pixel ω, used as the truncation centre.
///
/// Stored in single precision so that checkpoints restore it exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct OmegaMean {
    pub mean: Vec<f32>,
    pub updates: u64,
    pub decay: f64,
}

impl OmegaMean {
    pub fn new(dim: usize, decay: f64) -> Self {
        Self { mean: vec![0.0; dim], updates: 0, decay }
    }

    /// mean ← decay·mean + (1 − decay)·batch_mean
    pub fn update(&mut self, batch_mean: &[f64]) {
        for (m, b) in self.mean.iter_mut().zip(batch_mean) {
            *m = (self.decay * *m as f64 + (1.0 - self.decay) * b) as f32;
        }
        self.updates += 1;
    }

    pub fn is_populated(&self) -> bool {
        self.updates > 0
    }

    pub fn as_vec<T: Float>(&self) -> Vec<T> {
        self.mean.iter().map(|&v| T::of(v as f64)).collect()
    }
}

/// Mean of the BODY pixels of a field [N, D, H, W]; `None` without BODY pixels.
pub fn body_mean<T: Float>(field: &Tensor<T>, body: &Tensor<T>) -> Option<Vec<f64>> {
    let [n, d, h, w] = field.shape().try_into().expect("NCHW field");
    let hw = h * w;
    let b = body.data();
    let f = field.data();
    let count = b.iter().filter(|v| **v > T::zero()).count();
    if count == 0 {
        return None;
    }
    let mut mean = vec![0.0; d];
    for s in 0..n {
        for (c, m) in mean.iter_mut().enumerate() {
            let base = (s * d + c) * hw;
            *m += (0..hw).filter(|&p| b[s * hw + p] > T::zero()).map(|p| f[base + p].to_f64().unwrap()).sum::<f64>();
        }
    }
    Some(mean.into_iter().map(|v| v / count as f64).collect())
}
