//! Residual discriminator with a scalar realness logit and an FPN head regressing
//! per-pixel surface embeddings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sgg_autodiff::{Float, Tensor, Var};

use crate::batch::SurfaceBatch;
use crate::error::{invalid, Result};
use crate::nn::{lrelu_gain, Bound, EqConv2d, EqLinear, ParamSet};
use crate::surface::{EmbeddingRaster, Region, RegionMask, EMBED_DIM};

pub const SMOOTH_L1_BETA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub height: usize,
    pub width: usize,
    pub base_channels: usize,
    pub channel_mults: Vec<usize>,
    pub fpn_channels: usize,
    pub embed_dim: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DiscriminatorConfig {
    pub fn desk() -> Self {
        Self { height: 64, width: 32, base_channels: 16, channel_mults: vec![1, 2, 4, 8], fpn_channels: 16, embed_dim: EMBED_DIM }
    }

    pub fn levels(&self) -> usize {
        self.channel_mults.len()
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels * self.channel_mults[level]
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels() < 3 {
            return Err(invalid!("discriminator needs at least 3 levels for the FPN head"));
        }
        if self.base_channels == 0 || self.fpn_channels == 0 || self.embed_dim == 0 || self.channel_mults.contains(&0) {
            return Err(invalid!("discriminator channels must be positive"));
        }
        let f = 1 << (self.levels() - 1);
        if self.height % f != 0 || self.width % f != 0 {
            return Err(invalid!("{}x{} is not divisible by 2^{}", self.height, self.width, self.levels() - 1));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: EqConv2d,
    conv2: EqConv2d,
    skip: EqConv2d,
}

/// Number of pyramid levels feeding the FPN head.
const FPN_LEVELS: usize = 3;

#[derive(Clone, Debug)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    from_input: EqConv2d,
    blocks: Vec<ResBlock>,
    fc: EqLinear,
    out: EqLinear,
    lateral: Vec<EqConv2d>,
    fuse: Vec<EqConv2d>,
    embed: EqConv2d,
}

pub struct DiscriminatorOutput<T: Float> {
    /// [N, 1]
    pub logit: Var<T>,
    /// [N, C, H, W]
    pub e_hat: Var<T>,
}

impl Discriminator {
    pub fn new<T: Float>(config: DiscriminatorConfig, seed: u64) -> Result<(Self, ParamSet<T>)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let c = |l: usize| config.channels(l);
        let from_input = EqConv2d::new(&mut p, "from_input", 6, c(0), 1, Some(0.0), &mut rng);
        let blocks = (0..config.levels())
            .map(|l| {
                let cin = if l == 0 { c(0) } else { c(l - 1) };
                ResBlock {
                    conv1: EqConv2d::new(&mut p, &format!("block{l}.conv1"), cin, c(l), 3, Some(0.0), &mut rng),
                    conv2: EqConv2d::new(&mut p, &format!("block{l}.conv2"), c(l), c(l), 3, Some(0.0), &mut rng),
                    skip: EqConv2d::new(&mut p, &format!("block{l}.skip"), cin, c(l), 1, None, &mut rng),
                }
            })
            .collect();
        let last = config.levels() - 1;
        let f = 1 << last;
        let flat = c(last) * (config.height / f) * (config.width / f);
        let fc = EqLinear::new(&mut p, "fc", flat, c(last), Some(0.0), &mut rng);
        let out = EqLinear::new(&mut p, "out", c(last), 1, Some(0.0), &mut rng);
        let fc_ch = config.fpn_channels;
        let lateral = (0..FPN_LEVELS)
            .map(|l| EqConv2d::new(&mut p, &format!("fpn.lateral{l}"), c(l), fc_ch, 1, Some(0.0), &mut rng))
            .collect();
        let fuse = (0..FPN_LEVELS)
            .map(|l| EqConv2d::new(&mut p, &format!("fpn.fuse{l}"), fc_ch, fc_ch, 3, Some(0.0), &mut rng))
            .collect();
        let embed = EqConv2d::new(&mut p, "fpn.embed", fc_ch, config.embed_dim, 1, Some(0.0), &mut rng);
        Ok((Self { config, from_input, blocks, fc, out, lateral, fuse, embed }, p))
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    /// `image` [N, 3, H, W] in [-1, 1], `mask_planes` [N, 3, H, W].
    pub fn forward<T: Float>(&self, p: &Bound<T>, image: &Var<T>, mask_planes: &Tensor<T>) -> Result<DiscriminatorOutput<T>> {
        let cfg = &self.config;
        let s = image.shape();
        if s.len() != 4 || s[1] != 3 || (s[2], s[3]) != (cfg.height, cfg.width) || mask_planes.shape() != s {
            return Err(invalid!("discriminator input {:?} / mask {:?} do not match {}x{}", s, mask_planes.shape(), cfg.height, cfg.width));
        }
        let n = s[0];
        let input = Var::concat(&[image.clone(), Var::constant(mask_planes.clone())], 1);
        let mut x = lrelu_gain(&self.from_input.forward(p, &input));
        let mut features = Vec::with_capacity(self.blocks.len());
        for (l, b) in self.blocks.iter().enumerate() {
            if l > 0 {
                x = x.avg_pool2();
            }
            let main = lrelu_gain(&b.conv2.forward(p, &lrelu_gain(&b.conv1.forward(p, &x))));
            x = main.add(&b.skip.forward(p, &x)).scale(std::f64::consts::FRAC_1_SQRT_2);
            features.push(x.clone());
        }
        let flat = x.reshape(&[n, x.numel() / n]);
        let logit = self.out.forward(p, &lrelu_gain(&self.fc.forward(p, &flat)));

        let mut top: Option<Var<T>> = None;
        for l in (0..FPN_LEVELS).rev() {
            let mut lat = self.lateral[l].forward(p, &features[l]);
            if let Some(t) = top {
                lat = lat.add(&t.bilinear_up2());
            }
            top = Some(lrelu_gain(&self.fuse[l].forward(p, &lat)));
        }
        let e_hat = self.embed.forward(p, &top.expect("FPN levels"));
        Ok(DiscriminatorOutput { logit, e_hat })
    }
}

/// Masked smooth-L1 regression: per-pixel loss summed over channels, averaged over the BODY
/// pixels of each sample, then over the samples that have any. Returns the loss and that
/// sample count.
///
/// `e_hat` and `target` are [N, C, H, W]; `body` is the [N, 1, H, W] BODY indicator.
pub fn surface_loss_var<T: Float>(e_hat: &Var<T>, target: &Tensor<T>, body: &Tensor<T>, beta: f64) -> (Var<T>, usize) {
    let hw: usize = body.shape()[2..].iter().product();
    let counts: Vec<usize> = body.data().chunks(hw).map(|b| b.iter().filter(|v| **v > T::zero()).count()).collect();
    let samples = counts.iter().filter(|&&c| c > 0).count();
    if samples == 0 {
        return (Var::constant(Tensor::scalar(T::zero())), 0);
    }
    // fold the per-sample 1/count and the 1/samples average into the mask
    let weights = Tensor::from_fn(body.shape(), |i| {
        let c = counts[i / hw];
        if c == 0 {
            T::zero()
        } else {
            body.data()[i] * T::of(1.0 / (c as f64 * samples as f64))
        }
    });
    let per_pixel = e_hat.sub(&Var::constant(target.clone())).smooth_l1(beta).sum_axes(&[1]);
    (per_pixel.mul_const(&weights).sum(), samples)
}

/// Surface loss of one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceLoss {
    pub value: f64,
    /// True when the mask has no BODY pixel and the loss is defined as 0.
    pub degenerate: bool,
}

/// Raster form of [`surface_loss_var`] for one sample, with smooth-L1 threshold `beta`.
pub fn surface_loss(e_hat: &EmbeddingRaster, target: &EmbeddingRaster, mask: &RegionMask, beta: f64) -> Result<SurfaceLoss> {
    let (h, w, c) = (mask.height(), mask.width(), target.channels());
    if (e_hat.height(), e_hat.width(), e_hat.channels()) != (h, w, c) || (target.height(), target.width()) != (h, w) {
        return Err(invalid!("surface loss planes differ in shape"));
    }
    let hw = h * w;
    let mut pred = vec![0.0f64; c * hw];
    let mut tgt = vec![0.0f64; c * hw];
    let mut body = vec![0.0f64; hw];
    for p in 0..hw {
        if mask.classes()[p] != Region::Body {
            continue;
        }
        if !target.is_valid(p) || !e_hat.is_valid(p) {
            return Err(invalid!("BODY pixel {p} lacks an embedding"));
        }
        body[p] = 1.0;
        for ch in 0..c {
            pred[ch * hw + p] = e_hat.at(p)[ch] as f64;
            tgt[ch * hw + p] = target.at(p)[ch] as f64;
        }
    }
    let e_hat = Var::constant(Tensor::from_vec(&[1, c, h, w], pred));
    let (loss, samples) =
        surface_loss_var(&e_hat, &Tensor::from_vec(&[1, c, h, w], tgt), &Tensor::from_vec(&[1, 1, h, w], body), beta);
    Ok(SurfaceLoss { value: loss.item(), degenerate: samples == 0 })
}

/// Surface loss of the discriminator's embedding prediction on `image` against the batch targets.
/// Gradients reach `image` (and through it the generator); bind D's parameters as constants to
/// keep them out of the generator update.
pub fn generator_surface_loss<T: Float>(
    d: &Discriminator,
    d_params: &Bound<T>,
    image: &Var<T>,
    batch: &SurfaceBatch<T>,
    beta: f64,
) -> Result<Var<T>> {
    let out = d.forward(d_params, image, &batch.mask_planes)?;
    Ok(surface_loss_var(&out.e_hat, &batch.embeddings, &batch.body, beta).0)
}
